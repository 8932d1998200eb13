import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rfqcausal import _core


def problem(n, d, seed):
    rng = np.random.default_rng(seed)
    Z = np.ascontiguousarray(np.round(rng.standard_normal((n, d)), 1))  # ties exercise threshold handling
    y = (rng.random(n) < 1 / (1 + np.exp(-Z[:, 0]))).astype(float)
    p = rng.uniform(0.2, 0.8, n)
    g = np.ascontiguousarray(p - y)
    h = np.ascontiguousarray(p * (1 - p))
    order = np.ascontiguousarray(np.argsort(Z, axis=0, kind="stable").T.astype(np.int64))
    sample = (rng.random(n) < 0.7).astype(np.uint8)
    fmask = (rng.random(d) < 0.8).astype(np.uint8)
    fmask[0] = 1
    return order, Z, g, h, sample, fmask


needs_compiled = pytest.mark.skipif(_core._compiled is None, reason="compiled kernels not built")


@needs_compiled
@given(st.integers(20, 400), st.integers(1, 6), st.integers(1, 20), st.integers(1, 40), st.integers(0, 10**6))
def test_backends_grow_identical_trees(n, d, leaves, min_child, seed):
    args = problem(n, d, seed)
    py = _core.backend("python").grow_tree(*args, min_child, 1.0, leaves)
    cc = _core.backend("compiled").grow_tree(*args, min_child, 1.0, leaves)
    for a, b in zip(py, cc):
        np.testing.assert_array_equal(a, b)
    roots = np.zeros(1, np.int64)
    Z = args[1]
    np.testing.assert_array_equal(_core.backend("python").predict_raw(Z, *py[:5], roots),
                                  _core.backend("compiled").predict_raw(Z, *cc[:5], roots))


def test_tree_partitions_sample():
    order, Z, g, h, sample, fmask = problem(300, 3, 0)
    feat, thr, left, right, val, gain = _core.grow_tree(order, Z, g, h, sample, fmask, 10, 1.0, 8)
    leaves = np.flatnonzero(feat < 0)
    assert 1 <= len(leaves) <= 8
    assert np.all(gain[feat >= 0] > 0)
    # every leaf value is the Newton step of the rows it holds
    out = _core.predict_raw(Z, feat, thr, left, right, val, np.zeros(1, np.int64))
    m = sample == 1
    for leaf in leaves:
        rows = m & (out == val[leaf])
        if rows.any():
            assert val[leaf] == pytest.approx(-g[rows].sum() / (h[rows].sum() + 1.0), rel=1e-9, abs=1e-12)


def test_pure_python_switch():
    env = dict(os.environ, RFQCAUSAL_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from rfqcausal import _core; print(_core.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_backend_selection():
    assert _core.backend("python").__name__.endswith("_kernels_py")
    with pytest.raises(ValueError):
        _core.backend("fortran")
