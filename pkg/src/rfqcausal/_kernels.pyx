# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled GBDT kernels: leaf-wise tree growth and ensemble prediction.

Signatures and results match ``rfqcausal._kernels_py`` bit for bit; the
pure-Python module is the fallback when this extension is not built.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef void _search(const cnp.int64_t[:, ::1] idx, const double[:, ::1] X, const double[::1] g,
                  const double[::1] h, const cnp.int64_t[::1] feats, Py_ssize_t s, Py_ssize_t e,
                  Py_ssize_t min_child, double lam, double* out) noexcept nogil:
    """Node sums and best split on rows idx[:, s:e]; out = g_sum, h_sum, gain, feature, threshold."""
    cdef Py_ssize_t j, k, col, r, c = e - s
    cdef double g_sum = 0.0, h_sum = 0.0, gl, hl, gr, hr, gain, parent, x, prev
    cdef double best = 0.0, best_f = -1.0, best_t = 0.0
    cdef Py_ssize_t cl
    col = feats[0]
    for j in range(s, e):
        r = idx[col, j]
        g_sum += g[r]
        h_sum += h[r]
    out[0] = g_sum
    out[1] = h_sum
    if c >= 2 * min_child:
        parent = g_sum * g_sum / (h_sum + lam)
        for k in range(feats.shape[0]):
            col = feats[k]
            gl = 0.0
            hl = 0.0
            cl = 0
            prev = 0.0
            for j in range(s, e):
                r = idx[col, j]
                x = X[r, col]
                if cl > 0 and cl >= min_child and c - cl >= min_child and x > prev:
                    gr = g_sum - gl
                    hr = h_sum - hl
                    gain = gl * gl / (hl + lam) + gr * gr / (hr + lam) - parent
                    if gain > best:
                        best = gain
                        best_f = col
                        best_t = 0.5 * (prev + x)
                gl += g[r]
                hl += h[r]
                cl += 1
                prev = x
    out[2] = best
    out[3] = best_f
    out[4] = best_t


def grow_tree(const cnp.int64_t[:, ::1] order,
              const double[:, ::1] X,
              const double[::1] g,
              const double[::1] h,
              const cnp.uint8_t[::1] sample,
              const cnp.uint8_t[::1] feature_mask,
              Py_ssize_t min_child,
              double lam,
              Py_ssize_t num_leaves):
    """Grow one leaf-wise tree with exact split search.

    ``order`` holds every column's row indices sorted by value; only rows
    with ``sample`` set take part.  Returns local node arrays
    ``(feature, threshold, left, right, value, gain)``; leaves have
    ``feature == -1`` and internal nodes have ``value == 0``.
    """
    cdef Py_ssize_t n_feat = order.shape[0], n = order.shape[1]
    cdef Py_ssize_t i, j, k, col, r, m = 0, n_sub = 0
    for i in range(n):
        n_sub += sample[i]
    feats_arr = np.flatnonzero(np.asarray(feature_mask)).astype(np.int64)
    cdef cnp.int64_t[::1] feats = feats_arr
    idx_arr = np.zeros((n_feat, n_sub), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] idx = idx_arr
    for k in range(feats.shape[0]):
        col = feats[k]
        m = 0
        for j in range(n):
            r = order[col, j]
            if sample[r]:
                idx[col, m] = r
                m += 1

    cdef Py_ssize_t max_nodes = 2 * num_leaves - 1
    feature_arr = np.full(max_nodes, -1, dtype=np.int64)
    threshold_arr = np.zeros(max_nodes)
    left_arr = np.full(max_nodes, -1, dtype=np.int64)
    right_arr = np.full(max_nodes, -1, dtype=np.int64)
    value_arr = np.zeros(max_nodes)
    gain_arr = np.zeros(max_nodes)
    stats_arr = np.zeros((max_nodes, 5))
    start_arr = np.zeros(max_nodes, dtype=np.int64)
    end_arr = np.zeros(max_nodes, dtype=np.int64)
    cdef cnp.int64_t[::1] feature = feature_arr, left = left_arr, right = right_arr
    cdef cnp.int64_t[::1] start = start_arr, end = end_arr
    cdef double[::1] threshold = threshold_arr, value = value_arr, gain = gain_arr
    cdef double[:, ::1] stats = stats_arr
    go_arr = np.zeros(n, dtype=np.uint8)
    tmp_arr = np.zeros(n_sub, dtype=np.int64)
    cdef cnp.uint8_t[::1] go = go_arr
    cdef cnp.int64_t[::1] tmp = tmp_arr

    cdef Py_ssize_t n_nodes = 1, leaves = 1, node, s, e, nl, a, b, sf
    cdef double thr, best
    end[0] = n_sub
    if n_sub == 0 or feats.shape[0] == 0:
        return feature_arr[:1], threshold_arr[:1], left_arr[:1], right_arr[:1], value_arr[:1], gain_arr[:1]
    _search(idx, X, g, h, feats, 0, n_sub, min_child, lam, &stats[0, 0])

    while leaves < num_leaves:
        node = -1
        best = 0.0
        for i in range(n_nodes):
            if feature[i] < 0 and stats[i, 3] >= 0 and stats[i, 2] > best:
                best = stats[i, 2]
                node = i
        if node < 0:
            break
        sf = <Py_ssize_t>stats[node, 3]
        thr = stats[node, 4]
        s = start[node]
        e = end[node]
        for j in range(s, e):
            r = idx[sf, j]
            go[r] = X[r, sf] <= thr
        nl = 0
        for j in range(s, e):
            nl += go[idx[sf, j]]
        for k in range(feats.shape[0]):
            col = feats[k]
            a = s
            b = 0
            for j in range(s, e):
                r = idx[col, j]
                if go[r]:
                    idx[col, a] = r
                    a += 1
                else:
                    tmp[b] = r
                    b += 1
            for j in range(b):
                idx[col, a + j] = tmp[j]
        feature[node] = sf
        threshold[node] = thr
        gain[node] = best
        left[node] = n_nodes
        right[node] = n_nodes + 1
        start[n_nodes] = s
        end[n_nodes] = s + nl
        start[n_nodes + 1] = s + nl
        end[n_nodes + 1] = e
        _search(idx, X, g, h, feats, s, s + nl, min_child, lam, &stats[n_nodes, 0])
        _search(idx, X, g, h, feats, s + nl, e, min_child, lam, &stats[n_nodes + 1, 0])
        n_nodes += 2
        leaves += 1

    for i in range(n_nodes):
        if feature[i] < 0:
            value[i] = -stats[i, 0] / (stats[i, 1] + lam)
    return (feature_arr[:n_nodes], threshold_arr[:n_nodes], left_arr[:n_nodes], right_arr[:n_nodes],
            value_arr[:n_nodes], gain_arr[:n_nodes])


def predict_raw(const double[:, ::1] X,
                const cnp.int64_t[::1] feature,
                const double[::1] threshold,
                const cnp.int64_t[::1] left,
                const cnp.int64_t[::1] right,
                const double[::1] value,
                const cnp.int64_t[::1] roots):
    """Sum of leaf values over all trees for each row of ``X``."""
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t n_trees = roots.shape[0]
    cdef Py_ssize_t i, k, node
    out_arr = np.zeros(n)
    cdef double[::1] out = out_arr
    cdef double acc
    for i in range(n):
        acc = 0.0
        for k in range(n_trees):
            node = roots[k]
            while feature[node] >= 0:
                if X[i, feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            acc += value[node]
        out[i] = acc
    return out_arr
