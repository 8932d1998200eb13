import math

import numpy as np
import pytest

from rfqcausal.causal import (
    AuditReport, Discrete, LayoutMismatch, Sampled, Target, UnknownTarget, causal_audit, conditioning_set,
    confounded_scenario, equal_frequency_edges, marginalized_hit_prob, naive_hit_prob,
)
from rfqcausal.domain import FeatureLayout
from rfqcausal.generative import GenerativePredictor
from rfqcausal.simulator import GenerativeParams, MonteCarloEstimate

CONTEXT = np.array([0.3, 0.4, -0.3, 0.08, 2500.0, 1.5, 1.5, 4.0, 4.0, 0.4])


def test_registry():
    assert conditioning_set("hit_prob").conditioning == {"sigma", "RF", "BF", "CF"}
    assert conditioning_set(Target.UPLIFT).conditioning == frozenset()
    assert "axe" in conditioning_set(Target.UPLIFT).given
    rev = conditioning_set("revenues_on_hit")
    assert rev.conditioning == {"sigma", "RF"} and rev.marginalize == {"IA"}
    with pytest.raises(UnknownTarget):
        conditioning_set("profit")


def test_columns():
    lay = FeatureLayout(2)
    assert conditioning_set("hit_prob").columns(lay) == list(range(lay.width))
    assert conditioning_set("revenues_on_hit").columns(lay) == [0, 8, 9]


@pytest.fixture(scope="module")
def model():
    return GenerativePredictor(GenerativeParams(b_res=1.0, c_res=(0.3, -0.2), b_d=0.4))


def test_point_mass_equals_plain_prediction(model):
    kept = CONTEXT.copy()
    kept[[1, 2]] = np.nan
    est = marginalized_hit_prob(model, 0.6, kept, Discrete([[0.4, -0.3]], [1.0]))
    assert est.value == float(model.predict_proba([0.6], CONTEXT[None])[0])
    assert est.stderr == 0.0


def test_two_point_enumeration(model):
    kept = CONTEXT.copy()
    kept[0] = np.nan
    est = marginalized_hit_prob(model, 0.6, kept, Discrete([[0.2], [0.5]], [0.3, 0.7]))
    xs = np.repeat(CONTEXT[None], 2, axis=0)
    xs[:, 0] = (0.2, 0.5)
    f = model.predict_proba([0.6, 0.6], xs)
    assert abs(est.value - (0.3 * f[0] + 0.7 * f[1])) <= 1e-12


def test_sampled_self_consistency(model):
    kept = CONTEXT.copy()
    kept[0] = np.nan
    law = Sampled(lambda rng, size: np.abs(rng.normal(0.3, 0.1, size)), 1)
    small = marginalized_hit_prob(model, 0.7, kept, law, n_draws=100_000, seed=1)
    big = marginalized_hit_prob(model, 0.7, kept, law, n_draws=10_000_000, seed=2)
    assert abs(small.value - big.value) <= 3 * math.hypot(small.stderr, big.stderr)


def test_layout_checks(model):
    with pytest.raises(LayoutMismatch):
        marginalized_hit_prob(model, 0.5, CONTEXT[:5], Discrete([[0.0]], [1.0]))
    kept = CONTEXT.copy()
    kept[0] = np.nan
    with pytest.raises(LayoutMismatch):
        marginalized_hit_prob(model, 0.5, kept, Discrete([[0.0, 1.0]], [1.0]))
    with pytest.raises(ValueError):
        Discrete([[0.0], [1.0]], [0.5, 0.6])


def test_equal_frequency_bins(small_data):
    edges = equal_frequency_edges(small_data.delta_norm, 8)
    counts = np.histogram(small_data.delta_norm, edges)[0]
    assert counts.max() - counts.min() <= 1
    naive = naive_hit_prob(small_data, [np.median(small_data.delta_norm)], n_bins=8)
    assert naive[0].n == counts[4] or naive[0].n == counts[3]


def test_report_outputs(tmp_path):
    t = [MonteCarloEstimate(0.5, 0.01, 100), MonteCarloEstimate(0.3, 0.01, 100)]
    rep = AuditReport(np.array([0.1, 0.2]), t, [MonteCarloEstimate(0.6, 0.02, 50)] * 2,
                      {"full": [MonteCarloEstimate(0.49, 0.0, 10), MonteCarloEstimate(0.31, 0.0, 10)]})
    np.testing.assert_allclose(rep.bias("naive"), [0.1, 0.3])
    np.testing.assert_allclose(rep.bias("full"), [-0.01, 0.01], atol=1e-15)
    rep.write_csv(tmp_path / "a.csv")
    rep.write_long_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_text().splitlines()[0].startswith("delta,truth")
    assert len((tmp_path / "b.csv").read_text().splitlines()) == 1 + 2 * 3


def test_unconfounded_world_naive_and_adjusted_agree_with_truth():
    scenario = confounded_scenario(n_rfqs=50_000, seed=5, confounded=False)
    oracle = GenerativePredictor(scenario.params, pd_zero=True, ia_zero=True)
    grid = np.linspace(0.7, 1.3, 7)
    rep = causal_audit(scenario, grid, {"oracle": oracle}, n_mc=50_000)
    for name in ("naive", "oracle"):
        z = np.abs(rep.bias(name)) / rep.bias_se(name)
        assert np.all(z <= 3), (name, z)


def test_audit_rejects_intervened_scenario():
    with pytest.raises(ValueError):
        causal_audit(confounded_scenario(100).intervene(delta=0.5), [0.5], {})
