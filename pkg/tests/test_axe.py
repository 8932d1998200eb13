import math

import numpy as np
import pytest
from scipy import stats

from rfqcausal.axe import (
    AxeQuery, ContactLog, InsufficientData, UpliftEstimate, axe_ace, direct_rfq_given_call_axe,
    factorized_rfq_given_call_axe, hit_term, rank_matches, rf_distribution, rfq_preference, rfq_shares, uplift,
    write_report,
)
from rfqcausal.domain import FeatureLayout
from rfqcausal.pricing import ExponentialHitModel, PricingProblem
from rfqcausal.simulator import GenerativeParams, ScenarioConfig, simulate

LAYOUT = FeatureLayout(2)


def log_from(client, bond, call, axe, rfq, X=None):
    n = len(rfq)
    X = np.tile(np.arange(LAYOUT.width, dtype=float), (n, 1)) if X is None else X
    return ContactLog(client, bond, call, axe, rfq, X, LAYOUT)


def test_equal_frequencies_give_zero_uplift():
    call = np.array([1, 1, 1, 1, 0, 0, 0, 0] * 10)
    rfq = np.array([1, 0, 1, 0, 1, 0, 1, 0] * 10)
    log = log_from(np.zeros(80), np.zeros(80), call, np.ones(80), rfq)
    est = uplift(log, 0, 0)
    assert est.uplift == 0.0 and est.sufficient


def test_empty_cell_is_uninformative():
    log = log_from([1], [1], [1], [1], [1])
    with pytest.raises(InsufficientData) as info:
        uplift(log, 0, 0)
    est = info.value.estimate
    assert est.p_rfq_given_call == 0.5 and est.p_rfq_given_nocall == 0.5 and est.uplift == 0.0
    assert est.uplift_se > 0.4
    assert not uplift(log, 0, 0, strict=False).sufficient


def test_ace_degenerate_cases():
    base = UpliftEstimate(0, 0, 0.4, 0.4, 0.05, 0.05, 100, 100, True, hit_term=0.7, hit_term_se=0.01)
    assert base.ace == 0.0
    one = UpliftEstimate(0, 0, 0.6, 0.2, 0.05, 0.05, 100, 100, True, hit_term=1.0, hit_term_se=0.0)
    assert one.ace == one.uplift
    assert one.ace_se == pytest.approx(one.uplift_se)


def test_hit_term_with_certain_hit():
    log = log_from(np.zeros(100), np.zeros(100), np.tile([0, 1], 50), np.ones(100), np.tile([1, 1, 0, 1], 25))
    est = axe_ace(log, AxeQuery(0, 0, delta=0.3), ExponentialHitModel(1.0, 0.0))
    assert est.hit_term == 1.0 and est.ace == est.uplift


def test_hit_term_priced():
    X = np.zeros((5, LAYOUT.width))
    h, se, d = hit_term(ExponentialHitModel(0.8, 2.0), AxeQuery(0, 0, pricing=PricingProblem(), contexts=X))
    assert d == pytest.approx(0.5) and h == pytest.approx(0.8 * math.exp(-1.0)) and se == 0.0


def test_single_cell_share():
    log = log_from([3, 3, 3], [7, 7, 7], [0, 1, 0], [1, 1, 0], [1, 0, 1])
    assert rfq_shares(log) == {(3, 7): 1.0}
    assert rfq_preference(log, 3, 7, smoothing=0.0) == pytest.approx(2 / 3)


def test_uniform_preferences():
    rng = np.random.default_rng(0)
    n = 60_000
    client, bond = rng.integers(0, 4, n), rng.integers(0, 3, n)
    rfq = (rng.random(n) < 0.3).astype(int)
    log = log_from(client, bond, rng.integers(0, 2, n), rng.integers(0, 2, n), rfq)
    shares = rfq_shares(log)
    counts = np.array([shares[k] for k in sorted(shares)]) * rfq.sum()
    assert stats.chisquare(counts).pvalue > 0.001
    prefs = [rfq_preference(log, c, b) for c in range(4) for b in range(3)]
    assert max(prefs) - min(prefs) < 6 * math.sqrt(0.3 * 0.7 / (n / 12))


def test_factorization_identity():
    rng = np.random.default_rng(1)
    n = 5000
    axe = rng.integers(0, 2, n)
    call = (rng.random(n) < 0.3 + 0.3 * axe).astype(int)
    rfq = (rng.random(n) < 0.2 + 0.3 * call).astype(int)
    log = log_from(np.zeros(n), np.zeros(n), call, axe, rfq)
    for c in (0, 1):
        for a in (0, 1):
            assert factorized_rfq_given_call_axe(log, 0, 0, c, a, smoothing=0.0) == pytest.approx(
                direct_rfq_given_call_axe(log, 0, 0, c, a, smoothing=0.0), rel=1e-12)


def test_rf_distribution_fallback():
    n = 60
    X = np.random.default_rng(2).normal(size=(n, LAYOUT.width))
    client = np.repeat([0, 1], 30)
    bond = np.tile([0, 1, 2], 20)
    rfq = np.ones(n, int)
    log = log_from(client, bond, np.zeros(n), np.ones(n), rfq, X)
    cell = rf_distribution(log, 0, 0, min_rows=5)
    assert len(cell) == 10
    wider = rf_distribution(log, 0, 0, min_rows=20)
    assert len(wider) == 30
    everyone = rf_distribution(log, 0, 0, min_rows=40)
    assert len(everyone) == 60
    # client and bond columns always carry the cell's own features
    assert np.all(everyone[:, LAYOUT.client_slice] == X[0, LAYOUT.client_slice])
    assert np.all(everyone[:, LAYOUT.bond_slice] == X[0, LAYOUT.bond_slice])
    with pytest.raises(InsufficientData):
        rf_distribution(log, 0, 0, min_rows=61)


def test_report_ranking(tmp_path):
    a = UpliftEstimate(0, 0, 0.5, 0.3, 0.01, 0.01, 50, 50, True, hit_term=0.5, delta=0.4)
    b = UpliftEstimate(0, 1, 0.9, 0.3, 0.01, 0.01, 50, 50, True, hit_term=0.5, delta=0.4)
    assert [e.bond for e in rank_matches([a, b])] == [1, 0]
    write_report([a, b], tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0].startswith("client,bond") and lines[1].startswith("0,1,")


def test_uplift_against_simulated_truth():
    params = GenerativeParams(lam_call=0.5, call_prob=(0.5, 0.5))
    base = ScenarioConfig(params=params, n_rfqs=40_000, candidate_dt=0.3, n_clients=2, n_bonds=2, axe_prob=1.0,
                          seed=3, cell_seed=4)
    log = ContactLog.from_synthetic(simulate(base))
    for cell in ((0, 0), (1, 1)):
        est = uplift(log, *cell)
        pinned = base.replace(cell=cell, n_rfqs=40_000, seed=50 + cell[0])
        rates = [ContactLog.from_synthetic(simulate(pinned.intervene(call=c))).rfq.mean() for c in (1, 0)]
        truth = rates[0] - rates[1]
        truth_se = math.sqrt(sum(r * (1 - r) / 40_000 for r in rates))
        assert abs(est.uplift - truth) <= 3 * math.hypot(est.uplift_se, truth_se)
