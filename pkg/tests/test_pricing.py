import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import argmax_oracle, expected_utility
from rfqcausal.generative import GenerativePredictor
from rfqcausal.pricing import (
    ExponentialHitModel, InvalidProbability, InvalidProblem, NoBracket, Objective, PricingProblem,
    expected_objective, ia_spread_correction, inventory_term, optimal_spread, optimal_spread_eod,
    optimal_spread_eod_ia, optimal_spread_exp_utility, optimal_spread_flow,
)
from rfqcausal.simulator import GenerativeParams


class ConstantHit:
    monotone = True

    def predict_proba(self, delta, X=None):
        return np.full(np.shape(delta), 0.4)

    def derivative(self, delta, X=None):
        return np.zeros(np.shape(delta))


def test_flow_closed_form():
    sol = optimal_spread_flow(ExponentialHitModel(0.7, 2.0), PricingProblem())
    assert sol.delta == pytest.approx(0.5, abs=1e-12)
    assert sol.objective_value == pytest.approx(0.5 * 0.7 * math.exp(-1.0))


def test_exp_utility_closed_form():
    sol = optimal_spread_exp_utility(ExponentialHitModel(1.0, 2.0), PricingProblem(gamma=1.0, volume=1.0))
    assert sol.delta == pytest.approx(math.log(1.5), abs=1e-10)


@given(st.floats(0.2, 5.0), st.floats(0.05, 3.0), st.floats(0.1, 5.0))
def test_exp_utility_closed_form_property(alpha, gamma, volume):
    prob = PricingProblem(objective="exp_utility", gamma=gamma, volume=volume)
    sol = optimal_spread(ExponentialHitModel(0.9, alpha), prob)
    gv = gamma * volume
    assert sol.delta == pytest.approx(math.log1p(gv / alpha) / gv, abs=1e-8)


def test_small_risk_aversion_tends_to_flow():
    model = ExponentialHitModel(1.0, 2.0)
    flow = optimal_spread_flow(model, PricingProblem()).delta
    util = optimal_spread_exp_utility(model, PricingProblem(gamma=1e-6)).delta
    assert abs(util - flow) < 1e-4


def test_constant_hit_has_no_bracket():
    with pytest.raises(NoBracket):
        optimal_spread_flow(ConstantHit(), PricingProblem())


EOD_EXAMPLE = dict(gamma=0.1, sigma=0.2, horizon=1.0, side=1, inventory=10.0, volume=2.0)


def test_end_of_day_worked_example():
    prob = PricingProblem(objective="eod", **EOD_EXAMPLE)
    assert inventory_term(prob) == pytest.approx(0.044, abs=1e-15)
    sol = optimal_spread_eod(ExponentialHitModel(1.0, 2.0), prob)
    assert sol.delta == pytest.approx(0.044 + 5 * math.log(1.1), abs=1e-10)
    assert sol.delta == pytest.approx(0.5205508990, abs=1e-9)


def test_end_of_day_inventory_cancellation():
    model = ExponentialHitModel(1.0, 2.0)
    prob = PricingProblem(objective="eod", gamma=0.3, sigma=0.5, horizon=2.0, side=-1, volume=4.0, inventory=2.0)
    assert inventory_term(prob) == 0.0
    eu = optimal_spread_exp_utility(model, prob).delta
    assert optimal_spread_eod(model, prob).delta == pytest.approx(eu, abs=1e-12)
    no_risk = prob.replace(inventory=5.0, sigma=0.0)
    assert optimal_spread_eod(model, no_risk).delta == eu


def test_ia_correction_limits():
    base = PricingProblem(objective="eod_ia", gamma=1.0, volume=1.0, inventory=0.0, side=-1, drift=0.5, horizon=1.0,
                          sigma=0.1)
    assert ia_spread_correction(base.replace(p_ia=0.0)) == 0.0
    assert ia_spread_correction(base.replace(p_ia=1.0)) == pytest.approx(0.5, abs=1e-12)
    assert ia_spread_correction(base.replace(p_ia=0.4, drift=0.0)) == 0.0


def test_ia_correction_decreases_with_multiplier():
    base = PricingProblem(objective="eod_ia", gamma=1.0, volume=1.0, side=-1, drift=0.5, horizon=1.0, p_ia=0.3)
    vals = [ia_spread_correction(base.replace(hit_multiplier=h)) for h in np.linspace(0.1, 5, 30)]
    assert np.all(np.diff(vals) < 0)


def test_ia_correction_rejects_bad_probability():
    with pytest.raises(InvalidProbability):
        PricingProblem(p_ia=1.2)


def test_problem_validation():
    with pytest.raises(InvalidProblem):
        PricingProblem(volume=0.0)
    with pytest.raises(InvalidProblem):
        PricingProblem(objective="eod", gamma=0.0)


def random_problem(rng, objective):
    return PricingProblem(
        objective=objective,
        gamma=rng.uniform(0.05, 1.5),
        volume=rng.uniform(0.5, 3.0),
        side=int(rng.choice([-1, 1])),
        inventory=rng.uniform(-3, 3),
        sigma=rng.uniform(0.0, 0.4),
        horizon=rng.uniform(0.2, 2.0),
        drift=rng.uniform(-0.4, 0.4),
        p_ia=rng.uniform(0, 1),
        hit_multiplier=rng.uniform(0.3, 3.0),
    )


@pytest.mark.parametrize("k, objective", list(enumerate(Objective)))
def test_solvers_match_argmax_oracle(k, objective):
    rng = np.random.default_rng(100 + k)
    for _ in range(20):
        model = ExponentialHitModel(rng.uniform(0.3, 1.0), rng.uniform(0.5, 4.0))
        prob = random_problem(rng, objective)
        sol = optimal_spread(model, prob)
        oracle = argmax_oracle(lambda d: expected_utility(float(model.predict_proba(d)), d, prob),
                               sol.delta - 3.0, sol.delta + 3.0)
        assert abs(sol.delta - oracle) <= 1e-6
        assert sol.objective_value == pytest.approx(
            expected_utility(float(model.predict_proba(sol.delta)), sol.delta, prob), rel=1e-9, abs=1e-12)


def test_objective_matches_direct_integration():
    rng = np.random.default_rng(1)
    model = ExponentialHitModel(0.8, 1.5)
    for objective in Objective:
        prob = random_problem(rng, objective)
        for d in (-0.3, 0.2, 1.1):
            assert expected_objective(model, prob, d) == pytest.approx(
                expected_utility(float(model.predict_proba(d)), d, prob), rel=1e-10, abs=1e-13)


def test_generative_model_flow_optimum():
    params = GenerativeParams(sep=GenerativeParams().sep.__class__(0.6, 0.4, 2.0, 1.0))
    model = GenerativePredictor(params, pd_zero=True, ia_zero=True)
    context = np.zeros(params.layout.width)
    context[0], context[params.layout.n_dealers_col] = 0.3, 4
    sol = optimal_spread_flow(model, PricingProblem(context=context))
    oracle = argmax_oracle(lambda d: d * float(model.predict_proba(np.array([d]), context[None])[0]), 0.0, 3.0)
    assert abs(sol.delta - oracle) <= 1e-6
    assert sol.warning is None


def test_non_monotone_model_warns():
    sol = optimal_spread_flow(ExponentialHitModel(1.0, 2.0, monotone=False), PricingProblem())
    assert sol.warning is not None
