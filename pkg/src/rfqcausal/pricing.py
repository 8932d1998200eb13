"""Optimal spreads for a quote request, generic over any hit model.

Every objective reduces to a root of a first-order condition that is
positive below the optimum and negative above it.  With ``hit`` the hit
probability and ``slope`` its derivative in the spread:

* flow value ``volume * delta * hit``: ``hit + delta * slope``;
* exponential utility, end-of-day utility and its information-asymmetry
  variant: ``delta = shift + log(1 - g v hit / slope) / (g v)`` where
  ``shift`` is 0, the inventory term, or the inventory term plus the IA
  correction.  The condition is the derivative of the expected utility up
  to a positive factor.

The root is bracketed from ``[0, 4 * scale]`` with geometric expansion and
refined with Brent's method.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Any

import numpy as np
from scipy import optimize

from .domain import FeatureBundle, Side

RESIDUAL_TOL = 1e-8
MAX_EXPANSIONS = 60


class Objective(str, enum.Enum):
    FLOW = "flow"
    EXP_UTILITY = "exp_utility"
    EOD = "eod"
    EOD_IA = "eod_ia"


class InvalidProblem(ValueError):
    pass


class InvalidProbability(InvalidProblem):
    pass


class NoBracket(ArithmeticError):
    """No sign change of the optimality condition was found."""


class NonConvergence(ArithmeticError):
    pass


@dataclass(frozen=True)
class PricingProblem:
    """Inputs of the optimal-spread solvers.

    ``hit_multiplier`` is the constant scaling the hit probability of
    uninformed clients relative to informed ones in the IA objective;
    it is a user input with no estimator attached.
    """

    objective: Objective = Objective.FLOW
    gamma: float = 1.0
    volume: float = 1.0
    side: int = 1
    inventory: float = 0.0
    sigma: float = 0.0
    horizon: float = 0.0
    drift: float = 0.0
    p_ia: float = 0.0
    hit_multiplier: float = 1.0
    context: Any = None
    scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "objective", Objective(self.objective))
        object.__setattr__(self, "side", int(Side.parse(self.side)))
        if not self.volume > 0:
            raise InvalidProblem("volume must be positive")
        if self.objective is not Objective.FLOW and not self.gamma > 0:
            raise InvalidProblem("risk aversion must be positive")
        if self.sigma < 0 or self.horizon < 0:
            raise InvalidProblem("sigma and horizon must be non-negative")
        if not 0.0 <= self.p_ia <= 1.0:
            raise InvalidProbability("p_ia must lie in [0, 1]")
        if self.hit_multiplier < 0:
            raise InvalidProblem("hit multiplier must be non-negative")
        if not self.scale > 0:
            raise InvalidProblem("scale must be positive")

    def replace(self, **changes) -> "PricingProblem":
        return replace(self, **changes)


@dataclass(frozen=True)
class PricingSolution:
    delta: float
    objective_value: float
    iterations: int
    bracket: tuple
    residual: float
    warning: str | None = None


@dataclass(frozen=True)
class ExponentialHitModel:
    """Hit probability ``p0 exp(-alpha delta)``, ignoring the context."""

    p0: float = 1.0
    alpha: float = 1.0
    name: str = "exponential"
    monotone: bool = True

    def predict_proba(self, delta, X=None):
        return self.p0 * np.exp(-self.alpha * np.asarray(delta, dtype=float))

    def derivative(self, delta, X=None):
        return -self.alpha * self.predict_proba(delta, X)


# -- closed-form pieces -------------------------------------------------------------


def inventory_term(problem: PricingProblem) -> float:
    """Inventory-risk shift gamma sigma^2 horizon (side inventory + volume / 2)."""
    p = problem
    return p.gamma * p.sigma**2 * p.horizon * (p.side * p.inventory + 0.5 * p.volume)


def ia_spread_correction(problem: PricingProblem) -> float:
    """Additive spread protection against informed clients."""
    p = problem
    if not 0.0 <= p.p_ia <= 1.0:
        raise InvalidProbability("p_ia must lie in [0, 1]")
    if p.hit_multiplier < 0:
        raise InvalidProblem("hit multiplier must be non-negative")
    if p.p_ia == 0.0:
        return 0.0
    m = p.drift * p.horizon
    a = -p.gamma * (p.inventory + p.side * p.volume) * m
    b = -p.gamma * p.inventory * m
    if p.p_ia == 1.0 or p.hit_multiplier == 0.0:
        return (a - b) / (p.gamma * p.volume)
    lp, lh = math.log(p.p_ia), math.log(p.hit_multiplier * (1.0 - p.p_ia))
    return (np.logaddexp(lp + a, lh) - np.logaddexp(lp + b, lh)) / (p.gamma * p.volume)


def utility_shift(problem: PricingProblem) -> float:
    obj = problem.objective
    if obj is Objective.EXP_UTILITY:
        return 0.0
    if obj is Objective.EOD:
        return inventory_term(problem)
    if obj is Objective.EOD_IA:
        return inventory_term(problem) + ia_spread_correction(problem)
    raise InvalidProblem("flow value has no utility shift")


# -- hit curve ------------------------------------------------------------------------


class HitCurve:
    """Scalar hit probability and its spread derivative at one context."""

    def __init__(self, model, context=None, scale: float = 1.0):
        self.model = model
        self.scale = scale
        if context is None:
            self.X = np.zeros((1, 0))
        elif isinstance(context, FeatureBundle):
            self.X = context.as_vector()[None, :]
        else:
            self.X = np.atleast_2d(np.asarray(context, dtype=float))
        self.analytic = hasattr(model, "derivative")

    def prob(self, delta: float) -> float:
        return float(self.model.predict_proba(np.array([delta]), self.X)[0])

    def slope(self, delta: float) -> float:
        if self.analytic:
            return float(self.model.derivative(np.array([delta]), self.X)[0])
        step = 1e-5 * self.scale
        up, down = self.model.predict_proba(np.array([delta + step, delta - step]), np.repeat(self.X, 2, axis=0))
        return float((up - down) / (2.0 * step))


# -- objectives ----------------------------------------------------------------------


def expected_objective(model, problem: PricingProblem, delta: float, curve: HitCurve | None = None) -> float:
    """Value of the problem's objective at ``delta``."""
    p = problem
    c = curve or HitCurve(model, p.context, p.scale)
    hit = c.prob(delta)
    if p.objective is Objective.FLOW:
        return p.volume * delta * hit
    g, v = p.gamma, p.volume
    if p.objective is Objective.EXP_UTILITY:
        return -hit * math.expm1(-g * v * delta)
    var = p.sigma**2 * p.horizon
    pos = p.inventory + p.side * v
    if p.objective is Objective.EOD:
        m1 = math.exp(0.5 * g * g * pos * pos * var)
        m0 = math.exp(0.5 * g * g * p.inventory**2 * var)
        return -hit * math.exp(-g * v * delta) * m1 - (1.0 - hit) * m0
    m = p.drift * p.horizon
    total = 0.0
    # uninformed clients hit with the multiplied probability
    for weight, prob, drift in ((p.p_ia, hit, m), (1.0 - p.p_ia, p.hit_multiplier * hit, 0.0)):
        m1 = math.exp(-g * pos * drift + 0.5 * g * g * pos * pos * var)
        m0 = math.exp(-g * p.inventory * drift + 0.5 * g * g * p.inventory**2 * var)
        total -= weight * (prob * math.exp(-g * v * delta) * m1 + (1.0 - prob) * m0)
    return total


def _condition(problem: PricingProblem, curve: HitCurve, shift: float | None):
    p = problem

    def foc(delta):
        hit, slope = curve.prob(delta), curve.slope(delta)
        if shift is None:
            return hit + delta * slope, slope
        gv = p.gamma * p.volume
        u = gv * (delta - shift)
        if u >= 0:
            return math.exp(-u) * (gv * hit - slope) + slope, slope
        return (gv * hit - slope) + slope * math.exp(u), slope

    return foc


def residual(problem: PricingProblem, curve: HitCurve, delta: float) -> float:
    """Violation of the implicit optimal-spread equation at ``delta``."""
    hit, slope = curve.prob(delta), curve.slope(delta)
    if not slope < 0:
        return math.inf
    if problem.objective is Objective.FLOW:
        return delta + hit / slope
    gv = problem.gamma * problem.volume
    return delta - utility_shift(problem) - math.log1p(-gv * hit / slope) / gv


def _bracket(foc, scale):
    lo, hi = 0.0, 4.0 * scale
    slopes = []
    d_lo, s = foc(lo)
    slopes.append(s)
    step = 4.0 * scale
    k = 0
    while not d_lo > 0:
        if k == MAX_EXPANSIONS or not np.isfinite(d_lo):
            raise NoBracket("optimality condition is never positive")
        hi = lo
        lo -= step
        step *= 2.0
        d_lo, s = foc(lo)
        slopes.append(s)
        k += 1
    d_hi, s = foc(hi)
    slopes.append(s)
    step = 4.0 * scale
    k = 0
    while not d_hi < 0:
        if k == MAX_EXPANSIONS or not np.isfinite(d_hi):
            if all(v >= 0 for v in slopes):
                raise NoBracket("hit probability never decreases in the spread on the sampled points")
            raise NoBracket("optimality condition is never negative")
        lo, d_lo = hi, d_hi
        hi += step
        step *= 2.0
        d_hi, s = foc(hi)
        slopes.append(s)
        k += 1
    return lo, hi


def optimal_spread(model, problem: PricingProblem) -> PricingSolution:
    """Solve the problem's objective for the optimal normalized spread."""
    curve = HitCurve(model, problem.context, problem.scale)
    shift = None if problem.objective is Objective.FLOW else utility_shift(problem)
    cond = _condition(problem, curve, shift)
    lo, hi = _bracket(cond, problem.scale)
    try:
        delta, info = optimize.brentq(lambda d: cond(d)[0], lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps,
                                      maxiter=500, full_output=True)
    except (RuntimeError, ValueError) as exc:
        raise NonConvergence(str(exc)) from exc
    res = residual(problem, curve, delta)
    if not info.converged or not abs(res) <= RESIDUAL_TOL * max(1.0, abs(delta)):
        raise NonConvergence(f"residual {res:.3g} at delta={delta:.12g}")
    warning = None
    if not getattr(model, "monotone", True):
        warning = "hit model is not monotone in the spread; the optimum may be local"
    return PricingSolution(
        delta=float(delta),
        objective_value=expected_objective(model, problem, delta, curve),
        iterations=int(info.iterations),
        bracket=(lo, hi),
        residual=float(res),
        warning=warning,
    )


def optimal_spread_flow(model, problem: PricingProblem) -> PricingSolution:
    return optimal_spread(model, problem.replace(objective=Objective.FLOW))


def optimal_spread_exp_utility(model, problem: PricingProblem) -> PricingSolution:
    return optimal_spread(model, problem.replace(objective=Objective.EXP_UTILITY))


def optimal_spread_eod(model, problem: PricingProblem) -> PricingSolution:
    return optimal_spread(model, problem.replace(objective=Objective.EOD))


def optimal_spread_eod_ia(model, problem: PricingProblem) -> PricingSolution:
    return optimal_spread(model, problem.replace(objective=Objective.EOD_IA))
