"""Revenue potential and revenues-on-hit evaluation.

End-of-period revenue on a hit is
``volume * delta + side * volume * (mid_end - mid_now)`` with a Brownian
mid-price whose drift is ``mu`` for informed clients (IA=1) and
zero otherwise.  Spreads here are in price units; the hit model is
evaluated at ``delta / benchmark``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np
from scipy.special import logsumexp, ndtr

from .domain import FeatureBundle, Side


class InvalidQuery(ValueError):
    pass


@dataclass(frozen=True)
class RevenuePotentialQuery:
    """One revenue-potential question.

    ``p_ia`` is the prior P(IA=1 | client).  When ``model`` exposes
    ``hit_probability_by_ia`` and ``context`` is given, the IA weights on
    a hit use the exact posterior instead of the prior.
    """

    delta: float
    side: int = 1
    sigma: float = 1.0
    horizon: float = 1.0
    drift: float = 0.0
    p_ia: float = 0.0
    model: Any = None
    context: Any = None
    benchmark: float = 1.0

    def __post_init__(self):
        try:
            object.__setattr__(self, "side", int(Side.parse(self.side)))
        except ValueError as exc:
            raise InvalidQuery(str(exc)) from exc
        if not self.sigma > 0 or not self.horizon > 0:
            raise InvalidQuery("sigma and horizon must be positive")
        if not 0.0 <= self.p_ia <= 1.0:
            raise InvalidQuery("p_ia must lie in [0, 1]")
        if not self.benchmark > 0:
            raise InvalidQuery("benchmark must be positive")
        if not math.isfinite(self.delta) or not math.isfinite(self.drift):
            raise InvalidQuery("delta and drift must be finite")

    def context_matrix(self):
        if self.context is None:
            return np.zeros((1, 0))
        if isinstance(self.context, FeatureBundle):
            return self.context.as_vector()[None, :]
        return np.atleast_2d(np.asarray(self.context, dtype=float))


def prob_positive_given_ia(query: RevenuePotentialQuery) -> np.ndarray:
    """P(revenue > 0 | hit, IA=a) for a = 0, 1."""
    qr = query
    sd = qr.sigma * math.sqrt(qr.horizon)
    m = np.array([0.0, qr.drift * qr.horizon])
    # revenue > 0  <=>  delta + side * dmid > 0 with dmid ~ N(m, sd^2)
    return ndtr((qr.delta + qr.side * m) / sd)


def _hit_by_ia(query: RevenuePotentialQuery):
    """(f_0, f_1) at the query spread, or None when the model lacks them."""
    qr = query
    if qr.model is None or not hasattr(qr.model, "hit_probability_by_ia") or qr.context is None:
        return None
    by_ia = qr.model.hit_probability_by_ia(np.array([qr.delta / qr.benchmark]), qr.context_matrix())
    return np.asarray(by_ia, dtype=float)[0]


def ia_weights_on_hit(query: RevenuePotentialQuery) -> np.ndarray:
    """P(IA=a | hit, context) for a = 0, 1."""
    qr = query
    prior = np.array([1.0 - qr.p_ia, qr.p_ia])
    by_ia = _hit_by_ia(qr)
    if by_ia is None:
        return prior
    joint = prior * by_ia
    total = joint.sum()
    return prior if total <= 0 else joint / total


def prob_revenue_positive_on_hit(query: RevenuePotentialQuery) -> float:
    return float(np.dot(ia_weights_on_hit(query), prob_positive_given_ia(query)))


def revenue_potential(query: RevenuePotentialQuery) -> float:
    """P(revenue > 0 | do(delta), RfQ, context) = P(hit) * P(revenue > 0 | hit)."""
    qr = query
    if qr.model is None:
        raise InvalidQuery("revenue potential needs a hit model")
    by_ia = _hit_by_ia(qr)
    pos = prob_positive_given_ia(qr)
    if by_ia is not None:
        return float(np.clip(np.dot(np.array([1.0 - qr.p_ia, qr.p_ia]) * by_ia, pos), 0.0, 1.0))
    hit = float(qr.model.predict_proba(np.array([qr.delta / qr.benchmark]), qr.context_matrix())[0])
    return float(np.clip(hit * prob_revenue_positive_on_hit(qr), 0.0, 1.0))


def log_neg_expected_utility_on_hit(delta, inventory, volume, side, sigma, horizon, gamma,
                                    p_ia=0.0, drift=0.0) -> float:
    """log(-E[-exp(-gamma revenue) | hit]) via the Gaussian moment generating function."""
    if not gamma > 0:
        raise InvalidQuery("gamma must be positive")
    if not 0.0 <= p_ia <= 1.0:
        raise InvalidQuery("p_ia must lie in [0, 1]")
    pos = inventory + side * volume
    var = sigma**2 * horizon
    base = -gamma * volume * delta + 0.5 * gamma**2 * pos**2 * var
    terms = np.array([base, base - gamma * pos * drift * horizon])
    weights = np.array([1.0 - p_ia, p_ia])
    return float(logsumexp(terms, b=weights))


def expected_utility_on_hit(delta, inventory, volume, side, sigma, horizon, gamma,
                            p_ia=0.0, drift=0.0) -> float:
    """E[-exp(-gamma (volume delta + (inventory + side volume) dP))], IA-mixed; -inf on overflow."""
    lv = log_neg_expected_utility_on_hit(delta, inventory, volume, side, sigma, horizon, gamma, p_ia, drift)
    with np.errstate(over="ignore"):
        return -float(np.exp(lv))
