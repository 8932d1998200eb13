"""Axe matching: call uplift, on-call hit probability and average causal effect.

Estimates are per (client, bond) cell from a contact log: one row per
candidate contact with the call / axe flags and whether an RfQ followed.
Conditioning on ``axe`` is enough to identify the call effect, so the
uplift is a difference of smoothed frequencies:

    P(RfQ | do(call=c), axe=1, cell) = P(RfQ | call=c, axe=1, cell)

The average causal effect multiplies the uplift by the hit probability of
the axe-conditioned spread, averaged over the per-RfQ part of the context
(volatility and RfQ features).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .domain import FeatureLayout, RfqDataset
from .pricing import PricingProblem, optimal_spread


class InsufficientData(ValueError):
    """Too few rows for an estimate; ``estimate`` holds the wide-error result."""

    def __init__(self, message, estimate=None):
        super().__init__(message)
        self.estimate = estimate


@dataclass(frozen=True)
class ContactLog:
    client_id: np.ndarray
    bond_id: np.ndarray
    call: np.ndarray
    axe: np.ndarray
    rfq: np.ndarray
    X: np.ndarray
    layout: FeatureLayout

    def __post_init__(self):
        n = len(self.rfq)
        for name in ("client_id", "bond_id", "call", "axe", "rfq"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.int64))
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has the wrong length")
        object.__setattr__(self, "X", np.asarray(self.X, dtype=float).reshape(n, self.layout.width))

    def __len__(self):
        return len(self.rfq)

    @classmethod
    def from_synthetic(cls, ds) -> "ContactLog":
        """Candidate rows of a simulated dataset (requires candidate mode)."""
        c = ds.candidates
        if c is None:
            raise ValueError("the dataset was not simulated with candidate rows")
        return cls(c["client_id"], c["bond_id"], c["call"], c["axe"], c["rfq"], c["X"], ds.records.layout)

    @classmethod
    def from_records(cls, data: RfqDataset) -> "ContactLog":
        """Observed RfQs only (every row has rfq = 1)."""
        return cls(data.client_id, data.bond_id, data.call, data.axe, np.ones(len(data), np.int64),
                   data.X, data.layout)

    def cell(self, client, bond) -> np.ndarray:
        return (self.client_id == client) & (self.bond_id == bond)


def _freq(successes: int, trials: int, alpha: float):
    denom = trials + 2.0 * alpha
    if denom <= 0:
        return math.nan, math.inf
    p = (successes + alpha) / denom
    return p, math.sqrt(p * (1.0 - p) / denom)


@dataclass(frozen=True)
class UpliftEstimate:
    client: int
    bond: int
    p_rfq_given_call: float
    p_rfq_given_nocall: float
    se_call: float
    se_nocall: float
    n_call: int
    n_nocall: int
    sufficient: bool
    hit_term: float | None = None
    hit_term_se: float | None = None
    delta: float | None = None

    @property
    def uplift(self) -> float:
        return self.p_rfq_given_call - self.p_rfq_given_nocall

    @property
    def uplift_se(self) -> float:
        return math.hypot(self.se_call, self.se_nocall)

    @property
    def ace(self) -> float | None:
        return None if self.hit_term is None else self.hit_term * self.uplift

    @property
    def ace_se(self) -> float | None:
        if self.hit_term is None:
            return None
        return math.hypot(self.hit_term * self.uplift_se, self.uplift * (self.hit_term_se or 0.0))

    @property
    def on_call_hit_prob(self) -> float | None:
        """P(hit and RfQ | do(call=1), axe=1, cell)."""
        return None if self.hit_term is None else self.hit_term * self.p_rfq_given_call


def uplift(log: ContactLog, client: int, bond: int, smoothing: float = 1.0,
           min_count: int = 30, strict: bool = True) -> UpliftEstimate:
    """Smoothed P(RfQ | call, axe=1) difference for one (client, bond) cell.

    Cells with fewer than ``min_count`` axed contacts under either call
    value raise ``InsufficientData`` (carrying the wide-error estimate)
    unless ``strict`` is off, in which case the estimate is flagged.
    """
    if smoothing < 0:
        raise ValueError("smoothing must be non-negative")
    m = log.cell(client, bond) & (log.axe == 1)
    counts = []
    for c in (1, 0):
        rows = m & (log.call == c)
        counts.append((int(log.rfq[rows].sum()), int(rows.sum())))
    (k1, n1), (k0, n0) = counts
    p1, s1 = _freq(k1, n1, smoothing)
    p0, s0 = _freq(k0, n0, smoothing)
    ok = min(n1, n0) >= min_count and math.isfinite(p1) and math.isfinite(p0)
    est = UpliftEstimate(int(client), int(bond), p1, p0, s1, s0, n1, n0, ok)
    if not ok and strict:
        raise InsufficientData(f"cell ({client}, {bond}) has {n1} called / {n0} uncalled axed contacts", est)
    return est


# -- hit term ---------------------------------------------------------------------------


def rf_distribution(log: ContactLog, client: int, bond: int, min_rows: int = 20) -> np.ndarray:
    """Context rows for the cell's RfQs with a client -> global fallback.

    The client and bond columns are overwritten with the cell's features so
    only volatility and the RfQ features are borrowed from other rows.
    """
    lay = log.layout
    is_rfq = log.rfq == 1
    of_client = np.flatnonzero(log.client_id == client)
    of_bond = np.flatnonzero(log.bond_id == bond)
    if len(of_client) == 0 or len(of_bond) == 0:
        raise InsufficientData(f"no features known for client {client} or bond {bond}")
    cf = log.X[of_client[0], lay.client_slice]
    bf = log.X[of_bond[0], lay.bond_slice]
    for rows in (log.cell(client, bond) & is_rfq, (log.client_id == client) & is_rfq, is_rfq):
        if rows.sum() >= min_rows:
            X = log.X[rows].copy()
            X[:, lay.client_slice] = cf
            X[:, lay.bond_slice] = bf
            return X
    raise InsufficientData("no RfQ rows to build the context distribution")


@dataclass(frozen=True)
class AxeQuery:
    """Which cell to score and at which spread.

    Either ``delta`` (normalized spread) is fixed, or ``pricing`` gives the
    problem solved per context for the axe-conditioned optimal spread.
    ``contexts`` overrides the empirical context distribution.
    """

    client: int
    bond: int
    delta: float | None = None
    pricing: PricingProblem | None = None
    contexts: np.ndarray | None = None


def hit_term(model, query: AxeQuery, log: ContactLog | None = None):
    """Mean and standard error of the hit probability at delta* over the contexts."""
    X = query.contexts
    if X is None:
        if log is None:
            raise ValueError("either contexts or a contact log is needed")
        X = rf_distribution(log, query.client, query.bond)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if query.delta is not None:
        delta = np.full(len(X), float(query.delta))
    elif query.pricing is not None:
        delta = np.array([optimal_spread(model, replace(query.pricing, context=x)).delta for x in X])
    else:
        raise ValueError("the query needs a spread or a pricing problem")
    probs = np.asarray(model.predict_proba(delta, X), dtype=float)
    se = float(probs.std(ddof=1) / math.sqrt(len(probs))) if len(probs) > 1 else 0.0
    return float(probs.mean()), se, float(delta.mean())


def axe_ace(log: ContactLog, query: AxeQuery, model, smoothing: float = 1.0,
            min_count: int = 30, strict: bool = True) -> UpliftEstimate:
    est = uplift(log, query.client, query.bond, smoothing, min_count, strict)
    h, h_se, d = hit_term(model, query, log)
    return replace(est, hit_term=h, hit_term_se=h_se, delta=d)


def rank_matches(estimates) -> list[UpliftEstimate]:
    """Order by (ace, on-call hit probability), both descending."""
    return sorted(estimates, key=lambda e: (-(e.ace or 0.0), -(e.on_call_hit_prob or 0.0), e.client, e.bond))


REPORT_COLUMNS = ("client", "bond", "delta", "on_call_hit_prob", "p_rfq_call", "p_rfq_nocall",
                  "uplift", "uplift_stderr", "ace", "ace_stderr", "sufficient")


def write_report(estimates, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for e in rank_matches(estimates):
            w.writerow([e.client, e.bond, repr(e.delta), repr(e.on_call_hit_prob), repr(e.p_rfq_given_call),
                        repr(e.p_rfq_given_nocall), repr(e.uplift), repr(e.uplift_se), repr(e.ace),
                        repr(e.ace_se), int(e.sufficient)])


# -- RfQ preferences and the Bayes factorization ----------------------------------------


def rfq_preference(log: ContactLog, client: int, bond: int, smoothing: float = 1.0) -> float:
    """Smoothed P(RfQ | client, bond) over the cell's contacts."""
    m = log.cell(client, bond)
    p, _ = _freq(int(log.rfq[m].sum()), int(m.sum()), smoothing)
    if not math.isfinite(p):
        raise InsufficientData(f"cell ({client}, {bond}) has no contacts")
    return p


def rfq_shares(log: ContactLog, smoothing: float = 0.0) -> dict:
    """Share of RfQs falling in each observed (client, bond) cell."""
    is_rfq = log.rfq == 1
    if not is_rfq.any():
        raise InsufficientData("no RfQs in the log")
    cells, counts = np.unique(np.stack([log.client_id[is_rfq], log.bond_id[is_rfq]], axis=1),
                              axis=0, return_counts=True)
    total = counts.sum() + smoothing * len(counts)
    return {(int(c), int(b)): float((k + smoothing) / total) for (c, b), k in zip(cells, counts)}


def call_given_axe_rfq(log: ContactLog, client, bond, call, axe, rfq, smoothing=1.0) -> float:
    m = log.cell(client, bond) & (log.axe == axe) & (log.rfq == rfq)
    p, _ = _freq(int((log.call[m] == call).sum()), int(m.sum()), smoothing)
    return p


def axe_given_rfq(log: ContactLog, client, bond, axe, rfq, smoothing=1.0) -> float:
    m = log.cell(client, bond) & (log.rfq == rfq)
    p, _ = _freq(int((log.axe[m] == axe).sum()), int(m.sum()), smoothing)
    return p


def factorized_rfq_given_call_axe(log: ContactLog, client, bond, call, axe, smoothing=1.0) -> float:
    """P(RfQ | call, axe, cell) from P(call|axe,RfQ) P(axe|RfQ) P(RfQ|cell)."""
    joint = []
    for r in (1, 0):
        p_r = rfq_preference(log, client, bond, smoothing)
        p_r = p_r if r == 1 else 1.0 - p_r
        joint.append(call_given_axe_rfq(log, client, bond, call, axe, r, smoothing)
                     * axe_given_rfq(log, client, bond, axe, r, smoothing) * p_r)
    return joint[0] / (joint[0] + joint[1])


def direct_rfq_given_call_axe(log: ContactLog, client, bond, call, axe, smoothing=1.0) -> float:
    m = log.cell(client, bond) & (log.call == call) & (log.axe == axe)
    p, _ = _freq(int(log.rfq[m].sum()), int(m.sum()), smoothing)
    return p
