"""Evaluation: AUC, balanced Brier score, calibration, monotonicity and importance.

Conventions:

* AUC ties are resolved with average ranks, so a constant scorer gets 0.5.
* The balanced Brier score weights each record by the inverse frequency of
  its class among the evaluated labels (both classes carry half the mass).
  The benchmark ``1/2 - w_m (1 - w_m)`` is the score of the constant
  predictor ``1 - w_m``, with ``w_m`` the majority-class (no-hit) frequency
  of the TRAINING split.
* Calibration uses 10 equal-width bins on [0, 1] unless told otherwise.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .domain import RfqDataset

MONOTONE_TOL = 1e-9


class SingleClass(ValueError):
    pass


class DegenerateWeight(ValueError):
    pass


class IncompatibleMethod(TypeError):
    pass


def _labels(labels) -> np.ndarray:
    y = np.asarray(labels)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be binary")
    return y.astype(np.int64)


def auc_roc(scores, labels) -> float:
    """Mann-Whitney AUC with average ranks for ties."""
    s = np.asarray(scores, dtype=float)
    y = _labels(labels)
    n1 = int(y.sum())
    n0 = len(y) - n1
    if n1 == 0 or n0 == 0:
        raise SingleClass("AUC needs both classes")
    r = rankdata(s, method="average")
    # rank sums of halves are exact in binary floating point
    u = r[y == 1].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n0))


def auc_pairwise(scores, labels) -> float:
    """O(n^2) concordance probability; reference implementation."""
    s = np.asarray(scores, dtype=float)
    y = _labels(labels)
    pos, neg = s[y == 1], s[y == 0]
    if len(pos) == 0 or len(neg) == 0:
        raise SingleClass("AUC needs both classes")
    diff = pos[:, None] - neg[None, :]
    return float(((diff > 0).sum() + 0.5 * (diff == 0).sum()) / diff.size)


def majority_frequency(train_labels) -> float:
    """w_m: frequency of the majority (no-hit) class in the training labels."""
    y = _labels(train_labels)
    if len(y) == 0:
        raise DegenerateWeight("no training labels")
    return float(1.0 - y.mean())


def bbs_benchmark(w_m: float) -> float:
    if not 0.0 < w_m < 1.0:
        raise DegenerateWeight(f"w_m must lie in (0, 1), got {w_m}")
    return 0.5 - w_m * (1.0 - w_m)


def balanced_brier(scores, labels, w_m: float) -> tuple[float, float]:
    """(BBS, BBSS) with class-balanced record weights."""
    bench = bbs_benchmark(w_m)
    pred = np.asarray(scores, dtype=float)
    y = _labels(labels)
    n1 = int(y.sum())
    n0 = len(y) - n1
    if n1 == 0 or n0 == 0:
        raise DegenerateWeight("balanced weights need both classes")
    sq = (pred - y) ** 2
    bbs = 0.5 * sq[y == 0].mean() + 0.5 * sq[y == 1].mean()
    return float(bbs), float(1.0 - bbs / bench)


@dataclass(frozen=True)
class CalibrationBin:
    lower: float
    upper: float
    mean_pred: float
    freq: float
    count: int


def calibration_bins(scores, labels, n_bins: int = 10) -> list[CalibrationBin]:
    """Equal-width bins on [0, 1]; empty bins carry NaN means and count 0."""
    if n_bins < 2:
        raise ValueError("n_bins must be >= 2")
    s = np.asarray(scores, dtype=float)
    y = _labels(labels)
    idx = np.clip((s * n_bins).astype(np.int64), 0, n_bins - 1)
    out = []
    for b in range(n_bins):
        m = idx == b
        c = int(m.sum())
        mp = float(s[m].mean()) if c else math.nan
        fr = float(y[m].mean()) if c else math.nan
        out.append(CalibrationBin(b / n_bins, (b + 1) / n_bins, mp, fr, c))
    return out


@dataclass(frozen=True)
class MonotonicityAudit:
    violations: int
    worst_jump: float
    worst_context: np.ndarray | None
    worst_delta: float | None
    n_contexts: int
    n_grid: int


def monotonicity_audit(model, contexts, delta_grid, chunk: int = 256) -> MonotonicityAudit:
    """Count adjacent grid pairs where the hit probability rises with the spread."""
    grid = np.asarray(delta_grid, dtype=float)
    if np.any(np.diff(grid) <= 0):
        raise ValueError("delta grid must be strictly ascending")
    C = np.atleast_2d(np.asarray(contexts, dtype=float))
    k = len(grid)
    count, worst, where = 0, 0.0, None
    for start in range(0, len(C), chunk):
        block = C[start:start + chunk]
        X = np.repeat(block, k, axis=0)
        p = np.asarray(model.predict_proba(np.tile(grid, len(block)), X), dtype=float).reshape(len(block), k)
        jump = np.diff(p, axis=1)
        count += int((jump > MONOTONE_TOL).sum())
        i, j = np.unravel_index(np.argmax(jump), jump.shape)
        if jump[i, j] > max(worst, MONOTONE_TOL):
            worst, where = float(jump[i, j]), (start + i, j)
    return MonotonicityAudit(count, worst, None if where is None else C[where[0]].copy(),
                             None if where is None else float(grid[where[1]]), len(C), k)


# -- feature importance ------------------------------------------------------------------


class ImportanceMethod(str, enum.Enum):
    PERMUTATION = "permutation"
    STD_COEFFICIENTS = "std_coefficients"
    GAIN = "gain"


@dataclass(frozen=True)
class FeatureImportance:
    method: str
    features: list
    values: np.ndarray
    rank: np.ndarray

    def ranked(self) -> list[tuple[str, float]]:
        order = np.argsort(self.rank, kind="stable")
        return [(self.features[i], float(self.values[i])) for i in order]


def _ranking(values) -> np.ndarray:
    # 1 = most important; ties keep column order
    order = np.argsort(-np.asarray(values), kind="stable")
    rank = np.empty(len(order), np.int64)
    rank[order] = np.arange(1, len(order) + 1)
    return rank


def permutation_importance(model, data: RfqDataset, n_repeats: int = 8, seed: int = 0) -> np.ndarray:
    """Mean AUC drop when one column of [delta, context] is shuffled."""
    Z = np.column_stack([data.delta_norm, data.X])
    base = auc_roc(model.predict_proba(Z[:, 0], Z[:, 1:]), data.hit)
    drops = np.zeros(Z.shape[1])
    for j in range(Z.shape[1]):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 41, j]))
        for _ in range(n_repeats):
            Zp = Z.copy()
            Zp[:, j] = rng.permutation(Zp[:, j])
            drops[j] += base - auc_roc(model.predict_proba(Zp[:, 0], Zp[:, 1:]), data.hit)
    return drops / n_repeats


def feature_importance(model, data: RfqDataset | None = None, method="permutation",
                       n_repeats: int = 8, seed: int = 0) -> FeatureImportance:
    method = ImportanceMethod(method)
    names = ["delta_norm", *model.layout.names]
    if method is ImportanceMethod.PERMUTATION:
        if data is None:
            raise ValueError("permutation importance needs a validation set")
        values = permutation_importance(model, data, n_repeats, seed)
    elif method is ImportanceMethod.STD_COEFFICIENTS:
        if not hasattr(model, "standardizer"):
            raise IncompatibleMethod(f"{model.name} has no linear coefficients")
        values = np.abs(model.weights)
    else:
        if getattr(model, "gain_importance", None) is None:
            raise IncompatibleMethod(f"{model.name} has no split gains")
        values = np.asarray(model.gain_importance, dtype=float)
    values = np.asarray(values, dtype=float)
    return FeatureImportance(method.value, names, values, _ranking(values))


# -- report --------------------------------------------------------------------------------


@dataclass
class EvalReport:
    model: str
    auc: float
    bbs: float
    bbss: float
    w_m: float
    n: int
    calibration: list = field(default_factory=list)
    monotonicity_violations: int | None = None
    monotonicity_worst: float | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["calibration"] = [asdict(b) for b in self.calibration]
        d["calibration_binning"] = f"{len(self.calibration)} equal-width bins on [0, 1], unweighted"
        return d

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def calibration_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["model", "lower", "upper", "mean_pred", "freq", "count"])
            for b in self.calibration:
                w.writerow([self.model, repr(b.lower), repr(b.upper), repr(b.mean_pred), repr(b.freq), b.count])


def evaluate(model, data: RfqDataset, w_m: float, n_bins: int = 10, contexts=None,
             delta_grid=None) -> EvalReport:
    """All metrics of one model on one (test) split."""
    scores = np.asarray(model.predict_proba(data.delta_norm, data.X), dtype=float)
    auc = auc_roc(scores, data.hit)
    bbs, bbss = balanced_brier(scores, data.hit, w_m)
    rep = EvalReport(getattr(model, "name", "model"), auc, bbs, bbss, w_m, len(data),
                     calibration_bins(scores, data.hit, n_bins))
    if contexts is not None and delta_grid is not None:
        audit = monotonicity_audit(model, contexts, delta_grid)
        rep.monotonicity_violations, rep.monotonicity_worst = audit.violations, audit.worst_jump
    return rep
