"""Discriminative hit-probability baselines: L2 logistic regression and GBDT.

Both models see the design ``[delta_norm, context...]`` (spread first) and
expose the same ``predict_proba(delta, X)`` call as the generative
predictor.  Features are standardized on the training split.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import _core
from .domain import FeatureLayout, RfqDataset


class SingularSystem(np.linalg.LinAlgError):
    pass


class DidNotConverge(RuntimeError):
    pass


class DegenerateData(ValueError):
    pass


class InvalidHyperparams(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


def design(delta, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    delta = np.broadcast_to(np.asarray(delta, dtype=float), (len(X),))
    return np.column_stack([delta, X])


def balanced_class_weights(y) -> tuple[float, float]:
    """n / (2 n_c) per class; (1, 1) when a class is absent."""
    y = np.asarray(y)
    n, n1 = len(y), int(np.sum(y))
    n0 = n - n1
    if n0 == 0 or n1 == 0:
        return 1.0, 1.0
    return n / (2.0 * n0), n / (2.0 * n1)


def _row_weights(y, class_weights):
    if class_weights is None:
        return np.ones(len(y))
    if class_weights == "balanced":
        class_weights = balanced_class_weights(y)
    w0, w1 = class_weights
    return np.where(np.asarray(y) == 1, w1, w0).astype(float)


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, Z) -> "Standardizer":
        Z = np.asarray(Z, dtype=float)
        s = Z.std(axis=0)
        return cls(Z.mean(axis=0), np.where(s > 0, s, 1.0))

    def transform(self, Z):
        return (np.asarray(Z, dtype=float) - self.mean) / self.scale

    def inverse(self, Zs):
        return np.asarray(Zs, dtype=float) * self.scale + self.mean

    def to_dict(self):
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], float), np.asarray(d["scale"], float))


class _Base:
    layout: FeatureLayout
    name = "model"

    def _check(self, delta, X):
        Z = design(delta, X)
        if Z.shape[1] != self.layout.width + 1:
            raise DimensionMismatch(f"expected {self.layout.width} context features, got {Z.shape[1] - 1}")
        return Z

    def predict(self, data: RfqDataset) -> np.ndarray:
        return self.predict_proba(data.delta_norm, data.X)


# -- logistic regression -----------------------------------------------------------


@dataclass
class LogisticModel(_Base):
    """Logistic hit model on standardized ``[delta, context]``.

    ``weights`` and ``intercept`` live in standardized units; ``coef`` and
    ``raw_intercept`` give the equivalent raw-unit model.
    """

    layout: FeatureLayout
    standardizer: Standardizer
    weights: np.ndarray
    intercept: float
    C: float = 100.0
    class_weights: tuple = (1.0, 1.0)
    iterations: int = 0
    converged: bool = True
    name: str = "logistic"

    @property
    def l2_penalty(self) -> float:
        return 1.0 / self.C

    @property
    def coef(self) -> np.ndarray:
        return self.weights / self.standardizer.scale

    @property
    def raw_intercept(self) -> float:
        return float(self.intercept - self.coef @ self.standardizer.mean)

    @property
    def spread_weight(self) -> float:
        return float(self.weights[0])

    @property
    def monotone(self) -> bool:
        return True

    def decision(self, delta, X):
        Z = self.standardizer.transform(self._check(delta, X))
        return self.intercept + Z @ self.weights

    def predict_proba(self, delta, X):
        return expit(self.decision(delta, X))

    def derivative(self, delta, X):
        p = self.predict_proba(delta, X)
        return p * (1.0 - p) * self.coef[0]

    def to_dict(self) -> dict:
        return {"kind": self.name, "n_client": self.layout.n_client, "C": self.C,
                "class_weights": list(self.class_weights), "intercept": self.intercept,
                "weights": self.weights.tolist(), "standardizer": self.standardizer.to_dict(),
                "features": ["delta_norm", *self.layout.names],
                "iterations": self.iterations, "converged": self.converged}

    @classmethod
    def from_dict(cls, d) -> "LogisticModel":
        return cls(FeatureLayout(d["n_client"]), Standardizer.from_dict(d["standardizer"]),
                   np.asarray(d["weights"], float), float(d["intercept"]), float(d["C"]),
                   tuple(d["class_weights"]), int(d["iterations"]), bool(d["converged"]))


def fit_logistic_arrays(Z, y, C: float = 100.0, class_weights="balanced", tol: float = 1e-8,
                        max_iter: int = 100, standardize: bool = True):
    """IRLS for ``sum_i w_i logloss_i + ||beta||^2 / (2C)`` (intercept unpenalized).

    Returns ``(standardizer, weights, intercept, iterations, converged)``.
    """
    Z = np.asarray(Z, dtype=float)
    y = np.asarray(y, dtype=float)
    if not C > 0:
        raise InvalidHyperparams("C must be positive")
    st = Standardizer.fit(Z) if standardize else Standardizer(np.zeros(Z.shape[1]), np.ones(Z.shape[1]))
    Zs = st.transform(Z)
    w_row = _row_weights(y, class_weights)
    A = np.column_stack([np.ones(len(Zs)), Zs])
    pen = np.full(A.shape[1], 1.0 / C)
    pen[0] = 0.0
    beta = np.zeros(A.shape[1])
    sw = w_row.sum()
    ybar = float(np.dot(w_row, y) / sw)
    if 0.0 < ybar < 1.0:
        beta[0] = math.log(ybar / (1.0 - ybar))
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        p = expit(A @ beta)
        grad = A.T @ (w_row * (p - y)) + pen * beta
        if np.max(np.abs(grad)) <= tol:
            converged = True
            break
        hw = w_row * p * (1.0 - p)
        hess = (A * hw[:, None]).T @ A + np.diag(pen)
        try:
            step = np.linalg.solve(hess, grad)
            if not np.all(np.isfinite(step)):
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            step = grad / max(np.max(np.abs(np.diag(hess))), 1.0)
        # backtracking on the penalized objective
        f0 = _penalized_nll(A, y, w_row, beta, pen)
        t = 1.0
        while t > 1e-10:
            cand = beta - t * step
            if _penalized_nll(A, y, w_row, cand, pen) <= f0 + 1e-12 * abs(f0):
                break
            t *= 0.5
        beta = beta - t * step
        if np.max(np.abs(t * step)) < 1e-15:
            # no further progress possible in floating point
            p = expit(A @ beta)
            grad = A.T @ (w_row * (p - y)) + pen * beta
            converged = bool(np.max(np.abs(grad)) <= max(tol, 1e-9 * sw))
            break
    return st, beta[1:], float(beta[0]), it, converged


def _penalized_nll(A, y, w, beta, pen):
    eta = A @ beta
    # log(1 + exp(eta)) - y eta, stable
    loss = np.logaddexp(0.0, eta) - y * eta
    return float(np.dot(w, loss) + 0.5 * np.dot(pen * beta, beta))


def fit_logistic(train: RfqDataset, C: float = 100.0, class_weights="balanced", tol: float = 1e-8,
                 max_iter: int = 100) -> LogisticModel:
    y = train.hit
    cw = balanced_class_weights(y) if class_weights == "balanced" else (
        (1.0, 1.0) if class_weights is None else tuple(class_weights))
    st, w, b, it, ok = fit_logistic_arrays(design(train.delta_norm, train.X), y, C, cw, tol, max_iter)
    model = LogisticModel(train.layout, st, w, b, C, cw, it, ok)
    if not ok:
        raise DidNotConverge(f"logistic fit stopped after {it} iterations")
    return model


# -- gradient boosting ---------------------------------------------------------------


@dataclass(frozen=True)
class GbdtParams:
    n_estimators: int = 500
    learning_rate: float = 0.01
    num_leaves: int = 15
    min_child_samples: int = 50
    subsample: float = 0.6
    colsample_bytree: float = 1.0
    reg_lambda: float = 1.0
    class_weights: object = "balanced"

    def __post_init__(self):
        if self.n_estimators < 0 or self.num_leaves < 1 or self.min_child_samples < 1:
            raise InvalidHyperparams("counts must be positive")
        if not (0 < self.learning_rate and 0 < self.subsample <= 1 and 0 < self.colsample_bytree <= 1):
            raise InvalidHyperparams("rates and fractions must lie in (0, 1]")
        if self.reg_lambda < 0:
            raise InvalidHyperparams("reg_lambda must be >= 0")


@dataclass
class GbdtModel(_Base):
    """Boosted regression trees on the log-odds scale.

    Trees are stored flat: ``feature == -1`` marks a leaf; ``roots[k]`` is
    the first node of tree ``k``.  Features are used unstandardized (trees
    are invariant to monotone rescaling).
    """

    layout: FeatureLayout
    params: GbdtParams
    base_score: float
    feature: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    threshold: np.ndarray = field(default_factory=lambda: np.empty(0))
    left: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    right: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    value: np.ndarray = field(default_factory=lambda: np.empty(0))
    roots: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    gain_importance: np.ndarray | None = None
    seed: int = 0
    name: str = "gbdt"

    @property
    def n_trees(self) -> int:
        return len(self.roots)

    @property
    def monotone(self) -> bool:
        return False

    def tree_sizes(self) -> list[int]:
        ends = list(self.roots[1:]) + [len(self.feature)]
        return [int(np.sum(self.feature[a:b] < 0)) for a, b in zip(self.roots, ends)]

    def decision(self, delta, X):
        Z = np.ascontiguousarray(self._check(delta, X))
        if self.n_trees == 0:
            return np.full(len(Z), self.base_score)
        raw = _core.predict_raw(Z, self.feature, self.threshold, self.left, self.right, self.value, self.roots)
        return self.base_score + self.params.learning_rate * raw

    def predict_proba(self, delta, X):
        return expit(self.decision(delta, X))

    def to_dict(self) -> dict:
        p = self.params
        return {"kind": self.name, "n_client": self.layout.n_client, "seed": self.seed,
                "params": {k: getattr(p, k) for k in p.__dataclass_fields__ if k != "class_weights"},
                "class_weights": p.class_weights if isinstance(p.class_weights, str) or p.class_weights is None
                else list(p.class_weights),
                "base_score": self.base_score,
                "features": ["delta_norm", *self.layout.names],
                "trees": {"feature": self.feature.tolist(), "threshold": self.threshold.tolist(),
                          "left": self.left.tolist(), "right": self.right.tolist(),
                          "value": self.value.tolist(), "roots": self.roots.tolist()},
                "gain_importance": None if self.gain_importance is None else self.gain_importance.tolist()}

    @classmethod
    def from_dict(cls, d) -> "GbdtModel":
        t = d["trees"]
        params = GbdtParams(**d["params"], class_weights=d["class_weights"])
        gi = d.get("gain_importance")
        return cls(FeatureLayout(d["n_client"]), params, float(d["base_score"]),
                   np.asarray(t["feature"], np.int64), np.asarray(t["threshold"], float),
                   np.asarray(t["left"], np.int64), np.asarray(t["right"], np.int64),
                   np.asarray(t["value"], float), np.asarray(t["roots"], np.int64),
                   None if gi is None else np.asarray(gi, float), int(d["seed"]))


def fit_gbdt_arrays(Z, y, params: GbdtParams = GbdtParams(), seed: int = 0):
    """Leaf-wise boosting with exact split search.

    Returns the flat tree arrays, base score and per-feature gain sums.
    """
    Z = np.ascontiguousarray(np.asarray(Z, dtype=float))
    y = np.asarray(y, dtype=float)
    n, d = Z.shape
    if n == 0:
        raise DegenerateData("no rows")
    if y.min() == y.max():
        raise DegenerateData("training labels contain a single class")
    w = _row_weights(y, params.class_weights)
    ybar = float(np.dot(w, y) / w.sum())
    base = math.log(ybar / (1.0 - ybar))
    order = np.ascontiguousarray(np.argsort(Z, axis=0, kind="stable").T.astype(np.int64))
    raw = np.full(n, base)
    lam = float(params.reg_lambda)
    n_sub = max(1, int(round(params.subsample * n)))
    n_col = max(1, int(round(params.colsample_bytree * d)))

    feature, threshold, left, right, value, roots = [], [], [], [], [], []
    gains = np.zeros(d)

    for k in range(params.n_estimators):
        rng = np.random.default_rng(np.random.SeedSequence([seed, k]))
        p = expit(raw)
        g = np.ascontiguousarray(w * (p - y))
        h = np.ascontiguousarray(w * p * (1.0 - p))
        sample = np.zeros(n, dtype=np.uint8)
        sample[rng.choice(n, size=n_sub, replace=False) if n_sub < n else slice(None)] = 1
        fmask = np.zeros(d, dtype=np.uint8)
        fmask[np.sort(rng.choice(d, size=n_col, replace=False)) if n_col < d else np.arange(d)] = 1

        t_feat, t_thr, t_left, t_right, t_val, t_gain = _core.grow_tree(
            order, Z, g, h, sample, fmask, params.min_child_samples, lam, params.num_leaves)
        np.add.at(gains, t_feat[t_feat >= 0], t_gain[t_feat >= 0])
        offset = len(feature)
        roots.append(offset)
        feature += t_feat.tolist()
        threshold += t_thr.tolist()
        left += [c + offset if c >= 0 else -1 for c in t_left.tolist()]
        right += [c + offset if c >= 0 else -1 for c in t_right.tolist()]
        value += t_val.tolist()
        raw += params.learning_rate * _core.predict_raw(Z, t_feat, t_thr, t_left, t_right, t_val, np.zeros(1, np.int64))

    arrays = dict(
        feature=np.asarray(feature, np.int64), threshold=np.asarray(threshold, float),
        left=np.asarray(left, np.int64), right=np.asarray(right, np.int64),
        value=np.asarray(value, float), roots=np.asarray(roots, np.int64),
    )
    return arrays, base, gains


def fit_gbdt(train: RfqDataset, params: GbdtParams = GbdtParams(), seed: int = 0) -> GbdtModel:
    Z = design(train.delta_norm, train.X)
    arrays, base, gains = fit_gbdt_arrays(Z, train.hit, params, seed)
    return GbdtModel(train.layout, params, base, gain_importance=gains, seed=seed, **arrays)


# -- benchmark -------------------------------------------------------------------------


@dataclass
class MajorityClassModel(_Base):
    """Constant predictor returning the training hit frequency."""

    layout: FeatureLayout
    rate: float
    name: str = "majority"

    @classmethod
    def fit(cls, train: RfqDataset) -> "MajorityClassModel":
        return cls(train.layout, float(np.mean(train.hit)))

    @property
    def monotone(self) -> bool:
        return True

    def predict_proba(self, delta, X):
        return np.full(len(self._check(delta, X)), self.rate)

    def to_dict(self) -> dict:
        return {"kind": self.name, "n_client": self.layout.n_client, "rate": self.rate}


def predict(model, delta, context) -> np.ndarray:
    """Hit probability from any fitted model (shared entry point)."""
    from .domain import FeatureBundle

    if isinstance(context, FeatureBundle):
        context = context.as_vector()[None, :]
    out = model.predict_proba(delta, context)
    return np.clip(out, 0.0, 1.0)


def save_model(model, path: str | Path) -> None:
    if hasattr(model, "model_card"):
        payload = model.model_card()
    elif hasattr(model, "to_dict"):
        payload = model.to_dict()
    else:
        payload = model.describe()
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_model(path: str | Path):
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    kind = d.get("kind")
    if kind == "logistic":
        return LogisticModel.from_dict(d)
    if kind == "gbdt":
        return GbdtModel.from_dict(d)
    if kind == "majority":
        return MajorityClassModel(FeatureLayout(d["n_client"]), float(d["rate"]))
    from .generative import MODEL_CARD_FORMAT, load_model_card

    if d.get("format") == MODEL_CARD_FORMAT:
        return load_model_card(path)
    raise ValueError(f"{path}: unknown model kind")
