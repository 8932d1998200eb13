"""Back-door adjustment: conditioning sets, marginalization and the bias audit.

The audit compares three estimates of the population hit rate under
do(delta) on data produced by a confounded dealer policy:

* naive: hit frequency in the equal-frequency spread bin around delta;
* adjusted: a model fitted with the back-door conditioning set, averaged
  over the observed contexts (plug-in back-door formula);
* truth: the simulator's interventional Monte Carlo estimate.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .domain import FeatureLayout, RfqDataset
from .simulator import (
    FeatureSampler, GenerativeParams, HistoricalPolicy, MonteCarloEstimate, Normal, ScenarioConfig,
    interventional_hit_prob, simulate,
)


MARGINAL_CHUNK = 1 << 16


class Target(str, enum.Enum):
    HIT_PROB = "hit_prob"
    REVENUES_ON_HIT = "revenues_on_hit"
    UPLIFT = "uplift"


class UnknownTarget(KeyError):
    pass


class LayoutMismatch(ValueError):
    pass


@dataclass(frozen=True)
class AdjustmentSpec:
    """Variables to condition on and latent variables to integrate out.

    ``given`` lists the variables every query already conditions on by
    definition (the RfQ itself, or the axe for the uplift).
    """

    target: Target
    conditioning: frozenset
    marginalize: frozenset = frozenset()
    given: frozenset = frozenset()

    def columns(self, layout: FeatureLayout) -> list[int]:
        """Context columns covered by the conditioning set."""
        cols = []
        for group in ("sigma", "CF", "BF", "RF"):
            if group in self.conditioning:
                cols += layout.columns_of(group)
        return sorted(cols)


_REGISTRY = {
    Target.HIT_PROB: AdjustmentSpec(Target.HIT_PROB, frozenset({"sigma", "RF", "BF", "CF"}),
                                    given=frozenset({"RfQ"})),
    Target.REVENUES_ON_HIT: AdjustmentSpec(Target.REVENUES_ON_HIT, frozenset({"sigma", "RF"}),
                                           marginalize=frozenset({"IA"}), given=frozenset({"RfQ", "hit"})),
    Target.UPLIFT: AdjustmentSpec(Target.UPLIFT, frozenset(), given=frozenset({"axe"})),
}


def conditioning_set(target) -> AdjustmentSpec:
    try:
        return _REGISTRY[Target(target)]
    except ValueError as exc:
        raise UnknownTarget(target) from exc


# -- marginalization ---------------------------------------------------------------


@dataclass(frozen=True)
class Discrete:
    """Finite distribution over excluded-feature vectors (exact enumeration)."""

    values: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.values, dtype=float))
        p = np.asarray(self.probs, dtype=float)
        if v.shape[0] != len(p) or np.any(p < 0) or not math.isclose(p.sum(), 1.0, rel_tol=1e-12):
            raise ValueError("probabilities must be non-negative, sum to one and match the values")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "probs", p)

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class Sampled:
    """Continuous excluded-feature distribution given by ``draw(rng, size)``."""

    draw: Callable
    width: int


def marginalized_hit_prob(model, delta: float, kept, excluded, n_draws: int = 100_000,
                          seed: int = 0) -> MonteCarloEstimate:
    """Average the model over the distribution of the excluded features.

    ``kept`` is a full-width context vector with NaN in the excluded
    columns.  Discrete distributions are enumerated exactly (standard
    error 0); sampled ones use ``n_draws`` seeded draws.
    """
    kept = np.asarray(kept, dtype=float)
    width = model.layout.width
    if kept.shape != (width,):
        raise LayoutMismatch(f"kept context must have {width} entries")
    holes = np.flatnonzero(np.isnan(kept))
    if excluded.width != len(holes):
        raise LayoutMismatch(f"{len(holes)} excluded columns but the distribution has {excluded.width}")
    if isinstance(excluded, Discrete):
        X = np.repeat(kept[None, :], len(excluded.probs), axis=0)
        X[:, holes] = excluded.values
        probs = model.predict_proba(np.full(len(X), float(delta)), X)
        return MonteCarloEstimate(float(np.dot(excluded.probs, probs)), 0.0, len(probs))
    if n_draws < 2:
        raise ValueError("n_draws must be >= 2")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 23]))
    # running sums over fixed-size chunks keep memory flat for large n_draws
    total = total_sq = 0.0
    for start in range(0, n_draws, MARGINAL_CHUNK):
        size = min(MARGINAL_CHUNK, n_draws - start)
        X = np.repeat(kept[None, :], size, axis=0)
        X[:, holes] = np.asarray(excluded.draw(rng, size), dtype=float).reshape(size, len(holes))
        probs = np.asarray(model.predict_proba(np.full(size, float(delta)), X), dtype=float)
        total += math.fsum(probs)
        total_sq += math.fsum(probs * probs)
    mean = total / n_draws
    var = max(total_sq - n_draws * mean * mean, 0.0) / (n_draws - 1)
    return MonteCarloEstimate(mean, math.sqrt(var / n_draws), n_draws)


# -- audit ----------------------------------------------------------------------------


def equal_frequency_edges(x, n_bins: int) -> np.ndarray:
    edges = np.quantile(np.asarray(x, dtype=float), np.linspace(0.0, 1.0, n_bins + 1))
    edges[0], edges[-1] = -np.inf, np.inf
    return edges


def naive_hit_prob(data: RfqDataset, delta_grid, n_bins: int = 32):
    """Hit frequency of the equal-frequency spread bin containing each grid point."""
    edges = equal_frequency_edges(data.delta_norm, n_bins)
    which = np.clip(np.searchsorted(edges, data.delta_norm, side="right") - 1, 0, n_bins - 1)
    hit = data.hit
    out = []
    for d in np.asarray(delta_grid, dtype=float):
        b = int(np.clip(np.searchsorted(edges, d, side="right") - 1, 0, n_bins - 1))
        h = hit[which == b]
        p = float(h.mean())
        out.append(MonteCarloEstimate(p, math.sqrt(p * (1 - p) / len(h)), len(h)))
    return out


def adjusted_hit_prob(model, data: RfqDataset, delta_grid):
    """Plug-in back-door estimate: model averaged over the observed contexts."""
    out = []
    for d in np.asarray(delta_grid, dtype=float):
        probs = np.asarray(model.predict_proba(np.full(len(data), d), data.X), dtype=float)
        out.append(MonteCarloEstimate(float(probs.mean()), float(probs.std(ddof=1) / math.sqrt(len(probs))),
                                      len(probs)))
    return out


@dataclass
class AuditReport:
    delta_grid: np.ndarray
    truth: list
    naive: list
    adjusted: dict = field(default_factory=dict)

    def bias(self, name: str) -> np.ndarray:
        series = self.naive if name == "naive" else self.adjusted[name]
        return np.array([e.value - t.value for e, t in zip(series, self.truth)])

    def bias_se(self, name: str) -> np.ndarray:
        series = self.naive if name == "naive" else self.adjusted[name]
        return np.array([math.hypot(e.stderr, t.stderr) for e, t in zip(series, self.truth)])

    def rows(self) -> list[dict]:
        rows = []
        for i, d in enumerate(self.delta_grid):
            row = {"delta": float(d), "truth": self.truth[i].value, "truth_stderr": self.truth[i].stderr,
                   "naive": self.naive[i].value, "naive_stderr": self.naive[i].stderr,
                   "naive_bias": self.naive[i].value - self.truth[i].value}
            for name, series in self.adjusted.items():
                row[f"adjusted_{name}"] = series[i].value
                row[f"adjusted_{name}_stderr"] = series[i].stderr
                row[f"adjusted_{name}_bias"] = series[i].value - self.truth[i].value
            rows.append(row)
        return rows

    def write_csv(self, path: str | Path) -> None:
        rows = self.rows()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(list(rows[0]))
            for r in rows:
                w.writerow([repr(float(v)) for v in r.values()])

    def write_long_csv(self, path: str | Path) -> None:
        """Plot-ready long format: delta, series, value, stderr."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["delta", "series", "value", "stderr"])
            named = [("truth", self.truth), ("naive", self.naive)]
            named += [(f"adjusted_{k}", v) for k, v in self.adjusted.items()]
            for name, series in named:
                for d, e in zip(self.delta_grid, series):
                    w.writerow([repr(float(d)), name, repr(e.value), repr(e.stderr)])


def _grid_seed(seed: int, i: int) -> int:
    return int(np.random.SeedSequence([seed, 31, i]).generate_state(1, np.uint64)[0])


def causal_audit(scenario: ScenarioConfig, delta_grid, models: dict, observational: RfqDataset | None = None,
                 n_mc: int = 100_000, n_bins: int = 32) -> AuditReport:
    """Naive vs back-door-adjusted vs interventional hit rates on a grid.

    ``models`` maps names to fitted hit models, or to callables that fit a
    model on the observational dataset.
    """
    if scenario.dealer_policy != "historical":
        raise ValueError("the audit needs the historical (confounded) dealer policy")
    grid = np.asarray(delta_grid, dtype=float)
    data = observational if observational is not None else simulate(scenario).records
    truth = [interventional_hit_prob(scenario, d, n_mc=n_mc, seed=_grid_seed(scenario.seed, i))
             for i, d in enumerate(grid)]
    report = AuditReport(grid, truth, naive_hit_prob(data, grid, n_bins))
    for name, m in models.items():
        model = m if hasattr(m, "predict_proba") else m(data)
        report.adjusted[name] = adjusted_hit_prob(model, data, grid)
    return report


def confounded_scenario(n_rfqs: int = 50_000, seed: int = 0, confounded: bool = True) -> ScenarioConfig:
    """Designated audit world: spreads and reservation spreads both rise with sigma.

    With ``confounded=False`` the dealer policy ignores the context.
    """
    params = GenerativeParams(
        a_res=0.1, b_res=3.0, sigma_res=0.35,
        sep=GenerativeParams().sep.shifted(0.3), b_d=1.5, p_quote=0.7,
    )
    sampler = FeatureSampler(sigma=Normal(0.35, 0.15, 0.02))
    policy = HistoricalPolicy(intercept=0.0 if confounded else 1.0, sigma_coef=3.0 if confounded else 0.0,
                              axe_coef=0.0, noise_sd=0.25)
    return ScenarioConfig(params=params, n_rfqs=n_rfqs, sampler=sampler, policy=policy, seed=seed)
