"""Experiment protocol: split, clean, train, select on validation, test once.

Report directory layout::

    out/reports/   comparison.csv, validation.csv, <model>_eval.json,
                   <model>_importance.csv, failures.json
    out/models/    one JSON model card per finalist
    out/figures/   calibration.csv (long format, plot-ready)

Nothing in the reports depends on wall-clock time, so two runs with the
same spec and seed write byte-identical files.
"""

from __future__ import annotations

import csv
import json
import traceback
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import discriminative as disc
from . import generative as gen
from .domain import RfqDataset
from .metrics import EvalReport, IncompatibleMethod, auc_roc, evaluate, feature_importance, majority_frequency
from .simulator import GenerativeParams, ScenarioConfig, simulate

ROSTER = ("majority", "logistic", "gbdt", "generative", "generative_true")
DEFAULT_GRIDS = {
    "majority": [{}],
    "logistic": [{"C": c} for c in (0.01, 1.0, 100.0)],
    "gbdt": [{}],
    "generative": [{}],
    "generative_true": [{}],
}
IMPORTANCE_METHOD = {"logistic": "std_coefficients", "gbdt": "gain"}


class TooFewRecords(ValueError):
    pass


class InvalidSpec(ValueError):
    pass


@dataclass
class ExperimentSpec:
    """What to run.

    ``source`` is a CSV path or a ScenarioConfig.  ``grids`` maps roster
    names to lists of keyword dicts (one per hyperparameter setting).
    ``true_params`` enables the ``generative_true`` entry; for scenario
    sources it defaults to the scenario's parameters.
    """

    source: object
    fractions: tuple = (0.6, 0.2, 0.2)
    roster: tuple = ("majority", "logistic", "gbdt", "generative")
    grids: dict = field(default_factory=dict)
    selection: str = "auc"
    seed: int = 0
    winsorize: bool = True
    winsor_pct: tuple = (0.5, 99.5)
    class_weights: bool = True
    importance: bool = True
    monotonicity_contexts: int = 200
    true_params: GenerativeParams | None = None

    def __post_init__(self):
        fr = tuple(float(x) for x in self.fractions)
        if len(fr) != 3 or min(fr) <= 0 or abs(sum(fr) - 1.0) > 1e-9:
            raise InvalidSpec("split fractions must be three positive numbers summing to 1")
        self.fractions = fr
        unknown = set(self.roster) - set(ROSTER)
        if unknown:
            raise InvalidSpec(f"unknown roster entries {sorted(unknown)}")
        if self.selection != "auc":
            raise InvalidSpec("only AUC selection is supported")
        if not 0 <= self.winsor_pct[0] < self.winsor_pct[1] <= 100:
            raise InvalidSpec("winsorization percentiles must be increasing within [0, 100]")

    def grid(self, name: str) -> list:
        return self.grids.get(name, DEFAULT_GRIDS[name])


def load_source(spec: ExperimentSpec) -> RfqDataset:
    if isinstance(spec.source, ScenarioConfig):
        return simulate(spec.source).records
    return RfqDataset.read_csv(spec.source)


def split(data: RfqDataset, fractions=(0.6, 0.2, 0.2), seed: int = 0):
    """Train / validation / test; time-ordered when timestamps exist."""
    n = len(data)
    n_tr = int(round(fractions[0] * n))
    n_va = int(round(fractions[1] * n))
    n_te = n - n_tr - n_va
    if min(n_tr, n_va, n_te) < 1:
        raise TooFewRecords(f"{n} records cannot fill three non-empty splits")
    ts = np.asarray(data.timestamp, dtype=float)
    if np.all(np.isfinite(ts)):
        order = np.argsort(ts, kind="stable")
    else:
        order = np.random.default_rng(np.random.SeedSequence([seed, 53])).permutation(n)
    idx = np.split(order, [n_tr, n_tr + n_va])
    # rows keep their original relative order inside each split
    return tuple(data.subset(np.sort(i)) for i in idx)


@dataclass(frozen=True)
class Winsorizer:
    """Clip continuous context columns at train percentiles (count columns untouched)."""

    columns: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    @classmethod
    def fit(cls, train: RfqDataset, pct=(0.5, 99.5)) -> "Winsorizer":
        cols = np.array([j for j in range(train.layout.width) if j != train.layout.n_dealers_col])
        lo, hi = np.percentile(train.X[:, cols], pct, axis=0)
        return cls(cols, lo, hi)

    def apply(self, data: RfqDataset) -> RfqDataset:
        X = data.X.copy()
        X[:, self.columns] = np.clip(X[:, self.columns], self.lower, self.upper)
        return data.with_columns(X=X)


# -- roster -----------------------------------------------------------------------------


def _fit_one(name: str, kw: dict, train: RfqDataset, spec: ExperimentSpec, true_params):
    cw = "balanced" if spec.class_weights else None
    if name == "majority":
        return disc.MajorityClassModel.fit(train)
    if name == "logistic":
        return disc.fit_logistic(train, class_weights=cw, **kw)
    if name == "gbdt":
        params = disc.GbdtParams(**{"class_weights": cw, **kw})
        return disc.fit_gbdt(train, params, seed=spec.seed)
    if name == "generative":
        opts = gen.FitOptions(**{"class_weights": spec.class_weights, "seed": spec.seed, **kw})
        return gen.fit(train, options=opts)
    if name == "generative_true":
        if true_params is None:
            raise InvalidSpec("generative_true needs the true parameters")
        return gen.GenerativePredictor(true_params, **kw)
    raise InvalidSpec(name)


def _predictor(fitted):
    return fitted.predictor if isinstance(fitted, gen.GenerativeFitReport) else fitted


def _card(fitted) -> dict:
    if hasattr(fitted, "model_card"):
        return fitted.model_card()
    if hasattr(fitted, "to_dict"):
        return fitted.to_dict()
    return fitted.describe()


@dataclass
class ExperimentReport:
    evals: dict
    selected: dict
    validation: list
    importance: dict
    failures: dict
    cards: dict

    @property
    def partial(self) -> bool:
        return bool(self.failures)

    def write(self, out: str | Path) -> None:
        out = Path(out)
        for sub in ("reports", "models", "figures"):
            (out / sub).mkdir(parents=True, exist_ok=True)
        with open(out / "reports" / "comparison.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["model", "auc", "bbss", "bbs", "n", "w_m", "monotonicity_violations", "hyperparams"])
            for name, r in self.evals.items():
                w.writerow([name, repr(r.auc), repr(r.bbss), repr(r.bbs), r.n, repr(r.w_m),
                            "" if r.monotonicity_violations is None else r.monotonicity_violations,
                            json.dumps(self.selected[name], sort_keys=True)])
        with open(out / "reports" / "validation.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["model", "hyperparams", "validation_auc"])
            for name, kw, auc in self.validation:
                w.writerow([name, json.dumps(kw, sort_keys=True), repr(auc)])
        with open(out / "figures" / "calibration.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["model", "lower", "upper", "mean_pred", "freq", "count"])
            for name, r in self.evals.items():
                for b in r.calibration:
                    w.writerow([name, repr(b.lower), repr(b.upper), repr(b.mean_pred), repr(b.freq), b.count])
        for name, r in self.evals.items():
            r.to_json(out / "reports" / f"{name}_eval.json")
        for name, imp in self.importance.items():
            with open(out / "reports" / f"{name}_importance.csv", "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["rank", "feature", "value", "method"])
                for rank, (feat, val) in enumerate(imp.ranked(), 1):
                    w.writerow([rank, feat, repr(val), imp.method])
        for name, card in self.cards.items():
            (out / "models" / f"{name}.json").write_text(json.dumps(card, indent=2, sort_keys=True) + "\n",
                                                         encoding="utf-8")
        (out / "reports" / "failures.json").write_text(json.dumps(self.failures, indent=2, sort_keys=True) + "\n",
                                                       encoding="utf-8")


def run_experiment(spec: ExperimentSpec, data: RfqDataset | None = None) -> ExperimentReport:
    """Fit every roster entry on train, select on validation, evaluate on test once."""
    data = load_source(spec) if data is None else data
    train, valid, test = split(data, spec.fractions, spec.seed)
    raw_test = test
    if spec.winsorize:
        wz = Winsorizer.fit(train, spec.winsor_pct)
        train, valid, test = wz.apply(train), wz.apply(valid), wz.apply(test)
    true_params = spec.true_params
    if true_params is None and isinstance(spec.source, ScenarioConfig):
        true_params = spec.source.params
    w_m = majority_frequency(train.hit)
    lo, hi = np.percentile(train.delta_norm, [1, 99])
    grid = np.linspace(lo, hi, 64)
    contexts = test.X[: spec.monotonicity_contexts]

    evals, selected, validation, importance, failures, cards = {}, {}, [], {}, {}, {}
    for name in spec.roster:
        try:
            best = None
            for kw in spec.grid(name):
                fitted = _fit_one(name, kw, train, spec, true_params)
                model = _predictor(fitted)
                auc = auc_roc(model.predict(valid), valid.hit)
                validation.append((name, kw, auc))
                if best is None or auc > best[0]:
                    best = (auc, kw, fitted)
            _, kw, fitted = best
            model = _predictor(fitted)
            # the true-parameter scorer sees the uncleaned features it was defined on
            scored = raw_test if name == "generative_true" else test
            rep = evaluate(model, scored, w_m, contexts=contexts, delta_grid=grid)
            rep.model = name
            evals[name], selected[name], cards[name] = rep, kw, _card(fitted)
            if spec.importance and name not in ("majority", "generative_true"):
                method = IMPORTANCE_METHOD.get(name, "permutation")
                try:
                    importance[name] = feature_importance(model, valid, method, seed=spec.seed)
                except IncompatibleMethod as exc:
                    failures[f"{name}:importance"] = str(exc)
        except Exception as exc:  # partial results are still written
            failures[name] = "".join(traceback.format_exception_only(type(exc), exc)).strip()
    return ExperimentReport(evals, selected, validation, importance, failures, cards)
