"""Command-line entry point: ``rfqcausal <subcommand> [--config FILE] [--out DIR]``.

Exit codes: 0 success, 1 invalid configuration, 2 partial failure,
3 numerical failure (a ``diagnostics.json`` is written to the output
directory).  The default output root comes from ``RFQCAUSAL_OUTPUT``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import traceback
from pathlib import Path

OUTPUT_ENV = "RFQCAUSAL_OUTPUT"
SUBCOMMANDS = ("simulate", "fit-generative", "fit-lr", "fit-gbdt", "evaluate", "price", "revenue",
               "axe-match", "causal-audit", "experiment")


class PartialFailure(RuntimeError):
    pass


def sig(x) -> str:
    """Human-facing number: 6 significant digits."""
    return f"{float(x):.6g}"


def _limit_threads(n: int | None) -> None:
    # must run before numpy / jax are imported
    if n is None:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)
    os.environ["XLA_FLAGS"] = (os.environ.get("XLA_FLAGS", "")
                               + f" --xla_cpu_multi_thread_eigen={'true' if n > 1 else 'false'}"
                               + f" intra_op_parallelism_threads={n}").strip()


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rfqcausal", description="RfQ simulation, estimation and pricing")
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", "-c", help="INI configuration file")
        s.add_argument("--out", "-o", help=f"output directory (default ${OUTPUT_ENV} or ./rfqcausal_out)")
        s.add_argument("--seed", type=int, help="overrides every seed in the config")
        s.add_argument("--threads", type=int, help="cap on worker threads")
        s.add_argument("--verbose", "-v", action="store_true")
        if name in ("fit-generative", "fit-lr", "fit-gbdt", "evaluate", "causal-audit"):
            s.add_argument("--data", help="RfQ CSV (default: simulate the configured scenario)")
        if name in ("evaluate", "price", "revenue", "axe-match"):
            s.add_argument("--model", help="model file (JSON)")
        if name == "evaluate":
            s.add_argument("--train", help="training CSV used for the majority-class frequency")
    return p


# -- handlers ------------------------------------------------------------------------


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _dataset(args, cfg):
    from .config import scenario_from_config
    from .domain import RfqDataset
    from .simulator import simulate

    if getattr(args, "data", None):
        return RfqDataset.read_csv(args.data)
    return simulate(scenario_from_config(cfg, args.seed)).records


def _model(args, cfg, section_name):
    from .discriminative import load_model
    from .pricing import ExponentialHitModel

    path = args.model or cfg.get(section_name, {}).get("model")
    if path is None or path == "exponential":
        s = cfg.get(section_name, {})
        return ExponentialHitModel(float(s.get("p0", 1.0)), float(s.get("alpha", 1.0)))
    if path == "true":
        from .config import scenario_from_config
        from .generative import GenerativePredictor

        return GenerativePredictor(scenario_from_config(cfg, args.seed).params)
    return load_model(path)


def cmd_simulate(args, cfg, out: Path) -> str:
    from .config import scenario_from_config
    from .simulator import simulate

    ds = simulate(scenario_from_config(cfg, args.seed))
    ds.write(out / "rfqs.csv", out / "rfqs_latents.csv")
    return f"simulated {len(ds)} RfQs, hit rate {sig(ds.records.hit.mean())} -> {out / 'rfqs.csv'}"


def cmd_fit_generative(args, cfg, out: Path) -> str:
    from .config import section
    from .generative import DidNotConverge, FitOptions, fit

    data = _dataset(args, cfg)
    opts = section(cfg, "fit", FitOptions, seed=args.seed)
    rep = fit(data, options=opts)
    rep.save(out / "generative.json")
    if not rep.converged:
        raise DidNotConverge(rep)
    return f"generative fit: log-likelihood {sig(rep.log_likelihood)}, {rep.iterations} iterations"


def cmd_fit_lr(args, cfg, out: Path) -> str:
    from .config import section
    from .discriminative import fit_logistic, save_model

    model = fit_logistic(_dataset(args, cfg), **section(cfg, "logistic"))
    save_model(model, out / "logistic.json")
    return f"logistic fit: spread weight {sig(model.spread_weight)}, {model.iterations} iterations"


def cmd_fit_gbdt(args, cfg, out: Path) -> str:
    from .config import section
    from .discriminative import GbdtParams, fit_gbdt, save_model

    s = section(cfg, "gbdt")
    seed = s.pop("seed", 0) if args.seed is None else args.seed
    s.pop("seed", None)
    model = fit_gbdt(_dataset(args, cfg), section({"gbdt": s}, "gbdt", GbdtParams), seed=seed)
    save_model(model, out / "gbdt.json")
    return f"gbdt fit: {model.n_trees} trees"


def cmd_evaluate(args, cfg, out: Path) -> str:
    from .domain import RfqDataset
    from .metrics import evaluate, majority_frequency

    data = _dataset(args, cfg)
    model = _model(args, cfg, "evaluate")
    w_m = cfg.get("evaluate", {}).get("w_m")
    if args.train:
        w_m = majority_frequency(RfqDataset.read_csv(args.train).hit)
    if w_m is None:
        raise ValueError("evaluate needs --train or [evaluate] w_m")
    rep = evaluate(model, data, float(w_m), n_bins=int(cfg.get("evaluate", {}).get("n_bins", 10)))
    rep.to_json(out / "eval.json")
    rep.calibration_csv(out / "calibration.csv")
    return f"AUC {sig(rep.auc)}, BBS {sig(rep.bbs)}, BBSS {sig(rep.bbss)} on {rep.n} records"


def cmd_price(args, cfg, out: Path) -> str:
    from .config import section
    from .pricing import PricingProblem, optimal_spread

    s = section(cfg, "pricing")
    for k in ("model", "p0", "alpha"):
        s.pop(k, None)
    problem = section({"pricing": s}, "pricing", PricingProblem)
    sol = optimal_spread(_model(args, cfg, "pricing"), problem)
    _write_json(out / "price.json", {"objective": problem.objective.value, "delta": sol.delta,
                                     "objective_value": sol.objective_value, "iterations": sol.iterations,
                                     "bracket": list(sol.bracket), "residual": sol.residual,
                                     "warning": sol.warning})
    return f"optimal spread ({problem.objective.value}): {sig(sol.delta)}"


def cmd_revenue(args, cfg, out: Path) -> str:
    from .config import section
    from .revenue import RevenuePotentialQuery, prob_revenue_positive_on_hit, revenue_potential

    s = section(cfg, "revenue")
    for k in ("model", "p0", "alpha"):
        s.pop(k, None)
    query = section({"revenue": {**s, "model": _model(args, cfg, "revenue")}}, "revenue", RevenuePotentialQuery)
    rp, pos = revenue_potential(query), prob_revenue_positive_on_hit(query)
    _write_json(out / "revenue.json", {"delta": query.delta, "revenue_potential": rp, "prob_positive_on_hit": pos})
    return f"revenue potential {sig(rp)}, P(R>0 | hit) {sig(pos)}"


def cmd_axe_match(args, cfg, out: Path) -> str:
    from .axe import AxeQuery, ContactLog, InsufficientData, axe_ace, write_report
    from .config import scenario_from_config
    from .simulator import simulate

    scen = scenario_from_config(cfg, args.seed)
    if scen.candidate_dt is None:
        raise ValueError("axe-match needs [scenario] candidate_dt (candidate rows)")
    log = ContactLog.from_synthetic(simulate(scen))
    model = _model(args, cfg, "axe") if (args.model or "model" in cfg.get("axe", {})) else _model_true(scen)
    s = cfg.get("axe", {})
    delta = float(s.get("delta", 1.0))
    cells = sorted(set(zip(log.client_id.tolist(), log.bond_id.tolist())))
    estimates, skipped = [], 0
    for c, b in cells:
        try:
            estimates.append(axe_ace(log, AxeQuery(c, b, delta=delta), model,
                                     smoothing=float(s.get("smoothing", 1.0)),
                                     min_count=int(s.get("min_count", 30)), strict=False))
        except InsufficientData:
            skipped += 1
    write_report(estimates, out / "axe_report.csv")
    if skipped:
        raise PartialFailure(f"{skipped} cells had no usable context rows")
    top = max(estimates, key=lambda e: e.ace or 0.0)
    return f"{len(estimates)} cells scored; best ({top.client}, {top.bond}) ACE {sig(top.ace)}"


def _model_true(scen):
    from .generative import GenerativePredictor

    return GenerativePredictor(scen.params)


def cmd_causal_audit(args, cfg, out: Path) -> str:
    import numpy as np

    from .causal import causal_audit
    from .config import scenario_from_config
    from .generative import FitOptions, GROUPS, fit

    cfg = dict(cfg)
    cfg.setdefault("scenario", {}).setdefault("preset", "confounded")
    scen = scenario_from_config(cfg, args.seed)
    data = _dataset(args, cfg)
    s = cfg.get("audit", {})
    grid = s.get("delta_grid")
    if grid is None:
        grid = np.linspace(*np.quantile(data.delta_norm, [0.1, 0.9]), int(s.get("n_grid", 9)))
    fit_kw = {"restarts": int(s.get("restarts", 1)), "seed": scen.seed}
    models = {"full": fit(data, options=FitOptions(**fit_kw)).predictor}
    if s.get("negative_control", True):
        drop = tuple(g for g in GROUPS if g != "sigma")
        models["drop_sigma"] = fit(data, options=FitOptions(conditioning=drop, **fit_kw)).predictor
    rep = causal_audit(scen, grid, models, observational=data, n_mc=int(s.get("n_mc", 100_000)),
                       n_bins=int(s.get("n_bins", 32)))
    rep.write_csv(out / "audit.csv")
    rep.write_long_csv(out / "audit_long.csv")
    return (f"max |naive bias| {sig(np.abs(rep.bias('naive')).max())}, "
            f"max |adjusted bias| {sig(np.abs(rep.bias('full')).max())}")


def cmd_experiment(args, cfg, out: Path) -> str:
    from .config import scenario_from_config
    from .pipeline import ExperimentSpec, run_experiment

    s = dict(cfg.get("experiment", {}))
    source = s.pop("source", "scenario")
    if source == "scenario":
        source = scenario_from_config(cfg, args.seed)
    grids = {k[5:]: s.pop(k) for k in list(s) if k.startswith("grid_")}
    if args.seed is not None:
        s["seed"] = args.seed
    for k in ("fractions", "roster", "winsor_pct"):
        if k in s:
            s[k] = tuple(s[k])
    try:
        spec = ExperimentSpec(source=source, grids=grids, **s)
    except TypeError as exc:
        raise ValueError(str(exc)) from exc
    rep = run_experiment(spec)
    rep.write(out)
    best = max(rep.evals.items(), key=lambda kv: kv[1].auc) if rep.evals else None
    line = f"{len(rep.evals)} models evaluated"
    if best:
        line += f"; best test AUC {sig(best[1].auc)} ({best[0]})"
    if rep.partial:
        raise PartialFailure(line + f"; failures: {', '.join(sorted(rep.failures))}")
    return line


HANDLERS = {
    "simulate": cmd_simulate, "fit-generative": cmd_fit_generative, "fit-lr": cmd_fit_lr,
    "fit-gbdt": cmd_fit_gbdt, "evaluate": cmd_evaluate, "price": cmd_price, "revenue": cmd_revenue,
    "axe-match": cmd_axe_match, "causal-audit": cmd_causal_audit, "experiment": cmd_experiment,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _limit_threads(args.threads)
    from .config import read_config
    from .simulator import InvalidConfig

    out = Path(args.out or os.environ.get(OUTPUT_ENV, "rfqcausal_out"))
    try:
        cfg = read_config(args.config)
        out.mkdir(parents=True, exist_ok=True)
        line = HANDLERS[args.command](args, cfg, out)
    except PartialFailure as exc:
        print(f"partial: {exc}")
        return 2
    except (ArithmeticError, RuntimeError) as exc:
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "diagnostics.json", {"command": args.command, "error": type(exc).__name__,
                                               "message": str(exc), "traceback": traceback.format_exc()})
        print(f"numerical failure: {type(exc).__name__}: {exc} (see {out / 'diagnostics.json'})", file=sys.stderr)
        return 3
    except (InvalidConfig, ValueError, KeyError, TypeError, OSError) as exc:
        if args.verbose:
            traceback.print_exc()
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return 1
    print(line)
    return 0


if __name__ == "__main__":
    sys.exit(main())
