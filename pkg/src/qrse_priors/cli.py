"""Command-line front end.

Exit codes: 0 success, 1 some periods failed, 2 usage or input error. Input
errors print one machine-readable line ``error: E_CODE: message`` to stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import re
import sys
import warnings
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from . import __version__
from .core import EquilibriumParams, Grid, ModelError, UtilityModel, validate_probability_vector
from .decision import DecisionContext, conditional_entropy, decision_probabilities, kl_from_prior
from .equilibrium import (
    EquilibriumModel,
    SupportTruncated,
    conditional_table,
    density_frame,
    marginal_density,
)
from .fitting import (
    FitConfig,
    PeriodFitError,
    build_empirical,
    fit,
    model_from_dict,
    rolling_fit,
    sample_from_model,
)
from .ingestion import (
    GROUPING_KINDS,
    InputError,
    PeriodGrouping,
    compute_returns,
    group_periods,
    read_prices,
    read_returns,
)
from .priors import BeliefHistory, prior_for_period, schedule_from_name
from .ri import RiProblem, solve_ri

logger = logging.getLogger("qrse_priors")

PRIOR_CHOICES = ("uniform", "previous", "mean", "extreme-buy", "extreme-sell", "adaptive", "fixed")
CLI_CONFIG_KEYS = ("grouping", "terms", "prior", "utility", "prior_vector", "adaptive_observed")


class CliError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


def _clean(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


class OutputTree:
    """Collects written files so the manifest can list (and hash) every one."""

    def __init__(self, root: Path):
        self.root = root
        self.files: list[Path] = []
        root.mkdir(parents=True, exist_ok=True)

    def _path(self, rel: str) -> Path:
        path = self.root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        self.files.append(path)
        return path

    def json(self, rel: str, obj) -> None:
        self._path(rel).write_text(json.dumps(_clean(obj), indent=2) + "\n", encoding="utf-8")

    def csv(self, rel: str, frame: pd.DataFrame) -> None:
        frame.to_csv(self._path(rel), index=False, lineterminator="\n", encoding="utf-8")

    def text(self, rel: str, text: str) -> None:
        self._path(rel).write_text(text, encoding="utf-8")

    def manifest(self, args, config: Optional[dict], inputs: list[str]) -> None:
        outputs = []
        for path in sorted(self.files):
            digest = hashlib.sha256(path.read_bytes()).hexdigest()
            outputs.append({"path": path.relative_to(self.root).as_posix(), "sha256": digest})
        self.json("manifest.json", {
            "artifact_version": __version__,
            "subcommand": args.command,
            "config_path": getattr(args, "config", None),
            "config": config,
            "inputs": inputs,
            "output_dir": ".",
            "seed": getattr(args, "seed", None),
            "timestamp": _timestamp(inputs),
            "outputs": outputs,
        })


def _timestamp(inputs: list[str]) -> Optional[str]:
    """SOURCE_DATE_EPOCH if set, else the newest input modification time."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch is None:
        mtimes = [os.stat(p).st_mtime for p in inputs if p and os.path.exists(p)]
        if not mtimes:
            return None
        epoch = max(mtimes)
    return datetime.fromtimestamp(float(epoch), tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _slug(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "-", str(label)).strip("-").lower() or "period"


# ---------------------------------------------------------------------------
# input helpers
# ---------------------------------------------------------------------------


def _require_file(path: Optional[str], what: str) -> str:
    if path is None:
        raise CliError("E_USAGE", f"{what} is required")
    if not Path(path).is_file():
        raise CliError("E_INPUT_NOT_FOUND", f"{what} {path} does not exist")
    return path


def _load_config(args) -> tuple[FitConfig, dict]:
    raw: dict = {}
    if getattr(args, "config", None):
        _require_file(args.config, "config file")
        try:
            raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise CliError("E_CONFIG_INVALID", f"{args.config}: {exc}") from exc
        if not isinstance(raw, dict):
            raise CliError("E_CONFIG_INVALID", "config must be a JSON object")
    cli = {k: raw.pop(k) for k in CLI_CONFIG_KEYS if k in raw}
    overrides = {"seed": getattr(args, "seed", None), "entry": getattr(args, "entry", None),
                 "exit": getattr(args, "exit", None), "bins": getattr(args, "bins", None),
                 "median_window": getattr(args, "median_window", None)}
    raw.update({k: v for k, v in overrides.items() if v is not None})
    try:
        config = FitConfig.from_mapping(raw)
    except (ModelError, TypeError) as exc:
        raise CliError("E_CONFIG_INVALID", str(exc)) from exc
    if config.entry not in config.actions or config.exit not in config.actions:
        raise CliError("E_CONFIG_INVALID", f"entry/exit must be among actions {list(config.actions)}")
    return config, cli


def _read_samples(path: str) -> np.ndarray:
    try:
        df = pd.read_csv(path, encoding="utf-8")
    except Exception as exc:
        raise CliError("E_INPUT_INVALID", f"cannot parse {path}: {exc}") from exc
    for col in ("return", "x"):
        if col in df.columns:
            return df[col].to_numpy(dtype=float)
    numeric = df.select_dtypes("number").columns
    if len(numeric) == 1:
        return df[numeric[0]].to_numpy(dtype=float)
    raise CliError("E_INPUT_INVALID", f"{path} needs a 'return' or 'x' column")


def _load_returns(args, config: FitConfig) -> tuple[pd.DataFrame, list[str]]:
    if getattr(args, "returns", None):
        path = _require_file(args.returns, "returns file")
        try:
            return read_returns(path), [path]
        except InputError as exc:
            raise CliError("E_INPUT_INVALID", str(exc)) from exc
    path = _require_file(getattr(args, "prices", None), "prices file (--prices or --returns)")
    try:
        prices = read_prices(path)
        return compute_returns(prices, config.median_window), [path]
    except InputError as exc:
        raise CliError("E_INPUT_INVALID", str(exc)) from exc


def _grouping(args, cli_cfg: dict) -> PeriodGrouping:
    kind = args.grouping or cli_cfg.get("grouping") or "annual"
    try:
        return PeriodGrouping.from_config(kind, cli_cfg.get("terms"))
    except (ModelError, KeyError, ValueError) as exc:
        raise CliError("E_CONFIG_INVALID", f"bad grouping: {exc}") from exc


def _prior_vector(text: Optional[str]) -> Optional[list]:
    if text is None:
        return None
    try:
        values = json.loads(text) if text.strip().startswith("[") else [float(v) for v in text.split(",")]
        return validate_probability_vector(values).tolist()
    except (ValueError, ModelError) as exc:
        raise CliError("E_PARAMS_INVALID", f"bad prior vector {text!r}: {exc}") from exc


def _schedule(name: str, labels, config: FitConfig, cli_cfg: dict, vector=None):
    if name not in PRIOR_CHOICES and not name.startswith("extreme-"):
        raise CliError("E_USAGE", f"unknown prior {name!r}; choose from {', '.join(PRIOR_CHOICES)}")
    try:
        return schedule_from_name(name, labels, weight=config.extreme_weight,
                                  strength=config.adaptive_strength,
                                  observed=cli_cfg.get("adaptive_observed"),
                                  vector=vector or cli_cfg.get("prior_vector"))
    except ModelError as exc:
        raise CliError("E_CONFIG_INVALID", str(exc)) from exc


def _utility_kind(args, cli_cfg) -> str:
    return getattr(args, "utility", None) or cli_cfg.get("utility") or "binary"


def _write_fit(out: OutputTree, prefix: str, result) -> None:
    out.json(f"{prefix}.json", result.to_dict())
    frame = density_frame(result.model, result.densities)
    if result.diagnostics.kl_from_prior is not None:
        frame["kl_from_prior"] = result.diagnostics.kl_from_prior
    out.csv(f"{prefix}_densities.csv", frame)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_ingest(args) -> int:
    config, cli_cfg = _load_config(args)
    returns, inputs = _load_returns(args, config)
    grouping = _grouping(args, cli_cfg)
    try:
        groups = group_periods(returns, grouping)
    except ModelError as exc:
        raise CliError("E_INPUT_INVALID", str(exc)) from exc
    out = OutputTree(Path(args.out))
    frame = returns.assign(date=returns["date"].dt.strftime("%Y-%m-%d"))
    out.csv("returns.csv", frame)
    report = []
    for i, (label, samples) in enumerate(groups):
        out.csv(f"periods/{i:02d}_{_slug(label)}.csv", pd.DataFrame({"return": samples}))
        report.append({"period": label, "file": f"periods/{i:02d}_{_slug(label)}.csv",
                       "count": samples.size, "mean": float(np.mean(samples))})
    out.csv("grouping_report.csv", pd.DataFrame(report, columns=["period", "file", "count", "mean"]))
    out.manifest(args, {"grouping": grouping.kind, "median_window": config.median_window}, inputs)
    return 0


def cmd_fit(args) -> int:
    config, cli_cfg = _load_config(args)
    path = _require_file(args.samples, "samples file")
    samples = _read_samples(path)
    kind = _utility_kind(args, cli_cfg)
    labels = config.action_set(kind).labels
    name = args.prior or cli_cfg.get("prior") or "uniform"
    schedule = _schedule(name, labels, config, cli_cfg, _prior_vector(args.prior_vector))
    try:
        emp = build_empirical(samples, config.bins)
        prior = prior_for_period(schedule, BeliefHistory(), 0)
        result = fit(emp, prior, kind, config, period=args.label)
    except ModelError as exc:
        raise CliError("E_INPUT_INVALID", str(exc)) from exc
    out = OutputTree(Path(args.out))
    _write_fit(out, "result", result)
    out.manifest(args, {**config.to_dict(), "prior": name, "utility": kind}, [path])
    return 0


def cmd_rolling(args) -> int:
    config, cli_cfg = _load_config(args)
    returns, inputs = _load_returns(args, config)
    grouping = _grouping(args, cli_cfg)
    kind = _utility_kind(args, cli_cfg)
    labels = config.action_set(kind).labels
    names = [p.strip() for p in (args.prior or cli_cfg.get("prior") or "uniform").split(",") if p.strip()]
    schedules = [(name, _schedule(name, labels, config, cli_cfg, _prior_vector(args.prior_vector)))
                 for name in names]
    try:
        groups = group_periods(returns, grouping)
    except ModelError as exc:
        raise CliError("E_INPUT_INVALID", str(exc)) from exc
    periods = []
    for label, samples in groups:
        try:
            periods.append((label, build_empirical(samples, config.bins)))
        except ModelError as exc:
            # kept in place so period numbering and sequential priors see the gap
            periods.append((label, PeriodFitError(label, exc)))

    out = OutputTree(Path(args.out))
    summary = {label: {"period": label} for label, _ in periods}
    marginal_rows = []
    failures = 0
    for name, schedule in schedules:
        history = BeliefHistory()
        for i, (label, emp) in enumerate(periods):
            try:
                if isinstance(emp, PeriodFitError):
                    raise emp
                history, (result,) = rolling_fit([(label, emp)], schedule, kind, config, history=history)
            except PeriodFitError as exc:
                failures += 1
                logger.error("prior %s: %s", name, exc)
                summary[label][f"{name}_nll"] = None
                summary[label][f"{name}_explained_pct"] = None
                if schedule.sequential:
                    break
                continue
            _write_fit(out, f"{_slug(name)}/{i:02d}_{_slug(label)}", result)
            summary[label][f"{name}_nll"] = result.nll
            summary[label][f"{name}_explained_pct"] = result.explained_pct
            marginal_rows.append({"prior": name, "period": label,
                                  **{f"f_{a}": v for a, v in zip(labels, result.action_marginal)}})
        out.text(f"{_slug(name)}/history.jsonl", history.dumps())
    columns = ["period"] + [f"{n}_{m}" for n, _ in schedules for m in ("nll", "explained_pct")]
    out.csv("summary.csv", pd.DataFrame(list(summary.values()), columns=columns))
    table = pd.DataFrame({"period": [label for label, _ in periods]})
    for name, _ in schedules:
        table[name] = [_table_cell(summary[label], name) for label, _ in periods]
    out.csv("summary_table.csv", table)
    out.csv("marginals.csv", pd.DataFrame(marginal_rows, columns=["prior", "period"] + [f"f_{a}" for a in labels]))
    out.manifest(args, {**config.to_dict(), "grouping": grouping.kind, "priors": names, "utility": kind}, inputs)
    return 1 if failures else 0


def _table_cell(row: dict, name: str) -> str:
    nll, pct = row.get(f"{name}_nll"), row.get(f"{name}_explained_pct")
    if nll is None or pct is None:
        return "failed"
    return f"{nll:.0f} ({pct:.0f}%)"


def _params_from_args(args) -> EquilibriumParams:
    try:
        return EquilibriumParams(args.T, args.mu, args.rho, args.gamma, 0.0, args.mu2)
    except ModelError as exc:
        raise CliError("E_PARAMS_INVALID", str(exc)) from exc


def cmd_simulate(args) -> int:
    config, cli_cfg = _load_config(args)
    params = _params_from_args(args)
    if args.n < 0:
        raise CliError("E_PARAMS_INVALID", "n must be non-negative")
    lo, hi, npts = args.grid
    kind = "ternary" if args.mu2 is not None else "binary"
    actions = config.action_set(kind)
    name = args.prior or "uniform"
    schedule = _schedule(name, actions.labels, config, cli_cfg, _prior_vector(args.prior_vector))
    try:
        prior = prior_for_period(schedule, BeliefHistory(), 0)
        grid = Grid.uniform(lo, hi, int(npts))
        model = EquilibriumModel.build(params, grid, prior=prior, actions=actions, entry=config.entry,
                                       exit=config.exit, hold=config.hold if kind == "ternary" else None)
        density = marginal_density(model)
    except ModelError as exc:
        raise CliError("E_PARAMS_INVALID", str(exc)) from exc
    seed = config.seed
    x = sample_from_model(model, args.n, seed, density)
    out = OutputTree(Path(args.out))
    out.csv("samples.csv", pd.DataFrame({"x": x}))
    out.json("truth.json", {
        "params": params.to_dict(), "prior": prior.tolist(), "actions": list(actions.labels),
        "entry": config.entry, "exit": config.exit, "grid": grid.spec(), "n": args.n, "seed": seed,
        "model_mean": density.mean(), "model_sd": math.sqrt(density.central_moment(2)),
        "sample_mean": float(np.mean(x)) if x.size else None,
    })
    out.manifest(args, config.to_dict(), [])
    return 0


def _load_results(args) -> list[tuple[str, dict]]:
    paths: list[tuple[str, Path]] = []
    if args.run:
        root = Path(args.run)
        if not root.is_dir():
            raise CliError("E_RESULT_NOT_FOUND", f"run directory {root} does not exist")
        for p in sorted(root.glob("*/*.json")):
            paths.append((p.parent.name, p))
        for p in sorted(root.glob("result.json")):
            paths.append(("", p))
    for r in args.result or []:
        if not Path(r).is_file():
            raise CliError("E_RESULT_NOT_FOUND", f"result file {r} does not exist")
        paths.append(("", Path(r)))
    if not paths:
        raise CliError("E_RESULT_NOT_FOUND", "no fit results given (--result or --run)")
    results = []
    for group, p in paths:
        try:
            results.append((group, json.loads(p.read_text(encoding="utf-8"))))
        except json.JSONDecodeError as exc:
            raise CliError("E_INPUT_INVALID", f"{p}: {exc}") from exc
    return results


def cmd_plotdata(args) -> int:
    results = _load_results(args)
    fx, decision, joint, marginals = [], [], [], []
    for group, d in results:
        model = model_from_dict(d)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", SupportTruncated)
            density = marginal_density(model)
        if caught:
            # fitted grids span the data, so edge mass is expected; report once per result
            logger.info("%s %s: %s", group or "result", d.get("period") or "", caught[0].message)
        cond = conditional_table(model)
        labels = model.ctx.actions.labels
        key = {"prior": group, "period": d.get("period") or ""}
        x = model.grid.points
        fx.append(pd.DataFrame({**key, "x": x, "f_x": density.values}))
        decision.append(pd.DataFrame({**key, "x": x, **{f"f_{a}_given_x": cond[i] for i, a in enumerate(labels)}}))
        joint.append(pd.DataFrame({**key, "x": x,
                                   **{f"f_joint_{a}": cond[i] * density.values for i, a in enumerate(labels)}}))
        marginals.append({**key, **{f"f_{a}": v for a, v in zip(labels, d["action_marginal"])}})
    out = OutputTree(Path(args.out))
    out.csv("fx.csv", pd.concat(fx, ignore_index=True))
    out.csv("decision.csv", pd.concat(decision, ignore_index=True))
    out.csv("joint.csv", pd.concat(joint, ignore_index=True))
    out.csv("marginals.csv", pd.DataFrame(marginals))
    inputs = [args.run] if args.run else list(args.result)
    out.manifest(args, None, inputs)
    return 0


def cmd_decide(args) -> int:
    config, cli_cfg = _load_config(args)
    kind = "ternary" if args.mu2 is not None else "binary"
    actions = config.action_set(kind)
    vector = _prior_vector(args.prior_vector)
    try:
        prior = vector if vector is not None else np.full(actions.size, 1.0 / actions.size)
        entry = actions.index(config.entry)
        if kind == "binary":
            utility = UtilityModel.binary(args.mu, entry=entry)
        else:
            utility = UtilityModel.ternary(args.mu, args.mu2, entry=entry, hold=actions.index(config.hold))
        ctx = DecisionContext(actions, prior, utility, args.T)
        rows = []
        for x in args.x:
            f = decision_probabilities(ctx, x)
            row = {"x": x, **{f"f_{a}_given_x": float(v) for a, v in zip(actions.labels, f)},
                   "entropy": conditional_entropy(ctx, x)}
            if np.all(ctx.prior > 0):
                row["kl_from_prior"] = kl_from_prior(ctx, x)
            rows.append(row)
    except ModelError as exc:
        raise CliError("E_PARAMS_INVALID", str(exc)) from exc
    print(json.dumps(_clean({"actions": list(actions.labels), "prior": list(map(float, prior)),
                             "T": args.T, "rows": rows}), indent=2))
    return 0


def cmd_ri(args) -> int:
    try:
        payoffs = json.loads(args.payoffs)
        weights = json.loads(args.state_weights) if args.state_weights else None
    except json.JSONDecodeError as exc:
        raise CliError("E_PARAMS_INVALID", f"payoffs/state weights must be JSON: {exc}") from exc
    try:
        n_states = len(payoffs[0])
        weights = weights or [1.0 / n_states] * n_states
        problem = RiProblem.from_table(payoffs, weights, args.T)
        solution = solve_ri(problem, args.tol, args.max_iter)
    except (ModelError, TypeError, IndexError) as exc:
        raise CliError("E_PARAMS_INVALID", str(exc)) from exc
    text = json.dumps(_clean(solution.to_dict(problem)), indent=2)
    if args.out:
        out = OutputTree(Path(args.out))
        out.text("ri.json", text + "\n")
        out.manifest(args, {"T": args.T, "tol": args.tol, "max_iter": args.max_iter}, [])
    else:
        print(text)
    return 0 if solution.converged else 1


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qrse-priors",
                                     description="Fit prior-weighted QRSE models to outcome distributions.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--entry", help="entry action label (default buy)")
        p.add_argument("--exit", help="exit action label (default sell)")
        p.add_argument("--out", required=out_required, help="output directory")

    def data_inputs(p):
        p.add_argument("--prices", help="CSV with columns date,area,price")
        p.add_argument("--returns", help="CSV with columns date,area,return")
        p.add_argument("--grouping", choices=GROUPING_KINDS)
        p.add_argument("--median-window", type=int, help="rolling median window in months")

    def model_params(p):
        p.add_argument("--T", type=float, required=True)
        p.add_argument("--mu", type=float, required=True)
        p.add_argument("--mu2", type=float, help="sell/hold indifference point (three actions)")

    p = sub.add_parser("ingest", help="prices -> grouped quarterly returns")
    common(p)
    data_inputs(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("fit", help="fit one sample file")
    common(p)
    p.add_argument("--samples", required=True)
    p.add_argument("--prior", help=f"one of {', '.join(PRIOR_CHOICES)}")
    p.add_argument("--prior-vector", help="explicit prior for --prior fixed, e.g. 0.7,0.3")
    p.add_argument("--utility", choices=("binary", "ternary"))
    p.add_argument("--bins", type=int)
    p.add_argument("--label", help="period label stored in the result")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("rolling", help="fit every period under one or more prior schedules")
    common(p)
    data_inputs(p)
    p.add_argument("--prior", help="comma-separated schedules, e.g. uniform,previous,mean")
    p.add_argument("--prior-vector")
    p.add_argument("--utility", choices=("binary", "ternary"))
    p.add_argument("--bins", type=int)
    p.set_defaults(func=cmd_rolling)

    p = sub.add_parser("simulate", help="draw synthetic outcomes from a model")
    common(p)
    model_params(p)
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--prior")
    p.add_argument("--prior-vector")
    p.add_argument("--grid", type=float, nargs=3, default=(-10.0, 10.0, 2001), metavar=("LO", "HI", "N"))
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("plotdata", help="x-indexed CSVs for plotting fitted results")
    p.add_argument("--result", nargs="+", help="fit result JSON files")
    p.add_argument("--run", help="output directory of a rolling run")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plotdata)

    p = sub.add_parser("decide", help="evaluate decision probabilities")
    common(p, out_required=False)
    model_params(p)
    p.add_argument("--prior-vector")
    p.add_argument("--x", type=float, nargs="+", required=True)
    p.set_defaults(func=cmd_decide)

    p = sub.add_parser("ri", help="rational-inattention fixed point")
    p.add_argument("--payoffs", required=True, help="JSON payoff table [action][state]")
    p.add_argument("--state-weights", help="JSON state probabilities (default uniform)")
    p.add_argument("--T", type=float, required=True)
    p.add_argument("--tol", type=float, default=1e-12)
    p.add_argument("--max-iter", type=int, default=10_000)
    p.add_argument("--out")
    p.set_defaults(func=cmd_ri)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        message = " ".join(str(exc).split())
        print(f"error: {exc.code}: {message}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
