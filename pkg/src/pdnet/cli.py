"""Command line entry point: generate-graph, run, sweep, verify.

All commands are driven by the flat dotted-key config (file plus --set
overrides). Every run directory receives a manifest that reproduces the
run exactly; traces are CSV, reference optima are cached by problem hash
under the output root. Exit codes: 0 success, 1 verification failure,
2 configuration error, 3 runtime divergence.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, config as cfgmod, engine, metrics, problems, verify
from .config import ConfigError
from .engine import EngineError
from .graphs import GraphError, WeightMatrixError, spectral_gap
from .problems import ProblemError, ReferenceError

OUTPUT_ROOT_ENV = "PDNET_OUTPUT_ROOT"

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3

_CONFIG_ERRORS = (ConfigError, GraphError, WeightMatrixError, ProblemError,
                  EngineError, ReferenceError, OSError)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key=value configuration file")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one configuration key (repeatable)")
    parser.add_argument("--out", help="output directory (overrides output_dir)")
    parser.add_argument("--threads", type=int, default=1,
                        help="parallel sweep legs (processes)")
    parser.add_argument("--record-every", type=int, default=None,
                        help="metric sampling stride override")


def _load_config(args) -> dict:
    entries = cfgmod.read_config_file(args.config) if args.config else {}
    config = cfgmod.parse_config(entries)
    config = cfgmod.apply_overrides(config, args.set)
    if args.out:
        config["output_dir"] = args.out
    if args.record_every is not None:
        config["run.record_every"] = int(args.record_every)
    return config


def _output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "."))


def _resolve_out_dir(config: dict) -> Path:
    out = Path(str(config["output_dir"]))
    return out if out.is_absolute() else _output_root() / out


def _float_csv(values) -> str:
    return ",".join(repr(float(v)) for v in values)


# ---------------------------------------------------------------------------
# generate-graph
# ---------------------------------------------------------------------------

def cmd_generate_graph(args) -> int:
    config = _load_config(args)
    g = cfgmod.build_graph(config)
    w = cfgmod.build_weights(config, g)
    out_dir = _resolve_out_dir(config)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "graph_edges.txt").write_text(g.to_edgelist_text())
    (out_dir / "weight_matrix.csv").write_text(w.to_csv_text())
    gap = spectral_gap(w)
    report = {
        "family": config["graph.family"],
        "scheme": config["weights.scheme"],
        "n": g.n,
        "edge_count": len(g.edges),
        "sigma2": w.sigma2,
        "spectral_gap": gap,
        "bound_71n2": 71.0 * g.n ** 2,
        "bound_margin": 71.0 * g.n ** 2 - 1.0 / gap if gap > 0 else float("-inf"),
    }
    (out_dir / "spectral_report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(f"graph written to {out_dir} (n={g.n}, edges={len(g.edges)}, "
          f"gap={gap:.6g})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

def _reference_for(config: dict, p: problems.ProblemSpec) -> problems.ReferenceSolution:
    key = cfgmod.reference_cache_key(config)
    digest = hashlib.sha256(
        json.dumps(key, sort_keys=True).encode()).hexdigest()[:24]
    cache_dir = _output_root() / "refcache"
    cache_file = cache_dir / f"{digest}.json"
    if cache_file.exists():
        return problems.ReferenceSolution.from_json_dict(
            json.loads(cache_file.read_text()))
    ref = problems.reference_optimum(p, iterations=int(config["reference.iterations"]),
                                     seed=int(config["reference.seed"]))
    cache_dir.mkdir(parents=True, exist_ok=True)
    payload = dict(ref.to_json_dict(), problem=key)
    cache_file.write_text(json.dumps(payload, sort_keys=True) + "\n")
    return ref


def _write_xhat(path: Path, trace: engine.Trace) -> None:
    avg = trace.final_states.averages()
    dim = trace.final_states.x.shape[1]
    header = "agent," + ",".join(f"x_{k + 1}" for k in range(dim))
    lines = [header]
    if avg is not None:
        lines += [f"{i}," + _float_csv(row) for i, row in enumerate(avg)]
    path.write_text("\n".join(lines) + "\n")


def execute_run(config: dict, out_dir: Path) -> engine.Trace:
    """Build everything from a config, run, and persist all artifacts."""
    p = cfgmod.build_problem(config)
    ref = _reference_for(config, p)
    centralized = config["run.variant"] == engine.CENTRALIZED_UNREGULARIZED
    run_cfg = cfgmod.build_run_config(config)

    if centralized:
        graph_info = {"family": None, "nodes": 1, "edges": 0, "sigma2": 0.0}
        trace = engine.run_centralized_unregularized(p, run_cfg, reference=ref)
    else:
        g = cfgmod.build_graph(config)
        if g.n != p.n_agents:
            raise ConfigError(
                f"graph has {g.n} nodes but the problem has {p.n_agents} agents")
        w = cfgmod.build_weights(config, g)
        graph_info = {"family": config["graph.family"], "nodes": g.n,
                      "edges": len(g.edges), "sigma2": w.sigma2}
        trace = engine.run(p, w, run_cfg, reference=ref)

    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "trace.csv").write_text(trace.to_csv_text())
    _write_xhat(out_dir / "xhat.csv", trace)
    (out_dir / "reference.json").write_text(
        json.dumps(ref.to_json_dict(), sort_keys=True) + "\n")
    horizon = int(config["run.T"])
    fits = {}
    for column in ("eps", "violation_sq"):
        try:
            fit = metrics.rate_fit(trace, column,
                                   (max(10, horizon // 100), horizon))
            fits[column] = {"exponent": fit.exponent, "r2": fit.r2}
        except metrics.MetricError:
            fits[column] = None
    manifest = {
        "package_version": __version__,
        "config": config,
        "derived": {
            "graph": graph_info,
            "resolved_eta": trace.config.eta,
            "resolved_step_scale": trace.config.step_scale,
            "f_star": ref.f_star,
            "reference_residual": ref.residual,
            "aborted": trace.aborted,
            "warnings": trace.warnings,
            "rate_fits": fits,
        },
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return trace


def cmd_run(args) -> int:
    config = _load_config(args)
    out_dir = _resolve_out_dir(config)
    trace = execute_run(config, out_dir)
    last = trace.records[-1]
    print(f"run complete: t={last.t} eps_G={last.eps:.6g} "
          f"delta_G={last.delta:.6g} violation_sq={last.violation_sq:.6g} "
          f"-> {out_dir}")
    if trace.aborted:
        print(f"run aborted: {trace.aborted}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

SWEEP_PARAMS = ("eta", "n", "T", "graph.family", "variant", "r")


def _apply_sweep_value(config: dict, param: str, raw: str) -> dict:
    out = dict(config)
    if param in ("eta", "run.eta"):
        out["run.eta"] = float(raw)
    elif param == "n":
        out["problem.n"] = int(raw)
        out["graph.n"] = int(raw)
    elif param in ("T", "run.T"):
        out["run.T"] = int(raw)
    elif param == "graph.family":
        out["graph.family"] = str(raw)
    elif param in ("variant", "run.variant"):
        out["run.variant"] = str(raw)
    elif param == "r":
        out["run.eta"] = float(out["run.T"]) ** (-float(raw))
    else:
        raise ConfigError(f"sweep parameter must be one of {SWEEP_PARAMS}")
    return out


def _leg_summary(param: str, value: str, config: dict,
                 out_dir: Path) -> dict[str, object]:
    row: dict[str, object] = {"param": param, "value": value,
                              "dir": out_dir.name, "status": "ok"}
    try:
        trace = execute_run(config, out_dir)
        if trace.aborted:
            row["status"] = f"diverged: {trace.aborted}"
        last = trace.records[-1]
        row["eps_final"] = last.eps
        row["delta_final"] = last.delta
        row["violation_final"] = last.violation_sq
        horizon = int(config["run.T"])
        window = (max(10, horizon // 100), horizon)
        for column, key in (("eps", "eps_rate"), ("violation_sq", "viol_rate")):
            try:
                row[key] = metrics.rate_fit(trace, column, window).exponent
            except metrics.MetricError:
                row[key] = float("nan")
    except _CONFIG_ERRORS as exc:
        row["status"] = f"error: {exc}"
        for key in ("eps_final", "delta_final", "violation_final",
                    "eps_rate", "viol_rate"):
            row[key] = float("nan")
    return row


def _run_leg(packed):
    param, value, config, out_dir = packed
    return _leg_summary(param, value, config, Path(out_dir))


def cmd_sweep(args) -> int:
    config = _load_config(args)
    values = [v for v in (args.values.split(",") if args.values else []) if v]
    if args.param not in SWEEP_PARAMS and args.param not in (
            "run.eta", "run.T", "run.variant"):
        raise ConfigError(f"sweep parameter must be one of {SWEEP_PARAMS}")
    if not values:
        raise ConfigError("sweep needs a nonempty --values list")
    base_dir = _resolve_out_dir(config)
    base_dir.mkdir(parents=True, exist_ok=True)

    legs = []
    for value in values:
        leg_config = _apply_sweep_value(config, args.param, value)
        leg_dir = base_dir / f"leg_{args.param.replace('.', '_')}_{value}"
        leg_config["output_dir"] = str(leg_dir)
        legs.append((args.param, value, leg_config, str(leg_dir)))

    # warm the reference cache sequentially so parallel legs only read it
    for _, _, leg_config, _ in legs:
        try:
            _reference_for(leg_config, cfgmod.build_problem(leg_config))
        except _CONFIG_ERRORS:
            pass  # the leg will report the failure in its summary row

    if args.threads > 1:
        with concurrent.futures.ProcessPoolExecutor(args.threads) as pool:
            rows = list(pool.map(_run_leg, legs))
    else:
        rows = [_run_leg(leg) for leg in legs]

    columns = ("param", "value", "dir", "status", "eps_final", "delta_final",
               "violation_final", "eps_rate", "viol_rate")
    lines = [",".join(columns)]
    for row in rows:
        rendered = []
        for col in columns:
            val = row.get(col, "")
            if isinstance(val, float):
                rendered.append(repr(val))
            else:
                rendered.append(str(val).replace(",", ";"))
        lines.append(",".join(rendered))
    (base_dir / "summary.csv").write_text("\n".join(lines) + "\n")
    print(f"sweep complete: {len(rows)} legs -> {base_dir / 'summary.csv'}")
    failed = [r for r in rows if r["status"] != "ok"]
    for row in failed:
        print(f"  leg {row['value']}: {row['status']}", file=sys.stderr)
    return EXIT_OK if not failed else EXIT_DIVERGED


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------

def cmd_verify(args) -> int:
    results = verify.full_checks() if args.level == "full" else verify.quick_checks()
    width = max(len(r.name) for r in results)
    failures = 0
    for r in results:
        status = "PASS" if r.ok else "FAIL"
        line = f"{r.name:<{width}}  {status}"
        if r.detail:
            line += f"  ({r.detail})"
        print(line)
        failures += 0 if r.ok else 1
    print(f"{len(results) - failures}/{len(results)} checks passed")
    return EXIT_OK if failures == 0 else EXIT_VERIFY_FAILED


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pdnet",
        description="Distributed regularized primal-dual experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_graph = sub.add_parser("generate-graph",
                             help="write edge list, weights, spectral report")
    _add_common(p_graph)
    p_graph.set_defaults(func=cmd_generate_graph)

    p_run = sub.add_parser("run", help="execute one configured run")
    _add_common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run one leg per parameter value")
    _add_common(p_sweep)
    p_sweep.add_argument("--param", required=True,
                         help=f"one of {', '.join(SWEEP_PARAMS)}")
    p_sweep.add_argument("--values", required=True,
                         help="comma separated value list")
    p_sweep.set_defaults(func=cmd_sweep)

    p_verify = sub.add_parser("verify", help="run invariant/theory suites")
    _add_common(p_verify)
    p_verify.add_argument("level", choices=("quick", "full"), nargs="?",
                          default="quick")
    p_verify.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
