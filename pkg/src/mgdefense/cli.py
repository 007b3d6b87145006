"""Command-line interface: ``mgdefense {run,sweep,validate,dump}``.

Divergence of a run is a reported result (exit 0); configuration errors exit 2.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import analysis
from .attacks import NotSmoothEnough, certify_assumption2
from .engine import SERIES, plan_epochs, run
from .scenario import (ConfigError, UnknownPreset, apply_overrides, dump_scenario, from_dict,
                       parse_documents, parse_override, parse_scenarios, preset, preset_names, to_dict)
from .topology import follower_reachability

OUT_ENV = "MGDEFENSE_OUT"
EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG = 0, 1, 2


# --------------------------------------------------------------------------- scenario sources


def _source_docs(args) -> tuple[list[dict], str]:
    """Raw scenario documents from --preset or --scenario, before overrides."""
    if bool(args.preset) == bool(args.scenario):
        raise ConfigError("give exactly one of --preset or --scenario")
    if args.preset:
        cfg = preset(args.preset)
        cfgs = cfg if isinstance(cfg, list) else [cfg]
        return [to_dict(c) for c in cfgs], f"preset:{args.preset}"
    path = Path(args.scenario)
    if not path.is_file():
        raise ConfigError(f"scenario file {path} not found")
    return parse_documents(path.read_text(), str(path)), str(path)


def _overrides(args) -> list[str]:
    out = list(args.set or [])
    if getattr(args, "dt", None) is not None:
        out.append(f"solver.dt={args.dt!r}")
    if getattr(args, "t_end", None) is not None:
        out.append(f"solver.t_end={args.t_end!r}")
    for item in out:
        parse_override(item)
    return out


def _load(args):
    """(configs, docs, source, overrides); parse errors carry file:line:col when known."""
    docs, source = _source_docs(args)
    overrides = _overrides(args)
    cfgs, resolved = [], []
    if args.scenario:
        text = Path(args.scenario).read_text()
        for cfg, doc in parse_scenarios(text, args.scenario, overrides):
            cfgs.append(cfg)
            resolved.append(doc)
    else:
        for doc in docs:
            doc = apply_overrides(doc, overrides)
            cfgs.append(from_dict(doc))
            resolved.append(doc)
    return cfgs, resolved, source, overrides


def _out_root(args) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get(OUT_ENV, "runs"))


# --------------------------------------------------------------------------- writers


def _fmt(x: float) -> str:
    return "%.9g" % x


def write_table(path: Path, header: list[str], rows: np.ndarray) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(x) for x in row))
    path.write_text("\n".join(lines) + "\n")


def trace_table(trace) -> tuple[list[str], np.ndarray]:
    n = trace.n
    header = ["time"] + [f"{name}_{i + 1}" for name in SERIES for i in range(n)]
    cols = [trace.time[:, None]] + [trace[name] for name in SERIES]
    return header, np.hstack(cols)


def metrics_rows(trace) -> tuple[list[str], np.ndarray]:
    m = analysis.metrics_table(trace)
    header = ["time", *analysis.METRIC_COLUMNS]
    return header, np.column_stack([trace.time] + [m[c] for c in analysis.METRIC_COLUMNS])


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


def write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(_clean(data), indent=2, sort_keys=True, allow_nan=False) + "\n")


def execute(doc: dict, out_dir: str, emit: dict, meta: dict) -> dict:
    """Run one resolved scenario document and write its artifacts; returns the summary."""
    cfg = from_dict(doc)
    trace = run(cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summ = analysis.summary(trace)
    summ.update(meta)
    artifacts = []
    if emit.get("trace", True):
        write_table(out / "trace.csv", *trace_table(trace))
        artifacts.append("trace.csv")
    if emit.get("metrics", True):
        write_table(out / "metrics.csv", *metrics_rows(trace))
        artifacts.append("metrics.csv")
    (out / "scenario.yaml").write_text(dump_scenario(cfg))
    artifacts.append("scenario.yaml")
    if emit.get("summary", True):
        artifacts.append("summary.json")
        summ["artifacts"] = artifacts
        write_json(out / "summary.json", summ)
    summ["artifacts"] = artifacts
    return summ


# --------------------------------------------------------------------------- commands


def cmd_run(args) -> int:
    cfgs, docs, source, overrides = _load(args)
    root = _out_root(args)
    emit = {"trace": not args.no_trace, "metrics": not args.no_metrics, "summary": not args.no_summary}
    for cfg, doc in zip(cfgs, docs):
        out = root / cfg.name if len(cfgs) > 1 or not args.out else root
        summ = execute(doc, str(out), emit, {"source": source, "overrides": overrides})
        state = summ["status"]
        extra = f" at t = {summ['diverged_at']:.6g} s" if summ.get("diverged_at") is not None else ""
        print(f"{cfg.name}: {state}{extra} -> {out}")
    return EXIT_OK


def _sweep_row(job):
    value, doc, out_dir, meta = job
    row = {"value": value, "status": None, "bound_e_f": None, "bound_e_f_hz": None, "bound_e_v": None,
           "tail_freq_dev_hz": None, "diverged_at": None, "error": None}
    try:
        from_dict(doc)
    except (ConfigError, ValueError) as exc:
        row["status"] = "invalid"
        row["error"] = str(exc)
        return row
    try:
        summ = execute(doc, out_dir, {"trace": True, "metrics": True, "summary": True}, meta)
    except Exception as exc:  # keep the other rows
        row["status"] = "error"
        row["error"] = f"{type(exc).__name__}: {exc}"
        return row
    row["status"] = summ["status"]
    row["diverged_at"] = summ.get("diverged_at")
    bounds = summ.get("ultimate_bounds") or {}
    row["bound_e_f"] = bounds.get("e_f")
    row["bound_e_f_hz"] = bounds.get("e_f_hz")
    row["bound_e_v"] = bounds.get("e_v")
    row["tail_freq_dev_hz"] = (summ.get("tail") or {}).get("freq_dev_hz_max")
    return row


def _sort_key(row):
    v = row["value"]
    return (0, v, "") if isinstance(v, (int, float)) else (1, 0.0, str(v))


def cmd_sweep(args) -> int:
    cfgs, docs, source, overrides = _load(args)
    if len(docs) != 1:
        raise ConfigError("sweep needs a single base scenario")
    base = docs[0]
    apply_overrides(base, [(args.param, None)])  # path must exist
    values = [parse_override(f"x={v}")[1] for v in args.values]
    root = _out_root(args)
    jobs = []
    for v in values:
        doc = apply_overrides(base, [(args.param, v)])
        doc["name"] = f"{base.get('name', 'scenario')}_{args.param}={v}"
        meta = {"source": source, "overrides": overrides + [f"{args.param}={v}"]}
        jobs.append((v, doc, str(root / f"{args.param}={v}"), meta))
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_sweep_row, jobs))
    else:
        rows = [_sweep_row(j) for j in jobs]
    rows.sort(key=_sort_key)
    root.mkdir(parents=True, exist_ok=True)
    cols = ["value", "status", "bound_e_f", "bound_e_f_hz", "bound_e_v", "tail_freq_dev_hz", "diverged_at", "error"]
    lines = [",".join(cols)]
    for r in rows:
        cells = []
        for c in cols:
            v = r[c]
            if v is None:
                cells.append("")
            elif isinstance(v, float):
                cells.append(_fmt(v))
            else:
                cells.append(str(v).replace(",", ";").replace("\n", " "))
        lines.append(",".join(cells))
    (root / "sweep.csv").write_text("\n".join(lines) + "\n")
    bounds = [r["bound_e_f"] for r in rows]
    decreasing = (all(b is not None for b in bounds) and len(bounds) >= 2
                  and all(a > b for a, b in zip(bounds, bounds[1:])))
    write_json(root / "sweep.json", {"parameter": args.param, "source": source, "rows": rows,
                                     "bounds_strictly_decreasing": decreasing})
    print("\n".join(lines))
    return EXIT_OK


def validation_report(doc: dict) -> list[tuple[str, bool, str]]:
    """(check, passed, detail) rows for one raw scenario document."""
    checks: list[tuple[str, bool, str]] = []
    ctrl = doc.get("controller", {}) if isinstance(doc, dict) else {}
    for key in ("c_f", "c_v", "beta_f", "beta_v", "alpha_f", "alpha_v"):
        vals = np.atleast_1d(np.asarray(ctrl.get(key, 1.0), dtype=float))
        ok = bool(np.all(vals > 0))
        checks.append((f"gain {key} > 0", ok, "" if ok else f"values {vals.tolist()}"))
    for key in ("chi_f0", "chi_v0"):
        vals = np.atleast_1d(np.asarray(ctrl.get(key, 0.01), dtype=float))
        ok = bool(np.all(vals > 0))
        checks.append((f"initial {key} > 0", ok, "" if ok else f"values {vals.tolist()}"))
    try:
        cfg = from_dict(doc)
    except (ConfigError, ValueError) as exc:
        checks.append(("configuration", False, str(exc)))
        return checks
    try:
        epochs, _ = plan_epochs(cfg)
    except ConfigError as exc:
        checks.append(("event schedule", False, str(exc)))
        return checks
    for ep in epochs:
        label = "initial topology" if ep.step == 0 and ep is epochs[0] else f"topology from t = {ep.step * cfg.dt:.6g} s"
        lost = [int(i) + 1 for i in np.flatnonzero(~follower_reachability(ep.graph))]
        checks.append((f"leader reachability ({label})", not lost,
                       "" if not lost else f"followers {lost} unreachable from every leader"))
    gamma = cfg.controller.gamma
    for k, sig in enumerate(cfg.attacks):
        name = f"attack derivative bound (attack {k + 1}: inverter {sig.inverter + 1}, {sig.channel}, gamma = {gamma})"
        try:
            b = certify_assumption2(sig, gamma, cfg.t_end)
        except NotSmoothEnough as exc:
            checks.append((name, False, str(exc)))
            continue
        detail = f"kappa = {b.kappa:.6g} on the horizon"
        if not b.bounded:
            detail += f"; derivative of order {gamma} grows without bound"
        checks.append((name, b.satisfied, detail))
    return checks


def cmd_validate(args) -> int:
    docs, source = _source_docs(args)
    overrides = _overrides(args)
    failed = False
    for k, doc in enumerate(docs):
        doc = apply_overrides(doc, overrides)
        print(f"scenario {doc.get('name', k + 1)} ({source})")
        for name, ok, detail in validation_report(doc):
            failed |= not ok
            print(f"  [{'PASS' if ok else 'FAIL'}] {name}" + (f": {detail}" if detail else ""))
    print("all checks passed" if not failed else "some checks failed")
    return EXIT_CHECK_FAILED if failed else EXIT_OK


def cmd_dump(args) -> int:
    cfg = preset(args.preset)
    text = dump_scenario(cfg)
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mgdefense", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def source(sp):
        sp.add_argument("--preset", choices=preset_names(), help="named scenario")
        sp.add_argument("--scenario", help="YAML scenario file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a dotted config path (repeatable)")
        sp.add_argument("--dt", type=float, help="shorthand for --set solver.dt=...")
        sp.add_argument("--t-end", type=float, help="shorthand for --set solver.t_end=...")

    r = sub.add_parser("run", help="simulate and write trace.csv, metrics.csv, summary.json")
    source(r)
    r.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./runs, per scenario name)")
    r.add_argument("--no-trace", action="store_true")
    r.add_argument("--no-metrics", action="store_true")
    r.add_argument("--no-summary", action="store_true")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="one run per parameter value and a joint bound table")
    source(s)
    s.add_argument("--param", default="controller.beta_f", help="dotted config path to vary")
    s.add_argument("--values", nargs="+", required=True)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("validate", help="check assumptions and gains without simulating")
    source(v)
    v.set_defaults(func=cmd_validate)

    d = sub.add_parser("dump", help="write a preset as an editable YAML scenario")
    d.add_argument("--preset", required=True, choices=preset_names())
    d.add_argument("--out")
    d.set_defaults(func=cmd_dump)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, UnknownPreset) as exc:
        msg = exc.args[0] if isinstance(exc, UnknownPreset) else str(exc)
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
