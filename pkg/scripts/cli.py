"""
Command-line entry point.

  python scripts/cli.py run configs/fig1.json [--set key=value ...] [--out DIR] [--workers N]
  python scripts/cli.py weak --pre spin:0.5:90:0 --post spin:0.5:90:90 --op sigma:90:45
  python scripts/cli.py protective --state box:1 --bins 32 --out outputs/protective
  python scripts/cli.py tsvf-pointer --case spin:0.5:45:plane --delta 5 10 20 --out outputs/pointer
  python scripts/cli.py stats outputs/fig3_ensemble

Exit codes: 0 success, 2 validation, 3 numerical guard, 4 I/O.
"""
from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd

import runio
from errors import ConfigError, exit_code_for
from protective import ProtectiveConfig, reconstruct_density
from qfield import eigenstate_from_dict
from runio import RunManifest, log
from runners import idealized_agreement, run_scenario
from scenarios import classify_outcomes, load_config, save_report, side_counts
from tsvf import (
    DEFAULT_DPS,
    PointerModel,
    TwoStateVector,
    limit_deviation,
    parse_operator_spec,
    parse_state_spec,
    pointer_final_state,
    pointer_mean,
    pointer_state_from_moments,
    postselection_probability,
    prepost_position_states,
    spin_weak_case,
    weak_limit_gaussian,
    weak_value,
)

HIST_BINS = 22


# ------------------------------------------------------------------ helpers

def parse_case(spec: str):
    """'spin:j:theta_deg[:aligned|plane]' or 'position:N:theta_deg[:sigma]' -> (tsv, operator)."""
    parts = spec.split(":")
    try:
        if parts[0] == "spin" and len(parts) in (3, 4):
            frame = parts[3] if len(parts) == 4 else "aligned"
            return spin_weak_case(float(parts[1]), math.radians(float(parts[2])), frame)
        if parts[0] == "position" and len(parts) in (3, 4):
            N = int(parts[1])
            sigma = float(parts[3]) if len(parts) == 4 else (2.0 / N) / 10.0
            pp = prepost_position_states(N, math.radians(float(parts[2])), sigma)
            return pp.tsv, pp.X
    except ValueError as e:
        raise ConfigError(f"bad case spec {spec!r}: {e}") from e
    raise ConfigError(f"unknown case spec {spec!r}; use spin:j:theta[:frame] or position:N:theta[:sigma]")


def _weak_inputs(args):
    if args.case:
        return parse_case(args.case)
    if not (args.pre and args.post and args.op):
        raise ConfigError("give --case, or all of --pre, --post and --op")
    tsv = TwoStateVector(parse_state_spec(args.pre), parse_state_spec(args.post), args.dps)
    return tsv, parse_operator_spec(args.op)


def parse_eigenstate(spec: str):
    """'box:n[:L]', 'harmonic:n[:omega]', or a JSON object / path to one."""
    parts = spec.split(":")
    if parts[0] in ("box", "harmonic"):
        try:
            d = {"potential": parts[0], "quantum_number": int(parts[1])}
            if len(parts) > 2:
                d["L" if parts[0] == "box" else "omega"] = float(parts[2])
        except (IndexError, ValueError) as e:
            raise ConfigError(f"bad state spec {spec!r}: {e}") from e
        return eigenstate_from_dict(d)
    p = Path(spec)
    data = runio.read_json(p) if p.exists() else runio.parse_value(spec)
    if not isinstance(data, dict):
        raise ConfigError(f"bad state spec {spec!r}")
    return eigenstate_from_dict(data)


def write_error(exc: BaseException, out_dir: Optional[Path]) -> int:
    code = exit_code_for(exc)
    record = exc.record() if hasattr(exc, "record") else {
        "error": type(exc).__name__, "message": str(exc), "exit_code": code}
    log(f"[error] {record['message']}")
    print(runio.dumps(record), file=sys.stderr, flush=True)
    if out_dir is not None and out_dir.is_dir():
        runio.write_json(out_dir / "error.json", record)
    return code


# ------------------------------------------------------------------ stats

def aggregate_run(run_dir: Path, bins: int = HIST_BINS) -> dict:
    """Re-aggregate the outcome table of an ensemble run directory."""
    path = run_dir / "outcomes.csv"
    if not path.exists():
        raise ConfigError(f"{run_dir} has no outcomes.csv; not an ensemble run directory")
    df = classify_outcomes(pd.read_csv(path))
    ok = df[~df["halted"]]
    stats = {"n": int(len(df)), "n_halted": int(df["halted"].sum()), "counts": side_counts(df)}
    by_final = ok.groupby("final_side")["started_side"].apply(lambda s: float((s == "right").mean()))
    for side, frac in by_final.items():
        stats[f"final_{side}_started_right"] = frac
        stats[f"final_{side}_n"] = int((ok["final_side"] == side).sum())
    if "q_end" in df.columns:
        sel = ok[ok["final_side"] == "right"]
        if len(sel):
            lo, hi = float(ok["q_end"].min()), float(ok["q_end"].max())
            hist, edges = np.histogram(sel["q_end"], bins=bins, range=(lo, hi), density=True)
            stats["pointer_hist_final_right"] = {"edges": edges.tolist(), "density": hist.tolist()}
    if "gradient" in df.columns and "agrees" in df.columns:
        judged = ok[~ok["marginal"].astype(bool)]
        stats["agreement"] = float(judged["agrees"].astype(bool).mean()) if len(judged) else float("nan")
    return stats


def write_stats(run_dir: Path) -> dict:
    stats = aggregate_run(run_dir)
    runio.write_json(run_dir / "stats.json", stats)
    lines = ["STATS SUMMARY"]
    for k, v in stats.items():
        if isinstance(v, dict) and k == "counts":
            lines.extend(f"{kk}={vv}" for kk, vv in v.items())
        elif not isinstance(v, dict):
            lines.append(f"{k}={runio.fmt(v)}")
    (run_dir / "stats_summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return stats


# ------------------------------------------------------------------ verbs

def cmd_run(args) -> int:
    cfg = load_config(Path(args.config), args.set)
    out_dir = Path(args.out) if args.out else runio.default_out_root() / cfg["name"]
    args._out_dir = out_dir
    runio.ensure_dir(out_dir)
    runio.write_json(out_dir / "config.json", cfg)
    seed = (cfg.get("ensemble") or {}).get("seed")
    manifest = RunManifest.start(out_dir / "config.json", seed)
    report = run_scenario(cfg, workers=args.workers)
    save_report(report, out_dir)
    if report.outcomes is not None:
        stats = write_stats(out_dir)
        log(f"[info] ensemble counts: {stats['counts']}")
    if args.agreement:
        if cfg["name"] != "fig3_ensemble":
            raise ConfigError("--agreement needs the fig3_ensemble scenario")
        frac, cases = idealized_agreement(cfg, workers=args.workers)
        cases.to_csv(out_dir / "agreement.csv", index=False, float_format="%.17g")
        runio.write_json(out_dir / "agreement.json", {"fraction": frac, "n_cases": int(len(cases))})
    manifest.finish(out_dir)
    log(f"[done] {cfg['name']} -> {out_dir}")
    return 0


def cmd_weak(args) -> int:
    tsv, A = _weak_inputs(args)
    res = weak_value(tsv, A)
    print(runio.dumps(res.to_json()), flush=True)
    return 0


def cmd_protective(args) -> int:
    out_dir = Path(args.out) if args.out else runio.default_out_root() / "protective"
    args._out_dir = out_dir
    runio.ensure_dir(out_dir)
    state = parse_eigenstate(args.state)
    cfg = None
    if args.method == "simulate":
        # region is replaced bin by bin
        cfg = ProtectiveConfig(state, state.support(), args.T, args.ramp_fraction * args.T)
    report = reconstruct_density(state, args.bins, args.method, cfg=cfg, workers=args.workers)
    report.save(out_dir)
    log(f"[done] M={args.bins} L1={report.l1_error:.5f} -> {out_dir}")
    return 0


def cmd_tsvf_pointer(args) -> int:
    out_dir = Path(args.out) if args.out else runio.default_out_root() / "tsvf_pointer"
    args._out_dir = out_dir
    runio.ensure_dir(out_dir)
    tsv, A = _weak_inputs(args)
    aw = weak_value(tsv, A).A_w
    vals = A.eigenvalues_float()
    rows = []
    for delta in args.delta:
        pm = PointerModel.auto(delta, vals, extra=[aw.real])
        raw, phi = pointer_final_state(tsv, A, pm)
        limit = weak_limit_gaussian(aw.real, pm)
        row = {"delta": delta, "A_w_re": aw.real, "A_w_im": aw.imag,
               "pointer_mean": pointer_mean(phi), "limit_deviation": limit_deviation(tsv, A, pm),
               "postselected_norm": raw.norm(),
               "postselection_probability": postselection_probability(tsv, A, delta)}
        frame = {"Q": pm.grid.x, "exact_density": phi.density(), "limit_density": limit.density()}
        if args.order:
            series = pointer_state_from_moments(tsv, A, pm, args.order)
            frame["series_density"] = series.normalized().density()
        pd.DataFrame(frame).to_csv(out_dir / f"pointer_delta_{delta:g}.csv", index=False, float_format="%.17g")
        rows.append(row)
        log(f"[info] delta={delta:g} mean={row['pointer_mean']:.6g} deviation={row['limit_deviation']:.3e}")
    table = pd.DataFrame(rows)
    table.to_csv(out_dir / "pointer_summary.csv", index=False, float_format="%.17g")
    runio.write_json(out_dir / "pointer_summary.json", {"A_w": [aw.real, aw.imag], "rows": rows})
    log(f"[done] tsvf-pointer -> {out_dir}")
    return 0


def cmd_stats(args) -> int:
    run_dir = Path(args.run_dir)
    args._out_dir = run_dir
    stats = write_stats(run_dir)
    log(f"[done] n={stats['n']} halted={stats['n_halted']} -> {run_dir / 'stats.json'}")
    return 0


def _add_weak_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--case", default=None, help="spin:j:theta[:frame] or position:N:theta[:sigma]")
    p.add_argument("--pre", default=None)
    p.add_argument("--post", default=None)
    p.add_argument("--op", default=None)
    p.add_argument("--dps", type=int, default=None, help=f"extended precision (e.g. {DEFAULT_DPS})")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="weakbohm")
    ap.add_argument("--quiet", action="store_true", help="only warnings and errors")
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("run", help="run a scenario config")
    p.add_argument("config")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--out", default=None)
    p.add_argument("--workers", type=int, default=-1)
    p.add_argument("--agreement", action="store_true", help="fig3 only: numerical vs idealized turns")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("weak", help="weak value of an operator")
    _add_weak_args(p)
    p.set_defaults(func=cmd_weak)

    p = sub.add_parser("tsvf-pointer", help="exact pointer state vs weak limit")
    _add_weak_args(p)
    p.set_defaults(func=cmd_tsvf_pointer)
    p.add_argument("--delta", type=float, nargs="+", default=[5.0, 10.0, 20.0])
    p.add_argument("--order", type=int, default=0, help="also sum the moment series to this order")
    p.add_argument("--out", default=None)

    p = sub.add_parser("protective", help="binned density reconstruction of an eigenstate")
    p.add_argument("--state", required=True)
    p.add_argument("--bins", type=int, default=32)
    p.add_argument("--method", choices=("analytic", "simulate"), default="analytic")
    p.add_argument("--T", type=float, default=8.0, help="coupling duration for --method simulate")
    p.add_argument("--ramp-fraction", type=float, default=0.25)
    p.add_argument("--workers", type=int, default=-1)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_protective)

    p = sub.add_parser("stats", help="re-aggregate an ensemble run directory")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_stats)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.quiet:
        runio.VERBOSE = False
    args._out_dir = Path(args.out) if getattr(args, "out", None) else None
    try:
        return args.func(args)
    except Exception as exc:
        if exit_code_for(exc) == 1:
            raise
        return write_error(exc, args._out_dir)


if __name__ == "__main__":
    sys.exit(main())
