"""
Runners for the named scenarios.

Each runner validates its config, evolves the field once, integrates the
configured Bohmian starts (and, when asked, a sampled ensemble) through the
shared snapshot series and returns a ScenarioReport. idealized_agreement
compares the fig3 turns against the branch-overlap rule of the rectangular
model.
"""
from __future__ import annotations

from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

import runio
from errors import ConfigError, DomainError
from guidance import (
    EnsembleSpec,
    check_non_crossing,
    density_quantile,
    equivariance_ks,
    integrate_ensemble,
    sample_initial,
)
from idealized import IdealizedScenario, crossing_trajectory, measured_outcome, postselection_stats
from propagate import coupling_from_dict, evolve_1d_series, evolve_2d, evolve_spinor, norm_drift
from protective import adiabatic_convergence, eigenstate_stationarity, reconstruct_density
from qfield import Grid1D, PacketSpec, WaveFunction1D, build_packet, grid_from_dict, packet_shape
from runio import log
from scenarios import (
    NORM_DRIFT_LIMIT,
    OVERLAP_ONSET,
    ScenarioReport,
    build_coupling,
    build_hamiltonian,
    canonical_name,
    crossing_packets,
    ensemble_summary,
    initial_field,
    outcome_table,
    pointer_spec,
    protective_config,
    reversal_checks,
    run_flags,
    shift_strength,
    stern_spinor,
    validate,
)

# ------------------------------------------------------------------ shared helpers

def _starts(cfg: Dict[str, Any], dim: int, q_default: float = 0.0) -> np.ndarray:
    pts = []
    for s in cfg.get("starts") or []:
        if isinstance(s, (list, tuple)):
            if len(s) != dim:
                raise ConfigError(f"start {s} does not have dimension {dim}")
            pts.append([float(v) for v in s])
        else:
            pts.append([float(s)] + ([q_default] if dim == 2 else []))
    return np.array(pts, dtype=float).reshape(-1, dim)


def _start_label(start: np.ndarray) -> str:
    side = "right" if start[0] > 0 else "left"
    return f"start_{side}_{start[0]:+g}" + (f"_q{start[1]:+g}" if start.size > 1 else "")


def _unique_labels(starts: np.ndarray) -> List[str]:
    labels, seen = [], {}
    for s in starts:
        lab = _start_label(s)
        seen[lab] = seen.get(lab, 0) + 1
        labels.append(lab if seen[lab] == 1 else f"{lab}#{seen[lab]}")
    return labels


def _ensemble_spec(cfg: Dict[str, Any]) -> Optional[EnsembleSpec]:
    e = cfg.get("ensemble") or {}
    n = int(e.get("n_samples", 0) or 0)
    if n <= 0:
        return None
    return EnsembleSpec(n, int(e.get("seed", 0)), e.get("sampling", "density"))


def _series_checks(series) -> Dict[str, Any]:
    drift = norm_drift(series)
    if drift > NORM_DRIFT_LIMIT:
        log(f"[warn] norm drift {drift:.3e} above {NORM_DRIFT_LIMIT:g}")
    return {"norm_drift": drift, "norm_ok": bool(drift <= NORM_DRIFT_LIMIT), "snapshots": int(series.times.size)}


def idealized_length(packet: PacketSpec, d: float) -> float:
    """Rectangular stand-in for a packet: its width, or 4 sigma for a Gaussian, kept below d."""
    L = packet.width if packet.shape == "rectangular" else 4.0 * packet.width
    return min(L, 0.99 * d)


def _idealized(cfg: Dict[str, Any], measurement: str = "none", W: float = 1.0, f: float = 0.0) -> IdealizedScenario:
    left, right = crossing_packets(cfg)
    d = abs(left.center)
    return IdealizedScenario(idealized_length(left, d), left.velocity, d, W, f, measurement,
                             left.weight, right.weight)


def _idealized_topology(s: IdealizedScenario, x0: float, t_end: float) -> Optional[Dict[str, Any]]:
    try:
        path = crossing_trajectory(s, x0)
    except DomainError:
        return None
    return {"turned": path.turned, "final_side": path.final_side(t_end)}


def _integrate(series, starts: np.ndarray, cfg: Dict[str, Any], workers: int):
    if starts.shape[0] == 0:
        return [], []
    trajs, reports = integrate_ensemble(series, starts, float(cfg["numerics"]["dt_out"]), workers=workers)
    return trajs, [r is not None for r in reports]


def _crossing_runs(name: str, starts: np.ndarray, trajs, context) -> List[Dict[str, Any]]:
    runs = []
    for label, s, tr in zip(_unique_labels(starts), starts, trajs):
        runs.append({"label": label, "start": s.tolist(),
                     "flags": runio.to_jsonable(run_flags(name, tr, context, {}))})
    return runs


# ------------------------------------------------------------------ scenarios

def run_fig1(cfg: Dict[str, Any], workers: int = 1) -> ScenarioReport:
    """Two crossing packets with no measurement; numerical turns against the idealized topology."""
    checks = validate(cfg)
    psi = initial_field(cfg)
    n = cfg["numerics"]
    t_end = float(n["t_end"])
    log(f"[info] fig1: evolving {psi.grid.n} nodes to t={t_end:g}")
    series = evolve_1d_series(psi, None, 0.0, t_end, checks["dt"], int(n["stride"]))
    checks.update(_series_checks(series))
    starts = _starts(cfg, 1)
    trajs, _ = _integrate(series, starts, cfg, workers)
    context: Dict[str, Any] = {"t_end": t_end}
    report = ScenarioReport("fig1", cfg, context, _crossing_runs("fig1", starts, trajs, context), list(trajs))
    ideal = _idealized(cfg)
    agree = []
    for r, s in zip(report.runs, starts):
        topo = _idealized_topology(ideal, float(s[0]), t_end)
        r["idealized"] = topo
        if topo is not None:
            agree.append(topo["turned"] == r["flags"]["turned"] and topo["final_side"] == r["flags"]["final_side"])
    checks["idealized_topology_agrees"] = bool(all(agree)) if agree else None
    spec = _ensemble_spec(cfg)
    if spec is not None:
        x0 = sample_initial(psi, spec)
        ens, halted = _integrate(series, x0[:, None], cfg, workers)
        report.outcomes = outcome_table(ens, halted)
        report.stats["ensemble"] = runio.to_jsonable(ensemble_summary("fig1", report.outcomes, context))
        ks, p = equivariance_ks(series, ens)
        ok, t_bad = check_non_crossing([tr for tr, h in zip(ens, halted) if not h])
        checks.update({"equivariance_ks": ks, "equivariance_p": p, "non_crossing": ok,
                       "non_crossing_violation_t": t_bad})
    report.checks = runio.to_jsonable(checks)
    log(f"[done] fig1: {len(report.runs)} runs")
    return report


def _pointer_context(cfg: Dict[str, Any]) -> Dict[str, Any]:
    c = build_coupling(cfg)
    return {"t_end": float(cfg["numerics"]["t_end"]), "region": list(c.region),
            "pulse": list(c.profile.span),
            "pointer_width": float(cfg["pointer"]["width"]), "pointer_center": float(cfg["pointer"]["center"]),
            "strength": shift_strength(cfg)}


def _evolve_composite(cfg: Dict[str, Any], checks: Dict[str, Any]):
    Psi = initial_field(cfg)
    ham = build_hamiltonian(cfg)
    n = cfg["numerics"]
    log(f"[info] {cfg['name']}: evolving {Psi.grid_x.n}x{Psi.grid_q.n} nodes to t={float(n['t_end']):g}")
    series = evolve_2d(Psi, ham, 0.0, float(n["t_end"]), checks["dt"], int(n["stride"]), snapshots=True)
    checks.update(_series_checks(series))
    return Psi, series


def run_fig2(cfg: Dict[str, Any], workers: int = 1) -> ScenarioReport:
    """Robust position-shift measurement: the right start passes untouched, the left start moves the pointer."""
    checks = validate(cfg)
    _, series = _evolve_composite(cfg, checks)
    context = _pointer_context(cfg)
    starts = _starts(cfg, 2, context["pointer_center"])
    trajs, _ = _integrate(series, starts, cfg, workers)
    report = ScenarioReport("fig2", cfg, context, _crossing_runs("fig2", starts, trajs, context), list(trajs))
    report.checks = runio.to_jsonable(checks)
    log(f"[done] fig2: {len(report.runs)} runs")
    return report


def _profile_fraction(gq: Grid1D, spec: PacketSpec, shift: float, select: str) -> float:
    """Post-selected started-right fraction implied by the smoothed pointer profile itself.

    With the pointer frozen after the pulse, the particles that end on the right at a
    given q are the rightmost |phi(q - shift)|^2 of the initial mass there.
    """
    base = np.abs(packet_shape(gq, spec)) ** 2
    moved = np.abs(packet_shape(gq, PacketSpec(spec.shape, spec.center + shift, spec.width, 0.0, 1.0,
                                               spec.smoothing))) ** 2
    common = np.minimum(base, moved)
    if select == "right":
        return float(common.sum() / moved.sum())
    return float((base - common).sum() / base.sum())


def fig3_context(cfg: Dict[str, Any]) -> Dict[str, Any]:
    context = _pointer_context(cfg)
    gq, spec = pointer_spec(cfg)
    W, sh = spec.width, context["strength"]
    f = sh / W
    select = cfg["postselect"]
    s = spec.edge_smoothing(gq)
    ideal = _idealized(cfg, "weak", W, f)
    exact = postselection_stats(ideal, select)
    origin = spec.center - 0.5 * W
    context.update({
        "f": f, "postselect": select, "q_origin": origin,
        "q_floor": origin + (sh if select == "right" else 0.0) - 0.5 * s,
        "smoothing": s,
        "predicted_fraction": exact.fraction_started_right,
        "profile_fraction": _profile_fraction(gq, spec, sh, select),
        "hist_edges": exact.pointer_hist["edges"],
        "idealized_hist": exact.pointer_hist["density"],
    })
    return context


def run_fig3_ensemble(cfg: Dict[str, Any], workers: int = 1) -> ScenarioReport:
    """Weak measurement, post-selected on the final side: who started where, and where the pointer ended."""
    checks = validate(cfg)
    Psi, series = _evolve_composite(cfg, checks)
    context = fig3_context(cfg)
    starts = _starts(cfg, 2, context["pointer_center"])
    trajs, _ = _integrate(series, starts, cfg, workers)
    report = ScenarioReport("fig3_ensemble", cfg, context,
                            _crossing_runs("fig3_ensemble", starts, trajs, context), list(trajs))
    spec = _ensemble_spec(cfg)
    if spec is not None:
        pts = sample_initial(Psi, spec)
        ens, halted = _integrate(series, pts, cfg, workers)
        report.outcomes = outcome_table(ens, halted)
        summary = ensemble_summary("fig3_ensemble", report.outcomes, context)
        report.stats["ensemble"] = runio.to_jsonable(summary)
        log(f"[info] fig3: post-selected {summary['selected']} of {summary['n']}, "
            f"started right {summary['fraction_started_right']:.4f} "
            f"(idealized {context['predicted_fraction']:.4f}, profile {context['profile_fraction']:.4f})")
        if summary["below_floor"]:
            log(f"[warn] {summary['below_floor']} post-selected pointers ended below q={context['q_floor']:.4g}")
    report.checks = runio.to_jsonable(checks)
    log(f"[done] fig3_ensemble: f={context['f']:g}")
    return report


def overlap_onset(cfg: Dict[str, Any], dt: float, threshold: float = OVERLAP_ONSET) -> Tuple[Optional[float], pd.DataFrame]:
    """First snapshot time where the separately evolved packets share more than `threshold` of their mass."""
    grid = grid_from_dict(cfg["grid"])
    n = cfg["numerics"]
    t_end, stride = float(n["t_end"]), int(n["stride"])
    series = []
    for spec in crossing_packets(cfg):
        unit = PacketSpec(spec.shape, spec.center, spec.width, spec.velocity, 1.0, spec.smoothing)
        series.append(evolve_1d_series(build_packet(grid, unit), None, 0.0, t_end, dt, stride))
    left, right = series
    shared = [float(np.sum(np.minimum(a.density(), b.density())) * grid.dx)
              for a, b in zip(left.fields, right.fields)]
    table = pd.DataFrame({"t": left.times, "shared_mass": shared})
    hit = table.loc[table["shared_mass"] > threshold, "t"]
    return (float(hit.iloc[0]) if len(hit) else None), table


def run_fig4_delayed(cfg: Dict[str, Any], workers: int = 1) -> ScenarioReport:
    """Momentum-kick measurement: the pointer's Bohm coordinate starts moving only after the packets overlap."""
    checks = validate(cfg)
    _, series = _evolve_composite(cfg, checks)
    onset, _ = overlap_onset(cfg, checks["dt"])
    context = _pointer_context(cfg)
    context["overlap_onset"] = onset
    log(f"[info] fig4: packet overlap onset t={onset}")
    starts = _starts(cfg, 2, context["pointer_center"])
    trajs, _ = _integrate(series, starts, cfg, workers)
    report = ScenarioReport("fig4_delayed", cfg, context,
                            _crossing_runs("fig4_delayed", starts, trajs, context), list(trajs))
    report.checks = runio.to_jsonable(checks)
    log(f"[done] fig4_delayed: {len(report.runs)} runs")
    return report


def stern_starts(cfg: Dict[str, Any], psi: WaveFunction1D, median: float, margin: float) -> np.ndarray:
    """Configured starts followed by ensemble draws outside the node-margin band."""
    explicit = _starts(cfg, 1)[:, 0]
    spec = _ensemble_spec(cfg)
    if spec is None:
        return explicit
    pool = sample_initial(psi, EnsembleSpec(4 * spec.n_samples, spec.seed, spec.sampling))
    drawn = pool[np.abs(pool - median) >= margin][:spec.n_samples]
    if drawn.size < spec.n_samples:
        raise ConfigError(f"only {drawn.size} of {spec.n_samples} draws fall outside the node margin")
    return np.concatenate([explicit, drawn])


def run_stern_gerlach(cfg: Dict[str, Any], workers: int = 1) -> ScenarioReport:
    """Spin measurement as opposite kicks; the outcome follows from where the particle started."""
    checks = validate(cfg)
    spinor = stern_spinor(cfg)
    coupling = coupling_from_dict(cfg["coupling"])
    n = cfg["numerics"]
    psi = WaveFunction1D(spinor.grid, np.sqrt(spinor.density()))
    median = float(density_quantile(spinor, 0.5))
    margin = float(cfg["node_margin"]) * float(cfg["packet"]["width"])
    starts = stern_starts(cfg, psi, median, margin)
    n_explicit = len(cfg.get("starts") or [])
    context = {"median": median, "node_margin": margin, "t_end": float(n["t_end"])}
    g0 = int(cfg["gradient"])
    gradients = (g0, -g0) if cfg["compare_reversed"] else (g0,)
    report = ScenarioReport("stern_gerlach", cfg, context)
    frames = []
    for g in gradients:
        log(f"[info] stern_gerlach: gradient {g:+d}")
        series = evolve_spinor(spinor, coupling, 0.0, float(n["t_end"]), checks["dt"], gradient=g,
                               stride=int(n["stride"]))
        checks[f"norm_drift_{'plus' if g > 0 else 'minus'}"] = norm_drift(series)
        trajs, halted = _integrate(series, starts[:, None], cfg, workers)
        flags = []
        for i, (x0, tr) in enumerate(zip(starts, trajs)):
            kind = "start" if i < n_explicit else "member"
            run = {"label": f"g{g:+d}_{kind}_{i:03d}", "start": [float(x0)], "gradient": g, "member": i}
            run["flags"] = runio.to_jsonable(run_flags("stern_gerlach", tr, context, run))
            report.runs.append(run)
            report.trajectories.append(tr)
            flags.append(run["flags"])
        frames.append(outcome_table(trajs, halted, {
            "gradient": [g] * len(trajs),
            "marginal": [fl["marginal"] for fl in flags],
            "agrees": [bool(fl["agrees"]) for fl in flags],
        }))
    report.outcomes = pd.concat(frames, ignore_index=True)
    report.stats["ensemble"] = runio.to_jsonable(ensemble_summary("stern_gerlach", report.outcomes, context))
    checks.update(reversal_checks(report))
    report.checks = runio.to_jsonable(checks)
    log(f"[done] stern_gerlach: agreement {report.stats['ensemble']['agreement']:.3f}")
    return report


def run_protective(cfg: Dict[str, Any], workers: int = 1) -> ScenarioReport:
    """Adiabatic pointer shift per T, the binned density reconstruction and the stationarity audit."""
    checks = validate(cfg)
    Ts = [float(T) for T in cfg["Ts"]]
    base = protective_config(cfg, Ts[0])
    log(f"[info] protective: {base.state.describe()} region={list(base.region)} Ts={Ts}")
    table = adiabatic_convergence(base, Ts, workers=workers)
    report = ScenarioReport("protective", cfg, {"region": list(base.region)})
    for row in table.to_dict(orient="records"):
        run = {"label": f"T{row['T']:g}", "result": runio.to_jsonable(row)}
        run["flags"] = runio.to_jsonable(run_flags("protective", None, report.context, run))
        report.runs.append(run)
    errors = table["grid_error"].to_numpy()
    checks["grid_error_decreasing"] = bool(np.all(np.diff(errors) < 0)) if errors.size > 1 else None
    rc = cfg["reconstruction"]
    recon = reconstruct_density(base.state, int(rc["bins"]), rc["method"],
                                cfg=base if rc["method"] == "simulate" else None, workers=workers)
    report.stats["reconstruction"] = recon.to_json()
    st = cfg["stationarity"]
    stat = eigenstate_stationarity(base.state, float(st["duration"]), float(st["x0"]), int(st["bins"]),
                                   grid=base.grid_x, dt=base.dt)
    report.stats["stationarity"] = stat.to_json()
    checks.update({"reconstruction_l1": recon.l1_error, "stationary": stat.stationary})
    report.checks = runio.to_jsonable(checks)
    log(f"[done] protective: L1={recon.l1_error:.4f}, max speed={stat.max_speed:.2e}")
    return report


RUNNERS = {
    "fig1": run_fig1,
    "fig2": run_fig2,
    "fig3_ensemble": run_fig3_ensemble,
    "fig4_delayed": run_fig4_delayed,
    "stern_gerlach": run_stern_gerlach,
    "protective": run_protective,
}


def run_scenario(cfg: Dict[str, Any], workers: int = 1) -> ScenarioReport:
    name = canonical_name(cfg.get("name", ""))
    return RUNNERS[name](cfg, workers=workers)


# ------------------------------------------------------------------ idealized comparison

def agreement_cases(cfg: Dict[str, Any], n_cases: int, seed: int, edge_margin: float) -> pd.DataFrame:
    """Start points whose final-coordinate pointer value keeps `edge_margin` smoothing lengths from every branch edge."""
    context = fig3_context(cfg)
    W, sh, s = float(cfg["pointer"]["width"]), context["strength"], context["smoothing"]
    origin = context["q_origin"]
    left, right = crossing_packets(cfg)
    edges = np.array([0.0, sh, W, W + sh])
    rng = np.random.default_rng(seed)
    rows = []
    tries = 0
    while len(rows) < n_cases:
        tries += 1
        if tries > 1000 * max(n_cases, 1):
            raise ConfigError(f"edge margin {edge_margin} smoothing lengths leaves no room for cases")
        side = "right" if rng.uniform() < 0.5 else "left"
        u = rng.uniform(0.0, W)
        q_final = u + (sh if side == "left" else 0.0)
        if np.min(np.abs(edges - q_final)) < edge_margin * s:
            continue
        packet = right if side == "right" else left
        x0 = packet.center + rng.uniform(-0.5, 0.5) * packet.width
        rows.append({"side": side, "x0": x0, "q0": origin + u, "q_final_local": q_final})
    return pd.DataFrame(rows)


def idealized_agreement(cfg: Dict[str, Any], n_cases: Optional[int] = None, seed: Optional[int] = None,
                        workers: int = 1) -> Tuple[float, pd.DataFrame]:
    """Fraction of fig3 cases where the numerical turn matches the branch-overlap rule."""
    a = cfg["agreement"]
    n_cases = int(a["n_cases"] if n_cases is None else n_cases)
    seed = int(a["seed"] if seed is None else seed)
    cases = agreement_cases(cfg, n_cases, seed, float(a["edge_margin"]))
    checks = validate(cfg)
    _, series = _evolve_composite(cfg, checks)
    context = fig3_context(cfg)
    ideal = _idealized(cfg, "weak", float(cfg["pointer"]["width"]), context["f"])
    trajs, reports = integrate_ensemble(series, cases[["x0", "q0"]].to_numpy(), float(cfg["numerics"]["dt_out"]),
                                        workers=workers)
    cases = cases.copy()
    cases["numeric_turned"] = [tr.turned() for tr in trajs]
    cases["halted"] = [r is not None for r in reports]
    cases["idealized_turned"] = [measured_outcome(ideal, s, q).turned
                                 for s, q in zip(cases["side"], cases["q_final_local"])]
    ok = cases[~cases["halted"]]
    frac = float((ok["numeric_turned"] == ok["idealized_turned"]).mean()) if len(ok) else float("nan")
    log(f"[info] idealized agreement {frac:.4f} over {len(ok)} cases")
    return frac, cases
