"""
Scenario configs and reports for the crossing-packet runs.

Configs are JSON files (or the built-in defaults) with dotted --set
overrides; validate checks the numerics before anything is evolved. A run
(see runners.py) returns a ScenarioReport, written as report.json plus CSV
trajectories and outcome tables; load_report recomputes every stored flag and
ensemble statistic from those files and refuses a report that disagrees.

Scenarios:
  fig1            two crossing packets, no measurement
  fig2            robust position-shift measurement on the left packet
  fig3_ensemble   weak measurement with a rectangular pointer, post-selected ensemble
  fig4_delayed    momentum-kick measurement that shows up only after the overlap
  stern_gerlach   spinor splitting, outcome set by the starting position
  protective      adiabatic measurement of a box eigenstate
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

import runio
from errors import ConfigError
from guidance import Trajectory, read_trajectories, write_trajectories
from propagate import (
    SPREAD_LIMIT,
    CouplingSpec,
    Hamiltonian2DConfig,
    check_boundary,
    coupling_from_dict,
    spreading_check,
    suggest_dt,
)
from protective import ProtectiveConfig
from qfield import (
    Grid1D,
    PacketSpec,
    SpinorWaveFunction1D,
    WaveFunction2D,
    build_packet,
    eigenstate_from_dict,
    grid_from_dict,
    superpose,
)
from runio import log

SCENARIOS = ("fig1", "fig2", "fig3_ensemble", "fig4_delayed", "protective", "stern_gerlach")
NAME_ALIASES = {"fig3": "fig3_ensemble", "fig4": "fig4_delayed", "sg": "stern_gerlach"}

NORM_DRIFT_LIMIT = 1e-8
ROBUST_RATIO = 10.0
STILL_FRACTION = 0.01
MOVING_FRACTION = 0.05
SHIFT_TOLERANCE = 0.10
TRANSIT_LIMIT = 0.01
OVERLAP_ONSET = 0.01
PROTECTIVE_TOLERANCE = 0.05
FLOAT_RTOL = 1e-12
TRANSIT_FRACTION = 0.5

_GAUSSIAN_PAIR = {
    "shape": "gaussian",
    "width": 3.0,
    "smoothing": None,
    "speed": 20.0,
    "separation": 15.0,
    "weight_left": 1.0,
    "weight_right": 1.0,
}
_WIDE_GRID = {"x_min": -40.0, "x_max": 40.0, "n": 2048, "boundary": "periodic"}
_PULSE = {"shape": "square", "t_on": None, "t_off": None}
_NO_ENSEMBLE = {"n_samples": 0, "seed": 0, "sampling": "density"}

DEFAULTS: Dict[str, Dict[str, Any]] = {
    "fig1": {
        "name": "fig1",
        "grid": dict(_WIDE_GRID, n=4096),
        "packets": dict(_GAUSSIAN_PAIR),
        "numerics": {"t_end": 1.5, "dt": 0.002, "stride": 10, "dt_out": 0.01},
        "starts": [15.0, -15.0],
        "ensemble": dict(_NO_ENSEMBLE),
    },
    "fig2": {
        "name": "fig2",
        "grid": dict(_WIDE_GRID),
        "packets": dict(_GAUSSIAN_PAIR),
        "pointer": {
            "grid": {"x_min": -6.0, "x_max": 18.0, "n": 64, "boundary": "periodic"},
            "shape": "gaussian", "width": 1.0, "center": 0.0, "smoothing": None,
            "kinetic": False, "mass": 1.0,
        },
        "coupling": {"kind": "position_shift", "region": None, "profile": dict(_PULSE),
                     "strength": 10.0},
        "numerics": {"t_end": 1.5, "dt": 0.001, "stride": 20, "dt_out": 0.01},
        "starts": [[15.0, 0.0], [-15.0, 0.0]],
        "ensemble": dict(_NO_ENSEMBLE),
    },
    "fig3_ensemble": {
        "name": "fig3_ensemble",
        "grid": dict(_WIDE_GRID),
        "packets": dict(_GAUSSIAN_PAIR),
        "pointer": {
            "grid": {"x_min": -8.0, "x_max": 43.2, "n": 64, "boundary": "periodic"},
            "shape": "rectangular", "width": 16.0, "center": 8.0, "smoothing": 1.6,
            "kinetic": False, "mass": 1.0, "shift_fraction": 0.1,
        },
        "coupling": {"kind": "position_shift", "region": None, "profile": dict(_PULSE),
                     "strength": None},
        "numerics": {"t_end": 1.5, "dt": 0.001, "stride": 20, "dt_out": 0.02},
        "starts": [],
        "ensemble": {"n_samples": 2000, "seed": 7, "sampling": "density"},
        "postselect": "right",
        "agreement": {"n_cases": 200, "seed": 11, "edge_margin": 2.0},
    },
    "fig4_delayed": {
        "name": "fig4_delayed",
        "grid": dict(_WIDE_GRID),
        "packets": dict(_GAUSSIAN_PAIR),
        "pointer": {
            "grid": {"x_min": -12.0, "x_max": 12.0, "n": 64, "boundary": "periodic"},
            "shape": "gaussian", "width": 2.0, "center": 0.0, "smoothing": None,
            "kinetic": True, "mass": 10.0,
        },
        "coupling": {"kind": "momentum_kick", "region": None, "profile": dict(_PULSE),
                     "strength": 3.0},
        "numerics": {"t_end": 1.5, "dt": 0.001, "stride": 20, "dt_out": 0.01},
        "starts": [[15.0, 0.0], [-15.0, 0.0]],
        "ensemble": dict(_NO_ENSEMBLE),
    },
    "stern_gerlach": {
        "name": "stern_gerlach",
        "grid": {"x_min": -64.0, "x_max": 64.0, "n": 1024, "boundary": "periodic"},
        "packet": {"shape": "gaussian", "width": 4.0, "center": 0.0, "smoothing": None},
        "spin": [1.0, 1.0],
        "coupling": {"kind": "momentum_kick", "region": [-60.0, 60.0],
                     "profile": {"shape": "square", "t_on": 0.0, "t_off": 0.1},
                     "strength": 20.0},
        "gradient": 1,
        "compare_reversed": True,
        "node_margin": 0.02,
        "numerics": {"t_end": 1.0, "dt": 0.002, "stride": 5, "dt_out": 0.01},
        "starts": [2.0, -2.0],
        "ensemble": {"n_samples": 100, "seed": 3, "sampling": "density"},
    },
    "protective": {
        "name": "protective",
        "state": {"potential": "box", "quantum_number": 1, "L": 1.0, "omega": 1.0, "origin": 0.0},
        "region": [0.0, 0.5],
        "Ts": [2.0, 4.0, 8.0],
        "ramp_fraction": 0.25,
        "grid": {"x_min": 0.0, "x_max": 1.0, "n": 128, "boundary": "box"},
        "pointer": {"delta": 0.25, "grid": {"x_min": -4.0, "x_max": 4.0, "n": 128, "boundary": "periodic"}},
        "numerics": {"dt": 0.002},
        "reconstruction": {"bins": 32, "method": "analytic"},
        "stationarity": {"x0": 0.3, "bins": 10, "duration": 1.0},
    },
}


# ------------------------------------------------------------------ config

def canonical_name(name: str) -> str:
    name = NAME_ALIASES.get(name, name)
    if name not in SCENARIOS:
        raise ConfigError(f"unknown scenario: {name!r} (known: {', '.join(SCENARIOS)})")
    return name


def default_config(name: str) -> Dict[str, Any]:
    return copy.deepcopy(DEFAULTS[canonical_name(name)])


def load_config(path: Optional[Path] = None, overrides: Optional[List[str]] = None,
                name: Optional[str] = None) -> Dict[str, Any]:
    """Scenario JSON deep-merged over its defaults, then --set overrides."""
    data: Dict[str, Any] = {}
    if path is not None:
        data = runio.read_json(Path(path))
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: a scenario config must be a JSON object")
    raw_name = data.get("name", name)
    if raw_name is None:
        raise ConfigError("scenario config needs a 'name'")
    cname = canonical_name(str(raw_name))
    data = dict(data, name=cname)
    cfg = runio.deep_merge(DEFAULTS[cname], data)
    cfg = runio.apply_overrides(cfg, overrides)
    sets_f = any(runio.parse_override(item)[0] == "pointer.shift_fraction" for item in overrides or [])
    strength = (cfg.get("coupling") or {}).get("strength")
    if sets_f and strength is not None:
        raise ConfigError(f"pointer.shift_fraction is ignored while coupling.strength={strength}; "
                          "also set coupling.strength=null")
    return cfg


def crossing_packets(cfg: Dict[str, Any]) -> Tuple[PacketSpec, PacketSpec]:
    p = cfg["packets"]
    try:
        d, v = float(p["separation"]), float(p["speed"])
        smoothing = None if p.get("smoothing") is None else float(p["smoothing"])
        left = PacketSpec(p["shape"], -d, float(p["width"]), v, float(p["weight_left"]), smoothing)
        right = PacketSpec(p["shape"], d, float(p["width"]), -v, float(p["weight_right"]), smoothing)
    except KeyError as e:
        raise ConfigError(f"packets config missing field {e}") from e
    if not d > 0 or not v > 0:
        raise ConfigError(f"packets need separation > 0 and speed > 0, got d={d}, v={v}")
    if left.weight < 0 or right.weight < 0 or left.weight + right.weight == 0:
        raise ConfigError("packet weights must be non-negative and not both zero")
    return left, right


def pointer_spec(cfg: Dict[str, Any]) -> Tuple[Grid1D, PacketSpec]:
    p = cfg["pointer"]
    smoothing = None if p.get("smoothing") is None else float(p["smoothing"])
    spec = PacketSpec(p["shape"], float(p["center"]), float(p["width"]), 0.0, 1.0, smoothing)
    return grid_from_dict(p["grid"]), spec


def shift_strength(cfg: Dict[str, Any]) -> float:
    """Coupling strength; the fig3 pointer derives it from f * W when none is given."""
    strength = cfg["coupling"].get("strength")
    if strength is None:
        f = cfg["pointer"].get("shift_fraction")
        if f is None:
            raise ConfigError("coupling.strength is required")
        return float(f) * float(cfg["pointer"]["width"])
    return float(strength)


def pulse_window(cfg: Dict[str, Any]) -> Tuple[Tuple[float, float], float, float]:
    """Region V and the square pulse (t_on, t_off) timed to the left packet's transit of V.

    The pulse is on while the whole left-packet support lies inside V. Without a
    configured region, V starts at the packet's initial trailing edge and is long enough
    for the packet to travel TRANSIT_FRACTION of the way to first contact with the
    right packet. Explicit t_on/t_off values are kept.
    """
    left, right = crossing_packets(cfg)
    a0, b0 = left.support(grid_from_dict(cfg["grid"]))
    h, d, v = 0.5 * (b0 - a0), -left.center, left.velocity
    c = cfg["coupling"]
    if c.get("region") is None:
        t_contact = (d - h) / v
        if not t_contact > 0:
            raise ConfigError(f"packet supports touch at t=0 (separation {d}, half-support {h}); "
                              "no transit window before the overlap")
        a, b = -d - h, -d + h + TRANSIT_FRACTION * t_contact * v
    else:
        a, b = float(c["region"][0]), float(c["region"][1])
    prof = c["profile"]
    t_on, t_off = prof.get("t_on"), prof.get("t_off")
    if t_on is None or t_off is None:
        if not b - a > 2.0 * h:
            raise ConfigError(f"region [{a:g}, {b:g}] is narrower than the left packet support {2.0 * h:g}")
        t_on = max(0.0, (a + h + d) / v) if t_on is None else float(t_on)
        t_off = (b - h + d) / v if t_off is None else float(t_off)
        if not t_off > t_on:
            raise ConfigError(f"the left packet has left region [{a:g}, {b:g}] before t={t_on:g}")
        if d - h - v * t_off < b:
            raise ConfigError(f"the right packet reaches region [{a:g}, {b:g}] before the pulse ends at t={t_off:g}")
    return (a, b), float(t_on), float(t_off)


def build_coupling(cfg: Dict[str, Any]) -> CouplingSpec:
    c = dict(cfg["coupling"], strength=shift_strength(cfg))
    if c["profile"].get("shape") == "square" and "packets" in cfg:
        region, t_on, t_off = pulse_window(cfg)
        c.update(region=list(region), profile=dict(c["profile"], t_on=t_on, t_off=t_off))
    return coupling_from_dict(c)


def build_hamiltonian(cfg: Dict[str, Any]) -> Hamiltonian2DConfig:
    p = cfg["pointer"]
    return Hamiltonian2DConfig(kinetic_x=True, kinetic_q=bool(p["kinetic"]),
                               coupling=build_coupling(cfg), mass_q=float(p["mass"]))


def initial_field(cfg: Dict[str, Any]):
    """Initial 1D superposition, or its product with the pointer packet."""
    grid = grid_from_dict(cfg["grid"])
    psi = superpose(grid, crossing_packets(cfg))
    if "pointer" not in cfg:
        return psi
    gq, spec = pointer_spec(cfg)
    return WaveFunction2D.product(psi, build_packet(gq, spec))


def transit_density_change(kick: float, mass_q: float, duration: float, sigma_q: float) -> float:
    """L1 change of a Gaussian pointer density while a kick of size `kick` is applied over `duration`."""
    drift = 0.5 * abs(kick) / mass_q * duration
    return drift * 2.0 / (math.sqrt(math.pi) * sigma_q)


def _time_step(cfg: Dict[str, Any], field_, ham=None) -> float:
    dt = cfg["numerics"].get("dt")
    return float(dt) if dt is not None else suggest_dt(field_, ham)


def validate(cfg: Dict[str, Any]) -> Dict[str, Any]:
    """Boundary padding, spreading and per-scenario preconditions; returns the check values."""
    name = canonical_name(cfg.get("name", ""))
    if name == "protective":
        return _validate_protective(cfg)
    if name == "stern_gerlach":
        return _validate_stern(cfg)
    t_end = float(cfg["numerics"]["t_end"])
    if not t_end > 0:
        raise ConfigError(f"numerics.t_end must be positive, got {t_end}")
    grid = grid_from_dict(cfg["grid"])
    left, right = crossing_packets(cfg)
    field_ = initial_field(cfg)
    checks: Dict[str, Any] = {"boundary_edge_density": check_boundary(field_)}
    ham = build_hamiltonian(cfg) if "pointer" in cfg else None
    growth = spreading_check(grid, left, t_end, cfg["numerics"].get("dt"))
    if growth > SPREAD_LIMIT:
        raise ConfigError(f"packet spreading {growth:.2%} over t_end={t_end} exceeds {SPREAD_LIMIT:.0%}")
    checks["spreading"] = growth
    if name == "fig2":
        strength, delta = shift_strength(cfg), float(cfg["pointer"]["width"])
        if ham.coupling.kind != "position_shift":
            raise ConfigError("fig2 needs a position_shift coupling")
        if strength != 0.0 and abs(strength) < ROBUST_RATIO * delta:
            raise ConfigError(f"robust measurement needs strength >= {ROBUST_RATIO:g} * width, "
                              f"got {strength} with width {delta}")
    if name == "fig3_ensemble":
        if cfg["pointer"]["shape"] != "rectangular":
            raise ConfigError("fig3_ensemble needs a rectangular pointer")
        if ham.coupling.kind != "position_shift":
            raise ConfigError("fig3_ensemble needs a position_shift coupling")
        f = shift_strength(cfg) / float(cfg["pointer"]["width"])
        f_cfg = cfg["pointer"].get("shift_fraction")
        if f_cfg is not None and not math.isclose(f, float(f_cfg), rel_tol=FLOAT_RTOL):
            log(f"[warn] coupling.strength gives f={f:g}; pointer.shift_fraction={f_cfg} is ignored")
        if not 0.0 < f < 1.0:
            raise ConfigError(f"shift fraction must lie in (0, 1), got f={f}")
        if cfg["postselect"] not in ("left", "right"):
            raise ConfigError(f"postselect must be 'left' or 'right', got {cfg['postselect']!r}")
        checks["shift_fraction"] = f
    if name == "fig4_delayed":
        c = ham.coupling
        if c.kind != "momentum_kick":
            raise ConfigError("fig4_delayed needs a momentum_kick coupling")
        t_on, t_off = c.profile.span
        change = transit_density_change(c.strength, ham.mass_q, t_off - t_on, float(cfg["pointer"]["width"]))
        if change >= TRANSIT_LIMIT:
            raise ConfigError(f"kick {c.strength} changes the pointer density by {change:.2%} during transit "
                              f"(limit {TRANSIT_LIMIT:.0%}); lower the kick or raise the pointer mass")
        checks["transit_density_change"] = change
    checks["dt"] = _time_step(cfg, field_, ham)
    return checks


def _validate_stern(cfg: Dict[str, Any]) -> Dict[str, Any]:
    spinor = stern_spinor(cfg)
    coupling = coupling_from_dict(cfg["coupling"])
    if coupling.kind != "momentum_kick":
        raise ConfigError("stern_gerlach needs a momentum_kick coupling")
    if int(cfg["gradient"]) not in (1, -1):
        raise ConfigError(f"gradient must be +1 or -1, got {cfg['gradient']}")
    grid = spinor.grid
    growth = spreading_check(grid, _stern_packet(cfg), float(cfg["numerics"]["t_end"]), cfg["numerics"]["dt"])
    if growth > SPREAD_LIMIT:
        raise ConfigError(f"packet spreading {growth:.2%} exceeds {SPREAD_LIMIT:.0%}")
    return {"boundary_edge_density": check_boundary(spinor), "spreading": growth,
            "dt": float(cfg["numerics"]["dt"])}


def _validate_protective(cfg: Dict[str, Any]) -> Dict[str, Any]:
    if not cfg["Ts"]:
        raise ConfigError("protective needs at least one duration in Ts")
    pcfg = protective_config(cfg, max(float(T) for T in cfg["Ts"]))
    return {"state": pcfg.state.describe(), "region": list(pcfg.region)}


def _stern_packet(cfg: Dict[str, Any]) -> PacketSpec:
    p = cfg["packet"]
    smoothing = None if p.get("smoothing") is None else float(p["smoothing"])
    return PacketSpec(p["shape"], float(p["center"]), float(p["width"]), 0.0, 1.0, smoothing)


def _spin_amplitude(v) -> complex:
    if isinstance(v, (list, tuple)):
        return complex(float(v[0]), float(v[1]))
    return complex(float(v))


def stern_spinor(cfg: Dict[str, Any]) -> SpinorWaveFunction1D:
    grid = grid_from_dict(cfg["grid"])
    spin = cfg["spin"]
    if len(spin) != 2:
        raise ConfigError(f"spin needs two amplitudes, got {spin}")
    a, b = (_spin_amplitude(v) for v in spin)
    if a == 0 and b == 0:
        raise ConfigError("spin amplitudes are both zero")
    return SpinorWaveFunction1D.from_spatial(build_packet(grid, _stern_packet(cfg)), (a, b))


def protective_config(cfg: Dict[str, Any], T: float) -> ProtectiveConfig:
    state = eigenstate_from_dict(cfg["state"])
    region = (float(cfg["region"][0]), float(cfg["region"][1]))
    grid_x = grid_from_dict(cfg["grid"]) if cfg.get("grid") else None
    p = cfg["pointer"]
    grid_q = grid_from_dict(p["grid"]) if p.get("grid") else None
    return ProtectiveConfig(state, region, float(T), float(cfg["ramp_fraction"]) * float(T),
                            float(p["delta"]), grid_x, grid_q, float(cfg["numerics"]["dt"]))


# ------------------------------------------------------------------ reports

@dataclass
class ScenarioReport:
    name: str
    config: Dict[str, Any]
    context: Dict[str, Any] = field(default_factory=dict)
    runs: List[Dict[str, Any]] = field(default_factory=list)
    trajectories: List[Trajectory] = field(default_factory=list)
    stats: Dict[str, Any] = field(default_factory=dict)
    checks: Dict[str, Any] = field(default_factory=dict)
    outcomes: Optional[pd.DataFrame] = None

    def run(self, label: str) -> Dict[str, Any]:
        for r in self.runs:
            if r["label"] == label:
                return r
        raise KeyError(label)

    def flags(self, label: str) -> Dict[str, Any]:
        return self.run(label)["flags"]

    def to_json(self) -> Dict[str, Any]:
        return runio.to_jsonable({
            "name": self.name, "config": self.config, "context": self.context,
            "runs": self.runs, "stats": self.stats, "checks": self.checks,
            "tool_version": runio.TOOL_VERSION,
        })


def _displacement(tr: Trajectory) -> np.ndarray:
    return np.abs(tr.q - tr.q[0])


def run_flags(name: str, tr: Trajectory, context: Dict[str, Any], run: Dict[str, Any]) -> Dict[str, Any]:
    """Classification flags of one trajectory; a pure function of the stored trajectory and context."""
    if name == "protective":
        res = run["result"]
        err = abs(res["shift"] - res["predicted"])
        return {"abs_error": err, "within_tolerance": err <= PROTECTIVE_TOLERANCE * abs(res["predicted"])}
    flags: Dict[str, Any] = {"halted": tr.halted is not None, "t_last": float(tr.times[-1])}
    if name == "stern_gerlach":
        g = int(run["gradient"])
        drift = float(tr.x[-1] - tr.x[0])
        above = bool(tr.x[0] > context["median"])
        marginal = bool(abs(tr.x[0] - context["median"]) < context["node_margin"])
        label = "up" if drift * g > 0 else "down"
        expected = ("up" if above else "down") if g > 0 else ("down" if above else "up")
        flags.update({"drift": drift, "moved": "up" if drift > 0 else "down", "spin_label": label,
                      "above_median": above, "marginal": marginal,
                      "agrees": None if marginal else label == expected})
        return flags
    flags.update({"turned": tr.turned(), "start_side": tr.start_side(), "final_side": tr.final_side()})
    if tr.dim < 2:
        return flags
    flags["pointer_displacement"] = float(tr.q[-1] - tr.q[0])
    a, b = context["region"]
    outside = np.maximum(a - tr.x, tr.x - b)
    flags["min_distance_to_region"] = float(np.min(outside))
    flags["entered_region"] = bool(np.min(outside) <= 0.0)
    if name == "fig2":
        delta, strength = context["pointer_width"], context["strength"]
        shift = abs(flags["pointer_displacement"])
        flags["pointer_still"] = bool(shift < MOVING_FRACTION * delta)
        flags["pointer_shifted"] = bool(strength != 0.0 and abs(shift - abs(strength)) <= SHIFT_TOLERANCE * abs(strength))
    if name == "fig4_delayed":
        sigma_q, onset = context["pointer_width"], context["overlap_onset"]
        disp = _displacement(tr)
        moving = np.flatnonzero(disp > STILL_FRACTION * sigma_q)
        first = float(tr.times[moving[0]]) if moving.size else None
        before = tr.times < onset if onset is not None else np.ones(tr.times.size, dtype=bool)
        flags["pointer_onset"] = first
        flags["still_before_overlap"] = bool(np.all(disp[before] < STILL_FRACTION * sigma_q))
        flags["moves_later"] = bool(np.any(disp[~before] > MOVING_FRACTION * sigma_q))
        flags["onset_after_overlap"] = bool(first is None or (onset is not None and first >= onset))
        flags["max_pointer_displacement"] = float(disp.max())
    return flags


def outcome_table(trajectories: Sequence[Trajectory], halted: Sequence[bool],
                  extra: Optional[Dict[str, Sequence]] = None) -> pd.DataFrame:
    rows = []
    for i, (tr, h) in enumerate(zip(trajectories, halted)):
        row = {"member": i, "x0": tr.x[0], "x_end": tr.x[-1], "t_last": tr.times[-1], "halted": bool(h)}
        if tr.dim > 1:
            row["q0"] = tr.q[0]
            row["q_end"] = tr.q[-1]
        rows.append(row)
    df = pd.DataFrame(rows)
    for k, vals in (extra or {}).items():
        df[k] = list(vals)
    return classify_outcomes(df)


def classify_outcomes(df: pd.DataFrame) -> pd.DataFrame:
    """Start side from x at t0, final side from x at the last output time."""
    df = df.copy()
    df["halted"] = df["halted"].astype(bool)
    df["started_side"] = np.where(df["x0"] > 0, "right", "left")
    df["final_side"] = np.where(df["x_end"] > 0, "right", "left")
    df["turned"] = df["started_side"] == df["final_side"]
    return df


def side_counts(df: pd.DataFrame) -> Dict[str, int]:
    ok = df[~df["halted"]]
    table = pd.crosstab(ok["started_side"], ok["final_side"])
    out = {}
    for s in ("left", "right"):
        for f in ("left", "right"):
            out[f"{s}_to_{f}"] = int(table.loc[s, f]) if s in table.index and f in table.columns else 0
    return out


def ensemble_summary(name: str, df: pd.DataFrame, context: Dict[str, Any]) -> Dict[str, Any]:
    """Ensemble statistics recomputable from the outcome table alone."""
    df = classify_outcomes(df)
    ok = df[~df["halted"]]
    out: Dict[str, Any] = {"n": int(len(df)), "n_halted": int(df["halted"].sum()), "counts": side_counts(df)}
    if name == "fig3_ensemble":
        select = context["postselect"]
        sel = ok[ok["final_side"] == select]
        n_sel = int(len(sel))
        n_right = int((sel["started_side"] == "right").sum())
        frac = n_right / n_sel if n_sel else float("nan")
        p = context["predicted_fraction"]
        sigma = math.sqrt(p * (1.0 - p) / n_sel) if n_sel else float("nan")
        edges = np.asarray(context["hist_edges"])
        q_local = sel["q_end"].to_numpy() - context["q_origin"]
        hist, _ = np.histogram(q_local, bins=edges, density=True) if n_sel else (np.zeros(edges.size - 1), edges)
        below = int((sel["q_end"] < context["q_floor"]).sum())
        out.update({
            "selected": n_sel, "selected_started_right": n_right, "fraction_started_right": frac,
            "binomial_sigma": sigma,
            "within_3_sigma": bool(n_sel and abs(frac - p) <= 3.0 * sigma),
            "abs_error": abs(frac - p) if n_sel else float("nan"),
            "profile_offset": context["profile_fraction"] - p,
            "min_selected_q": float(sel["q_end"].min()) if n_sel else float("nan"),
            "below_floor": below,
            "pointer_hist": {"edges": edges.tolist(), "density": hist.tolist()},
        })
    elif name == "stern_gerlach":
        judged = ok[~ok["marginal"]]
        agree = judged["agrees"].astype(bool)
        out["judged"] = int(len(judged))
        out["agreement"] = float(agree.mean()) if len(judged) else float("nan")
        by_gradient = judged.groupby("gradient")["agrees"].apply(lambda s: float(s.astype(bool).mean()))
        out["agreement_by_gradient"] = {str(int(k)): v for k, v in by_gradient.items()}
    return out


def _same(a: Any, b: Any) -> bool:
    if isinstance(a, dict) and isinstance(b, dict):
        return a.keys() == b.keys() and all(_same(a[k], b[k]) for k in a)
    if isinstance(a, (list, tuple)) and isinstance(b, (list, tuple)):
        return len(a) == len(b) and all(_same(x, y) for x, y in zip(a, b))
    if isinstance(a, bool) or isinstance(b, bool) or a is None or b is None or isinstance(a, str):
        return a == b
    if isinstance(a, (int, float)) and isinstance(b, (int, float)):
        if math.isnan(a) and math.isnan(b):
            return True
        return math.isclose(a, b, rel_tol=FLOAT_RTOL, abs_tol=FLOAT_RTOL)
    return a == b


def reversal_checks(report: ScenarioReport) -> Dict[str, Any]:
    by_g: Dict[int, Dict[int, Tuple[Trajectory, Dict[str, Any]]]] = {}
    for r, tr in zip(report.runs, report.trajectories):
        by_g.setdefault(int(r["gradient"]), {})[int(r["member"])] = (tr, r)
    if len(by_g) < 2:
        return {}
    (_, a), (_, b) = sorted(by_g.items())
    identical = all(np.array_equal(a[m][0].points, b[m][0].points) and np.array_equal(a[m][0].times, b[m][0].times)
                    for m in a)
    flipped = all(a[m][1]["flags"]["spin_label"] != b[m][1]["flags"]["spin_label"] for m in a)
    return {"reversal_identical_positions": bool(identical), "reversal_flips_labels": bool(flipped)}


def save_report(report: ScenarioReport, out_dir: Path) -> None:
    out_dir = Path(out_dir)
    runio.ensure_dir(out_dir)
    runio.write_json(out_dir / "report.json", report.to_json())
    if report.trajectories:
        labels = [{"label": r["label"]} for r in report.runs]
        write_trajectories(out_dir / "trajectories", report.trajectories, labels)
    if report.outcomes is not None:
        report.outcomes.to_csv(out_dir / "outcomes.csv", index=False, float_format="%.17g")
    (out_dir / "summary.txt").write_text("\n".join(summary_lines(report)) + "\n", encoding="utf-8")
    log(f"[ok] wrote report -> {out_dir}")


def load_report(out_dir: Path) -> ScenarioReport:
    """Read a report directory and recompute every flag; any disagreement raises ConfigError."""
    out_dir = Path(out_dir)
    data = runio.read_json(out_dir / "report.json")
    trajs: List[Trajectory] = []
    if (out_dir / "trajectories" / "index.csv").exists():
        trajs, _ = read_trajectories(out_dir / "trajectories")
    outcomes = None
    if (out_dir / "outcomes.csv").exists():
        outcomes = pd.read_csv(out_dir / "outcomes.csv")
    report = ScenarioReport(data["name"], data["config"], data["context"], data["runs"], trajs,
                            data["stats"], data["checks"], outcomes)
    name = report.name
    if name != "protective" and len(trajs) != len(report.runs):
        raise ConfigError(f"report lists {len(report.runs)} runs but {len(trajs)} trajectories are stored")
    for i, r in enumerate(report.runs):
        tr = trajs[i] if name != "protective" else None
        again = run_flags(name, tr, report.context, r)
        if not _same(r["flags"], runio.to_jsonable(again)):
            raise ConfigError(f"report flags for run {r['label']!r} do not match its stored trajectory")
    if outcomes is not None:
        again = runio.to_jsonable(ensemble_summary(name, outcomes, report.context))
        if not _same(report.stats.get("ensemble"), again):
            raise ConfigError("ensemble statistics do not match the stored outcome table")
    if name == "stern_gerlach":
        again = reversal_checks(report)
        for k, v in again.items():
            if report.checks.get(k) != v:
                raise ConfigError(f"check {k} does not match the stored trajectories")
    return report


def summary_lines(report: ScenarioReport) -> List[str]:
    lines = [f"scenario={report.name}", f"runs={len(report.runs)}"]
    for r in report.runs:
        for k, v in sorted(r["flags"].items()):
            lines.append(f"{r['label']}.{k}={runio.fmt(v)}")
    ens = report.stats.get("ensemble") or {}
    for k, v in sorted(ens.items()):
        if not isinstance(v, (dict, list)):
            lines.append(f"ensemble.{k}={runio.fmt(v)}")
    for k, v in sorted(report.checks.items()):
        if not isinstance(v, (dict, list)):
            lines.append(f"check.{k}={runio.fmt(v)}")
    return lines
