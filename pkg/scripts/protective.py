"""
Protective (adiabatic) measurements of projection operators on energy eigenstates.

A pointer coupled through H = g(t) P Pi_V(x) with a slow, smoothly ramped
unit-impulse profile is shifted by <Pi_V> while the eigenstate is left
(almost) untouched. The averages of many such projections reconstruct the
density, while the Bohmian particle of a real eigenstate stays where it is.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy import integrate
from scipy.special import erf

import runio
from errors import AdiabaticityError, ConfigError, DomainError
from guidance import integrate_trajectory, velocity_field
from propagate import (
    CouplingSpec,
    GProfile,
    Hamiltonian2DConfig,
    evolve_1d_series,
    evolve_2d,
)
from qfield import (
    EnergyEigenstate,
    Grid1D,
    WaveFunction1D,
    WaveFunction2D,
    eigenstate_field,
    projection_on_grid,
)
from runio import log

ADIABATIC_BAR = 0.99
MIN_RAMP_FRACTION = 0.05
STATIONARY_SPEED = 1e-10
DRIFT_FRACTION = 0.01
DEFAULT_DT = 0.002
DEFAULT_N = 128
DEFAULT_DELTA = 0.25
SUM_TOL = 1e-8
EDGE_TOL = 1e-12


def default_pointer_grid(delta: float = DEFAULT_DELTA) -> Grid1D:
    return Grid1D(-16.0 * delta, 16.0 * delta, DEFAULT_N)


def default_particle_grid(state: EnergyEigenstate, n: int = DEFAULT_N) -> Grid1D:
    a, b = state.support()
    if state.potential == "box":
        return Grid1D(a, b, n, boundary="box")
    return Grid1D(a - 1.0, b + 1.0, n)


@dataclass(frozen=True)
class ProtectiveConfig:
    state: EnergyEigenstate
    region: Tuple[float, float]
    T: float
    ramp: float
    delta: float = DEFAULT_DELTA
    grid_x: Optional[Grid1D] = None
    grid_q: Optional[Grid1D] = None
    dt: float = DEFAULT_DT

    def __post_init__(self):
        if not self.T > 0:
            raise ConfigError(f"T must be positive, got {self.T}")
        if not MIN_RAMP_FRACTION * self.T <= self.ramp <= 0.5 * self.T:
            raise ConfigError(f"ramp must lie in [{MIN_RAMP_FRACTION} T, T/2], got ramp={self.ramp}, T={self.T}")
        if not self.delta > 0:
            raise ConfigError(f"pointer spread must be positive, got {self.delta}")
        a, b = self.region
        if not b > a:
            raise ConfigError(f"region needs b > a, got [{a}, {b}]")
        if self.grid_x is None:
            object.__setattr__(self, "grid_x", default_particle_grid(self.state))
        if self.grid_q is None:
            object.__setattr__(self, "grid_q", default_pointer_grid(self.delta))

    def with_T(self, T: float) -> "ProtectiveConfig":
        """Same configuration at another duration, ramp kept as the same fraction of T."""
        return ProtectiveConfig(self.state, self.region, T, self.ramp * T / self.T, self.delta,
                                self.grid_x, self.grid_q, self.dt)

    def hamiltonian(self) -> Hamiltonian2DConfig:
        coupling = CouplingSpec("position_shift", self.region,
                                GProfile.smooth_adiabatic(self.T, self.ramp), 1.0)
        return Hamiltonian2DConfig(kinetic_x=True, kinetic_q=False,
                                   potential_x=self.state.potential_on(self.grid_x), coupling=coupling)

    def describe(self) -> dict:
        return {"state": self.state.describe(), "region": list(self.region), "T": self.T,
                "ramp": self.ramp, "delta": self.delta, "grid_x": self.grid_x.describe(),
                "grid_q": self.grid_q.describe(), "dt": self.dt}


def _clip_region(state: EnergyEigenstate, region: Tuple[float, float]) -> Tuple[float, float]:
    lo, hi = state.domain()
    a, b = region
    if a < lo - EDGE_TOL or b > hi + EDGE_TOL or not b > a:
        raise DomainError(f"region [{a}, {b}] outside the domain [{lo}, {hi}]")
    return max(a, lo), min(b, hi)


def expected_projection(state: EnergyEigenstate, region: Tuple[float, float]) -> float:
    """<Pi_V> = integral of |psi|^2 over V; closed forms for box states and the harmonic ground state."""
    a, b = _clip_region(state, region)
    if state.potential == "box":
        n, L = state.box_index, state.L

        def cum(x: float) -> float:
            y = x - state.origin
            return y / L - math.sin(2.0 * n * math.pi * y / L) / (2.0 * n * math.pi)

        return cum(b) - cum(a)
    s = math.sqrt(state.omega)
    if state.quantum_number == 0:
        return 0.5 * (erf(s * (b - state.origin)) - erf(s * (a - state.origin)))
    val, _ = integrate.quad(lambda x: float(state.density(np.array([x]))[0]), a, b,
                            epsabs=1e-13, epsrel=1e-12, limit=200)
    return val


# ------------------------------------------------------------------ adiabatic simulation

@dataclass(frozen=True)
class AdiabaticResult:
    T: float
    ramp: float
    region: Tuple[float, float]
    shift: float
    predicted: float
    grid_reference: float
    overlap: float

    @property
    def abs_error(self) -> float:
        return abs(self.shift - self.predicted)

    @property
    def rel_error(self) -> float:
        return self.abs_error / abs(self.predicted) if self.predicted else float("nan")

    def to_json(self) -> dict:
        return {"T": self.T, "ramp": self.ramp, "region": list(self.region), "shift": self.shift,
                "predicted": self.predicted, "grid_reference": self.grid_reference,
                "overlap": self.overlap, "abs_error": self.abs_error, "rel_error": self.rel_error}


def initial_composite(cfg: ProtectiveConfig) -> Tuple[WaveFunction1D, WaveFunction2D]:
    psi0 = eigenstate_field(cfg.state, cfg.grid_x)
    q = cfg.grid_q.x
    phi = WaveFunction1D(cfg.grid_q, np.exp(-q ** 2 / (2.0 * cfg.delta ** 2))).normalized()
    return psi0, WaveFunction2D.product(psi0, phi)


def eigenstate_overlap(psi0: WaveFunction1D, Psi: WaveFunction2D) -> float:
    """sum_q |<psi0|Psi(., q)>|^2 dq: weight left in the initial eigenstate once the pointer is traced out."""
    c = np.conj(psi0.amp) @ Psi.amp * psi0.grid.dx
    return float(np.sum(np.abs(c) ** 2) * Psi.grid_q.dx)


def adiabatic_pointer_shift(cfg: ProtectiveConfig, snapshots: bool = False):
    """Simulated pointer-mean displacement next to the first-order prediction <Pi_V>.

    With snapshots=True the run's SnapshotSeries is returned as well.
    """
    psi0, Psi0 = initial_composite(cfg)
    ham = cfg.hamiltonian()
    log(f"[info] protective run T={cfg.T:g} ramp={cfg.ramp:g} V=[{cfg.region[0]:g}, {cfg.region[1]:g}]")
    out = evolve_2d(Psi0, ham, 0.0, cfg.T, cfg.dt, snapshots=snapshots)
    final = out.final() if snapshots else out
    overlap = eigenstate_overlap(psi0, final)
    if overlap < ADIABATIC_BAR:
        raise AdiabaticityError(overlap, cfg.T, ADIABATIC_BAR)
    res = AdiabaticResult(
        T=cfg.T, ramp=cfg.ramp, region=tuple(cfg.region),
        shift=final.pointer_mean() - Psi0.pointer_mean(),
        predicted=expected_projection(cfg.state, cfg.region),
        grid_reference=projection_on_grid(psi0, cfg.region),
        overlap=overlap,
    )
    return (res, out) if snapshots else res


def adiabatic_convergence(cfg: ProtectiveConfig, Ts: Sequence[float], workers: int = 1) -> pd.DataFrame:
    """One adiabatic run per T; errors are taken against the grid's own <Pi_V> as well as the analytic one."""
    runs = Parallel(n_jobs=workers, prefer="threads")(
        delayed(adiabatic_pointer_shift)(cfg.with_T(float(T))) for T in Ts
    )
    rows = []
    for r in runs:
        row = r.to_json()
        row.pop("region")
        row["grid_error"] = abs(r.shift - r.grid_reference)
        rows.append(row)
    return pd.DataFrame(rows)


# ------------------------------------------------------------------ reconstruction

@dataclass
class ReconstructionReport:
    edges: List[float]
    measured: List[float]
    reference: List[float]
    l1_error: float
    method: str = "analytic"
    state: dict = field(default_factory=dict)

    def histogram(self) -> np.ndarray:
        return np.asarray(self.measured) / np.diff(self.edges)

    def to_frame(self) -> pd.DataFrame:
        e = np.asarray(self.edges)
        return pd.DataFrame({"bin_lo": e[:-1], "bin_hi": e[1:], "measured": self.measured,
                             "reference": self.reference, "density": self.histogram()})

    def to_json(self) -> dict:
        return runio.to_jsonable(self.__dict__)

    def save(self, out_dir: Path) -> None:
        out_dir = Path(out_dir)
        runio.ensure_dir(out_dir)
        runio.write_json(out_dir / "reconstruction.json", self.to_json())
        self.to_frame().to_csv(out_dir / "histogram.csv", index=False, float_format="%.17g")


def partition(state: EnergyEigenstate, M: int) -> np.ndarray:
    """M equal bins over the box, or over the harmonic support."""
    a, b = state.support()
    return np.linspace(a, b, M + 1)


def histogram_l1(state: EnergyEigenstate, edges: np.ndarray, measured: Sequence[float]) -> float:
    """(1/2) integral of |h(x) - |psi(x)|^2| for the piecewise-constant histogram h."""
    total = 0.0
    for lo, hi, m in zip(edges[:-1], edges[1:], measured):
        h = m / (hi - lo)
        val, _ = integrate.quad(lambda x: abs(h - float(state.density(np.array([x]))[0])), lo, hi,
                                epsabs=1e-12, limit=200)
        total += val
    return 0.5 * total


def _bin_regions(state: EnergyEigenstate, edges: np.ndarray) -> List[Tuple[float, float]]:
    regions = [(float(a), float(b)) for a, b in zip(edges[:-1], edges[1:])]
    if state.potential == "harmonic":
        regions[0] = (-math.inf, regions[0][1])
        regions[-1] = (regions[-1][0], math.inf)
    return regions


def reconstruct_density(state: EnergyEigenstate, M: int, method: str = "analytic",
                        cfg: Optional[ProtectiveConfig] = None, workers: int = 1) -> ReconstructionReport:
    """Per-bin <Pi_V_k> averages and the L1 distance of the implied histogram to |psi|^2.

    method="simulate" takes each average from an adiabatic run built from `cfg`
    (its region is replaced bin by bin).
    """
    if int(M) < 2:
        raise ConfigError(f"need at least 2 bins, got M={M}")
    edges = partition(state, int(M))
    regions = _bin_regions(state, edges)
    reference = [expected_projection(state, r) for r in regions]
    if method == "analytic":
        measured = list(reference)
    elif method == "simulate":
        if cfg is None:
            raise ConfigError("method='simulate' needs a ProtectiveConfig")
        runs = Parallel(n_jobs=workers, prefer="threads")(
            delayed(adiabatic_pointer_shift)(
                ProtectiveConfig(state, r, cfg.T, cfg.ramp, cfg.delta, cfg.grid_x, cfg.grid_q, cfg.dt))
            for r in regions
        )
        measured = [r.shift for r in runs]
    else:
        raise ConfigError(f"unknown reconstruction method: {method!r}")
    total = float(np.sum(measured))
    if method == "analytic" and abs(total - 1.0) > SUM_TOL:
        raise DomainError(f"bin averages sum to {total:.12g}, not 1")
    return ReconstructionReport(
        edges=[float(e) for e in edges],
        measured=[float(m) for m in measured],
        reference=[float(r) for r in reference],
        l1_error=histogram_l1(state, edges, measured),
        method=method,
        state=state.describe(),
    )


# ------------------------------------------------------------------ stationarity

@dataclass
class StationarityReport:
    max_speed: float
    x0: float
    bins: int
    visited_bins: List[int]
    measured: List[float]
    unvisited_nonzero: bool
    drift: Optional[float] = None
    drift_limit: Optional[float] = None

    @property
    def stationary(self) -> bool:
        return self.max_speed < STATIONARY_SPEED

    @property
    def occupied_fraction(self) -> float:
        return len(self.visited_bins) / self.bins

    def to_json(self) -> dict:
        d = runio.to_jsonable(self.__dict__)
        d["stationary"] = self.stationary
        d["occupied_fraction"] = self.occupied_fraction
        return d


def _bins_touched(edges: np.ndarray, xs: np.ndarray) -> List[int]:
    """Half-open bins [e_k, e_k+1) holding any of xs; positions rounded to 12 decimals."""
    k = np.searchsorted(edges, np.round(xs, 12), side="right") - 1
    return sorted(int(i) for i in np.unique(np.clip(k, 0, edges.size - 2)))


def eigenstate_stationarity(state: EnergyEigenstate, duration: float, x0: float, M: int = 10,
                            cfg: Optional[ProtectiveConfig] = None, grid: Optional[Grid1D] = None,
                            dt: float = DEFAULT_DT) -> StationarityReport:
    """Bohmian speed of a real eigenstate and the measurement bins its particle ever occupies.

    With `cfg` the particle is guided by the composite wave during an adiabatic
    measurement of cfg.region instead, and its drift is reported.
    """
    grid = grid or (cfg.grid_x if cfg is not None else default_particle_grid(state))
    psi = eigenstate_field(state, grid)
    if np.max(np.abs(psi.amp.imag)) > 0.0:
        raise ConfigError("stationarity audit needs a real-valued eigenstate")
    v = velocity_field(psi)
    max_speed = float(np.nanmax(np.abs(v)))
    edges = partition(state, int(M))
    measured = [expected_projection(state, r) for r in _bin_regions(state, edges)]
    drift = limit = None
    if cfg is None:
        series = evolve_1d_series(psi, state.potential_on(grid), 0.0, duration, dt)
        traj = integrate_trajectory(series, [x0], dt_out=duration / 50.0)
        xs = traj.x
    else:
        _, series = adiabatic_pointer_shift(cfg, snapshots=True)
        traj = integrate_trajectory(series, [x0, 0.0], dt_out=cfg.T / 50.0)
        xs = traj.x
        drift = float(np.max(np.abs(xs - x0)))
        lo, hi = state.support()
        limit = DRIFT_FRACTION * (hi - lo if state.potential == "box" else 1.0 / math.sqrt(state.omega))
        if drift >= limit:
            log(f"[warn] particle drift {drift:.3g} exceeds {limit:.3g} during the measurement")
    visited = _bins_touched(edges, xs)
    unvisited_nonzero = any(measured[k] > EDGE_TOL for k in range(len(measured)) if k not in visited)
    return StationarityReport(max_speed=max_speed, x0=float(x0), bins=int(M), visited_bins=visited,
                              measured=[float(m) for m in measured], unvisited_nonzero=unvisited_nonzero,
                              drift=drift, drift_limit=limit)
