"""
Bohmian guidance: velocity fields v = j / rho, RK4 trajectory integration
through a snapshot series, ensemble sampling and the equivariance and
non-crossing checks.

j and rho are interpolated separately (cubic in space, linear in time) and
divided afterwards; wherever rho falls below RHO_FLOOR times the snapshot
peak the velocity is undefined and the trajectory halts with a NodeEncounter.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.interpolate import CubicSpline, RectBivariateSpline
from scipy.stats import kstest

import runio
from errors import ConfigError, NodeEncounter
from propagate import Hamiltonian2DConfig, SnapshotSeries
from qfield import (
    Grid1D,
    PacketSpec,
    SpinorWaveFunction1D,
    WaveFunction1D,
    WaveFunction2D,
    density_and_current,
    derivative_along,
)
from runio import log

RHO_FLOOR = 1e-12
DEFAULT_BATCH = 256
SAMPLING_MODES = ("density", "uniform")


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    points: np.ndarray
    halted: Optional[Dict[str, object]] = field(default=None, compare=False)

    def __post_init__(self):
        t = np.array(self.times, dtype=float)
        p = np.array(self.points, dtype=float)
        if p.ndim == 1:
            p = p[:, None]
        if t.ndim != 1 or p.shape[0] != t.size or t.size < 1:
            raise ConfigError("trajectory needs one point per time")
        if np.any(np.diff(t) <= 0):
            raise ConfigError("trajectory times must be strictly increasing")
        if not np.all(np.isfinite(p)):
            raise ConfigError("trajectory has non-finite points")
        t.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "points", p)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def x(self) -> np.ndarray:
        return self.points[:, 0]

    @property
    def q(self) -> np.ndarray:
        if self.dim < 2:
            raise ConfigError("trajectory has no pointer coordinate")
        return self.points[:, 1]

    def initial_velocity(self, axis: int = 0) -> float:
        return float((self.points[1, axis] - self.points[0, axis]) / (self.times[1] - self.times[0]))

    def final_velocity(self, axis: int = 0) -> float:
        return float((self.points[-1, axis] - self.points[-2, axis]) / (self.times[-1] - self.times[-2]))

    def turned(self, axis: int = 0) -> bool:
        return bool(np.sign(self.initial_velocity(axis)) != np.sign(self.final_velocity(axis)))

    def final_side(self) -> str:
        return "right" if self.x[-1] > 0 else "left"

    def start_side(self) -> str:
        return "right" if self.x[0] > 0 else "left"

    def to_frame(self) -> pd.DataFrame:
        cols = {"t": self.times, "x": self.x}
        if self.dim > 1:
            cols["q"] = self.q
        return pd.DataFrame(cols)


@dataclass(frozen=True)
class EnsembleSpec:
    n_samples: int
    seed: int = 0
    sampling: str = "density"

    def __post_init__(self):
        if int(self.n_samples) < 1:
            raise ConfigError(f"ensemble needs n_samples >= 1, got {self.n_samples}")
        if self.sampling not in SAMPLING_MODES:
            raise ConfigError(f"unknown sampling mode: {self.sampling!r}")


# ------------------------------------------------------------------ velocity fields

def velocity_field(psi, cfg: Optional[Hamiltonian2DConfig] = None, t: float = 0.0,
                   rho_floor: float = RHO_FLOOR):
    """v = j/rho on the grid, NaN where rho < rho_floor * peak.

    1D and spinor fields return one array; 2D fields return (v_x, v_q), where
    v_q includes g(t) Pi_V(x) for a position_shift coupling.
    """
    if isinstance(psi, WaveFunction2D):
        cfg = cfg or Hamiltonian2DConfig()
        rho = psi.density()
        bad = rho < rho_floor * rho.max()
        safe = np.where(bad, 1.0, rho)
        vx = np.zeros_like(rho)
        vq = np.zeros_like(rho)
        if cfg.kinetic_x:
            vx = np.imag(np.conj(psi.amp) * derivative_along(psi.amp, psi.grid_x, axis=0)) / safe
        if cfg.kinetic_q:
            vq = np.imag(np.conj(psi.amp) * derivative_along(psi.amp, psi.grid_q, axis=1)) / (cfg.mass_q * safe)
        c = cfg.coupling
        if c is not None and c.kind == "position_shift":
            vq = vq + c.rate(t) * c.inside(psi.grid_x.x)[:, None]
        return np.where(bad, np.nan, vx), np.where(bad, np.nan, vq)
    rho, j = density_and_current(psi)
    bad = rho < rho_floor * rho.max()
    return np.where(bad, np.nan, j / np.where(bad, 1.0, rho))


class _Interp1D:
    def __init__(self, grid: Grid1D, rho: np.ndarray, j: np.ndarray):
        self.grid = grid
        xs = np.append(grid.x, grid.x_max)
        if grid.is_box:
            y = np.column_stack([np.append(rho, 0.0), np.append(j, 0.0)])
            self.spline = CubicSpline(xs, y, axis=0)
        else:
            y = np.column_stack([np.append(rho, rho[0]), np.append(j, j[0])])
            self.spline = CubicSpline(xs, y, axis=0, bc_type="periodic")
        self.peak = float(rho.max())

    def __call__(self, pts: np.ndarray):
        x = pts[:, 0]
        g = self.grid
        if g.is_box:
            x = np.clip(x, g.x_min, g.x_max)
        else:
            x = g.x_min + np.mod(x - g.x_min, g.length)
        v = self.spline(x)
        return v[:, 0], v[:, 1:]


class _Interp2D:
    def __init__(self, psi: WaveFunction2D, cfg: Hamiltonian2DConfig):
        gx, gq = psi.grid_x, psi.grid_q
        rho = psi.density()
        self.peak = float(rho.max())
        self.rho = RectBivariateSpline(gx.x, gq.x, rho)
        self.jx = self.jq = None
        if cfg.kinetic_x:
            jx = np.imag(np.conj(psi.amp) * derivative_along(psi.amp, gx, axis=0))
            self.jx = RectBivariateSpline(gx.x, gq.x, jx)
        if cfg.kinetic_q:
            jq = np.imag(np.conj(psi.amp) * derivative_along(psi.amp, gq, axis=1)) / cfg.mass_q
            self.jq = RectBivariateSpline(gx.x, gq.x, jq)

    def __call__(self, pts: np.ndarray):
        x, q = pts[:, 0], pts[:, 1]
        rho = self.rho.ev(x, q)
        jx = self.jx.ev(x, q) if self.jx is not None else np.zeros_like(rho)
        jq = self.jq.ev(x, q) if self.jq is not None else np.zeros_like(rho)
        return rho, np.column_stack([jx, jq])


class GuidanceField:
    """Velocity at any (t, points) inside a snapshot series."""

    def __init__(self, series: SnapshotSeries, rho_floor: float = RHO_FLOOR):
        self.series = series
        self.rho_floor = rho_floor
        first = series.fields[0]
        self.dim = 2 if isinstance(first, WaveFunction2D) else 1
        self.cfg = series.hamiltonian or Hamiltonian2DConfig()
        self._cache: Dict[int, object] = {}
        self._lock = threading.Lock()

    def _interp(self, i: int):
        with self._lock:
            it = self._cache.get(i)
            if it is None:
                f = self.series.fields[i]
                if self.dim == 2:
                    it = _Interp2D(f, self.cfg)
                else:
                    rho, j = density_and_current(f)
                    it = _Interp1D(f.grid, rho, j)
                self._cache[i] = it
            return it

    def __call__(self, t: float, pts: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        times = self.series.times
        i = int(np.clip(np.searchsorted(times, t, side="right") - 1, 0, times.size - 2))
        w = (t - times[i]) / (times[i + 1] - times[i])
        a, b = self._interp(i), self._interp(i + 1)
        rho_a, j_a = a(pts)
        rho_b, j_b = b(pts)
        rho = (1.0 - w) * rho_a + w * rho_b
        j = (1.0 - w) * j_a + w * j_b
        peak = (1.0 - w) * a.peak + w * b.peak
        ok = rho > self.rho_floor * peak
        v = j / np.where(ok, rho, 1.0)[:, None]
        c = self.cfg.coupling
        if self.dim == 2 and c is not None and c.kind == "position_shift":
            g = c.rate(t)
            if g != 0.0:
                v[:, 1] = v[:, 1] + g * c.inside(pts[:, 0])
        v[~ok] = 0.0
        return v, ok


# ------------------------------------------------------------------ integration

def output_times(t0: float, t1: float, dt_out: float) -> np.ndarray:
    if not dt_out > 0:
        raise ConfigError(f"dt_out must be positive, got {dt_out}")
    n = max(1, int(math.ceil((t1 - t0) / dt_out - 1e-9)))
    return np.linspace(t0, t1, n + 1)


def _rk4_batch(field_: GuidanceField, starts: np.ndarray, t_out: np.ndarray, h: float):
    m, d = starts.shape
    out = np.empty((t_out.size, m, d))
    out[0] = starts
    pos = starts.copy()
    alive = np.ones(m, dtype=bool)
    last = np.zeros(m, dtype=int)
    halt_t = np.full(m, np.nan)
    halt_pt = np.full((m, d), np.nan)

    _, ok0 = field_(t_out[0], pos)
    dead = ~ok0
    alive[dead] = False
    halt_t[dead] = t_out[0]
    halt_pt[dead] = pos[dead]

    for k in range(1, t_out.size):
        ta, tb = t_out[k - 1], t_out[k]
        nsub = max(1, int(math.ceil((tb - ta) / h - 1e-9)))
        hh = (tb - ta) / nsub
        for s in range(nsub):
            if not alive.any():
                break
            t = ta + s * hh
            idx = np.flatnonzero(alive)
            p = pos[idx]
            k1, o1 = field_(t, p)
            k2, o2 = field_(t + 0.5 * hh, p + 0.5 * hh * k1)
            k3, o3 = field_(t + 0.5 * hh, p + 0.5 * hh * k2)
            k4, o4 = field_(t + hh, p + hh * k3)
            ok = o1 & o2 & o3 & o4
            new = p + hh / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            pos[idx[ok]] = new[ok]
            if not ok.all():
                gone = idx[~ok]
                alive[gone] = False
                halt_t[gone] = t
                halt_pt[gone] = p[~ok]
        out[k] = pos
        last[alive] = k
    return out, last, halt_t, halt_pt


def _assemble(t_out, out, last, halt_t, halt_pt, j: int) -> Trajectory:
    halted = None
    if np.isfinite(halt_t[j]):
        halted = {"time": float(halt_t[j]), "point": [float(v) for v in halt_pt[j]]}
    k = int(last[j])
    if k == 0:
        # halted inside the first output interval: keep the start and the halt point
        if halted is not None and halted["time"] > t_out[0]:
            return Trajectory(np.array([t_out[0], halted["time"]]),
                              np.vstack([out[0, j], halt_pt[j]]), halted)
        return Trajectory(t_out[:1], out[:1, j], halted)
    return Trajectory(t_out[:k + 1], out[:k + 1, j], halted)


def _default_step(series: SnapshotSeries) -> float:
    return float(np.min(np.diff(series.times))) / 4.0


def integrate_trajectory(snapshots: Union[SnapshotSeries, GuidanceField], start: Sequence[float],
                         dt_out: float, h: Optional[float] = None) -> Trajectory:
    gf = snapshots if isinstance(snapshots, GuidanceField) else GuidanceField(snapshots)
    series = gf.series
    t_out = output_times(series.t0, series.t1, dt_out)
    starts = np.atleast_2d(np.asarray(start, dtype=float))
    if starts.shape[1] != gf.dim:
        raise ConfigError(f"start point has dimension {starts.shape[1]}, field has {gf.dim}")
    out, last, ht, hp = _rk4_batch(gf, starts, t_out, h or _default_step(series))
    if np.isfinite(ht[0]):
        raise NodeEncounter(float(ht[0]), tuple(hp[0]))
    return _assemble(t_out, out, last, ht, hp, 0)


def integrate_ensemble(snapshots: Union[SnapshotSeries, GuidanceField], starts: np.ndarray, dt_out: float,
                       workers: int = 1, h: Optional[float] = None,
                       batch: int = DEFAULT_BATCH) -> Tuple[List[Trajectory], List[Optional[NodeEncounter]]]:
    """Integrate many starts; halted members are truncated and reported, not raised."""
    gf = snapshots if isinstance(snapshots, GuidanceField) else GuidanceField(snapshots)
    series = gf.series
    starts = np.asarray(starts, dtype=float)
    if starts.ndim == 1:
        starts = starts[:, None]
    t_out = output_times(series.t0, series.t1, dt_out)
    step = h or _default_step(series)
    chunks = [starts[i:i + batch] for i in range(0, starts.shape[0], batch)]
    log(f"[info] integrating {starts.shape[0]} trajectories in {len(chunks)} batches")
    results = Parallel(n_jobs=workers, prefer="threads", verbose=0)(
        delayed(_rk4_batch)(gf, c, t_out, step) for c in chunks
    )
    trajs: List[Trajectory] = []
    reports: List[Optional[NodeEncounter]] = []
    for (out, last, ht, hp), c in zip(results, chunks):
        for j in range(c.shape[0]):
            tr = _assemble(t_out, out, last, ht, hp, j)
            trajs.append(tr)
            reports.append(NodeEncounter(float(ht[j]), tuple(hp[j])) if np.isfinite(ht[j]) else None)
    halted = sum(r is not None for r in reports)
    if halted:
        log(f"[warn] {halted} trajectories halted at density nodes")
    return trajs, reports


# ------------------------------------------------------------------ sampling

def _cell_cdf(grid: Grid1D, rho: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    edges = np.append(grid.x - 0.5 * grid.dx, grid.x[-1] + 0.5 * grid.dx)
    cdf = np.concatenate([[0.0], np.cumsum(rho)])
    return edges, cdf / cdf[-1]


def density_cdf(psi) -> callable:
    """Piecewise-linear CDF of |psi|^2 (x marginal for 2D fields)."""
    if isinstance(psi, WaveFunction2D):
        grid, rho = psi.grid_x, psi.marginal_x()
    else:
        grid, rho = psi.grid, psi.density()
    edges, cdf = _cell_cdf(grid, rho)
    return lambda x: np.interp(x, edges, cdf)


def _inverse_cdf(grid: Grid1D, rho: np.ndarray, u: np.ndarray) -> np.ndarray:
    edges, cdf = _cell_cdf(grid, rho)
    keep = np.concatenate([[True], np.diff(cdf) > 0])
    return np.interp(u, cdf[keep], edges[keep])


def density_quantile(psi, u) -> np.ndarray:
    """Inverse of density_cdf; u=0.5 gives the median of |psi|^2."""
    if isinstance(psi, WaveFunction2D):
        grid, rho = psi.grid_x, psi.marginal_x()
    else:
        grid, rho = psi.grid, psi.density()
    return _inverse_cdf(grid, rho, np.asarray(u, dtype=float))


def sample_initial(source, spec: EnsembleSpec) -> np.ndarray:
    """Starting configurations: (n,) for 1D sources, (n, 2) for 2D fields."""
    rng = np.random.default_rng(spec.seed)
    n = int(spec.n_samples)
    if spec.sampling == "uniform":
        if isinstance(source, PacketSpec):
            a, b = source.center - 0.5 * source.width, source.center + 0.5 * source.width
        elif isinstance(source, (tuple, list)) and len(source) == 2:
            a, b = float(source[0]), float(source[1])
        else:
            raise ConfigError("uniform sampling needs a rectangular PacketSpec or an (a, b) support")
        return rng.uniform(a, b, size=n)
    if isinstance(source, WaveFunction2D):
        gx, gq = source.grid_x, source.grid_q
        rho = source.density()
        xs = _inverse_cdf(gx, rho.sum(axis=1), rng.uniform(size=n))
        u2 = rng.uniform(size=n)
        rows = np.clip(np.round((xs - gx.x_min) / gx.dx).astype(int), 0, gx.n - 1)
        qs = np.empty(n)
        for r in np.unique(rows):
            sel = rows == r
            qs[sel] = _inverse_cdf(gq, rho[r], u2[sel])
        return np.column_stack([xs, qs])
    if isinstance(source, (WaveFunction1D, SpinorWaveFunction1D)):
        return _inverse_cdf(source.grid, source.density(), rng.uniform(size=n))
    raise ConfigError(f"cannot sample from {type(source).__name__}")


# ------------------------------------------------------------------ checks

def equivariance_ks(series: SnapshotSeries, trajectories: Sequence[Trajectory]) -> Tuple[float, float]:
    """KS statistic (and p-value) of transported final positions against |psi(t1)|^2."""
    finals = [tr.x[-1] for tr in trajectories if tr.halted is None and abs(tr.times[-1] - series.t1) < 1e-9]
    if not finals:
        raise ConfigError("no trajectory reached the end of the series")
    res = kstest(np.asarray(finals), density_cdf(series.final()))
    return float(res.statistic), float(res.pvalue)


def check_non_crossing(trajectories: Sequence[Trajectory]) -> Tuple[bool, Optional[float]]:
    """1D ordering check over the common time prefix; returns (ok, first violation time)."""
    if len(trajectories) < 2:
        return True, None
    k = min(tr.times.size for tr in trajectories)
    X = np.vstack([tr.x[:k] for tr in trajectories])
    order = np.argsort(X[:, 0], kind="stable")
    X = X[order]
    gaps = np.diff(X, axis=0)
    bad = np.flatnonzero((gaps <= 0).any(axis=0))
    if bad.size:
        return False, float(trajectories[0].times[bad[0]])
    return True, None


# ------------------------------------------------------------------ files

def write_trajectories(out_dir: Path, trajectories: Sequence[Trajectory], labels: Optional[List[dict]] = None) -> None:
    out_dir = Path(out_dir)
    runio.ensure_dir(out_dir)
    rows = []
    for i, tr in enumerate(trajectories):
        name = f"traj_{i:05d}.csv"
        tr.to_frame().to_csv(out_dir / name, index=False, float_format="%.17g")
        row = {"id": i, "file": name, "n_points": tr.times.size,
               "halted": tr.halted is not None,
               "t_halt": tr.halted["time"] if tr.halted else ""}
        if labels is not None:
            row.update(labels[i])
        rows.append(row)
    pd.DataFrame(rows).to_csv(out_dir / "index.csv", index=False, float_format="%.17g")


def read_trajectories(out_dir: Path) -> Tuple[List[Trajectory], pd.DataFrame]:
    out_dir = Path(out_dir)
    index = pd.read_csv(out_dir / "index.csv")
    trajs = []
    for _, row in index.iterrows():
        df = pd.read_csv(out_dir / row["file"])
        pts = df[[c for c in ("x", "q") if c in df.columns]].to_numpy()
        halted = None
        if bool(row["halted"]):
            halted = {"time": float(row["t_halt"]), "point": [float(v) for v in pts[-1]]}
        trajs.append(Trajectory(df["t"].to_numpy(), pts, halted))
    return trajs, index
