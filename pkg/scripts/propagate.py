"""
Split-step (Strang) propagation of 1D, spinor and particle+pointer fields.

Couplings between the particle x and the pointer q:
  position_shift  H = g(t) P Pi_V(x)   diagonal in (x, p_q)
  momentum_kick   H = g(t) Q Pi_V(x)   diagonal in (x, q)
Each substep applies the exact impulse G(t_b) - G(t_a) of the coupling
profile, so a pulse is reproduced exactly whatever the step size.

One full 2D step over [t, t + dt]:
  A/2 in (x, q)    : static V(x), momentum kick
  B/2 in (x, p_q)  : position shift, p_q^2 / 2M
  T_x in (k_x, .)  : p_x^2 / 2
  B/2, A/2         : second halves on [t + dt/2, t + dt]
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
from scipy import fft as sfft

import runio
from errors import BoundaryLeakError, ConfigError
from qfield import (
    AnyField,
    Grid1D,
    PacketSpec,
    SpinorWaveFunction1D,
    WaveFunction1D,
    WaveFunction2D,
    build_packet,
    indicator,
    packet_width,
    read_field,
    write_field,
)
from runio import log

EDGE_DENSITY_LIMIT = 1e-8
PHASE_BUDGET = 0.5
BAND_TAIL = 1e-8
DEFAULT_STRIDE = 10
SPREAD_LIMIT = 0.02
COUPLING_KINDS = ("position_shift", "momentum_kick")


# ------------------------------------------------------------------ profiles

@dataclass(frozen=True)
class GProfile:
    """Coupling time profile normalized to unit total impulse."""

    shape: str
    t_on: float = 0.0
    t_off: float = 1.0
    T: float = 1.0
    ramp: float = 0.0

    def __post_init__(self):
        if self.shape == "square":
            if not self.t_off > self.t_on:
                raise ConfigError(f"square profile needs t_off > t_on, got [{self.t_on}, {self.t_off}]")
        elif self.shape == "smooth_adiabatic":
            if not self.T > 0:
                raise ConfigError(f"adiabatic profile needs T > 0, got T={self.T}")
            if not 0.0 < self.ramp <= 0.5 * self.T:
                raise ConfigError(f"adiabatic ramp must lie in (0, T/2], got ramp={self.ramp}, T={self.T}")
        else:
            raise ConfigError(f"unknown coupling profile: {self.shape!r}")

    @classmethod
    def square(cls, t_on: float, t_off: float) -> "GProfile":
        return cls("square", t_on=t_on, t_off=t_off)

    @classmethod
    def smooth_adiabatic(cls, T: float, ramp: float) -> "GProfile":
        return cls("smooth_adiabatic", t_on=0.0, t_off=T, T=T, ramp=ramp)

    @property
    def span(self) -> Tuple[float, float]:
        return (self.t_on, self.t_off) if self.shape == "square" else (0.0, self.T)

    @property
    def plateau(self) -> float:
        if self.shape == "square":
            return 1.0 / (self.t_off - self.t_on)
        return 1.0 / (self.T - self.ramp)

    def rate(self, t: float) -> float:
        if self.shape == "square":
            return self.plateau if self.t_on <= t < self.t_off else 0.0
        if t <= 0.0 or t >= self.T:
            return 0.0
        r, g0 = self.ramp, self.plateau
        if t < r:
            return g0 * math.sin(0.5 * math.pi * t / r) ** 2
        if t > self.T - r:
            return g0 * math.sin(0.5 * math.pi * (self.T - t) / r) ** 2
        return g0

    def cumulative(self, t: float) -> float:
        """Exact antiderivative, 0 before the profile and 1 after it."""
        if self.shape == "square":
            return min(max((t - self.t_on) / (self.t_off - self.t_on), 0.0), 1.0)
        if t <= 0.0:
            return 0.0
        if t >= self.T:
            return 1.0
        r, g0 = self.ramp, self.plateau

        def up(s: float) -> float:
            return g0 * (0.5 * s - r / (2.0 * math.pi) * math.sin(math.pi * s / r))

        if t < r:
            return up(t)
        if t <= self.T - r:
            return up(r) + g0 * (t - r)
        return 1.0 - up(self.T - t)

    def describe(self) -> dict:
        if self.shape == "square":
            return {"shape": "square", "t_on": self.t_on, "t_off": self.t_off}
        return {"shape": "smooth_adiabatic", "T": self.T, "ramp": self.ramp}


def profile_from_dict(d: dict) -> GProfile:
    shape = d.get("shape")
    if shape == "square":
        return GProfile.square(float(d["t_on"]), float(d["t_off"]))
    if shape == "smooth_adiabatic":
        return GProfile.smooth_adiabatic(float(d["T"]), float(d["ramp"]))
    raise ConfigError(f"unknown coupling profile: {shape!r}")


@dataclass(frozen=True)
class CouplingSpec:
    kind: str
    region: Tuple[float, float]
    profile: GProfile
    strength: float

    def __post_init__(self):
        if self.kind not in COUPLING_KINDS:
            raise ConfigError(f"unknown coupling kind: {self.kind!r}")
        a, b = self.region
        if not b > a:
            raise ConfigError(f"coupling region needs b > a, got [{a}, {b}]")
        if not math.isfinite(self.strength):
            raise ConfigError(f"coupling strength must be finite, got {self.strength}")

    def rate(self, t: float) -> float:
        return self.strength * self.profile.rate(t)

    def impulse(self, ta: float, tb: float) -> float:
        return self.strength * (self.profile.cumulative(tb) - self.profile.cumulative(ta))

    def inside(self, x: np.ndarray) -> np.ndarray:
        """Pi_V at arbitrary positions, same edge rule as qfield.indicator."""
        a, b = self.region
        x = np.asarray(x, dtype=float)
        out = np.where((x > a) & (x < b), 1.0, 0.0)
        return np.where((x == a) | (x == b), 0.5, out)

    def describe(self) -> dict:
        return {"kind": self.kind, "region": list(self.region),
                "profile": self.profile.describe(), "strength": self.strength}


def coupling_from_dict(d: Optional[dict]) -> Optional[CouplingSpec]:
    if not d:
        return None
    try:
        return CouplingSpec(d["kind"], (float(d["region"][0]), float(d["region"][1])),
                            profile_from_dict(d["profile"]), float(d["strength"]))
    except KeyError as e:
        raise ConfigError(f"coupling spec missing field {e}") from e


@dataclass(frozen=True)
class Hamiltonian2DConfig:
    kinetic_x: bool = True
    kinetic_q: bool = True
    potential_x: Optional[np.ndarray] = field(default=None, compare=False)
    coupling: Optional[CouplingSpec] = None
    mass_q: float = 1.0

    def __post_init__(self):
        if not (self.kinetic_x or self.kinetic_q or self.potential_x is not None or self.coupling is not None):
            raise ConfigError("Hamiltonian has no active term")
        if not self.mass_q > 0:
            raise ConfigError(f"pointer mass must be positive, got {self.mass_q}")

    def describe(self) -> dict:
        return {
            "kinetic_x": self.kinetic_x,
            "kinetic_q": self.kinetic_q,
            "has_potential": self.potential_x is not None,
            "coupling": self.coupling.describe() if self.coupling else None,
            "mass_q": self.mass_q,
        }


# ------------------------------------------------------------------ kinetic factors

def _kinetic_1d(amp: np.ndarray, grid: Grid1D, tau: float, axis: int, mass: float = 1.0) -> np.ndarray:
    """exp(-i tau p^2 / 2m) along one axis (Fourier or sine basis)."""
    if grid.is_box:
        a = np.moveaxis(amp, axis, 0)
        phase = np.exp(-0.5j * tau * grid.box_modes ** 2 / mass)
        phase = phase.reshape((-1,) + (1,) * (a.ndim - 1))
        c = sfft.dst(a.real[1:], type=1, axis=0, norm="ortho") + 1j * sfft.dst(a.imag[1:], type=1, axis=0, norm="ortho")
        c = c * phase
        out = np.zeros_like(a)
        out[1:] = sfft.dst(c.real, type=1, axis=0, norm="ortho") + 1j * sfft.dst(c.imag, type=1, axis=0, norm="ortho")
        return np.moveaxis(out, 0, axis)
    shape = [1] * amp.ndim
    shape[axis] = grid.n
    phase = np.exp(-0.5j * tau * grid.k ** 2 / mass).reshape(shape)
    return sfft.ifft(phase * sfft.fft(amp, axis=axis), axis=axis)


class SplitStep1D:
    """One Strang step exp(-iV dt/2) exp(-iT dt) exp(-iV dt/2) on a 1D grid."""

    def __init__(self, grid: Grid1D, potential: Optional[np.ndarray], dt: float):
        self.grid = grid
        self.dt = dt
        V = np.zeros(grid.n) if potential is None else np.asarray(potential, dtype=float)
        if V.shape != (grid.n,):
            raise ConfigError(f"potential shape {V.shape} does not match grid n={grid.n}")
        self._half_v = np.exp(-0.5j * dt * V)

    def __call__(self, amp: np.ndarray) -> np.ndarray:
        amp = amp * self._half_v
        amp = _kinetic_1d(amp, self.grid, self.dt, axis=0)
        return amp * self._half_v


class SplitStep2D:
    def __init__(self, grid_x: Grid1D, grid_q: Grid1D, cfg: Hamiltonian2DConfig, dt: float):
        if grid_q.is_box:
            raise ConfigError("the pointer axis must be periodic")
        self.gx, self.gq, self.cfg, self.dt = grid_x, grid_q, cfg, dt
        V = np.zeros(grid_x.n) if cfg.potential_x is None else np.asarray(cfg.potential_x, dtype=float)
        if V.shape != (grid_x.n,):
            raise ConfigError(f"potential shape {V.shape} does not match grid n={grid_x.n}")
        self._half_v = np.exp(-0.5j * dt * V)[:, None]
        c = cfg.coupling
        self._pi_v = indicator(grid_x, c.region)[:, None] if c is not None else None
        self._q = grid_q.x[None, :]
        self._pq = grid_q.k[None, :]
        self._half_tq = np.exp(-0.25j * dt * grid_q.k ** 2 / cfg.mass_q)[None, :]

    def _a(self, amp: np.ndarray, ta: float, tb: float) -> np.ndarray:
        amp = amp * self._half_v
        c = self.cfg.coupling
        if c is not None and c.kind == "momentum_kick":
            G = c.impulse(ta, tb)
            if G != 0.0:
                amp = amp * np.exp(-1j * G * self._q * self._pi_v)
        return amp

    def _b(self, amp: np.ndarray, ta: float, tb: float) -> np.ndarray:
        c = self.cfg.coupling
        G = c.impulse(ta, tb) if (c is not None and c.kind == "position_shift") else 0.0
        if G == 0.0 and not self.cfg.kinetic_q:
            return amp
        ap = sfft.fft(amp, axis=1)
        if G != 0.0:
            ap = ap * np.exp(-1j * G * self._pq * self._pi_v)
        if self.cfg.kinetic_q:
            ap = ap * self._half_tq
        return sfft.ifft(ap, axis=1)

    def __call__(self, amp: np.ndarray, t: float) -> np.ndarray:
        tm, te = t + 0.5 * self.dt, t + self.dt
        amp = self._a(amp, t, tm)
        amp = self._b(amp, t, tm)
        if self.cfg.kinetic_x:
            amp = _kinetic_1d(amp, self.gx, self.dt, axis=0)
        amp = self._b(amp, tm, te)
        return self._a(amp, tm, te)


class SplitStepSpinor:
    """Free (plus optional V) motion with opposite x-kicks on the two spin components."""

    def __init__(self, grid: Grid1D, coupling: CouplingSpec, dt: float, gradient: int = 1,
                 potential: Optional[np.ndarray] = None):
        if gradient not in (1, -1):
            raise ConfigError(f"gradient must be +1 or -1, got {gradient}")
        if coupling.kind != "momentum_kick":
            raise ConfigError("spinor evolution uses a momentum_kick coupling")
        self.grid, self.coupling, self.dt, self.gradient = grid, coupling, dt, gradient
        self._scalar = SplitStep1D(grid, potential, dt)
        self._pi_v = indicator(grid, coupling.region)

    def _kick(self, up: np.ndarray, down: np.ndarray, ta: float, tb: float):
        G = self.coupling.impulse(ta, tb)
        if G == 0.0:
            return up, down
        toward_plus = np.exp(1j * G * self.grid.x * self._pi_v)
        toward_minus = np.exp(-1j * G * self.grid.x * self._pi_v)
        if self.gradient == 1:
            return up * toward_plus, down * toward_minus
        return up * toward_minus, down * toward_plus

    def __call__(self, up: np.ndarray, down: np.ndarray, t: float):
        tm, te = t + 0.5 * self.dt, t + self.dt
        up, down = self._kick(up, down, t, tm)
        up, down = self._scalar(up), self._scalar(down)
        return self._kick(up, down, tm, te)


# ------------------------------------------------------------------ guards

def edge_band(n: int) -> int:
    return max(4, n // 32)


def _edge_ratio(marginal: np.ndarray) -> float:
    peak = float(np.max(marginal))
    if peak <= 0.0:
        return 0.0
    b = edge_band(marginal.size)
    edge = max(float(np.max(marginal[:b])), float(np.max(marginal[-b:])))
    return edge / peak


def check_boundary(psi: AnyField, time: float = 0.0, limit: float = EDGE_DENSITY_LIMIT) -> float:
    """Largest edge-band density relative to the peak over periodic axes; raises past `limit`."""
    worst = 0.0
    if isinstance(psi, WaveFunction2D):
        axes = [(psi.grid_x, psi.marginal_x()), (psi.grid_q, psi.marginal_q())]
    else:
        axes = [(psi.grid, psi.density())]
    for grid, marg in axes:
        if grid.is_box:
            continue
        worst = max(worst, _edge_ratio(marg))
    if worst > limit:
        raise BoundaryLeakError(time, worst)
    return worst


def resolved_bandwidth(amp: np.ndarray, grid: Grid1D, axis: int = 0, tail: float = BAND_TAIL) -> float:
    """Largest |k| inside the band holding all but `tail` of the spectral power."""
    a = np.moveaxis(np.asarray(amp), axis, 0)
    if grid.is_box:
        c = sfft.dst(a.real[1:], type=1, axis=0) ** 2 + sfft.dst(a.imag[1:], type=1, axis=0) ** 2
        power = c.reshape(c.shape[0], -1).sum(axis=1)
        k = np.array(grid.box_modes)
    else:
        power = (np.abs(sfft.fft(a, axis=0)) ** 2).reshape(grid.n, -1).sum(axis=1)
        k = np.abs(grid.k)
    total = power.sum()
    if total <= 0.0:
        return 0.0
    order = np.argsort(k)
    cum = np.cumsum(power[order])
    idx = int(np.searchsorted(cum, (1.0 - tail) * total))
    return float(k[order][min(idx, k.size - 1)])


def suggest_dt(psi: AnyField, cfg: Optional[Hamiltonian2DConfig] = None,
               potential: Optional[np.ndarray] = None, budget: float = PHASE_BUDGET) -> float:
    """Step whose largest per-step phase from kinetic, potential and coupling terms stays under `budget`."""
    rates = []
    if isinstance(psi, WaveFunction2D):
        cfg = cfg or Hamiltonian2DConfig()
        kx = resolved_bandwidth(psi.amp, psi.grid_x, axis=0)
        kq = resolved_bandwidth(psi.amp, psi.grid_q, axis=1)
        if cfg.kinetic_x:
            rates.append(0.5 * kx ** 2)
        if cfg.kinetic_q:
            rates.append(0.5 * kq ** 2 / cfg.mass_q)
        if cfg.potential_x is not None:
            rates.append(float(np.max(np.abs(cfg.potential_x))))
        c = cfg.coupling
        if c is not None:
            g = abs(c.strength) * c.profile.plateau
            reach = kq if c.kind == "position_shift" else float(np.max(np.abs(psi.grid_q.x)))
            rates.append(g * reach)
    else:
        grid = psi.grid
        amps = [psi.amp] if isinstance(psi, WaveFunction1D) else [psi.up, psi.down]
        k = max(resolved_bandwidth(a, grid) for a in amps)
        rates.append(0.5 * k ** 2)
        if potential is not None:
            rates.append(float(np.max(np.abs(potential))))
    top = max(rates) if rates else 0.0
    return budget / top if top > 0 else budget


def _warn_dt(dt: float, psi: AnyField, cfg=None, potential=None) -> None:
    ok = suggest_dt(psi, cfg, potential)
    if dt > ok * (1 + 1e-9):
        log(f"[warn] dt={dt:.4g} exceeds the phase budget step {ok:.4g}")


def _steps(duration: float, dt: float) -> Tuple[int, float]:
    if not duration >= 0.0:
        raise ConfigError(f"duration must be non-negative, got {duration}")
    if not dt > 0.0:
        raise ConfigError(f"dt must be positive, got {dt}")
    n = max(1, int(math.ceil(duration / dt - 1e-9))) if duration > 0 else 0
    return n, (duration / n if n else dt)


# ------------------------------------------------------------------ snapshot series

@dataclass(frozen=True)
class SnapshotSeries:
    times: np.ndarray
    fields: Tuple[AnyField, ...]
    hamiltonian: Optional[Hamiltonian2DConfig] = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        t = np.array(self.times, dtype=float)
        if t.ndim != 1 or t.size != len(self.fields) or t.size < 2:
            raise ConfigError("snapshot series needs at least two (time, field) pairs")
        if np.any(np.diff(t) <= 0):
            raise ConfigError("snapshot times must be strictly increasing")
        t.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "fields", tuple(self.fields))

    @property
    def t0(self) -> float:
        return float(self.times[0])

    @property
    def t1(self) -> float:
        return float(self.times[-1])

    def final(self) -> AnyField:
        return self.fields[-1]

    def save(self, out_dir: Path) -> None:
        out_dir = Path(out_dir)
        runio.ensure_dir(out_dir)
        names = []
        for i, f in enumerate(self.fields):
            name = f"field_{i:05d}.txt"
            write_field(out_dir / name, f)
            names.append(name)
        h = self.hamiltonian
        if h is not None and h.potential_x is not None:
            np.savetxt(out_dir / "potential_x.txt", np.asarray(h.potential_x), fmt="%.17g")
        runio.write_json(out_dir / "manifest.json", {
            "times": [float(t) for t in self.times],
            "files": names,
            "hamiltonian": h.describe() if h is not None else None,
            "meta": self.meta,
        })

    @classmethod
    def load(cls, out_dir: Path) -> "SnapshotSeries":
        out_dir = Path(out_dir)
        man = runio.read_json(out_dir / "manifest.json")
        fields = [read_field(out_dir / name) for name in man["files"]]
        h = None
        hd = man.get("hamiltonian")
        if hd is not None:
            pot = None
            if hd.get("has_potential"):
                pot = np.loadtxt(out_dir / "potential_x.txt")
            h = Hamiltonian2DConfig(
                kinetic_x=hd["kinetic_x"], kinetic_q=hd["kinetic_q"], potential_x=pot,
                coupling=coupling_from_dict(hd.get("coupling")), mass_q=hd["mass_q"],
            )
        return cls(np.array(man["times"]), tuple(fields), h, man.get("meta", {}))


# ------------------------------------------------------------------ evolution

def evolve_1d(psi: WaveFunction1D, potential: Optional[np.ndarray], t: float, dt: float,
              check_every: int = DEFAULT_STRIDE) -> WaveFunction1D:
    if t == 0:
        return psi
    series = evolve_1d_series(psi, potential, 0.0, t, dt, stride=check_every)
    return series.final()


def evolve_1d_series(psi: WaveFunction1D, potential: Optional[np.ndarray], t0: float, t1: float,
                     dt: float, stride: int = DEFAULT_STRIDE) -> SnapshotSeries:
    nsteps, dt = _steps(t1 - t0, dt)
    _warn_dt(dt, psi, potential=potential)
    step = SplitStep1D(psi.grid, potential, dt)
    check_boundary(psi, t0)
    amp = np.array(psi.amp)
    times, fields = [t0], [psi]
    for i in range(1, nsteps + 1):
        amp = step(amp)
        if i % stride == 0 or i == nsteps:
            t = t0 + i * dt
            cur = WaveFunction1D(psi.grid, amp)
            check_boundary(cur, t)
            times.append(t)
            fields.append(cur)
            runio.progress(i, nsteps, t)
    return SnapshotSeries(np.array(times), tuple(fields), None, {"dt": dt, "stride": stride})


def evolve_2d(Psi: WaveFunction2D, cfg: Hamiltonian2DConfig, t0: float, t1: float, dt: float,
              stride: Optional[int] = DEFAULT_STRIDE, snapshots: bool = False
              ) -> Union[WaveFunction2D, SnapshotSeries]:
    """Evolve the composite field from t0 to t1; with snapshots=True return every stride-th step."""
    nsteps, dt = _steps(t1 - t0, dt)
    _warn_dt(dt, Psi, cfg)
    step = SplitStep2D(Psi.grid_x, Psi.grid_q, cfg, dt)
    stride = stride or DEFAULT_STRIDE
    check_boundary(Psi, t0)
    amp = np.array(Psi.amp)
    times, fields = [t0], [Psi]
    cur = Psi
    for i in range(1, nsteps + 1):
        amp = step(amp, t0 + (i - 1) * dt)
        if i % stride == 0 or i == nsteps:
            t = t0 + i * dt
            cur = WaveFunction2D(Psi.grid_x, Psi.grid_q, amp)
            check_boundary(cur, t)
            if snapshots:
                times.append(t)
                fields.append(cur)
            runio.progress(i, nsteps, t)
    if not snapshots:
        return cur
    return SnapshotSeries(np.array(times), tuple(fields), cfg, {"dt": dt, "stride": stride})


def evolve_spinor(psi: SpinorWaveFunction1D, coupling: CouplingSpec, t0: float, t1: float, dt: float,
                  gradient: int = 1, stride: int = DEFAULT_STRIDE,
                  potential: Optional[np.ndarray] = None) -> SnapshotSeries:
    nsteps, dt = _steps(t1 - t0, dt)
    _warn_dt(dt, psi, potential=potential)
    step = SplitStepSpinor(psi.grid, coupling, dt, gradient, potential)
    check_boundary(psi, t0)
    up, down = np.array(psi.up), np.array(psi.down)
    times, fields = [t0], [psi]
    for i in range(1, nsteps + 1):
        up, down = step(up, down, t0 + (i - 1) * dt)
        if i % stride == 0 or i == nsteps:
            t = t0 + i * dt
            cur = SpinorWaveFunction1D(psi.grid, up, down)
            check_boundary(cur, t)
            times.append(t)
            fields.append(cur)
            runio.progress(i, nsteps, t)
    return SnapshotSeries(np.array(times), tuple(fields), None,
                          {"dt": dt, "stride": stride, "gradient": gradient,
                           "coupling": coupling.describe()})


def spreading_check(grid: Grid1D, packet: PacketSpec, duration: float, dt: Optional[float] = None) -> float:
    """Relative width growth of one free packet over `duration`."""
    psi = build_packet(grid, PacketSpec(packet.shape, packet.center, packet.width, packet.velocity,
                                        1.0, packet.smoothing))
    dt = dt or suggest_dt(psi)
    w0 = packet_width(psi)
    w1 = packet_width(evolve_1d(psi, None, duration, dt))
    growth = (w1 - w0) / w0
    if growth > 0.75 * SPREAD_LIMIT:
        log(f"[warn] packet spreading {growth:.2%} is close to the {SPREAD_LIMIT:.0%} bar")
    return growth


def norm_drift(series: SnapshotSeries) -> float:
    n0 = series.fields[0].norm()
    return max(abs(f.norm() - n0) for f in series.fields)
