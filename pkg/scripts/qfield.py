"""
Grids, wavefunctions and packet constructors (hbar = m = 1).

A Grid1D is either periodic (plain FFT axis) or box-walled: a box axis
stores nodes x_min + j*dx for j = 0..n-1, the node at x_min is a hard wall
(psi = 0 there) and a second wall sits at x_max. Box axes are handled with
the odd extension / discrete sine basis so particle-in-a-box states are
exact on the grid.

Fields are immutable: amplitude arrays are copied and frozen on construction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import fft as sfft
from scipy.special import erf

from errors import ConfigError, DomainError

NORM_TOL = 1e-10
SUPPORT_WIDTHS = 4.0
DEFAULT_SMOOTHING_DX = 4.0
MIN_SMOOTHING_DX = 2.0
BOUNDARIES = ("periodic", "box")


def _frozen(a: np.ndarray, dtype=np.complex128) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Grid1D:
    x_min: float
    x_max: float
    n: int
    boundary: str = "periodic"

    def __post_init__(self):
        if self.boundary not in BOUNDARIES:
            raise ConfigError(f"unknown grid boundary: {self.boundary!r}")
        n = int(self.n)
        if n < 64 or n & (n - 1):
            raise ConfigError(f"grid size must be a power of two >= 64, got n={self.n}")
        if not (math.isfinite(self.x_min) and math.isfinite(self.x_max)) or self.x_max <= self.x_min:
            raise ConfigError(f"grid needs x_max > x_min, got [{self.x_min}, {self.x_max}]")

    @property
    def length(self) -> float:
        return float(self.x_max - self.x_min)

    @property
    def dx(self) -> float:
        return self.length / self.n

    @property
    def is_box(self) -> bool:
        return self.boundary == "box"

    @cached_property
    def x(self) -> np.ndarray:
        x = self.x_min + self.dx * np.arange(self.n)
        x.setflags(write=False)
        return x

    @cached_property
    def k(self) -> np.ndarray:
        """Angular wavenumbers of the FFT axis (periodic grids), Nyquist included."""
        k = 2.0 * np.pi * sfft.fftfreq(self.n, d=self.dx)
        k.setflags(write=False)
        return k

    @cached_property
    def box_modes(self) -> np.ndarray:
        """Sine-mode wavenumbers m*pi/L, m = 1..n-1, for the interior nodes of a box axis."""
        m = np.arange(1, self.n)
        km = m * np.pi / self.length
        km.setflags(write=False)
        return km

    def k_max(self) -> float:
        return np.pi / self.dx

    def contains(self, a: float, b: float) -> bool:
        return a >= self.x_min and b <= self.x_max

    def describe(self) -> dict:
        return {"x_min": self.x_min, "x_max": self.x_max, "n": self.n, "boundary": self.boundary}


def grid_from_dict(d: dict) -> Grid1D:
    try:
        return Grid1D(float(d["x_min"]), float(d["x_max"]), int(d["n"]), d.get("boundary", "periodic"))
    except KeyError as e:
        raise ConfigError(f"grid missing field {e}") from e


@dataclass(frozen=True)
class WaveFunction1D:
    grid: Grid1D
    amp: np.ndarray

    def __post_init__(self):
        a = _frozen(self.amp)
        if a.shape != (self.grid.n,):
            raise ConfigError(f"amplitude shape {a.shape} does not match grid n={self.grid.n}")
        if not np.all(np.isfinite(a)):
            raise DomainError("wavefunction has non-finite amplitudes")
        object.__setattr__(self, "amp", a)

    def density(self) -> np.ndarray:
        return np.abs(self.amp) ** 2

    def norm(self) -> float:
        return float(np.sum(self.density()) * self.grid.dx)

    def normalized(self) -> "WaveFunction1D":
        nrm = self.norm()
        if nrm <= 0.0:
            raise DomainError("cannot normalize a zero wavefunction")
        return WaveFunction1D(self.grid, self.amp / math.sqrt(nrm))

    def inner(self, other: "WaveFunction1D") -> complex:
        return complex(np.vdot(self.amp, other.amp) * self.grid.dx)


@dataclass(frozen=True)
class WaveFunction2D:
    """Composite particle (axis 0) and pointer (axis 1) amplitude."""

    grid_x: Grid1D
    grid_q: Grid1D
    amp: np.ndarray

    def __post_init__(self):
        a = _frozen(self.amp)
        if a.shape != (self.grid_x.n, self.grid_q.n):
            raise ConfigError(f"amplitude shape {a.shape} does not match grids "
                              f"({self.grid_x.n}, {self.grid_q.n})")
        if not np.all(np.isfinite(a)):
            raise DomainError("wavefunction has non-finite amplitudes")
        object.__setattr__(self, "amp", a)

    @classmethod
    def product(cls, psi: WaveFunction1D, phi: WaveFunction1D) -> "WaveFunction2D":
        return cls(psi.grid, phi.grid, np.outer(psi.amp, phi.amp))

    @property
    def cell(self) -> float:
        return self.grid_x.dx * self.grid_q.dx

    def density(self) -> np.ndarray:
        return np.abs(self.amp) ** 2

    def norm(self) -> float:
        return float(np.sum(self.density()) * self.cell)

    def normalized(self) -> "WaveFunction2D":
        nrm = self.norm()
        if nrm <= 0.0:
            raise DomainError("cannot normalize a zero wavefunction")
        return WaveFunction2D(self.grid_x, self.grid_q, self.amp / math.sqrt(nrm))

    def marginal_x(self) -> np.ndarray:
        return self.density().sum(axis=1) * self.grid_q.dx

    def marginal_q(self) -> np.ndarray:
        return self.density().sum(axis=0) * self.grid_x.dx

    def pointer_mean(self) -> float:
        mq = self.marginal_q()
        return float(np.sum(self.grid_q.x * mq) / np.sum(mq))


@dataclass(frozen=True)
class SpinorWaveFunction1D:
    grid: Grid1D
    up: np.ndarray
    down: np.ndarray

    def __post_init__(self):
        up, down = _frozen(self.up), _frozen(self.down)
        for name, a in (("up", up), ("down", down)):
            if a.shape != (self.grid.n,):
                raise ConfigError(f"{name} component shape {a.shape} does not match grid n={self.grid.n}")
            if not np.all(np.isfinite(a)):
                raise DomainError(f"{name} component has non-finite amplitudes")
        object.__setattr__(self, "up", up)
        object.__setattr__(self, "down", down)

    @classmethod
    def from_spatial(cls, psi: WaveFunction1D, spin: Tuple[complex, complex]) -> "SpinorWaveFunction1D":
        a, b = spin
        s = math.sqrt(abs(a) ** 2 + abs(b) ** 2)
        return cls(psi.grid, psi.amp * (a / s), psi.amp * (b / s))

    def density(self) -> np.ndarray:
        return np.abs(self.up) ** 2 + np.abs(self.down) ** 2

    def norm(self) -> float:
        return float(np.sum(self.density()) * self.grid.dx)

    def normalized(self) -> "SpinorWaveFunction1D":
        s = math.sqrt(self.norm())
        return SpinorWaveFunction1D(self.grid, self.up / s, self.down / s)


AnyField = Union[WaveFunction1D, WaveFunction2D, SpinorWaveFunction1D]


@dataclass(frozen=True)
class PacketSpec:
    shape: str
    center: float
    width: float
    velocity: float = 0.0
    weight: float = 1.0
    smoothing: Optional[float] = None

    def __post_init__(self):
        if self.shape not in ("gaussian", "rectangular"):
            raise ConfigError(f"unknown packet shape: {self.shape!r}")
        if not self.width > 0:
            raise ConfigError(f"packet width must be positive, got {self.width}")
        if self.smoothing is not None and not self.smoothing > 0:
            raise ConfigError(f"smoothing must be positive, got {self.smoothing}")

    def edge_smoothing(self, grid: Grid1D) -> float:
        s = DEFAULT_SMOOTHING_DX * grid.dx if self.smoothing is None else float(self.smoothing)
        if s < MIN_SMOOTHING_DX * grid.dx * (1 - 1e-12):
            raise ConfigError(f"rectangular smoothing {s} is below {MIN_SMOOTHING_DX}*dx={MIN_SMOOTHING_DX * grid.dx}")
        if s >= self.width:
            raise ConfigError(f"rectangular smoothing {s} must be smaller than the width {self.width}")
        return s

    def support(self, grid: Optional[Grid1D] = None) -> Tuple[float, float]:
        if self.shape == "gaussian":
            h = SUPPORT_WIDTHS * self.width
        else:
            s = self.edge_smoothing(grid) if grid is not None else (self.smoothing or 0.0)
            h = 0.5 * self.width + 0.5 * s
        return self.center - h, self.center + h


def packet_from_dict(d: dict) -> PacketSpec:
    try:
        return PacketSpec(
            shape=d["shape"],
            center=float(d["center"]),
            width=float(d["width"]),
            velocity=float(d.get("velocity", 0.0)),
            weight=float(d.get("weight", 1.0)),
            smoothing=None if d.get("smoothing") is None else float(d["smoothing"]),
        )
    except KeyError as e:
        raise ConfigError(f"packet spec missing field {e}") from e


def smoothed_box(x: np.ndarray, center: float, width: float, smoothing: float) -> np.ndarray:
    """Raised-cosine box: 1 on the plateau, 0 outside, cosine edges of length `smoothing`."""
    r = np.abs(np.asarray(x, dtype=float) - center)
    inner = 0.5 * width - 0.5 * smoothing
    f = np.zeros_like(r)
    f[r <= inner] = 1.0
    edge = (r > inner) & (r < inner + smoothing)
    f[edge] = 0.5 * (1.0 + np.cos(np.pi * (r[edge] - inner) / smoothing))
    return f


def packet_shape(grid: Grid1D, spec: PacketSpec) -> np.ndarray:
    x = grid.x
    if spec.shape == "gaussian":
        env = np.exp(-((x - spec.center) ** 2) / (2.0 * spec.width ** 2))
    else:
        env = smoothed_box(x, spec.center, spec.width, spec.edge_smoothing(grid))
    return env * np.exp(1j * spec.velocity * x)


def build_packet(grid: Grid1D, spec: PacketSpec, normalize: bool = True) -> WaveFunction1D:
    a, b = spec.support(grid)
    lo = grid.x_min if not grid.is_box else grid.x_min + grid.dx
    if a < lo or b > grid.x_max - (grid.dx if grid.is_box else 0.0):
        raise DomainError(
            f"packet outside domain: support [{a:.6g}, {b:.6g}] exceeds grid [{grid.x_min}, {grid.x_max}]"
        )
    amp = packet_shape(grid, spec)
    if grid.is_box:
        amp[0] = 0.0
    psi = WaveFunction1D(grid, amp)
    if normalize:
        return psi.normalized()
    return WaveFunction1D(grid, spec.weight * amp)


def superpose(grid: Grid1D, specs: Sequence[PacketSpec], normalize: bool = True) -> WaveFunction1D:
    """Weighted sum of individually normalized packets."""
    if not specs:
        raise ConfigError("superpose needs at least one packet")
    total = np.zeros(grid.n, dtype=np.complex128)
    for spec in specs:
        if spec.weight == 0.0:
            continue
        total += spec.weight * build_packet(grid, spec, normalize=True).amp
    psi = WaveFunction1D(grid, total)
    return psi.normalized() if normalize else psi


def indicator(grid: Grid1D, region: Tuple[float, float]) -> np.ndarray:
    """Pi_V on the nodes: 1 strictly inside, 1/2 on a node that falls on an edge, 0 outside."""
    a, b = region
    x = grid.x
    # sharp indicator of [a, b] sampled at nodes; an edge node takes the midpoint value so that
    # sum(indicator) * dx equals b - a when both edges are nodes
    tol = 1e-9 * grid.dx
    out = np.where((x > a + tol) & (x < b - tol), 1.0, 0.0)
    out[np.abs(x - a) <= tol] = 0.5
    out[np.abs(x - b) <= tol] = 0.5
    return out


# ------------------------------------------------------------- spectral ops

def _odd_extension(a: np.ndarray, axis: int) -> np.ndarray:
    a = np.moveaxis(a, axis, -1)
    zero = np.zeros(a.shape[:-1] + (1,), dtype=a.dtype)
    ext = np.concatenate([a, zero, -a[..., :0:-1]], axis=-1)
    return np.moveaxis(ext, -1, axis)


def derivative_along(a: np.ndarray, grid: Grid1D, axis: int = -1) -> np.ndarray:
    """Spectral first derivative along one axis; the Nyquist mode is dropped."""
    a = np.asarray(a, dtype=np.complex128)
    if grid.is_box:
        ext = _odd_extension(a, axis)
        n2 = ext.shape[axis]
        k = 2.0 * np.pi * sfft.fftfreq(n2, d=grid.dx)
        k[n2 // 2] = 0.0
        shape = [1] * ext.ndim
        shape[axis] = n2
        d = sfft.ifft(1j * k.reshape(shape) * sfft.fft(ext, axis=axis), axis=axis)
        return np.take(d, np.arange(grid.n), axis=axis)
    k = np.array(grid.k)
    k[grid.n // 2] = 0.0
    shape = [1] * a.ndim
    shape[axis] = grid.n
    return sfft.ifft(1j * k.reshape(shape) * sfft.fft(a, axis=axis), axis=axis)


def spectral_derivative(psi: WaveFunction1D) -> np.ndarray:
    return derivative_along(psi.amp, psi.grid)


def to_momentum(psi: WaveFunction1D) -> Tuple[np.ndarray, np.ndarray]:
    """(k, phi(k)) in FFT order, with sum |phi|^2 dk = sum |psi|^2 dx."""
    g = psi.grid
    phase = np.exp(-1j * g.k * g.x_min)
    phi = sfft.fft(psi.amp) * phase * g.dx / math.sqrt(2.0 * np.pi)
    return np.array(g.k), phi


def from_momentum(grid: Grid1D, phi: np.ndarray) -> WaveFunction1D:
    phase = np.exp(1j * grid.k * grid.x_min)
    amp = sfft.ifft(np.asarray(phi) * phase) * math.sqrt(2.0 * np.pi) / grid.dx
    return WaveFunction1D(grid, amp)


def kinetic_energy_density(amp: np.ndarray, grid: Grid1D) -> float:
    """Sum over modes of k^2/2 |c_k|^2, scaled to the continuum norm (unnormalized input)."""
    if grid.is_box:
        c_re = sfft.dst(amp.real[1:], type=1, norm="ortho")
        c_im = sfft.dst(amp.imag[1:], type=1, norm="ortho")
        power = c_re ** 2 + c_im ** 2
        return float(np.sum(0.5 * grid.box_modes ** 2 * power) * grid.dx)
    c = sfft.fft(amp)
    return float(np.sum(0.5 * grid.k ** 2 * np.abs(c) ** 2) * grid.dx / grid.n)


def energy_expectation(psi: WaveFunction1D, potential: Optional[np.ndarray] = None) -> float:
    nrm = psi.norm()
    e = kinetic_energy_density(psi.amp, psi.grid)
    if potential is not None:
        e += float(np.sum(np.asarray(potential) * psi.density()) * psi.grid.dx)
    return e / nrm


def density_and_current(psi: Union[WaveFunction1D, SpinorWaveFunction1D]) -> Tuple[np.ndarray, np.ndarray]:
    """rho = |psi|^2 and j = Im(psi* d psi/dx); spinor components are summed."""
    if isinstance(psi, SpinorWaveFunction1D):
        rho = psi.density()
        j = np.zeros_like(rho)
        for comp in (psi.up, psi.down):
            j += np.imag(np.conj(comp) * derivative_along(comp, psi.grid))
        return rho, j
    rho = psi.density()
    j = np.imag(np.conj(psi.amp) * spectral_derivative(psi))
    return rho, j


def packet_center(psi: WaveFunction1D) -> float:
    rho = psi.density()
    return float(np.sum(psi.grid.x * rho) / np.sum(rho))


def packet_width(psi: WaveFunction1D) -> float:
    """Width in the amplitude convention exp(-(x-c)^2 / 2 sigma^2): sqrt(2) * density std."""
    rho = psi.density()
    c = packet_center(psi)
    var = float(np.sum((psi.grid.x - c) ** 2 * rho) / np.sum(rho))
    return math.sqrt(2.0 * var)


# ------------------------------------------------------------- eigenstates

@dataclass(frozen=True)
class EnergyEigenstate:
    potential: str
    quantum_number: int
    L: float = 1.0
    omega: float = 1.0
    origin: float = 0.0

    def __post_init__(self):
        if self.potential not in ("box", "harmonic"):
            raise ConfigError(f"unknown eigenstate potential: {self.potential!r}")
        if int(self.quantum_number) != self.quantum_number or self.quantum_number < 0:
            raise ConfigError(f"quantum number must be a non-negative integer, got {self.quantum_number}")
        if self.potential == "box" and self.quantum_number < 1:
            raise ConfigError("box states are numbered from 1 (sin(pi x / L) is the ground state)")
        if self.potential == "box" and not self.L > 0:
            raise ConfigError(f"box length must be positive, got {self.L}")
        if self.potential == "harmonic" and not self.omega > 0:
            raise ConfigError(f"harmonic frequency must be positive, got {self.omega}")

    @property
    def box_index(self) -> int:
        return int(self.quantum_number)

    def energy(self) -> float:
        if self.potential == "box":
            return 0.5 * (self.box_index * np.pi / self.L) ** 2
        return self.omega * (self.quantum_number + 0.5)

    def domain(self) -> Tuple[float, float]:
        if self.potential == "box":
            return self.origin, self.origin + self.L
        return -math.inf, math.inf

    def support(self) -> Tuple[float, float]:
        if self.potential == "box":
            return self.domain()
        turning = math.sqrt((2 * self.quantum_number + 1) / self.omega)
        h = turning + 6.0 / math.sqrt(self.omega)
        return self.origin - h, self.origin + h

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.potential == "box":
            y = x - self.origin
            out = math.sqrt(2.0 / self.L) * np.sin(self.box_index * np.pi * y / self.L)
            out[(y < 0) | (y > self.L)] = 0.0
            return out
        return hermite_function(self.quantum_number, math.sqrt(self.omega) * (x - self.origin)) * self.omega ** 0.25

    def density(self, x: np.ndarray) -> np.ndarray:
        return self.evaluate(x) ** 2

    def potential_on(self, grid: Grid1D) -> Optional[np.ndarray]:
        if self.potential == "box":
            return None
        return 0.5 * self.omega ** 2 * (grid.x - self.origin) ** 2

    def describe(self) -> dict:
        return {"potential": self.potential, "quantum_number": self.quantum_number,
                "L": self.L, "omega": self.omega, "origin": self.origin}


def eigenstate_from_dict(d: dict) -> EnergyEigenstate:
    try:
        return EnergyEigenstate(
            potential=d["potential"],
            quantum_number=int(d.get("quantum_number", 0)),
            L=float(d.get("L", 1.0)),
            omega=float(d.get("omega", 1.0)),
            origin=float(d.get("origin", 0.0)),
        )
    except KeyError as e:
        raise ConfigError(f"eigenstate spec missing field {e}") from e


def hermite_function(n: int, y: np.ndarray) -> np.ndarray:
    """Normalized Hermite function h_n(y) by the stable three-term recurrence."""
    y = np.asarray(y, dtype=float)
    h_prev = np.pi ** -0.25 * np.exp(-0.5 * y ** 2)
    if n == 0:
        return h_prev
    h = math.sqrt(2.0) * y * h_prev
    for k in range(1, n):
        h, h_prev = math.sqrt(2.0 / (k + 1)) * y * h - math.sqrt(k / (k + 1)) * h_prev, h
    return h


def eigenstate_field(e: EnergyEigenstate, grid: Grid1D) -> WaveFunction1D:
    if e.potential == "box":
        a, b = e.domain()
        tol = 1e-9 * grid.dx
        if not grid.is_box or abs(grid.x_min - a) > tol or abs(grid.x_max - b) > tol:
            raise DomainError(
                f"grid too small: box state on [{a}, {b}] needs a box-walled grid with the same walls, "
                f"got {grid.boundary} [{grid.x_min}, {grid.x_max}]"
            )
    else:
        a, b = e.support()
        if not grid.contains(a, b):
            raise DomainError(f"grid too small: harmonic state needs [{a:.4g}, {b:.4g}], "
                              f"got [{grid.x_min}, {grid.x_max}]")
    amp = e.evaluate(grid.x).astype(np.complex128)
    if grid.is_box:
        amp[0] = 0.0
    return WaveFunction1D(grid, amp).normalized()


def projection_on_grid(psi: WaveFunction1D, region: Tuple[float, float]) -> float:
    return float(np.sum(indicator(psi.grid, region) * psi.density()) * psi.grid.dx)


def gaussian_mass(center: float, sigma: float, a: float, b: float) -> float:
    """Mass of the normalized density |exp(-(x-c)^2/2sigma^2)|^2 inside [a, b]."""
    s = sigma
    return float(0.5 * (erf((b - center) / s) - erf((a - center) / s)))


# ------------------------------------------------------------- field files

def _grid_header(tag: str, grids: Iterable[Grid1D]) -> str:
    parts = [tag]
    for g in grids:
        parts += [repr(float(g.x_min)), repr(float(g.x_max)), str(g.n), g.boundary]
    return " ".join(parts)


def write_field(path: Path, psi: AnyField) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(psi, WaveFunction1D):
        header = _grid_header("grid", [psi.grid])
        cols = np.column_stack([psi.grid.x, psi.amp.real, psi.amp.imag])
    elif isinstance(psi, SpinorWaveFunction1D):
        header = _grid_header("spinor", [psi.grid])
        cols = np.column_stack([psi.grid.x, psi.up.real, psi.up.imag, psi.down.real, psi.down.imag])
    else:
        header = _grid_header("grid2d", [psi.grid_x, psi.grid_q])
        X, Q = np.meshgrid(psi.grid_x.x, psi.grid_q.x, indexing="ij")
        cols = np.column_stack([X.ravel(), Q.ravel(), psi.amp.real.ravel(), psi.amp.imag.ravel()])
    np.savetxt(path, cols, fmt="%.17g", header=header, comments="# ")


def read_field(path: Path) -> AnyField:
    path = Path(path)
    with path.open(encoding="utf-8") as f:
        head = f.readline().lstrip("#").split()
    if not head:
        raise ConfigError(f"{path}: missing grid header")
    tag = head[0]

    def grid_at(i: int) -> Grid1D:
        return Grid1D(float(head[i]), float(head[i + 1]), int(head[i + 2]), head[i + 3])

    data = np.loadtxt(path, comments="#", ndmin=2)
    if tag == "grid":
        return WaveFunction1D(grid_at(1), data[:, 1] + 1j * data[:, 2])
    if tag == "spinor":
        return SpinorWaveFunction1D(grid_at(1), data[:, 1] + 1j * data[:, 2], data[:, 3] + 1j * data[:, 4])
    if tag == "grid2d":
        gx, gq = grid_at(1), grid_at(5)
        amp = (data[:, 2] + 1j * data[:, 3]).reshape(gx.n, gq.n)
        return WaveFunction2D(gx, gq, amp)
    raise ConfigError(f"{path}: unknown field tag {tag!r}")
