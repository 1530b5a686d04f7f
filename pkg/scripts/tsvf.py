"""
Two-state vector tools: weak values, von Neumann pointer states and their
weak limit, spin coherent states and pre/post-selected position states.

States are numpy vectors. When a state is built at extended precision
(dps given) it is an object array of mpmath numbers and every sum over it
is carried out at that precision. Pointer states at extended precision need
an operator that is diagonal in the stored basis with exact eigenvalues.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import mpmath
import numpy as np
from mpmath import mp
from scipy import fft as sfft
from scipy import integrate
from scipy.linalg import expm

from errors import ConfigError, DomainError, UndefinedWeakValue
from qfield import Grid1D, WaveFunction1D

OVERLAP_FLOOR = 1e-14
HERMITIAN_TOL = 1e-12
DEFAULT_DPS = 50
POINTER_MARGIN = 8.0
CLIP_BAND = 3.0
CLIP_LIMIT = 1e-8
MIN_POINTER_N = 256


def _is_exact(v: np.ndarray) -> bool:
    v = np.asarray(v)
    return v.dtype == object and v.size > 0 and isinstance(v.flat[0], (mpmath.mpf, mpmath.mpc))


def _dps_floor(dps: Optional[int]) -> float:
    if dps is None:
        return OVERLAP_FLOOR
    return OVERLAP_FLOOR * 10.0 ** (-dps) / np.finfo(float).eps


def _to_mp(v: Sequence, dps: int) -> np.ndarray:
    with mp.workdps(dps):
        return np.array([mp.mpc(complex(x)) for x in v], dtype=object)


def _normalize(v: np.ndarray, dps: Optional[int]) -> np.ndarray:
    if dps is None:
        v = np.asarray(v, dtype=np.complex128)
        n = np.linalg.norm(v)
        if n == 0:
            raise ConfigError("cannot normalize a zero state")
        return v / n
    with mp.workdps(dps):
        n = mp.sqrt(mp.fsum(abs(x) ** 2 for x in v))
        if n == 0:
            raise ConfigError("cannot normalize a zero state")
        return np.array([x / n for x in v], dtype=object)


# ------------------------------------------------------------------ types

@dataclass(frozen=True)
class HermitianOperator:
    """Observable as a matrix; object-dtype matrices hold mpmath entries."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ConfigError(f"operator must be square, got shape {m.shape}")
        if m.dtype == object:
            scale = max([mpmath.mpf(1)] + [abs(x) for x in m.flat])
            tol = scale * mpmath.mpf(10) ** (-(mp.dps - 5))
            for r in range(m.shape[0]):
                for c in range(r, m.shape[0]):
                    if abs(m[r, c] - mpmath.conj(m[c, r])) > tol:
                        raise ConfigError("operator is not Hermitian")
        else:
            m = np.array(m, dtype=np.complex128)
            scale = max(1.0, float(np.max(np.abs(m))))
            if np.max(np.abs(m - m.conj().T)) > HERMITIAN_TOL * scale:
                raise ConfigError("operator is not Hermitian")
            m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def diagonal(cls, values: Sequence) -> "HermitianOperator":
        vals = list(values)
        if vals and not isinstance(vals[0], (mpmath.mpf, mpmath.mpc)):
            return cls(np.diag(np.asarray(vals, dtype=np.complex128)))
        m = np.empty((len(vals), len(vals)), dtype=object)
        m[:] = mpmath.mpf(0)
        for i, v in enumerate(vals):
            m[i, i] = v
        return cls(m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def exact(self) -> bool:
        return self.matrix.dtype == object

    @property
    def is_diagonal(self) -> bool:
        m = self.matrix
        return all(m[r, c] == 0 for r in range(self.dim) for c in range(self.dim) if r != c)

    def eigh(self) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        """(eigenvalues, eigenvectors as columns); extended precision returns (diagonal, None)."""
        if self.exact:
            if not self.is_diagonal:
                raise ConfigError("extended-precision eigenbasis is only available for diagonal operators")
            return np.array([mpmath.re(self.matrix[i, i]) for i in range(self.dim)], dtype=object), None
        return np.linalg.eigh(self.matrix)

    def eigenvalues_float(self) -> np.ndarray:
        vals, _ = self.eigh()
        return np.array([float(v) for v in vals]) if self.exact else vals

    def power(self, k: int) -> "HermitianOperator":
        if not self.exact:
            return HermitianOperator(np.linalg.matrix_power(self.matrix, k))
        with mp.workdps(max(mp.dps, DEFAULT_DPS)):
            out = np.identity(self.dim, dtype=object) * mpmath.mpf(1)
            for _ in range(k):
                out = np.dot(out, self.matrix)
            return HermitianOperator(out)

    def scaled(self, a: float) -> "HermitianOperator":
        return HermitianOperator(a * self.matrix)


@dataclass(frozen=True)
class TwoStateVector:
    """Pre-selected |pre> and post-selected <post| (stored as a ket), both normalized."""

    pre: np.ndarray
    post: np.ndarray
    dps: Optional[int] = None
    floor: float = OVERLAP_FLOOR

    def __post_init__(self):
        pre, post = np.asarray(self.pre), np.asarray(self.post)
        if self.dps is not None:
            pre = pre if _is_exact(pre) else _to_mp(pre, self.dps)
            post = post if _is_exact(post) else _to_mp(post, self.dps)
        pre = _normalize(pre, self.dps)
        post = _normalize(post, self.dps)
        if pre.shape != post.shape or pre.ndim != 1:
            raise ConfigError(f"pre and post must be vectors of one dimension, got {pre.shape}, {post.shape}")
        object.__setattr__(self, "pre", pre)
        object.__setattr__(self, "post", post)
        self.check_overlap()

    @property
    def dim(self) -> int:
        return self.pre.size

    def terms(self) -> np.ndarray:
        """post_i* pre_i in the stored basis."""
        if self.dps is None:
            return np.conj(self.post) * self.pre
        with mp.workdps(self.dps):
            return np.array([mpmath.conj(b) * a for a, b in zip(self.pre, self.post)], dtype=object)

    def overlap(self):
        """<post|pre>; an mpmath number at extended precision."""
        if self.dps is None:
            return complex(np.vdot(self.post, self.pre))
        with mp.workdps(self.dps):
            return mp.fsum(self.terms())

    def check_overlap(self) -> None:
        if self.dps is None:
            t = self.terms()
            ov, scale = abs(t.sum()), float(np.sum(np.abs(t)))
        else:
            with mp.workdps(self.dps):
                t = self.terms()
                ov, scale = abs(mp.fsum(t)), mp.fsum(abs(x) for x in t)
        floor = self.floor if self.dps is None else _dps_floor(self.dps)
        rel = float(ov / scale) if scale else 0.0
        if not rel > floor:
            raise UndefinedWeakValue(float(ov), rel, floor)


@dataclass(frozen=True)
class WeakValueResult:
    A_w: complex
    overlap: float
    dps: Optional[int] = None

    def to_json(self) -> dict:
        return {"re": self.A_w.real, "im": self.A_w.imag, "overlap_modulus": self.overlap, "dps": self.dps}


@dataclass(frozen=True)
class PointerModel:
    delta: float
    grid: Grid1D

    def __post_init__(self):
        if not self.delta > 0:
            raise ConfigError(f"pointer spread must be positive, got {self.delta}")
        if self.grid.is_box:
            raise ConfigError("pointer grid must be periodic")

    @classmethod
    def auto(cls, delta: float, eigenvalues: Sequence[float], extra: Sequence[float] = ()) -> "PointerModel":
        vals = np.concatenate([np.asarray(eigenvalues, dtype=float), np.asarray(extra, dtype=float)])
        lo = float(vals.min()) - POINTER_MARGIN * delta
        hi = float(vals.max()) + POINTER_MARGIN * delta
        need = (hi - lo) / (delta / 8.0)
        n = max(MIN_POINTER_N, 1 << int(math.ceil(math.log2(need))))
        return cls(delta, Grid1D(lo, hi, n))

    def gaussian(self, center: float = 0.0) -> np.ndarray:
        q = self.grid.x
        return (math.pi * self.delta ** 2) ** -0.25 * np.exp(-((q - center) ** 2) / (2.0 * self.delta ** 2))

    def check_span(self, eigenvalues: Sequence[float]) -> None:
        lo = float(np.min(eigenvalues)) - 6.0 * self.delta
        hi = float(np.max(eigenvalues)) + 6.0 * self.delta
        if self.grid.x_min > lo or self.grid.x_max < hi:
            raise DomainError(f"pointer grid [{self.grid.x_min}, {self.grid.x_max}] does not span "
                              f"the eigenvalues +- 6 delta = [{lo:.4g}, {hi:.4g}]")


# ------------------------------------------------------------------ weak values

def weak_value(tsv: TwoStateVector, A: HermitianOperator) -> WeakValueResult:
    if A.dim != tsv.dim:
        raise ConfigError(f"operator dimension {A.dim} does not match state dimension {tsv.dim}")
    if A.exact or tsv.dps is not None:
        dps = tsv.dps or DEFAULT_DPS
        with mp.workdps(dps):
            M = A.matrix if A.exact else [[mp.mpc(complex(z)) for z in row] for row in A.matrix]
            dim = tsv.dim
            if A.exact and A.is_diagonal:
                t = tsv.terms()
                num = mp.fsum(t[i] * M[i, i] for i in range(dim))
            else:
                a_pre = [mp.fsum(M[r][c] * tsv.pre[c] for c in range(dim)) for r in range(dim)]
                num = mp.fsum(mpmath.conj(tsv.post[r]) * a_pre[r] for r in range(dim))
            den = tsv.overlap()
            return WeakValueResult(complex(num / den), float(abs(den)), dps)
    den = np.vdot(tsv.post, tsv.pre)
    num = np.vdot(tsv.post, A.matrix @ tsv.pre)
    return WeakValueResult(complex(num / den), float(abs(den)))


def moment_expansion(tsv: TwoStateVector, A: HermitianOperator, n_max: int) -> List[complex]:
    """[(A^k)_w - (A_w)^k for k = 2..n_max]."""
    if n_max < 2:
        raise ConfigError(f"n_max must be >= 2, got {n_max}")
    aw = weak_value(tsv, A).A_w
    return [weak_value(tsv, A.power(k)).A_w - aw ** k for k in range(2, n_max + 1)]


def _branch_weights(tsv: TwoStateVector, A: HermitianOperator):
    """(eigenvalues, <post|a><a|pre>) for the operator's eigenbasis."""
    vals, vecs = A.eigh()
    if vecs is None:
        return vals, tsv.terms()
    return vals, np.conj(vecs.conj().T @ tsv.post) * (vecs.conj().T @ tsv.pre)


def _check_clipping(phi: np.ndarray, pm: PointerModel) -> None:
    dens = np.abs(phi) ** 2
    total = dens.sum()
    if total == 0:
        return
    b = int(math.ceil(CLIP_BAND * pm.delta / pm.grid.dx))
    edge = dens[:b].sum() + dens[-b:].sum()
    if edge / total > CLIP_LIMIT:
        raise DomainError(f"pointer grid clipping: {edge / total:.2e} of the mass lies within "
                          f"{CLIP_BAND} delta of the edges")


def pointer_final_state(tsv: TwoStateVector, A: HermitianOperator, pm: PointerModel
                        ) -> Tuple[WaveFunction1D, WaveFunction1D]:
    """Exact Phi(Q) = sum_a <post|a><a|pre> G(Q - a); returns (unnormalized, normalized)."""
    if tsv.dps is not None and not A.exact:
        raise ConfigError("pointer states of extended-precision states need a diagonal extended-precision operator")
    weak_value(tsv, A)
    pm.check_span(A.eigenvalues_float())
    vals, w = _branch_weights(tsv, A)
    q = pm.grid.x
    if A.exact:
        dps = tsv.dps or DEFAULT_DPS
        with mp.workdps(dps):
            norm = (mp.pi * mp.mpf(pm.delta) ** 2) ** mp.mpf(-0.25)
            two_d2 = 2 * mp.mpf(pm.delta) ** 2
            phi = np.empty(q.size, dtype=np.complex128)
            for m, qm in enumerate(q):
                qm = mp.mpf(qm)
                s = mp.fsum(w[i] * mp.exp(-((qm - vals[i]) ** 2) / two_d2) for i in range(len(vals)))
                phi[m] = complex(norm * s)
    else:
        phi = np.zeros(q.size, dtype=np.complex128)
        for a, wa in zip(vals, w):
            phi += wa * pm.gaussian(float(np.real(a)))
    _check_clipping(phi, pm)
    raw = WaveFunction1D(pm.grid, phi)
    return raw, raw.normalized()


def pointer_state_from_moments(tsv: TwoStateVector, A: HermitianOperator, pm: PointerModel,
                               order: int) -> WaveFunction1D:
    """Moment series <post|pre> sum_n (-iP)^n (A^n)_w / n! applied to G in the P representation."""
    ov = complex(tsv.overlap())
    P = pm.grid.k
    series = np.zeros(P.size, dtype=np.complex128)
    term = np.ones(P.size, dtype=np.complex128)
    for n in range(order + 1):
        an = 1.0 if n == 0 else weak_value(tsv, A.power(n)).A_w
        if n > 0:
            term = term * (-1j * P) / n
        series += term * an
    phi = sfft.ifft(ov * series * sfft.fft(pm.gaussian()))
    return WaveFunction1D(pm.grid, phi)


def postselection_probability(tsv: TwoStateVector, A: HermitianOperator, delta: float) -> float:
    """Post-selection probability from the composite state in the pointer-momentum representation."""
    vals, w = _branch_weights(tsv, A)
    vals = np.array([float(mpmath.re(a)) for a in vals])
    w = np.array([complex(z) for z in w])

    def density(p: float) -> float:
        amp = np.sum(w * np.exp(-1j * p * vals))
        g2 = delta / math.sqrt(math.pi) * math.exp(-(p * delta) ** 2)
        return float(abs(amp) ** 2 * g2)

    cut = 12.0 / delta
    val, _ = integrate.quad(density, -cut, cut, epsabs=1e-14, epsrel=1e-12, limit=400)
    return val


def pointer_mean(phi: WaveFunction1D) -> float:
    rho = phi.density()
    return float(np.sum(phi.grid.x * rho) / np.sum(rho))


def weak_limit_gaussian(A_w: float, pm: PointerModel) -> WaveFunction1D:
    return WaveFunction1D(pm.grid, pm.gaussian(float(np.real(A_w)))).normalized()


def limit_deviation(tsv: TwoStateVector, A: HermitianOperator, pm: PointerModel) -> float:
    """L2 distance between the normalized exact pointer state and the weak-limit Gaussian, global phase removed."""
    aw = weak_value(tsv, A).A_w
    _, exact = pointer_final_state(tsv, A, pm)
    g = weak_limit_gaussian(aw.real, pm)
    ov = exact.inner(g)
    phase = ov / abs(ov) if abs(ov) > 0 else 1.0
    diff = exact.amp * phase - g.amp
    return float(math.sqrt(np.sum(np.abs(diff) ** 2) * pm.grid.dx))


# ------------------------------------------------------------------ spins

def spin_matrices(j: float, dps: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """J_x, J_y, J_z in the basis m = j, j-1, ..., -j (mpmath entries when dps is given)."""
    dim = int(round(2 * j + 1))
    if dps is None:
        m = j - np.arange(dim)
        jp = np.zeros((dim, dim))
        for i in range(dim - 1):
            k = m[i + 1]
            jp[i, i + 1] = math.sqrt(j * (j + 1) - k * (k + 1))
        jm = jp.T
        return 0.5 * (jp + jm).astype(complex), (jp - jm) / 2j, np.diag(m).astype(complex)
    with mp.workdps(dps):
        jj = mp.mpf(j)
        zero = np.full((dim, dim), mp.mpc(0), dtype=object)
        jx, jy, jz = zero.copy(), zero.copy(), zero.copy()
        for i in range(dim):
            jz[i, i] = mp.mpc(jj - i)
        for i in range(dim - 1):
            k = jj - i - 1
            a = mp.sqrt(jj * (jj + 1) - k * (k + 1))
            jx[i, i + 1] = jx[i + 1, i] = mp.mpc(a / 2)
            jy[i, i + 1] = mp.mpc(0, -a / 2)
            jy[i + 1, i] = mp.mpc(0, a / 2)
        return jx, jy, jz


def direction(polar: float, azimuth: float) -> np.ndarray:
    return np.array([math.sin(polar) * math.cos(azimuth), math.sin(polar) * math.sin(azimuth), math.cos(polar)])


def spin_component(j: float, polar: float, azimuth: float, dps: Optional[int] = None) -> HermitianOperator:
    """n.J for the unit vector at (polar, azimuth)."""
    jx, jy, jz = spin_matrices(j, dps)
    if dps is None:
        n = direction(polar, azimuth)
        return HermitianOperator(n[0] * jx + n[1] * jy + n[2] * jz)
    with mp.workdps(dps):
        p, a = mp.mpf(polar), mp.mpf(azimuth)
        nx, ny, nz = mp.sin(p) * mp.cos(a), mp.sin(p) * mp.sin(a), mp.cos(p)
        return HermitianOperator(nx * jx + ny * jy + nz * jz)


def rotation_operator(j: float, axis: Sequence[float], angle: float) -> np.ndarray:
    jx, jy, jz = spin_matrices(j)
    n = np.asarray(axis, dtype=float)
    n = n / np.linalg.norm(n)
    return expm(-1j * angle * (n[0] * jx + n[1] * jy + n[2] * jz))


def spin_coherent_state(j: float, polar: float, azimuth: float = 0.0, dps: Optional[int] = None) -> np.ndarray:
    """|n.J = j> = exp(-i azimuth J_z) exp(-i polar J_y) |j, j>, closed form with log-gamma binomials."""
    dim = int(round(2 * j + 1))
    two_j = dim - 1
    if dps is None:
        c, s = math.cos(0.5 * polar), math.sin(0.5 * polar)
        out = np.zeros(dim, dtype=np.complex128)
        for i in range(dim):
            m = j - i
            up, down = two_j - i, i
            if (up and c == 0.0) or (down and s == 0.0):
                continue
            log_mag = 0.5 * (math.lgamma(two_j + 1) - math.lgamma(i + 1) - math.lgamma(two_j - i + 1))
            log_mag += (up * math.log(abs(c)) if up else 0.0) + (down * math.log(abs(s)) if down else 0.0)
            sign = (1 if c >= 0 or up % 2 == 0 else -1) * (1 if s >= 0 or down % 2 == 0 else -1)
            out[i] = sign * math.exp(log_mag) * complex(math.cos(m * azimuth), -math.sin(m * azimuth))
        return out
    with mp.workdps(dps):
        polar, azimuth = mp.mpf(polar), mp.mpf(azimuth)
        c, s = mp.cos(polar / 2), mp.sin(polar / 2)
        out = np.empty(dim, dtype=object)
        for i in range(dim):
            m = mp.mpf(j) - i
            out[i] = mp.sqrt(mp.binomial(two_j, i)) * c ** (two_j - i) * s ** i * mp.expj(-m * azimuth)
        return out


def spin_weak_case(j: float, theta: float, frame: str = "aligned",
                   dps: Optional[int] = None) -> Tuple[TwoStateVector, HermitianOperator]:
    """Pre/post spin coherent states at -theta/+theta from the measured direction.

    aligned: pre = |J_z = j>, post at polar 2*theta in the xz plane, A = cos(theta) J_z + sin(theta) J_x.
    plane:   pre/post in the xy plane at azimuth 45 deg -/+ theta, A along 45 deg; theta = 45 deg
             is |J_x = j> -> |J_y = j>.
    """
    if frame == "aligned":
        pre = spin_coherent_state(j, 0.0, 0.0, dps)
        post = spin_coherent_state(j, 2.0 * theta, 0.0, dps)
        A = spin_component(j, theta, 0.0, dps)
    elif frame == "plane":
        xi = 0.25 * math.pi
        pre = spin_coherent_state(j, 0.5 * math.pi, xi - theta, dps)
        post = spin_coherent_state(j, 0.5 * math.pi, xi + theta, dps)
        A = spin_component(j, 0.5 * math.pi, xi, dps)
    else:
        raise ConfigError(f"unknown spin frame: {frame!r}")
    return TwoStateVector(pre, post, dps), A


# ------------------------------------------------------------------ position pre/post states

def prepost_coefficients(N: int, theta: float, dps: int = DEFAULT_DPS) -> np.ndarray:
    """c_i = (-tan^2(theta/2))^i / (i! (N-i)!), i = 0..N, via log-gamma with explicit signs."""
    with mp.workdps(dps):
        t = mp.tan(mp.mpf(theta) / 2)
        out = np.empty(N + 1, dtype=object)
        for i in range(N + 1):
            if t == 0:
                out[i] = mp.mpf(1) / mp.factorial(N) if i == 0 else mp.mpf(0)
                continue
            log_mag = 2 * i * mp.log(abs(t)) - mp.loggamma(i + 1) - mp.loggamma(N - i + 1)
            out[i] = (-1) ** i * mp.exp(log_mag)
        return out


@dataclass(frozen=True)
class PositionPrePost:
    N: int
    theta: float
    sigma: float
    positions: np.ndarray
    tsv: TwoStateVector
    X: HermitianOperator
    grid: Optional[Grid1D] = None

    def fields(self) -> Tuple[WaveFunction1D, WaveFunction1D]:
        """Spatial pre/post wavefunctions as sums of localized packets on the grid."""
        if self.grid is None:
            raise ConfigError("no grid attached")
        x = self.grid.x
        packets = [np.exp(-((x - xi) ** 2) / (2 * self.sigma ** 2)) for xi in self.positions]
        pre = sum(complex(a) * p for a, p in zip(self.tsv.pre, packets))
        post = sum(complex(b) * p for b, p in zip(self.tsv.post, packets))
        return WaveFunction1D(self.grid, pre).normalized(), WaveFunction1D(self.grid, post).normalized()


def prepost_position_states(N: int, theta: float, sigma: float, grid: Optional[Grid1D] = None,
                            dps: int = DEFAULT_DPS) -> PositionPrePost:
    if N < 1:
        raise ConfigError(f"N must be >= 1, got {N}")
    spacing = 2.0 / N
    if not sigma <= spacing / 6.0:
        raise ConfigError(f"packets not resolvable: sigma={sigma} must be <= (2/N)/6 = {spacing / 6:.4g}")
    if grid is not None:
        if not grid.contains(-1.0 - 4 * sigma, 1.0 + 4 * sigma):
            raise DomainError(f"grid [{grid.x_min}, {grid.x_max}] does not contain the packets")
        if grid.dx > sigma / 2:
            raise ConfigError(f"grid spacing {grid.dx} does not resolve sigma={sigma}")
    with mp.workdps(dps):
        xs = [mp.mpf(N - 2 * i) / N for i in range(N + 1)]
        pre = np.array([mp.mpc(1) for _ in range(N + 1)], dtype=object)
        post = np.array([mp.mpc(c) for c in prepost_coefficients(N, theta, dps)], dtype=object)
    tsv = TwoStateVector(pre, post, dps)
    X = HermitianOperator.diagonal(xs)
    positions = np.array([(N - 2 * i) / N for i in range(N + 1)])
    return PositionPrePost(N, theta, sigma, positions, tsv, X, grid)


# ------------------------------------------------------------------ tails

def tail_ratio(delta_shift: float, spread: float, x):
    """exp(-(x - d)^2 / D^2) / exp(-x^2 / D^2) for shift d and spread D."""
    if not (delta_shift > 0 and spread > 0):
        raise ConfigError("shift and spread must be positive")
    x = np.asarray(x, dtype=float)
    r = np.exp((2.0 * x * delta_shift - delta_shift ** 2) / spread ** 2)
    return r if r.ndim else float(r)


def threshold_x(delta_shift: float, spread: float, ratio: float) -> float:
    if not (delta_shift > 0 and spread > 0):
        raise ConfigError("shift and spread must be positive")
    if not ratio > 1:
        raise ConfigError(f"ratio must exceed 1, got {ratio}")
    return spread ** 2 * math.log(ratio) / (2.0 * delta_shift) + 0.5 * delta_shift


# ------------------------------------------------------------------ JSON I/O

def state_to_json(v: np.ndarray) -> list:
    if _is_exact(v):
        return [[mpmath.nstr(mpmath.re(z), 40), mpmath.nstr(mpmath.im(z), 40)] for z in v]
    return [[float(z.real), float(z.imag)] for z in np.asarray(v, dtype=np.complex128)]


def state_from_json(data: list, dps: Optional[int] = None) -> np.ndarray:
    try:
        if dps is not None:
            with mp.workdps(dps):
                return np.array([mp.mpc(mp.mpf(re), mp.mpf(im)) for re, im in data], dtype=object)
        return np.array([complex(float(re), float(im)) for re, im in data])
    except (TypeError, ValueError) as e:
        raise ConfigError(f"state must be a list of [re, im] pairs: {e}") from e


def operator_to_json(A: HermitianOperator) -> list:
    return [state_to_json(row) for row in A.matrix]


def operator_from_json(data: list) -> HermitianOperator:
    return HermitianOperator(np.array([state_from_json(row) for row in data]))


def parse_state_spec(spec: str) -> np.ndarray:
    """'spin:j:polar_deg:azimuth_deg', a JSON list of [re, im] pairs, or a path to one."""
    if spec.startswith("spin:"):
        try:
            _, j, pol, az = spec.split(":")
            return spin_coherent_state(float(j), math.radians(float(pol)), math.radians(float(az)))
        except ValueError as e:
            raise ConfigError(f"bad spin state spec {spec!r}: {e}") from e
    return state_from_json(_load_json_spec(spec))


def parse_operator_spec(spec: str) -> HermitianOperator:
    """'spin:j:polar:azimuth' (n.J), 'sigma:polar:azimuth' (n.sigma), 'diag:[...]', or JSON/path."""
    try:
        if spec.startswith("spin:"):
            _, j, pol, az = spec.split(":")
            return spin_component(float(j), math.radians(float(pol)), math.radians(float(az)))
        if spec.startswith("sigma:"):
            _, pol, az = spec.split(":")
            return spin_component(0.5, math.radians(float(pol)), math.radians(float(az))).scaled(2.0)
        if spec.startswith("diag:"):
            return HermitianOperator.diagonal(json.loads(spec[5:]))
    except ValueError as e:
        raise ConfigError(f"bad operator spec {spec!r}: {e}") from e
    return operator_from_json(_load_json_spec(spec))


def _load_json_spec(spec: str):
    p = Path(spec)
    try:
        if p.suffix == ".json" and p.exists():
            return json.loads(p.read_text(encoding="utf-8"))
        return json.loads(spec)
    except json.JSONDecodeError as e:
        raise ConfigError(f"spec is neither a known form nor JSON: {spec!r}") from e
