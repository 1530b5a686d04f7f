"""
Exact kinematics of two rectangular packets of length L crossing at speed v.

Velocity rule: a point covered by both packets is at rest, a point covered
by one packet moves with it. Measurement branches are bookkept by their
pointer supports: [0, W] for the branch that never passed V and
[fW, W + fW] for the branch that did (shift applied on exit from V).
Pointer values are always quoted in the final, post-shift coordinates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

import runio
from errors import ConfigError, DegenerateScenario, DomainError
from guidance import Trajectory
from runio import log

MEASUREMENTS = ("none", "robust", "weak", "delayed")
SIDES = ("left", "right")
DEFAULT_BINS = 22


@dataclass(frozen=True)
class IdealizedScenario:
    L: float
    v: float
    d: float
    W: float = 1.0
    f: float = 0.0
    measurement: str = "none"
    weight_left: float = 1.0
    weight_right: float = 1.0

    def __post_init__(self):
        if not (self.L > 0 and self.v > 0 and self.W > 0):
            raise ConfigError(f"L, v and W must be positive, got L={self.L}, v={self.v}, W={self.W}")
        if not self.d > self.L:
            raise ConfigError(f"packets must start disjoint: need d > L, got d={self.d}, L={self.L}")
        if not 0.0 <= self.f <= 1.0:
            raise ConfigError(f"shift fraction must lie in [0, 1], got f={self.f}")
        if self.measurement not in MEASUREMENTS:
            raise ConfigError(f"unknown measurement: {self.measurement!r}")
        if self.weight_left < 0 or self.weight_right < 0 or self.weight_left + self.weight_right == 0:
            raise ConfigError("packet weights must be non-negative and not both zero")

    @property
    def shift(self) -> float:
        return self.effective_f * self.W

    @property
    def effective_f(self) -> float:
        if self.measurement == "robust":
            return 1.0
        if self.measurement == "delayed":
            return 0.0
        return self.f

    def centers(self, t: float) -> Tuple[float, float]:
        return -self.d + self.v * t, self.d - self.v * t

    def covers(self, x: np.ndarray, t: float) -> Tuple[np.ndarray, np.ndarray]:
        cl, cr = self.centers(t)
        h = 0.5 * self.L
        x = np.asarray(x, dtype=float)
        on_l = (np.abs(x - cl) <= h) & (self.weight_left > 0)
        on_r = (np.abs(x - cr) <= h) & (self.weight_right > 0)
        return on_l, on_r

    def branch_support(self, side: str) -> Tuple[float, float]:
        """Pointer support of the branch whose particle started on `side` (left passes V)."""
        if side == "right":
            return 0.0, self.W
        s = self.shift
        return s, self.W + s

    def describe(self) -> dict:
        return {"L": self.L, "v": self.v, "d": self.d, "W": self.W, "f": self.f,
                "measurement": self.measurement,
                "weight_left": self.weight_left, "weight_right": self.weight_right}


def velocity_at(s: IdealizedScenario, x, t: float) -> np.ndarray:
    """Exact piecewise velocity; NaN where no packet covers x."""
    on_l, on_r = s.covers(x, t)
    v = np.where(on_l & on_r, 0.0, np.where(on_l, s.v, np.where(on_r, -s.v, np.nan)))
    return v if np.ndim(x) else float(v)


@dataclass(frozen=True)
class PiecewiseTrajectory:
    """Breakpoint times/positions and the velocity on each segment (last one open-ended)."""

    knots_t: Tuple[float, ...]
    knots_x: Tuple[float, ...]
    velocities: Tuple[float, ...]

    def position(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        kt = np.asarray(self.knots_t)
        i = np.clip(np.searchsorted(kt, t, side="right") - 1, 0, kt.size - 1)
        x = np.asarray(self.knots_x)[i] + np.asarray(self.velocities)[i] * (t - kt[i])
        return x if x.ndim else float(x)

    @property
    def turned(self) -> bool:
        return bool(np.sign(self.velocities[0]) != np.sign(self.velocities[-1]))

    def final_side(self, t_end: float) -> str:
        return "right" if self.position(t_end) > 0 else "left"

    def sample(self, t_end: float, dt: float) -> Trajectory:
        n = max(1, int(math.ceil(t_end / dt - 1e-9)))
        times = np.linspace(self.knots_t[0], t_end, n + 1)
        return Trajectory(times, self.position(times))


def trajectory_position(traj: PiecewiseTrajectory, t):
    return traj.position(t)


def crossing_trajectory(s: IdealizedScenario, x0: float) -> PiecewiseTrajectory:
    if s.measurement != "none":
        raise ConfigError(f"crossing_trajectory needs measurement='none', got {s.measurement!r}")
    on_l, on_r = s.covers(x0, 0.0)
    if not (on_l or on_r):
        raise DomainError(f"x0={x0} lies outside both packet supports")
    h = 0.5 * s.L
    if on_r:
        if s.weight_left == 0:
            return PiecewiseTrajectory((0.0,), (x0,), (-s.v,))
        t1 = (x0 + s.d - h) / (2.0 * s.v)
        x1 = x0 - s.v * t1
        t2 = (s.d + h - x1) / s.v
        return PiecewiseTrajectory((0.0, t1, t2), (x0, x1, x1), (-s.v, 0.0, s.v))
    if s.weight_right == 0:
        return PiecewiseTrajectory((0.0,), (x0,), (s.v,))
    t1 = (s.d - h - x0) / (2.0 * s.v)
    x1 = x0 + s.v * t1
    t2 = (s.d + h + x1) / s.v
    return PiecewiseTrajectory((0.0, t1, t2), (x0, x1, x1), (s.v, 0.0, -s.v))


def crossing_end_time(s: IdealizedScenario) -> float:
    """Time at which the packets are disjoint again after crossing."""
    return (s.d + 0.5 * s.L) / s.v


# ------------------------------------------------------------------ measured outcomes

@dataclass(frozen=True)
class OutcomeRecord:
    started_side: str
    q0: float
    turned: bool
    final_side: str
    q_final: float
    pointer_motion: str = "none"

    def __post_init__(self):
        if self.started_side not in SIDES or self.final_side not in SIDES:
            raise ConfigError("sides must be 'left' or 'right'")
        same = self.final_side == self.started_side
        if same != self.turned:
            raise ConfigError(f"inconsistent outcome: started {self.started_side}, turned={self.turned}, "
                              f"final {self.final_side}")


def _overlap(s: IdealizedScenario) -> Tuple[float, float]:
    a_r, b_r = s.branch_support("right")
    a_l, b_l = s.branch_support("left")
    return max(a_r, a_l), min(b_r, b_l)


def _crossing(s: IdealizedScenario) -> bool:
    return s.weight_left > 0 and s.weight_right > 0


def turns(s: IdealizedScenario, q0) -> np.ndarray:
    """Branch-overlap rule; edge values of a non-empty overlap count as overlapping.

    A lone packet has nothing to turn against, so nothing turns.
    """
    lo, hi = _overlap(s)
    q0 = np.asarray(q0, dtype=float)
    if hi <= lo or not _crossing(s):
        return np.zeros(q0.shape, dtype=bool)
    return (q0 >= lo) & (q0 <= hi)


def measured_outcome(s: IdealizedScenario, side0: str, q0: float) -> OutcomeRecord:
    if s.measurement == "none":
        raise ConfigError("measured_outcome needs a robust, weak or delayed measurement")
    if side0 not in SIDES:
        raise ConfigError(f"start side must be 'left' or 'right', got {side0!r}")
    a, b = s.branch_support(side0)
    if not a <= q0 <= b:
        raise DomainError(f"q0={q0} outside the {side0}-start pointer support [{a}, {b}]")
    other = "left" if side0 == "right" else "right"
    turned = bool(turns(s, q0))
    final = side0 if turned else other
    if s.measurement == "delayed":
        # the kicked branch is the left packet; the pointer drifts if the particle ends up riding it
        rides_left_packet = (side0 == "right") == turned
        motion = "after_overlap" if rides_left_packet else "none"
    else:
        motion = "during_pulse" if side0 == "left" and s.shift > 0 else "none"
    return OutcomeRecord(side0, float(q0), turned, final, float(q0), motion)


# ------------------------------------------------------------------ post-selection

@dataclass
class EnsembleStats:
    f: float
    n: Optional[int]
    fraction_started_right: float
    pointer_hist: Dict[str, List[float]]
    exact_flag: bool
    seed: Optional[int]
    selected_side: str = "right"
    counts: Dict[str, int] = field(default_factory=dict)

    def to_json(self) -> dict:
        return runio.to_jsonable(self.__dict__)

    @classmethod
    def from_json(cls, d: dict) -> "EnsembleStats":
        return cls(**d)

    def save(self, path: Path) -> None:
        runio.write_json(Path(path), self.to_json())


def _bins(s: IdealizedScenario, bins: int) -> np.ndarray:
    return np.linspace(0.0, s.W + s.shift, bins + 1)


def _uniform_hist(edges: np.ndarray, pieces: Sequence[Tuple[float, float, float]]) -> np.ndarray:
    """Density histogram of a piecewise-uniform measure; pieces are (a, b, weight per unit length)."""
    total = sum((b - a) * w for a, b, w in pieces)
    mass = np.zeros(edges.size - 1)
    for a, b, w in pieces:
        lo = np.maximum(edges[:-1], a)
        hi = np.minimum(edges[1:], b)
        mass += w * np.clip(hi - lo, 0.0, None)
    return mass / total / np.diff(edges)


def _exact_pieces(s: IdealizedScenario, select: str):
    """(started-right pieces, started-left pieces) of the post-selected pointer measure."""
    W, sh = s.W, s.shift
    wr, wl = s.weight_right, s.weight_left
    lo, hi = _overlap(s)
    if hi > lo and _crossing(s):
        turned_r, passed_r = (lo, hi), (0.0, lo)
        turned_l, passed_l = (lo, hi), (hi, W + sh)
    else:
        turned_r, passed_r = (0.0, 0.0), (0.0, W)
        turned_l, passed_l = (sh, sh), (sh, W + sh)
    # final right: right starts that turned and left starts that passed
    if select == "right":
        return (*turned_r, wr), (*passed_l, wl)
    return (*passed_r, wr), (*turned_l, wl)


def postselection_stats(s: IdealizedScenario, select: str = "right", n: Optional[int] = None,
                        seed: Optional[int] = None, bins: int = DEFAULT_BINS) -> EnsembleStats:
    """P(started right | final side == select) and the post-selected pointer histogram.

    n=None integrates the uniform measures exactly; otherwise Monte Carlo with n members.
    f = 0 and the robust limit f = 1 are answered (fractions 1 and 0 for select='right');
    DegenerateScenario is raised only when nothing ends on the selected side.
    """
    if s.measurement not in ("weak", "robust"):
        raise ConfigError(f"post-selection statistics need a weak measurement, got {s.measurement!r}")
    if select not in SIDES:
        raise ConfigError(f"select must be 'left' or 'right', got {select!r}")
    f = s.effective_f
    if f <= 0.0 or f >= 1.0:
        log(f"[info] degenerate scenario f={f:g}: the branches {'coincide' if f <= 0.0 else 'are disjoint'}")
    W, sh = s.W, s.shift
    edges = _bins(s, bins)
    if n is None:
        from_right, from_left = _exact_pieces(s, select)
        m_r = (from_right[1] - from_right[0]) * from_right[2]
        m_l = (from_left[1] - from_left[0]) * from_left[2]
        if m_r + m_l <= 0.0:
            raise DegenerateScenario(f, f"degenerate scenario: no member ends on the {select} (f={f:g})")
        hist = _uniform_hist(edges, [from_right, from_left])
        return EnsembleStats(f=s.f, n=None, fraction_started_right=m_r / (m_r + m_l),
                             pointer_hist={"edges": edges.tolist(), "density": hist.tolist()},
                             exact_flag=True, seed=None, selected_side=select)
    rng = np.random.default_rng(seed)
    n = int(n)
    started_right = rng.uniform(size=n) < s.weight_right / (s.weight_left + s.weight_right)
    u = rng.uniform(size=n)
    q0 = np.where(started_right, u * W, sh + u * W)
    turned = turns(s, q0)
    final_right = np.where(started_right, turned, ~turned)
    chosen = final_right if select == "right" else ~final_right
    n_sel = int(chosen.sum())
    if n_sel == 0:
        raise DegenerateScenario(f, f"degenerate scenario: none of {n} members ends on the {select} (f={f:g})")
    n_right = int((chosen & started_right).sum())
    hist, _ = np.histogram(q0[chosen], bins=edges, density=True)
    return EnsembleStats(f=s.f, n=n, fraction_started_right=n_right / n_sel,
                         pointer_hist={"edges": edges.tolist(), "density": hist.tolist()},
                         exact_flag=False, seed=seed, selected_side=select,
                         counts={"selected": n_sel, "selected_started_right": n_right, "total": n})


def convergence_table(s: IdealizedScenario, ns: Sequence[int], seed: int = 0) -> pd.DataFrame:
    exact = postselection_stats(s).fraction_started_right
    rows = []
    for n in ns:
        st = postselection_stats(s, n=n, seed=seed)
        err = abs(st.fraction_started_right - exact)
        rows.append({"n": n, "fraction": st.fraction_started_right, "abs_error": err,
                     "scaled_error": err * math.sqrt(n)})
    return pd.DataFrame(rows)
