"""
Exception taxonomy shared by the library modules and the CLI.

Every class carries the exit code the CLI maps it to:
  2 = validation (config, domain), 3 = numerical guard, 4 = I/O.
"""
from __future__ import annotations

from typing import Any, Dict, Optional, Tuple


class ConfigError(ValueError):
    """Malformed or inconsistent configuration, spec or override."""

    exit_code = 2

    def record(self) -> Dict[str, Any]:
        return {"error": type(self).__name__, "message": str(self), "exit_code": self.exit_code}


class DomainError(ValueError):
    """A packet, state or region does not fit on its grid or domain."""

    exit_code = 2

    def record(self) -> Dict[str, Any]:
        return {"error": type(self).__name__, "message": str(self), "exit_code": self.exit_code}


class NumericalGuardError(RuntimeError):
    exit_code = 3

    def record(self) -> Dict[str, Any]:
        return {"error": type(self).__name__, "message": str(self), "exit_code": self.exit_code}


class BoundaryLeakError(NumericalGuardError):
    def __init__(self, time: float, edge_density: float):
        super().__init__(
            f"domain too small: edge density {edge_density:.3e} above limit first at t={time!r}"
        )
        self.time = time
        self.edge_density = edge_density

    def record(self) -> Dict[str, Any]:
        rec = super().record()
        rec.update({"time": self.time, "edge_density": self.edge_density})
        return rec


class NodeEncounter(NumericalGuardError):
    def __init__(self, time: float, point: Tuple[float, ...]):
        pt = ", ".join(f"{p:.6g}" for p in point)
        super().__init__(f"trajectory reached a density node at t={time:.6g}, point=({pt})")
        self.time = time
        self.point = tuple(float(p) for p in point)

    def record(self) -> Dict[str, Any]:
        rec = super().record()
        rec.update({"time": self.time, "point": list(self.point)})
        return rec


class AdiabaticityError(NumericalGuardError):
    def __init__(self, overlap: float, T: float, bar: float):
        super().__init__(f"T too small: ground-state overlap {overlap:.6f} < {bar} at T={T}")
        self.overlap = overlap
        self.T = T

    def record(self) -> Dict[str, Any]:
        rec = super().record()
        rec.update({"overlap": self.overlap, "T": self.T})
        return rec


class UndefinedWeakValue(NumericalGuardError):
    def __init__(self, overlap: float, relative: float, floor: float):
        super().__init__(
            f"weak value undefined: |<post|pre>| = {overlap:.3e} "
            f"(relative {relative:.3e} below floor {floor:.1e})"
        )
        self.overlap = overlap
        self.relative = relative

    def record(self) -> Dict[str, Any]:
        rec = super().record()
        rec.update({"overlap": self.overlap, "relative_overlap": self.relative})
        return rec


class DegenerateScenario(NumericalGuardError):
    def __init__(self, f: float, note: Optional[str] = None):
        super().__init__(note or f"degenerate scenario: shift fraction f={f} leaves nothing to post-select")
        self.f = f


def exit_code_for(exc: BaseException) -> int:
    code = getattr(exc, "exit_code", None)
    if code is not None:
        return int(code)
    if isinstance(exc, OSError):
        return 4
    return 1
