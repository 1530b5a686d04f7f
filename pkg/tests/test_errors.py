import pytest

from errors import (
    AdiabaticityError,
    BoundaryLeakError,
    ConfigError,
    DomainError,
    NodeEncounter,
    NumericalGuardError,
    UndefinedWeakValue,
    exit_code_for,
)


@pytest.mark.parametrize(
    "exc, code",
    [
        (ConfigError("bad"), 2),
        (DomainError("outside"), 2),
        (BoundaryLeakError(0.5, 1e-6), 3),
        (NodeEncounter(0.1, (0.0, 1.0)), 3),
        (AdiabaticityError(0.9, 2.0, 0.99), 3),
        (UndefinedWeakValue(0.0, 0.0, 1e-14), 3),
        (FileNotFoundError("missing"), 4),
        (KeyError("x"), 1),
    ],
)
def test_exit_codes(exc, code):
    assert exit_code_for(exc) == code


def test_guard_errors_share_a_base():
    assert isinstance(BoundaryLeakError(0.0, 1.0), NumericalGuardError)
    assert isinstance(ConfigError("x"), ValueError)


def test_boundary_record_carries_time_and_density():
    rec = BoundaryLeakError(0.25, 3e-7).record()
    assert rec["error"] == "BoundaryLeakError"
    assert rec["exit_code"] == 3
    assert rec["time"] == 0.25
    assert rec["edge_density"] == 3e-7
    assert "domain too small" in rec["message"]


def test_node_record_point_is_a_list():
    rec = NodeEncounter(1.5, (2, -3)).record()
    assert rec["point"] == [2.0, -3.0]
