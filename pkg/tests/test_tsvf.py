import math

import numpy as np
import pytest

from errors import ConfigError, DomainError, UndefinedWeakValue
from qfield import Grid1D
from tsvf import (
    HermitianOperator,
    PointerModel,
    TwoStateVector,
    limit_deviation,
    moment_expansion,
    parse_operator_spec,
    parse_state_spec,
    pointer_final_state,
    pointer_mean,
    pointer_state_from_moments,
    postselection_probability,
    prepost_coefficients,
    prepost_position_states,
    rotation_operator,
    spin_coherent_state,
    spin_matrices,
    spin_weak_case,
    state_from_json,
    state_to_json,
    tail_ratio,
    threshold_x,
    weak_value,
)


@pytest.fixture
def half_spin():
    """Pre |+x>, post |+y>, measured sigma along the bisector."""
    tsv = TwoStateVector(parse_state_spec("spin:0.5:90:0"), parse_state_spec("spin:0.5:90:90"))
    return tsv, parse_operator_spec("sigma:90:45")


def _pointer(tsv, A, delta):
    aw = weak_value(tsv, A).A_w.real
    return PointerModel.auto(delta, A.eigenvalues_float(), extra=[aw])


def test_half_spin_weak_value_is_root_two(half_spin):
    res = weak_value(*half_spin)
    assert res.A_w.real == pytest.approx(math.sqrt(2.0), abs=1e-12)
    assert abs(res.A_w.imag) < 1e-12
    assert res.overlap == pytest.approx(math.cos(math.pi / 4.0))
    assert set(res.to_json()) == {"re", "im", "overlap_modulus", "dps"}


def test_eigenstate_weak_value():
    up = parse_state_spec("spin:0.5:0:0")
    res = weak_value(TwoStateVector(up, up), parse_operator_spec("sigma:0:0"))
    assert res.A_w == pytest.approx(1.0)


@pytest.mark.parametrize("j, theta_deg", [(0.5, 60.0), (1.0, 30.0), (20.0, 75.0)])
def test_aligned_spin_weak_value(j, theta_deg):
    tsv, A = spin_weak_case(j, math.radians(theta_deg), "aligned")
    aw = weak_value(tsv, A).A_w
    assert aw.real == pytest.approx(j / math.cos(math.radians(theta_deg)), abs=1e-9)
    assert abs(aw.imag) < 1e-9


def test_large_spin_plane_case_at_extended_precision():
    tsv, A = spin_weak_case(20.0, math.pi / 4.0, "plane", dps=50)
    res = weak_value(tsv, A)
    assert res.A_w.real == pytest.approx(20.0 * math.sqrt(2.0), abs=1e-9)
    assert res.dps == 50


def test_coherent_state_matches_rotated_highest_weight():
    j, polar, az = 3.0, 0.7, 1.1
    top = np.zeros(7, dtype=complex)
    top[0] = 1.0
    rotated = rotation_operator(j, [0, 0, 1], az) @ rotation_operator(j, [0, 1, 0], polar) @ top
    np.testing.assert_allclose(spin_coherent_state(j, polar, az), rotated, atol=1e-12)


def test_spin_matrices_commutator():
    jx, jy, jz = spin_matrices(1.5)
    np.testing.assert_allclose(jx @ jy - jy @ jx, 1j * jz, atol=1e-12)


def test_weak_values_are_linear(half_spin):
    tsv, A = half_spin
    B = parse_operator_spec("sigma:0:0")
    combo = HermitianOperator(2.0 * A.matrix - 0.5 * B.matrix)
    lhs = weak_value(tsv, combo).A_w
    rhs = 2.0 * weak_value(tsv, A).A_w - 0.5 * weak_value(tsv, B).A_w
    assert abs(lhs - rhs) < 1e-12


def test_orthogonal_states_have_no_weak_value():
    with pytest.raises(UndefinedWeakValue):
        TwoStateVector(np.array([1.0, 0.0]), np.array([0.0, 1.0]))


def test_operator_checks(half_spin):
    with pytest.raises(ConfigError, match="Hermitian"):
        HermitianOperator(np.array([[0.0, 1.0], [0.0, 0.0]]))
    with pytest.raises(ConfigError):
        weak_value(half_spin[0], HermitianOperator.diagonal([1.0, 2.0, 3.0]))


def test_second_moment_correction(half_spin):
    corr = moment_expansion(*half_spin, 3)
    assert corr[0] == pytest.approx(-1.0, abs=1e-12)
    up = parse_state_spec("spin:0.5:0:0")
    assert moment_expansion(TwoStateVector(up, up), parse_operator_spec("sigma:0:0"), 4) == pytest.approx([0, 0, 0])


def test_higher_moments_match_matrix_powers():
    tsv, A = spin_weak_case(2.0, math.radians(60.0))
    aw = weak_value(tsv, A).A_w
    corr = moment_expansion(tsv, A, 3)
    for k, c in zip((2, 3), corr):
        M = np.linalg.matrix_power(A.matrix, k)
        direct = np.vdot(tsv.post, M @ tsv.pre) / np.vdot(tsv.post, tsv.pre)
        assert c == pytest.approx(direct - aw ** k, abs=1e-10)


def test_pointer_of_an_eigenstate_is_the_shifted_gaussian():
    up = parse_state_spec("spin:0.5:0:0")
    tsv, A = TwoStateVector(up, up), parse_operator_spec("sigma:0:0")
    pm = _pointer(tsv, A, 2.0)
    _, phi = pointer_final_state(tsv, A, pm)
    assert pointer_mean(phi) == pytest.approx(1.0, abs=1e-10)
    assert limit_deviation(tsv, A, pm) < 1e-12


def test_narrow_pointer_resolves_the_eigenvalues(half_spin):
    tsv, A = half_spin
    pm = _pointer(tsv, A, 0.01)
    raw, phi = pointer_final_state(tsv, A, pm)
    q = pm.grid.x
    upper = float(np.sum(phi.density()[q > 0]) * pm.grid.dx)
    vals, vecs = np.linalg.eigh(A.matrix)
    w = np.abs((vecs.conj().T @ tsv.post).conj() * (vecs.conj().T @ tsv.pre)) ** 2
    assert upper == pytest.approx(w[vals > 0].sum() / w.sum(), abs=1e-10)


def test_wide_pointer_points_to_the_weak_value(half_spin):
    tsv, A = half_spin
    _, phi = pointer_final_state(tsv, A, _pointer(tsv, A, 5.0))
    assert pointer_mean(phi) == pytest.approx(math.sqrt(2.0), rel=0.02)


def test_limit_deviation_shrinks_like_inverse_square(half_spin):
    tsv, A = half_spin
    devs = [limit_deviation(tsv, A, _pointer(tsv, A, d)) for d in (5.0, 10.0, 20.0)]
    assert devs[0] > devs[1] > devs[2]
    for a, b in zip(devs, devs[1:]):
        assert 2.0 < a / b < 8.0


def test_moment_series_rebuilds_the_pointer_state(half_spin):
    tsv, A = half_spin
    pm = _pointer(tsv, A, 5.0)
    raw, _ = pointer_final_state(tsv, A, pm)
    series = pointer_state_from_moments(tsv, A, pm, 40)
    assert np.max(np.abs(series.amp - raw.amp)) < 1e-8


def test_postselection_probability_is_the_pointer_norm(half_spin):
    tsv, A = half_spin
    raw, _ = pointer_final_state(tsv, A, _pointer(tsv, A, 2.0))
    assert postselection_probability(tsv, A, 2.0) == pytest.approx(raw.norm(), abs=1e-10)


def test_pointer_grid_must_span_the_eigenvalues(half_spin):
    tsv, A = half_spin
    with pytest.raises(DomainError):
        pointer_final_state(tsv, A, PointerModel(1.0, Grid1D(-2.0, 2.0, 256)))
    with pytest.raises(ConfigError):
        PointerModel(0.0, Grid1D(-2.0, 2.0, 256))


def test_position_states_without_tilt():
    pp = prepost_position_states(10, 0.0, 0.01)
    assert weak_value(pp.tsv, pp.X).A_w.real == pytest.approx(1.0, abs=1e-12)


def test_position_weak_value_far_outside_the_range():
    pp = prepost_position_states(40, math.radians(80.0), 0.005)
    xw = weak_value(pp.tsv, pp.X).A_w.real
    assert xw == pytest.approx(1.0 / math.cos(math.radians(80.0)), abs=1e-6)
    assert xw > 5.0


def test_position_pointer_mean_near_the_weak_value():
    pp = prepost_position_states(40, math.radians(80.0), 0.005)
    pm = _pointer(pp.tsv, pp.X, math.sqrt(40.0))
    _, phi = pointer_final_state(pp.tsv, pp.X, pm)
    assert pointer_mean(phi) == pytest.approx(1.0 / math.cos(math.radians(80.0)), rel=0.10)


def test_position_packets_must_be_resolvable():
    with pytest.raises(ConfigError, match="resolvable"):
        prepost_position_states(40, 0.5, 0.1)


def test_coefficients_do_not_overflow():
    c = prepost_coefficients(200, math.radians(80.0))
    assert all(math.isfinite(float(abs(x))) for x in c)
    assert float(c[1]) < 0.0 < float(c[2])


def test_tail_ratio_and_threshold():
    assert tail_ratio(0.1, 1.0, 0.05) == pytest.approx(1.0)
    x = threshold_x(0.1, 1.0, math.e)
    assert x == pytest.approx(5.05)
    assert tail_ratio(0.1, 1.0, x) == pytest.approx(math.e)
    assert threshold_x(0.1, 2.0, math.e) - 0.05 == pytest.approx(4.0 * (x - 0.05))
    with pytest.raises(ConfigError):
        threshold_x(0.1, 1.0, 0.5)


@pytest.mark.parametrize("spec", ["spin:0.5:90", "spin:x:1:2", "{not json"])
def test_bad_state_specs(spec):
    with pytest.raises(ConfigError):
        parse_state_spec(spec)


def test_json_state_specs():
    v = parse_state_spec("[[1, 0], [0, 1]]")
    np.testing.assert_allclose(v, [1.0, 1j])
    A = parse_operator_spec("diag:[1, -1]")
    np.testing.assert_allclose(A.eigenvalues_float(), [-1.0, 1.0])
    again = state_from_json(state_to_json(v))
    np.testing.assert_array_equal(again, v)
