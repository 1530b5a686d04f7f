import math

import numpy as np
import pytest
from scipy.stats import kstest

from errors import ConfigError, NodeEncounter
from guidance import (
    EnsembleSpec,
    Trajectory,
    check_non_crossing,
    density_cdf,
    density_quantile,
    equivariance_ks,
    integrate_ensemble,
    integrate_trajectory,
    output_times,
    read_trajectories,
    sample_initial,
    velocity_field,
    write_trajectories,
)
from propagate import CouplingSpec, GProfile, Hamiltonian2DConfig, evolve_1d_series, evolve_2d
from qfield import Grid1D, PacketSpec, WaveFunction1D, WaveFunction2D, build_packet


@pytest.fixture(scope="module")
def free_series():
    g = Grid1D(-20.0, 20.0, 512)
    psi = build_packet(g, PacketSpec("gaussian", -5.0, 1.0, velocity=2.0))
    return evolve_1d_series(psi, None, 0.0, 2.0, 0.005, stride=2)


def test_trajectory_validation():
    with pytest.raises(ConfigError):
        Trajectory(np.array([0.0, 0.0]), np.array([1.0, 2.0]))
    with pytest.raises(ConfigError):
        Trajectory(np.array([0.0, 1.0]), np.array([1.0]))
    with pytest.raises(ConfigError):
        Trajectory(np.array([0.0, 1.0]), np.array([1.0, np.inf]))


def test_trajectory_turn_and_sides():
    tr = Trajectory(np.array([0.0, 1.0, 2.0]), np.array([2.0, 1.0, 2.0]))
    assert tr.turned()
    assert tr.start_side() == "right"
    assert tr.final_side() == "right"
    straight = Trajectory(np.array([0.0, 1.0, 2.0]), np.array([2.0, 0.0, -2.0]))
    assert not straight.turned()
    assert straight.final_side() == "left"
    with pytest.raises(ConfigError):
        straight.q


def test_plane_wave_velocity():
    g = Grid1D(0.0, 2.0 * math.pi, 64)
    psi = WaveFunction1D(g, np.exp(3j * g.x)).normalized()
    np.testing.assert_allclose(velocity_field(psi), 3.0, atol=1e-10)


def test_velocity_is_undefined_below_the_floor():
    g = Grid1D(-20.0, 20.0, 512)
    psi = build_packet(g, PacketSpec("gaussian", 0.0, 1.0))
    v = velocity_field(psi)
    assert np.isnan(v[0])
    assert v[256] == pytest.approx(0.0, abs=1e-12)


def test_output_times():
    np.testing.assert_allclose(output_times(0.0, 1.0, 0.25), [0.0, 0.25, 0.5, 0.75, 1.0])
    with pytest.raises(ConfigError):
        output_times(0.0, 1.0, 0.0)


def test_free_packet_trajectory_follows_the_scaled_width(free_series):
    offset, t = 0.5, 2.0
    tr = integrate_trajectory(free_series, [-5.0 + offset], dt_out=0.05)
    sigma_t = math.sqrt(1.0 + t ** 2)
    assert tr.times[-1] == pytest.approx(t)
    assert tr.x[-1] == pytest.approx(-5.0 + 2.0 * t + offset * sigma_t, abs=1e-3)
    assert tr.halted is None


def test_start_outside_the_packet_is_a_node(free_series):
    with pytest.raises(NodeEncounter):
        integrate_trajectory(free_series, [15.0], dt_out=0.05)
    trajs, reports = integrate_ensemble(free_series, np.array([-5.0, 15.0]), dt_out=0.05)
    assert reports[0] is None
    assert isinstance(reports[1], NodeEncounter)
    assert trajs[1].times.size == 1
    assert trajs[1].halted["time"] == 0.0


def test_ensemble_is_equivariant_and_ordered(free_series):
    spec = EnsembleSpec(300, seed=4)
    starts = sample_initial(free_series.fields[0], spec)
    trajs, reports = integrate_ensemble(free_series, starts, dt_out=0.05, workers=2, batch=64)
    assert all(r is None for r in reports)
    d0 = kstest(starts, density_cdf(free_series.fields[0])).statistic
    d1, _ = equivariance_ks(free_series, trajs)
    assert d1 == pytest.approx(d0, abs=0.01)
    ok, when = check_non_crossing(trajs)
    assert ok and when is None


def test_threaded_and_serial_runs_agree(free_series):
    starts = np.linspace(-6.0, -4.0, 9)
    a, _ = integrate_ensemble(free_series, starts, dt_out=0.1, workers=1, batch=3)
    b, _ = integrate_ensemble(free_series, starts, dt_out=0.1, workers=3, batch=3)
    for ta, tb in zip(a, b):
        np.testing.assert_array_equal(ta.points, tb.points)


def test_seeded_ensemble_is_bitwise_reproducible(free_series):
    runs = []
    for _ in range(2):
        starts = sample_initial(free_series.fields[0], EnsembleSpec(40, seed=9))
        trajs, _ = integrate_ensemble(free_series, starts, dt_out=0.1, workers=2, batch=8)
        runs.append(np.stack([tr.points for tr in trajs]))
    np.testing.assert_array_equal(runs[0], runs[1])


def test_non_crossing_reports_the_first_violation():
    t = np.array([0.0, 1.0, 2.0])
    a = Trajectory(t, np.array([0.0, 1.0, 2.0]))
    b = Trajectory(t, np.array([1.0, 0.5, 0.0]))
    assert check_non_crossing([a, b]) == (False, 1.0)
    assert check_non_crossing([a]) == (True, None)


def test_density_quantile_of_a_symmetric_packet():
    g = Grid1D(-20.0, 20.0, 512)
    psi = build_packet(g, PacketSpec("gaussian", 2.5, 1.0))
    assert float(density_quantile(psi, 0.5)) == pytest.approx(2.5, abs=1e-9)
    lo, hi = density_quantile(psi, [0.1, 0.9])
    assert lo < 2.5 < hi
    assert 2.5 - lo == pytest.approx(hi - 2.5, abs=1e-9)


def test_sampling_is_seeded():
    g = Grid1D(-20.0, 20.0, 512)
    psi = build_packet(g, PacketSpec("gaussian", 0.0, 1.0))
    a = sample_initial(psi, EnsembleSpec(50, seed=1))
    b = sample_initial(psi, EnsembleSpec(50, seed=1))
    c = sample_initial(psi, EnsembleSpec(50, seed=2))
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_uniform_sampling_stays_in_the_support():
    spec = PacketSpec("rectangular", 8.0, 16.0, smoothing=1.6)
    u = sample_initial(spec, EnsembleSpec(500, seed=0, sampling="uniform"))
    assert u.min() >= 0.0 and u.max() <= 16.0
    with pytest.raises(ConfigError):
        sample_initial("nothing", EnsembleSpec(5, sampling="uniform"))


def test_composite_sampling_shape():
    gx, gq = Grid1D(-20.0, 20.0, 64), Grid1D(-8.0, 8.0, 64)
    Psi = WaveFunction2D.product(build_packet(gx, PacketSpec("gaussian", -5.0, 1.0)),
                                 build_packet(gq, PacketSpec("gaussian", 1.0, 1.0)))
    pts = sample_initial(Psi, EnsembleSpec(200, seed=3))
    assert pts.shape == (200, 2)
    assert abs(pts[:, 0].mean() + 5.0) < 0.3
    assert abs(pts[:, 1].mean() - 1.0) < 0.3


@pytest.mark.parametrize("kw", [{"n_samples": 0}, {"n_samples": 5, "sampling": "grid"}])
def test_bad_ensemble_spec(kw):
    with pytest.raises(ConfigError):
        EnsembleSpec(**kw)


def test_pointer_velocity_carries_the_shift_rate():
    gx, gq = Grid1D(-20.0, 20.0, 64), Grid1D(-8.0, 8.0, 64)
    Psi = WaveFunction2D.product(build_packet(gx, PacketSpec("gaussian", -5.0, 1.0)),
                                 build_packet(gq, PacketSpec("gaussian", 0.0, 1.0)))
    c = CouplingSpec("position_shift", (-15.0, 0.0), GProfile.smooth_adiabatic(0.2, 0.1), 2.0)
    cfg = Hamiltonian2DConfig(kinetic_x=False, kinetic_q=False, coupling=c)
    series = evolve_2d(Psi, cfg, 0.0, 0.2, 0.01, stride=2, snapshots=True)
    tr = integrate_trajectory(series, [-5.0, 0.3], dt_out=0.02)
    assert tr.x[-1] == pytest.approx(-5.0, abs=1e-12)
    assert tr.q[-1] == pytest.approx(2.3, abs=1e-6)
    vx, vq = velocity_field(Psi, cfg, t=0.1)
    assert np.nanmax(vq) == pytest.approx(c.rate(0.1))


def test_trajectory_files_round_trip(tmp_path, free_series):
    trajs, _ = integrate_ensemble(free_series, np.array([-5.5, -4.5]), dt_out=0.1)
    write_trajectories(tmp_path, trajs, [{"label": "a"}, {"label": "b"}])
    again, index = read_trajectories(tmp_path)
    assert list(index["label"]) == ["a", "b"]
    for a, b in zip(trajs, again):
        np.testing.assert_array_equal(a.points, b.points)
        np.testing.assert_array_equal(a.times, b.times)
