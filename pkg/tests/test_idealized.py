import numpy as np
import pytest

from errors import ConfigError, DegenerateScenario, DomainError
from idealized import (
    EnsembleStats,
    IdealizedScenario,
    OutcomeRecord,
    convergence_table,
    crossing_end_time,
    crossing_trajectory,
    measured_outcome,
    postselection_stats,
    turns,
    velocity_at,
)


@pytest.fixture
def crossing():
    return IdealizedScenario(L=2.0, v=1.0, d=3.0)


@pytest.fixture
def weak():
    return IdealizedScenario(L=2.0, v=1.0, d=3.0, W=16.0, f=0.1, measurement="weak")


def test_right_start_stops_in_the_overlap_and_turns(crossing):
    tr = crossing_trajectory(crossing, 3.5)
    assert tr.knots_t == pytest.approx((0.0, 2.75, 3.25))
    assert tr.knots_x == pytest.approx((3.5, 0.75, 0.75))
    assert tr.turned
    assert tr.final_side(10.0) == "right"
    assert velocity_at(crossing, 0.75, 2.75) == 0.0


def test_trajectories_are_mirror_images(crossing):
    times = np.linspace(0.0, 6.0, 61)
    for x0 in (2.2, 3.0, 3.9):
        right = crossing_trajectory(crossing, x0).position(times)
        left = crossing_trajectory(crossing, -x0).position(times)
        np.testing.assert_allclose(left, -right, atol=1e-12)


def test_turned_particles_never_cross_the_origin(crossing):
    times = np.linspace(0.0, 6.0, 601)
    for x0 in np.linspace(2.01, 3.99, 25):
        assert np.all(crossing_trajectory(crossing, x0).position(times) > 0.0)


def test_single_packet_goes_straight():
    s = IdealizedScenario(L=2.0, v=1.0, d=3.0, weight_left=0.0)
    tr = crossing_trajectory(s, 3.5)
    assert not tr.turned
    assert tr.final_side(10.0) == "left"


def test_velocity_rule(crossing):
    assert velocity_at(crossing, -3.0, 0.0) == 1.0
    assert velocity_at(crossing, 3.0, 0.0) == -1.0
    assert np.isnan(velocity_at(crossing, 0.0, 0.0))
    np.testing.assert_array_equal(velocity_at(crossing, np.array([-0.5, 0.5]), 3.0), [0.0, 0.0])


def test_start_outside_the_packets(crossing):
    with pytest.raises(DomainError):
        crossing_trajectory(crossing, 0.0)


def test_crossing_end_time(crossing):
    assert crossing_end_time(crossing) == 4.0
    lc, rc = crossing.centers(4.0)
    assert lc - rc == pytest.approx(2.0)


def test_sampled_trajectory_matches_the_knots(crossing):
    tr = crossing_trajectory(crossing, 3.5).sample(5.0, 0.25)
    assert tr.times[-1] == 5.0
    assert tr.x[11] == pytest.approx(0.75)
    assert tr.turned()


@pytest.mark.parametrize(
    "kw",
    [
        {"L": 4.0, "v": 1.0, "d": 3.0},
        {"L": 1.0, "v": 0.0, "d": 3.0},
        {"L": 1.0, "v": 1.0, "d": 3.0, "f": 1.5},
        {"L": 1.0, "v": 1.0, "d": 3.0, "measurement": "strong"},
        {"L": 1.0, "v": 1.0, "d": 3.0, "weight_left": 0.0, "weight_right": 0.0},
    ],
)
def test_bad_scenarios(kw):
    with pytest.raises(ConfigError):
        IdealizedScenario(**kw)


def test_weak_branch_supports(weak):
    assert weak.shift == pytest.approx(1.6)
    assert weak.branch_support("right") == (0.0, 16.0)
    assert weak.branch_support("left") == pytest.approx((1.6, 17.6))
    np.testing.assert_array_equal(turns(weak, [1.0, 1.6, 8.0, 16.0, 17.0]), [False, True, True, True, False])


def test_weak_outcomes(weak):
    rec = measured_outcome(weak, "right", 8.0)
    assert rec.turned and rec.final_side == "right"
    rec = measured_outcome(weak, "right", 1.0)
    assert not rec.turned and rec.final_side == "left"
    rec = measured_outcome(weak, "left", 17.0)
    assert not rec.turned and rec.final_side == "right"
    assert rec.pointer_motion == "during_pulse"
    with pytest.raises(DomainError):
        measured_outcome(weak, "right", 17.0)


def test_robust_measurement_never_turns():
    s = IdealizedScenario(L=2.0, v=1.0, d=3.0, W=1.0, f=0.2, measurement="robust")
    assert s.shift == 1.0
    assert not measured_outcome(s, "right", 1.0).turned
    assert not measured_outcome(s, "left", 1.0).turned


def test_delayed_measurement_moves_the_pointer_after_the_overlap():
    s = IdealizedScenario(L=2.0, v=1.0, d=3.0, W=2.0, f=0.5, measurement="delayed")
    right = measured_outcome(s, "right", 1.0)
    left = measured_outcome(s, "left", 1.0)
    assert right.turned and right.pointer_motion == "after_overlap"
    assert left.turned and left.pointer_motion == "none"


def test_measured_outcome_needs_a_measurement(crossing):
    with pytest.raises(ConfigError):
        measured_outcome(crossing, "right", 0.5)


def test_outcome_record_consistency():
    with pytest.raises(ConfigError):
        OutcomeRecord("right", 0.0, True, "left", 0.0)


def test_exact_postselection(weak):
    st = postselection_stats(weak)
    assert st.exact_flag
    assert st.fraction_started_right == pytest.approx(0.9)
    edges = np.asarray(st.pointer_hist["edges"])
    dens = np.asarray(st.pointer_hist["density"])
    assert np.sum(dens * np.diff(edges)) == pytest.approx(1.0)
    assert dens[0] == 0.0


def test_left_postselection(weak):
    st = postselection_stats(weak, select="left")
    assert st.fraction_started_right == pytest.approx(0.1)


def test_sampled_postselection_converges(weak):
    st = postselection_stats(weak, n=20000, seed=0)
    assert abs(st.fraction_started_right - 0.9) < 0.012
    assert st.counts["total"] == 20000
    table = convergence_table(weak, [1000, 4000], seed=1)
    assert list(table.columns) == ["n", "fraction", "abs_error", "scaled_error"]
    assert (table["abs_error"] < 0.05).all()


def test_robust_limit_leaves_no_right_starts():
    s = IdealizedScenario(L=1.0, v=1.0, d=3.0, W=2.0, f=1.0, measurement="robust")
    st = postselection_stats(s)
    assert st.fraction_started_right == 0.0
    edges = np.asarray(st.pointer_hist["edges"])
    dens = np.asarray(st.pointer_hist["density"])
    assert np.sum(dens * np.diff(edges)) == pytest.approx(1.0)
    assert np.all(dens[edges[1:] <= 2.0] == 0.0)
    assert postselection_stats(s, select="left").fraction_started_right == 1.0
    assert postselection_stats(s, n=2000, seed=0).fraction_started_right == 0.0


@pytest.mark.parametrize("f, expected", [(0.0, 1.0), (1.0, 0.0)])
def test_boundary_fractions(f, expected):
    s = IdealizedScenario(L=2.0, v=1.0, d=3.0, W=16.0, f=f, measurement="weak")
    assert postselection_stats(s).fraction_started_right == expected


def test_nothing_selected_is_degenerate():
    s = IdealizedScenario(L=2.0, v=1.0, d=3.0, W=16.0, f=0.1, measurement="weak", weight_left=0.0)
    with pytest.raises(DegenerateScenario):
        postselection_stats(s)
    with pytest.raises(DegenerateScenario):
        postselection_stats(s, n=100, seed=0)


def test_weights_enter_the_exact_fraction():
    s = IdealizedScenario(L=2.0, v=1.0, d=3.0, W=16.0, f=0.1, measurement="weak", weight_left=3.0)
    # 0.9 * 1 / (0.9 * 1 + 0.1 * 3)
    assert postselection_stats(s).fraction_started_right == pytest.approx(0.75)


def test_sampled_fraction_at_quarter_shift():
    s = IdealizedScenario(L=2.0, v=1.0, d=3.0, W=16.0, f=0.25, measurement="weak")
    assert postselection_stats(s).fraction_started_right == pytest.approx(0.75)
    st = postselection_stats(s, n=100_000, seed=0)
    assert abs(st.fraction_started_right - 0.75) < 0.005


def test_sampling_error_shrinks_like_inverse_root_n(weak):
    table = convergence_table(weak, [1_000, 10_000, 100_000], seed=0)
    # binomial spread of the selected half: sqrt(0.9 * 0.1 / (n / 2)) * sqrt(n) ~ 0.42
    assert (table["scaled_error"] < 2.5).all()
    assert table["abs_error"].iloc[-1] < 0.008


def _rk4_path(s, x0, t_end, h):
    n = int(round(t_end / h))
    ts = np.linspace(0.0, t_end, n + 1)
    xs = np.empty(n + 1)
    xs[0] = x0
    for i in range(n):
        t, x = ts[i], xs[i]
        k1 = velocity_at(s, x, t)
        k2 = velocity_at(s, x + 0.5 * h * k1, t + 0.5 * h)
        k3 = velocity_at(s, x + 0.5 * h * k2, t + 0.5 * h)
        k4 = velocity_at(s, x + h * k3, t + h)
        xs[i + 1] = x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return ts, xs


def test_crossing_events_match_an_rk4_integration():
    s = IdealizedScenario(L=1.0, v=1.0, d=3.0)
    tr = crossing_trajectory(s, 3.0)
    assert tr.knots_t == pytest.approx((0.0, 2.75, 3.25))
    h = 1e-3
    ts, xs = _rk4_path(s, 3.0, 5.0, h)
    assert np.all(np.isfinite(xs))
    step_v = np.diff(xs) / h
    t_stop = ts[np.argmax(np.abs(step_v) < 1e-9)]
    t_resume = ts[np.argmax(step_v > 0.5)]
    assert abs(t_stop - tr.knots_t[1]) <= 2 * h
    assert abs(t_resume - tr.knots_t[2]) <= 2 * h
    np.testing.assert_allclose(tr.position(ts), xs, atol=2 * h)


def test_postselection_needs_a_weak_measurement():
    s = IdealizedScenario(L=2.0, v=1.0, d=3.0, measurement="delayed")
    with pytest.raises(ConfigError):
        postselection_stats(s)


def test_stats_json_round_trip(tmp_path, weak):
    st = postselection_stats(weak, n=500, seed=2)
    st.save(tmp_path / "stats.json")
    again = EnsembleStats.from_json(st.to_json())
    assert again.fraction_started_right == st.fraction_started_right
    assert again.counts == st.counts
