import math

import numpy as np
import pandas as pd
import pytest

from qfield import PacketSpec
from runners import agreement_cases, fig3_context, idealized_agreement, idealized_length, run_scenario
from scenarios import default_config, load_config, load_report, save_report


def test_idealized_length():
    assert idealized_length(PacketSpec("gaussian", 15.0, 3.0), 15.0) == 12.0
    assert idealized_length(PacketSpec("rectangular", 15.0, 20.0, smoothing=1.0), 15.0) == pytest.approx(14.85)


def test_fig3_context_predicts_the_started_right_fraction():
    ctx = fig3_context(default_config("fig3"))
    assert ctx["f"] == pytest.approx(0.1)
    assert ctx["predicted_fraction"] == pytest.approx(0.9)
    assert abs(ctx["profile_fraction"] - 0.9) < 0.05
    assert ctx["q_origin"] == pytest.approx(0.0)
    assert ctx["pulse"] == pytest.approx([0.0, 0.075])


def test_agreement_cases_keep_away_from_the_branch_edges():
    cfg = default_config("fig3")
    cases = agreement_cases(cfg, 50, seed=3, edge_margin=2.0)
    assert len(cases) == 50
    edges = np.array([0.0, 1.6, 16.0, 17.6])
    dist = np.min(np.abs(cases["q_final_local"].to_numpy()[:, None] - edges), axis=1)
    assert np.all(dist >= 2.0 * 1.6)
    assert set(cases["side"]) <= {"left", "right"}


# ------------------------------------------------------------------ full runs

def _crossing_flags(report):
    return [(r["flags"]["turned"], r["flags"]["final_side"]) for r in report.runs]


@pytest.mark.slow
def test_fig1_right_start_turns_back():
    report = run_scenario(default_config("fig1"))
    right = report.runs[0]["flags"]
    assert right["turned"] and right["final_side"] == "right"
    assert report.checks["norm_ok"]


@pytest.mark.slow
def test_fig1_single_packet_goes_through():
    cfg = load_config(name="fig1", overrides=["packets.weight_left=0", "starts=[15.0]"])
    flags = run_scenario(cfg).runs[0]["flags"]
    assert not flags["turned"]
    assert flags["final_side"] == "left"


@pytest.mark.slow
def test_seeded_run_is_bitwise_reproducible():
    cfg = load_config(name="fig1", overrides=["n=40", "seed=5"])
    a, b = run_scenario(cfg), run_scenario(cfg)
    pd.testing.assert_frame_equal(a.outcomes, b.outcomes, check_exact=True)
    for ta, tb in zip(a.trajectories, b.trajectories):
        np.testing.assert_array_equal(ta.points, tb.points)
    assert a.stats == b.stats


@pytest.mark.slow
def test_fig2_only_the_left_start_moves_the_pointer():
    report = run_scenario(default_config("fig2"))
    right, left = (r["flags"] for r in report.runs)
    assert right["pointer_still"] and not right["turned"]
    assert left["pointer_shifted"]


@pytest.mark.slow
def test_zero_couplings_reduce_to_the_unmeasured_crossing():
    plain = _crossing_flags(run_scenario(default_config("fig1")))
    shift = run_scenario(load_config(name="fig2", overrides=["coupling.strength=0"]))
    kick = run_scenario(load_config(name="fig4", overrides=["coupling.strength=0"]))
    assert _crossing_flags(shift) == plain
    assert _crossing_flags(kick) == plain
    assert all(r["flags"]["pointer_still"] for r in shift.runs)
    assert not any(r["flags"]["moves_later"] for r in kick.runs)


@pytest.mark.slow
def test_fig3_postselected_fraction():
    report = run_scenario(load_config(name="fig3", overrides=["n=400"]))
    ens = report.stats["ensemble"]
    assert ens["within_3_sigma"]
    assert ens["below_floor"] == 0


@pytest.mark.slow
def test_fig3_large_ensemble_matches_the_overlap_rule():
    report = run_scenario(load_config(name="fig3", overrides=["n=6000"]))
    ens = report.stats["ensemble"]
    assert ens["selected"] > 2000
    assert ens["abs_error"] <= 0.02
    assert abs(ens["profile_offset"]) < 0.01


@pytest.mark.slow
def test_fig3_turns_agree_with_the_idealized_rule():
    frac, cases = idealized_agreement(default_config("fig3"))
    assert len(cases) == 200
    assert (~cases["halted"]).sum() >= 198
    assert frac >= 0.99


@pytest.mark.slow
def test_fig4_pointer_moves_only_after_the_overlap():
    report = run_scenario(default_config("fig4"))
    right = report.runs[0]["flags"]
    assert not right["entered_region"]
    assert right["turned"] and right["final_side"] == "right"
    assert right["still_before_overlap"] and right["moves_later"] and right["onset_after_overlap"]
    assert report.context["overlap_onset"] is not None


@pytest.mark.slow
def test_stern_gerlach_outcomes_follow_the_start():
    report = run_scenario(default_config("sg"))
    assert report.stats["ensemble"]["agreement"] == 1.0
    assert report.checks["reversal_identical_positions"]
    assert report.checks["reversal_flips_labels"]


@pytest.mark.slow
def test_protective_run(tmp_path):
    report = run_scenario(default_config("protective"))
    assert report.runs[-1]["flags"]["within_tolerance"]
    assert report.checks["reconstruction_l1"] < 0.02
    assert report.checks["stationary"]
    save_report(report, tmp_path)
    assert load_report(tmp_path).name == "protective"
    assert math.isfinite(report.runs[0]["result"]["grid_error"])
