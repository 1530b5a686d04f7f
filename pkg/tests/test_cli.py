import json
import math

import pandas as pd
import pytest

import cli
from cli import aggregate_run, build_parser, main, parse_case, parse_eigenstate
from errors import ConfigError
from tsvf import weak_value

HALF_SPIN = ["--pre", "spin:0.5:90:0", "--post", "spin:0.5:90:90", "--op", "sigma:90:45"]


def _outcomes(path, **extra):
    df = pd.DataFrame({
        "member": range(4),
        "x0": [10.0, 12.0, -11.0, -13.0],
        "x_end": [9.0, 14.0, 12.0, -8.0],
        "t_last": [1.5] * 4,
        "halted": [False] * 4,
        "q_end": [5.0, 10.0, 17.0, 3.0],
    })
    for k, v in extra.items():
        df[k] = v
    path.mkdir(parents=True, exist_ok=True)
    df.to_csv(path / "outcomes.csv", index=False)
    return path


def test_spin_and_position_cases():
    tsv, A = parse_case("spin:0.5:45:plane")
    assert weak_value(tsv, A).A_w.real == pytest.approx(0.5 * math.sqrt(2.0))
    tsv, A = parse_case("spin:1:60")
    assert weak_value(tsv, A).A_w.real == pytest.approx(2.0)
    tsv, X = parse_case("position:10:0")
    assert weak_value(tsv, X).A_w.real == pytest.approx(1.0)


@pytest.mark.parametrize("spec", ["spin:a:45", "spin:0.5", "orbit:1:2", "spin:0.5:45:tilted", "position:4:30:1.0"])
def test_bad_cases(spec):
    with pytest.raises(ConfigError):
        parse_case(spec)


def test_eigenstate_specs(tmp_path):
    assert parse_eigenstate("box:2").box_index == 2
    assert parse_eigenstate("box:1:2.5").L == 2.5
    assert parse_eigenstate("harmonic:0:2").omega == 2.0
    assert parse_eigenstate('{"potential": "harmonic", "quantum_number": 3}').quantum_number == 3
    path = tmp_path / "state.json"
    path.write_text(json.dumps({"potential": "box", "quantum_number": 4}), encoding="utf-8")
    assert parse_eigenstate(str(path)).quantum_number == 4
    for bad in ("box", "box:x", "[1, 2]"):
        with pytest.raises(ConfigError):
            parse_eigenstate(bad)


def test_parser_defaults():
    args = build_parser().parse_args(["tsvf-pointer", "--case", "spin:0.5:45"])
    assert args.delta == [5.0, 10.0, 20.0]
    assert args.order == 0
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def test_weak_verb_prints_json(capsys):
    assert main(["--quiet", "weak", *HALF_SPIN]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["re"] == pytest.approx(math.sqrt(2.0))
    assert out["im"] == pytest.approx(0.0, abs=1e-12)


def test_weak_verb_at_extended_precision(capsys):
    assert main(["--quiet", "weak", *HALF_SPIN, "--dps", "40"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["dps"] == 40
    assert out["re"] == pytest.approx(math.sqrt(2.0), abs=1e-14)


def test_orthogonal_weak_value_exits_with_a_guard_code(capsys):
    code = main(["--quiet", "weak", "--pre", "spin:0.5:90:0", "--post", "spin:0.5:90:180", "--op", "sigma:0:0"])
    assert code == 3
    record = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert record["error"] == "UndefinedWeakValue"
    assert record["exit_code"] == 3


def test_incomplete_weak_arguments():
    assert main(["--quiet", "weak", "--pre", "spin:0.5:0:0"]) == 2


def test_missing_config_is_an_io_error(tmp_path):
    assert main(["--quiet", "run", str(tmp_path / "nope.json")]) == 4


def test_bad_override_is_a_config_error(tmp_path):
    path = tmp_path / "fig1.json"
    path.write_text(json.dumps({"name": "fig1"}), encoding="utf-8")
    assert main(["--quiet", "run", str(path), "--set", "packets.nothing=1"]) == 2


def test_unknown_errors_propagate(monkeypatch):
    def boom(tsv, A):
        raise KeyError("bug")

    monkeypatch.setattr(cli, "weak_value", boom)
    with pytest.raises(KeyError):
        main(["weak", *HALF_SPIN])


def test_stats_verb(tmp_path):
    run_dir = _outcomes(tmp_path / "run")
    assert main(["--quiet", "stats", str(run_dir)]) == 0
    stats = json.loads((run_dir / "stats.json").read_text(encoding="utf-8"))
    assert stats["counts"]["right_to_right"] == 2
    assert stats["final_right_started_right"] == pytest.approx(2.0 / 3.0)
    assert stats["final_left_n"] == 1
    assert len(stats["pointer_hist_final_right"]["edges"]) == 23
    text = (run_dir / "stats_summary.txt").read_text(encoding="utf-8").splitlines()
    assert text[0] == "STATS SUMMARY"
    assert "n=4" in text


def test_stats_of_a_spin_run(tmp_path):
    run_dir = _outcomes(tmp_path / "sg", gradient=[1, 1, -1, -1], marginal=[False, True, False, False],
                        agrees=[True, False, True, True])
    assert aggregate_run(run_dir)["agreement"] == 1.0


def test_stats_without_outcomes_writes_an_error(tmp_path):
    assert main(["--quiet", "stats", str(tmp_path)]) == 2
    record = json.loads((tmp_path / "error.json").read_text(encoding="utf-8"))
    assert record["error"] == "ConfigError"


def test_protective_verb(tmp_path):
    out = tmp_path / "prot"
    assert main(["--quiet", "protective", "--state", "box:1", "--bins", "16", "--out", str(out)]) == 0
    rec = json.loads((out / "reconstruction.json").read_text(encoding="utf-8"))
    assert len(rec["measured"]) == 16
    assert rec["l1_error"] < 0.05
    assert len(pd.read_csv(out / "histogram.csv")) == 16


def test_tsvf_pointer_verb(tmp_path):
    out = tmp_path / "pointer"
    argv = ["--quiet", "tsvf-pointer", "--case", "spin:0.5:45:plane", "--delta", "5", "10",
            "--order", "30", "--out", str(out)]
    assert main(argv) == 0
    table = pd.read_csv(out / "pointer_summary.csv")
    assert list(table["delta"]) == [5.0, 10.0]
    aw = 0.5 * math.sqrt(2.0)
    assert abs(table["pointer_mean"].iloc[1] - aw) < abs(table["pointer_mean"].iloc[0] - aw)
    assert table["limit_deviation"].iloc[1] < table["limit_deviation"].iloc[0]
    for a, b in zip(table["postselected_norm"], table["postselection_probability"]):
        assert a == pytest.approx(b, abs=1e-10)
    frame = pd.read_csv(out / "pointer_delta_5.csv")
    assert {"Q", "exact_density", "limit_density", "series_density"} <= set(frame.columns)
    assert (frame["series_density"] - frame["exact_density"]).abs().max() < 1e-8
