import json
import math

import numpy as np
import pytest

import runio
from errors import ConfigError
from runio import RunManifest


def test_fmt_round_trips_floats():
    x = 0.1 + 0.2
    assert float(runio.fmt(x)) == x
    assert runio.fmt(np.int64(3)) == 3
    assert runio.fmt(np.bool_(True)) is True
    assert runio.fmt("left") == "left"


def test_to_jsonable_handles_numpy_and_complex():
    out = runio.to_jsonable({"a": np.arange(3), "z": 1 + 2j, 1: np.float32(0.5)})
    assert out == {"a": [0, 1, 2], "z": [1.0, 2.0], "1": 0.5}


def test_dumps_keeps_nan_and_sorts():
    text = runio.dumps({"b": float("nan"), "a": 1})
    assert text.index('"a"') < text.index('"b"')
    assert math.isnan(json.loads(text)["b"])


def test_read_json_rejects_garbage(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigError):
        runio.read_json(p)


def test_deep_merge_rejects_unknown_keys():
    base = {"grid": {"n": 64, "x_min": 0.0}, "name": "fig1"}
    merged = runio.deep_merge(base, {"grid": {"n": 128}})
    assert merged == {"grid": {"n": 128, "x_min": 0.0}, "name": "fig1"}
    assert base["grid"]["n"] == 64
    with pytest.raises(ConfigError, match="grid.nn"):
        runio.deep_merge(base, {"grid": {"nn": 1}})


def test_overrides_and_aliases():
    cfg = {"pointer": {"shift_fraction": 0.1}, "ensemble": {"n_samples": 10, "seed": 0}}
    out = runio.apply_overrides(cfg, ["f=0.25", "n=50", "seed=3"])
    assert out["pointer"]["shift_fraction"] == 0.25
    assert out["ensemble"] == {"n_samples": 50, "seed": 3}
    assert cfg["ensemble"]["n_samples"] == 10


@pytest.mark.parametrize("item", ["nokey", "=3", "pointer.missing=1", "ensemble.seed.x=1"])
def test_bad_overrides(item):
    cfg = {"pointer": {"shift_fraction": 0.1}, "ensemble": {"seed": 0}}
    with pytest.raises(ConfigError):
        runio.apply_overrides(cfg, [item])


def test_parse_value_falls_back_to_string():
    assert runio.parse_value("[1, 2]") == [1, 2]
    assert runio.parse_value("null") is None
    assert runio.parse_value("analytic") == "analytic"


def test_manifest_inventory(tmp_path):
    cfg = tmp_path / "config.json"
    runio.write_json(cfg, {"name": "fig1"})
    (tmp_path / "report.json").write_text("{}", encoding="utf-8")
    m = RunManifest.start(cfg, seed=7)
    m.finish(tmp_path)
    again = RunManifest.load(tmp_path)
    assert again.seed == 7
    assert again.tool_version == runio.TOOL_VERSION
    assert set(again.outputs) == {"config.json", "report.json"}
    assert again.verify_config(tmp_path)
    runio.write_json(cfg, {"name": "fig2"})
    assert not again.verify_config(tmp_path)


def test_default_out_root_follows_env(out_root):
    assert runio.default_out_root() == out_root


def test_quiet_log_still_prints_warnings(capsys):
    runio.log("[info] hidden")
    runio.log("[warn] shown")
    captured = capsys.readouterr()
    assert "hidden" not in captured.out
    assert "shown" in captured.out
