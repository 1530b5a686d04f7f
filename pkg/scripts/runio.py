"""
Console logging, JSON helpers, hashing, run manifests and --set overrides.

Everything the scenario runner and the CLI write to disk goes through here so
that numbers are always stored with round-trip-safe formatting.
"""
from __future__ import annotations

import copy
import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from errors import ConfigError

TOOL_VERSION = "0.3.0"
OUT_DIR = Path(os.environ.get("WEAKBOHM_OUT", "outputs"))
VERBOSE = True
PROGRESS_EVERY = 200

ALIASES = {
    "f": "pointer.shift_fraction",
    "n": "ensemble.n_samples",
    "seed": "ensemble.seed",
}


def log(msg: str) -> None:
    if not VERBOSE and not msg.startswith(("[error]", "[warn]")):
        return
    stream = sys.stderr if msg.startswith("[error]") else sys.stdout
    print(msg, file=stream, flush=True)


def progress(i: int, total: int, t: float, every: int = PROGRESS_EVERY) -> None:
    if VERBOSE and (i % every == 0 or i == total):
        log(f"[info] step {i}/{total} t={t:.3f}")


def default_out_root() -> Path:
    return Path(os.environ.get("WEAKBOHM_OUT", str(OUT_DIR)))


def ensure_dir(p: Path) -> None:
    p.mkdir(parents=True, exist_ok=True)


def fmt(v: Any) -> Any:
    """repr() of a float is the shortest string that parses back to the same bits."""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    return v


def to_jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, Path):
        return str(obj)
    return obj


def dumps(obj: Any) -> str:
    return json.dumps(to_jsonable(obj), indent=2, sort_keys=True, allow_nan=True)


def write_json(path: Path, obj: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj) + "\n", encoding="utf-8")


def read_json(path: Path) -> Any:
    with path.open(encoding="utf-8") as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from e


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def utc_now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


# ---------------------------------------------------------------- overrides

def deep_merge(base: Dict[str, Any], patch: Dict[str, Any], path: str = "") -> Dict[str, Any]:
    """Merge patch over a copy of base; keys unknown to base are rejected."""
    out = copy.deepcopy(base)
    for k, v in patch.items():
        where = f"{path}.{k}" if path else k
        if k not in out:
            raise ConfigError(f"unknown config key: {where}")
        if isinstance(out[k], dict) and isinstance(v, dict):
            out[k] = deep_merge(out[k], v, where)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def parse_override(item: str) -> Tuple[str, Any]:
    if "=" not in item:
        raise ConfigError(f"--set expects dotted.path=value, got: {item!r}")
    key, raw = item.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"--set has an empty key: {item!r}")
    return ALIASES.get(key, key), parse_value(raw.strip())


def apply_overrides(cfg: Dict[str, Any], items: Optional[List[str]]) -> Dict[str, Any]:
    out = copy.deepcopy(cfg)
    for item in items or []:
        key, value = parse_override(item)
        parts = key.split(".")
        node = out
        for p in parts[:-1]:
            if not isinstance(node, dict) or p not in node:
                raise ConfigError(f"--set path does not exist: {key}")
            node = node[p]
        if not isinstance(node, dict) or parts[-1] not in node:
            raise ConfigError(f"--set path does not exist: {key}")
        node[parts[-1]] = value
    return out


# ---------------------------------------------------------------- manifest

@dataclass
class RunManifest:
    tool_version: str
    config_sha256: str
    seed: Optional[int]
    started_utc: str
    finished_utc: str = ""
    outputs: Dict[str, str] = field(default_factory=dict)

    @classmethod
    def start(cls, config_path: Path, seed: Optional[int]) -> "RunManifest":
        return cls(
            tool_version=TOOL_VERSION,
            config_sha256=sha256_file(config_path),
            seed=seed,
            started_utc=utc_now(),
        )

    def finish(self, out_dir: Path) -> None:
        self.finished_utc = utc_now()
        inventory = {}
        for p in sorted(out_dir.rglob("*")):
            if p.is_file() and p.name != "manifest.json":
                inventory[p.relative_to(out_dir).as_posix()] = sha256_file(p)
        self.outputs = inventory
        write_json(out_dir / "manifest.json", asdict(self))

    @classmethod
    def load(cls, out_dir: Path) -> "RunManifest":
        return cls(**read_json(out_dir / "manifest.json"))

    def verify_config(self, out_dir: Path) -> bool:
        return sha256_file(out_dir / "config.json") == self.config_sha256
