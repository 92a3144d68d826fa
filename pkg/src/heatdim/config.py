"""Experiment configuration files.

Configs are TOML with an explicit ``schema_version``::

    schema_version = 1
    experiment = "kernel-duality"
    seed = 0
    replicas = 200          # optional
    out = "runs/kernel-duality"

    [params]
    n_points = 1000

    [tolerances]
    max_abs_diff = 1e-10
"""

from __future__ import annotations

import hashlib
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigParseError

SCHEMA_VERSION = 1
_TOP_KEYS = {"schema_version", "experiment", "seed", "replicas", "out", "params", "tolerances"}
_SEED_MAX = 2**64 - 1


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int = 0
    replicas: int | None = None
    out: str = "runs"
    params: dict[str, Any] = field(default_factory=dict)
    tolerances: dict[str, float] = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"schema_version": self.schema_version, "experiment": self.experiment, "seed": self.seed}
        if self.replicas is not None:
            d["replicas"] = self.replicas
        d["out"] = self.out
        d["params"] = dict(self.params)
        d["tolerances"] = dict(self.tolerances)
        return d

    def dumps(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()[:16]

    def with_overrides(self, seed=None, replicas=None, out=None, params=None) -> "ExperimentConfig":
        merged = dict(self.params)
        merged.update(params or {})
        return ExperimentConfig(
            self.experiment,
            self.seed if seed is None else int(seed),
            self.replicas if replicas is None else int(replicas),
            self.out if out is None else str(out),
            merged,
            dict(self.tolerances),
            self.schema_version,
        )


def _fail(source: str, msg: str, line: int | None = None) -> ConfigParseError:
    where = f"{source}:{line}" if line else source
    return ConfigParseError(f"{where}: {msg}")


def _key_line(text: str, key: str) -> int | None:
    pat = re.compile(rf"^\s*{re.escape(key)}\s*=", re.MULTILINE)
    m = pat.search(text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def loads(text: str, source: str = "<string>") -> ExperimentConfig:
    """Parse and validate a config.

    Raises
    ------
    ConfigParseError
        On TOML syntax errors (with the parser's line and column) or on a
        missing, unknown or ill-typed field (with its line when known).
    """
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise _fail(source, f"syntax error: {exc}") from None

    unknown = set(raw) - _TOP_KEYS
    if unknown:
        key = sorted(unknown)[0]
        raise _fail(source, f"field '{key}': unknown top-level key", _key_line(text, key))
    version = raw.get("schema_version")
    if version != SCHEMA_VERSION:
        raise _fail(source, f"field 'schema_version': expected {SCHEMA_VERSION}, got {version!r}",
                    _key_line(text, "schema_version"))
    name = raw.get("experiment")
    if not isinstance(name, str) or not name:
        raise _fail(source, "field 'experiment': missing or not a string", _key_line(text, "experiment"))
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or not (0 <= seed <= _SEED_MAX):
        raise _fail(source, "field 'seed': must be an integer in [0, 2^64)", _key_line(text, "seed"))
    replicas = raw.get("replicas")
    if replicas is not None and (not isinstance(replicas, int) or isinstance(replicas, bool) or replicas < 1):
        raise _fail(source, "field 'replicas': must be a positive integer", _key_line(text, "replicas"))
    out = raw.get("out", "runs")
    if not isinstance(out, str):
        raise _fail(source, "field 'out': must be a string", _key_line(text, "out"))
    params = raw.get("params", {})
    tols = raw.get("tolerances", {})
    if not isinstance(params, dict):
        raise _fail(source, "field 'params': must be a table", _key_line(text, "params"))
    if not isinstance(tols, dict):
        raise _fail(source, "field 'tolerances': must be a table", _key_line(text, "tolerances"))
    for k, v in tols.items():
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            raise _fail(source, f"field 'tolerances.{k}': must be a number", _key_line(text, k))
    return ExperimentConfig(name, seed, replicas, out, params, {k: float(v) for k, v in tols.items()}, version)


def load(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigParseError(f"{path}: cannot read ({exc.strerror})") from None
    return loads(text, str(path))


def dump(config: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(config.dumps(), encoding="utf-8")
