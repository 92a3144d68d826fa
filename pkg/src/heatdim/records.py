"""Run manifests, summary reports and field files.

Manifests are NDJSON: one JSON object per run, one run per line.  Field
samples are written as an NDJSON header line followed by either a raw
little-endian float64 payload (``.bin``, C order ``(time, site, p)``) or a
CSV with one row per (time, site).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .errors import SchemaError

MANIFEST_KEYS = {"experiment", "config_hash", "code_version", "wall_time", "seed", "checks", "values"}
CHECK_KEYS = {"name", "passed", "measured", "target"}


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer, int)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        f = float(x)
        return f if math.isfinite(f) else str(f)
    return x


@dataclass
class Check:
    name: str
    passed: bool
    measured: Any
    target: str
    note: str = ""


@dataclass
class RunManifest:
    experiment: str
    config_hash: str
    code_version: str
    wall_time: float
    seed: int
    checks: list[Check] = field(default_factory=list)
    values: dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_json(self) -> str:
        names = [c.name for c in self.checks]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate check names in {self.experiment}")
        d = asdict(self)
        return json.dumps(_jsonable(d), ensure_ascii=False, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RunManifest":
        missing = MANIFEST_KEYS - set(d)
        if missing:
            raise SchemaError(f"manifest missing keys {sorted(missing)}")
        if not isinstance(d["checks"], list):
            raise SchemaError("manifest 'checks' must be a list")
        checks = []
        for c in d["checks"]:
            if not isinstance(c, dict) or CHECK_KEYS - set(c):
                raise SchemaError(f"malformed check entry {c!r}")
            checks.append(Check(c["name"], bool(c["passed"]), c["measured"], str(c["target"]), c.get("note", "")))
        return cls(str(d["experiment"]), str(d["config_hash"]), str(d["code_version"]), float(d["wall_time"]),
                   int(d["seed"]), checks, dict(d["values"]))


def write_manifest(manifest: RunManifest, path: str | Path, append: bool = False) -> None:
    with open(path, "a" if append else "w", encoding="utf-8") as fh:
        fh.write(manifest.to_json() + "\n")


def read_manifests(path: str | Path) -> list[RunManifest]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise SchemaError(f"{path}:{lineno}: expected an object")
            try:
                out.append(RunManifest.from_dict(obj))
            except SchemaError as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from None
    return out


SUMMARY_HEADER = ["experiment", "checks", "passed", "failed", "status"]
DETAIL_HEADER = ["experiment", "check", "passed", "measured", "target"]


@dataclass
class Report:
    rows: list[list[Any]]
    details: list[list[Any]]

    @property
    def exit_status(self) -> int:
        return 0 if all(r[3] == 0 for r in self.rows) else 1

    def summary_csv(self) -> str:
        return _csv([SUMMARY_HEADER] + self.rows)

    def details_csv(self) -> str:
        return _csv([DETAIL_HEADER] + self.details)

    def text(self) -> str:
        if not self.rows:
            return "no manifests"
        width = max(len(r[0]) for r in self.rows)
        lines = [f"{'experiment':<{width}}  checks  passed  failed  status"]
        for name, n, ok, bad, status in self.rows:
            lines.append(f"{name:<{width}}  {n:>6}  {ok:>6}  {bad:>6}  {status}")
        return "\n".join(lines)


def _csv(rows: Iterable[Sequence[Any]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")  # RFC 4180 line endings
    for r in rows:
        writer.writerow(r)
    return buf.getvalue()


def report(manifest_paths: Sequence[str | Path]) -> Report:
    """One summary row per manifest, sorted by experiment name."""
    runs = [m for p in manifest_paths for m in read_manifests(p)]
    runs.sort(key=lambda m: m.experiment)
    rows, details = [], []
    for m in runs:
        n_ok = sum(c.passed for c in m.checks)
        n_bad = len(m.checks) - n_ok
        rows.append([m.experiment, len(m.checks), n_ok, n_bad, "PASS" if n_bad == 0 else "FAIL"])
        for c in m.checks:
            details.append([m.experiment, c.name, c.passed, json.dumps(_jsonable(c.measured)), c.target])
    return Report(rows, details)


def write_table(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(header)
        for r in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


# --------------------------------------------------------------------------- field files


def write_field(path: str | Path, times, sites, values, meta: dict | None = None, fmt: str = "bin") -> list[Path]:
    """Write an NDJSON header ``<path>.ndjson`` and a payload ``<path>.bin`` or ``<path>.csv``."""
    path = Path(path)
    values = np.ascontiguousarray(values, dtype="<f8")
    times = np.asarray(times, dtype=float)
    sites = np.asarray(sites, dtype=float)
    if values.shape[:2] != (times.size, sites.size):
        raise ValueError("values must have shape (time, site, p)")
    if fmt not in ("bin", "csv"):
        raise ValueError("fmt must be 'bin' or 'csv'")
    payload = path.with_suffix(f".{fmt}")
    header = {
        "format": fmt,
        "payload": payload.name,
        "shape": list(values.shape),
        "dtype": "float64-le",
        "times": times.tolist(),
        "sites": sites.tolist() if sites.size <= 4096 else None,
        "n_sites": int(sites.size),
        "uniform_sites": bool(sites.size > 1 and np.allclose(sites, -1.0 + 2.0 * np.arange(sites.size) / sites.size)),
    }
    header.update(_jsonable(meta or {}))
    head = path.with_suffix(".ndjson")
    head.write_text(json.dumps(header, sort_keys=True) + "\n", encoding="utf-8")
    if fmt == "bin":
        payload.write_bytes(values.tobytes())
    else:
        p = values.shape[2]
        rows = (
            [repr(float(times[i])), repr(float(sites[j]))] + [repr(float(v)) for v in values[i, j]]
            for i in range(times.size)
            for j in range(sites.size)
        )
        write_table(payload, ["t", "x"] + [f"u{k + 1}" for k in range(p)], rows)
    return [head, payload]


def read_field(path: str | Path):
    """Inverse of :func:`write_field`; returns ``(header, times, sites, values)``."""
    head = Path(path).with_suffix(".ndjson")
    header = json.loads(head.read_text(encoding="utf-8").splitlines()[0])
    shape = tuple(header["shape"])
    payload = head.with_name(header["payload"])
    times = np.array(header["times"], dtype=float)
    if header.get("sites") is not None:
        sites = np.array(header["sites"], dtype=float)
    else:
        sites = -1.0 + 2.0 * np.arange(header["n_sites"]) / header["n_sites"]
    if header["format"] == "bin":
        values = np.frombuffer(payload.read_bytes(), dtype="<f8").reshape(shape)
    else:
        data = np.loadtxt(payload, delimiter=",", skiprows=1, ndmin=2)
        values = data[:, 2:].reshape(shape)
    return header, times, sites, values
