"""Experiment configuration, tabular output and the run manifest.

A configuration is a single JSON object::

    {"kind": "sweep", "params": {...}, "protocol": {...}, "settings": {...},
     "out_dir": "results", "format": "csv", "seed": 0, "workers": 1}

``params`` and ``protocol`` hold the fields of :class:`ChainParams` and
:class:`PulseProtocol`; ``settings`` holds the kind-specific options listed
in :data:`KIND_SETTINGS`.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import ValidationError
from .model import ChainParams, PulseProtocol, validate

KINDS = ("sweep", "branch", "lyapunov", "window", "ensemble", "scan", "quantum", "bound-check")
FORMATS = ("csv", "json")

# settings each kind needs before it can run
KIND_SETTINGS = {
    "sweep": ("rates",),
    "branch": (),
    "lyapunov": ("ttilde",),
    "window": ("g_values",),
    "ensemble": ("ttilde",),
    "scan": ("g_values",),
    "quantum": ("rates",),
    "bound-check": ("g_values",),
}

MANIFEST_NAME = "manifest.json"
SUMMARY_NAME = "summary.json"


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if np.isfinite(v) else str(v)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, complex):
        return [value.real, value.imag]
    return value


@dataclass
class ExperimentConfig:
    """Fully resolved description of one run."""

    kind: str
    params: ChainParams
    protocol: PulseProtocol
    settings: dict = field(default_factory=dict)
    out_dir: str = "results"
    format: str = "csv"
    seed: int = 0
    workers: int = 1
    name: Optional[str] = None

    def problems(self) -> list:
        """Every reason this config cannot run (empty when valid)."""
        diag = []
        if self.kind not in KINDS:
            diag.append(f"kind must be one of {KINDS}, got {self.kind!r}")
        else:
            missing = [k for k in KIND_SETTINGS[self.kind] if k not in self.settings]
            if missing:
                diag.append(f"settings for kind {self.kind!r} missing {missing}")
        if self.format not in FORMATS:
            diag.append(f"format must be one of {FORMATS}, got {self.format!r}")
        if not (isinstance(self.seed, (int, np.integer)) and 0 <= self.seed < 2**64):
            diag.append("seed must be an unsigned 64-bit integer")
        if not (isinstance(self.workers, (int, np.integer)) and self.workers >= 1):
            diag.append("workers must be a positive integer")
        diag.extend(validate(self.params, self.protocol))
        return diag

    def check(self):
        diag = self.problems()
        if diag:
            raise ValidationError(diag)

    def to_dict(self):
        return _jsonable({
            "kind": self.kind,
            "name": self.name,
            "params": self.params.to_dict(),
            "protocol": self.protocol.to_dict(),
            "settings": self.settings,
            "out_dir": self.out_dir,
            "format": self.format,
            "seed": self.seed,
            "workers": self.workers,
        })

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        unknown = set(data) - {"kind", "name", "params", "protocol", "settings", "out_dir", "format",
                               "seed", "workers"}
        if unknown:
            raise ValidationError(f"unknown config keys {sorted(unknown)}")
        if "kind" not in data:
            raise ValidationError("config needs a 'kind'")
        try:
            params = ChainParams(**data.get("params", {}))
            protocol = PulseProtocol(**data.get("protocol", {}))
        except TypeError as exc:
            raise ValidationError(f"bad params or protocol: {exc}") from exc
        return cls(kind=data["kind"], params=params, protocol=protocol,
                   settings=dict(data.get("settings", {})), out_dir=data.get("out_dir", "results"),
                   format=data.get("format", "csv"), seed=int(data.get("seed", 0)),
                   workers=int(data.get("workers", 1)), name=data.get("name"))


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc
    return ExperimentConfig.from_dict(data)


def save_config(config: ExperimentConfig, path):
    with open(path, "w") as fh:
        json.dump(config.to_dict(), fh, indent=2)


@dataclass
class Table:
    """Named numeric table; one column per header entry."""

    name: str
    header: list
    data: np.ndarray

    def __post_init__(self):
        self.data = np.atleast_2d(np.asarray(self.data, dtype=float))
        if self.data.size and self.data.shape[1] != len(self.header):
            raise ValidationError(f"table {self.name}: {self.data.shape[1]} columns, {len(self.header)} names")


def _fmt(v):
    v = float(v)
    return repr(v) if np.isfinite(v) else str(v)


def write_table(table: Table, out_dir, fmt="csv") -> str:
    """Write ``table`` as ``<name>.csv`` or ``<name>.json`` and return the path."""
    path = os.path.join(out_dir, f"{table.name}.{fmt}")
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(table.header)
            for row in table.data:
                writer.writerow([_fmt(v) for v in row])
    elif fmt == "json":
        with open(path, "w") as fh:
            json.dump({"columns": list(table.header), "data": _jsonable(table.data)}, fh)
    else:
        raise ValidationError(f"unknown format {fmt!r}")
    return path


def read_table(path) -> Table:
    """Read a table written by :func:`write_table` (either format)."""
    name = os.path.splitext(os.path.basename(path))[0]
    if path.endswith(".json"):
        with open(path) as fh:
            obj = json.load(fh)
        return Table(name, obj["columns"], np.array(obj["data"], dtype=float))
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return Table(name, rows[0], np.array(rows[1:], dtype=float))


def write_json(obj, path) -> str:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2)
    return path


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    """Completion record of a run: config snapshot, version, wall time and output checksums."""

    config: dict
    version: str
    wall_time: float
    outputs: dict
    status: str = "ok"

    def to_dict(self):
        return {"config": self.config, "version": self.version, "wall_time": self.wall_time,
                "outputs": self.outputs, "status": self.status}

    def write(self, out_dir) -> str:
        """Write atomically: the manifest appears only once complete."""
        path = os.path.join(out_dir, MANIFEST_NAME)
        tmp = path + ".tmp"
        write_json(self.to_dict(), tmp)
        os.replace(tmp, path)
        return path

    @classmethod
    def read(cls, path) -> "RunManifest":
        with open(path) as fh:
            d = json.load(fh)
        return cls(d["config"], d["version"], d["wall_time"], d["outputs"], d.get("status", "ok"))
