"""Persistence: result-record streams, manifests, trajectory CSV, configs.

Records are newline-delimited JSON (one object per line, schema_version
field, append-only) so long runs survive interruption: a truncated final
line costs exactly one record. Floats are serialized with Python's shortest
round-trip repr, so write -> read is bit-exact. Unknown fields found when
loading are preserved and written back on the next save.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable

import numpy as np
import yaml

from . import __version__
from .errors import ConfigError, InvalidArgumentError, SchemaVersionError
from .experiments import ExperimentConfig, ResultRecord
from .metrics import MetricReport
from .systems import Trajectory

__all__ = [
    "RECORD_SCHEMA_VERSION",
    "record_to_dict",
    "record_from_dict",
    "RecordWriter",
    "write_records",
    "load_records",
    "canonical_config_hash",
    "RunManifest",
    "write_manifest",
    "load_manifest",
    "save_trajectory_csv",
    "load_trajectory_csv",
    "load_experiment_config",
]

RECORD_SCHEMA_VERSION = 1

_RECORD_FIELDS = {
    "schema_version", "system", "ic_index", "channel", "model_id",
    "experiment_kind", "kind_params", "metrics", "fit_walltime",
    "inference_walltime", "seed", "timestamp", "harness_version",
    "status", "error", "extra",
}


def record_to_dict(record: ResultRecord) -> dict:
    doc = {
        "schema_version": RECORD_SCHEMA_VERSION,
        "system": record.system,
        "ic_index": record.ic_index,
        "channel": record.channel,
        "model_id": record.model_id,
        "experiment_kind": record.experiment_kind,
        "kind_params": record.kind_params,
        "metrics": asdict(record.metrics),
        "fit_walltime": record.fit_walltime,
        "inference_walltime": record.inference_walltime,
        "seed": record.seed,
        "timestamp": record.timestamp,
        "harness_version": record.harness_version,
        "status": record.status,
        "error": record.error,
        "extra": {k: v for k, v in record.extra.items() if k != "_unknown"},
    }
    doc.update(record.extra.get("_unknown", {}))
    return doc


def record_from_dict(doc: dict) -> ResultRecord:
    version = doc.get("schema_version")
    if version != RECORD_SCHEMA_VERSION:
        raise SchemaVersionError(
            f"record schema {version!r} needs migration; this build reads "
            f"version {RECORD_SCHEMA_VERSION}"
        )
    unknown = {k: v for k, v in doc.items() if k not in _RECORD_FIELDS}
    extra = dict(doc.get("extra", {}))
    if unknown:
        extra["_unknown"] = unknown
    return ResultRecord(
        system=doc["system"],
        ic_index=doc["ic_index"],
        channel=doc["channel"],
        model_id=doc["model_id"],
        experiment_kind=doc["experiment_kind"],
        kind_params=doc.get("kind_params", {}),
        metrics=MetricReport(**doc.get("metrics", {})),
        fit_walltime=doc.get("fit_walltime", 0.0),
        inference_walltime=doc.get("inference_walltime", 0.0),
        seed=doc.get("seed", 0),
        timestamp=doc.get("timestamp", ""),
        harness_version=doc.get("harness_version", ""),
        status=doc.get("status", "ok"),
        error=doc.get("error", ""),
        extra=extra,
    )


class RecordWriter:
    """Append-only record stream writer; the single serialization point.

    Each record is flushed as one line, so a crash loses at most the line
    being written.
    """

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "a", encoding="utf-8")
        self.n_written = 0

    def append(self, record: ResultRecord):
        line = json.dumps(record_to_dict(record), ensure_ascii=False)
        self._fh.write(line + "\n")
        self._fh.flush()
        self.n_written += 1

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_records(records: Iterable[ResultRecord], path) -> int:
    with RecordWriter(path) as writer:
        for record in records:
            writer.append(record)
        return writer.n_written


def load_records(path, strict: bool = False) -> tuple[list[ResultRecord], int]:
    """Load a record stream, recovering complete records from truncated files.

    Returns (records, n_corrupt). With ``strict`` a corrupt line raises
    instead of being counted.
    """
    records: list[ResultRecord] = []
    n_corrupt = 0
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            stripped = line.strip()
            if not stripped:
                continue
            try:
                doc = json.loads(stripped)
            except json.JSONDecodeError:
                if strict:
                    raise
                n_corrupt += 1
                continue
            records.append(record_from_dict(doc))
    return records, n_corrupt


# ---------------------------------------------------------------------------
# config hashing and run manifests
# ---------------------------------------------------------------------------

def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def canonical_config_hash(config: dict | ExperimentConfig) -> str:
    """SHA-256 of the canonical JSON form; stable under key reordering."""
    if isinstance(config, ExperimentConfig):
        config = config.to_dict()
    return hashlib.sha256(_canonical_json(config).encode()).hexdigest()


class RunManifest:
    def __init__(
        self,
        config_hash: str,
        master_seed: int,
        registry_checksum: str = "",
        harness_version: str = __version__,
        started: str = "",
        finished: str = "",
        n_success: int = 0,
        n_failed: int = 0,
    ):
        self.config_hash = config_hash
        self.master_seed = master_seed
        self.registry_checksum = registry_checksum
        self.harness_version = harness_version
        self.started = started or datetime.now(timezone.utc).isoformat()
        self.finished = finished
        self.n_success = n_success
        self.n_failed = n_failed

    @property
    def record_count(self) -> int:
        return self.n_success + self.n_failed

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "master_seed": self.master_seed,
            "registry_checksum": self.registry_checksum,
            "harness_version": self.harness_version,
            "started": self.started,
            "finished": self.finished,
            "n_success": self.n_success,
            "n_failed": self.n_failed,
            "record_count": self.record_count,
        }


def registry_checksum() -> str:
    from importlib import resources

    ref = resources.files("chaosbench").joinpath("data/registry.yaml")
    return hashlib.sha256(ref.read_bytes()).hexdigest()


def write_manifest(manifest: RunManifest, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest.to_dict(), fh, indent=2)
        fh.write("\n")


def load_manifest(path) -> RunManifest:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    doc.pop("record_count", None)
    return RunManifest(**doc)


# ---------------------------------------------------------------------------
# trajectory CSV with sidecar metadata
# ---------------------------------------------------------------------------

def save_trajectory_csv(traj: Trajectory, path, seed: int | None = None, meta: dict | None = None):
    """Write `t_lyap,x0,x1,...` rows plus a sidecar YAML metadata document."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dim = traj.dim
    header = "t_lyap," + ",".join(f"x{d}" for d in range(dim))
    times = traj.times
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for t, row in zip(times, traj.values):
            fh.write(repr(float(t)) + "," + ",".join(repr(float(v)) for v in row) + "\n")

    sidecar = {
        "system": traj.system.name if traj.system else None,
        "params": dict(traj.system.params) if traj.system else None,
        "dt_lyap": float(traj.dt_lyap),
        "points_per_lyapunov": round(1.0 / traj.dt_lyap, 9),
        "t0": float(traj.t0),
        "n_points": len(traj),
        "dim": dim,
        "seed": seed,
        "harness_version": __version__,
        "created": datetime.now(timezone.utc).isoformat(),
    }
    if meta:
        sidecar.update(meta)
    with open(path.with_suffix(path.suffix + ".meta.yaml"), "w", encoding="utf-8") as fh:
        yaml.safe_dump(sidecar, fh, sort_keys=False)


def load_trajectory_csv(path) -> tuple[Trajectory, dict]:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if not header or header[0] != "t_lyap":
            raise InvalidArgumentError(f"{path} is not a trajectory CSV (missing t_lyap header)")
        rows = [list(map(float, line.strip().split(","))) for line in fh if line.strip()]
    data = np.asarray(rows)
    if len(data) < 1:
        raise InvalidArgumentError(f"{path} contains no samples")
    times, values = data[:, 0], data[:, 1:]
    dt = float(times[1] - times[0]) if len(times) > 1 else 1.0 / 30.0

    meta_path = path.with_suffix(path.suffix + ".meta.yaml")
    meta = {}
    if meta_path.exists():
        with open(meta_path, "r", encoding="utf-8") as fh:
            meta = yaml.safe_load(fh) or {}
    traj = Trajectory(values, dt_lyap=dt, t0=float(times[0]))
    return traj, meta


# ---------------------------------------------------------------------------
# experiment config documents
# ---------------------------------------------------------------------------

def load_experiment_config(path) -> ExperimentConfig:
    """Parse a YAML experiment config, with field-level diagnostics."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}" if mark else "document"
        raise ConfigError(f"invalid YAML in {path}: {exc}", where=where) from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path} must contain a mapping of config fields", where="document")

    known = set(ExperimentConfig.__dataclass_fields__)
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(
            f"unknown config field(s): {', '.join(sorted(unknown))}",
            where=", ".join(sorted(unknown)),
        )
    if "train_val_split" in doc:
        doc["train_val_split"] = tuple(doc["train_val_split"])
    try:
        return ExperimentConfig(**doc)
    except (TypeError, InvalidArgumentError) as exc:
        raise ConfigError(f"invalid config in {path}: {exc}", where="document") from exc
