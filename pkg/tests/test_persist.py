"""Persistence: record streams, manifests, trajectory CSV, config loading."""

import json
import numpy as np
import pytest

from chaosbench.errors import ConfigError, SchemaVersionError
from chaosbench.experiments import ResultRecord
from chaosbench.metrics import MetricReport
from chaosbench.persist import (
    RunManifest,
    canonical_config_hash,
    load_experiment_config,
    load_manifest,
    load_records,
    load_trajectory_csv,
    record_from_dict,
    record_to_dict,
    registry_checksum,
    save_trajectory_csv,
    write_manifest,
    write_records,
)
from chaosbench.systems import Trajectory, get_system


def _records(n=5, seed=0):
    rng = np.random.default_rng(seed)
    return [
        ResultRecord(
            system="lorenz",
            ic_index=i,
            channel=int(rng.integers(0, 3)),
            model_id="parrot",
            experiment_kind="baseline",
            kind_params={"note": "x"},
            metrics=MetricReport(
                smape_curve=[float(v) for v in rng.uniform(0, 200, size=4)],
                vpt_lyap=float(rng.uniform(0, 3)),
                d_frac_pred=float(rng.uniform(1, 3)),
                d_frac_error=float(rng.uniform(0, 1)),
                d_stsp=float(rng.uniform(0, 10)),
                d_stsp_se=0.01,
                context_overlap=float(rng.uniform(-1, 1)),
            ),
            fit_walltime=float(rng.uniform(0, 1)),
            inference_walltime=float(rng.uniform(0, 1)),
            seed=42,
        )
        for i in range(n)
    ]


def test_record_roundtrip_bit_exact(tmp_path):
    path = tmp_path / "records.jsonl"
    records = _records(10)
    write_records(records, path)
    loaded, corrupt = load_records(path)
    assert corrupt == 0
    assert len(loaded) == len(records)
    for a, b in zip(records, loaded):
        assert record_to_dict(a) == record_to_dict(b)
        assert a.metrics.smape_curve == b.metrics.smape_curve  # float exactness
        assert a.metrics.vpt_lyap == b.metrics.vpt_lyap


def test_record_stream_appends(tmp_path):
    path = tmp_path / "records.jsonl"
    write_records(_records(3, seed=1), path)
    write_records(_records(2, seed=2), path)
    loaded, _ = load_records(path)
    assert len(loaded) == 5


def test_truncated_final_line_recovery(tmp_path):
    path = tmp_path / "records.jsonl"
    write_records(_records(4), path)
    blob = path.read_text()
    path.write_text(blob[: len(blob) - 25])  # cut into the last record
    loaded, corrupt = load_records(path)
    assert len(loaded) == 3
    assert corrupt == 1


def test_unknown_fields_preserved(tmp_path):
    doc = record_to_dict(_records(1)[0])
    doc["future_field"] = {"nested": [1, 2.5]}
    record = record_from_dict(doc)
    assert record_to_dict(record)["future_field"] == {"nested": [1, 2.5]}


def test_schema_version_mismatch(tmp_path):
    doc = record_to_dict(_records(1)[0])
    doc["schema_version"] = 99
    with pytest.raises(SchemaVersionError):
        record_from_dict(doc)


def test_large_stream_load_performance(tmp_path):
    import time

    path = tmp_path / "big.jsonl"
    base = record_to_dict(_records(1)[0])
    with open(path, "w") as fh:
        for i in range(100_000):
            base["ic_index"] = i
            fh.write(json.dumps(base) + "\n")
    t0 = time.time()
    loaded, corrupt = load_records(path)
    elapsed = time.time() - t0
    assert len(loaded) == 100_000 and corrupt == 0
    assert elapsed < 10.0


# ---------------------------------------------------------------------------
# config hash and manifest
# ---------------------------------------------------------------------------

def test_config_hash_order_independent():
    a = {"systems": ["lorenz"], "seed": 1, "horizon": 300}
    b = {"horizon": 300, "seed": 1, "systems": ["lorenz"]}
    assert canonical_config_hash(a) == canonical_config_hash(b)
    assert canonical_config_hash({**a, "seed": 2}) != canonical_config_hash(a)


def test_manifest_roundtrip_and_counts(tmp_path):
    manifest = RunManifest(config_hash="abc", master_seed=7,
                           registry_checksum=registry_checksum())
    manifest.n_success, manifest.n_failed = 10, 2
    path = tmp_path / "manifest.json"
    write_manifest(manifest, path)
    loaded = load_manifest(path)
    assert loaded.record_count == 12
    assert loaded.config_hash == "abc"
    assert loaded.master_seed == 7
    assert loaded.harness_version


# ---------------------------------------------------------------------------
# trajectory CSV
# ---------------------------------------------------------------------------

def test_trajectory_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    spec = get_system("lorenz")
    traj = Trajectory(rng.normal(size=(50, 3)), dt_lyap=1 / 30, system=spec)
    path = tmp_path / "traj.csv"
    save_trajectory_csv(traj, path, seed=123)
    loaded, meta = load_trajectory_csv(path)
    assert np.array_equal(loaded.values, traj.values)
    assert meta["system"] == "lorenz"
    assert meta["seed"] == 123
    assert meta["harness_version"]
    header = path.read_text().splitlines()[0]
    assert header == "t_lyap,x0,x1,x2"


# ---------------------------------------------------------------------------
# experiment config documents
# ---------------------------------------------------------------------------

def test_load_experiment_config(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text(
        "systems: [lorenz]\nn_ics: 2\ncontext_len: 128\nhorizon: 32\n"
        "models: [naive]\ntune_models: []\n"
    )
    cfg = load_experiment_config(path)
    assert cfg.systems == ["lorenz"] and cfg.n_ics == 2


def test_config_unknown_field_diagnostic(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text("systems: [lorenz]\nnot_a_field: 3\n")
    with pytest.raises(ConfigError) as err:
        load_experiment_config(path)
    assert "not_a_field" in str(err.value)


def test_config_invalid_yaml_diagnostic(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text("systems: [lorenz\n  bad")
    with pytest.raises(ConfigError) as err:
        load_experiment_config(path)
    assert err.value.where


def test_config_semantic_error(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text("systems: [lorenz]\nn_ics: 0\n")
    with pytest.raises(ConfigError):
        load_experiment_config(path)
