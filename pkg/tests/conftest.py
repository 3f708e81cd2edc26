"""Shared fixtures: desk-scale benchmark runs reused across acceptance tests.

The heavy runs are cached under /tmp keyed by the canonical config hash, so
iterating on the test suite does not re-integrate 200 trajectories every
time. Delete /tmp/chaosbench_test_cache for a cold run.
"""

from pathlib import Path

import pytest

from chaosbench.experiments import ExperimentConfig, run_benchmark, run_context_sweep, run_nonstationarity_experiment
from chaosbench.persist import canonical_config_hash, load_records, registry_checksum, write_records
from chaosbench.systems import registry

CACHE_DIR = Path("/tmp/chaosbench_test_cache")

#: bump to invalidate cached runs when record semantics change
CACHE_SALT = 2

#: the 10-system desk-scale suite (full built-in registry)
SUITE_SYSTEMS = sorted(registry())

MASTER_SEED = 2024


def cached_run(cfg: ExperimentConfig, runner=run_benchmark):
    CACHE_DIR.mkdir(parents=True, exist_ok=True)
    key = canonical_config_hash(
        {**cfg.to_dict(), "registry": registry_checksum(), "salt": CACHE_SALT}
    )
    path = CACHE_DIR / f"{key}.jsonl"
    if path.exists():
        records, corrupt = load_records(path)
        if corrupt == 0 and records:
            return records
    records = list(runner(cfg))
    write_records(records, path)
    return records


def desk_scale_config(**overrides) -> ExperimentConfig:
    base = dict(
        systems=SUITE_SYSTEMS,
        n_ics=20,
        context_len=512,
        horizon=300,
        models=["naive", "nvar", "parrot"],
        tune_models=["nvar"],
        seed=MASTER_SEED,
        kl_mc_samples=2000,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


@pytest.fixture(scope="session")
def desk_records():
    """10 systems x 20 ICs x {naive, nvar, parrot}, channel-independent."""
    return cached_run(desk_scale_config())


@pytest.fixture(scope="session")
def multivariate_records():
    """Same suite, NVAR only, multivariate channel policy."""
    return cached_run(desk_scale_config(models=["nvar"], mode="multivariate"))


@pytest.fixture(scope="session")
def sweep_records():
    cfg = desk_scale_config(
        models=["parrot"], tune_models=[],
        experiment_kind="context_sweep",
        kind_params={"context_lengths": [5, 16, 51, 160, 512]},
        attractor_metrics=False,
    )
    return cached_run(cfg, runner=run_context_sweep)


@pytest.fixture(scope="session")
def nonstat_records():
    cfg = desk_scale_config(
        models=["parrot"], tune_models=[],
        experiment_kind="nonstationary",
        kind_params={"f_min_grid": [1.0, 0.8, 0.6, 0.4, 0.2]},
        attractor_metrics=False,
    )
    return cached_run(cfg, runner=run_nonstationarity_experiment)
