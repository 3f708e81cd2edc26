"""Experiment runner, ablation primitive, and aggregation tests."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chaosbench.errors import InvalidArgumentError, ShuffleImpossibleError
from chaosbench.experiments import (
    ExperimentConfig,
    ResultRecord,
    SealedTestSegment,
    aggregate,
    apply_nonstationarity,
    derive_seed,
    kgram_shuffle,
    modulation_factors,
    nonstationarity_summary,
    paired_permutation_pvalue,
    run_benchmark,
    run_context_sweep,
    run_nonstationarity_experiment,
    run_shuffle_experiment,
)
from chaosbench.metrics import MetricReport
from chaosbench.systems import Trajectory


# ---------------------------------------------------------------------------
# k-gram shuffle
# ---------------------------------------------------------------------------

def _is_kblock_permutation(original, shuffled, k):
    """Check that `shuffled` is a permutation of `original`'s k-blocks.

    Blocks are counted from the end (ragged remainder first); matching is by
    exact value, greedy, which is unambiguous for distinct values.
    """
    from chaosbench.experiments import _partition_blocks

    blocks = [b.tolist() for b in _partition_blocks(np.asarray(original, dtype=float), k)]
    out = np.asarray(shuffled, dtype=float)
    pos = 0
    used = [False] * len(blocks)
    while pos < len(out):
        hit = False
        for i, block in enumerate(blocks):
            if used[i]:
                continue
            ln = len(block)
            if pos + ln <= len(out) and out[pos : pos + ln].tolist() == block:
                used[i] = True
                pos += ln
                hit = True
                break
        if not hit:
            return False
    return all(used)


def test_paper_one_gram_example():
    # worked 1-gram case: (x1,x2,x3,x4) -> (x1,x4,x2,x3) permutes 1-blocks
    original = np.array([1.0, 2.0, 3.0, 4.0])
    paper_output = np.array([1.0, 4.0, 2.0, 3.0])
    assert _is_kblock_permutation(original, paper_output, k=1)
    assert sorted(paper_output) == sorted(original)

    # our shuffle adds the end-anchoring constraints on top
    out = kgram_shuffle(original, k=1, seed=0)
    assert _is_kblock_permutation(original, out, k=1)
    assert out[-1] == 4.0  # final block fixed
    assert out[-2] != 3.0  # penultimate block changed


def test_paper_two_gram_example():
    # worked 2-gram case: (x1,x2,x3,x4) -> (x3,x4,x1,x2) swaps the 2-blocks
    original = np.array([1.0, 2.0, 3.0, 4.0])
    paper_output = np.array([3.0, 4.0, 1.0, 2.0])
    assert _is_kblock_permutation(original, paper_output, k=2)

    # with the final block held fixed there is only one movable block, so no
    # permutation can change the penultimate block
    with pytest.raises(ShuffleImpossibleError):
        kgram_shuffle(original, k=2, seed=0)


def test_shuffle_constraints_random_cases():
    rng = np.random.default_rng(0)
    for _ in range(200):
        c = int(rng.integers(8, 64))
        k = int(rng.integers(1, max(c // 4, 2)))
        context = rng.normal(size=c)
        out = kgram_shuffle(context, k, seed=int(rng.integers(1 << 30)))
        assert sorted(out.tolist()) == sorted(context.tolist())
        assert np.array_equal(out[-k:], context[-k:])
        assert not np.array_equal(out[-2 * k : -k], context[-2 * k : -k])
        assert _is_kblock_permutation(context, out, k)


def test_shuffle_multivariate_rows_move_together():
    rng = np.random.default_rng(1)
    context = rng.normal(size=(24, 3))
    out = kgram_shuffle(context, 4, seed=9)
    assert out.shape == context.shape
    # timepoints (rows) are preserved as units
    orig_rows = {tuple(r) for r in context}
    new_rows = {tuple(r) for r in out}
    assert orig_rows == new_rows


def test_shuffle_identical_blocks_impossible():
    with pytest.raises(ShuffleImpossibleError):
        kgram_shuffle(np.ones(16), k=2, seed=0)


def test_shuffle_k_bounds():
    with pytest.raises(InvalidArgumentError):
        kgram_shuffle(np.arange(10.0), k=6)
    with pytest.raises(InvalidArgumentError):
        kgram_shuffle(np.arange(10.0), k=0)


# ---------------------------------------------------------------------------
# nonstationarity
# ---------------------------------------------------------------------------

def test_modulation_identity():
    traj = Trajectory(np.random.default_rng(2).normal(size=(50, 2)), dt_lyap=1 / 30)
    out = apply_nonstationarity(traj, 1.0)
    assert np.array_equal(out.values, traj.values)


def test_modulation_endpoint_factors():
    assert np.array_equal(modulation_factors(2, 0.5), [1.0, 0.5])
    np.testing.assert_allclose(modulation_factors(3, 0.25), [1.0, 0.5, 0.25], rtol=1e-15)


def test_modulation_strictly_decreasing():
    f = modulation_factors(100, 0.37)
    assert np.all(np.diff(f) < 0)
    assert f[0] == 1.0 and f[-1] == 0.37


def test_modulation_invalid_fmin():
    traj = Trajectory(np.ones((10, 1)), dt_lyap=1 / 30)
    with pytest.raises(InvalidArgumentError):
        apply_nonstationarity(traj, 0.0)
    with pytest.raises(InvalidArgumentError):
        apply_nonstationarity(traj, -0.2)


@given(st.integers(2, 200), st.floats(0.01, 1.0))
@settings(max_examples=50, deadline=None)
def test_modulation_factor_properties(n, f_min):
    f = modulation_factors(n, f_min)
    assert f[0] == 1.0
    assert f[-1] == pytest.approx(f_min, rel=1e-12)
    assert np.all(f > 0)
    assert np.all(np.diff(f) <= 0)


# ---------------------------------------------------------------------------
# sealed test segment
# ---------------------------------------------------------------------------

def test_sealed_segment_cannot_be_read_as_array():
    sealed = SealedTestSegment(np.arange(12.0).reshape(4, 3))
    with pytest.raises(TypeError):
        np.asarray(sealed)
    with pytest.raises(TypeError):
        np.mean(sealed)
    assert len(sealed) == 4
    assert sealed.reveal_for_scoring().shape == (4, 3)


def test_runner_never_passes_test_points_to_forecasters(monkeypatch):
    # spy on every forecaster entry point: contexts must never exceed C rows
    import chaosbench.forecasters as fmod

    seen = []
    original = fmod.forecast_multichannel

    def spy(forecaster, values, horizon, mode="channel_independent", dt_lyap=1 / 30.0):
        seen.append(np.asarray(values).shape[0])
        return original(forecaster, values, horizon, mode=mode, dt_lyap=dt_lyap)

    import chaosbench.experiments as emod

    monkeypatch.setattr(emod, "forecast_multichannel", spy)
    cfg = ExperimentConfig(
        systems=["lorenz"], n_ics=1, context_len=128, horizon=32,
        models=["naive"], tune_models=[], attractor_metrics=False,
    )
    records = list(run_benchmark(cfg))
    assert records and all(n <= 128 for n in seen)


# ---------------------------------------------------------------------------
# runner contracts (small configs; trajectory cache keeps this fast)
# ---------------------------------------------------------------------------

SMALL = dict(
    systems=["lorenz"], n_ics=2, context_len=128, horizon=32,
    models=["naive", "parrot"], tune_models=[], kl_mc_samples=500,
)


def test_benchmark_record_counting_contract():
    cfg = ExperimentConfig(**SMALL)
    records = list(run_benchmark(cfg))
    # systems x ics x models x channels
    assert len(records) == 1 * 2 * 2 * 3
    keys = {(r.system, r.ic_index, r.model_id, r.channel) for r in records}
    assert len(keys) == len(records)


def test_benchmark_deterministic_given_seed():
    cfg_a = ExperimentConfig(**SMALL, seed=7)
    cfg_b = ExperimentConfig(**SMALL, seed=7)
    rec_a = list(run_benchmark(cfg_a))
    rec_b = list(run_benchmark(cfg_b))
    for a, b in zip(rec_a, rec_b):
        assert a.metrics.smape_curve == b.metrics.smape_curve
        assert a.metrics.vpt_lyap == b.metrics.vpt_lyap
        assert a.metrics.d_stsp == b.metrics.d_stsp


def test_shuffle_experiment_pairing_contract():
    cfg = ExperimentConfig(**{**SMALL, "models": ["naive"]},
                           experiment_kind="kgram_shuffle",
                           kind_params={"k_values": [4, 16]})
    records = list(run_shuffle_experiment(cfg))
    # per (ic, k): shuffled + truncated arms, 3 channels each, 1 model
    assert len(records) == 2 * 2 * 2 * 3
    by_cond = {}
    for r in records:
        by_cond.setdefault((r.kind_params["k"], r.kind_params["condition"]), []).append(r)
    for k in (4, 16):
        assert len(by_cond[(k, "shuffled")]) == len(by_cond[(k, "truncated")])


def test_context_sweep_shares_test_segment():
    cfg = ExperimentConfig(**{**SMALL, "models": ["naive"]},
                           experiment_kind="context_sweep",
                           kind_params={"context_lengths": [16, 128]})
    records = list(run_context_sweep(cfg))
    assert len(records) == 2 * 2 * 3
    # naive carries the last context value forward; the last context point is
    # the same for every sweep length, so forecasts and VPTs must agree
    by_len = {}
    for r in records:
        by_len.setdefault(r.kind_params["context_len"], []).append(r.metrics.vpt_lyap)
    assert sorted(by_len) == [16, 128]
    assert by_len[16] == by_len[128]


def test_nonstationarity_identity_arm_matches_baseline():
    base_cfg = ExperimentConfig(**{**SMALL, "models": ["naive"]})
    base = list(run_benchmark(base_cfg))
    ns_cfg = ExperimentConfig(**{**SMALL, "models": ["naive"]},
                              experiment_kind="nonstationary",
                              kind_params={"f_min_grid": [1.0, 0.5]})
    ns = list(run_nonstationarity_experiment(ns_cfg))
    identity = [r for r in ns if r.kind_params["f_min"] == 1.0]
    assert len(identity) == len(base)
    for a, b in zip(base, identity):
        assert a.metrics.smape_curve == b.metrics.smape_curve
    # record count = |grid| x |tasks|
    assert len(ns) == 2 * len(base)


def test_nonstationarity_summary_shape():
    ns_cfg = ExperimentConfig(**{**SMALL, "models": ["naive", "parrot"]},
                              experiment_kind="nonstationary",
                              kind_params={"f_min_grid": [1.0, 0.4]})
    records = list(run_nonstationarity_experiment(ns_cfg))
    summary = nonstationarity_summary(records)
    assert set(summary) == {"naive", "parrot"}
    assert summary["parrot"]["f_min_grid"] == [0.4, 1.0]


# ---------------------------------------------------------------------------
# aggregation and stats
# ---------------------------------------------------------------------------

def _mk_record(system="lorenz", ic=0, channel=0, model="naive", vpt=1.0, status="ok"):
    return ResultRecord(
        system=system, ic_index=ic, channel=channel, model_id=model,
        experiment_kind="baseline", kind_params={},
        metrics=MetricReport(smape_curve=[10.0, 20.0], vpt_lyap=vpt),
        status=status, error="" if status == "ok" else "boom",
    )


def test_aggregate_single_record_group():
    rows = aggregate([_mk_record(vpt=0.8)], ["model_id"])
    assert rows[0]["vpt_lyap_median"] == 0.8
    assert rows[0]["vpt_lyap_se"] == 0.0
    assert rows[0]["count"] == 1


def test_aggregate_matches_bruteforce_median():
    rng = np.random.default_rng(3)
    records = [
        _mk_record(ic=i, model=m, vpt=float(v))
        for m in ("a", "b")
        for i, v in enumerate(rng.uniform(0, 3, size=17))
    ]
    rows = aggregate(records, ["model_id"])
    vals = [r.metrics.vpt_lyap for r in records if r.model_id == "a"]
    assert rows[0]["model_id"] == "a"
    assert rows[0]["vpt_lyap_median"] == pytest.approx(np.median(vals))


def test_aggregate_group_count_and_failures():
    records = [_mk_record(model=m, ic=i) for m in ("x", "y", "z") for i in range(3)]
    records.append(_mk_record(model="x", ic=9, status="failed"))
    rows = aggregate(records, ["model_id"])
    assert len(rows) == 3
    x_row = next(r for r in rows if r["model_id"] == "x")
    assert x_row["count"] == 3 and x_row["failed"] == 1


def test_aggregate_empty_raises():
    with pytest.raises(InvalidArgumentError):
        aggregate([], ["model_id"])


def test_paired_permutation_detects_shift():
    rng = np.random.default_rng(4)
    base = rng.normal(size=60)
    better = base + 0.5
    assert paired_permutation_pvalue(better, base, seed=1) < 0.01
    assert paired_permutation_pvalue(base, better, seed=1) > 0.95


def test_derive_seed_stability():
    assert derive_seed(1, "lorenz", 3) == derive_seed(1, "lorenz", 3)
    assert derive_seed(1, "lorenz", 3) != derive_seed(2, "lorenz", 3)
    assert derive_seed(1, "lorenz", 3) != derive_seed(1, "rossler", 3)
