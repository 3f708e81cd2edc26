"""Experiment orchestration: the core benchmark and its ablation batteries.

The runner walks (system, initial condition, model, channel) tasks, keeps the
test segment sealed away from anything that fits or tunes, and emits one
ResultRecord per channel. Ablations reuse the same loop through a variant
hook: k-gram context shuffles, exponential nonstationarity modulation,
context-length sweeps, and initial-condition dependence analysis.

Determinism: every stochastic choice derives its seed from (master seed, task
identity) via a stable hash, never from scheduling order, so records are
bit-identical across re-runs regardless of execution order.
"""

from __future__ import annotations

import hashlib
import math
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable, Iterator, Sequence

import numpy as np

from . import __version__
from .errors import (
    ChaosBenchError,
    DegenerateGeometryError,
    InvalidArgumentError,
    ShuffleImpossibleError,
    UndefinedCorrelationError,
    UndefinedSimilarityError,
)
from .forecasters import (
    Forecast,
    LOOKBACK_GRID,
    NvarConfig,
    ParrotConfig,
    forecast_multichannel,
    make_forecaster,
    tune_lookback,
)
from .metrics import (
    MetricConfig,
    MetricReport,
    build_mixture,
    context_overlap,
    correlation_dimension,
    kl_attractor,
    smape_curve,
    spearman,
    spearman_permutation_pvalue,
    vpt,
    vpt_sustained,
)
from .systems import (
    IntegratorConfig,
    SystemSpec,
    Trajectory,
    get_system,
    integrate,
    resample,
    sample_initial_conditions,
)

__all__ = [
    "ExperimentConfig",
    "ResultRecord",
    "SealedTestSegment",
    "run_benchmark",
    "run_experiment",
    "kgram_shuffle",
    "apply_nonstationarity",
    "modulation_factors",
    "run_shuffle_experiment",
    "run_nonstationarity_experiment",
    "run_context_sweep",
    "run_ic_dependence",
    "ic_dependence_summary",
    "nonstationarity_summary",
    "aggregate",
    "task_vpt_means",
    "derive_seed",
    "paired_permutation_pvalue",
    "generate_trajectories",
]

EXPERIMENT_KINDS = (
    "baseline",
    "context_sweep",
    "kgram_shuffle",
    "nonstationary",
    "ic_dependence",
)


@dataclass
class ExperimentConfig:
    systems: list[str] = field(default_factory=list)
    n_ics: int = 20
    context_len: int = 512
    horizon: int = 300
    granularity: int = 30  # points per Lyapunov time
    train_val_split: tuple[int, int] = (435, 77)
    models: list[str] = field(default_factory=lambda: ["naive", "nvar", "parrot"])
    tune_models: list[str] = field(default_factory=lambda: ["nvar"])
    lookback_grid: list[float] = field(default_factory=lambda: list(LOOKBACK_GRID))
    mode: str = "channel_independent"
    seed: int = 0
    experiment_kind: str = "baseline"
    kind_params: dict = field(default_factory=dict)
    kl_mc_samples: int = 10_000
    attractor_metrics: bool = True
    adapters: dict = field(default_factory=dict)  # model_id -> adapter command
    adapter_timeout: float = 300.0

    def __post_init__(self):
        if self.n_ics < 1:
            raise InvalidArgumentError("n_ics must be >= 1")
        if self.horizon < 1:
            raise InvalidArgumentError("horizon must be >= 1")
        if self.context_len < 2:
            raise InvalidArgumentError("context_len must be >= 2")
        if self.granularity < 1:
            raise InvalidArgumentError("granularity must be >= 1")
        if self.experiment_kind not in EXPERIMENT_KINDS:
            raise InvalidArgumentError(f"unknown experiment_kind {self.experiment_kind!r}")
        if self.mode not in ("channel_independent", "multivariate"):
            raise InvalidArgumentError(f"unknown mode {self.mode!r}")
        split = tuple(self.train_val_split)
        if self.tune_models and split[0] + split[1] != self.context_len:
            raise InvalidArgumentError(
                "train_val_split must sum to context_len when tuning is enabled"
            )
        self.train_val_split = split

    @property
    def dt_lyap(self) -> float:
        return 1.0 / self.granularity

    def to_dict(self) -> dict:
        return {
            "systems": list(self.systems),
            "n_ics": self.n_ics,
            "context_len": self.context_len,
            "horizon": self.horizon,
            "granularity": self.granularity,
            "train_val_split": list(self.train_val_split),
            "models": list(self.models),
            "tune_models": list(self.tune_models),
            "lookback_grid": list(self.lookback_grid),
            "mode": self.mode,
            "seed": self.seed,
            "experiment_kind": self.experiment_kind,
            "kind_params": dict(self.kind_params),
            "kl_mc_samples": self.kl_mc_samples,
            "attractor_metrics": self.attractor_metrics,
            "adapters": dict(self.adapters),
            "adapter_timeout": self.adapter_timeout,
        }


@dataclass
class ResultRecord:
    """One benchmark row; persisted append-only by chaosbench.persist."""

    system: str
    ic_index: int
    channel: int
    model_id: str
    experiment_kind: str
    kind_params: dict
    metrics: MetricReport
    fit_walltime: float = 0.0
    inference_walltime: float = 0.0
    seed: int = 0
    timestamp: str = ""
    harness_version: str = __version__
    status: str = "ok"
    error: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.timestamp:
            self.timestamp = datetime.now(timezone.utc).isoformat()
        for name in ("system", "model_id", "experiment_kind"):
            if not getattr(self, name):
                raise InvalidArgumentError(f"record field {name} must be non-empty")

    @property
    def failed(self) -> bool:
        return self.status != "ok"

    @property
    def smape_cum(self) -> float | None:
        if not self.metrics.smape_curve:
            return None
        return float(np.mean(self.metrics.smape_curve))


class SealedTestSegment:
    """Holds the test points so forecasters cannot read them.

    The runner only unseals inside the scoring step; any attempt to coerce
    the sealed object into an array raises. This makes causality violations
    loud instead of silent.
    """

    def __init__(self, values: np.ndarray):
        values = np.asarray(values, dtype=float)
        values.setflags(write=False)
        self.__values = values

    def __array__(self, *args, **kwargs):
        raise TypeError("test segment is sealed; forecasters may not read it")

    def __len__(self) -> int:
        return len(self.__values)

    def reveal_for_scoring(self) -> np.ndarray:
        return self.__values


def derive_seed(master_seed: int, *identity) -> int:
    """Stable 63-bit seed from the master seed and a task identity tuple."""
    text = "|".join([str(master_seed), *map(str, identity)])
    digest = hashlib.sha256(text.encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


# ---------------------------------------------------------------------------
# trajectory generation
# ---------------------------------------------------------------------------

_TRAJ_CACHE: dict[tuple, list[np.ndarray]] = {}


def generate_trajectories(
    spec: SystemSpec,
    n_ics: int,
    n_points: int,
    granularity: int,
    seed: int,
    integrator: IntegratorConfig = IntegratorConfig(),
) -> list[np.ndarray]:
    """n_ics resampled trajectories of exactly n_points rows (process-cached).

    Each trajectory starts from an independent on-attractor state and is
    integrated for just over n_points/granularity Lyapunov times, then
    resampled onto the uniform benchmark grid and trimmed.
    """
    key = (
        spec.name, repr(sorted(spec.params.items())), spec.lyapunov_exponent,
        spec.seed_point, spec.integration_dt, spec.burn_in_time,
        n_ics, n_points, granularity,
        seed, integrator.rel_tol, integrator.abs_tol, integrator.scheme,
    )
    if key in _TRAJ_CACHE:
        return _TRAJ_CACHE[key]
    ics = sample_initial_conditions(spec, n_ics, integrator, rng_seed=seed)
    lam = spec.lyapunov_exponent
    duration = (n_points + 2) / (granularity * lam)
    out = []
    for ic in ics:
        raw = integrate(spec, ic, duration, integrator)
        res = resample(raw, lam, granularity)
        if len(res) < n_points:
            raise ChaosBenchError(
                f"resampled trajectory too short: {len(res)} < {n_points}"
            )
        values = res.values[:n_points].copy()
        values.setflags(write=False)
        out.append(values)
    _TRAJ_CACHE[key] = out
    return out


# ---------------------------------------------------------------------------
# ablation primitives
# ---------------------------------------------------------------------------

def _partition_blocks(context: np.ndarray, k: int) -> list[np.ndarray]:
    """Split into length-k blocks counted from the end; ragged remainder first."""
    c = len(context)
    r = c % k
    blocks = []
    if r:
        blocks.append(context[:r])
    for start in range(r, c, k):
        blocks.append(context[start : start + k])
    return blocks


def kgram_shuffle(context, k: int, seed: int = 0, max_draws: int = 1000) -> np.ndarray:
    """Shuffle length-k blocks of successive timepoints, anchored at the end.

    The final block stays fixed; the remaining blocks (including a ragged
    remainder at the start, if any) are uniformly permuted, rejecting
    permutations that leave the penultimate k points unchanged. The multiset
    of blocks is preserved exactly. Raises ShuffleImpossibleError when no
    permutation can change the penultimate block.
    """
    ctx = np.asarray(context, dtype=float)
    c = len(ctx)
    if not (1 <= k <= c // 2):
        raise InvalidArgumentError("k must satisfy 1 <= k <= C/2")
    blocks = _partition_blocks(ctx, k)
    movable, fixed = blocks[:-1], blocks[-1]
    penultimate = ctx[c - 2 * k : c - k]
    if not any(
        len(b) == k and not np.array_equal(b, penultimate) for b in movable
    ):
        raise ShuffleImpossibleError(
            f"no k={k} block differs from the penultimate block; shuffle impossible"
        )
    rng = np.random.default_rng(seed)
    for _ in range(max_draws):
        order = rng.permutation(len(movable))
        shuffled = np.concatenate([movable[i] for i in order] + [fixed])
        if np.array_equal(shuffled[c - 2 * k : c - k], penultimate):
            continue
        return shuffled
    raise ShuffleImpossibleError(f"no acceptable permutation found in {max_draws} draws")


def modulation_factors(n: int, f_min: float) -> np.ndarray:
    """Per-sample scale factors of the exponential nonstationarity modulation.

    Sample t (0-indexed) is scaled by exp(t * log(f_min) / (n-1)); the first
    factor is exactly 1 and the last exactly f_min.
    """
    if not (0 < f_min <= 1):
        raise InvalidArgumentError("f_min must lie in (0, 1]")
    if f_min == 1.0 or n < 2:
        return np.ones(n)
    t = np.arange(n, dtype=float)
    factors = np.exp(t * (math.log(f_min) / (n - 1)))
    factors[0] = 1.0
    factors[-1] = f_min
    return factors


def apply_nonstationarity(traj: Trajectory, f_min: float) -> Trajectory:
    """Exponentially damp a trajectory down to a factor of f_min.

    f_min = 1 returns a bit-identical copy.
    """
    factors = modulation_factors(len(traj.values), f_min)
    return Trajectory(
        traj.values * factors[:, None],
        dt_lyap=traj.dt_lyap,
        system=traj.system,
        t0=traj.t0,
        dt_time=traj.dt_time,
    )


# ---------------------------------------------------------------------------
# scoring
# ---------------------------------------------------------------------------

def _score_group(
    forecasts: list[Forecast],
    context_values: np.ndarray,
    test: SealedTestSegment,
    spec: SystemSpec,
    cfg: ExperimentConfig,
    metric_cfg: MetricConfig,
) -> list[MetricReport]:
    """Metric reports for one (system, ic, model) forecast group.

    Attractor metrics are computed once on the assembled multichannel
    forecast and repeated on every channel's report.
    """
    truth = test.reveal_for_scoring()
    dim = truth.shape[1]
    pred = np.stack([f.values for f in forecasts], axis=1)

    d_frac_pred = d_frac_err = d_stsp = d_stsp_se = None
    if cfg.attractor_metrics:
        try:
            d_frac_pred = correlation_dimension(pred, metric_cfg)
        except (DegenerateGeometryError, InvalidArgumentError):
            d_frac_pred = 0.0
        d_frac_err = abs(d_frac_pred - spec.reference_fractal_dim)
        d_stsp, d_stsp_se = kl_attractor(truth, pred, metric_cfg)

    reports = []
    for d in range(dim):
        curve = smape_curve(truth[:, d : d + 1], pred[:, d : d + 1])
        overlap = None
        if len(context_values) >= 2 * metric_cfg.overlap_min_len:
            try:
                overlap, _ = context_overlap(context_values[:, d], metric_cfg.overlap_min_len)
            except UndefinedSimilarityError:
                overlap = None
        reports.append(
            MetricReport(
                smape_curve=[float(v) for v in curve],
                vpt_lyap=vpt(
                    truth[:, d : d + 1], pred[:, d : d + 1],
                    metric_cfg.vpt_epsilon, cfg.dt_lyap,
                ),
                vpt_sustained_lyap=vpt_sustained(
                    truth[:, d : d + 1], pred[:, d : d + 1],
                    metric_cfg.vpt_epsilon, cfg.dt_lyap,
                ),
                d_frac_pred=d_frac_pred,
                d_frac_error=d_frac_err,
                d_stsp=d_stsp,
                d_stsp_se=d_stsp_se,
                context_overlap=overlap,
            ).validate()
        )
    return reports


def _failed_records(cfg, system, ic_index, model_id, dim, kind_params, reason):
    return [
        ResultRecord(
            system=system,
            ic_index=ic_index,
            channel=d,
            model_id=model_id,
            experiment_kind=cfg.experiment_kind,
            kind_params=dict(kind_params),
            metrics=MetricReport(),
            seed=cfg.seed,
            status="failed",
            error=reason,
        )
        for d in range(dim)
    ]


def _tuned_forecaster(model_id: str, tuned: dict):
    nvar_cfg = None
    parrot_cfg = None
    if model_id == "nvar" and "nvar" in tuned:
        nvar_cfg = NvarConfig(n_lags=tuned["nvar"])
    if model_id == "parrot" and "parrot" in tuned:
        parrot_cfg = ParrotConfig(motif_len=max(tuned["parrot"], 2))
    return make_forecaster(model_id, nvar_cfg=nvar_cfg, parrot_cfg=parrot_cfg)


def _tune_for_variant(cfg: ExperimentConfig, contexts: list[np.ndarray]) -> tuple[dict, dict]:
    """Tune lookbacks on the training prefix of each context, per model family.

    Channel-independent runs tune on the pooled per-channel series; the
    multivariate mode tunes the joint model on full-state contexts. Tuning
    needs the configured split to fit inside the variant's context; shorter
    contexts (sweep/truncation arms) fall back to untuned defaults.
    """
    tuned: dict[str, int] = {}
    walls: dict[str, float] = {}
    tables: dict[str, list] = {}
    ctx_len = len(contexts[0])
    n_train, n_val = cfg.train_val_split
    if ctx_len < n_train + n_val:
        return tuned, {"tables": tables, "walltimes": walls}
    for model_id in cfg.models:
        if model_id not in cfg.tune_models:
            continue
        if cfg.mode == "multivariate" and model_id == "nvar":
            series = list(contexts)
        else:
            series = [ctx[:, d] for ctx in contexts for d in range(contexts[0].shape[1])]
        t0 = time.perf_counter()
        result = tune_lookback(
            model_id,
            series,
            grid=cfg.lookback_grid,
            split=cfg.train_val_split,
            dt_lyap=cfg.dt_lyap,
            points_per_lyapunov=cfg.granularity,
        )
        walls[model_id] = time.perf_counter() - t0
        tuned[model_id] = result.best_param
        tables[model_id] = result.table
    return tuned, {"tables": tables, "walltimes": walls}


# ---------------------------------------------------------------------------
# runners
# ---------------------------------------------------------------------------

def run_benchmark(
    cfg: ExperimentConfig,
    registry: dict[str, SystemSpec] | None = None,
    variants_fn=None,
) -> Iterator[ResultRecord]:
    """Run the benchmark, yielding one ResultRecord per channel task.

    A trajectory of length context_len + horizon is generated per
    (system, ic); the last ``horizon`` points form the sealed test segment
    and are never visible to tuning or fitting.

    ``variants_fn(full_trajectory, system, ic_index, seed)`` may split one
    trajectory into several experimental arms; it returns a list of
    (kind_params, context_values, sealed_test) triples. The default is the
    plain baseline split.

    Models listed in cfg.adapters are served by external adapter processes;
    an unreachable or misbehaving adapter yields failed records and the run
    continues.
    """
    length = cfg.context_len + cfg.horizon

    def baseline_variants(traj, system, ic_index, seed):
        return [
            (
                dict(cfg.kind_params),
                traj[: cfg.context_len],
                SealedTestSegment(traj[cfg.context_len :]),
            )
        ]

    variants_fn = variants_fn or baseline_variants

    clients: dict[str, object] = {}

    def get_forecaster(model_id, tuned):
        if model_id in cfg.adapters:
            from .protocol import AdapterClient, AdapterForecaster

            if model_id not in clients:
                client = AdapterClient(cfg.adapters[model_id], timeout=cfg.adapter_timeout)
                try:
                    client.start()
                except ChaosBenchError:
                    raise
                except Exception as exc:
                    raise ChaosBenchError(f"adapter unreachable: {exc}") from exc
                clients[model_id] = client
            return AdapterForecaster(clients[model_id], model_id)
        return _tuned_forecaster(model_id, tuned)

    try:
        yield from _run_benchmark_body(cfg, registry, variants_fn, get_forecaster)
    finally:
        for client in clients.values():
            client.shutdown()


def _run_benchmark_body(cfg, registry, variants_fn, get_forecaster) -> Iterator[ResultRecord]:
    length = cfg.context_len + cfg.horizon
    for system_name in cfg.systems:
        spec = (registry or {}).get(system_name) or get_system(system_name)
        try:
            trajs = generate_trajectories(
                spec, cfg.n_ics, length, cfg.granularity,
                seed=derive_seed(cfg.seed, system_name, "ics"),
            )
        except ChaosBenchError as exc:
            for model_id in cfg.models:
                yield from _failed_records(
                    cfg, system_name, -1, model_id, spec.dim, cfg.kind_params,
                    f"trajectory generation failed: {exc}",
                )
            continue

        # group the per-IC variants by arm so tuning sees all of a system's
        # contexts for that arm, mirroring the per-system tuning protocol
        per_ic_variants = [
            variants_fn(traj, system_name, ic_index,
                        derive_seed(cfg.seed, system_name, ic_index, "variant"))
            for ic_index, traj in enumerate(trajs)
        ]
        n_arms = len(per_ic_variants[0])
        for arm in range(n_arms):
            arm_params = per_ic_variants[0][arm][0]
            contexts = [per_ic_variants[i][arm][1] for i in range(len(trajs))]
            tuned, tune_info = _tune_for_variant(cfg, contexts)
            for ic_index in range(len(trajs)):
                kind_params, context_values, test = per_ic_variants[ic_index][arm]
                metric_cfg = MetricConfig(
                    kl_mc_samples=cfg.kl_mc_samples,
                    rng_seed=derive_seed(cfg.seed, system_name, ic_index, "metrics"),
                )
                for model_id in cfg.models:
                    try:
                        forecaster = get_forecaster(model_id, tuned)
                        forecasts = forecast_multichannel(
                            forecaster, context_values, cfg.horizon,
                            mode=cfg.mode, dt_lyap=cfg.dt_lyap,
                        )
                        reports = _score_group(
                            forecasts, context_values, test, spec, cfg, metric_cfg
                        )
                    except ChaosBenchError as exc:
                        yield from _failed_records(
                            cfg, system_name, ic_index, model_id, spec.dim,
                            kind_params, f"{type(exc).__name__}: {exc}",
                        )
                        continue
                    for channel, (forecast, report) in enumerate(zip(forecasts, reports)):
                        extra = {"forecast_metadata": _json_safe(forecast.metadata)}
                        if model_id in tuned:
                            extra["tuned_lookback"] = tuned[model_id]
                            extra["tune_walltime"] = tune_info["walltimes"].get(model_id)
                        yield ResultRecord(
                            system=system_name,
                            ic_index=ic_index,
                            channel=channel,
                            model_id=model_id,
                            experiment_kind=cfg.experiment_kind,
                            kind_params=dict(kind_params),
                            metrics=report,
                            fit_walltime=forecast.fit_walltime,
                            inference_walltime=forecast.inference_walltime,
                            seed=cfg.seed,
                            extra=extra,
                        )


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def run_shuffle_experiment(cfg: ExperimentConfig) -> Iterator[ResultRecord]:
    """Paired arms per k: full-but-shuffled context versus truncated last-k context.

    Both arms score against the same test segment. A k for which the shuffle
    is impossible yields failed records in the shuffled arm so the pairing
    stays visible.
    """
    k_values = list(cfg.kind_params.get("k_values", (4, 16, 64)))
    for k in k_values:
        if not (1 <= k <= cfg.context_len // 2):
            raise InvalidArgumentError(f"k={k} outside [1, C/2]")

    def variants(traj, system, ic_index, seed):
        context = traj[: cfg.context_len]
        out = []
        for k in k_values:
            test = SealedTestSegment(traj[cfg.context_len :])
            try:
                shuffled = kgram_shuffle(context, k, seed=derive_seed(seed, "shuffle", k))
            except ShuffleImpossibleError:
                shuffled = None
            out.append(({"k": k, "condition": "shuffled"}, shuffled, test))
            out.append(({"k": k, "condition": "truncated"}, context[-k:], test))
        return out

    for record in _run_with_optional_failures(cfg, variants):
        yield record


def _run_with_optional_failures(cfg, variants_fn):
    """run_benchmark wrapper that turns None contexts into failed records."""

    def wrapped(traj, system, ic_index, seed):
        out = []
        for kind_params, context, test in variants_fn(traj, system, ic_index, seed):
            if context is None:
                context = np.full((2, traj.shape[1]), np.nan)  # sentinel, never valid
            out.append((kind_params, context, test))
        return out

    for record in run_benchmark(cfg, variants_fn=wrapped):
        yield record


def run_context_sweep(cfg: ExperimentConfig) -> Iterator[ResultRecord]:
    """Vary context length; the test segment stays identical across lengths.

    Contexts are the trailing slices of the full-length context, which is the
    backwards-in-time extension protocol: shorter contexts end at the same
    point, and the test points never move.
    """
    grid = list(cfg.kind_params.get("context_lengths", (5, 16, 51, 160, 512)))
    for c in grid:
        if not (2 <= c <= cfg.context_len):
            raise InvalidArgumentError(f"context length {c} outside [2, {cfg.context_len}]")

    def variants(traj, system, ic_index, seed):
        test_vals = traj[cfg.context_len :]
        return [
            ({"context_len": c}, traj[cfg.context_len - c : cfg.context_len],
             SealedTestSegment(test_vals))
            for c in grid
        ]

    yield from run_benchmark(cfg, variants_fn=variants)


def run_nonstationarity_experiment(cfg: ExperimentConfig) -> Iterator[ResultRecord]:
    """Per-f_min records with the modulation applied before the split.

    The whole trajectory (context and test) is damped, so the forecast
    regime genuinely drifts away from the context distribution.
    """
    grid = list(cfg.kind_params.get("f_min_grid", (1.0, 0.8, 0.6, 0.4, 0.2)))
    for f in grid:
        if not (0 < f <= 1):
            raise InvalidArgumentError("f_min grid values must lie in (0, 1]")

    length = cfg.context_len + cfg.horizon
    factor_table = {f: modulation_factors(length, f)[:, None] for f in grid}

    def variants(traj, system, ic_index, seed):
        out = []
        for f_min in grid:
            mod = traj * factor_table[f_min]
            out.append(
                ({"f_min": f_min}, mod[: cfg.context_len],
                 SealedTestSegment(mod[cfg.context_len :]))
            )
        return out

    yield from run_benchmark(cfg, variants_fn=variants)


def task_vpt_means(
    records: Iterable[ResultRecord],
    model_id: str,
    arm_key: str | None = None,
) -> dict[tuple, float]:
    """Channel-averaged sustained VPT per (system, ic[, arm]) task.

    Benchmark summaries follow the channel-independent evaluation protocol:
    per-channel forecasts are scored separately and the results averaged per
    trajectory, using the sustained VPT reading.
    """
    by_task: dict[tuple, list[float]] = {}
    for r in records:
        if r.model_id != model_id or r.failed:
            continue
        key = (r.system, r.ic_index)
        if arm_key is not None:
            key += (r.kind_params.get(arm_key),)
        by_task.setdefault(key, []).append(r.metrics.vpt_sustained_lyap)
    return {k: float(np.mean(v)) for k, v in by_task.items()}


def nonstationarity_summary(records: Iterable[ResultRecord]) -> dict:
    """Spearman trend of median VPT against the nonstationarity degree 1 - f_min."""
    records = [r for r in records if not r.failed and "f_min" in r.kind_params]
    out = {}
    models = sorted({r.model_id for r in records})
    for model_id in models:
        tasks = task_vpt_means(records, model_id, arm_key="f_min")
        fs = sorted({k[2] for k in tasks})
        medians = [
            float(np.median([v for k, v in tasks.items() if k[2] == f])) for f in fs
        ]
        degrees = [1.0 - f for f in fs]
        try:
            rho = spearman(degrees, medians)
        except (UndefinedCorrelationError, InvalidArgumentError):
            rho = None
        out[model_id] = {
            "f_min_grid": fs,
            "median_vpt": medians,
            "spearman_rho_degree_vpt": rho,
        }
    return out


def run_ic_dependence(
    cfg: ExperimentConfig,
    registry: dict[str, SystemSpec] | None = None,
) -> tuple[list[ResultRecord], dict]:
    """Relate forecast accuracy to the attractor density at the forecast origin.

    Runs the baseline protocol, evaluates the natural-measure density of each
    initial condition (the final context point) against a long reference
    orbit of the same system, and reports pooled Spearman correlations with a
    permutation p-value. Densities are pooled as within-system rank
    quantiles, since absolute densities are not comparable across systems.
    """
    if cfg.n_ics < 10:
        raise InvalidArgumentError("ic_dependence needs at least 10 ICs per system")
    records = list(run_benchmark(cfg, registry=registry))

    ref_points = int(cfg.kind_params.get("reference_points", 6000))
    length = cfg.context_len + cfg.horizon
    log_density: dict[tuple[str, int], float] = {}
    for system_name in cfg.systems:
        spec = (registry or {}).get(system_name) or get_system(system_name)
        ref = generate_trajectories(
            spec, 1, ref_points, cfg.granularity,
            seed=derive_seed(cfg.seed, system_name, "reference_orbit"),
        )[0]
        mixture = build_mixture(ref)
        trajs = generate_trajectories(
            spec, cfg.n_ics, length, cfg.granularity,
            seed=derive_seed(cfg.seed, system_name, "ics"),
        )
        queries = np.stack([t[cfg.context_len - 1] for t in trajs])
        logd = mixture.log_density(queries)
        for ic_index in range(cfg.n_ics):
            log_density[(system_name, ic_index)] = float(logd[ic_index])

    for record in records:
        key = (record.system, record.ic_index)
        if key in log_density:
            record.kind_params.setdefault("log_density", log_density[key])

    summary = ic_dependence_summary(records, cfg)
    return records, summary


def ic_dependence_summary(records: Iterable[ResultRecord], cfg: ExperimentConfig) -> dict:
    """Pooled (VPT, density-rank) pairs and Spearman rho per model.

    Densities pool as within-system rank quantiles (the relative-density
    reading); VPT is the channel-averaged sustained value per trajectory.
    """
    records = [r for r in records if not r.failed and "log_density" in r.kind_params]
    out = {}
    for model_id in sorted({r.model_id for r in records}):
        tasks = task_vpt_means(records, model_id)
        logd_by_task: dict[tuple[str, int], float] = {}
        for r in records:
            if r.model_id == model_id:
                logd_by_task[(r.system, r.ic_index)] = float(r.kind_params["log_density"])
        pairs = []
        by_system: dict[str, list[tuple[int, float, float]]] = {}
        for (system, ic), mean_vpt in tasks.items():
            by_system.setdefault(system, []).append((ic, mean_vpt, logd_by_task[(system, ic)]))
        for system, items in by_system.items():
            logds = np.array([x[2] for x in items])
            order = logds.argsort().argsort()  # within-system density ranks
            ranks = (order + 1) / len(items)
            for (ic, mean_vpt, logd), rank in zip(items, ranks):
                pairs.append(
                    {"system": system, "ic_index": ic, "vpt": mean_vpt,
                     "log_density": logd, "density_rank": float(rank)}
                )
        vpts = [p["vpt"] for p in pairs]
        ranks = [p["density_rank"] for p in pairs]
        try:
            rho, pval = spearman_permutation_pvalue(
                ranks, vpts, n_perm=1000,
                rng_seed=derive_seed(cfg.seed, model_id, "ic_perm"),
                alternative="greater",
            )
        except (UndefinedCorrelationError, InvalidArgumentError):
            rho, pval = None, None
        out[model_id] = {"pairs": pairs, "spearman_rho": rho, "p_value": pval}
    return out


def run_experiment(cfg: ExperimentConfig, registry=None) -> Iterator[ResultRecord]:
    """Dispatch on cfg.experiment_kind."""
    if cfg.experiment_kind == "baseline":
        yield from run_benchmark(cfg, registry=registry)
    elif cfg.experiment_kind == "kgram_shuffle":
        yield from run_shuffle_experiment(cfg)
    elif cfg.experiment_kind == "context_sweep":
        yield from run_context_sweep(cfg)
    elif cfg.experiment_kind == "nonstationary":
        yield from run_nonstationarity_experiment(cfg)
    elif cfg.experiment_kind == "ic_dependence":
        records, _ = run_ic_dependence(cfg, registry=registry)
        yield from records
    else:  # pragma: no cover - guarded by config validation
        raise InvalidArgumentError(f"unknown experiment_kind {cfg.experiment_kind!r}")


# ---------------------------------------------------------------------------
# aggregation and statistics
# ---------------------------------------------------------------------------

def aggregate(
    records: Iterable[ResultRecord],
    group_keys: Sequence[str],
    n_boot: int = 1000,
    seed: int = 0,
) -> list[dict]:
    """Per-group median and bootstrap standard error of each metric.

    Failed records are excluded from the statistics but counted per group;
    empty groups are omitted.
    """
    records = list(records)
    if not records:
        raise InvalidArgumentError("no records to aggregate")

    def key_of(rec):
        out = []
        for key in group_keys:
            if hasattr(rec, key) and key != "kind_params":
                out.append(getattr(rec, key))
            else:
                out.append(rec.kind_params.get(key))
        return tuple(out)

    groups: dict[tuple, list[ResultRecord]] = {}
    for rec in records:
        groups.setdefault(key_of(rec), []).append(rec)

    metric_fields = (
        "vpt_lyap", "vpt_sustained_lyap", "smape_cum",
        "d_frac_error", "d_stsp", "context_overlap",
    )
    rows = []
    rng = np.random.default_rng(seed)
    for key in sorted(groups, key=lambda k: tuple(str(v) for v in k)):
        group = groups[key]
        ok = [r for r in group if not r.failed]
        row: dict = {k: v for k, v in zip(group_keys, key)}
        row["count"] = len(ok)
        row["failed"] = len(group) - len(ok)
        for metric in metric_fields:
            vals = []
            for rec in ok:
                v = rec.smape_cum if metric == "smape_cum" else getattr(rec.metrics, metric)
                if v is not None and np.isfinite(v):
                    vals.append(float(v))
            if not vals:
                continue
            arr = np.array(vals)
            med = float(np.median(arr))
            if len(arr) == 1:
                se = 0.0
            else:
                boot = np.median(
                    arr[rng.integers(0, len(arr), size=(n_boot, len(arr)))], axis=1
                )
                se = float(boot.std(ddof=1))
            row[f"{metric}_median"] = med
            row[f"{metric}_se"] = se
        if ok:
            row["fit_walltime_median"] = float(np.median([r.fit_walltime for r in ok]))
            row["inference_walltime_median"] = float(
                np.median([r.inference_walltime for r in ok])
            )
        rows.append(row)
    return rows


def paired_permutation_pvalue(
    a: Sequence[float],
    b: Sequence[float],
    n_perm: int = 10_000,
    seed: int = 0,
) -> float:
    """One-sided sign-flip permutation test for mean(a - b) > 0."""
    diff = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    if len(diff) < 2:
        raise InvalidArgumentError("need at least 2 pairs")
    rng = np.random.default_rng(seed)
    observed = diff.mean()
    signs = rng.choice((-1.0, 1.0), size=(n_perm, len(diff)))
    perm = (signs * diff).mean(axis=1)
    return float((1 + np.sum(perm >= observed)) / (1 + n_perm))
