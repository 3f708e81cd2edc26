"""Forecast models and channel orchestration.

Three in-core models cover the benchmark's comparison axes:

* naive constant -- the most recent context value carried forward;
* NVAR -- ridge-regressed readout over linear and quadratic monomials of
  lagged values, rolled out autoregressively;
* parrot -- the zero-shot context-parroting strategy: find the context motif
  most similar to the recent history and replay what followed it.

Deep baselines are deliberately not reimplemented; they attach through the
external adapter protocol (see chaosbench.protocol).

All forecasters are deterministic functions of (task, config); fitted models
are immutable, so tasks can be dispatched to workers without coordination.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import FitFailureError, InvalidArgumentError, UnsupportedModeError

__all__ = [
    "ForecastTask",
    "Forecast",
    "NvarConfig",
    "ParrotConfig",
    "naive_forecast",
    "NvarModel",
    "nvar_fit",
    "nvar_forecast",
    "parrot_forecast",
    "LOOKBACK_GRID",
    "TuneResult",
    "tune_lookback",
    "forecast_multichannel",
    "NaiveForecaster",
    "ParrotForecaster",
    "NvarForecaster",
    "make_forecaster",
]

#: lookback grid in Lyapunov-time fractions used for hyperparameter tuning
LOOKBACK_GRID = (0.067, 0.167, 0.333, 0.5, 0.833, 1.0)


@dataclass(frozen=True)
class ForecastTask:
    """One channel-independent prediction job."""

    context: np.ndarray
    horizon: int = 300
    channel_index: int = 0
    dt_lyap: float = 1.0 / 30.0

    def __post_init__(self):
        ctx = np.asarray(self.context, dtype=float).ravel()
        object.__setattr__(self, "context", ctx)
        if len(ctx) < 2:
            raise InvalidArgumentError("context needs at least 2 points")
        if not np.all(np.isfinite(ctx)):
            raise InvalidArgumentError("context must be finite")
        if self.horizon < 1:
            raise InvalidArgumentError("horizon must be >= 1")
        if not (self.dt_lyap > 0):
            raise InvalidArgumentError("dt_lyap must be positive")


@dataclass
class Forecast:
    values: np.ndarray
    model_id: str
    fit_walltime: float = 0.0
    inference_walltime: float = 0.0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()
        if not np.all(np.isfinite(self.values)):
            raise InvalidArgumentError("forecast values must be finite")


@dataclass(frozen=True)
class NvarConfig:
    n_lags: int = 5
    max_order: int = 2
    ridge: float = 1e-4
    stride: int = 1

    def __post_init__(self):
        if self.n_lags < 1:
            raise InvalidArgumentError("n_lags must be >= 1")
        if self.max_order not in (1, 2):
            raise InvalidArgumentError("max_order must be 1 or 2")
        if self.ridge < 0:
            raise InvalidArgumentError("ridge must be non-negative")
        if self.stride < 1:
            raise InvalidArgumentError("stride must be >= 1")


@dataclass(frozen=True)
class ParrotConfig:
    motif_len: int = 30
    rematch_interval: int | None = None  # None: single match per horizon
    similarity: str = "pearson"
    low_confidence_threshold: float = 0.8

    def __post_init__(self):
        if self.motif_len < 2:
            raise InvalidArgumentError("motif_len must be >= 2")
        if self.similarity not in ("pearson", "zncc", "euclid"):
            raise InvalidArgumentError("similarity must be 'pearson', 'zncc', or 'euclid'")
        if self.rematch_interval is not None and self.rematch_interval < 1:
            raise InvalidArgumentError("rematch_interval must be >= 1")


# ---------------------------------------------------------------------------
# naive constant
# ---------------------------------------------------------------------------

def naive_forecast(task: ForecastTask) -> Forecast:
    """Carry the most recent context value forward for the whole horizon."""
    t0 = time.perf_counter()
    values = np.full(task.horizon, task.context[-1])
    return Forecast(
        values,
        model_id="naive",
        inference_walltime=time.perf_counter() - t0,
    )


# ---------------------------------------------------------------------------
# NVAR
# ---------------------------------------------------------------------------

def _nvar_features(lagged: np.ndarray, max_order: int) -> np.ndarray:
    """Feature rows [1 | lagged | upper-triangle products of lagged]."""
    n = len(lagged)
    cols = [np.ones((n, 1)), lagged]
    if max_order == 2:
        iu, ju = np.triu_indices(lagged.shape[1])
        cols.append(lagged[:, iu] * lagged[:, ju])
    return np.concatenate(cols, axis=1)


def _lag_matrix(series: np.ndarray, n_lags: int, stride: int) -> np.ndarray:
    """Rows of [x_t, x_{t-s}, ..., x_{t-(k-1)s}] stacked over valid t, all channels."""
    t_len, dim = series.shape
    first = (n_lags - 1) * stride
    rows = t_len - first
    out = np.empty((rows, n_lags * dim))
    for lag in range(n_lags):
        block = series[first - lag * stride : t_len - lag * stride]
        out[:, lag * dim : (lag + 1) * dim] = block
    return out


def _ridge_solve(phi: np.ndarray, y: np.ndarray, ridge: float) -> np.ndarray:
    n, p = phi.shape
    try:
        if p <= n:
            gram = phi.T @ phi + ridge * np.eye(p)
            w = np.linalg.solve(gram, phi.T @ y)
        else:
            # dual form: cheaper when features outnumber samples
            gram = phi @ phi.T + ridge * np.eye(n)
            w = phi.T @ np.linalg.solve(gram, y)
    except np.linalg.LinAlgError as exc:
        raise FitFailureError(f"singular normal equations: {exc}") from exc
    if not np.all(np.isfinite(w)):
        raise FitFailureError("ridge solution is non-finite")
    return w


@dataclass(frozen=True)
class NvarModel:
    """Immutable fitted NVAR readout. ``dim`` is 1 for univariate models."""

    weights: np.ndarray  # (P,) univariate or (P, D) multivariate
    cfg: NvarConfig
    dim: int
    train_residual: float
    fit_walltime: float

    @property
    def window(self) -> int:
        """Number of trailing samples needed to form one feature row."""
        return (self.cfg.n_lags - 1) * self.cfg.stride + 1


def nvar_fit(train, cfg: NvarConfig = NvarConfig()) -> NvarModel:
    """Fit an NVAR readout on a training series.

    ``train`` may be one channel (T,) or a full state (T, D); the readout
    regresses the next sample on [1 | lags | quadratic monomials of lags]
    with ridge regularization. Raises FitFailureError when the normal
    equations are singular (reachable with ridge == 0 on degenerate data).
    """
    t0 = time.perf_counter()
    series = np.asarray(train, dtype=float)
    univariate = series.ndim == 1
    if univariate:
        series = series[:, None]
    t_len, dim = series.shape
    window = (cfg.n_lags - 1) * cfg.stride + 1
    if t_len <= window:
        raise InvalidArgumentError(
            f"train length {t_len} too short for {cfg.n_lags} lags at stride {cfg.stride}"
        )
    if not np.all(np.isfinite(series)):
        raise InvalidArgumentError("training series must be finite")

    lagged = _lag_matrix(series, cfg.n_lags, cfg.stride)
    phi = _nvar_features(lagged[:-1], cfg.max_order)
    y = series[window:]
    w = _ridge_solve(phi, y, cfg.ridge)
    residual = float(np.sqrt(np.mean((phi @ w - y) ** 2)))
    if univariate:
        w = w[:, 0]
    return NvarModel(
        weights=w,
        cfg=cfg,
        dim=1 if univariate else dim,
        train_residual=residual,
        fit_walltime=time.perf_counter() - t0,
    )


def _nvar_rollout(model: NvarModel, history: np.ndarray, horizon: int):
    """Autoregressive rollout; returns (values, clipped_flag)."""
    cfg = model.cfg
    dim = model.dim
    buf = history[-model.window :].copy()  # (window, dim)
    amp = float(np.max(np.abs(history)))
    bound = 100.0 * (amp if amp > 0 else 1.0)
    weights = model.weights if model.weights.ndim == 2 else model.weights[:, None]

    out = np.empty((horizon, dim))
    clipped = False
    lag_idx = np.arange(cfg.n_lags) * cfg.stride
    for h in range(horizon):
        lags = buf[::-1][lag_idx].reshape(1, -1)  # most recent first
        feats = _nvar_features(lags, cfg.max_order)
        nxt = (feats @ weights)[0]
        if not np.all(np.isfinite(nxt)) or np.any(np.abs(nxt) > bound):
            nxt = np.clip(np.nan_to_num(nxt, nan=bound, posinf=bound, neginf=-bound),
                          -bound, bound)
            clipped = True
        out[h] = nxt
        buf = np.vstack([buf[1:], nxt])
    return out, clipped


def nvar_forecast(model: NvarModel, task: ForecastTask) -> Forecast:
    """Roll a fitted univariate NVAR model forward from the task context.

    Diverging rollouts are clipped to 100x the context amplitude envelope and
    flagged in metadata rather than raised, so every forecast stays scorable.
    """
    if model.dim != 1:
        raise UnsupportedModeError("use nvar_forecast_joint for multivariate models")
    if len(task.context) < model.window:
        raise InvalidArgumentError("context shorter than the model's lag window")
    t0 = time.perf_counter()
    values, clipped = _nvar_rollout(model, task.context[:, None], task.horizon)
    return Forecast(
        values[:, 0],
        model_id="nvar",
        fit_walltime=model.fit_walltime,
        inference_walltime=time.perf_counter() - t0,
        metadata={"diverged": clipped, "n_lags": model.cfg.n_lags},
    )


def nvar_forecast_joint(model: NvarModel, context: np.ndarray, horizon: int) -> list[Forecast]:
    """Multivariate rollout; returns one Forecast per channel."""
    context = np.atleast_2d(np.asarray(context, dtype=float))
    if context.shape[1] != model.dim:
        raise InvalidArgumentError("context width does not match fitted dimension")
    if len(context) < model.window:
        raise InvalidArgumentError("context shorter than the model's lag window")
    t0 = time.perf_counter()
    values, clipped = _nvar_rollout(model, context, horizon)
    wall = time.perf_counter() - t0
    return [
        Forecast(
            values[:, d],
            model_id="nvar",
            fit_walltime=model.fit_walltime,
            inference_walltime=wall,
            metadata={"diverged": clipped, "n_lags": model.cfg.n_lags, "mode": "multivariate"},
        )
        for d in range(model.dim)
    ]


# ---------------------------------------------------------------------------
# context parroting
# ---------------------------------------------------------------------------

def _motif_scores(context: np.ndarray, query: np.ndarray, similarity: str) -> np.ndarray:
    """Similarity of every context window (except the final one) to the query.

    pearson: mean-removed correlation (affine invariant); zncc: normalized
    cross-correlation without mean removal (level sensitive); euclid: the
    delay-space nearest-neighbor reading, scored as negative RMS distance so
    argmax semantics match. Windows with undefined similarity score NaN.
    """
    m = len(query)
    windows = np.lib.stride_tricks.sliding_window_view(context, m)[:-1]
    if similarity == "euclid":
        scores = -np.sqrt(((windows - query) ** 2).mean(axis=1))
        if not np.all(np.isfinite(query)):
            scores[:] = np.nan
        return scores
    if similarity == "pearson":
        q = query - query.mean()
        w = windows - windows.mean(axis=1, keepdims=True)
    else:  # zncc
        q = query
        w = windows
    qn = np.linalg.norm(q)
    wn = np.linalg.norm(w, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        scores = (w @ q) / (wn * qn)
    scores[wn == 0] = np.nan
    if qn == 0:
        scores[:] = np.nan
    return scores


def parrot_forecast(task: ForecastTask, cfg: ParrotConfig = ParrotConfig()) -> Forecast:
    """Zero-shot forecast by replaying the best-matching context motif.

    The last ``motif_len`` context points are matched against every earlier
    window (the degenerate self-match excluded) and the points following the
    winner are emitted. When the replay runs off the context end, or every
    ``rematch_interval`` outputs, the trailing emitted points become a new
    query and matching repeats. A zero-variance query falls back to the
    naive constant forecast with a metadata flag.
    """
    context = task.context
    c = len(context)
    m = cfg.motif_len
    if m >= c:
        raise InvalidArgumentError("motif_len must be smaller than the context")
    if c < 2 * m:
        raise InvalidArgumentError("context must be at least twice the motif length")

    t0 = time.perf_counter()
    rematch_every = cfg.rematch_interval or task.horizon

    def best_match(query):
        scores = _motif_scores(context, query, cfg.similarity)
        if np.all(np.isnan(scores)):
            return None
        j = int(np.nanargmax(scores))
        return j, float(scores[j])

    first = best_match(context[-m:])
    if first is None:
        fallback = naive_forecast(task)
        fallback.metadata.update({"fallback": True, "reason": "zero-variance query"})
        fallback.model_id = "parrot"
        return fallback

    matches = [first]
    out = np.empty(task.horizon)
    n_out = 0
    pos = first[0] + m
    since_match = 0
    while n_out < task.horizon:
        if pos >= c or since_match >= rematch_every:
            tail = np.concatenate([context, out[:n_out]])[-m:]
            nxt = best_match(tail)
            if nxt is None:
                out[n_out:] = out[n_out - 1] if n_out else context[-1]
                matches.append((-1, float("nan")))
                break
            matches.append(nxt)
            pos = nxt[0] + m
            since_match = 0
        out[n_out] = context[pos]
        n_out += 1
        pos += 1
        since_match += 1

    if cfg.similarity == "euclid":
        # negative RMS distance; low confidence when the nearest motif sits
        # further than 25% of the query's RMS amplitude
        query_rms = float(np.sqrt(np.mean(context[-m:] ** 2)))
        low_confidence = -matches[0][1] > 0.25 * max(query_rms, 1e-300)
    else:
        low_confidence = matches[0][1] < cfg.low_confidence_threshold
    return Forecast(
        out,
        model_id="parrot",
        inference_walltime=time.perf_counter() - t0,
        metadata={
            "matched_offsets": [j for j, _ in matches],
            "match_scores": [s for _, s in matches],
            "low_confidence": low_confidence,
            "similarity": cfg.similarity,
            "motif_len": m,
        },
    )


# ---------------------------------------------------------------------------
# lookback tuning
# ---------------------------------------------------------------------------

@dataclass
class TuneResult:
    best_fraction: float
    best_param: int
    table: list[dict]  # one row per grid value


def _lookback_param(family: str, fraction: float, points_per_lyapunov: int) -> int:
    steps = max(int(round(fraction * points_per_lyapunov)), 1)
    if family == "parrot":
        return max(steps, 2)
    return steps


def _fit_and_score(family, train, val, param, base_nvar, base_parrot, dt_lyap):
    from .metrics import smape_cumulative

    if family == "nvar" and train.ndim == 2:
        # multivariate path: joint features, scored over all channels
        cfg = NvarConfig(
            n_lags=param,
            max_order=base_nvar.max_order,
            ridge=base_nvar.ridge,
            stride=base_nvar.stride,
        )
        model = nvar_fit(train, cfg)
        preds = nvar_forecast_joint(model, train, len(val))
        return smape_cumulative(val, np.stack([p.values for p in preds], axis=1))

    task = ForecastTask(context=train, horizon=len(val), dt_lyap=dt_lyap)
    if family == "nvar":
        cfg = NvarConfig(
            n_lags=param,
            max_order=base_nvar.max_order,
            ridge=base_nvar.ridge,
            stride=base_nvar.stride,
        )
        model = nvar_fit(train, cfg)
        pred = nvar_forecast(model, task)
    elif family == "parrot":
        cfg = ParrotConfig(
            motif_len=min(param, len(train) // 2),
            rematch_interval=base_parrot.rematch_interval,
            similarity=base_parrot.similarity,
        )
        pred = parrot_forecast(task, cfg)
    elif family == "naive":
        pred = naive_forecast(task)
    else:
        raise InvalidArgumentError(f"unknown tunable family {family!r}")
    return smape_cumulative(val[:, None], pred.values[:, None])


def tune_lookback(
    family: str,
    series_list: Sequence[np.ndarray],
    grid: Sequence[float] = LOOKBACK_GRID,
    split: tuple[int, int] = (435, 77),
    dt_lyap: float = 1.0 / 30.0,
    points_per_lyapunov: int = 30,
    base_nvar: NvarConfig = NvarConfig(),
    base_parrot: ParrotConfig = ParrotConfig(),
) -> TuneResult:
    """Pick the lookback (in Lyapunov-time fractions) minimizing validation sMAPE.

    Each series is split into (train, validation) by ``split``; for every
    grid value the family's model is fit on the train part and scored on the
    validation part, and scores are averaged over all series. Series may be
    univariate (T,) or full-state (T, D); the latter tunes the joint
    multivariate NVAR. Grid points whose fits fail score +inf and stay in
    the table; ties break toward the smaller lookback.
    """
    if not grid:
        raise InvalidArgumentError("grid must be non-empty")
    if not series_list:
        raise InvalidArgumentError("need at least one series")
    n_train, n_val = split
    table = []
    for fraction in grid:
        param = _lookback_param(family, fraction, points_per_lyapunov)
        scores, failures = [], 0
        for series in series_list:
            series = np.asarray(series, dtype=float)
            if series.ndim == 2 and family != "nvar":
                raise InvalidArgumentError(f"{family} tuning supports univariate series only")
            if len(series) < n_train + n_val:
                raise InvalidArgumentError(
                    f"series of length {len(series)} shorter than split {split}"
                )
            train = series[: n_train]
            val = series[n_train : n_train + n_val]
            try:
                scores.append(
                    _fit_and_score(family, train, val, param, base_nvar, base_parrot, dt_lyap)
                )
            except (FitFailureError, InvalidArgumentError):
                failures += 1
        mean_score = float(np.mean(scores)) if scores and not failures else float("inf")
        table.append(
            {
                "fraction": float(fraction),
                "param": param,
                "mean_val_smape": mean_score,
                "n_failures": failures,
            }
        )

    best = min(table, key=lambda row: (row["mean_val_smape"], row["fraction"]))
    return TuneResult(best_fraction=best["fraction"], best_param=best["param"], table=table)


# ---------------------------------------------------------------------------
# channel orchestration
# ---------------------------------------------------------------------------

class NaiveForecaster:
    model_id = "naive"
    supports_multivariate = False

    def forecast_channel(self, task: ForecastTask) -> Forecast:
        return naive_forecast(task)


class ParrotForecaster:
    model_id = "parrot"
    supports_multivariate = False

    def __init__(self, cfg: ParrotConfig = ParrotConfig()):
        self.cfg = cfg

    def forecast_channel(self, task: ForecastTask) -> Forecast:
        cfg = self.cfg
        # short contexts shrink the motif so the matching precondition holds
        max_m = max(len(task.context) // 2, 2)
        if cfg.motif_len > max_m:
            cfg = ParrotConfig(
                motif_len=max_m,
                rematch_interval=cfg.rematch_interval,
                similarity=cfg.similarity,
                low_confidence_threshold=cfg.low_confidence_threshold,
            )
        return parrot_forecast(task, cfg)


class NvarForecaster:
    model_id = "nvar"
    supports_multivariate = True

    def __init__(self, cfg: NvarConfig = NvarConfig()):
        self.cfg = cfg

    def _effective_cfg(self, context_len: int) -> NvarConfig:
        # keep the lag window inside the available context
        window = (self.cfg.n_lags - 1) * self.cfg.stride + 1
        if context_len > window + 1:
            return self.cfg
        n_lags = max((context_len - 2) // self.cfg.stride + 1, 1)
        return NvarConfig(
            n_lags=n_lags,
            max_order=self.cfg.max_order,
            ridge=self.cfg.ridge,
            stride=self.cfg.stride,
        )

    def forecast_channel(self, task: ForecastTask) -> Forecast:
        model = nvar_fit(task.context, self._effective_cfg(len(task.context)))
        return nvar_forecast(model, task)

    def forecast_joint(self, context: np.ndarray, horizon: int) -> list[Forecast]:
        model = nvar_fit(context, self._effective_cfg(len(context)))
        return nvar_forecast_joint(model, context, horizon)


def make_forecaster(model_id: str, nvar_cfg=None, parrot_cfg=None):
    if model_id == "naive":
        return NaiveForecaster()
    if model_id == "parrot":
        return ParrotForecaster(parrot_cfg or ParrotConfig())
    if model_id == "nvar":
        return NvarForecaster(nvar_cfg or NvarConfig())
    raise InvalidArgumentError(f"unknown in-core model {model_id!r}")


def forecast_multichannel(
    forecaster,
    trajectory_values,
    horizon: int,
    mode: str = "channel_independent",
    dt_lyap: float = 1.0 / 30.0,
) -> list[Forecast]:
    """Forecast every channel of a multivariate context.

    ``channel_independent`` fits and forecasts each channel in isolation;
    ``multivariate`` builds features from all channels jointly (models that
    cannot do this raise UnsupportedModeError unless D == 1, where the two
    policies coincide).
    """
    values = np.atleast_2d(np.asarray(trajectory_values, dtype=float))
    if values.ndim != 2 or values.shape[1] < 1:
        raise InvalidArgumentError("trajectory must be a T x D matrix with D >= 1")
    dim = values.shape[1]
    if mode not in ("channel_independent", "multivariate"):
        raise InvalidArgumentError(f"unknown mode {mode!r}")

    if mode == "multivariate" and dim > 1:
        if not getattr(forecaster, "supports_multivariate", False):
            raise UnsupportedModeError(
                f"{forecaster.model_id} cannot produce multivariate forecasts"
            )
        return forecaster.forecast_joint(values, horizon)

    return [
        forecaster.forecast_channel(
            ForecastTask(
                context=values[:, d], horizon=horizon, channel_index=d, dt_lyap=dt_lyap
            )
        )
        for d in range(dim)
    ]
