"""Forecast evaluation metrics.

Short-term accuracy: pointwise/cumulative sMAPE and the valid prediction time
(first horizon whose per-step sMAPE crosses a threshold, reported in Lyapunov
times). Long-term attractor reconstruction: Grassberger-Procaccia correlation
dimension and a Monte-Carlo KL divergence between Gaussian-mixture densities
built on the true and predicted trajectories. Plus the context-overlap
statistic used in the parroting analysis and Spearman rank correlation.

All metrics are pure functions of their inputs and an explicit seed; the
O(N^2) kernels are vectorized and never share mutable state, so concurrent
evaluation needs no coordination.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import (
    DegenerateGeometryError,
    InvalidArgumentError,
    NumericFailureError,
    UndefinedCorrelationError,
    UndefinedSimilarityError,
)

__all__ = [
    "MetricConfig",
    "MetricReport",
    "smape_pointwise",
    "smape_curve",
    "smape_cumulative",
    "vpt",
    "vpt_sustained",
    "correlation_dimension",
    "d_frac_error",
    "GaussianMixture",
    "build_mixture",
    "kl_mixtures",
    "kl_attractor",
    "natural_measure_density",
    "context_overlap",
    "spearman",
]


@dataclass(frozen=True)
class MetricConfig:
    vpt_epsilon: float = 30.0
    gp_radius_percentiles: tuple[float, float] = (0.2, 8.0)
    gp_min_points: int = 1000
    gp_n_radii: int = 20
    gp_max_pairs: int = 4_000_000
    kl_mc_samples: int = 10_000
    kl_bandwidth_floor: float = 1e-12
    overlap_min_len: int = 30
    rng_seed: int = 0

    def __post_init__(self):
        if not (0 < self.vpt_epsilon < 200):
            raise InvalidArgumentError("vpt_epsilon must lie in (0, 200)")
        lo, hi = self.gp_radius_percentiles
        if not (0 <= lo < hi <= 100):
            raise InvalidArgumentError("gp_radius_percentiles must satisfy low < high")
        if self.kl_mc_samples < 100:
            raise InvalidArgumentError("kl_mc_samples must be >= 100")


@dataclass
class MetricReport:
    """Per-forecast metric bundle.

    smape_curve/vpt/context_overlap are per-channel quantities; the attractor
    metrics (d_frac_*, d_stsp) are computed on the assembled multichannel
    forecast and repeated on each channel's record of the same forecast group.
    """

    smape_curve: list[float] = field(default_factory=list)
    vpt_lyap: float = 0.0
    vpt_sustained_lyap: float = 0.0
    d_frac_pred: float | None = None
    d_frac_error: float | None = None
    d_stsp: float | None = None
    d_stsp_se: float | None = None
    context_overlap: float | None = None

    def validate(self):
        arr = np.asarray(self.smape_curve, dtype=float)
        if arr.size and not (np.all(arr >= 0) and np.all(arr <= 200 + 1e-9)):
            raise InvalidArgumentError("smape_curve values must lie in [0, 200]")
        if self.vpt_lyap < 0 or self.vpt_sustained_lyap < 0:
            raise InvalidArgumentError("VPT values must be non-negative")
        if self.d_stsp is not None and self.d_stsp_se is not None:
            if self.d_stsp < -3 * self.d_stsp_se - 1e-9:
                raise InvalidArgumentError("d_stsp below -3 MC standard errors")
        return self


# ---------------------------------------------------------------------------
# pointwise error
# ---------------------------------------------------------------------------

def smape_pointwise(x, x_hat) -> float:
    """Symmetric MAPE of one timepoint, in [0, 200]; 0/0 components score 0."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x_hat = np.atleast_1d(np.asarray(x_hat, dtype=float))
    if x.shape != x_hat.shape:
        raise InvalidArgumentError("truth and prediction shapes differ")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(x_hat))):
        raise InvalidArgumentError("smape inputs must be finite")
    denom = np.abs(x) + np.abs(x_hat)
    ratio = np.where(denom == 0.0, 0.0, np.abs(x - x_hat) / np.where(denom == 0.0, 1.0, denom))
    return float(200.0 * ratio.mean())


def smape_curve(truth, pred) -> np.ndarray:
    """Per-horizon sMAPE values for an H x D truth/prediction pair."""
    truth = np.atleast_2d(np.asarray(truth, dtype=float))
    pred = np.atleast_2d(np.asarray(pred, dtype=float))
    if truth.shape != pred.shape:
        raise InvalidArgumentError("truth and prediction shapes differ")
    denom = np.abs(truth) + np.abs(pred)
    ratio = np.where(denom == 0.0, 0.0, np.abs(truth - pred) / np.where(denom == 0.0, 1.0, denom))
    return 200.0 * ratio.mean(axis=1)


def smape_cumulative(truth, pred) -> float:
    """Mean of the per-horizon sMAPE over all forecast steps."""
    return float(smape_curve(truth, pred).mean())


def vpt(truth, pred, epsilon: float = 30.0, dt_lyap: float = 1.0 / 30.0) -> float:
    """Valid prediction time in Lyapunov times (per-step reading).

    Counts the leading horizons whose per-step sMAPE stays below ``epsilon``
    and converts the count to Lyapunov times via ``dt_lyap``. Returns 0 when
    the first step already violates, H*dt_lyap when none does.

    The per-step reading is extremely sensitive to zero crossings of the
    underlying signal (a single near-zero truth value saturates the ratio),
    which caps it near the first crossing for any forecaster; see
    vpt_sustained for the cumulative reading used in benchmark summaries.
    """
    if epsilon <= 0:
        raise InvalidArgumentError("epsilon must be positive")
    curve = smape_curve(truth, pred)
    violations = np.nonzero(curve >= epsilon)[0]
    steps = int(violations[0]) if violations.size else len(curve)
    return steps * dt_lyap


def vpt_sustained(truth, pred, epsilon: float = 30.0, dt_lyap: float = 1.0 / 30.0) -> float:
    """Valid prediction time with the cumulative-sMAPE reading.

    The error statistic at horizon t is the sMAPE of the forecast so far
    (the mean of per-step sMAPE over horizons 1..t); the returned time is
    the first horizon at which it reaches ``epsilon``. Isolated one-step
    spikes (zero crossings) no longer end the forecast, so this reading
    tracks sustained degradation and matches the magnitudes of published
    threshold-based horizons.
    """
    if epsilon <= 0:
        raise InvalidArgumentError("epsilon must be positive")
    curve = smape_curve(truth, pred)
    running = np.cumsum(curve) / np.arange(1, len(curve) + 1)
    violations = np.nonzero(running >= epsilon)[0]
    steps = int(violations[0]) if violations.size else len(curve)
    return steps * dt_lyap


# ---------------------------------------------------------------------------
# correlation dimension (Grassberger-Procaccia)
# ---------------------------------------------------------------------------

def _pairwise_distances(points: np.ndarray, max_pairs: int, rng: np.random.Generator):
    n = len(points)
    total = n * (n - 1) // 2
    if total <= max_pairs:
        diffs = points[:, None, :] - points[None, :, :]
        dists = np.sqrt((diffs ** 2).sum(axis=-1))
        iu = np.triu_indices(n, k=1)
        return dists[iu]
    i = rng.integers(0, n, size=max_pairs)
    j = rng.integers(0, n - 1, size=max_pairs)
    j = np.where(j >= i, j + 1, j)  # uniform over off-diagonal pairs
    return np.sqrt(((points[i] - points[j]) ** 2).sum(axis=-1))


def correlation_dimension(points, cfg: MetricConfig = MetricConfig()) -> float:
    """Grassberger-Procaccia correlation dimension of a point cloud.

    The correlation sum C(r) (fraction of point pairs closer than r) is
    evaluated on a log-spaced radius grid between the configured percentiles
    of the pairwise-distance distribution, and the least-squares slope of
    log C versus log r over that window is returned. Pair counts are
    subsampled to cfg.gp_max_pairs for large N.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.ndim != 2:
        raise InvalidArgumentError("points must be an N x D matrix")
    n = len(points)
    if n < 50:
        raise InvalidArgumentError("correlation dimension needs at least 50 points")
    if not np.all(np.isfinite(points)):
        raise InvalidArgumentError("points must be finite")

    rng = np.random.default_rng(cfg.rng_seed)
    dists = _pairwise_distances(points, cfg.gp_max_pairs, rng)
    dmax = float(dists.max(initial=0.0))
    if dmax == 0.0:
        raise DegenerateGeometryError("all points identical; correlation sum is degenerate")

    lo, hi = np.percentile(dists[dists > 0], cfg.gp_radius_percentiles)
    if not (lo > 0) or not (hi > lo):
        raise DegenerateGeometryError("pairwise-distance percentiles give no scaling window")

    radii = np.exp(np.linspace(math.log(lo), math.log(hi), cfg.gp_n_radii))
    counts = np.searchsorted(np.sort(dists), radii, side="left")
    frac = counts / len(dists)

    ok = frac > 0
    if ok.sum() < 2:
        raise DegenerateGeometryError("too few populated radii for a slope fit")
    logr = np.log(radii[ok])
    logc = np.log(frac[ok])
    slope = float(np.polyfit(logr, logc, 1)[0])
    return slope


def d_frac_error(pred_clouds, reference_fractal_dim: float, cfg: MetricConfig = MetricConfig()) -> float:
    """RMSE of per-cloud correlation dimensions against a reference value.

    Degenerate clouds (no geometric extent) are scored as dimension 0.
    """
    clouds = list(pred_clouds)
    if not clouds:
        raise InvalidArgumentError("need at least one forecast cloud")
    errs = []
    for cloud in clouds:
        try:
            d = correlation_dimension(cloud, cfg)
        except DegenerateGeometryError:
            d = 0.0
        errs.append((d - reference_fractal_dim) ** 2)
    return float(math.sqrt(np.mean(errs)))


# ---------------------------------------------------------------------------
# attractor KL divergence and natural-measure density
# ---------------------------------------------------------------------------

@dataclass
class GaussianMixture:
    """Equal-weight isotropic Gaussian mixture with per-component bandwidth."""

    means: np.ndarray  # (T, D)
    sigmas: np.ndarray  # (T,)

    def log_density(self, queries: np.ndarray, chunk: int = 2048) -> np.ndarray:
        queries = np.atleast_2d(np.asarray(queries, dtype=float))
        t, d = self.means.shape
        out = np.empty(len(queries))
        log_norm = -0.5 * d * np.log(2 * math.pi * self.sigmas ** 2)
        for start in range(0, len(queries), chunk):
            q = queries[start : start + chunk]
            sq = ((q[:, None, :] - self.means[None, :, :]) ** 2).sum(axis=-1)
            log_comp = -0.5 * sq / self.sigmas[None, :] ** 2 + log_norm[None, :]
            out[start : start + chunk] = logsumexp(log_comp, axis=1) - math.log(t)
        return out

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        idx = rng.integers(0, len(self.means), size=n)
        noise = rng.standard_normal((n, self.means.shape[1]))
        return self.means[idx] + noise * self.sigmas[idx, None]


def build_mixture(traj_values, bandwidth_floor: float = 1e-12) -> GaussianMixture:
    """Gaussian mixture over trajectory points with step-length bandwidths.

    Each component's sigma is the distance to the previous sample (the first
    copies the second), which adapts the kernel to uneven point spacing.
    Bandwidths are floored at ``bandwidth_floor`` times the cloud extent so
    repeated points never produce a singular component.
    """
    pts = np.atleast_2d(np.asarray(traj_values, dtype=float))
    if len(pts) < 2:
        raise InvalidArgumentError("mixture needs at least 2 points")
    if not np.all(np.isfinite(pts)):
        raise InvalidArgumentError("mixture points must be finite")
    steps = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    sigmas = np.concatenate([[steps[0] if len(steps) else 0.0], steps])
    extent = float(np.max(pts.max(axis=0) - pts.min(axis=0)))
    floor = bandwidth_floor * extent if extent > 0 else bandwidth_floor
    floor = max(floor, 1e-300)
    sigmas = np.maximum(sigmas, floor)
    return GaussianMixture(means=pts, sigmas=sigmas)


def kl_mixtures(
    p: GaussianMixture, q: GaussianMixture, n_samples: int, rng_seed: int = 0
) -> tuple[float, float]:
    """Monte-Carlo KL divergence D(p || q) in nats, with its standard error.

    Draws from p (seeded) and averages log(p/q) with log-sum-exp density
    evaluation; bit-exactly reproducible for a fixed seed.
    """
    rng = np.random.default_rng(rng_seed)
    samples = p.sample(n_samples, rng)
    log_ratio = p.log_density(samples) - q.log_density(samples)
    if not np.all(np.isfinite(log_ratio)):
        raise NumericFailureError("non-finite density ratio; bandwidth floor misconfigured")
    est = float(log_ratio.mean())
    se = float(log_ratio.std(ddof=1) / math.sqrt(len(log_ratio)))
    return est, se


def kl_attractor(true_traj, pred_traj, cfg: MetricConfig = MetricConfig()) -> tuple[float, float]:
    """Monte-Carlo KL divergence between attractor density estimates (nats).

    Builds Gaussian mixtures p (truth) and q (prediction) with the
    step-length bandwidth rule and estimates D(p || q) from cfg.kl_mc_samples
    draws. Returns (estimate, MC standard error).
    """
    true_pts = np.atleast_2d(np.asarray(true_traj, dtype=float))
    pred_pts = np.atleast_2d(np.asarray(pred_traj, dtype=float))
    if true_pts.shape[1] != pred_pts.shape[1]:
        raise InvalidArgumentError("trajectories must share dimension")
    p = build_mixture(true_pts, cfg.kl_bandwidth_floor)
    q = build_mixture(pred_pts, cfg.kl_bandwidth_floor)
    return kl_mixtures(p, q, cfg.kl_mc_samples, cfg.rng_seed)


def natural_measure_density(attractor_points, query, cfg: MetricConfig = MetricConfig()) -> float:
    """Attractor density estimate at a query point.

    Evaluates the same Gaussian-mixture density used by kl_attractor; far
    queries may underflow to 0.0, which is the correct relative answer.
    """
    mix = build_mixture(attractor_points, cfg.kl_bandwidth_floor)
    return float(np.exp(mix.log_density(np.atleast_2d(np.asarray(query, dtype=float))))[0])


def log_natural_measure_density(attractor_points, query, cfg: MetricConfig = MetricConfig()) -> float:
    """Log of natural_measure_density; safe against underflow for ranking."""
    mix = build_mixture(attractor_points, cfg.kl_bandwidth_floor)
    return float(mix.log_density(np.atleast_2d(np.asarray(query, dtype=float)))[0])


# ---------------------------------------------------------------------------
# context overlap
# ---------------------------------------------------------------------------

def _window_pearson(windows: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Pearson correlation of each row window against the query (NaN where undefined)."""
    q = query - query.mean()
    qn = np.linalg.norm(q)
    w = windows - windows.mean(axis=1, keepdims=True)
    wn = np.linalg.norm(w, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = (w @ q) / (wn * qn)
    r[wn == 0] = np.nan
    if qn == 0:
        r[:] = np.nan
    return r


def context_overlap(context, min_len: int = 30) -> tuple[float, int]:
    """Max Pearson correlation of the final window against earlier windows.

    Windows have fixed length ``min_len``; candidate placements that overlap
    the final window are excluded. Returns (best correlation, offset of the
    best window). Raises UndefinedSimilarityError when the final window (or
    every candidate) has zero variance.
    """
    x = np.asarray(context, dtype=float).ravel()
    c = len(x)
    m = int(min_len)
    if m < 2:
        raise InvalidArgumentError("min_len must be >= 2")
    if c < 2 * m:
        raise InvalidArgumentError("context must be at least twice the window length")
    query = x[c - m :]
    if np.ptp(query) == 0:
        raise UndefinedSimilarityError("final window has zero variance")

    starts = np.arange(0, c - 2 * m + 1)
    windows = np.lib.stride_tricks.sliding_window_view(x, m)[starts]
    scores = _window_pearson(windows, query)
    if np.all(np.isnan(scores)):
        raise UndefinedSimilarityError("no candidate window has nonzero variance")
    best = int(np.nanargmax(scores))
    return float(scores[best]), best


# ---------------------------------------------------------------------------
# rank correlation
# ---------------------------------------------------------------------------

def _fractional_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values), dtype=float)
    ranks[order] = np.arange(1, len(values) + 1, dtype=float)
    # average ranks over ties
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        if j > i:
            ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(a, b) -> float:
    """Spearman rank-order correlation with average ranks for ties."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if len(a) != len(b):
        raise InvalidArgumentError("inputs must have equal length")
    if len(a) < 3:
        raise InvalidArgumentError("need at least 3 observations")
    ra, rb = _fractional_ranks(a), _fractional_ranks(b)
    sa, sb = ra.std(), rb.std()
    if sa == 0 or sb == 0:
        raise UndefinedCorrelationError("zero rank variance")
    return float(np.mean((ra - ra.mean()) * (rb - rb.mean())) / (sa * sb))


def spearman_permutation_pvalue(
    a, b, n_perm: int = 1000, rng_seed: int = 0, alternative: str = "greater"
) -> tuple[float, float]:
    """Spearman rho with a permutation p-value.

    ``alternative`` is 'greater', 'less', or 'two-sided'; the p-value uses
    the standard (1 + exceed) / (1 + n_perm) estimator.
    """
    rho = spearman(a, b)
    rng = np.random.default_rng(rng_seed)
    b = np.asarray(b, dtype=float).ravel()
    exceed = 0
    for _ in range(n_perm):
        rp = spearman(a, rng.permutation(b))
        if alternative == "greater":
            exceed += rp >= rho
        elif alternative == "less":
            exceed += rp <= rho
        else:
            exceed += abs(rp) >= abs(rho)
    return rho, (1 + exceed) / (1 + n_perm)
