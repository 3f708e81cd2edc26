"""System definition, integration, exponent, and resampling tests."""

import math

import numpy as np
import pytest

from chaosbench import systems
from chaosbench.errors import (
    IntegrationBlowupError,
    InvalidArgumentError,
    UpsamplingRefusedError,
)
from chaosbench.systems import (
    IntegratorConfig,
    SystemSpec,
    Trajectory,
    estimate_lyapunov,
    get_system,
    harmonic_oscillator_spec,
    integrate,
    registry,
    resample,
    sample_initial_conditions,
    vector_field,
)


# ---------------------------------------------------------------------------
# specs and registry
# ---------------------------------------------------------------------------

def test_registry_contents_and_invariants():
    reg = registry()
    assert "lorenz" in reg and len(reg) >= 10
    for spec in reg.values():
        assert spec.dim >= 1
        assert spec.lyapunov_exponent > 0
        assert spec.integration_dt > 0
        assert 0 < spec.reference_fractal_dim <= spec.dim
        assert spec.lyapunov_time * spec.lyapunov_exponent == pytest.approx(1.0, rel=1e-15)


def test_spec_validation_errors():
    lorenz = get_system("lorenz")
    with pytest.raises(InvalidArgumentError):
        SystemSpec(name="bad", dim=3, params={}, lyapunov_exponent=-1.0,
                   reference_fractal_dim=2.0, integration_dt=0.01, burn_in_time=1.0,
                   family="lorenz")
    with pytest.raises(InvalidArgumentError):
        SystemSpec(name="bad", dim=4, params=lorenz.params, lyapunov_exponent=1.0,
                   reference_fractal_dim=2.0, integration_dt=0.01, burn_in_time=1.0,
                   family="lorenz")
    with pytest.raises(InvalidArgumentError):
        SystemSpec(name="bad", dim=3, params={}, lyapunov_exponent=1.0,
                   reference_fractal_dim=5.0, integration_dt=0.01, burn_in_time=1.0,
                   family="lorenz")


# ---------------------------------------------------------------------------
# vector fields
# ---------------------------------------------------------------------------

def test_lorenz_vector_field_values():
    spec = get_system("lorenz")
    assert np.allclose(vector_field(spec, [0.0, 0.0, 0.0]), [0.0, 0.0, 0.0])
    assert np.allclose(vector_field(spec, [1.0, 1.0, 1.0]), [0.0, 26.0, -5.0 / 3.0])
    assert np.allclose(vector_field(spec, [1.0, 2.0, 3.0]), [10.0, 23.0, -6.0])


def test_vector_field_pure_and_validated():
    spec = get_system("lorenz")
    state = np.array([0.3, -1.2, 7.7])
    a = vector_field(spec, state)
    b = vector_field(spec, state)
    assert np.array_equal(a, b)
    with pytest.raises(InvalidArgumentError):
        vector_field(spec, [1.0, 2.0])


# ---------------------------------------------------------------------------
# integration
# ---------------------------------------------------------------------------

def test_integrate_zero_duration_identity():
    spec = get_system("lorenz")
    traj = integrate(spec, [1.0, 1.0, 1.0], 0.0)
    assert traj.values.shape == (1, 3)
    assert np.array_equal(traj.values[0], [1.0, 1.0, 1.0])


def test_integrate_starts_at_x0_and_uniform_grid():
    spec = get_system("lorenz")
    traj = integrate(spec, [1.0, 1.0, 1.0], 1.0)
    assert np.array_equal(traj.values[0], [1.0, 1.0, 1.0])
    assert traj.dt_time == spec.integration_dt
    assert np.all(np.isfinite(traj.values))


def test_integrate_self_convergence_monotone():
    # sub-Lyapunov horizon: halving tolerances shrinks the endpoint shift
    spec = get_system("lorenz")
    x0 = np.array([1.0, 1.0, 1.0])
    tols = [1e-6 / 2**i for i in range(4)]
    ends = [
        integrate(spec, x0, 1.0, IntegratorConfig(rel_tol=t, abs_tol=t * 1e-3)).values[-1]
        for t in tols
    ]
    diffs = [np.linalg.norm(a - b) for a, b in zip(ends, ends[1:])]
    assert diffs[0] > diffs[1] > diffs[2]


def test_integrate_against_tight_reference():
    spec = get_system("lorenz")
    x0 = np.array([1.0, 1.0, 1.0])
    base_tol = 1e-8
    run = integrate(spec, x0, 1.0, IntegratorConfig(rel_tol=base_tol / 2, abs_tol=1e-12))
    ref = integrate(spec, x0, 1.0, IntegratorConfig(rel_tol=base_tol / 100, abs_tol=1e-14))
    err = np.linalg.norm(run.values[-1] - ref.values[-1])
    scale = np.linalg.norm(ref.values[-1])
    assert err < 10 * base_tol * scale


def test_harmonic_oscillator_energy_conservation():
    # closed-form circular orbit: x^2 + y^2 is conserved over 100 periods
    spec = harmonic_oscillator_spec(omega=1.0)
    traj = integrate(spec, [1.0, 0.0], 100 * 2 * math.pi)
    energy = (traj.values**2).sum(axis=1)
    assert np.max(np.abs(energy - 1.0)) < 1e-6


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_integrate_blowup_carries_last_valid_time():
    spec = SystemSpec(
        name="unstable", dim=3, params={"a": 50.0, "b": 0.0, "c": 0.0},
        lyapunov_exponent=1.0, reference_fractal_dim=2.0,
        integration_dt=0.05, burn_in_time=0.0, family="four_wing",
    )
    with pytest.raises(IntegrationBlowupError) as err:
        integrate(spec, [10.0, 0.0, 0.0], 20.0)
    assert 0.0 < err.value.last_valid_time < 20.0


def test_fixed_rk4_scheme_agrees():
    spec = harmonic_oscillator_spec()
    cfg = IntegratorConfig(scheme="fixed_rk4")
    traj = integrate(spec, [1.0, 0.0], 10.0, cfg)
    ref = integrate(spec, [1.0, 0.0], 10.0)
    assert np.allclose(traj.values[-1], ref.values[-1], atol=1e-5)


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

def _raw_traj(values, dt_time, lam=1.0):
    return Trajectory(values, dt_lyap=dt_time * lam, dt_time=dt_time)


def test_resample_integer_decimation_is_exact():
    rng = np.random.default_rng(0)
    values = rng.normal(size=(101, 3)).cumsum(axis=0)
    raw = _raw_traj(values, dt_time=1.0 / 300.0)
    out = resample(raw, 1.0, 30)
    assert out.dt_lyap == pytest.approx(1.0 / 30.0)
    assert np.array_equal(out.values, values[::10][: len(out)])


def test_resample_paper_length_contract():
    # a 27.07-Lyapunov-time span at 30 points per Lyapunov time -> 812 rows
    lam = 0.9
    dt_time = 1.0 / (300.0 * lam)
    n_raw = int(round(27.07 * 300)) + 1
    values = np.zeros((n_raw, 1))
    raw = _raw_traj(values, dt_time=dt_time, lam=lam)
    out = resample(raw, lam, 30)
    assert len(out) == 812


def test_resample_constant_stays_constant():
    values = np.full((500, 2), 3.25)
    raw = _raw_traj(values, dt_time=0.007)
    out = resample(raw, 1.0, 30)
    assert np.all(out.values == 3.25)


def test_resample_refuses_upsampling():
    raw = _raw_traj(np.zeros((100, 1)), dt_time=0.5)
    with pytest.raises(UpsamplingRefusedError):
        resample(raw, 1.0, 30)


def test_resample_idempotent_second_pass():
    rng = np.random.default_rng(1)
    raw = _raw_traj(rng.normal(size=(600, 2)).cumsum(axis=0), dt_time=1.0 / 90.0)
    once = resample(raw, 1.0, 30)
    twice = resample(once, 1.0, 30)
    assert np.array_equal(once.values[: len(twice)], twice.values)
    assert len(once) - len(twice) <= 1


def test_resample_cubic_path_recovers_smooth_signal():
    # off-grid ratio exercises the interpolation branch
    t = np.arange(0, 1000) * 0.0123
    values = np.stack([np.sin(t), np.cos(t)], axis=1)
    raw = _raw_traj(values, dt_time=0.0123)
    out = resample(raw, 1.0, 30)
    expect = np.sin(out.times)
    assert np.max(np.abs(out.values[:, 0] - expect)) < 1e-6


# ---------------------------------------------------------------------------
# Lyapunov exponents
# ---------------------------------------------------------------------------

def test_lorenz_lyapunov_estimate():
    spec = get_system("lorenz")
    lam, se = estimate_lyapunov(spec, horizon=400.0, rng_seed=7)
    assert lam == pytest.approx(0.9, abs=0.08)
    assert se < 0.05


def test_harmonic_oscillator_zero_exponent():
    spec = harmonic_oscillator_spec()
    lam, _ = estimate_lyapunov(spec, horizon=150.0, rng_seed=7)
    assert abs(lam) < 0.01


def test_stable_lorenz_negative_exponent():
    spec = get_system("lorenz").with_params(rho=0.5)
    lam, _ = estimate_lyapunov(spec, horizon=150.0, rng_seed=7, renorm_interval=0.5)
    assert lam < 0


def test_lyapunov_deterministic_given_seed():
    spec = harmonic_oscillator_spec()
    a = estimate_lyapunov(spec, horizon=120.0, rng_seed=3)
    b = estimate_lyapunov(spec, horizon=120.0, rng_seed=3)
    assert a == b


def test_lyapunov_horizon_precondition():
    spec = get_system("lorenz")
    with pytest.raises(InvalidArgumentError):
        estimate_lyapunov(spec, horizon=5.0)


# ---------------------------------------------------------------------------
# initial conditions
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def lorenz_ics():
    spec = get_system("lorenz")
    return sample_initial_conditions(spec, n=20, rng_seed=42)


def test_initial_conditions_distinct(lorenz_ics):
    states = lorenz_ics
    assert states.shape == (20, 3)
    dists = np.linalg.norm(states[:, None, :] - states[None, :, :], axis=-1)
    iu = np.triu_indices(20, k=1)
    assert np.all(dists[iu] > 0)


def test_initial_conditions_deterministic():
    spec = get_system("lorenz")
    a = sample_initial_conditions(spec, n=3, rng_seed=5)
    b = sample_initial_conditions(spec, n=3, rng_seed=5)
    assert np.array_equal(a, b)


def test_initial_conditions_on_attractor(lorenz_ics):
    # bounding-box oracle from a long reference orbit, inflated by 5%
    spec = get_system("lorenz")
    ref = integrate(spec, np.asarray(spec.seed_point), 100.0)
    lo, hi = ref.values.min(axis=0), ref.values.max(axis=0)
    pad = 0.05 * (hi - lo)
    assert np.all(lorenz_ics >= lo - pad) and np.all(lorenz_ics <= hi + pad)
