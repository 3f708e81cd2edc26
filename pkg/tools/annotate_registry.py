#!/usr/bin/env python3
"""Re-annotate the built-in system registry with measured invariants.

For each candidate system this script
  1. burns in the provisional seed point for 50 Lyapunov times (provisional
     timescale) and freezes the endpoint as the canonical seed point,
  2. measures the largest Lyapunov exponent with the Benettin renormalization
     estimator over a 2000-Lyapunov-time orbit,
  3. integrates a 50k-point orbit at 30 points per (measured) Lyapunov time
     and measures the correlation dimension,
  4. emits a ready-to-paste YAML document with integration_dt = tau/300 and
     burn_in_time = 20*tau derived from the measured exponent.

Run from the repo root:  python3 tools/annotate_registry.py [names...]
"""

import sys
import time

import numpy as np

from chaosbench import systems
from chaosbench.metrics import MetricConfig, correlation_dimension

CANDIDATES = {
    "lorenz": dict(family="lorenz", params={"sigma": 10.0, "rho": 28.0, "beta": 8.0 / 3.0},
                   tau_guess=1.1, seed=[1.0, 1.0, 1.0],
                   notes="classic Lorenz flow; published largest exponent ~0.906"),
    "rossler": dict(family="rossler", params={"a": 0.2, "b": 0.2, "c": 5.7},
                    tau_guess=14.0, seed=[1.0, 1.0, 0.0],
                    notes="Roessler band attractor"),
    "chen": dict(family="chen", params={"a": 35.0, "b": 3.0, "c": 28.0},
                 tau_guess=0.5, seed=[-3.0, 2.0, 20.0],
                 notes="Chen double-scroll"),
    "halvorsen": dict(family="halvorsen", params={"a": 1.4},
                      tau_guess=1.5, seed=[-5.0, 0.0, 0.0],
                      notes="cyclically symmetric Halvorsen flow"),
    "thomas": dict(family="thomas", params={"b": 0.208186},
                   tau_guess=25.0, seed=[0.1, 1.1, -0.1],
                   notes="Thomas cyclically symmetric attractor"),
    "rucklidge": dict(family="rucklidge", params={"kappa": 2.0, "lam": 6.7},
                      tau_guess=5.0, seed=[1.0, 0.0, 4.5],
                      notes="Rucklidge convection model"),
    "sprott_b": dict(family="sprott_b", params={},
                     tau_guess=5.0, seed=[1.0, 1.0, 1.0],
                     notes="Sprott case B"),
    "dadras": dict(family="dadras", params={"a": 3.0, "b": 2.7, "c": 1.7, "d": 2.0, "e": 9.0},
                   tau_guess=2.5, seed=[1.0, 1.0, 1.0],
                   notes="Dadras-Momeni four-wing-like flow"),
    "lu": dict(family="lu", params={"a": 36.0, "b": 3.0, "c": 20.0},
               tau_guess=0.8, seed=[-5.0, -5.0, 15.0],
               notes="Lu-Chen transition system"),
    "four_wing": dict(family="four_wing", params={"a": 0.2, "b": 0.01, "c": -0.4},
                      tau_guess=9.0, seed=[1.0, 1.0, 1.0],
                      notes="four-wing attractor"),
    "arneodo": dict(family="arneodo", params={"a": -5.5, "b": 3.5, "c": 1.0, "d": -1.0},
                    tau_guess=4.0, seed=[0.2, 0.2, 0.2],
                    notes="Arneodo-Coullet cubic flow"),
}


def annotate(name, cand):
    t_start = time.time()
    tau_guess = cand["tau_guess"]
    spec0 = systems.SystemSpec(
        name=name, dim=3, params=cand["params"],
        lyapunov_exponent=1.0 / tau_guess, reference_fractal_dim=2.0,
        integration_dt=tau_guess / 300.0, burn_in_time=50.0 * tau_guess,
        family=cand["family"], seed_point=tuple(cand["seed"]),
    )
    burn = systems.integrate(spec0, np.array(cand["seed"]), 50.0 * tau_guess)
    seed_point = burn.values[-1]

    spec1 = systems.SystemSpec(
        name=name, dim=3, params=cand["params"],
        lyapunov_exponent=1.0 / tau_guess, reference_fractal_dim=2.0,
        integration_dt=tau_guess / 300.0, burn_in_time=20.0 * tau_guess,
        family=cand["family"], seed_point=tuple(seed_point),
    )
    lam, se = systems.estimate_lyapunov(spec1, horizon=2000.0 * tau_guess, rng_seed=1234)
    if lam < 0.05 / tau_guess:
        raise RuntimeError(f"{name} not usably chaotic: lambda={lam:.5f}")
    tau = 1.0 / lam

    spec2 = systems.SystemSpec(
        name=name, dim=3, params=cand["params"],
        lyapunov_exponent=lam, reference_fractal_dim=2.0,
        integration_dt=tau / 300.0, burn_in_time=20.0 * tau,
        family=cand["family"], seed_point=tuple(seed_point),
    )
    n_points = 50_000
    raw = systems.integrate(spec2, seed_point, n_points / (30.0 * lam) + spec2.integration_dt)
    res = systems.resample(raw, lam, 30)
    dim = correlation_dimension(res.values, MetricConfig(rng_seed=7))

    elapsed = time.time() - t_start
    print(f"# {name}: lambda={lam:.5f} +- {se:.5f}, d_frac={dim:.4f}, "
          f"orbit={len(res)} pts, {elapsed:.0f}s", flush=True)
    print("---")
    print(f"name: {name}")
    print(f"family: {cand['family']}")
    print("dim: 3")
    params = ", ".join(f"{k}: {v!r}" for k, v in cand["params"].items())
    print(f"params: {{{params}}}")
    print(f"lyapunov_exponent: {lam:.5f}")
    print(f"reference_fractal_dim: {dim:.4f}")
    print(f"integration_dt: {tau / 300.0:.6g}")
    print(f"burn_in_time: {20.0 * tau:.6g}")
    print(f"seed_point: [{', '.join(f'{v:.6f}' for v in seed_point)}]")
    print(f'notes: "{cand["notes"]}; annotations measured by tools/annotate_registry.py"',
          flush=True)


def main():
    names = sys.argv[1:] or list(CANDIDATES)
    for name in names:
        try:
            annotate(name, CANDIDATES[name])
        except Exception as exc:  # keep going; report at the end
            print(f"# {name}: FAILED: {type(exc).__name__}: {exc}", flush=True)


if __name__ == "__main__":
    main()
