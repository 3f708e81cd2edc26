"""chaosbench: a forecasting benchmark harness for chaotic dynamical systems.

The package integrates a registry of chaotic flows, forecasts them with
zero-shot (context-parroting) and trained (NVAR, naive) models under
channel-independent partial observation, and scores short-term accuracy and
long-term attractor reconstruction. External models attach as black boxes
through a stdio adapter protocol (see docs/adapter_protocol.md).
"""

__version__ = "0.1.0"
