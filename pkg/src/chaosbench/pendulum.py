"""Double-pendulum experiment ingestion.

The source data is a 400 fps tracked-centroid series: pixel coordinates of
the pivot (wall attachment), the hinge between the arms, and the tip of the
second arm. Ingestion converts these to arm angles against the vertical,
unwraps them, differentiates to angular velocities, and downsamples by 3.

Angle convention (documented because pixel coordinate systems vary): with
image coordinates (x right, y down), an arm hanging straight down is at
angle 0 and angles increase counterclockwise; units are radians, velocities
radians per second. All benchmark metrics are invariant to this choice.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .systems import Trajectory

__all__ = ["PendulumRaw", "ingest_pendulum", "load_pendulum_csv", "DEFAULT_FPS", "DECIMATION"]

DEFAULT_FPS = 400.0
DECIMATION = 3


@dataclass
class PendulumRaw:
    """Per-frame tracked centroid coordinates (pixels)."""

    pivot: np.ndarray  # (N, 2)
    hinge: np.ndarray  # (N, 2)
    tip: np.ndarray  # (N, 2)
    fps: float = DEFAULT_FPS

    def __post_init__(self):
        self.pivot = np.asarray(self.pivot, dtype=float)
        self.hinge = np.asarray(self.hinge, dtype=float)
        self.tip = np.asarray(self.tip, dtype=float)
        shapes = {self.pivot.shape, self.hinge.shape, self.tip.shape}
        if len(shapes) != 1 or self.pivot.ndim != 2 or self.pivot.shape[1] != 2:
            raise InvalidArgumentError("pivot/hinge/tip must share shape (N, 2)")
        if len(self.pivot) < 2:
            raise InvalidArgumentError("need at least 2 frames")
        if not (self.fps > 0):
            raise InvalidArgumentError("fps must be positive")

    def __len__(self) -> int:
        return len(self.pivot)


def _arm_angle(tail: np.ndarray, head: np.ndarray, name: str) -> np.ndarray:
    """Unwrapped angle of the arm tail->head against screen-down vertical."""
    delta = head - tail
    degenerate = np.all(delta == 0, axis=1)
    if degenerate.any():
        frame = int(np.argmax(degenerate))
        raise InvalidArgumentError(
            f"degenerate frame {frame}: {name} arm endpoints coincide"
        )
    # y grows downward in pixel coordinates: atan2(dx, dy) is 0 pointing down,
    # positive counterclockwise
    return np.unwrap(np.arctan2(delta[:, 0], delta[:, 1]))


def ingest_pendulum(raw: PendulumRaw, lyapunov_exponent: float | None = None) -> Trajectory:
    """Convert tracked centroids to a (theta1, theta2, dtheta1, dtheta2) series.

    Angular velocities come from central differences at the native frame
    rate; the series is then decimated by 3, keeping frames 1, 4, 7, ... so
    every kept sample has a full central-difference stencil. Output length is
    floor(frames / 3).

    ``lyapunov_exponent`` (1/second), when provided, expresses the output
    grid in Lyapunov-time units; otherwise the grid is in seconds.
    """
    theta1 = _arm_angle(raw.pivot, raw.hinge, "first")
    theta2 = _arm_angle(raw.hinge, raw.tip, "second")
    n = len(raw)
    if n < 3:
        raise InvalidArgumentError("need at least 3 frames for central differences")

    def central(angles):
        return (angles[2:] - angles[:-2]) * (raw.fps / 2.0)

    keep = np.arange(1, n - 1, DECIMATION)  # indices with full stencils
    state = np.stack(
        [
            theta1[keep],
            theta2[keep],
            central(theta1)[keep - 1],
            central(theta2)[keep - 1],
        ],
        axis=1,
    )
    dt_seconds = DECIMATION / raw.fps
    lam = lyapunov_exponent if lyapunov_exponent else 1.0
    return Trajectory(state, dt_lyap=dt_seconds * lam, dt_time=dt_seconds)


def load_pendulum_csv(path, fps: float = DEFAULT_FPS) -> PendulumRaw:
    """Read a tracked-centroid CSV.

    Expected columns: pivot_x, pivot_y, hinge_x, hinge_y, tip_x, tip_y
    (header required; extra columns such as frame ids are ignored).
    """
    with open(path, "r", encoding="utf-8") as fh:
        header = [h.strip() for h in fh.readline().strip().split(",")]
        cols = {}
        for name in ("pivot_x", "pivot_y", "hinge_x", "hinge_y", "tip_x", "tip_y"):
            if name not in header:
                raise InvalidArgumentError(f"{path} missing column {name!r}")
            cols[name] = header.index(name)
        rows = []
        for line in fh:
            if line.strip():
                rows.append([float(v) for v in line.strip().split(",")])
    data = np.asarray(rows)
    if len(data) < 2:
        raise InvalidArgumentError("need at least 2 frames")
    return PendulumRaw(
        pivot=data[:, [cols["pivot_x"], cols["pivot_y"]]],
        hinge=data[:, [cols["hinge_x"], cols["hinge_y"]]],
        tip=data[:, [cols["tip_x"], cols["tip_y"]]],
        fps=fps,
    )
