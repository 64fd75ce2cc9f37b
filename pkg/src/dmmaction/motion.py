"""Dense optical flow between consecutive frames and motion-magnitude weighting.

Flow is estimated with Horn-Schunck: brightness constancy plus a
smoothness term, solved by fixed-point Jacobi iteration.  The magnitude
map is the squared flow magnitude g = ox^2 + oy^2, normalized per frame
pair by its maximum so it can weight motion-template accumulation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError

DEFAULT_ITERATIONS = 100
DEFAULT_SMOOTHNESS = 0.02

# Horn-Schunck neighborhood average: 8-connected, corners at half the
# weight of edge neighbors.
_AVG_WEIGHTS = (
    (1 / 12, 1 / 6, 1 / 12),
    (1 / 6, 0.0, 1 / 6),
    (1 / 12, 1 / 6, 1 / 12),
)


@dataclass(frozen=True)
class FlowField:
    """Per-pixel displacement in pixels/frame; ox horizontal, oy vertical."""

    ox: np.ndarray = field(repr=False)
    oy: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        if self.ox.shape != self.oy.shape:
            raise ContractError(
                f"flow components disagree: ox {self.ox.shape} vs oy {self.oy.shape}"
            )


@dataclass(frozen=True)
class MagnitudeMap:
    """Non-negative motion-energy grid; g in [0, 1] once normalized."""

    g: np.ndarray = field(repr=False)
    normalized: bool = False

    def __post_init__(self) -> None:
        if np.any(self.g < 0):
            raise ContractError("magnitude values must be non-negative")
        if self.normalized and np.any(self.g > 1.0):
            raise ContractError("normalized magnitudes must lie in [0, 1]")


def _neighbor_average(a: np.ndarray) -> np.ndarray:
    padded = np.pad(a, 1, mode="edge")
    h, w = a.shape
    out = np.zeros_like(a)
    for dy, row in enumerate(_AVG_WEIGHTS):
        for dx, weight in enumerate(row):
            if weight:
                out += weight * padded[dy : dy + h, dx : dx + w]
    return out


def _central_gradients(a: np.ndarray, b: np.ndarray):
    avg = 0.5 * (a + b)
    padded = np.pad(avg, 1, mode="edge")
    h, w = a.shape
    fx = 0.5 * (padded[1 : 1 + h, 2:] - padded[1 : 1 + h, :w])
    fy = 0.5 * (padded[2:, 1 : 1 + w] - padded[:h, 1 : 1 + w])
    ft = b - a
    return fx, fy, ft


def estimate_flow(
    a: np.ndarray,
    b: np.ndarray,
    iterations: int = DEFAULT_ITERATIONS,
    smoothness: float = DEFAULT_SMOOTHNESS,
) -> FlowField:
    """Horn-Schunck flow from frame a to frame b.

    Args:
        a, b: scalar frames of identical shape, at least 2x2.
        iterations: fixed Jacobi iteration count; output is deterministic
            given this and the regularizer.
        smoothness: regularization weight (enters the update as its square).

    Returns:
        FlowField with per-pixel (ox, oy) displacements.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"frame shapes differ: {a.shape} vs {b.shape}")
    if a.ndim != 2 or min(a.shape) < 2:
        raise ContractError(f"frames must be at least 2x2, got {a.shape}")
    fx, fy, ft = _central_gradients(a, b)
    denom = smoothness**2 + fx**2 + fy**2
    u = np.zeros_like(a)
    v = np.zeros_like(a)
    for _ in range(iterations):
        u_avg = _neighbor_average(u)
        v_avg = _neighbor_average(v)
        shared = (fx * u_avg + fy * v_avg + ft) / denom
        u = u_avg - fx * shared
        v = v_avg - fy * shared
    return FlowField(ox=u, oy=v)


def flow_magnitude(flow: FlowField) -> MagnitudeMap:
    """Squared flow magnitude g = ox^2 + oy^2 (no square root)."""
    return MagnitudeMap(g=flow.ox**2 + flow.oy**2, normalized=False)


def normalize_magnitude(m: MagnitudeMap, eps: float = 1e-12) -> MagnitudeMap:
    """Divide by the per-frame maximum; an all-zero map stays all-zero."""
    peak = float(np.max(m.g)) if m.g.size else 0.0
    if peak < eps:
        return MagnitudeMap(g=np.zeros_like(m.g), normalized=True)
    return MagnitudeMap(g=m.g / peak, normalized=True)
