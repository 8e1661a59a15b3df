"""Decoherent batches: partition a configuration continuum into independent ready branches.

The detector (or atom) coordinate u is split into contiguous batches.  Batch a
captures object amplitude at x with rate

    gamma_a(x) = integral over batch a of k(x, u) w(u) du

where k is the capture kernel and w the detector occupancy.  All batches of
one extent are integrated on the same node set using the exact integral of the
piecewise-linear interpolant in u, so batch gammas telescope: any refinement or
coarsening of the partition leaves sum_a gamma_a unchanged up to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

from .errors import ArgumentError
from .wave_dynamics import CaptureChannel, Grid1D


@dataclass(frozen=True)
class BatchPartition:
    boundaries: tuple[float, ...]
    axis: str = "detector"

    def __post_init__(self):
        b = tuple(float(v) for v in self.boundaries)
        if len(b) < 2:
            raise ArgumentError("a partition needs at least two boundaries")
        if any(hi <= lo for lo, hi in zip(b, b[1:])):
            raise ArgumentError(f"partition boundaries must be strictly increasing: {b}")
        object.__setattr__(self, "boundaries", b)

    @property
    def n_batches(self) -> int:
        return len(self.boundaries) - 1

    @property
    def extent(self) -> tuple[float, float]:
        return self.boundaries[0], self.boundaries[-1]

    def intervals(self) -> list[tuple[float, float]]:
        return list(zip(self.boundaries, self.boundaries[1:]))


def partition_batches(extent: tuple[float, float], spec: int | Sequence[float], axis: str = "detector") -> BatchPartition:
    """Uniform partition into ``spec`` batches, or explicit boundaries spanning ``extent``."""
    lo, hi = float(extent[0]), float(extent[1])
    if not hi > lo:
        raise ArgumentError(f"empty extent [{lo}, {hi}]")
    if isinstance(spec, (int, np.integer)):
        if spec < 1:
            raise ArgumentError("batch count must be >= 1")
        bounds = np.linspace(lo, hi, int(spec) + 1)
        bounds[0], bounds[-1] = lo, hi
        return BatchPartition(tuple(bounds), axis)
    bounds = tuple(float(v) for v in spec)
    part = BatchPartition(bounds, axis)
    if part.extent != (lo, hi):
        raise ArgumentError(f"boundaries {bounds} do not cover extent [{lo}, {hi}]")
    return part


class GaussianKernel:
    """g * exp(-(x-u)^2 / 2 lam^2) / Z, cut off at |x-u| <= cutoff * lam.

    Z normalizes the truncated window to unit area, so g is a capture rate.
    """

    def __init__(self, rate: float, width: float, cutoff: float = 3.0):
        if rate < 0 or width <= 0 or cutoff <= 0:
            raise ArgumentError("kernel needs rate >= 0, width > 0, cutoff > 0")
        self.rate = float(rate)
        self.width = float(width)
        self.cutoff = float(cutoff)
        self._norm = np.sqrt(2 * np.pi) * width * erf(cutoff / np.sqrt(2))

    @property
    def reach(self) -> float:
        return self.cutoff * self.width

    def __call__(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        d = x - u
        out = self.rate * np.exp(-0.5 * (d / self.width) ** 2) / self._norm
        return np.where(np.abs(d) <= self.reach, out, 0.0)


def uniform_occupancy(u: np.ndarray) -> np.ndarray:
    return np.ones_like(u)


def gaussian_occupancy(center: float, width: float) -> Callable[[np.ndarray], np.ndarray]:
    if width <= 0:
        raise ArgumentError("occupancy width must be positive")
    return lambda u: np.exp(-0.5 * ((u - center) / width) ** 2)


@dataclass(frozen=True, eq=False)
class BatchChannelSet:
    partition: BatchPartition
    channels: tuple[CaptureChannel, ...]
    kernel: object
    full_gamma: np.ndarray  # sum over the whole extent, for the partition-of-unity check


def _node_spacing(grid: Grid1D, kernel) -> float:
    h = grid.dx / 2
    width = getattr(kernel, "width", None)
    if width is not None:
        h = min(h, width / 8)
    return h


def _linear_antiderivative(f: np.ndarray, u: np.ndarray, points: Sequence[float]) -> np.ndarray:
    """Integral from u[0] to each point of the linear interpolant of f (rows) on nodes u."""
    h = np.diff(u)
    cum = np.concatenate([np.zeros((f.shape[0], 1)), np.cumsum(0.5 * (f[:, 1:] + f[:, :-1]) * h, axis=1)], axis=1)
    out = np.empty((f.shape[0], len(points)))
    for k, p in enumerate(points):
        j = int(np.clip(np.searchsorted(u, p, side="right") - 1, 0, u.size - 2))
        tau = p - u[j]
        fp = f[:, j] + (f[:, j + 1] - f[:, j]) * (tau / h[j])
        out[:, k] = cum[:, j] + 0.5 * tau * (f[:, j] + fp)
    return out


def build_batch_channels(partition: BatchPartition, kernel, detector_density, grid: Grid1D,
                         targets: Sequence[str] | None = None, labels: Sequence[str] | None = None) -> BatchChannelSet:
    """One capture channel per batch of ``partition``."""
    lo, hi = partition.extent
    h = _node_spacing(grid, kernel)
    m = max(int(np.ceil((hi - lo) / h)), 1) + 1
    u = np.linspace(lo, hi, m)
    w = np.asarray(detector_density(u), dtype=float)
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ArgumentError("detector density must be finite and >= 0")
    if not np.trapezoid(w, u) > 0:
        raise ArgumentError("detector density has zero total mass")
    x = grid.x
    k = np.asarray(kernel(x[:, None], u[None, :]), dtype=float)
    if np.any(k < 0) or not np.all(np.isfinite(k)):
        raise ArgumentError("capture kernel must be finite and >= 0")
    F = _linear_antiderivative(k * w[None, :], u, partition.boundaries)
    gammas = np.clip(np.diff(F, axis=1), 0.0, None)
    targets = list(targets) if targets is not None else [f"batch{a + 1}" for a in range(partition.n_batches)]
    labels = list(labels) if labels is not None else targets
    channels = tuple(CaptureChannel(t, gammas[:, a], grid, lab) for a, (t, lab) in enumerate(zip(targets, labels)))
    return BatchChannelSet(partition, channels, kernel, F[:, -1] - F[:, 0])


def build_indicator_channels(partition: BatchPartition, rate: float, grid: Grid1D,
                             targets: Sequence[str] | None = None) -> tuple[CaptureChannel, ...]:
    """Sharp batches on the object axis: gamma_a = rate on batch a, zero elsewhere."""
    if rate < 0:
        raise ArgumentError("rate must be >= 0")
    targets = list(targets) if targets is not None else [f"batch{a + 1}" for a in range(partition.n_batches)]
    out = []
    intervals = partition.intervals()
    for a, ((lo, hi), t) in enumerate(zip(intervals, targets)):
        mask = grid.mask(lo, hi)
        if a == len(intervals) - 1:
            mask |= np.isclose(grid.x, hi, rtol=0, atol=1e-9 * grid.dx)
        out.append(CaptureChannel(t, rate * mask, grid, t))
    return tuple(out)


def merge_channels(a: CaptureChannel, b: CaptureChannel, target: str | None = None) -> CaptureChannel:
    return CaptureChannel(target or a.target, a.gamma + b.gamma, a.grid, target or f"{a.label}+{b.label}")
