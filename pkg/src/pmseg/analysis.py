"""Post-chain analytics: Dice scores, confidence maps, class histograms,
timing tables, and the exact toy posterior used to verify the sampler.

Everything here is pure post-processing over immutable sample lists, safe
to call from multiple threads.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .geometry import BinaryMask
from .sampler import SampleRecord
from .shape_prior import TrainingSet, log_prior_full

TIMING_MODES = ("subsampled", "full")


def dice(a: BinaryMask, b: BinaryMask) -> float:
    """Dice overlap 2|a n b| / (|a| + |b|); two empty masks give 1.0.

    The empty-empty convention reads the score as identity of masks, so a
    pair of identical masks is always a perfect match.
    """
    if (a.height, a.width) != (b.height, b.width):
        raise ValueError(
            f"mask dimensions differ: {a.height}x{a.width} vs {b.height}x{b.width}"
        )
    inter = int(np.sum(a.data & b.data))
    total = int(a.data.sum()) + int(b.data.sum())
    if total == 0:
        return 1.0
    return 2.0 * inter / total


@dataclass(frozen=True)
class ConfidenceMap:
    """Per-pixel inclusion frequency over a set of samples, values in [0, 1]."""

    height: int
    width: int
    data: np.ndarray
    n_samples: int

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.shape != (self.height * self.width,):
            raise ValueError("confidence data length does not match dimensions")
        object.__setattr__(self, "data", data)

    def grid(self) -> np.ndarray:
        return self.data.reshape(self.height, self.width)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.data, dtype=dtype)


def confidence_map(
    samples: list[SampleRecord], class_filter: int | None = None
) -> ConfidenceMap:
    """Mean of mask indicators over samples, optionally for one class only.

    Values are exact rationals k/n where k counts the samples whose mask
    contains the pixel, so repeating every sample the same number of times
    leaves the map unchanged.
    """
    if class_filter is not None:
        samples = [r for r in samples if r.s == class_filter]
        if not samples:
            raise ValueError(f"no samples of class {class_filter}")
    if not samples:
        raise ValueError("need at least one sample")
    first = samples[0].mask
    acc = np.zeros(first.height * first.width, dtype=np.float64)
    for r in samples:
        acc += r.mask.data
    return ConfidenceMap(
        height=first.height,
        width=first.width,
        data=acc / len(samples),
        n_samples=len(samples),
    )


def class_histogram(samples: list[SampleRecord]) -> dict[int, int]:
    """Count of samples per visited class; counts sum to len(samples)."""
    if not samples:
        raise ValueError("need at least one sample")
    counts: dict[int, int] = defaultdict(int)
    for r in samples:
        counts[r.s] += 1
    return dict(sorted(counts.items()))


@dataclass(frozen=True)
class GridSpec:
    """Quadrature grid: per-dimension (lo, hi) bounds and cells per dimension."""

    bounds: tuple[tuple[float, float], ...]
    bins: int

    def __post_init__(self):
        if not 1 <= len(self.bounds) <= 2:
            raise ValueError("grid supports 1 or 2 dimensions only")
        if self.bins < 1:
            raise ValueError("bins must be >= 1")
        for lo, hi in self.bounds:
            if not lo < hi:
                raise ValueError(f"empty bound ({lo}, {hi})")

    def edges(self, dim: int = 0) -> np.ndarray:
        lo, hi = self.bounds[dim]
        return np.linspace(lo, hi, self.bins + 1)


@dataclass(frozen=True)
class ToyPosteriorOracle:
    """Exact posterior masses per (class, grid cell), normalized over the box.

    masses has shape (n_classes, bins) in one dimension or
    (n_classes, bins, bins) in two; it sums to 1.
    """

    grid: GridSpec
    masses: np.ndarray
    log_normalizer: float

    def __post_init__(self):
        masses = np.asarray(self.masses, dtype=np.float64)
        masses.setflags(write=False)
        object.__setattr__(self, "masses", masses)

    def x_marginal(self) -> np.ndarray:
        return self.masses.sum(axis=0)

    def class_masses(self) -> np.ndarray:
        return self.masses.reshape(self.masses.shape[0], -1).sum(axis=1)


def toy_exact_posterior(
    train: TrainingSet, likelihood, grid: GridSpec, order: int = 12
) -> ToyPosteriorOracle:
    """Quadrature of p(s) p(x|s) p(y|x) over the grid, normalized.

    Per-cell Gauss-Legendre quadrature of the given order; the prior factor
    is evaluated through log_prior_full so the oracle shares no code with the
    subsampled estimator it is used to check. Supports level-set spaces of
    one or two dimensions; anything larger is a quadrature blow-up and is
    rejected.
    """
    d = train.dim
    if d > 2:
        raise ValueError(f"toy oracle supports dimensions 1 and 2 only, got {d}")
    if len(grid.bounds) != d:
        raise ValueError(
            f"grid has {len(grid.bounds)} dimensions but shapes have {d}"
        )
    n = train.n_classes
    nb = grid.bins
    t, w = np.polynomial.legendre.leggauss(order)

    per_axis = []
    for dim in range(d):
        edges = grid.edges(dim)
        half = 0.5 * (edges[1] - edges[0])
        mid = 0.5 * (edges[:-1] + edges[1:])
        nodes = (mid[:, None] + half * t[None, :]).ravel()
        weights = np.broadcast_to(half * w[None, :], (nb, order)).ravel()
        per_axis.append((nodes, weights))

    if d == 1:
        pts = per_axis[0][0][:, None]
        wts = per_axis[0][1]
    else:
        a_nodes, a_wts = per_axis[0]
        b_nodes, b_wts = per_axis[1]
        pts = np.column_stack(
            [np.repeat(a_nodes, b_nodes.size), np.tile(b_nodes, a_nodes.size)]
        )
        wts = np.repeat(a_wts, b_wts.size) * np.tile(b_wts, a_wts.size)

    log_lik = np.array([float(likelihood.log_density(p)) for p in pts])
    log_ps = -math.log(n)
    logf = np.empty((n, pts.shape[0]))
    for s in range(n):
        logf[s] = log_ps + log_lik
        logf[s] += np.array([log_prior_full(p, s, train) for p in pts])

    # factor out the max before exponentiating so tiny bandwidths cannot
    # overflow; the offset is restored in the normalizer
    peak = float(logf.max())
    contrib = wts[None, :] * np.exp(logf - peak)
    if d == 1:
        raw = contrib.reshape(n, nb, order).sum(axis=2)
    else:
        raw = contrib.reshape(n, nb, order, nb, order).sum(axis=(2, 4))
    total = float(raw.sum())
    return ToyPosteriorOracle(
        grid=grid, masses=raw / total, log_normalizer=peak + math.log(total)
    )


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    """Total variation distance between two mass vectors of the same shape.

    Mass missing from either vector (for example samples that fell outside
    the histogram box) is treated as living in one shared overflow cell, so
    the distance stays honest when the vectors do not sum to the same total.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {q.shape}")
    if (p < 0).any() or (q < 0).any():
        raise ValueError("mass vectors must be nonnegative")
    return 0.5 * (float(np.abs(p - q).sum()) + abs(float(p.sum()) - float(q.sum())))


@dataclass(frozen=True)
class TimingRun:
    """One chain's wall-clock result: per-sample seconds at a training size."""

    training_size: int
    mode: str
    seconds_per_sample: float

    def __post_init__(self):
        if self.mode not in TIMING_MODES:
            raise ValueError(f"mode must be one of {TIMING_MODES}, got {self.mode!r}")
        if self.training_size < 1:
            raise ValueError("training_size must be >= 1")
        if not self.seconds_per_sample > 0:
            raise ValueError("seconds_per_sample must be positive")


@dataclass(frozen=True)
class TimingRow:
    training_size: int
    mode: str
    mean_seconds: float
    std_seconds: float
    n_runs: int


@dataclass(frozen=True)
class TimingTable:
    """Per (mode, size) timing statistics plus largest/smallest size ratios.

    ratios maps each mode observed at two or more training sizes to
    mean(largest size) / mean(smallest size); a mode seen at a single size
    has no ratio.
    """

    rows: tuple[TimingRow, ...]
    ratios: dict[str, float]

    def ratio(self, mode: str) -> float | None:
        return self.ratios.get(mode)


def timing_report(runs: list[TimingRun]) -> TimingTable:
    runs = list(runs)
    if not runs:
        raise ValueError("need at least one timing run")
    groups: dict[tuple[str, int], list[float]] = defaultdict(list)
    for r in runs:
        groups[(r.mode, r.training_size)].append(r.seconds_per_sample)
    rows = []
    for (mode, size), times in sorted(groups.items()):
        arr = np.asarray(times)
        std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
        rows.append(
            TimingRow(
                training_size=size,
                mode=mode,
                mean_seconds=float(arr.mean()),
                std_seconds=std,
                n_runs=arr.size,
            )
        )
    ratios: dict[str, float] = {}
    for mode in TIMING_MODES:
        by_size = {r.training_size: r.mean_seconds for r in rows if r.mode == mode}
        if len(by_size) >= 2:
            ratios[mode] = by_size[max(by_size)] / by_size[min(by_size)]
    return TimingTable(rows=tuple(rows), ratios=ratios)
