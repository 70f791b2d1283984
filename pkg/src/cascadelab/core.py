"""Geometry primitives, point patterns, reproducible RNG streams and Monte
Carlo estimation helpers shared by every other module."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
from scipy import stats

__all__ = [
    "DimensionMismatchError",
    "SamplerError",
    "Ball",
    "Box",
    "Region",
    "PointPattern",
    "RngStream",
    "EstimatorResult",
    "DispersionResult",
    "as_point",
    "unit_ball_volume",
    "count_in",
    "uniform_in",
    "mc_estimate",
    "summarize_values",
    "dispersion_test",
    "parallel_map",
]


class DimensionMismatchError(ValueError):
    """Operands live in different ambient dimensions."""


class SamplerError(RuntimeError):
    """A Monte Carlo replicate sampler raised; message carries the replicate index."""


def as_point(coords, dim: int | None = None) -> np.ndarray:
    """Coerce ``coords`` to a finite 1-d float array, optionally checking its dimension."""
    p = np.asarray(coords, dtype=float)
    if p.ndim == 0:
        p = p.reshape(1)
    if p.ndim != 1:
        raise ValueError(f"a point is a flat coordinate vector, got shape {p.shape}")
    if p.size == 0:
        raise ValueError("a point needs at least one coordinate")
    if not np.all(np.isfinite(p)):
        raise ValueError("point coordinates must be finite")
    if dim is not None and p.size != dim:
        raise DimensionMismatchError(f"expected dimension {dim}, got {p.size}")
    return p


def unit_ball_volume(dim: int) -> float:
    return math.pi ** (dim / 2.0) / math.gamma(dim / 2.0 + 1.0)


@dataclass(frozen=True)
class Ball:
    """Open Euclidean ball: membership is strict (|x - center| < radius)."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", as_point(self.center))
        if not (np.isfinite(self.radius) and self.radius > 0):
            raise ValueError("ball radius must be positive and finite")

    @property
    def dim(self) -> int:
        return self.center.size

    @property
    def volume(self) -> float:
        return unit_ball_volume(self.dim) * self.radius ** self.dim

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != self.dim:
            raise DimensionMismatchError(
                f"points have dimension {pts.shape[1]}, ball has {self.dim}")
        d2 = np.sum((pts - self.center) ** 2, axis=1)
        return d2 < self.radius ** 2

    def dilate(self, padding: float) -> "Ball":
        if padding < 0:
            raise ValueError("padding must be nonnegative")
        return Ball(self.center, self.radius + padding)

    @property
    def bounding_box(self) -> "Box":
        return Box(self.center - self.radius, self.center + self.radius)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box, closed-open: lo <= x < hi componentwise."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", as_point(self.lo))
        object.__setattr__(self, "hi", as_point(self.hi, self.lo.size))
        if not np.all(self.lo < self.hi):
            raise ValueError("box needs lo < hi in every coordinate")

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def volume(self) -> float:
        return float(np.prod(self.hi - self.lo))

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != self.dim:
            raise DimensionMismatchError(
                f"points have dimension {pts.shape[1]}, box has {self.dim}")
        return np.all(pts >= self.lo, axis=1) & np.all(pts < self.hi, axis=1)

    def dilate(self, padding: float) -> "Box":
        if padding < 0:
            raise ValueError("padding must be nonnegative")
        return Box(self.lo - padding, self.hi + padding)

    @property
    def bounding_box(self) -> "Box":
        return self


Region = Union[Ball, Box]


@dataclass(frozen=True)
class PointPattern:
    """Finite point multiset on R^d stored as the rows of an (n, d) array."""

    points: np.ndarray
    dim: int

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.size == 0:
            pts = pts.reshape(0, self.dim)
        if pts.ndim == 1:
            pts = pts.reshape(1, -1)
        if pts.ndim != 2 or pts.shape[1] != self.dim:
            raise DimensionMismatchError(
                f"points array of shape {pts.shape} does not match dimension {self.dim}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("pattern coordinates must be finite")
        object.__setattr__(self, "points", pts)

    @staticmethod
    def empty(dim: int) -> "PointPattern":
        return PointPattern(np.empty((0, dim)), dim)

    @property
    def total(self) -> int:
        return self.points.shape[0]

    def translate(self, offset) -> "PointPattern":
        off = as_point(offset, self.dim)
        return PointPattern(self.points + off, self.dim)


def count_in(pattern: PointPattern, region: Region) -> int:
    """Number of pattern points (with multiplicity) inside the region."""
    if pattern.dim != region.dim:
        raise DimensionMismatchError(
            f"pattern dimension {pattern.dim} != region dimension {region.dim}")
    if pattern.total == 0:
        return 0
    return int(np.count_nonzero(region.contains(pattern.points)))


def uniform_in(region: Region, count: int, gen: np.random.Generator) -> np.ndarray:
    """Draw ``count`` i.i.d. uniform points in the region, returned as (count, d)."""
    count = int(count)
    if count < 0:
        raise ValueError("count must be nonnegative")
    d = region.dim
    if count == 0:
        return np.empty((0, d))
    if isinstance(region, Box):
        u = gen.uniform(size=(count, d))
        return region.lo + u * (region.hi - region.lo)
    # open ball: direction uniform on the sphere, radius via the d-th root trick
    z = gen.standard_normal((count, d))
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    radii = region.radius * gen.uniform(size=(count, 1)) ** (1.0 / d)
    return region.center + z / norms * radii


class RngStream:
    """Reproducible random stream keyed by (seed, spawn path).

    Two streams constructed with the same seed and path yield bit-identical
    draw sequences. ``substream(i)`` derives an independent child stream;
    replicate ``i`` of a Monte Carlo loop always uses ``substream(i)``, so
    results do not depend on evaluation order or thread count. The underlying
    bit generator is Philox (counter based).
    """

    __slots__ = ("seed", "path", "_gen")

    def __init__(self, seed: int, stream_id: int = 0, _path: tuple | None = None):
        self.seed = int(seed)
        self.path = tuple(int(i) for i in _path) if _path is not None else (int(stream_id),)
        self._gen = None

    @property
    def stream_id(self) -> int:
        return self.path[0]

    @property
    def gen(self) -> np.random.Generator:
        if self._gen is None:
            ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
            self._gen = np.random.Generator(np.random.Philox(ss))
        return self._gen

    def substream(self, *indices: int) -> "RngStream":
        if not indices:
            raise ValueError("substream needs at least one index")
        return RngStream(self.seed, _path=self.path + tuple(int(i) for i in indices))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, path={self.path})"


def _gen_of(rng) -> np.random.Generator:
    """Accept an RngStream or a raw numpy Generator."""
    return rng.gen if isinstance(rng, RngStream) else rng


@dataclass(frozen=True)
class EstimatorResult:
    """Monte Carlo mean with a normal-approximation confidence interval."""

    mean: float
    ci_half_width: float
    n_replicates: int
    seed: int
    confidence: float = 0.99

    @property
    def ci(self) -> tuple[float, float]:
        return (self.mean - self.ci_half_width, self.mean + self.ci_half_width)

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "ci_half_width": self.ci_half_width,
            "n_replicates": self.n_replicates,
            "seed": self.seed,
            "confidence": self.confidence,
        }


def summarize_values(values, seed: int, confidence: float = 0.99) -> EstimatorResult:
    """Fold precomputed replicate values into an EstimatorResult."""
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        raise ValueError("need at least two replicate values")
    z = stats.norm.ppf(0.5 + confidence / 2.0)
    half = float(z * v.std(ddof=1) / math.sqrt(v.size))
    return EstimatorResult(float(v.mean()), half, int(v.size), int(seed), float(confidence))


def mc_estimate(
    sampler: Callable[[RngStream], float],
    n_replicates: int,
    rng: RngStream,
    confidence: float = 0.99,
    threads: int = 1,
) -> EstimatorResult:
    """Estimate E[sampler] with i.i.d. replicates on independent substreams.

    Replicate i runs on rng.substream(i), so the estimate is reproducible and
    independent of the number of worker threads.
    """
    n = int(n_replicates)
    if n < 2:
        raise ValueError("n_replicates must be at least 2")
    if not (0.0 < confidence < 1.0):
        raise ValueError("confidence must lie in (0, 1)")

    def one(i: int) -> float:
        try:
            return float(sampler(rng.substream(i)))
        except Exception as exc:  # noqa: BLE001 - annotate and re-raise
            raise SamplerError(f"sampler failed at replicate {i}: {exc}") from exc

    values = parallel_map(one, n, threads)
    return summarize_values(values, rng.seed, confidence)


@dataclass(frozen=True)
class DispersionResult:
    consistent_with_poisson: bool
    index_of_dispersion: float
    p_value: float
    n_samples: int


def dispersion_test(samples, alpha: float = 0.01) -> DispersionResult:
    """Variance/mean test of Poisson-ness for i.i.d. count samples.

    Under Poisson counts (n-1)*index is approximately chi-square(n-1); the
    test is two sided. All-zero input is degenerate Poisson(~0) and reported
    consistent with an undefined index.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim != 1:
        raise ValueError("samples must be a flat array of counts")
    n = x.size
    if n < 30:
        raise ValueError("dispersion test needs at least 30 samples")
    if not (0.0 < alpha < 1.0):
        raise ValueError("alpha must lie in (0, 1)")
    m = x.mean()
    if m == 0.0:
        return DispersionResult(True, float("nan"), 1.0, n)
    index = x.var(ddof=1) / m
    stat = (n - 1) * index
    p = 2.0 * min(stats.chi2.cdf(stat, n - 1), stats.chi2.sf(stat, n - 1))
    p = min(1.0, float(p))
    return DispersionResult(bool(p >= alpha), float(index), p, n)


def parallel_map(fn: Callable[[int], object], count: int, threads: int = 1) -> list:
    """Map fn over range(count), optionally on a thread pool; order preserved."""
    if threads is None or threads <= 1 or count <= 1:
        return [fn(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=int(threads)) as ex:
        return list(ex.map(fn, range(count)))
