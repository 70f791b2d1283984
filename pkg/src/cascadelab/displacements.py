"""Displacement laws for cluster offsets.

Each law bundles a vectorized sampler with the metadata the decision rules
need: characteristic function (if available), mean, second-moment flag,
symmetry, diffuseness, tail index and effective dimension.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate

from .core import RngStream, as_point, _gen_of

__all__ = [
    "CFUnavailableError",
    "DisplacementLaw",
    "gaussian_law",
    "stable_law",
    "pareto_tail_law",
    "point_mass_law",
    "sample_stable_1d",
    "sample_positive_stable",
    "empirical_cf",
    "estimate_effective_dim",
]


class CFUnavailableError(RuntimeError):
    """The law ships no analytic characteristic function."""


@dataclass(frozen=True)
class DisplacementLaw:
    """A displacement distribution on R^dim.

    sampler(gen, size) must return a (size, dim) float array and consume the
    generator in a deterministic order. cf maps a length-dim frequency vector
    to a complex number; None means no analytic form is available and callers
    must fall back to empirical_cf.
    """

    name: str
    dim: int
    sampler: Callable[[np.random.Generator, int], np.ndarray]
    cf: Callable[[np.ndarray], complex] | None = None
    mean: np.ndarray | None = None
    second_moment_finite: bool | None = None
    symmetric: bool = False
    diffuse: bool = True
    isotropic: bool = False
    tail_index: float | None = None
    effective_dim: int | None = None

    def sample(self, rng, size: int) -> np.ndarray:
        out = np.asarray(self.sampler(_gen_of(rng), int(size)), dtype=float)
        if out.shape != (int(size), self.dim):
            raise ValueError(
                f"law {self.name!r} returned shape {out.shape}, wanted {(int(size), self.dim)}")
        return out

    def cf_at(self, z) -> complex:
        if self.cf is None:
            raise CFUnavailableError(f"law {self.name!r} has no analytic characteristic function")
        return complex(self.cf(as_point(z, self.dim)))


def _validate_cf(law: DisplacementLaw) -> None:
    """Probe-grid sanity checks: cf(0)=1, |cf|<=1, symmetric laws real."""
    if law.cf is None:
        return
    if abs(law.cf_at(np.zeros(law.dim)) - 1.0) > 1e-9:
        raise ValueError(f"law {law.name!r}: cf(0) != 1")
    radii = (1e-3, 1e-2, 0.1, 0.5, 1.0, 2.0, 5.0)
    dirs = [np.eye(law.dim)[k] for k in range(law.dim)]
    if law.dim > 1:
        dirs.append(np.ones(law.dim) / np.sqrt(law.dim))
    for r in radii:
        for e in dirs:
            v = law.cf_at(r * e)
            if abs(v) > 1.0 + 1e-8:
                raise ValueError(f"law {law.name!r}: |cf| > 1 at radius {r}")
            if law.symmetric and abs(v.imag) > 1e-7:
                raise ValueError(f"law {law.name!r}: symmetric law has complex cf at radius {r}")


def gaussian_law(dim: int, sigma: float = 1.0) -> DisplacementLaw:
    """Isotropic centered Gaussian with per-coordinate scale sigma."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    s = float(sigma)

    def sampler(gen, size):
        return gen.normal(0.0, s, size=(size, dim))

    def cf(z):
        return np.exp(-0.5 * s * s * float(np.dot(z, z)))

    law = DisplacementLaw(
        name=f"gaussian(sigma={s:g}, d={dim})",
        dim=dim,
        sampler=sampler,
        cf=cf,
        mean=np.zeros(dim),
        second_moment_finite=True,
        symmetric=True,
        diffuse=True,
        isotropic=True,
        effective_dim=dim,
    )
    _validate_cf(law)
    return law


def sample_stable_1d(gen: np.random.Generator, alpha: float, size: int) -> np.ndarray:
    """Symmetric alpha-stable draws with cf exp(-|t|^alpha), via the
    Chambers-Mallows-Stuck polar construction."""
    u = gen.uniform(-np.pi / 2.0, np.pi / 2.0, size)
    w = gen.standard_exponential(size)
    if alpha == 1.0:
        return np.tan(u)
    return (np.sin(alpha * u) / np.cos(u) ** (1.0 / alpha)) * (
        np.cos((1.0 - alpha) * u) / w) ** ((1.0 - alpha) / alpha)


def sample_positive_stable(gen: np.random.Generator, a: float, size: int) -> np.ndarray:
    """One-sided stable draws with Laplace transform exp(-s^a), 0 < a < 1
    (Kanter's representation). Computed in logs to dodge overflow."""
    if not (0.0 < a < 1.0):
        raise ValueError("index must lie in (0, 1)")
    u = gen.uniform(0.0, np.pi, size)
    e = gen.standard_exponential(size)
    log_a_u = (
        a * np.log(np.sin(a * u))
        + (1.0 - a) * np.log(np.sin((1.0 - a) * u))
        - np.log(np.sin(u))
    ) / (1.0 - a)
    return np.exp((log_a_u - np.log(e)) * ((1.0 - a) / a))


def stable_law(dim: int, alpha: float) -> DisplacementLaw:
    """Isotropic symmetric alpha-stable law with cf exp(-|z|^alpha).

    d=1 uses Chambers-Mallows-Stuck directly; d>1 mixes a Gaussian N(0, 2I)
    with a one-sided stable(alpha/2) variance so the cf comes out exactly
    exp(-|z|^alpha). alpha=2 is the Gaussian edge case N(0, 2I).
    """
    if not (0.0 < alpha <= 2.0):
        raise ValueError("alpha must lie in (0, 2]")
    a = float(alpha)

    if dim == 1:
        def sampler(gen, size):
            return sample_stable_1d(gen, a, size).reshape(size, 1)
    elif a == 2.0:
        def sampler(gen, size):
            return gen.normal(0.0, np.sqrt(2.0), size=(size, dim))
    else:
        def sampler(gen, size):
            mix = sample_positive_stable(gen, a / 2.0, size)
            return np.sqrt(mix)[:, None] * gen.normal(0.0, np.sqrt(2.0), size=(size, dim))

    def cf(z):
        return np.exp(-float(np.linalg.norm(z)) ** a)

    law = DisplacementLaw(
        name=f"stable(alpha={a:g}, d={dim})",
        dim=dim,
        sampler=sampler,
        cf=cf,
        mean=np.zeros(dim) if a > 1.0 else None,
        second_moment_finite=(a == 2.0),
        symmetric=True,
        diffuse=True,
        isotropic=True,
        effective_dim=dim,
    )
    _validate_cf(law)
    return law


def pareto_tail_law(alpha: float) -> DisplacementLaw:
    """Pure Pareto displacement on [1, inf): survival x^-alpha, d=1.

    Models a regularly varying offspring delay with tail index alpha. The cf
    has no closed form; it is computed with Fourier-weighted quadrature.
    """
    if alpha <= 0:
        raise ValueError("tail index must be positive")
    a = float(alpha)

    def sampler(gen, size):
        u = gen.uniform(size=size)
        return ((1.0 - u) ** (-1.0 / a)).reshape(size, 1)

    def density(x):
        return a * x ** (-a - 1.0)

    def cf(z):
        t = float(np.asarray(z).reshape(()))
        if t == 0.0:
            return 1.0 + 0.0j
        sign = 1.0 if t > 0 else -1.0
        w = abs(t)
        re, _ = integrate.quad(density, 1.0, np.inf, weight="cos", wvar=w, limit=400)
        im, _ = integrate.quad(density, 1.0, np.inf, weight="sin", wvar=w, limit=400)
        return complex(re, sign * im)

    law = DisplacementLaw(
        name=f"pareto_tail(alpha={a:g})",
        dim=1,
        sampler=sampler,
        cf=cf,
        mean=np.array([a / (a - 1.0)]) if a > 1.0 else None,
        second_moment_finite=(a > 2.0),
        symmetric=False,
        diffuse=True,
        isotropic=False,
        tail_index=a,
        effective_dim=1,
    )
    _validate_cf(law)
    return law


def point_mass_law(x0) -> DisplacementLaw:
    """Degenerate displacement: every draw equals x0. Not diffuse."""
    v = as_point(x0)
    d = v.size
    zero = bool(np.all(v == 0.0))

    def sampler(gen, size):
        return np.tile(v, (size, 1))

    def cf(z):
        return np.exp(1j * float(np.dot(as_point(z, d), v)))

    law = DisplacementLaw(
        name=f"point_mass({np.array2string(v, separator=',')})",
        dim=d,
        sampler=sampler,
        cf=cf,
        mean=v.copy(),
        second_moment_finite=True,
        symmetric=zero,
        diffuse=False,
        isotropic=False,
        effective_dim=0 if zero else 1,
    )
    _validate_cf(law)
    return law


def empirical_cf(law: DisplacementLaw, z, n_samples: int, rng: RngStream) -> complex:
    """Monte Carlo characteristic function estimate at frequency z."""
    zv = as_point(z, law.dim)
    x = law.sample(rng, int(n_samples))
    return complex(np.mean(np.exp(1j * (x @ zv))))


def estimate_effective_dim(law: DisplacementLaw, n_samples: int, rng: RngStream,
                           tol: float = 1e-8) -> int:
    """Rank of the sample second-moment matrix: dimension of the linear span
    of the support. Singular values below tol * largest are treated as zero."""
    if law.effective_dim is not None:
        return int(law.effective_dim)
    x = law.sample(rng, int(n_samples))
    second = x.T @ x / x.shape[0]
    sv = np.linalg.svd(second, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.count_nonzero(sv > tol * sv[0]))
