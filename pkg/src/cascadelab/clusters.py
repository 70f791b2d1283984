"""Critical cluster models: count laws, the shipped model families, and the
parent/siblings samplers used by the Palm constructions.

A cluster here is the offspring point pattern of a single parent: a random
count Y with E[Y] = 1 (criticality) and i.i.d. displacements from the
parent's location. All shipped families fit that mold; they differ in which
count law and displacement law they combine and in the metadata flags the
decision rules consult.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import PointPattern, RngStream, as_point, _gen_of
from .displacements import (
    CFUnavailableError,
    DisplacementLaw,
    gaussian_law,
    pareto_tail_law,
    point_mass_law,
    stable_law,
)

__all__ = [
    "CountLaw",
    "ClusterModel",
    "ParentSiblings",
    "PalmSamplingError",
    "RejectionCapError",
    "poisson_count",
    "fixed_count",
    "table_count",
    "deterministic_cluster",
    "no_displacement_cluster",
    "single_point_cluster",
    "poisson_cluster",
    "compound_cluster",
    "sample_cluster",
    "displacement_cf",
    "size_biased_count",
    "sample_parent_siblings",
    "sample_parent_siblings_rejection",
    "truncated_mass_diagnostic",
]


class PalmSamplingError(RuntimeError):
    """Palm operations need a simple and diffuse cluster; this family is not."""


class RejectionCapError(RuntimeError):
    """The rejection sampler ran out of attempts; carries acceptance stats."""

    def __init__(self, msg, attempts, accepted):
        super().__init__(msg)
        self.attempts = attempts
        self.accepted = accepted


@dataclass(frozen=True)
class CountLaw:
    """Offspring count distribution with exact size-biasing support.

    size_biased_sampler draws from q_k = k * p_k / mean; for mean-1 laws this
    is the distribution of the count of the cluster containing a typical
    point.
    """

    name: str
    mean: float
    variance: float
    sampler: Callable[[np.random.Generator, int], np.ndarray]
    size_biased_sampler: Callable[[np.random.Generator, int], np.ndarray]
    pmf: Callable[[int], float] | None = None

    def sample(self, rng, size: int) -> np.ndarray:
        out = np.asarray(self.sampler(_gen_of(rng), int(size)), dtype=np.int64)
        return out.reshape(int(size))

    def sample_size_biased(self, rng, size: int) -> np.ndarray:
        out = np.asarray(self.size_biased_sampler(_gen_of(rng), int(size)), dtype=np.int64)
        return out.reshape(int(size))


def poisson_count() -> CountLaw:
    """Poisson(1) offspring counts; size-biased version is 1 + Poisson(1)."""

    def sampler(gen, size):
        return gen.poisson(1.0, size)

    def size_biased(gen, size):
        return 1 + gen.poisson(1.0, size)

    def pmf(k):
        return math.exp(-1.0) / math.factorial(k) if k >= 0 else 0.0

    return CountLaw("poisson(1)", 1.0, 1.0, sampler, size_biased, pmf)


def fixed_count() -> CountLaw:
    """Deterministic single offspring (count == 1, variance 0)."""

    def sampler(gen, size):
        return np.ones(size, dtype=np.int64)

    return CountLaw("fixed(1)", 1.0, 0.0, sampler, sampler,
                    pmf=lambda k: 1.0 if k == 1 else 0.0)


def table_count(pmf: dict) -> CountLaw:
    """Finite-support count law given as {count: probability}; mean must be 1."""
    ks = np.array(sorted(int(k) for k in pmf), dtype=np.int64)
    ps = np.array([float(pmf[k] if k in pmf else pmf[str(k)]) for k in ks])
    if np.any(ks < 0):
        raise ValueError("counts must be nonnegative")
    if np.any(ps < 0) or abs(ps.sum() - 1.0) > 1e-12:
        raise ValueError("probabilities must be nonnegative and sum to 1")
    mean = float(ks @ ps)
    if abs(mean - 1.0) > 1e-12:
        raise ValueError(f"count law mean is {mean:g}, criticality needs exactly 1")
    var = float((ks.astype(float) - mean) ** 2 @ ps)
    qs = ks * ps  # size-biased weights k * p_k; they sum to the mean = 1
    table = dict(zip(ks.tolist(), ps.tolist()))

    def sampler(gen, size):
        return gen.choice(ks, size=size, p=ps)

    def size_biased(gen, size):
        return gen.choice(ks, size=size, p=qs)

    label = ",".join(f"{k}:{p:g}" for k, p in zip(ks, ps))
    return CountLaw(f"table({label})", mean, var, sampler, size_biased,
                    pmf=lambda k: table.get(int(k), 0.0))


@dataclass(frozen=True)
class ClusterModel:
    """A critical cluster family: count law + displacement law + flags."""

    family: str
    dim: int
    count_law: CountLaw
    displacement: DisplacementLaw

    def __post_init__(self):
        if self.displacement.dim != self.dim:
            raise ValueError("displacement law dimension does not match the model")
        if abs(self.count_law.mean - 1.0) > 1e-9:
            raise ValueError("cluster count law must have mean 1 (criticality)")

    @property
    def count_mean(self) -> float:
        return self.count_law.mean

    @property
    def count_variance(self) -> float:
        return self.count_law.variance

    @property
    def var_zero(self) -> bool:
        return self.count_law.variance == 0.0

    @property
    def palm_samplable(self) -> bool:
        """Simple and diffuse clusters admit the Palm constructions."""
        return self.displacement.diffuse

    @property
    def label(self) -> str:
        return f"{self.family}[{self.count_law.name}; {self.displacement.name}]"


def deterministic_cluster(x0) -> ClusterModel:
    """Exactly one offspring at parent + x0."""
    v = as_point(x0)
    return ClusterModel("deterministic", v.size, fixed_count(), point_mass_law(v))


def no_displacement_cluster(count_law: CountLaw, dim: int = 1) -> ClusterModel:
    """Random offspring count, all sitting exactly on the parent."""
    return ClusterModel("no_displacement", dim, count_law, point_mass_law(np.zeros(dim)))


def single_point_cluster(law: DisplacementLaw) -> ClusterModel:
    """Exactly one offspring displaced by the given law (count variance 0)."""
    return ClusterModel("single_point", law.dim, fixed_count(), law)


def poisson_cluster(law: DisplacementLaw) -> ClusterModel:
    """Poisson(1) offspring, i.i.d. displacements."""
    return ClusterModel("poisson", law.dim, poisson_count(), law)


def compound_cluster(count_law: CountLaw, law: DisplacementLaw) -> ClusterModel:
    """General mean-1 count with i.i.d. displacements."""
    return ClusterModel("compound", law.dim, count_law, law)


def sample_cluster(model: ClusterModel, root, rng) -> PointPattern:
    """One offspring pattern of a parent at ``root``."""
    r = as_point(root, model.dim)
    gen = _gen_of(rng)
    k = int(model.count_law.sample(gen, 1)[0])
    if k == 0:
        return PointPattern.empty(model.dim)
    return PointPattern(r + model.displacement.sample(gen, k), model.dim)


def displacement_cf(model: ClusterModel, z) -> complex:
    """Characteristic function of the displacement law at frequency z."""
    return model.displacement.cf_at(z)


def size_biased_count(model: ClusterModel, rng) -> int:
    """Cluster size seen from a typical cluster point (law q_k = k p_k)."""
    return int(model.count_law.sample_size_biased(_gen_of(rng), 1)[0])


@dataclass(frozen=True)
class ParentSiblings:
    """Relative view from a typical cluster point: parent offset and the
    sibling offsets, all translated so the typical point sits at the origin."""

    parent: np.ndarray
    siblings: PointPattern


def sample_parent_siblings(model: ClusterModel, rng) -> ParentSiblings:
    """Exact parent/siblings draw via size-biasing.

    Draw the size-biased count K, give the cluster K i.i.d. displacements,
    mark one uniformly as the typical point, and recentre everything on it.
    """
    if not model.palm_samplable:
        raise PalmSamplingError(
            f"family {model.family!r} is not simple and diffuse; "
            "parent/siblings sampling is undefined")
    gen = _gen_of(rng)
    k = int(model.count_law.sample_size_biased(gen, 1)[0])
    x = model.displacement.sample(gen, k)
    j = int(gen.integers(k))
    parent = -x[j]
    sib = np.delete(x, j, axis=0) - x[j]
    return ParentSiblings(parent, PointPattern(sib, model.dim))


def sample_parent_siblings_rejection(
    cluster_sampler: Callable[[RngStream], PointPattern],
    dim: int,
    rng: RngStream,
    cap: int = 64,
    max_attempts: int = 10_000,
) -> ParentSiblings:
    """Rejection fallback for user-defined clusters without a tractable count
    law: accept a cluster of size k with probability k / cap. Clusters larger
    than cap are never accepted; their omitted mass should be checked with
    truncated_mass_diagnostic before trusting results."""
    if cap < 1:
        raise ValueError("cap must be at least 1")
    gen = _gen_of(rng)
    accepted = 0
    for attempt in range(1, int(max_attempts) + 1):
        pat = cluster_sampler(rng)
        k = pat.total
        if k == 0 or k > cap:
            continue
        if gen.uniform() < k / cap:
            accepted += 1
            j = int(gen.integers(k))
            pivot = pat.points[j]
            sib = np.delete(pat.points, j, axis=0) - pivot
            return ParentSiblings(-pivot, PointPattern(sib, dim))
    raise RejectionCapError(
        f"no acceptance within {max_attempts} attempts (cap={cap})",
        attempts=max_attempts, accepted=accepted)


def truncated_mass_diagnostic(
    cluster_sampler: Callable[[RngStream], PointPattern],
    rng: RngStream,
    cap: int = 64,
    replicates: int = 2000,
) -> dict:
    """Estimate the size-biased mass the rejection sampler discards:
    sum over k > cap of k * p_k, as a fraction of the count mean."""
    sizes = np.array([cluster_sampler(rng).total for _ in range(int(replicates))], dtype=float)
    mean = sizes.mean()
    over = sizes[sizes > cap].sum() / sizes.size
    return {
        "cap": int(cap),
        "replicates": int(replicates),
        "count_mean": float(mean),
        "truncated_mass": float(over),
        "truncated_fraction": float(over / mean) if mean > 0 else 0.0,
    }


# --- CLI/table plumbing -----------------------------------------------------

_COUNT_BUILDERS = {
    "poisson": lambda spec: poisson_count(),
    "fixed": lambda spec: fixed_count(),
    "table": lambda spec: table_count(spec["pmf"]),
}

_DISPLACEMENT_BUILDERS = {
    "gaussian": lambda spec, dim: gaussian_law(dim, spec.get("sigma", 1.0)),
    "stable": lambda spec, dim: stable_law(dim, spec["alpha"]),
    "pareto_tail": lambda spec, dim: pareto_tail_law(spec["alpha"]),
    "point_mass": lambda spec, dim: point_mass_law(spec["x0"]),
}


def build_count_law(spec: dict) -> CountLaw:
    kind = spec["kind"]
    if kind not in _COUNT_BUILDERS:
        raise ValueError(f"unknown count law kind {kind!r}")
    return _COUNT_BUILDERS[kind](spec)


def build_displacement_law(spec: dict, dim: int) -> DisplacementLaw:
    kind = spec["kind"]
    if kind not in _DISPLACEMENT_BUILDERS:
        raise ValueError(f"unknown displacement kind {kind!r}")
    law = _DISPLACEMENT_BUILDERS[kind](spec, dim)
    if law.dim != dim:
        raise ValueError(f"displacement kind {kind!r} produced dimension {law.dim}, wanted {dim}")
    return law


def build_model(spec: dict) -> ClusterModel:
    """Build a ClusterModel from a config mapping (see the CLI schema)."""
    family = spec["family"]
    dim = int(spec.get("dim", 1))
    if family == "deterministic":
        return deterministic_cluster(spec["x0"])
    if family == "no_displacement":
        return no_displacement_cluster(build_count_law(spec["count"]), dim)
    if family == "single_point":
        return single_point_cluster(build_displacement_law(spec["displacement"], dim))
    if family == "poisson":
        return poisson_cluster(build_displacement_law(spec["displacement"], dim))
    if family == "compound":
        return compound_cluster(build_count_law(spec["count"]),
                                build_displacement_law(spec["displacement"], dim))
    raise ValueError(f"unknown cluster family {family!r}")
