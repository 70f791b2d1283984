"""Persistence/extinction decision rules for critical cluster cascades.

The analytic rules work off the displacement characteristic function (CF):
the cascade persists when the CF integrand 1/|1 - cf|^2 is integrable at the
origin, and dies when the single-step random walk is recurrent. Numerical
fallbacks estimate occupation measures by simulation. Every verdict carries
an evidence trail and serializes to JSON.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .core import RngStream
from .displacements import DisplacementLaw, estimate_effective_dim
from .clusters import ClusterModel

__all__ = [
    "CfIntegralReport",
    "OccupationReport",
    "PersistenceVerdict",
    "ClassifyBudget",
    "cf_integral",
    "occupation_convolution",
    "occupation_single",
    "classify_recurrence",
    "classify_persistence",
    "hawkes_tail_rule",
]

EXPONENT_MARGIN = 0.25       # |beta - d| closer than this => inconclusive
PLATEAU_REL = 0.05           # partial sums: relative growth below this over a doubling
GROWTH_REL = 0.15            # ... and above this reads as divergence
HAWKES_CRITICAL_TAIL = 0.5   # tail index below this persists


def _unit_vector(d: int) -> np.ndarray:
    e = np.zeros(d)
    e[0] = 1.0
    return e


@dataclass(frozen=True)
class CfIntegralReport:
    """Result of probing integral of 1/|1 - cf(z)|^2 near z = 0."""

    dim: int
    eps: float
    annulus_integrals: tuple      # ((delta, integral over delta<|z|<eps), ...) delta decreasing
    fitted_exponent: float        # beta in 1/|1-cf|^2 ~ |z|^-beta
    verdict: str                  # "finite" | "divergent" | "inconclusive"
    margin: float = EXPONENT_MARGIN
    notes: tuple = ()

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "eps": self.eps,
            "annulus_integrals": [list(t) for t in self.annulus_integrals],
            "fitted_exponent": self.fitted_exponent,
            "verdict": self.verdict,
            "margin": self.margin,
            "notes": list(self.notes),
        }


def _radial_integral(h, d: int, lo: float, hi: float, points: int) -> float:
    """Integrate S_{d-1} s^{d-1} h(s) over [lo, hi] on a log grid (trapezoid);
    `points` nodes per decade-ish panel keeps the singular end resolved."""
    surface = 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)
    u = np.linspace(math.log(lo), math.log(hi), max(2, int(points)))
    s = np.exp(u)
    vals = np.array([surface * si ** d * h(si) for si in s])  # extra s from du = ds/s
    return float(np.trapz(vals, u))


def cf_integral(cf, d: int, eps: float = 0.5, deltas=None,
                quadrature_points: int = 64, isotropic: bool = True,
                rng: RngStream | None = None, mc_points: int = 4096) -> CfIntegralReport:
    """Probe the near-origin integrability of 1/|1 - cf(z)|^2.

    eps is shrunk (halved, up to 40 times) until Re cf stays in [0, 1] on the
    probe ball, as the criterion requires. The report carries integrals over
    shrinking annuli delta < |z| < eps and the fitted singularity exponent
    beta; the verdict is finite iff beta < d - margin, divergent iff
    beta > d + margin (radial integrand s^(d-1-beta), integrable iff
    beta < d), else inconclusive.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    notes = []
    e1 = _unit_vector(d)
    if isotropic:
        probe_dirs = [e1]
    else:
        probe_dirs = [np.eye(d)[k] for k in range(d)]
        if d > 1:
            probe_dirs.append(np.ones(d) / math.sqrt(d))

    def h_along(s: float, direction=e1) -> float:
        v = complex(cf(s * direction))
        denom = abs(1.0 - v) ** 2
        return float("inf") if denom == 0.0 else 1.0 / denom

    shrink = 0
    while shrink < 40:
        ok = True
        for t in np.linspace(eps / 16.0, eps, 9):
            for e in probe_dirs:
                re = complex(cf(t * e)).real
                if re < -1e-12 or re > 1.0 + 1e-12:
                    ok = False
                    break
            if not ok:
                break
        if ok:
            break
        eps *= 0.5
        shrink += 1
    if shrink:
        notes.append(f"eps shrunk {shrink} times to keep Re cf in [0, 1]")
    if shrink >= 40:
        return CfIntegralReport(d, eps, (), float("nan"), "inconclusive",
                                notes=tuple(notes + ["no valid probe ball found"]))

    if deltas is None:
        deltas = [eps * 2.0 ** (-j) for j in range(1, 9)]
    deltas = sorted(float(x) for x in deltas, )[::-1]
    if deltas[0] >= eps:
        raise ValueError("every delta must be smaller than eps")

    annuli = []
    running = 0.0
    hi = eps
    for delta in deltas:
        if isotropic:
            running += _radial_integral(h_along, d, delta, hi, quadrature_points)
        else:
            if rng is None:
                rng = RngStream(0)
            gen = rng.substream(len(annuli)).gen
            vol = (eps ** d - delta ** d) * math.pi ** (d / 2.0) / math.gamma(d / 2.0 + 1.0)
            radii = (delta ** d + gen.uniform(size=mc_points) * (eps ** d - delta ** d)) ** (1.0 / d)
            z = gen.standard_normal((mc_points, d))
            z /= np.linalg.norm(z, axis=1, keepdims=True)
            vals = np.array([h_along(1.0, r * zz) for r, zz in zip(radii, z)])
            running = vol * float(np.mean(np.clip(vals, 0.0, 1e300)))
        hi = delta
        annuli.append((delta, running))

    # singularity exponent of 1/|1-cf|^2 from a log-log fit near 0, with
    # cancellation-poisoned probes (|1-cf| at double-precision noise) dropped
    s_grid = np.geomspace(1e-7, eps / 4.0, 48)
    ss, hs = [], []
    for s in s_grid:
        v = complex(cf(s * e1))
        gap = abs(1.0 - v)
        if gap > 1e-9:
            ss.append(s)
            hs.append(1.0 / gap ** 2)
    if len(ss) >= 8:
        slope = np.polyfit(np.log(ss), np.log(hs), 1)[0]
        beta = float(-slope)
    else:
        beta = float("nan")
        notes.append("too few clean probes for the exponent fit")

    if math.isnan(beta):
        verdict = "inconclusive"
    elif beta < d - EXPONENT_MARGIN:
        verdict = "finite"
    elif beta > d + EXPONENT_MARGIN:
        verdict = "divergent"
    else:
        verdict = "inconclusive"
    return CfIntegralReport(d, eps, tuple(annuli), beta, verdict, notes=tuple(notes))


@dataclass(frozen=True)
class OccupationReport:
    """Partial sums of an occupation quantity over growing horizons."""

    r: float
    horizons: tuple
    partial_sums: tuple          # mean estimate per horizon
    ci_half_widths: tuple
    rel_increase: float          # over the final horizon doubling
    verdict: str                 # "finite" | "divergent" | "inconclusive"
    replicates: int
    kind: str                    # "two_sided" (U * U-) or "single" (U alone)

    def to_dict(self) -> dict:
        return {
            "r": self.r,
            "horizons": list(self.horizons),
            "partial_sums": list(self.partial_sums),
            "ci_half_widths": list(self.ci_half_widths),
            "rel_increase": self.rel_increase,
            "verdict": self.verdict,
            "replicates": self.replicates,
            "kind": self.kind,
        }


def _trend_verdict(means) -> tuple[str, float]:
    rel = float((means[-1] - means[-2]) / means[-1]) if means[-1] > 0 else 0.0
    if rel < PLATEAU_REL:
        return "finite", rel
    if rel > GROWTH_REL:
        return "divergent", rel
    return "inconclusive", rel


def occupation_convolution(displacement: DisplacementLaw, r: float, horizons,
                           replicates: int, rng: RngStream,
                           confidence: float = 0.99) -> OccupationReport:
    """Estimate the two-sided occupation mass (U * U-)(B_0^r) by truncation.

    One replicate simulates a reversed-step spine walk to the top horizon
    and, from each spine point, an independent forward walk of the same
    length; the horizon-h partial sum counts visits to the ball among the
    first h spine points x first h walk steps. Horizon 0 contributes exactly
    the origin visit, so its estimate is 1.
    """
    horizons = sorted(int(h) for h in horizons)
    if horizons[0] < 0:
        raise ValueError("horizons must be nonnegative")
    top = horizons[-1]
    d = displacement.dim
    r2 = float(r) ** 2
    sums = np.empty((int(replicates), len(horizons)))
    from .core import summarize_values

    for i in range(int(replicates)):
        gen = rng.substream(i).gen
        spine_steps = -displacement.sample(gen, top) if top else np.empty((0, d))
        spine = np.vstack([np.zeros((1, d)), np.cumsum(spine_steps, axis=0)])
        walk_steps = displacement.sample(gen, (top + 1) * top).reshape(top + 1, top, d) \
            if top else np.empty((1, 0, d))
        walks = np.concatenate(
            [np.zeros((top + 1, 1, d)), np.cumsum(walk_steps, axis=1)], axis=1)
        positions = spine[:, None, :] + walks          # (top+1, top+1, d)
        hit = np.sum(positions ** 2, axis=2) < r2      # (spine k, walk n)
        cum = hit.cumsum(axis=0).cumsum(axis=1)
        for j, h in enumerate(horizons):
            sums[i, j] = cum[h, h]

    ests = [summarize_values(sums[:, j], rng.seed, confidence) for j in range(len(horizons))]
    means = [e.mean for e in ests]
    if len(means) >= 2:
        verdict, rel = _trend_verdict(means)
    else:
        verdict, rel = "inconclusive", 0.0
    return OccupationReport(float(r), tuple(horizons), tuple(means),
                            tuple(e.ci_half_width for e in ests), rel, verdict,
                            int(replicates), "two_sided")


def occupation_single(displacement: DisplacementLaw, r: float, horizons,
                      replicates: int, rng: RngStream,
                      confidence: float = 0.99) -> OccupationReport:
    """Partial sums of the expected visits of the plain walk to B_0^r
    (the one-sided occupation mass U(B_0^r)); used as the numerical
    recurrence probe."""
    horizons = sorted(int(h) for h in horizons)
    top = horizons[-1]
    d = displacement.dim
    r2 = float(r) ** 2
    sums = np.empty((int(replicates), len(horizons)))
    from .core import summarize_values

    for i in range(int(replicates)):
        gen = rng.substream(i).gen
        steps = displacement.sample(gen, top) if top else np.empty((0, d))
        walk = np.vstack([np.zeros((1, d)), np.cumsum(steps, axis=0)])
        hit = np.sum(walk ** 2, axis=1) < r2
        cum = hit.cumsum()
        for j, h in enumerate(horizons):
            sums[i, j] = cum[h]

    ests = [summarize_values(sums[:, j], rng.seed, confidence) for j in range(len(horizons))]
    means = [e.mean for e in ests]
    if len(means) >= 2:
        verdict, rel = _trend_verdict(means)
    else:
        verdict, rel = "inconclusive", 0.0
    return OccupationReport(float(r), tuple(horizons), tuple(means),
                            tuple(e.ci_half_width for e in ests), rel, verdict,
                            int(replicates), "single")


@dataclass(frozen=True)
class ClassifyBudget:
    """Numerical budgets and the seed for every simulation a verdict uses."""

    seed: int = 20240801
    cf_eps: float = 0.5
    cf_quadrature_points: int = 64
    occupation_r: float = 1.0
    occupation_horizons: tuple = (8, 16, 32, 64, 128)
    occupation_replicates: int = 300
    recurrence_horizons: tuple = (32, 64, 128, 256, 512)
    recurrence_replicates: int = 400
    effective_dim_samples: int = 4000


def classify_recurrence(displacement: DisplacementLaw, d: int | None = None,
                        budget: ClassifyBudget | None = None) -> tuple[str, dict]:
    """Recurrent/transient/unknown for the single-step walk.

    Rule table: d=1 with known mean 0 is recurrent; d=2 with mean 0 and a
    finite second moment is recurrent; effective dimension >= 5 is transient.
    Anything else falls to the numerical probe on the one-sided occupation
    partial sums (plateau => transient, sustained growth => recurrent).
    """
    budget = budget or ClassifyBudget()
    d = displacement.dim if d is None else int(d)
    if d != displacement.dim:
        raise ValueError("dimension does not match the displacement law")
    evidence: dict = {"dim": d}
    mean = displacement.mean
    mean_zero = mean is not None and bool(np.all(np.asarray(mean) == 0.0))
    evidence["mean_known_zero"] = mean_zero
    if d == 1 and mean_zero:
        evidence["rule"] = "dim1_mean_zero"
        return "recurrent", evidence
    if d == 2 and mean_zero and displacement.second_moment_finite:
        evidence["rule"] = "dim2_mean_zero_finite_second_moment"
        return "recurrent", evidence
    eff = displacement.effective_dim
    if eff is None:
        eff = estimate_effective_dim(displacement, budget.effective_dim_samples,
                                     RngStream(budget.seed, 901))
    evidence["effective_dim"] = int(eff)
    if eff >= 5:
        evidence["rule"] = "effective_dim_ge_5"
        return "transient", evidence
    probe = occupation_single(displacement, budget.occupation_r,
                              budget.recurrence_horizons,
                              budget.recurrence_replicates,
                              RngStream(budget.seed, 902))
    evidence["rule"] = "occupation_probe"
    evidence["occupation"] = probe.to_dict()
    if probe.verdict == "finite":
        return "transient", evidence
    if probe.verdict == "divergent":
        return "recurrent", evidence
    return "unknown", evidence


@dataclass(frozen=True)
class PersistenceVerdict:
    verdict: str                    # "persists" | "extinguishes" | "inconclusive"
    rule_fired: str
    model_label: str
    evidence: tuple = field(default_factory=tuple)

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "rule_fired": self.rule_fired,
            "model": self.model_label,
            "evidence": [dict(e) for e in self.evidence],
        }

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=indent)


def hawkes_tail_rule(alpha: float) -> PersistenceVerdict:
    """Heavy-tail rule for one-sided regularly varying displacements:
    tail index alpha in (0, 1); persists when alpha < 0.5, otherwise
    inconclusive (the converse direction is not available)."""
    a = float(alpha)
    if not (0.0 < a < 1.0):
        raise ValueError("tail index must lie in (0, 1)")
    ev = ({"rule": "heavy_tail", "tail_index": a, "critical": HAWKES_CRITICAL_TAIL},)
    if a < HAWKES_CRITICAL_TAIL:
        return PersistenceVerdict("persists", "heavy_tail", f"tail_index={a:g}", ev)
    return PersistenceVerdict("inconclusive", "heavy_tail_boundary_or_above",
                              f"tail_index={a:g}", ev)


def classify_persistence(model: ClusterModel,
                         budget: ClassifyBudget | None = None) -> PersistenceVerdict:
    """Persistence verdict for a cluster model via the rule cascade.

    Specials first (deterministic offset, no displacement), then
    variance-zero clusters through walk recurrence, then for fluctuating
    cluster sizes: recurrence => extinguishes; heavy tail < 1/2 => persists;
    CF integral finite => persists; two-sided occupation finite => persists;
    effective dimension >= 5 => persists; otherwise inconclusive. A divergent
    CF integral on its own decides nothing.
    """
    budget = budget or ClassifyBudget()
    evidence: list[dict] = []
    label = model.label

    if model.family == "deterministic":
        x0 = model.displacement.mean
        offset = float(np.linalg.norm(x0))
        evidence.append({"rule": "deterministic_offset", "offset_norm": offset})
        if offset > 0.0:
            return PersistenceVerdict("persists", "deterministic_offset", label,
                                      tuple(evidence))
        return PersistenceVerdict("extinguishes", "deterministic_zero_offset", label,
                                  tuple(evidence))
    if model.family == "no_displacement":
        evidence.append({"rule": "no_displacement"})
        return PersistenceVerdict("extinguishes", "no_displacement", label, tuple(evidence))

    if model.var_zero:
        rec, ev = classify_recurrence(model.displacement, model.dim, budget)
        evidence.append({"rule": "recurrence_for_var_zero", "recurrence": rec, **ev})
        if rec == "transient":
            return PersistenceVerdict("persists", "var_zero_transient", label, tuple(evidence))
        if rec == "recurrent":
            return PersistenceVerdict("extinguishes", "var_zero_recurrent", label,
                                      tuple(evidence))
        return PersistenceVerdict("inconclusive", "var_zero_recurrence_unknown", label,
                                  tuple(evidence))

    if not model.palm_samplable:
        evidence.append({"rule": "not_simple_diffuse",
                         "note": "criteria assume a simple diffuse cluster"})
        return PersistenceVerdict("inconclusive", "not_simple_diffuse", label, tuple(evidence))

    rec, ev = classify_recurrence(model.displacement, model.dim, budget)
    evidence.append({"rule": "recurrence", "recurrence": rec, **ev})
    if rec == "recurrent":
        return PersistenceVerdict("extinguishes", "recurrent_walk", label, tuple(evidence))

    tail = model.displacement.tail_index
    if tail is not None and 0.0 < tail < 1.0:
        hv = hawkes_tail_rule(tail)
        evidence.append({"rule": "heavy_tail", "tail_index": tail, "verdict": hv.verdict})
        if hv.verdict == "persists":
            return PersistenceVerdict("persists", "heavy_tail", label, tuple(evidence))

    if model.displacement.cf is not None:
        report = cf_integral(model.displacement.cf, model.dim, eps=budget.cf_eps,
                             quadrature_points=budget.cf_quadrature_points,
                             isotropic=model.displacement.isotropic,
                             rng=RngStream(budget.seed, 903))
        evidence.append({"rule": "cf_integral", **report.to_dict()})
        if report.verdict == "finite":
            return PersistenceVerdict("persists", "cf_integral_finite", label, tuple(evidence))
    else:
        evidence.append({"rule": "cf_integral", "note": "no analytic CF; skipped"})

    occ = occupation_convolution(model.displacement, budget.occupation_r,
                                 budget.occupation_horizons,
                                 budget.occupation_replicates,
                                 RngStream(budget.seed, 904))
    evidence.append({"rule": "occupation_convolution", **occ.to_dict()})
    if occ.verdict == "finite":
        return PersistenceVerdict("persists", "occupation_finite", label, tuple(evidence))

    eff = model.displacement.effective_dim
    if eff is None:
        eff = estimate_effective_dim(model.displacement, budget.effective_dim_samples,
                                     RngStream(budget.seed, 905))
    evidence.append({"rule": "effective_dim", "effective_dim": int(eff)})
    if eff >= 5:
        return PersistenceVerdict("persists", "effective_dim_ge_5", label, tuple(evidence))

    return PersistenceVerdict("inconclusive", "no_rule_fired", label, tuple(evidence))
