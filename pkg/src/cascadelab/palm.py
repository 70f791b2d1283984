"""Palm versions of the cascade: the tree seen from a typical point.

Two constructions are implemented. The forward/backward (FB) chain tracks
the depth L_n of the typical point inside its tree: a forward move attaches
fresh clusters to the current deepest generation, a backward move reroots
the tree at a newly drawn parent whose other children (the siblings) each
carry an independent cumulative tree of the current depth. The direct
construction assembles the infinite-depth limit from a backward spine with
independent outgrown trees hanging off the origin and every sibling.

Levels are stored relative to the origin point (level 0); the current root
sits at level -l, the current leaf front at level n - l.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    Ball,
    EstimatorResult,
    PointPattern,
    Region,
    RngStream,
    count_in,
    mc_estimate,
    parallel_map,
    summarize_values,
    _gen_of,
)
from .clusters import ClusterModel, PalmSamplingError, sample_parent_siblings
from .branching import simulate_cumulative_brw, simulate_outgrown_brw

__all__ = [
    "PalmTreeState",
    "BackwardSpine",
    "DirectPalmTree",
    "LocalFinitenessReport",
    "step_L",
    "sample_L_terminal",
    "palm_origin_state",
    "palm_forward_step",
    "palm_backward_step",
    "simulate_palm_fb",
    "simulate_palm_direct",
    "extend_palm_direct",
    "truncated_count",
    "truncation_ratio",
    "palm_ball_leq_prob",
    "local_finiteness_diagnostic",
    "palm_csv_rows",
    "PALM_CSV_HEADER",
]

PLATEAU_THRESHOLD = 0.02  # relative growth over the final schedule doubling


def step_L(l: int, n: int, rng) -> int:
    """One transition of the typical-point depth chain.

    From depth l at step n the chain moves to l+1 with probability
    (l+1)/(n+2) and stays at l otherwise; started at 0 it is uniform on
    {0, ..., n} after n steps.
    """
    l = int(l)
    n = int(n)
    if not 0 <= l <= n:
        raise ValueError(f"depth l={l} must lie in [0, n={n}]")
    u = _gen_of(rng).uniform()
    return l + 1 if u < (l + 1.0) / (n + 2.0) else l


def sample_L_terminal(n: int, size: int, gen: np.random.Generator) -> np.ndarray:
    """Vectorized terminal values L_n over many independent chains."""
    l = np.zeros(int(size), dtype=np.int64)
    for m in range(int(n)):
        l += gen.uniform(size=l.size) < (l + 1.0) / (m + 2.0)
    return l


@dataclass(frozen=True)
class PalmTreeState:
    """FB-construction state: a rooted tree with a marked origin point.

    levels are generations relative to the origin; the root is the single
    parentless node at level -l and the leaf front lives at level n - l.
    """

    locations: np.ndarray
    levels: np.ndarray
    parents: np.ndarray
    n: int
    l: int
    root_index: int
    spine_indices: tuple
    origin_index: int = 0

    @property
    def dim(self) -> int:
        return self.locations.shape[1]

    @property
    def n_nodes(self) -> int:
        return self.locations.shape[0]

    @property
    def leaf_level(self) -> int:
        return self.n - self.l

    def leaf_indices(self) -> np.ndarray:
        return np.nonzero(self.levels == self.leaf_level)[0]

    def pattern(self) -> PointPattern:
        return PointPattern(self.locations, self.dim)

    def count_in(self, region: Region) -> int:
        return count_in(self.pattern(), region)


def palm_origin_state(model: ClusterModel) -> PalmTreeState:
    """The depth-0 Palm tree: a single point at the origin."""
    if not model.palm_samplable:
        raise PalmSamplingError(
            f"family {model.family!r} is not simple and diffuse; Palm states are undefined")
    return PalmTreeState(
        locations=np.zeros((1, model.dim)),
        levels=np.zeros(1, dtype=np.int64),
        parents=np.full(1, -1, dtype=np.int64),
        n=0, l=0, root_index=0, spine_indices=(0,),
    )


def palm_forward_step(state: PalmTreeState, model: ClusterModel, rng) -> PalmTreeState:
    """Attach one offspring cluster to every node on the leaf front.

    An extinct front only increments n: the front stays empty one level
    deeper. The typical point's depth l does not change.
    """
    gen = _gen_of(rng)
    leaves = state.leaf_indices()
    if leaves.size == 0:
        return PalmTreeState(state.locations, state.levels, state.parents,
                             state.n + 1, state.l, state.root_index,
                             state.spine_indices, state.origin_index)
    counts = model.count_law.sample(gen, leaves.size)
    total = int(counts.sum())
    if total == 0:
        return PalmTreeState(state.locations, state.levels, state.parents,
                             state.n + 1, state.l, state.root_index,
                             state.spine_indices, state.origin_index)
    parent_rows = np.repeat(leaves, counts)
    offsets = model.displacement.sample(gen, total)
    return PalmTreeState(
        locations=np.vstack([state.locations, state.locations[parent_rows] + offsets]),
        levels=np.concatenate(
            [state.levels, np.full(total, state.leaf_level + 1, dtype=np.int64)]),
        parents=np.concatenate([state.parents, parent_rows]),
        n=state.n + 1, l=state.l, root_index=state.root_index,
        spine_indices=state.spine_indices, origin_index=state.origin_index,
    )


def palm_backward_step(state: PalmTreeState, model: ClusterModel, rng) -> PalmTreeState:
    """Reroot the tree one generation up.

    Draws the parent of the current root together with the root's siblings;
    every sibling carries an independent cumulative tree of depth n (the
    current step index), so the new state spans levels -(l+1) .. n - l and
    the leaf front level is unchanged.
    """
    ps = sample_parent_siblings(model, rng)
    root_loc = state.locations[state.root_index]

    locs = [state.locations]
    levels = [state.levels]
    parents = [state.parents.copy()]
    offset = state.n_nodes

    new_root = offset
    locs.append((root_loc + ps.parent).reshape(1, -1))
    levels.append(np.array([-(state.l + 1)], dtype=np.int64))
    parents.append(np.array([-1], dtype=np.int64))
    parents[0][state.root_index] = new_root
    offset += 1

    for sib_offset in ps.siblings.points:
        sub = simulate_cumulative_brw(model, root_loc + sib_offset, state.n, rng)
        locs.append(sub.locations)
        levels.append(-state.l + sub.generations.astype(np.int64))
        remapped = sub.parents + offset
        remapped[0] = new_root
        parents.append(remapped)
        offset += sub.n_nodes

    return PalmTreeState(
        locations=np.vstack(locs),
        levels=np.concatenate(levels),
        parents=np.concatenate(parents),
        n=state.n + 1, l=state.l + 1, root_index=new_root,
        spine_indices=state.spine_indices + (new_root,),
        origin_index=state.origin_index,
    )


def simulate_palm_fb(model: ClusterModel, n: int, rng) -> PalmTreeState:
    """Run the FB chain for n steps from the origin-only state.

    The move at step m is backward with probability (l+1)/(m+2), mirroring
    the depth chain, so the marginal at depth n is the Palm version of the
    level-n cascade: node totals are size-biased cumulative-tree totals and
    there is exactly one point at the origin.
    """
    state = palm_origin_state(model)
    for m in range(int(n)):
        if step_L(state.l, m, rng) > state.l:
            state = palm_backward_step(state, model, rng)
        else:
            state = palm_forward_step(state, model, rng)
    return state


@dataclass(frozen=True)
class BackwardSpine:
    """Ancestor line of the typical point: positions of the origin's parent,
    grandparent, ... Increments are distributed as negated displacements."""

    positions: np.ndarray  # (depth + 1, dim), row 0 is the origin

    @property
    def depth(self) -> int:
        return self.positions.shape[0] - 1

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.positions, axis=0)


@dataclass(frozen=True)
class DirectPalmTree:
    """Direct (infinite-depth) Palm tree, truncated at spine_depth ancestor
    levels and gen_cap generations per outgrown tree."""

    locations: np.ndarray
    levels: np.ndarray
    parents: np.ndarray
    is_spine: np.ndarray
    spine: BackwardSpine
    gen_cap: int
    truncated: bool
    origin_index: int = 0

    @property
    def dim(self) -> int:
        return self.locations.shape[1]

    @property
    def n_nodes(self) -> int:
        return self.locations.shape[0]

    @property
    def spine_depth(self) -> int:
        return self.spine.depth

    def pattern(self) -> PointPattern:
        return PointPattern(self.locations, self.dim)

    def count_in(self, region: Region) -> int:
        return count_in(self.pattern(), region)


def _require_direct_ok(model: ClusterModel) -> None:
    if not model.palm_samplable:
        raise PalmSamplingError(
            f"family {model.family!r} is not simple and diffuse; "
            "the direct Palm construction is undefined")
    if model.var_zero:
        raise ValueError(
            "direct Palm construction needs count variance > 0 "
            "(outgrown trees are infinite otherwise)")


def simulate_palm_direct(model: ClusterModel, spine_depth: int, gen_cap: int,
                         rng) -> DirectPalmTree:
    """Build the direct Palm tree: an outgrown tree at the origin, then for
    each ancestor level an appended spine node plus siblings, every sibling
    carrying an independent outgrown tree."""
    _require_direct_ok(model)
    if spine_depth < 0:
        raise ValueError("spine_depth must be nonnegative")
    base = simulate_outgrown_brw(model, np.zeros(model.dim), rng, gen_cap)
    tree = DirectPalmTree(
        locations=base.tree.locations,
        levels=base.tree.generations.astype(np.int64),
        parents=base.tree.parents.copy(),
        is_spine=np.concatenate([[True], np.zeros(base.tree.n_nodes - 1, dtype=bool)]),
        spine=BackwardSpine(np.zeros((1, model.dim))),
        gen_cap=int(gen_cap),
        truncated=base.truncated,
    )
    return extend_palm_direct(tree, model, int(spine_depth), rng)


def extend_palm_direct(tree: DirectPalmTree, model: ClusterModel,
                       new_spine_depth: int, rng) -> DirectPalmTree:
    """Append ancestor levels up to new_spine_depth; existing nodes are kept
    verbatim, so ball counts are pathwise nondecreasing in spine depth."""
    if new_spine_depth < tree.spine_depth:
        raise ValueError("cannot shrink a direct Palm tree")
    if new_spine_depth == tree.spine_depth:
        return tree

    locs = [tree.locations]
    levels = [tree.levels]
    parents = [tree.parents.copy()]
    spine_flags = [tree.is_spine]
    spine_positions = [tree.spine.positions]
    offset = tree.n_nodes
    truncated = tree.truncated
    prev_spine_index = int(np.nonzero(tree.is_spine)[0][-1]) if tree.spine_depth > 0 else 0
    prev_spine_level = -tree.spine_depth
    prev_spine_loc = tree.spine.positions[-1]

    for _ in range(tree.spine_depth, new_spine_depth):
        ps = sample_parent_siblings(model, rng)
        new_idx = offset
        new_loc = prev_spine_loc + ps.parent
        locs.append(new_loc.reshape(1, -1))
        levels.append(np.array([prev_spine_level - 1], dtype=np.int64))
        parents.append(np.array([-1], dtype=np.int64))
        spine_flags.append(np.ones(1, dtype=bool))
        _reparent(parents, prev_spine_index, new_idx)
        offset += 1

        for sib_offset in ps.siblings.points:
            sib_loc = prev_spine_loc + sib_offset
            grown = simulate_outgrown_brw(model, sib_loc, rng, tree.gen_cap)
            truncated = truncated or grown.truncated
            locs.append(grown.tree.locations)
            levels.append(prev_spine_level + grown.tree.generations.astype(np.int64))
            remapped = grown.tree.parents + offset
            remapped[0] = new_idx
            parents.append(remapped)
            spine_flags.append(np.zeros(grown.tree.n_nodes, dtype=bool))
            offset += grown.tree.n_nodes

        spine_positions.append(new_loc.reshape(1, -1))
        prev_spine_index = new_idx
        prev_spine_level -= 1
        prev_spine_loc = new_loc

    return DirectPalmTree(
        locations=np.vstack(locs),
        levels=np.concatenate(levels),
        parents=np.concatenate(parents),
        is_spine=np.concatenate(spine_flags),
        spine=BackwardSpine(np.vstack(spine_positions)),
        gen_cap=tree.gen_cap,
        truncated=truncated,
        origin_index=tree.origin_index,
    )


def _reparent(parent_blocks: list, node_index: int, new_parent: int) -> None:
    """Set parents[node_index] = new_parent across the block list."""
    base = 0
    for block in parent_blocks:
        if node_index < base + block.size:
            block[node_index - base] = new_parent
            return
        base += block.size
    raise IndexError(node_index)


def truncated_count(tree, r: float, k: int) -> int:
    """Number of tree points whose same-tree neighborhood B_x^r (open ball,
    the point itself included) holds at most k points."""
    pts = tree.locations
    m = pts.shape[0]
    if m == 0:
        return 0
    r2 = float(r) ** 2
    kept = 0
    chunk = 2048
    for start in range(0, m, chunk):
        block = pts[start:start + chunk]
        d2 = np.sum((block[:, None, :] - pts[None, :, :]) ** 2, axis=2)
        neigh = np.count_nonzero(d2 < r2, axis=1)
        kept += int(np.count_nonzero(neigh <= k))
    return kept


def truncation_ratio(model: ClusterModel, n: int, r: float, k: int,
                     replicates: int, rng: RngStream,
                     confidence: float = 0.99, threads: int = 1) -> EstimatorResult:
    """Estimate E||chi_n^{r,k}|| / (n+1): the surviving mass fraction after
    deleting points crowded by more than k same-tree neighbors within r.
    Equals the Palm probability P{palm tree puts <= k points in B_0^r}."""
    if k < 0 or r <= 0:
        raise ValueError("need k >= 0 and r > 0")

    def one(stream: RngStream) -> float:
        tree = simulate_cumulative_brw(model, np.zeros(model.dim), n, stream)
        return truncated_count(tree, r, k) / (n + 1.0)

    return mc_estimate(one, replicates, rng, confidence, threads)


def palm_ball_leq_prob(model: ClusterModel, n: int, r: float, k: int,
                       replicates: int, rng: RngStream,
                       confidence: float = 0.99, threads: int = 1) -> EstimatorResult:
    """Monte Carlo P{FB Palm tree at depth n puts at most k points in B_0^r}."""
    ball = Ball(np.zeros(model.dim), float(r))

    def one(stream: RngStream) -> float:
        state = simulate_palm_fb(model, n, stream)
        return 1.0 if state.count_in(ball) <= k else 0.0

    return mc_estimate(one, replicates, rng, confidence, threads)


@dataclass(frozen=True)
class LocalFinitenessReport:
    verdict: str                 # "finite" | "infinite" | "inconclusive"
    rel_increase: float
    rel_increase_ci: tuple
    threshold: float
    spine_schedule: tuple
    curve: tuple                 # one dict per schedule point
    replicates: int
    gen_cap: int
    truncation_rate: float

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "rel_increase": self.rel_increase,
            "rel_increase_ci": list(self.rel_increase_ci),
            "threshold": self.threshold,
            "spine_schedule": list(self.spine_schedule),
            "curve": [dict(c) for c in self.curve],
            "replicates": self.replicates,
            "gen_cap": self.gen_cap,
            "truncation_rate": self.truncation_rate,
        }


def local_finiteness_diagnostic(model: ClusterModel, r: float, spine_schedule,
                                replicates: int, rng: RngStream,
                                gen_cap: int = 2000, confidence: float = 0.99,
                                bootstrap: int = 400) -> LocalFinitenessReport:
    """Decide whether direct-Palm ball counts plateau as the spine deepens.

    Each replicate grows one direct tree through the whole schedule (counts
    are pathwise nondecreasing), then the relative mean increase over the
    final schedule step - the schedule should be geometric so that step is a
    doubling - is bootstrap-tested against PLATEAU_THRESHOLD. Local
    finiteness is a zero-one event, so a clear exceedance reads "infinite".
    """
    schedule = sorted(int(s) for s in spine_schedule)
    if len(schedule) < 2 or schedule[0] < 0:
        raise ValueError("need an increasing schedule with at least two points")
    ball = Ball(np.zeros(model.dim), float(r))

    def one(i: int):
        stream = rng.substream(i)
        tree = simulate_palm_direct(model, schedule[0], gen_cap, stream)
        counts = [tree.count_in(ball)]
        for s in schedule[1:]:
            tree = extend_palm_direct(tree, model, s, stream)
            counts.append(tree.count_in(ball))
        return counts, tree.truncated

    results = parallel_map(one, int(replicates), 1)
    counts = np.array([c for c, _ in results], dtype=float)
    truncation_rate = float(np.mean([t for _, t in results]))

    curve = []
    for j, s in enumerate(schedule):
        est = summarize_values(counts[:, j], rng.seed, confidence)
        curve.append({
            "spine_depth": s,
            "mean": est.mean,
            "ci_half_width": est.ci_half_width,
            "q50": float(np.quantile(counts[:, j], 0.5)),
            "q90": float(np.quantile(counts[:, j], 0.9)),
        })

    inc = counts[:, -1] - counts[:, -2]
    final_mean = counts[:, -1].mean()
    rel = float(inc.mean() / final_mean)
    boot_gen = rng.substream(int(replicates) + 1).gen
    boot = np.empty(int(bootstrap))
    m = counts.shape[0]
    for b in range(int(bootstrap)):
        idx = boot_gen.integers(m, size=m)
        denom = counts[idx, -1].mean()
        boot[b] = inc[idx].mean() / denom if denom > 0 else 0.0
    lo = float(np.quantile(boot, (1.0 - confidence) / 2.0))
    hi = float(np.quantile(boot, 1.0 - (1.0 - confidence) / 2.0))
    if hi < PLATEAU_THRESHOLD:
        verdict = "finite"
    elif lo > PLATEAU_THRESHOLD:
        verdict = "infinite"
    else:
        verdict = "inconclusive"
    return LocalFinitenessReport(
        verdict=verdict,
        rel_increase=rel,
        rel_increase_ci=(lo, hi),
        threshold=PLATEAU_THRESHOLD,
        spine_schedule=tuple(schedule),
        curve=tuple(curve),
        replicates=int(replicates),
        gen_cap=int(gen_cap),
        truncation_rate=truncation_rate,
    )


PALM_CSV_HEADER = ("node_id", "parent_id", "generation_from_current_root",
                   "is_origin", "is_spine")


def palm_csv_rows(state) -> tuple[list[str], list[list]]:
    """Flat dump of a Palm tree (FB state or direct tree)."""
    d = state.dim
    header = list(PALM_CSV_HEADER) + [f"x{i + 1}" for i in range(d)]
    if isinstance(state, PalmTreeState):
        root_level = -state.l
        spine = set(state.spine_indices)
    else:
        root_level = -state.spine_depth
        spine = set(np.nonzero(state.is_spine)[0].tolist())
    rows = []
    for i in range(state.n_nodes):
        rows.append([
            i,
            int(state.parents[i]),
            int(state.levels[i] - root_level),
            int(i == state.origin_index),
            int(i in spine),
        ] + [float(v) for v in state.locations[i]])
    return header, rows
