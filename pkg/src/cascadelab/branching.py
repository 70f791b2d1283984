"""Genealogy trees and critical branching random walks.

A tree stores its nodes in flat arrays (location row, generation, parent
index) so one generation of growth is a handful of vectorized draws: counts
for all current leaves at once, then all displacements in one block. Node 0
is always the root; -1 marks "no parent".
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import PointPattern, Region, as_point, count_in, _gen_of
from .clusters import ClusterModel

__all__ = [
    "GenealogyTree",
    "OutgrownResult",
    "new_root_tree",
    "grow_generation",
    "simulate_cumulative_brw",
    "simulate_outgrown_brw",
    "generation_counts",
    "tree_csv_rows",
]

TREE_CSV_HEADER = ("node_id", "parent_id", "generation")


@dataclass(frozen=True)
class GenealogyTree:
    """Rooted tree of spatial positions grown generation by generation.

    max_generation advances even through an extinct front, so a depth-n
    cumulative tree always reports max_generation == n.
    """

    locations: np.ndarray   # (n_nodes, dim)
    generations: np.ndarray  # (n_nodes,) int
    parents: np.ndarray      # (n_nodes,) int, -1 for the root
    max_generation: int

    @property
    def dim(self) -> int:
        return self.locations.shape[1]

    @property
    def n_nodes(self) -> int:
        return self.locations.shape[0]

    @property
    def root_index(self) -> int:
        return 0

    def leaf_indices(self) -> np.ndarray:
        """Nodes on the current front (generation == max_generation)."""
        return np.nonzero(self.generations == self.max_generation)[0]

    def pattern(self) -> PointPattern:
        return PointPattern(self.locations, self.dim)

    def count_in(self, region: Region) -> int:
        return count_in(self.pattern(), region)


def new_root_tree(root) -> GenealogyTree:
    r = as_point(root)
    return GenealogyTree(
        locations=r.reshape(1, -1),
        generations=np.zeros(1, dtype=np.int64),
        parents=np.full(1, -1, dtype=np.int64),
        max_generation=0,
    )


def grow_generation(tree: GenealogyTree, model: ClusterModel, rng) -> GenealogyTree:
    """Attach one offspring cluster to every current leaf.

    Counts are drawn for the leaves in index order, then displacements for
    the concatenated offspring block, which pins down the draw order for
    reproducibility. An empty front still advances max_generation: extinction
    is absorbing but the depth index keeps counting.
    """
    if tree.dim != model.dim:
        raise ValueError("tree and model dimensions differ")
    gen = _gen_of(rng)
    leaves = tree.leaf_indices()
    new_max = tree.max_generation + 1
    if leaves.size == 0:
        return replace(tree, max_generation=new_max)
    counts = model.count_law.sample(gen, leaves.size)
    total = int(counts.sum())
    if total == 0:
        return replace(tree, max_generation=new_max)
    parent_rows = np.repeat(leaves, counts)
    offsets = model.displacement.sample(gen, total)
    return GenealogyTree(
        locations=np.vstack([tree.locations, tree.locations[parent_rows] + offsets]),
        generations=np.concatenate(
            [tree.generations, np.full(total, new_max, dtype=np.int64)]),
        parents=np.concatenate([tree.parents, parent_rows]),
        max_generation=new_max,
    )


def simulate_cumulative_brw(model: ClusterModel, root, n: int, rng) -> GenealogyTree:
    """Cumulative critical branching random walk: all generations 0..n kept."""
    if n < 0:
        raise ValueError("depth must be nonnegative")
    tree = new_root_tree(as_point(root, model.dim))
    for _ in range(int(n)):
        tree = grow_generation(tree, model, rng)
    return tree


@dataclass(frozen=True)
class OutgrownResult:
    tree: GenealogyTree
    extinct: bool
    truncated: bool


def simulate_outgrown_brw(model: ClusterModel, root, rng,
                          gen_cap: int = 10_000) -> OutgrownResult:
    """Grow until the front dies out, or stop (flagged) at gen_cap.

    Only defined for count variance > 0: a variance-zero critical count never
    goes extinct and the full tree would be infinite. gen_cap == 0 returns
    the bare root, truncated by convention.
    """
    if model.var_zero:
        raise ValueError(
            "outgrown tree is almost surely infinite for a variance-zero count law")
    if gen_cap < 0:
        raise ValueError("gen_cap must be nonnegative")
    tree = new_root_tree(as_point(root, model.dim))
    if gen_cap == 0:
        return OutgrownResult(tree, extinct=False, truncated=True)
    for _ in range(int(gen_cap)):
        tree = grow_generation(tree, model, rng)
        if tree.leaf_indices().size == 0:
            return OutgrownResult(tree, extinct=True, truncated=False)
    return OutgrownResult(tree, extinct=False, truncated=True)


def generation_counts(tree: GenealogyTree) -> np.ndarray:
    """Population per generation, length max_generation + 1 (zeros persist
    after extinction)."""
    return np.bincount(tree.generations, minlength=tree.max_generation + 1)


def tree_csv_rows(tree: GenealogyTree) -> tuple[list[str], list[list]]:
    """Header and rows for the flat tree dump: node_id, parent_id,
    generation, then one column per coordinate."""
    header = list(TREE_CSV_HEADER) + [f"x{i + 1}" for i in range(tree.dim)]
    rows = []
    for i in range(tree.n_nodes):
        rows.append([i, int(tree.parents[i]), int(tree.generations[i])]
                    + [float(v) for v in tree.locations[i]])
    return header, rows
