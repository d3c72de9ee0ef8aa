"""Explicitly stored trees and the cutting, pruning and regularisation
transforms used as convergence diagnostics.

Node arrays are in breadth-first order. The children of a node are
contiguous, grouped by type and, within a type, in birth order; every
transform here preserves that layout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from heavybrw.branching import BranchingModel, perron_frobenius
from heavybrw.displacement import DisplacementModel, sample_blocks
from heavybrw.pointproc import PointMeasure
from heavybrw.simulator import SimulationSetup, grow

DEFAULT_NODE_CAP = 1_000_000


@dataclass(frozen=True, eq=False)
class ExplicitTree:
    types: np.ndarray
    displacements: np.ndarray   # displacement of the edge into each node; 0 at the root
    positions: np.ndarray       # streamed positions
    parent: np.ndarray          # -1 at the root
    generation: np.ndarray
    depth: int
    bn: float
    Q: int

    @property
    def size(self) -> int:
        return int(self.types.size)

    @property
    def heavy(self) -> int:
        return self.Q - 1

    def level(self, g: int) -> np.ndarray:
        return np.flatnonzero(self.generation == g)

    def leaf_counts(self) -> np.ndarray:
        """Number of generation-``depth`` descendants of every node."""
        return _descendant_counts(self.parent, self.generation, self.depth,
                                  self.generation == self.depth)


def _descendant_counts(parent, depth_of, K, is_counted) -> np.ndarray:
    w = is_counted.astype(np.int64)
    for d in range(K, 0, -1):
        idx = np.flatnonzero(depth_of == d)
        if idx.size:
            w += np.bincount(parent[idx], weights=w[idx], minlength=w.size).astype(np.int64)
    return w


def grow_tree(setup: SimulationSetup, n: int, rng: np.random.Generator,
              node_cap: int = DEFAULT_NODE_CAP) -> ExplicitTree:
    """Grow ``n`` generations keeping the full genealogy."""
    from dataclasses import replace

    setup = replace(setup, population_cap=min(setup.population_cap, node_cap))
    _, _, history = grow(setup, n, rng, keep_history=True)
    sizes = np.array([s.size for s in history])
    if sizes.sum() > node_cap:
        raise RuntimeError(f"tree has {sizes.sum()} nodes, cap is {node_cap}")
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    parent = [np.full(1, -1, dtype=np.int64)]
    for g in range(1, n + 1):
        parent.append(history[g].parent_index + offsets[g - 1])
    return ExplicitTree(
        types=np.concatenate([s.types for s in history]),
        displacements=np.concatenate([s.displacements for s in history]),
        positions=np.concatenate([s.positions for s in history]),
        parent=np.concatenate(parent),
        generation=np.repeat(np.arange(n + 1), sizes),
        depth=n,
        bn=setup.bn(n),
        Q=setup.bmodel.Q,
    )


def path_sums(tree: ExplicitTree) -> np.ndarray:
    """Positions of the final generation recomputed by summing edge
    displacements root to leaf."""
    leaves = tree.level(tree.depth)
    paths = np.empty((tree.depth, leaves.size), dtype=np.int64)
    cur = leaves
    for g in range(tree.depth - 1, -1, -1):
        paths[g] = cur
        cur = tree.parent[cur]
    s = np.zeros(leaves.size)
    for g in range(tree.depth):
        s = s + tree.displacements[paths[g]]
    return s


def tilde_measure(tree: ExplicitTree, threshold: float = 0.0) -> PointMeasure:
    """Single-big-jump process: every heavy edge weighted by its leaf count,
    restricted to ``|X| > threshold`` (absolute units)."""
    w = tree.leaf_counts()
    sel = (tree.types == tree.heavy) & (tree.generation >= 1) & (np.abs(tree.displacements) > threshold)
    return PointMeasure.from_points(tree.displacements[sel] / tree.bn, w[sel])


# ---------------------------------------------------------------------------
# forests


@dataclass(frozen=True, eq=False)
class Forest:
    """Depth-``K`` subtrees stored together.

    ``weight`` is the number of depth-``K`` descendants that are not padding
    nodes; padding nodes added by regularisation have ``added`` set.
    """

    types: np.ndarray
    displacements: np.ndarray
    parent: np.ndarray
    depth: np.ndarray
    added: np.ndarray
    weight: np.ndarray
    K: int
    Q: int
    bn: float

    @property
    def size(self) -> int:
        return int(self.types.size)

    @property
    def roots(self) -> np.ndarray:
        return np.flatnonzero(self.depth == 0)

    def point_measure(self, threshold: float = 0.0) -> PointMeasure:
        sel = ((self.types == self.Q - 1) & (self.depth >= 1) & (self.weight > 0)
               & (np.abs(self.displacements) > threshold))
        return PointMeasure.from_points(self.displacements[sel] / self.bn, self.weight[sel])


CutForest = Forest
WeightedForest = Forest


def _with_weights(types, disp, parent, depth, added, K, Q, bn) -> Forest:
    counted = (depth == K) & ~added
    w = _descendant_counts(parent, depth, K, counted)
    return Forest(types, disp, parent, depth, added, w, K, Q, bn)


def cut_forest(tree: ExplicitTree, K: int, threshold: float = 0.0) -> tuple[Forest, PointMeasure]:
    """Subtrees rooted at generation ``depth - K`` and the process that keeps
    only heavy ancestors within ``K`` edges of each leaf."""
    n = tree.depth
    if not 1 <= K <= n:
        raise ValueError(f"K must lie in [1, {n}]")
    keep = np.flatnonzero(tree.generation >= n - K)
    remap = np.full(tree.size, -1, dtype=np.int64)
    remap[keep] = np.arange(keep.size)
    depth = tree.generation[keep] - (n - K)
    parent = np.where(depth == 0, -1, remap[tree.parent[keep]])
    forest = _with_weights(tree.types[keep], tree.displacements[keep], parent, depth,
                           np.zeros(keep.size, dtype=bool), K, tree.Q, tree.bn)
    return forest, forest.point_measure(threshold)


def _sibling_rank(parent, types, Q, rng=None) -> np.ndarray:
    """Rank of every node among siblings of its own type (birth order, or a
    uniformly random order when ``rng`` is given)."""
    key = parent * Q + types
    if rng is None:
        order = np.argsort(key, kind="stable")
    else:
        order = np.lexsort((rng.random(key.size), key))
    sk = key[order]
    start = np.searchsorted(sk, sk, side="left")
    rank = np.empty(key.size, dtype=np.int64)
    rank[order] = np.arange(key.size) - start
    return rank


def prune_forest(forest: Forest, B: int, rule: str = "first",
                 rng: np.random.Generator | None = None,
                 threshold: float = 0.0) -> tuple[Forest, PointMeasure]:
    """Keep at most ``B`` children of each type per node, top down.

    ``rule="first"`` keeps the first ``B`` in birth order; ``rule="random"``
    keeps a uniformly random subset and needs ``rng``.
    """
    if B < 1:
        raise ValueError("B must be at least 1")
    if rule not in ("first", "random"):
        raise ValueError(f"unknown pruning rule {rule!r}")
    if rule == "random" and rng is None:
        raise ValueError("random pruning needs an rng")
    rank = _sibling_rank(forest.parent, forest.types, forest.Q,
                         rng if rule == "random" else None)
    keep = forest.depth == 0
    for d in range(1, forest.K + 1):
        idx = np.flatnonzero(forest.depth == d)
        keep[idx] = keep[forest.parent[idx]] & (rank[idx] < B)
    kept = np.flatnonzero(keep)
    remap = np.full(forest.size, -1, dtype=np.int64)
    remap[kept] = np.arange(kept.size)
    parent = np.where(forest.depth[kept] == 0, -1, remap[forest.parent[kept]])
    pruned = _with_weights(forest.types[kept], forest.displacements[kept], parent,
                           forest.depth[kept], forest.added[kept], forest.K, forest.Q, forest.bn)
    return pruned, pruned.point_measure(threshold)


def truncated_mean_matrix(bmodel: BranchingModel, B: int) -> tuple[np.ndarray, float]:
    """Means of the offspring counts capped at ``B`` and their Perron root."""
    if B < 1:
        raise ValueError("B must be at least 1")
    law = bmodel.offspring
    MB = np.array([law.probs[q] @ np.minimum(law.support[q], B) for q in range(law.Q)])
    return MB, perron_frobenius(MB).rho


def regularize_forest(pruned: Forest, B: int, dmodel: DisplacementModel,
                      rng: np.random.Generator) -> Forest:
    """Pad every node to exactly ``B`` children of each type.

    Padding children get weight 0; a node with ``l < B`` children of type
    ``p`` receives positions ``l..B-1`` of a freshly drawn type-``p`` block.
    The induced point measure is unchanged.
    """
    Q, K = pruned.Q, pruned.K
    rank = _sibling_rank(pruned.parent, pruned.types, Q)
    if pruned.size and np.any(rank[pruned.depth >= 1] >= B):
        raise ValueError(f"forest has more than {B} children of one type; prune first")

    level = np.flatnonzero(pruned.depth == 0)
    out_types = [pruned.types[level]]
    out_disp = [pruned.displacements[level]]
    out_parent = [np.full(level.size, -1, dtype=np.int64)]
    out_added = [pruned.added[level].copy()]
    # index in the input forest of each current node (-1 for padding)
    src = level.copy()
    base = 0
    for d in range(K):
        m = src.size
        slots = m * Q * B
        s_types = np.tile(np.repeat(np.arange(Q, dtype=np.int64), B), m)
        s_parent = base + np.repeat(np.arange(m, dtype=np.int64), Q * B)
        s_src = np.full(slots, -1, dtype=np.int64)
        s_disp = np.empty(slots)

        children = np.flatnonzero(pruned.depth == d + 1)
        local = np.full(pruned.size, -1, dtype=np.int64)
        local[src[src >= 0]] = np.flatnonzero(src >= 0)
        if children.size:
            pl = local[pruned.parent[children]]
            slot = (pl * Q + pruned.types[children]) * B + rank[children]
            s_src[slot] = children
            s_disp[slot] = pruned.displacements[children]

        filled = (s_src >= 0).reshape(m * Q, B)
        n_have = filled.sum(axis=1)
        for p in range(Q):
            groups = np.flatnonzero((np.arange(m * Q) % Q == p) & (n_have < B))
            if not groups.size:
                continue
            blocks = sample_blocks(dmodel, p, groups.size, B, rng)
            pad = ~filled[groups]
            s_disp.reshape(m * Q, B)[groups[:, None], np.arange(B)[None, :]] = np.where(
                pad, blocks, s_disp.reshape(m * Q, B)[groups])

        base += m
        out_types.append(s_types)
        out_disp.append(s_disp)
        out_parent.append(s_parent)
        out_added.append(np.where(s_src >= 0, pruned.added[np.maximum(s_src, 0)], True))
        src = s_src

    types = np.concatenate(out_types)
    parent = np.concatenate(out_parent)
    sizes = [a.size for a in out_types]
    depth = np.repeat(np.arange(K + 1), sizes)
    return _with_weights(types, np.concatenate(out_disp), parent, depth,
                         np.concatenate(out_added), K, Q, pruned.bn)
