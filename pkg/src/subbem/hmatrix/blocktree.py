"""Block cluster trees: near/far classification of cluster pairs."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List

import numpy as np

from .cluster import Cluster, ClusterTree


def box_distance(a: np.ndarray, b: np.ndarray) -> float:
    gap = np.maximum(0.0, np.maximum(a[0] - b[1], b[0] - a[1]))
    return float(np.linalg.norm(gap))


def admissible(t: Cluster, s: Cluster, eta: float) -> bool:
    """``min(diam B_t, diam B_s) <= eta * dist(B_t, B_s)`` with a positive
    distance; touching boxes are never admissible."""
    d = box_distance(t.box, s.box)
    return d > 0.0 and min(t.diameter, s.diameter) <= eta * d


@dataclass
class Block:
    rows: Cluster
    cols: Cluster
    admissible: bool = False
    children: List[List["Block"]] = field(default_factory=list)  # grid

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def leaves(self):
        if self.is_leaf:
            yield self
        else:
            for row in self.children:
                for b in row:
                    yield from b.leaves()


@dataclass
class BlockClusterTree:
    root: Block
    rows: ClusterTree
    cols: ClusterTree
    eta: float

    def leaves(self):
        return list(self.root.leaves())

    def near(self):
        return [b for b in self.leaves() if not b.admissible]

    def far(self):
        return [b for b in self.leaves() if b.admissible]


def build_block_cluster_tree(rows: ClusterTree, cols: ClusterTree, eta: float = 1.0,
                             split_root: bool = True) -> BlockClusterTree:
    """Level-wise descent.  A leaf cluster stalls while its partner keeps
    splitting; a pair of leaves without admissibility is near field.  The
    root pair is always split (directional structure)."""
    if not 0.0 < eta <= 1.0:
        raise ValueError("eta must lie in (0, 1]")

    def build(t: Cluster, s: Cluster, top: bool) -> Block:
        b = Block(t, s)
        if not (top and split_root) and admissible(t, s, eta):
            b.admissible = True
            return b
        if t.is_leaf and s.is_leaf:
            return b
        tk = t.children or [t]
        sk = s.children or [s]
        b.children = [[build(x, y, False) for y in sk] for x in tk]
        return b

    return BlockClusterTree(build(rows.root, cols.root, True), rows, cols, eta)
