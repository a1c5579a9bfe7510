"""Geometrically balanced cluster trees over axis-aligned boxes."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np


@dataclass
class Cluster:
    """Index range ``[start, stop)`` of the tree's permutation."""
    start: int
    stop: int
    box: np.ndarray  # (2, d): lower and upper corner
    level: int
    children: List["Cluster"] = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.stop - self.start

    @property
    def is_leaf(self) -> bool:
        return not self.children

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.box[1] - self.box[0]))

    def leaves(self):
        if self.is_leaf:
            yield self
        else:
            for c in self.children:
                yield from c.leaves()

    def nodes(self):
        yield self
        for c in self.children:
            yield from c.nodes()

    @property
    def depth(self) -> int:
        return 1 + max((c.depth for c in self.children), default=0)


@dataclass
class ClusterTree:
    root: Cluster
    perm: np.ndarray  # position -> original index
    boxes: np.ndarray  # (N, 2, d) characteristic boxes, original order
    n_min: int

    @property
    def size(self) -> int:
        return len(self.perm)

    def indices(self, c: Cluster) -> np.ndarray:
        return self.perm[c.start:c.stop]

    def rebox(self, boxes) -> "ClusterTree":
        """Same partition, bounding boxes minimised over other characteristic
        boxes (e.g. basis supports instead of collocation points)."""
        boxes = _as_boxes(boxes)
        if len(boxes) != len(self.perm):
            raise ValueError("box count does not match the tree")

        def copy(c):
            idx = self.perm[c.start:c.stop]
            return Cluster(c.start, c.stop, _bound(boxes[idx]), c.level, [copy(k) for k in c.children])
        return ClusterTree(copy(self.root), self.perm, boxes, self.n_min)


def _as_boxes(boxes) -> np.ndarray:
    b = np.asarray(boxes, dtype=float)
    if b.ndim == 2:  # points
        b = np.stack([b, b], axis=1)
    if b.ndim != 3 or b.shape[1] != 2 or not np.all(np.isfinite(b)):
        raise ValueError("boxes must be finite (N, 2, d) arrays or (N, d) points")
    return b


def _bound(b: np.ndarray) -> np.ndarray:
    return np.array([b[:, 0].min(axis=0), b[:, 1].max(axis=0)])


def _split(idx, boxes, start, level, n_min):
    box = _bound(boxes[idx])
    node = Cluster(start, start + len(idx), box, level)
    if len(idx) <= n_min:
        return node, idx
    ext = box[1] - box[0]
    axis = int(np.argmax(ext))  # first axis wins ties
    centre = 0.5 * (boxes[idx, 0, axis] + boxes[idx, 1, axis])
    cut = 0.5 * (box[0, axis] + box[1, axis])
    left = idx[centre <= cut]
    right = idx[centre > cut]
    if len(left) == 0 or len(right) == 0:
        # all centres on one side of the plane: split by the median instead
        order = idx[np.argsort(centre, kind="stable")]
        h = len(idx) // 2
        left, right = order[:h], order[h:]
    a, pa = _split(left, boxes, start, level + 1, n_min)
    b, pb = _split(right, boxes, start + len(left), level + 1, n_min)
    node.children = [a, b]
    return node, np.concatenate([pa, pb])


def build_cluster_tree(boxes, n_min: int = 16) -> ClusterTree:
    """Bisect by a plane through the box centre normal to its largest
    extension until clusters hold at most ``n_min`` indices."""
    if n_min < 1:
        raise ValueError("n_min must be positive")
    boxes = _as_boxes(boxes)
    if len(boxes) == 0:
        raise ValueError("at least one index is required")
    root, perm = _split(np.arange(len(boxes)), boxes, 0, 0, n_min)
    return ClusterTree(root, perm, boxes, n_min)


def directional_tree(tree: ClusterTree, directions: int = 2) -> ClusterTree:
    """Tree over ``directions * N`` direction-major indices whose root splits
    by spatial direction; below it every direction repeats ``tree``."""
    N = tree.size

    def shift(c, off):
        return Cluster(c.start + off, c.stop + off, c.box, c.level + 1, [shift(k, off) for k in c.children])

    kids = [shift(tree.root, d * N) for d in range(directions)]
    root = Cluster(0, directions * N, tree.root.box, 0, kids)
    perm = np.concatenate([tree.perm + d * N for d in range(directions)])
    return ClusterTree(root, perm, np.concatenate([tree.boxes] * directions), tree.n_min)
