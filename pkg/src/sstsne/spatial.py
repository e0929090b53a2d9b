"""Adaptive quadtree/octree over embedding points.

The tree supplies two things: Barnes-Hut force summarization (distant cells
collapse to centroid + count) and the approximate neighborhoods used to
model an annotator's local view of the embedding. Cells are opened when
d_cell / ||y_i - y_cell|| > theta.

Construction is bulk and order-equivalent to inserting samples in index
order: a cell's anchor is the lowest sample index it contains, which is the
first point that would have been inserted into it. Trees are immutable after
build; traversals are read-only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np
from numba import njit

MAX_DEPTH = 64
_BBOX_MARGIN = 1e-6


@njit(cache=True)
def _build_kernel(points, lo0, hi0, capacity, cap):
    n, d = points.shape
    n_child = 1 << d

    children = np.full((cap, n_child), -1, np.int64)
    parent = np.full(cap, -1, np.int64)
    count = np.zeros(cap, np.int64)
    anchor = np.full(cap, -1, np.int64)
    csum = np.zeros((cap, d), np.float64)
    lo = np.zeros((cap, d), np.float64)
    hi = np.zeros((cap, d), np.float64)
    is_leaf = np.zeros(cap, np.bool_)
    first_pt = np.full(cap, -1, np.int64)
    next_pt = np.full(n, -1, np.int64)
    point_leaf = np.full(n, -1, np.int64)

    idx = np.arange(n)
    scratch = np.empty(n, np.int64)
    codes = np.empty(n, np.int64)

    smax = MAX_DEPTH * n_child + 16
    st_start = np.empty(smax, np.int64)
    st_end = np.empty(smax, np.int64)
    st_node = np.empty(smax, np.int64)
    st_depth = np.empty(smax, np.int64)

    for k in range(d):
        lo[0, k] = lo0[k]
        hi[0, k] = hi0[k]
    n_nodes = 1
    sp = 0
    st_start[sp] = 0
    st_end[sp] = n
    st_node[sp] = 0
    st_depth[sp] = 0
    sp = 1

    bucket = np.zeros(n_child, np.int64)
    offs = np.zeros(n_child + 1, np.int64)
    pos = np.zeros(n_child, np.int64)

    while sp > 0:
        sp -= 1
        s = st_start[sp]
        e = st_end[sp]
        node = st_node[sp]
        depth = st_depth[sp]

        count[node] = e - s
        anchor[node] = idx[s]
        for j in range(s, e):
            pt = idx[j]
            for k in range(d):
                csum[node, k] += points[pt, k]

        if e - s <= capacity or depth >= MAX_DEPTH:
            is_leaf[node] = True
            first_pt[node] = idx[s]
            for j in range(s, e - 1):
                next_pt[idx[j]] = idx[j + 1]
            next_pt[idx[e - 1]] = -1
            for j in range(s, e):
                point_leaf[idx[j]] = node
            continue

        for c in range(n_child):
            bucket[c] = 0
        for j in range(s, e):
            pt = idx[j]
            code = 0
            for k in range(d):
                if points[pt, k] > 0.5 * (lo[node, k] + hi[node, k]):
                    code |= 1 << k
            codes[j] = code
            bucket[code] += 1
        offs[0] = 0
        for c in range(n_child):
            offs[c + 1] = offs[c] + bucket[c]
            pos[c] = offs[c]
        # Stable partition keeps each bucket in ascending sample order.
        for j in range(s, e):
            c = codes[j]
            scratch[s + pos[c]] = idx[j]
            pos[c] += 1
        for j in range(s, e):
            idx[j] = scratch[j]

        for c in range(n_child):
            if bucket[c] == 0:
                continue
            if n_nodes >= cap:
                return (-1, children, parent, count, anchor, csum, lo, hi,
                        is_leaf, first_pt, next_pt, point_leaf)
            ch = n_nodes
            n_nodes += 1
            children[node, c] = ch
            parent[ch] = node
            for k in range(d):
                m = 0.5 * (lo[node, k] + hi[node, k])
                if (c >> k) & 1:
                    lo[ch, k] = m
                    hi[ch, k] = hi[node, k]
                else:
                    lo[ch, k] = lo[node, k]
                    hi[ch, k] = m
            st_start[sp] = s + offs[c]
            st_end[sp] = s + offs[c + 1]
            st_node[sp] = ch
            st_depth[sp] = depth + 1
            sp += 1

    return (n_nodes, children, parent, count, anchor, csum, lo, hi,
            is_leaf, first_pt, next_pt, point_leaf)


@njit(cache=True)
def _repulsion_kernel(n_nodes, children, parent, count, centroid, diameter,
                      is_leaf, first_pt, next_pt, point_leaf, y, theta):
    """Barnes-Hut Student-t repulsion numerators and the global t-sum.

    Returns rep (N, d) with rep[i] = sum_j t_ij^2 (y_i - y_j) approximated
    per the theta criterion, and z = sum over ordered pairs of t_kl. Cells
    containing the target contribute the target-free centroid and count.
    """
    n, d = y.shape
    n_child = children.shape[1]
    rep = np.zeros((n, d), np.float64)
    z_total = 0.0
    on_path = np.zeros(n_nodes, np.bool_)
    stack = np.empty(MAX_DEPTH * n_child + 16, np.int64)

    for i in range(n):
        node = point_leaf[i]
        while node != -1:
            on_path[node] = True
            node = parent[node]

        sp = 0
        stack[sp] = 0
        sp = 1
        while sp > 0:
            sp -= 1
            z = stack[sp]
            dist2 = 0.0
            for k in range(d):
                diff = y[i, k] - centroid[z, k]
                dist2 += diff * diff
            dist = np.sqrt(dist2)
            enter = dist <= 0.0 or diameter[z] > theta * dist

            if enter and not is_leaf[z]:
                for c in range(n_child):
                    ch = children[z, c]
                    if ch != -1:
                        stack[sp] = ch
                        sp += 1
                continue

            if enter:
                # Leaf: emit members individually, skipping the target.
                p = first_pt[z]
                while p != -1:
                    if p != i:
                        dd = 0.0
                        for k in range(d):
                            diff = y[i, k] - y[p, k]
                            dd += diff * diff
                        t = 1.0 / (1.0 + dd)
                        z_total += t
                        tt = t * t
                        for k in range(d):
                            rep[i, k] += tt * (y[i, k] - y[p, k])
                    p = next_pt[p]
                continue

            # Pruned summary; remove the target's own mass if it lives here.
            m = count[z]
            if on_path[z]:
                if m <= 1:
                    continue
                dd = 0.0
                for k in range(d):
                    adj = (centroid[z, k] * m - y[i, k]) / (m - 1)
                    diff = y[i, k] - adj
                    dd += diff * diff
                t = 1.0 / (1.0 + dd)
                z_total += (m - 1) * t
                tt = t * t
                for k in range(d):
                    adj = (centroid[z, k] * m - y[i, k]) / (m - 1)
                    rep[i, k] += (m - 1) * tt * (y[i, k] - adj)
            else:
                t = 1.0 / (1.0 + dist2)
                z_total += m * t
                tt = t * t
                for k in range(d):
                    rep[i, k] += m * tt * (y[i, k] - centroid[z, k])

        node = point_leaf[i]
        while node != -1:
            on_path[node] = False
            node = parent[node]

    return rep, z_total


@njit(cache=True)
def _opportunity_kernel(n_nodes, children, anchor, centroid, diameter,
                        is_leaf, y, theta_k, true_labels, assigned):
    """Per-sample count of entered cells whose anchor is an unlabeled
    same-class sample (the groupwise-labeling opportunity estimate)."""
    n, d = y.shape
    n_child = children.shape[1]
    out = np.zeros(n, np.int64)
    queue = np.empty(n_nodes + 1, np.int64)

    for i in range(n):
        head = 0
        tail = 0
        queue[tail] = 0
        tail += 1
        cnt = 0
        while head < tail:
            z = queue[head]
            head += 1
            dist2 = 0.0
            for k in range(d):
                diff = y[i, k] - centroid[z, k]
                dist2 += diff * diff
            dist = np.sqrt(dist2)
            if not (dist <= 0.0 or diameter[z] > theta_k * dist):
                continue
            a = anchor[z]
            if a != i and assigned[a] < 0 and true_labels[a] == true_labels[i]:
                cnt += 1
            if not is_leaf[z]:
                for c in range(n_child):
                    ch = children[z, c]
                    if ch != -1:
                        queue[tail] = ch
                        tail += 1
        out[i] = cnt
    return out


@dataclass(frozen=True)
class Cell:
    """Read-only view of one tree cell."""

    node_id: int
    lo: np.ndarray
    hi: np.ndarray
    centroid: np.ndarray
    count: int
    diameter: float
    anchor: int
    is_leaf: bool


@dataclass(frozen=True)
class NeighborCell:
    """One cell entered during a theta_K traversal from a focus sample."""

    anchor: int
    node_id: int
    count: int
    diameter: float


class PartitionTree:
    """Flat-array quadtree (2D) or octree (3D) over N embedding points."""

    def __init__(self, points, n_nodes, children, parent, count, anchor,
                 centroid, lo, hi, is_leaf, first_pt, next_pt, point_leaf):
        self.points = points
        self.n_points = points.shape[0]
        self.dims = points.shape[1]
        self.n_nodes = int(n_nodes)
        self.children = children
        self.parent = parent
        self.count = count
        self.anchor = anchor
        self.centroid = centroid
        self.lo = lo
        self.hi = hi
        self.is_leaf = is_leaf
        self.first_pt = first_pt
        self.next_pt = next_pt
        self.point_leaf = point_leaf
        self.diameter = np.sqrt(((hi - lo) ** 2).sum(axis=1))

    def cell(self, node_id: int) -> Cell:
        return Cell(node_id=node_id,
                    lo=self.lo[node_id].copy(),
                    hi=self.hi[node_id].copy(),
                    centroid=self.centroid[node_id].copy(),
                    count=int(self.count[node_id]),
                    diameter=float(self.diameter[node_id]),
                    anchor=int(self.anchor[node_id]),
                    is_leaf=bool(self.is_leaf[node_id]))

    @property
    def root(self) -> Cell:
        return self.cell(0)

    def child_ids(self, node_id: int) -> list[int]:
        return [int(c) for c in self.children[node_id] if c != -1]

    def leaf_members(self, node_id: int) -> list[int]:
        out = []
        p = int(self.first_pt[node_id])
        while p != -1:
            out.append(p)
            p = int(self.next_pt[p])
        return out

    def path_to_root(self, sample: int) -> list[int]:
        node = int(self.point_leaf[sample])
        out = []
        while node != -1:
            out.append(node)
            node = int(self.parent[node])
        return out


def build(points, leaf_capacity: int = 1) -> PartitionTree:
    """Build the partition tree; root bounds are the tight bounding box
    expanded by a 1e-6 margin. Co-located points beyond the maximum depth
    share one leaf."""
    pts = np.ascontiguousarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] not in (2, 3):
        raise ValueError(f"points must be N x 2 or N x 3, got shape {pts.shape}")
    if pts.shape[0] < 1:
        raise ValueError("need at least one point")
    if not np.all(np.isfinite(pts)):
        raise ValueError("non-finite coordinate in points")
    if leaf_capacity < 1:
        raise ValueError("leaf_capacity must be >= 1")
    lo0 = pts.min(axis=0) - _BBOX_MARGIN
    hi0 = pts.max(axis=0) + _BBOX_MARGIN

    cap = max(256, 8 * pts.shape[0])
    while True:
        (n_nodes, children, parent, count, anchor, csum, lo, hi,
         is_leaf, first_pt, next_pt, point_leaf) = _build_kernel(
            pts, lo0, hi0, leaf_capacity, cap)
        if n_nodes > 0:
            break
        cap *= 2

    centroid = csum[:n_nodes] / count[:n_nodes, None]
    return PartitionTree(pts, n_nodes,
                         children[:n_nodes], parent[:n_nodes],
                         count[:n_nodes], anchor[:n_nodes],
                         centroid, lo[:n_nodes], hi[:n_nodes],
                         is_leaf[:n_nodes], first_pt[:n_nodes],
                         next_pt, point_leaf)


def bh_summarize(tree: PartitionTree, target: int, theta: float,
                 visit: Callable[[np.ndarray, int, int], None]) -> None:
    """Depth-first Barnes-Hut traversal emitting contributions for `target`.

    `visit(position, count, node_id)` is called once per contribution:
    either an individual point (count 1) from an entered leaf, or a pruned
    cell's (centroid, count) summary. The target itself is excluded exactly:
    entered leaves skip it and pruned summaries on its path emit the
    target-free centroid and count. Zero distance to a centroid never
    prunes. theta=0 therefore enumerates all other points individually.
    """
    if theta < 0:
        raise ValueError("theta must be >= 0")
    y = tree.points
    target_pos = y[target]
    path = set(tree.path_to_root(target))
    stack = [0]
    while stack:
        z = stack.pop()
        delta = target_pos - tree.centroid[z]
        dist = float(np.sqrt(delta @ delta))
        enter = dist <= 0.0 or tree.diameter[z] > theta * dist
        if enter and not tree.is_leaf[z]:
            stack.extend(int(c) for c in tree.children[z][::-1] if c != -1)
            continue
        if enter:
            for p in tree.leaf_members(z):
                if p != target:
                    visit(y[p], 1, z)
            continue
        m = int(tree.count[z])
        if z in path:
            if m <= 1:
                continue
            adjusted = (tree.centroid[z] * m - target_pos) / (m - 1)
            visit(adjusted, m - 1, z)
        else:
            visit(tree.centroid[z].copy(), m, z)


def bh_neighbors(tree: PartitionTree, i: int, theta_k: float = 0.8) -> list[NeighborCell]:
    """Anchors of every cell entered during a theta_K traversal from i.

    This is the approximate neighborhood the annotation emulator scans for
    groupwise-labeling opportunities; one record per entered cell, in
    breadth-first order, excluding cells anchored at i itself.
    """
    y = tree.points
    out: list[NeighborCell] = []
    queue = [0]
    head = 0
    while head < len(queue):
        z = queue[head]
        head += 1
        delta = y[i] - tree.centroid[z]
        dist = float(np.sqrt(delta @ delta))
        if not (dist <= 0.0 or tree.diameter[z] > theta_k * dist):
            continue
        a = int(tree.anchor[z])
        if a != i:
            out.append(NeighborCell(anchor=a, node_id=z,
                                    count=int(tree.count[z]),
                                    diameter=float(tree.diameter[z])))
        if not tree.is_leaf[z]:
            queue.extend(int(c) for c in tree.children[z] if c != -1)
    return out


def repulsion_forces(tree: PartitionTree, theta: float) -> tuple[np.ndarray, float]:
    """Batch Student-t repulsion for every point against the whole tree.

    Returns (numerators, z) where numerators[i] = sum of b=1 contributions
    t^2 (y_i - y_j) and z approximates sum over ordered pairs of t_kl.
    """
    if theta < 0:
        raise ValueError("theta must be >= 0")
    return _repulsion_kernel(tree.n_nodes, tree.children, tree.parent,
                             tree.count, tree.centroid, tree.diameter,
                             tree.is_leaf, tree.first_pt, tree.next_pt,
                             tree.point_leaf, tree.points, float(theta))


def opportunity_counts(tree: PartitionTree, true_labels: np.ndarray,
                       assigned: np.ndarray, theta_k: float = 0.8) -> np.ndarray:
    """Vectorized opportunity counting for all samples at once.

    `assigned` holds the current annotation per sample with -1 meaning
    unlabeled. Matches emulator.count_opportunities cell for cell.
    """
    labels = np.ascontiguousarray(true_labels, dtype=np.int64)
    ann = np.ascontiguousarray(assigned, dtype=np.int64)
    return _opportunity_kernel(tree.n_nodes, tree.children, tree.anchor,
                               tree.centroid, tree.diameter, tree.is_leaf,
                               tree.points, float(theta_k), labels, ann)
