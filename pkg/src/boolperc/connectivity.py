"""Connected components of a union of open balls and the events built on them.

Two open balls overlap iff ``|c1 - c2| < r1 + r2``.  Candidate pairs come from
a hierarchical spatial hash: ball ``i`` lives at level ``ceil(log2 r_i)`` and a
level-``L`` grid has cells of side ``2**(L + 1)``.  Two overlapping balls with
levels ``l <= L`` have centers closer than ``2**(L + 1)``, so looking up the
``3**d`` neighbouring cells of the coarser level never misses a pair, whatever
the spread of radii.

A crossing from ``S(s1)`` to ``S(s2)`` only needs balls meeting ``B(0, s2)``:
a continuous path in the union may be cut at its first contact with
``S(s2)``, after which it lies in the closed ball of radius ``s2``.  Hence a
realization exact on ``B(0, a)`` decides every event with ``s2 <= a``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import breadth_first_order, connected_components, minimum_spanning_tree

from .sampler import Realization

WINDOW_TOL = 1e-9


class UndecidableEvent(ValueError):
    """The requested event depends on balls outside the sampled window."""


def balls_overlap(c1, r1: float, c2, r2: float) -> bool:
    return float(np.linalg.norm(np.asarray(c1, float) - np.asarray(c2, float))) < r1 + r2


def ball_meets_sphere(c, r: float, s: float, center=None) -> bool:
    c = np.asarray(c, float)
    if center is not None:
        c = c - np.asarray(center, float)
    return abs(float(np.linalg.norm(c)) - s) < r


def meets_sphere(centers: np.ndarray, radii: np.ndarray, s: float, center=None) -> np.ndarray:
    """Vectorized ``ball_meets_sphere`` over all balls."""
    if center is None:
        dist = np.linalg.norm(centers, axis=1)
    else:
        dist = np.linalg.norm(centers - np.asarray(center, float), axis=1)
    return np.abs(dist - s) < radii


class DisjointSet:
    """Union-find with union by rank and path halving."""

    def __init__(self, n: int = 0):
        self.parent = list(range(n))
        self.rank = [0] * n

    def __len__(self):
        return len(self.parent)

    def add(self) -> int:
        self.parent.append(len(self.parent))
        self.rank.append(0)
        return len(self.parent) - 1

    def find(self, i: int) -> int:
        parent = self.parent
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(self, i: int, j: int) -> int:
        ri, rj = self.find(i), self.find(j)
        if ri == rj:
            return ri
        if self.rank[ri] < self.rank[rj]:
            ri, rj = rj, ri
        self.parent[rj] = ri
        if self.rank[ri] == self.rank[rj]:
            self.rank[ri] += 1
        return ri

    def labels(self) -> np.ndarray:
        return np.array([self.find(i) for i in range(len(self.parent))], dtype=np.int64)


# -- broad phase ---------------------------------------------------------------


def radius_levels(radii: np.ndarray) -> np.ndarray:
    return np.ceil(np.log2(radii)).astype(np.int64)


_OFFSETS: dict[int, np.ndarray] = {}


def _offsets(d: int) -> np.ndarray:
    if d not in _OFFSETS:
        _OFFSETS[d] = np.array(list(itertools.product((-1, 0, 1), repeat=d)), dtype=np.int64)
    return _OFFSETS[d]


def _encode(cells: np.ndarray, lo: np.ndarray, strides: np.ndarray) -> np.ndarray:
    return (cells - lo) @ strides


def _pairs_at_level(centers, owner_idx, query_idx, cell_size):
    d = centers.shape[1]
    owner_cells = np.floor(centers[owner_idx] / cell_size).astype(np.int64)
    query_cells = np.floor(centers[query_idx] / cell_size).astype(np.int64)
    lo = np.minimum(owner_cells.min(axis=0), query_cells.min(axis=0)) - 1
    extent = np.maximum(owner_cells.max(axis=0), query_cells.max(axis=0)) + 2 - lo
    if float(np.prod(extent.astype(float))) < 2.0**62:
        strides = np.cumprod(np.concatenate([[1], extent[:-1]])).astype(np.int64)
        encode = lambda cells: _encode(cells, lo, strides)  # noqa: E731
    else:
        # sparse fallback: compact the cell coordinates that actually occur
        table = {tuple(c): i for i, c in enumerate(np.unique(owner_cells, axis=0).tolist())}

        def encode(cells):
            return np.array([table.get(tuple(c), -1) for c in cells.tolist()], dtype=np.int64)

    okeys = encode(owner_cells)
    order = np.argsort(okeys, kind="stable")
    sorted_keys = okeys[order]
    out_q, out_o = [], []
    for off in _offsets(d):
        qkeys = encode(query_cells + off)
        left = np.searchsorted(sorted_keys, qkeys, side="left")
        right = np.searchsorted(sorted_keys, qkeys, side="right")
        cnt = right - left
        cnt[qkeys < 0] = 0
        total = int(cnt.sum())
        if total == 0:
            continue
        starts = np.repeat(left - np.cumsum(cnt) + cnt, cnt)
        pos = starts + np.arange(total)
        out_q.append(np.repeat(query_idx, cnt))
        out_o.append(owner_idx[order[pos]])
    if not out_q:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    return np.concatenate(out_q), np.concatenate(out_o)


def candidate_pairs(centers: np.ndarray, radii: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Superset of overlapping pairs ``(i, j)``, ``i < j``, each listed once."""
    n = len(radii)
    if n < 2:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    levels = radius_levels(radii)
    idx = np.arange(n)
    qs, os_ = [], []
    for L in np.unique(levels):
        owners = idx[levels == L]
        queries = idx[levels <= L]
        q, o = _pairs_at_level(centers, owners, queries, 2.0 ** (int(L) + 1))
        # a same-level pair shows up twice; a lower-level query only once
        keep = (levels[q] < L) | (q < o)
        qs.append(q[keep])
        os_.append(o[keep])
    q, o = np.concatenate(qs), np.concatenate(os_)
    return np.minimum(q, o), np.maximum(q, o)


def overlap_pairs(centers: np.ndarray, radii: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    i, j = candidate_pairs(centers, radii)
    if len(i) == 0:
        return i, j
    dist2 = np.einsum("ij,ij->i", centers[i] - centers[j], centers[i] - centers[j])
    reach = radii[i] + radii[j]
    hit = dist2 < reach * reach
    # squared distances can round across the boundary; settle close calls exactly
    close = np.abs(dist2 - reach * reach) <= 1e-9 * reach * reach
    if np.any(close):
        k = np.flatnonzero(close)
        hit[k] = np.linalg.norm(centers[i[k]] - centers[j[k]], axis=1) < reach[k]
    return i[hit], j[hit]


def brute_force_pairs(centers: np.ndarray, radii: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """All-pairs ``O(n**2)`` overlap test (reference)."""
    ii, jj = [], []
    n = len(radii)
    for i in range(n):
        for j in range(i + 1, n):
            if float(np.linalg.norm(centers[i] - centers[j])) < radii[i] + radii[j]:
                ii.append(i)
                jj.append(j)
    return np.array(ii, np.int64), np.array(jj, np.int64)


def brute_force_labels(centers: np.ndarray, radii: np.ndarray) -> np.ndarray:
    ds = DisjointSet(len(radii))
    for i, j in zip(*brute_force_pairs(centers, radii)):
        ds.union(int(i), int(j))
    return ds.labels()


def canonical_partition(labels) -> frozenset:
    groups: dict[int, list[int]] = {}
    for i, lab in enumerate(np.asarray(labels).tolist()):
        groups.setdefault(lab, []).append(i)
    return frozenset(frozenset(g) for g in groups.values())


# -- component structure -------------------------------------------------------


@dataclass(eq=False)
class ComponentStructure:
    """Components of the intersection graph of a realization.

    ``labels[i]`` is the root of ball ``i``'s component (a fully compressed
    union-find forest); ``pairs`` are the overlapping index pairs.
    """

    real: Realization
    labels: np.ndarray
    pairs: tuple[np.ndarray, np.ndarray]
    contains_origin: np.ndarray = field(init=False)
    meets_boundary: np.ndarray = field(init=False)

    def __post_init__(self):
        norms = np.linalg.norm(self.real.centers, axis=1)
        self.contains_origin = norms < self.real.radii
        self.meets_boundary = norms + self.real.radii > self.real.window_radius

    @property
    def n_components(self) -> int:
        return len(np.unique(self.labels))

    def find(self, i: int) -> int:
        return int(self.labels[i])

    def same_component(self, i: int, j: int) -> bool:
        return self.labels[i] == self.labels[j]

    def meets(self, s: float, center=None, mask=None) -> np.ndarray:
        hit = meets_sphere(self.real.centers, self.real.radii, s, center)
        return hit if mask is None else hit & mask


def _labels_from_pairs(n: int, i: np.ndarray, j: np.ndarray) -> np.ndarray:
    if n == 0:
        return np.zeros(0, np.int64)
    g = coo_matrix((np.ones(len(i), np.int8), (i, j)), shape=(n, n)).tocsr()
    _, comp = connected_components(g, directed=False)
    # relabel each component by its smallest ball index
    roots = np.full(comp.max() + 1, n, dtype=np.int64)
    np.minimum.at(roots, comp, np.arange(n))
    return roots[comp]


def build(real: Realization, mask=None) -> ComponentStructure:
    """Components of ``real`` (optionally of the sub-realization ``mask``)."""
    if mask is not None:
        real = real.subset(mask)
    i, j = overlap_pairs(real.centers, real.radii)
    return ComponentStructure(real, _labels_from_pairs(len(real), i, j), (i, j))


def build_incremental(real: Realization) -> DisjointSet:
    """Components by inserting balls one at a time (reference path)."""
    ds = DisjointSet()
    for k in range(len(real)):
        ds.add()
        for m in range(k):
            if balls_overlap(real.centers[k], real.radii[k], real.centers[m], real.radii[m]):
                ds.union(k, m)
    return ds


def _check_window(cs: ComponentStructure, reach: float) -> None:
    if reach > cs.real.window_radius * (1 + WINDOW_TOL) + WINDOW_TOL:
        raise UndecidableEvent(
            f"event reaches radius {reach:g} beyond the sampled window {cs.real.window_radius:g}"
        )


def _share_component(labels: np.ndarray, a: np.ndarray, b: np.ndarray) -> bool:
    if not (a.any() and b.any()):
        return False
    return bool(np.intersect1d(labels[a], labels[b], assume_unique=False).size)


def crossing_event(cs: ComponentStructure, inner: float, outer: float, center=None, mask=None) -> bool:
    """Is there a path in the union from ``S(center, inner)`` to ``S(center, outer)``?

    ``mask`` restricts the balls considered for the sphere contacts; paths still
    use whatever component structure ``cs`` was built from.
    """
    if not 0 < inner < outer:
        raise ValueError("need 0 < inner < outer")
    offset = 0.0 if center is None else float(np.linalg.norm(center))
    _check_window(cs, outer + offset)
    a = cs.meets(inner, center, mask)
    b = cs.meets(outer, center, mask)
    return _share_component(cs.labels, a, b)


def one_arm_event(cs: ComponentStructure, r: float) -> bool:
    """Does the component of the origin reach ``S(r)``?"""
    _check_window(cs, r)
    return _share_component(cs.labels, cs.contains_origin, cs.meets(r))


def origin_component_diameter(cs: ComponentStructure, chunk: int = 2048) -> tuple[float, bool]:
    """Diameter of the origin's component and whether it touches the window boundary.

    For a union of balls the diameter is ``max |c_i - c_j| + r_i + r_j`` over
    pairs of its balls (``i == j`` allowed).  Returns ``(0.0, False)`` when the
    origin is uncovered.
    """
    if not cs.contains_origin.any():
        return 0.0, False
    roots = np.unique(cs.labels[cs.contains_origin])
    members = np.flatnonzero(np.isin(cs.labels, roots))
    c = cs.real.centers[members]
    r = cs.real.radii[members]
    # prune: with f_i = |c_i - o| + r_i, a pair scores at most f_i + f_j, so a
    # pair beating a known value must have both f's above best - max(f)
    o = 0.5 * (c.min(axis=0) + c.max(axis=0))
    f = np.linalg.norm(c - o, axis=1) + r
    k = int(np.argmax(f))
    best = float((np.linalg.norm(c - c[k], axis=1) + r + r[k]).max())
    keep = f >= best - f[k]
    c, r = c[keep], r[keep]
    m = len(r)
    rows = max(1, min(chunk, (1 << 22) // max(m, 1)))
    for start in range(0, m, rows):
        block = slice(start, start + rows)
        dist = np.linalg.norm(c[block, None, :] - c[None, :, :], axis=2)
        best = max(best, float((dist + r[block, None] + r[None, :]).max()))
    return best, bool(cs.meets_boundary[members].any())


def crossing_threshold(
    real: Realization, marks: np.ndarray, inner: float, outer: float, center=None
) -> float:
    """Smallest mark level ``u`` at which the balls with ``marks <= u`` cross.

    Bottleneck path from the balls meeting ``S(inner)`` to the balls meeting
    ``S(outer)``: edge ``(i, j)`` costs ``max(u_i, u_j)``, computed on a
    minimum spanning tree.  Returns ``inf`` when even the full realization does
    not cross.  Marks must be positive.
    """
    if not 0 < inner < outer:
        raise ValueError("need 0 < inner < outer")
    offset = 0.0 if center is None else float(np.linalg.norm(center))
    if outer + offset > real.window_radius * (1 + WINDOW_TOL) + WINDOW_TOL:
        raise UndecidableEvent("outer sphere exceeds the sampled window")
    n = len(real)
    if n == 0:
        return math.inf
    marks = np.asarray(marks, float)
    a = meets_sphere(real.centers, real.radii, inner, center)
    b = meets_sphere(real.centers, real.radii, outer, center)
    if not (a.any() and b.any()):
        return math.inf
    # only balls meeting the closed annulus can lie on a crossing path
    dist = np.linalg.norm(real.centers if center is None else real.centers - center, axis=1)
    keep = (dist + real.radii > inner) & (dist - real.radii < outer)
    idx = np.flatnonzero(keep)
    c, r, u = real.centers[idx], real.radii[idx], marks[idx]
    a, b = a[idx], b[idx]
    i, j = overlap_pairs(c, r)
    m = len(idx)
    src, snk = m, m + 1
    ai, bi = np.flatnonzero(a), np.flatnonzero(b)
    rows = np.concatenate([i, np.full(len(ai), src), bi])
    cols = np.concatenate([j, ai, np.full(len(bi), snk)])
    w = np.concatenate([np.maximum(u[i], u[j]), u[ai], u[bi]])
    g = coo_matrix((w, (rows, cols)), shape=(m + 2, m + 2)).tocsr()
    tree = minimum_spanning_tree(g)
    tree = (tree + tree.T).tocsr()
    _, pred = breadth_first_order(tree, src, directed=False, return_predecessors=True)
    if pred[snk] < 0:
        return math.inf
    path = [snk]
    while path[-1] != src:
        path.append(int(pred[path[-1]]))
    weights = np.asarray(tree[path[1:], path[:-1]]).ravel()
    return float(weights.max())
