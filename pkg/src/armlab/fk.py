"""Critical random-cluster model on finite boxes and semi-boxes of Z^2:
samplers, duality, cluster labeling, and lattice arm-event detection.

Conventions
-----------
* A region is a rectangular vertex grid with lattice offsets, so the box
  [-m, m]^2 and the semi-box [-m, m] x [0, m] share one implementation.
* Boundary conditions: free (no identification), wired (every boundary
  vertex identified through one ghost), or a list of wired arcs (one ghost
  per arc). The "01" semi-box convention wires the base right of the
  origin together with the arch and leaves the base strictly left of the
  origin free.
* Arms are paths inside the annulus: primal-open vertex paths (color 1) or
  dual-open face paths (color 0). Boundary conditions enter the measure
  only, never arm admissibility.
* Semi-annulus patterns are read counterclockwise starting at the right
  base; full-annulus patterns are cyclic.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from . import rng as rng_mod
from .errors import DomainError, GeometryError

__all__ = [
    "Region",
    "BoundaryCondition",
    "EdgeConfig",
    "AnnulusSpec",
    "ArmPattern",
    "critical_p",
    "sample_sw",
    "sample_glauber",
    "dual_config",
    "clusters",
    "detect_arm_event",
    "estimate_arm_probability",
    "ArmProbabilityPoint",
]


def critical_p(q: float) -> float:
    """Self-dual edge weight sqrt(q)/(1 + sqrt(q)); requires q >= 1."""
    q = float(q)
    if q < 1.0:
        raise DomainError(f"sampler validity requires q >= 1, got {q}")
    r = math.sqrt(q)
    return r / (1.0 + r)


@dataclass(frozen=True)
class Region:
    """Rectangular vertex grid: vertex (i, j) sits at (i + ox, j + oy)."""

    nx: int
    ny: int
    ox: int = 0
    oy: int = 0
    kind: str = "rect"
    m: int = 0

    @classmethod
    def box(cls, m: int) -> "Region":
        if m < 1:
            raise DomainError("box requires m >= 1")
        return cls(2 * m + 1, 2 * m + 1, -m, -m, "box", m)

    @classmethod
    def semi_box(cls, m: int) -> "Region":
        if m < 1:
            raise DomainError("semi-box requires m >= 1")
        return cls(2 * m + 1, m + 1, -m, 0, "semi_box", m)

    @property
    def n_vertices(self) -> int:
        return self.nx * self.ny

    def vid(self, i, j):
        return np.asarray(i) * self.ny + np.asarray(j)

    def coords(self, vid):
        i, j = divmod(int(vid), self.ny)
        return (i + self.ox, j + self.oy)

    def h_shape(self):
        return (self.nx - 1, self.ny)

    def v_shape(self):
        return (self.nx, self.ny - 1)

    @property
    def n_edges(self) -> int:
        return (self.nx - 1) * self.ny + self.nx * (self.ny - 1)

    def boundary_vids(self) -> np.ndarray:
        """Boundary cycle, counterclockwise from the bottom-right corner."""
        nx, ny = self.nx, self.ny
        bottom = [(i, 0) for i in range(nx - 1, -1, -1)]
        left = [(0, j) for j in range(1, ny)]
        top = [(i, ny - 1) for i in range(1, nx)]
        right = [(nx - 1, j) for j in range(ny - 2, 0, -1)]
        cyc = bottom + left + top + right
        return np.array([i * ny + j for (i, j) in cyc], dtype=np.int64)


@dataclass(frozen=True)
class BoundaryCondition:
    """Free, wired, or arcs of wired vertices (one ghost per arc)."""

    kind: str                         # "free" | "wired" | "dobrushin"
    wired_groups: tuple = ()          # tuple of tuples of vertex ids

    @classmethod
    def free(cls) -> "BoundaryCondition":
        return cls("free")

    @classmethod
    def wired(cls, region: Region) -> "BoundaryCondition":
        return cls("wired", (tuple(int(v) for v in region.boundary_vids()),))

    @classmethod
    def mixed_01(cls, region: Region) -> "BoundaryCondition":
        """Free strictly left of the origin on the base, wired elsewhere."""
        cyc = region.boundary_vids()
        wired = []
        for v in cyc:
            x, y = region.coords(v)
            if not (y == 0 and x < 0):
                wired.append(int(v))
        return cls("dobrushin", (tuple(wired),))

    def label(self) -> str:
        return {"free": "free", "wired": "11", "dobrushin": "01"}[self.kind]


@dataclass
class EdgeConfig:
    """Open/closed state of every primal edge plus model metadata."""

    region: Region
    q: float
    p: float
    bc: BoundaryCondition
    h_open: np.ndarray
    v_open: np.ndarray

    def __post_init__(self):
        if self.h_open.shape != self.region.h_shape():
            raise DomainError("h_open shape mismatch")
        if self.v_open.shape != self.region.v_shape():
            raise DomainError("v_open shape mismatch")

    @classmethod
    def all_open(cls, region, q, p, bc) -> "EdgeConfig":
        return cls(region, q, p, bc,
                   np.ones(region.h_shape(), dtype=bool),
                   np.ones(region.v_shape(), dtype=bool))

    def copy(self) -> "EdgeConfig":
        return EdgeConfig(self.region, self.q, self.p, self.bc,
                          self.h_open.copy(), self.v_open.copy())

    def open_fraction(self) -> float:
        tot = self.h_open.size + self.v_open.size
        return (int(self.h_open.sum()) + int(self.v_open.sum())) / tot

    # -- versioned snapshot format -----------------------------------------

    def to_json_dict(self) -> dict:
        return {
            "schema": "fk-config/1",
            "kind": self.region.kind,
            "nx": self.region.nx, "ny": self.region.ny,
            "ox": self.region.ox, "oy": self.region.oy,
            "m": self.region.m,
            "q": self.q, "p": self.p,
            "bc": self.bc.kind,
            "h_bits": np.packbits(self.h_open.reshape(-1)).tobytes().hex(),
            "v_bits": np.packbits(self.v_open.reshape(-1)).tobytes().hex(),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "EdgeConfig":
        if d.get("schema") != "fk-config/1":
            raise DomainError(f"unknown snapshot schema {d.get('schema')!r}")
        region = Region(d["nx"], d["ny"], d["ox"], d["oy"], d["kind"], d["m"])
        if d["bc"] == "wired":
            bc = BoundaryCondition.wired(region)
        elif d["bc"] == "dobrushin":
            bc = BoundaryCondition.mixed_01(region)
        else:
            bc = BoundaryCondition.free()
        hs, vs = region.h_shape(), region.v_shape()
        h = np.unpackbits(np.frombuffer(bytes.fromhex(d["h_bits"]), np.uint8),
                          count=hs[0] * hs[1]).astype(bool).reshape(hs)
        v = np.unpackbits(np.frombuffer(bytes.fromhex(d["v_bits"]), np.uint8),
                          count=vs[0] * vs[1]).astype(bool).reshape(vs)
        return cls(region, d["q"], d["p"], bc, h, v)


@dataclass(frozen=True)
class ArmPattern:
    """Color word over {0,1}; '1' = primal-open arm, '0' = dual-open arm."""

    word: str

    def __post_init__(self):
        if not self.word or any(c not in "01" for c in self.word):
            raise DomainError(f"pattern must be a nonempty 0/1 word, got {self.word!r}")
        if len(self.word) > 8:
            raise DomainError("patterns longer than 8 are not supported")

    def __len__(self):
        return len(self.word)

    def colors(self):
        return [int(c) for c in self.word]


@dataclass(frozen=True)
class AnnulusSpec:
    """A(n, N) or its semi-plane analog, in lattice units."""

    n: int
    N: int
    semi: bool = False

    def __post_init__(self):
        if not 1 <= self.n < self.N:
            raise GeometryError(f"need 1 <= n < N, got n={self.n}, N={self.N}")


# ---------------------------------------------------------------------------
# Edge indexing helpers
# ---------------------------------------------------------------------------

def _edge_endpoints(region: Region):
    """(a_ids, b_ids) for all edges, horizontal block then vertical block."""
    nx, ny = region.nx, region.ny
    hi, hj = np.meshgrid(np.arange(nx - 1), np.arange(ny), indexing="ij")
    ha = hi * ny + hj
    hb = (hi + 1) * ny + hj
    vi, vj = np.meshgrid(np.arange(nx), np.arange(ny - 1), indexing="ij")
    va = vi * ny + vj
    vb = vi * ny + (vj + 1)
    a = np.concatenate([ha.reshape(-1), va.reshape(-1)])
    b = np.concatenate([hb.reshape(-1), vb.reshape(-1)])
    return a, b


def _ghost_links(region: Region, bc: BoundaryCondition, n_vertices: int):
    """Extra always-open links (vertex, ghost_id) implementing wired arcs."""
    links_a, links_b = [], []
    g = n_vertices
    for group in bc.wired_groups:
        for v in group:
            links_a.append(v)
            links_b.append(g)
        g += 1
    return (np.array(links_a, dtype=np.int64),
            np.array(links_b, dtype=np.int64), g - n_vertices)


def _label_config(region, bc, h_open, v_open):
    """Cluster labels (per vertex incl. ghosts) via sparse components.

    Small regions skip the sparse-matrix setup (its overhead dominates for
    a handful of vertices) and run a plain union-find instead.
    """
    a, b = _edge_endpoints(region)
    mask = np.concatenate([h_open.reshape(-1), v_open.reshape(-1)])
    ea, eb = a[mask], b[mask]
    ga, gb, n_ghosts = _ghost_links(region, bc, region.n_vertices)
    n = region.n_vertices + n_ghosts
    if n <= 256:
        uf = UnionFind(n)
        for va, vb in zip(ea.tolist(), eb.tolist()):
            uf.union(va, vb)
        for va, vb in zip(ga.tolist(), gb.tolist()):
            uf.union(va, vb)
        roots = np.array([uf.find(i) for i in range(n)])
        _, labels = np.unique(roots, return_inverse=True)
        return labels, uf.count, n_ghosts
    rows = np.concatenate([ea, ga])
    cols = np.concatenate([eb, gb])
    graph = sp.coo_matrix((np.ones(len(rows), dtype=np.int8), (rows, cols)),
                          shape=(n, n))
    n_comp, labels = connected_components(graph, directed=False)
    return labels, n_comp, n_ghosts


# ---------------------------------------------------------------------------
# Samplers
# ---------------------------------------------------------------------------

def sample_sw(region: Region, bc: BoundaryCondition, sweeps: int, gen,
              p: Optional[float] = None, config: Optional[EdgeConfig] = None
              ) -> EdgeConfig:
    """Swendsen-Wang sampler for the q = 2 random-cluster model.

    One sweep: cluster the bond configuration (wired arcs merged through
    ghosts), draw one +-1 spin per cluster, then reopen every aligned edge
    independently with probability p. Starts from all edges open unless a
    configuration is passed in.
    """
    q = 2.0
    if p is None:
        p = critical_p(q)
    if config is None:
        config = EdgeConfig.all_open(region, q, p, bc)
    else:
        config = config.copy()
    a, b = _edge_endpoints(region)
    n_h = config.h_open.size
    for _ in range(int(sweeps)):
        labels, n_comp, _ = _label_config(region, bc, config.h_open, config.v_open)
        spins = rng_mod.uniforms_open(gen, n_comp) < 0.5
        aligned = spins[labels[a]] == spins[labels[b]]
        opens = aligned & (rng_mod.uniforms_open(gen, len(a)) < p)
        config.h_open = opens[:n_h].reshape(region.h_shape())
        config.v_open = opens[n_h:].reshape(region.v_shape())
    return config


def _connected_without(region, bc, h_open, v_open, skip_kind, si, sj, va, vb):
    """Are va and vb connected when edge (skip_kind, si, sj) is closed?

    Direct depth-first search; wired arcs act as teleports through their
    ghost (each group expanded at most once).
    """
    nx, ny = region.nx, region.ny
    group_of = {}
    for g_idx, group in enumerate(bc.wired_groups):
        for v_ in group:
            group_of[v_] = g_idx
    seen = np.zeros(region.n_vertices, dtype=bool)
    group_seen = [False] * len(bc.wired_groups)
    stack = [va]
    seen[va] = True
    while stack:
        u = stack.pop()
        if u == vb:
            return True
        i, j = divmod(u, ny)
        if i + 1 < nx and h_open[i, j] and not (skip_kind == "h" and si == i and sj == j):
            w_ = u + ny
            if not seen[w_]:
                seen[w_] = True
                stack.append(w_)
        if i > 0 and h_open[i - 1, j] and not (skip_kind == "h" and si == i - 1 and sj == j):
            w_ = u - ny
            if not seen[w_]:
                seen[w_] = True
                stack.append(w_)
        if j + 1 < ny and v_open[i, j] and not (skip_kind == "v" and si == i and sj == j):
            w_ = u + 1
            if not seen[w_]:
                seen[w_] = True
                stack.append(w_)
        if j > 0 and v_open[i, j - 1] and not (skip_kind == "v" and si == i and sj == j - 1):
            w_ = u - 1
            if not seen[w_]:
                seen[w_] = True
                stack.append(w_)
        g_idx = group_of.get(u)
        if g_idx is not None and not group_seen[g_idx]:
            group_seen[g_idx] = True
            for w_ in bc.wired_groups[g_idx]:
                if not seen[w_]:
                    seen[w_] = True
                    stack.append(w_)
    return bool(seen[vb])


def sample_glauber(region: Region, bc: BoundaryCondition, q: float,
                   sweeps: int, gen, p: Optional[float] = None,
                   config: Optional[EdgeConfig] = None) -> EdgeConfig:
    """Single-edge heat bath for any q >= 1 (small regions only).

    The acceptance ratio needs one connectivity query per edge: an edge
    whose endpoints are connected without it opens with probability p,
    otherwise with p / (p + q(1-p)).
    """
    q = float(q)
    if q < 1.0:
        raise DomainError("sampler validity requires q >= 1")
    if p is None:
        p = critical_p(q)
    if config is None:
        config = EdgeConfig.all_open(region, q, p, bc)
    else:
        config = config.copy()
    ny = region.ny
    if q == 1.0:
        # connectivity never matters: the heat bath is the product measure
        for _ in range(int(sweeps)):
            us = rng_mod.uniforms_open(gen, region.n_edges)
            n_h = config.h_open.size
            config.h_open = (us[:n_h] < p).reshape(region.h_shape())
            config.v_open = (us[n_h:] < p).reshape(region.v_shape())
        return config
    p_iso = p / (p + q * (1.0 - p))
    edges = []
    for i in range(region.nx - 1):
        for j in range(region.ny):
            edges.append(("h", i, j, i * ny + j, (i + 1) * ny + j))
    for i in range(region.nx):
        for j in range(region.ny - 1):
            edges.append(("v", i, j, i * ny + j, i * ny + j + 1))
    for _ in range(int(sweeps)):
        us = rng_mod.uniforms_open(gen, len(edges))
        for (kind, i, j, va, vb), u in zip(edges, us):
            conn = _connected_without(region, bc, config.h_open, config.v_open,
                                      kind, i, j, va, vb)
            prob = p if conn else p_iso
            if kind == "h":
                config.h_open[i, j] = u < prob
            else:
                config.v_open[i, j] = u < prob
    return config


# ---------------------------------------------------------------------------
# Duality and clusters
# ---------------------------------------------------------------------------

def dual_config(config: EdgeConfig) -> EdgeConfig:
    """Configuration on the dual grid (offset by (1/2, 1/2)).

    Dual vertices are the faces of the primal grid including one ring of
    outer faces; a dual edge crossing a primal edge is open iff the primal
    edge is closed. Ring edges (crossing no primal edge) are open iff the
    primal boundary there is free (duality swaps free and wired). The
    crossing part of a double dual returns the primal configuration.
    """
    r = config.region
    dual_region = Region(r.nx + 1, r.ny + 1, r.ox - 1, r.oy - 1, "rect", r.m)
    # dual h-edge (i,j)-(i+1,j) crosses primal v-edge (i, j-1)-(i, j): open
    # iff that primal v edge is closed; j=0 and j=ny rows are ring edges
    dh = np.ones(dual_region.h_shape(), dtype=bool)
    dh[:, 1:-1] = ~config.v_open
    dv = np.ones(dual_region.v_shape(), dtype=bool)
    dv[1:-1, :] = ~config.h_open
    ring_open = config.bc.kind == "free"
    dh[:, 0] = ring_open
    dh[:, -1] = ring_open
    dv[0, :] = ring_open
    dv[-1, :] = ring_open
    dual_bc = BoundaryCondition.wired(dual_region) if config.bc.kind == "free" \
        else BoundaryCondition.free()
    p_dual = 1.0 - config.p
    return EdgeConfig(dual_region, config.q, p_dual, dual_bc, dh, dv)


class UnionFind:
    """Union by rank with path compression over integer ids."""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.rank = [0] * n
        self.count = n

    def find(self, a: int) -> int:
        p = self.parent
        root = a
        while p[root] != root:
            root = p[root]
        while p[a] != root:
            p[a], a = root, p[a]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1
        self.count -= 1


def clusters(config: EdgeConfig, bc: Optional[BoundaryCondition] = None):
    """Union-find labeling of primal-open connectivity.

    Wired arcs are pre-merged. Returns (labels over vertices, cluster
    count); the count includes ghost-merged arcs as single clusters and is
    the exponent of q in the random-cluster weight.
    """
    region = config.region
    bc = bc if bc is not None else config.bc
    ga, gb, n_ghosts = _ghost_links(region, bc, region.n_vertices)
    uf = UnionFind(region.n_vertices + n_ghosts)
    a, b = _edge_endpoints(region)
    mask = np.concatenate([config.h_open.reshape(-1), config.v_open.reshape(-1)])
    for va, vb in zip(a[mask], b[mask]):
        uf.union(int(va), int(vb))
    for va, vb in zip(ga, gb):
        uf.union(int(va), int(vb))
    labels = np.array([uf.find(v) for v in range(region.n_vertices)])
    _, labels = np.unique(labels, return_inverse=True)
    return labels, uf.count


# ---------------------------------------------------------------------------
# Arm events
# ---------------------------------------------------------------------------

def _annulus_mask_vertices(region: Region, ann: AnnulusSpec):
    """Boolean (nx, ny) mask of vertices inside the (semi-)annulus."""
    xs = np.arange(region.nx) + region.ox
    ys = np.arange(region.ny) + region.oy
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    norm = np.maximum(np.abs(X), np.abs(Y))
    mask = (norm > ann.n) & (norm <= ann.N)
    if ann.semi:
        mask &= Y >= 0
    return mask, X, Y


def _annulus_mask_faces(region: Region, ann: AnnulusSpec):
    """Mask of faces (centers at +1/2 offsets) inside the (semi-)annulus."""
    xs = np.arange(region.nx - 1) + region.ox + 0.5
    ys = np.arange(region.ny - 1) + region.oy + 0.5
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    norm = np.maximum(np.abs(X), np.abs(Y))
    mask = (norm > ann.n) & (norm < ann.N)
    if ann.semi:
        mask &= Y > 0
    return mask, X, Y


def _angle_key(x, y, semi: bool):
    """Counterclockwise ordering key; semi case anchored at the right base."""
    ang = np.arctan2(y, x)
    if not semi:
        return np.mod(ang, 2 * np.pi)
    return ang  # semi: angles lie in [0, pi], already anchored at the right


def _crossing_clusters(adj_rows, adj_cols, n_nodes, inner_ids, outer_ids):
    if n_nodes == 0:
        return None, []
    graph = sp.coo_matrix((np.ones(len(adj_rows), dtype=np.int8),
                           (adj_rows, adj_cols)), shape=(n_nodes, n_nodes))
    _, labels = connected_components(graph, directed=False)
    inner_labs = set(labels[inner_ids].tolist())
    outer_labs = set(labels[outer_ids].tolist())
    return labels, sorted(inner_labs & outer_labs)


def _disjoint_crossings(adj: dict, sources, sinks, need: int) -> bool:
    """At least `need` vertex-disjoint source->sink paths.

    Unit-capacity max-flow with vertex splitting (node v becomes v_in ->
    v_out of capacity 1), BFS augmentation; exact by Menger's theorem.
    """
    if need <= 1:
        return True
    sources = set(sources)
    sinks = set(sinks)
    # residual graph over (node, side) with side 0 = in, 1 = out
    cap: dict = {}

    def add(u, v):
        cap.setdefault(u, {})[v] = cap.get(u, {}).get(v, 0) + 1
        cap.setdefault(v, {}).setdefault(u, 0)

    nodes = set(adj.keys()) | sources | sinks
    for v in nodes:
        add((v, 0), (v, 1))
    for u, nbrs in adj.items():
        for v in nbrs:
            add((u, 1), (v, 0))
    SRC, SNK = ("src", 0), ("snk", 0)
    for s in sources:
        add(SRC, (s, 0))
    for t in sinks:
        add((t, 1), SNK)

    flow = 0
    while flow < need:
        prev = {SRC: None}
        queue = [SRC]
        while queue and SNK not in prev:
            cur = queue.pop(0)
            for nxt, c in cap.get(cur, {}).items():
                if c > 0 and nxt not in prev:
                    prev[nxt] = cur
                    queue.append(nxt)
        if SNK not in prev:
            return False
        node = SNK
        while prev[node] is not None:
            par = prev[node]
            cap[par][node] -= 1
            cap[node][par] += 1
            node = par
        flow += 1
    return True


def detect_arm_event(config: EdgeConfig, ann: AnnulusSpec,
                     pattern: ArmPattern) -> bool:
    """TRUE iff vertex-disjoint arms with colors `pattern` cross the annulus.

    Crossing clusters of each color are enumerated with their inner-
    boundary contact positions; a cyclic (full annulus) or linear
    (semi-annulus, anchored at the right base) selection realizing the
    word is searched over the contact order. Arms of different colors are
    disjoint by planarity; same-color arms must use distinct clusters
    except for adjacent equal letters, where one cluster may serve the run
    if it supports that many vertex-disjoint crossings.
    """
    region = config.region
    if ann.semi and region.kind == "box":
        raise GeometryError("semi-annulus events need a semi-box region")
    lim = region.ox + region.nx - 1
    if ann.N > lim:
        raise GeometryError(f"annulus N={ann.N} exceeds region extent {lim}")

    colors = pattern.colors()
    slots = []     # (angle, color, contact node id)
    graphs = {}    # color -> (adjacency dict, outer node set)

    # primal side (color 1)
    vmask, VX, VY = _annulus_mask_vertices(region, ann)
    v_ids = -np.ones(region.n_vertices, dtype=np.int64)
    sel = np.nonzero(vmask.reshape(-1))[0]
    v_ids[sel] = np.arange(len(sel))
    a, b = _edge_endpoints(region)
    emask = np.concatenate([config.h_open.reshape(-1), config.v_open.reshape(-1)])
    keep = emask & (v_ids[a] >= 0) & (v_ids[b] >= 0)
    rows, cols = v_ids[a[keep]], v_ids[b[keep]]
    norm = np.maximum(np.abs(VX), np.abs(VY)).reshape(-1)[sel]
    inner_ids = np.nonzero(norm == ann.n + 1)[0]
    outer_ids = np.nonzero(norm == ann.N)[0]
    labels1, crossing1 = _crossing_clusters(rows, cols, len(sel), inner_ids,
                                            outer_ids)
    if crossing1 is None:
        crossing1 = []
    xs = VX.reshape(-1)[sel]
    ys = VY.reshape(-1)[sel]
    adj1: dict = {}
    for r_, c_ in zip(rows.tolist(), cols.tolist()):
        adj1.setdefault(r_, []).append(c_)
        adj1.setdefault(c_, []).append(r_)
    graphs[1] = (adj1, {int(i) for i in outer_ids})
    crossing_set1 = set(crossing1)
    for i in inner_ids:
        if labels1 is not None and labels1[i] in crossing_set1:
            ang = _angle_key(xs[i], ys[i], ann.semi)
            slots.append((float(ang), 1, int(i)))

    # dual side (color 0): faces, adjacency through closed primal edges
    fmask, FX, FY = _annulus_mask_faces(region, ann)
    fnx, fny = region.nx - 1, region.ny - 1
    f_ids = -np.ones(fnx * fny, dtype=np.int64)
    fsel = np.nonzero(fmask.reshape(-1))[0]
    f_ids[fsel] = np.arange(len(fsel))
    # horizontal face neighbors (i,j)-(i+1,j) cross primal v-edge (i+1, j)
    fi, fj = np.meshgrid(np.arange(fnx - 1), np.arange(fny), indexing="ij")
    fa = fi * fny + fj
    fb = (fi + 1) * fny + fj
    open_h_dual = ~config.v_open[1:-1, :] if region.nx > 2 else \
        np.zeros((0, fny), dtype=bool)
    m1 = open_h_dual.reshape(-1) & (f_ids[fa.reshape(-1)] >= 0) \
        & (f_ids[fb.reshape(-1)] >= 0)
    # vertical face neighbors (i,j)-(i,j+1) cross primal h-edge (i, j+1)
    gi, gj = np.meshgrid(np.arange(fnx), np.arange(fny - 1), indexing="ij")
    ga_ = gi * fny + gj
    gb_ = gi * fny + (gj + 1)
    open_v_dual = ~config.h_open[:, 1:-1] if region.ny > 2 else \
        np.zeros((fnx, 0), dtype=bool)
    m2 = open_v_dual.reshape(-1) & (f_ids[ga_.reshape(-1)] >= 0) \
        & (f_ids[gb_.reshape(-1)] >= 0)
    rows0 = np.concatenate([f_ids[fa.reshape(-1)[m1]], f_ids[ga_.reshape(-1)[m2]]])
    cols0 = np.concatenate([f_ids[fb.reshape(-1)[m1]], f_ids[gb_.reshape(-1)[m2]]])
    fnorm = np.maximum(np.abs(FX), np.abs(FY)).reshape(-1)[fsel]
    inner0 = np.nonzero(fnorm == ann.n + 0.5)[0]
    outer0 = np.nonzero(fnorm == ann.N - 0.5)[0]
    labels0, crossing0 = _crossing_clusters(rows0, cols0, len(fsel), inner0,
                                            outer0)
    if crossing0 is None:
        crossing0 = []
    fxs = FX.reshape(-1)[fsel]
    fys = FY.reshape(-1)[fsel]
    adj0: dict = {}
    for r_, c_ in zip(rows0.tolist(), cols0.tolist()):
        adj0.setdefault(r_, []).append(c_)
        adj0.setdefault(c_, []).append(r_)
    graphs[0] = (adj0, {int(i) for i in outer0})
    crossing_set0 = set(crossing0)
    for i in inner0:
        if labels0 is not None and labels0[i] in crossing_set0:
            ang = _angle_key(fxs[i], fys[i], ann.semi)
            slots.append((float(ang), 0, int(i)))

    if not slots:
        return False
    slots.sort(key=lambda s: (s[0], s[1]))
    return _search_selection(slots, colors, graphs, cyclic=not ann.semi)


def _search_selection(slots, colors, graphs, cyclic: bool,
                      tie_tol: float = 1e-9) -> bool:
    """Find inner anchors in word order supporting disjoint crossings.

    Anchors at equal angles (square-ring corners put a dual face and a
    primal vertex at the same direction) are treated as permutable. A
    complete anchor choice realizes the word iff, for each color, there
    are vertex-disjoint paths from the chosen anchors to the outer
    boundary (unit-source max-flow; arms of different colors never
    conflict since dual steps pass through closed primal edges only).
    """
    j = len(colors)
    rotations = range(j) if cyclic else range(1)
    n_slots = len(slots)
    flow_cache: dict = {}

    def flows_ok(selection) -> bool:
        for color in (0, 1):
            anchors = frozenset(s[2] for s in selection if s[1] == color)
            if not anchors:
                continue
            key = (color, anchors)
            if key not in flow_cache:
                adj, outer = graphs[color]
                flow_cache[key] = _disjoint_crossings(adj, anchors, outer,
                                                      len(anchors))
            if not flow_cache[key]:
                return False
        return True

    for rot in rotations:
        word = colors[rot:] + colors[:rot]

        def feasible(pos, prev_angle, used_idx, selection):
            if pos == j:
                return True
            for idx in range(n_slots):
                if idx in used_idx:
                    continue
                ang, color, node = slots[idx]
                if ang < prev_angle - tie_tol or color != word[pos]:
                    continue
                selection.append(slots[idx])
                # flow feasibility is monotone in the anchor set, so dead
                # prefixes prune immediately
                if flows_ok(selection) and \
                        feasible(pos + 1, ang, used_idx | {idx}, selection):
                    return True
                selection.pop()
            return False

        if feasible(0, -np.inf, frozenset(), []):
            return True
    return False


# ---------------------------------------------------------------------------
# Arm probability estimation
# ---------------------------------------------------------------------------

@dataclass
class ArmProbabilityPoint:
    """Monte Carlo estimate of one (N, pattern) arm probability."""

    N: int
    n: int
    occurred: int
    samples: int
    p_hat: float
    se: float
    q: float
    p_edge: float
    bc: str
    semi: bool
    pattern: str
    m: int
    sweeps_burn_in: int
    sweeps_gap: int
    seed: int

    def to_json_dict(self, **extra) -> dict:
        from .estimation import wilson_interval

        wl, wh = wilson_interval(self.occurred, self.samples)
        d = {
            "N": self.N, "n": self.n,
            "occurred": self.occurred, "total": self.samples,
            "p_hat": self.p_hat, "se": self.se,
            "wilson_low": wl, "wilson_high": wh,
            "q": self.q, "p_edge": self.p_edge, "bc": self.bc,
            "semi": self.semi, "pattern": self.pattern, "m": self.m,
            "burn_in": self.sweeps_burn_in, "gap": self.sweeps_gap,
            "seed": self.seed,
        }
        d.update(extra)
        return d


def estimate_arm_probability(q: float, pattern: ArmPattern, n: int,
                             N_list, bc_label: str = "11", semi: bool = True,
                             samples: int = 1000, burn_in: int = 1000,
                             gap: int = 10, seed: int = 0,
                             margin: int = 2) -> list:
    """Estimates of the arm-event probability for each N in N_list.

    The region is the box/semi-box of side m = margin*N (default margin 2);
    one chain per N, Swendsen-Wang for q = 2, heat bath otherwise.
    """
    if n < 2 * len(pattern):
        raise GeometryError(
            f"need n >= 2j: n={n}, pattern length {len(pattern)}")
    out = []
    for idx, N in enumerate(sorted(int(x) for x in N_list)):
        if N <= n:
            raise GeometryError(f"need N > n, got N={N}, n={n}")
        m = margin * N
        region = Region.semi_box(m) if semi else Region.box(m)
        if bc_label == "11":
            bc = BoundaryCondition.wired(region)
        elif bc_label == "01":
            bc = BoundaryCondition.mixed_01(region)
        elif bc_label == "free":
            bc = BoundaryCondition.free()
        else:
            raise DomainError(f"unknown bc label {bc_label!r}")
        ann = AnnulusSpec(n, N, semi=semi)
        gen = rng_mod.stream(seed, idx)
        p_edge = critical_p(q)
        use_sw = abs(q - 2.0) < 1e-12
        if use_sw:
            config = sample_sw(region, bc, burn_in, gen)
        else:
            config = sample_glauber(region, bc, q, burn_in, gen)
        k = 0
        for _ in range(int(samples)):
            if use_sw:
                config = sample_sw(region, bc, gap, gen, config=config)
            else:
                config = sample_glauber(region, bc, q, gap, gen, config=config)
            if detect_arm_event(config, ann, pattern):
                k += 1
        p_hat = k / samples
        se = math.sqrt(max(p_hat * (1 - p_hat), 0.0) / samples)
        out.append(ArmProbabilityPoint(
            N=N, n=n, occurred=k, samples=int(samples), p_hat=p_hat, se=se,
            q=float(q), p_edge=p_edge, bc=bc_label, semi=semi,
            pattern=pattern.word, m=m, sweeps_burn_in=int(burn_in),
            sweeps_gap=int(gap), seed=int(seed)))
    return out
