"""Lazy materialization of random quasi-trees and walks on them.

A quasi-tree over a base graph is built from metric R-balls: the root ball
is the R-ball of a uniform base vertex, and every non-center vertex of every
ball carries one long-range edge to the center of a fresh independent ball.
Ball centers have no long-range edge of their own except the edge to their
parent. Contracting balls yields an infinite tree, and the level of a vertex
is the number of long-range edges separating its ball from the root.

Balls are materialized on first crossing, never in advance. Child identity
derives from a hash chain keyed by (parent ball uid, attaching local
vertex), so the sampled tree is a deterministic function of the tree seed
regardless of access order; this also lets scratch exploration be rolled
back and later re-materialized identically.
"""

import weakref
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import _kernels as K
from .errors import InvalidInputError, InvalidParameterError, SamplingFailureError
from .graphs import ball as base_ball

_TRIAL_STEP_CAP = 50_000
_CATALOG_CACHE = weakref.WeakKeyDictionary()


class TreeVertex(NamedTuple):
    ball_id: int
    local_vertex_id: int


class BallCatalog:
    """Flat tables of every base vertex's R-ball, shared by all trees.

    Local index 0 is always the ball center; other members follow BFS
    discovery order. `clipped` marks members whose base degree exceeds
    their in-ball degree, i.e. vertices at which the ball boundary cuts
    base edges.
    """

    def __init__(self, g, radius):
        if radius < 1:
            raise InvalidParameterError("ball radius must be >= 1")
        self.base = g
        self.radius = int(radius)
        n = g.n
        ptr = np.zeros(n + 1, np.int64)
        members = []
        adj_rows = []
        base_deg = g.degrees()
        clip = []
        for v in range(n):
            rb = base_ball(g, v, radius)
            verts = rb.vertices
            local = {int(u): k for k, u in enumerate(verts)}
            rows = [[] for _ in range(verts.size)]
            for a, b in rb.edges:
                rows[a].append(b)
                rows[b].append(a)
            for k, u in enumerate(verts):
                row = sorted(rows[k])
                adj_rows.append(row)
                clip.append(1 if len(row) < base_deg[int(u)] else 0)
            members.append(verts)
            ptr[v + 1] = ptr[v] + verts.size
        self.cb_ptr = ptr
        self.cb_base = np.concatenate(members).astype(np.int64)
        lens = np.fromiter((len(r) for r in adj_rows), np.int64, len(adj_rows))
        self.cb_adj_ptr = np.zeros(len(adj_rows) + 1, np.int64)
        np.cumsum(lens, out=self.cb_adj_ptr[1:])
        self.cb_adj = np.fromiter(
            (x for r in adj_rows for x in r), np.int64, int(lens.sum())
        )
        self.cb_clip = np.asarray(clip, np.uint8)
        self.max_ball = int(np.max(np.diff(ptr)))
        self._rooted = {}

    def ball_size(self, v):
        return int(self.cb_ptr[v + 1] - self.cb_ptr[v])

    def ball_members(self, v):
        return self.cb_base[self.cb_ptr[v]:self.cb_ptr[v + 1]]

    def adj_row(self, v, local):
        row = self.cb_ptr[v] + local
        return self.cb_adj[self.cb_adj_ptr[row]:self.cb_adj_ptr[row + 1]]

    def rooted_ball(self, v):
        if v not in self._rooted:
            self._rooted[v] = base_ball(self.base, v, self.radius)
        return self._rooted[v]


def shared_catalog(g, radius):
    """Process-wide ball catalog for (graph, radius), built once.

    Graphs are immutable, so the tables can be shared by every tree and
    coupling over the same base; entries die with the graph object.
    """
    per_graph = _CATALOG_CACHE.setdefault(g, {})
    radius = int(radius)
    if radius not in per_graph:
        per_graph[radius] = BallCatalog(g, radius)
    return per_graph[radius]


class Arena:
    """Growable flat ball table addressed by the walk kernels.

    Child slots hold a ball id (>= 0), -1 for a not-yet-materialized edge,
    or -2 where no long-range edge exists (ball centers). cursors[0] counts
    balls, cursors[1] used child slots.
    """

    def __init__(self, catalog, root_center, root_uid, capacity=1024):
        self.catalog = catalog
        cap = max(int(capacity), 16)
        scap = cap * catalog.max_ball
        self.ab_center = np.zeros(cap, np.int64)
        self.ab_level = np.zeros(cap, np.int64)
        self.ab_parent = np.zeros(cap, np.int64)
        self.ab_attach = np.zeros(cap, np.int64)
        self.ab_uid = np.zeros(cap, np.uint64)
        self.ab_child_ptr = np.zeros(cap, np.int64)
        self.children = np.zeros(scap, np.int64)
        self.cursors = np.zeros(2, np.int64)
        sz = catalog.ball_size(int(root_center))
        self.ab_center[0] = int(root_center)
        self.ab_level[0] = 0
        self.ab_parent[0] = -1
        self.ab_attach[0] = -1
        self.ab_uid[0] = np.uint64(int(root_uid) & 0xFFFFFFFFFFFFFFFF)
        self.ab_child_ptr[0] = 0
        self.children[0] = -2
        self.children[1:sz] = -1
        self.cursors[0] = 1
        self.cursors[1] = sz

    @property
    def n_balls(self):
        return int(self.cursors[0])

    def grow(self):
        cap = self.ab_center.shape[0] * 2
        for name in ("ab_center", "ab_level", "ab_parent", "ab_attach", "ab_child_ptr"):
            old = getattr(self, name)
            new = np.zeros(cap, np.int64)
            new[: old.shape[0]] = old
            setattr(self, name, new)
        oldu = self.ab_uid
        newu = np.zeros(cap, np.uint64)
        newu[: oldu.shape[0]] = oldu
        self.ab_uid = newu
        oldc = self.children
        newc = np.zeros(oldc.shape[0] * 2, np.int64)
        newc[: oldc.shape[0]] = oldc
        self.children = newc

    def kernel_args(self):
        c = self.catalog
        return (
            c.cb_ptr, c.cb_base, c.cb_adj_ptr, c.cb_adj,
            self.ab_center, self.ab_level, self.ab_parent, self.ab_attach,
            self.ab_uid, self.ab_child_ptr, self.children, self.cursors,
            c.base.n, c.max_ball,
        )

    def child_slot(self, b, local):
        return int(self.children[self.ab_child_ptr[b] + local])

    def ensure_child(self, b, local):
        """Ball id across the long-range edge at (b, local), materializing
        it with the same hash-derived draw the kernels use. None when no
        long-range edge exists there."""
        slot = self.child_slot(b, local)
        if slot == -2:
            return None
        if slot >= 0:
            return slot
        while (
            self.cursors[0] + 1 > self.ab_center.shape[0]
            or self.cursors[1] + self.catalog.max_ball > self.children.shape[0]
        ):
            self.grow()
        with K.errstate_for_fallback():
            return int(
                K._make_child(
                    self.catalog.cb_ptr, self.ab_center, self.ab_level,
                    self.ab_parent, self.ab_attach, self.ab_uid,
                    self.ab_child_ptr, self.children, self.cursors,
                    self.catalog.base.n, np.int64(b), np.int64(local),
                )
            )

    def materialize_child(self, b, local, center):
        """Pin the child at (b, local) to a specific base-vertex center.

        Used when child centers are drawn by an external coupling rather
        than the hash chain; the child's own descendants still derive from
        its uid. The slot must be empty.
        """
        if self.child_slot(b, local) != -1:
            raise InvalidInputError("child slot already occupied or absent")
        while (
            self.cursors[0] + 1 > self.ab_center.shape[0]
            or self.cursors[1] + self.catalog.max_ball > self.children.shape[0]
        ):
            self.grow()
        with K.errstate_for_fallback():
            u = K.sm64_mix(self.ab_uid[b], np.uint64(int(local)))
        nbid = int(self.cursors[0])
        sz = self.catalog.ball_size(int(center))
        cp = int(self.cursors[1])
        self.ab_center[nbid] = int(center)
        self.ab_level[nbid] = self.ab_level[b] + 1
        self.ab_parent[nbid] = b
        self.ab_attach[nbid] = local
        self.ab_uid[nbid] = u
        self.ab_child_ptr[nbid] = cp
        self.children[cp] = -2
        self.children[cp + 1 : cp + sz] = -1
        self.cursors[0] = nbid + 1
        self.cursors[1] = cp + sz
        self.children[self.ab_child_ptr[b] + local] = nbid
        return nbid

    def open_root_slot(self):
        """Allow a long-range edge at the root center (slot stays lazy)."""
        if self.children[self.ab_child_ptr[0]] == -2:
            self.children[self.ab_child_ptr[0]] = -1

    def mark(self):
        return int(self.cursors[0]), int(self.cursors[1])

    def rollback(self, mark):
        """Discard balls created after `mark`; surviving parents get their
        slots reset to lazy, and hash-derived identity guarantees any
        re-materialization reproduces the same balls."""
        mark_n, mark_c = mark
        for nb in range(mark_n, int(self.cursors[0])):
            p = self.ab_parent[nb]
            if p < mark_n:
                self.children[self.ab_child_ptr[p] + self.ab_attach[nb]] = -1
        self.cursors[0] = mark_n
        self.cursors[1] = mark_c


@dataclass
class BallInstance:
    """Python-facing view of one materialized ball."""

    ball: object
    parent_edge: object
    children: dict
    level: int


@dataclass
class WalkTrace:
    """Recorded walk: positions, levels, and long-range crossings.

    `crossings` holds (time, (from, to), level_after) per long-range step;
    levels change by exactly one at crossings and nowhere else.
    """

    ball_ids: np.ndarray
    local_ids: np.ndarray
    levels: np.ndarray
    crossings: tuple

    @property
    def steps(self):
        return [
            TreeVertex(int(b), int(l))
            for b, l in zip(self.ball_ids, self.local_ids)
        ]

    def __len__(self):
        return int(self.ball_ids.size)


@dataclass
class EscapeEstimate:
    """Monte Carlo escape-probability estimate with a Wilson interval."""

    estimate: object
    ci_low: object
    ci_high: object
    successes: int
    trials: int
    depth: int
    bias_note: str
    defined: bool = True


class QuasiTree:
    """A lazily sampled quasi-tree bound to one base graph and radius."""

    def __init__(self, base, radius, catalog, arena):
        self.base = base
        self.R = int(radius)
        self.catalog = catalog
        self.arena = arena

    @property
    def root(self):
        return TreeVertex(0, 0)

    @property
    def n_balls(self):
        return self.arena.n_balls

    def resolve_base_vertex(self, v):
        """Base-graph vertex underlying a tree vertex."""
        self._check(v)
        c = int(self.arena.ab_center[v.ball_id])
        return int(self.catalog.cb_base[self.catalog.cb_ptr[c] + v.local_vertex_id])

    def _check(self, v):
        b, i = v
        if not 0 <= b < self.arena.n_balls:
            raise InvalidParameterError(f"ball {b} not materialized")
        if not 0 <= i < self.catalog.ball_size(int(self.arena.ab_center[b])):
            raise InvalidParameterError(f"local vertex {i} outside ball {b}")

    def level_of(self, v):
        self._check(v)
        return int(self.arena.ab_level[v.ball_id])

    def ball_instance(self, bid):
        a = self.arena
        if not 0 <= bid < a.n_balls:
            raise InvalidParameterError(f"ball {bid} not materialized")
        center = int(a.ab_center[bid])
        size = self.catalog.ball_size(center)
        kids = {}
        for local in range(size):
            slot = a.child_slot(bid, local)
            if slot >= 0:
                kids[local] = slot
        parent_edge = None
        if a.ab_parent[bid] >= 0:
            parent_edge = (
                TreeVertex(int(a.ab_parent[bid]), int(a.ab_attach[bid])),
                TreeVertex(bid, 0),
            )
        return BallInstance(
            ball=self.catalog.rooted_ball(center),
            parent_edge=parent_edge,
            children=kids,
            level=int(a.ab_level[bid]),
        )

    @property
    def balls(self):
        return [self.ball_instance(b) for b in range(self.arena.n_balls)]


def new_quasitree(g, radius, rng):
    """Quasi-tree with a freshly sampled root ball and nothing else.

    The root center is a uniform base vertex; all other randomness is
    deferred to a hash chain seeded from `rng`.
    """
    if int(radius) < 1:
        raise InvalidParameterError("radius must be >= 1")
    if g.n < 2 or np.any(g.degrees() == 0):
        raise InvalidInputError("base graph has a component without non-center vertices")
    catalog = shared_catalog(g, int(radius))
    root_center = int(rng.integers(g.n))
    root_uid = int(rng.integers(0, 2**63))
    arena = Arena(catalog, root_center, root_uid)
    return QuasiTree(g, radius, catalog, arena)


def neighbors(t, v):
    """Tree neighbors of v, materializing its child ball on first access."""
    t._check(v)
    b, i = v
    center = int(t.arena.ab_center[b])
    out = [TreeVertex(b, int(j)) for j in t.catalog.adj_row(center, i)]
    if i == 0:
        if t.arena.ab_parent[b] >= 0:
            out.append(
                TreeVertex(int(t.arena.ab_parent[b]), int(t.arena.ab_attach[b]))
            )
        else:
            cid = t.arena.ensure_child(b, 0)
            if cid is not None:
                out.append(TreeVertex(cid, 0))
    else:
        cid = t.arena.ensure_child(b, i)
        out.append(TreeVertex(cid, 0))
    return out


def _stream_from(rng):
    return K.new_stream(int(rng.integers(0, 2**63)))


def run_tree_trace(t, start, steps, rst):
    """Kernel-driven recorded walk using an explicit RNG stream."""
    steps = int(steps)
    tr_ball = np.zeros(steps + 1, np.int64)
    tr_local = np.zeros(steps + 1, np.int64)
    tr_level = np.zeros(steps + 1, np.int64)
    tr_cross = np.zeros(steps + 1, np.int64)
    tr_edge = np.full(steps + 1, -1, np.int64)
    tr_ball[0] = start.ball_id
    tr_local[0] = start.local_vertex_id
    tr_level[0] = t.arena.ab_level[start.ball_id]
    state = np.zeros(K.STATE_LEN, np.int64)
    state[0] = start.ball_id
    state[1] = start.local_vertex_id
    with K.errstate_for_fallback():
        while True:
            status, _, _ = K.tree_trace(
                *t.arena.kernel_args(), state, rst, steps,
                tr_ball, tr_local, tr_level, tr_cross, tr_edge,
            )
            if status == K.DONE:
                break
            t.arena.grow()
    crossings = []
    for k in np.flatnonzero(tr_cross):
        k = int(k)
        prev = TreeVertex(int(tr_ball[k - 1]), int(tr_local[k - 1]))
        cur = TreeVertex(int(tr_ball[k]), int(tr_local[k]))
        crossings.append((k, (prev, cur), int(tr_level[k])))
    return WalkTrace(
        ball_ids=tr_ball, local_ids=tr_local, levels=tr_level,
        crossings=tuple(crossings),
    )


def run_walk(t, start, steps, rng):
    """Simple random walk on the tree from `start` for `steps` steps."""
    if int(steps) < 0:
        raise InvalidParameterError("steps must be >= 0")
    t._check(start)
    return run_tree_trace(t, start, int(steps), _stream_from(rng))


def run_tree_mc(t, mode, start, depth, trials, rst, max_steps=_TRIAL_STEP_CAP):
    """Batched unrecorded trials; returns (state, out) per kernel contract."""
    t._check(start)
    if mode == K.MODE_LASTEXIT:
        out = np.zeros(
            t.catalog.ball_size(int(t.arena.ab_center[start.ball_id])), np.int64
        )
    elif mode == K.MODE_FIRSTENTRY:
        out = np.full(int(trials), -1, np.int64)
    else:
        out = np.zeros(1, np.int64)
    state = np.zeros(K.STATE_LEN, np.int64)
    state[0] = start.ball_id
    state[1] = start.local_vertex_id
    state[3] = start.local_vertex_id
    with K.errstate_for_fallback():
        while True:
            status, _, _ = K.tree_mc(
                *t.arena.kernel_args(), state, rst, mode, int(trials),
                start.ball_id, start.local_vertex_id, int(depth),
                int(max_steps), out,
            )
            if status == K.DONE:
                break
            if status == K.TIMEOUT:
                raise SamplingFailureError(
                    f"walk trial exceeded {max_steps} steps before resolving"
                )
            t.arena.grow()
    return state, out


def estimate_escape_prob(t, x, depth, trials, rng):
    """Fraction of walks from x reaching `depth` long-range levels deeper
    without revisiting x or stepping to the vertex one long-range edge above
    x's ball.

    Truncation at `depth` inflates the never-return probability, so the
    estimate carries a positive bias that decays geometrically in depth.
    Returns an undefined-flagged estimate when depth < 2 or trials < 1.
    """
    depth = int(depth)
    trials = int(trials)
    if depth < 2 or trials < 1:
        return EscapeEstimate(
            estimate=None, ci_low=None, ci_high=None, successes=0,
            trials=trials, depth=depth,
            bias_note="undefined: needs depth >= 2 and trials >= 1",
            defined=False,
        )
    state, _ = run_tree_mc(t, K.MODE_ESCAPE, x, depth, trials, _stream_from(rng))
    successes = int(state[4])
    p = successes / trials
    z = 1.959963984540054
    denom = 1.0 + z * z / trials
    mid = (p + z * z / (2 * trials)) / denom
    half = z * np.sqrt(p * (1.0 - p) / trials + z * z / (4 * trials * trials)) / denom
    return EscapeEstimate(
        estimate=p,
        ci_low=max(0.0, mid - half),
        ci_high=min(1.0, mid + half),
        successes=successes,
        trials=trials,
        depth=depth,
        bias_note=f"positive bias <= exp(-c*{depth}) from depth truncation",
    )


def dump_trace_csv(trace, path):
    """Debug dump with `t,ball,local,level,crossed_lr` rows."""
    cross = np.zeros(len(trace), np.int64)
    for time, _, _ in trace.crossings:
        lvl = trace.levels[time] - trace.levels[time - 1]
        cross[time] = int(lvl)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t,ball,local,level,crossed_lr\n")
        for k in range(len(trace)):
            fh.write(
                f"{k},{trace.ball_ids[k]},{trace.local_ids[k]},"
                f"{trace.levels[k]},{cross[k]}\n"
            )
