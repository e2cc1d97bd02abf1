"""Long-range metric balls on the quasi-random graph and the walk coupling.

The long-range ball B*_K(x) is revealed level by level: an R-ball in the
base metric around x, then one matching hop from each member to a fresh
R-ball, K times. When all revealed R-balls are pairwise disjoint and every
interior member is matched, the ball is a possible realization of the first
K levels of a quasi-tree and x is called a K-root.

`explore_and_couple` couples the walk on the graph started at a K-root with
a walk on a quasi-tree conditioned to agree with B*_K(x0). Matching edges
beyond the revealed ball are exposed lazily at the walk's first crossing,
jointly with the tree-side child draw under the optimal coupling of the two
endpoint distributions: a uniform vertex Z serves both sides whenever it is
still unmatched, which fails with the optimal probability used/n. A reveal
can truncate the edge instead (coupling failure, ball overlap, or the
first-entry-weight criterion); since edges are only revealed when crossed,
every truncation coincides with the walk crossing the truncated edge, so
truncation and the corresponding failure event fire together. The walk also
fails on visiting a vertex whose graph twin has base edges leaving its ball
(the ball boundary, where the local isomorphism breaks) and, once the walk
has committed to a branch by leaving the revealed ball, on re-entering the
half-depth level anywhere except that branch's ancestor ball.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .errors import InvalidInputError, InvalidParameterError, SizeLimitError
from .quasitree import Arena, QuasiTree, TreeVertex, run_tree_mc, shared_catalog

_FACTOR_DEPTH = 10
_FACTOR_TRIALS = 200
DEFAULT_A = -1.5


@dataclass(frozen=True)
class LrBallNode:
    """One revealed R-ball: center, members in BFS order, and how it was
    reached (parent node index within the previous level, exit vertex)."""

    center: int
    members: np.ndarray
    parent: object
    via_local: int


@dataclass
class LrBall:
    """Ball of radius K in the long-range metric, with overlap bookkeeping.

    `layers[i]` lists the R-balls at long-range distance i; `lr_edges` the
    directed matching edges discovered between consecutive layers. `flags`
    collects pattern violations: overlaps (two revealed balls sharing a
    vertex), collisions (a matching hop landing inside the revealed
    region), and unmatched interior members.
    """

    center: int
    K: int
    layers: list
    lr_edges: list
    flags: dict

    def all_vertices(self):
        out = set()
        for layer in self.layers:
            for node in layer:
                out.update(int(v) for v in node.members)
        return out

    @property
    def clean(self):
        return not (
            self.flags["overlaps"] or self.flags["collisions"] or self.flags["unmatched"]
        )


@dataclass
class CouplingReport:
    """Outcome of one coupled walk.

    `cause` is None on success, otherwise the first failure event:
    matching-coupling-failed, overlap, or truncated-edge at a reveal,
    ball-boundary for a broken local isomorphism, wrong-branch for
    re-entering the half-depth level off the committed ancestor.
    `explored_vertices` counts graph vertices revealed by the walk beyond
    the initial ball.
    """

    outcome: str
    cause: object
    steps_coupled: int
    explored_vertices: int
    bad_count: int
    tree_path: tuple = field(default=(), repr=False)
    graph_path: tuple = field(default=(), repr=False)


def _members_of(catalog, v):
    return catalog.ball_members(int(v))


def lr_ball(gstar, x, K_radius, R, _catalog=None):
    """Level-by-level revelation of B*_K(x), flagging pattern violations.

    Every revealed R-ball's members are checked against the previously
    revealed region; the materialized size is guarded at n/2.
    """
    g = gstar.base
    x = int(x)
    K_radius = int(K_radius)
    if not 0 <= x < g.n:
        raise InvalidParameterError(f"vertex {x} out of range")
    if K_radius < 0:
        raise InvalidParameterError("long-range radius must be >= 0")
    catalog = _catalog if _catalog is not None else shared_catalog(g, R)
    partner = gstar.partner_array()
    owner = np.full(g.n, -1, np.int64)
    flags = {"overlaps": [], "collisions": [], "unmatched": []}
    total = 0
    node_seq = []

    def reveal(center, parent, via_local, node_id):
        nonlocal total
        members = _members_of(catalog, center)
        for v in members:
            v = int(v)
            if owner[v] >= 0:
                flags["overlaps"].append((int(owner[v]), node_id))
            else:
                owner[v] = node_id
                total += 1
        if total > g.n // 2:
            raise SizeLimitError("long-range ball exceeds half the graph")
        return LrBallNode(center=int(center), members=members, parent=parent, via_local=via_local)

    root = reveal(x, None, -1, 0)
    layers = [[root]]
    node_seq.append(root)
    lr_edges = []
    for level in range(K_radius):
        new_layer = []
        for pidx, node in enumerate(layers[level]):
            is_root = level == 0
            for local, v in enumerate(node.members):
                v = int(v)
                if local == 0 and not is_root:
                    continue
                w = int(partner[v])
                if w < 0:
                    flags["unmatched"].append(v)
                    continue
                lr_edges.append((v, w))
                if owner[w] >= 0:
                    flags["collisions"].append((v, w))
                nid = len(node_seq)
                child = reveal(w, (level, pidx), local, nid)
                node_seq.append(child)
                new_layer.append(child)
        layers.append(new_layer)
    return LrBall(center=x, K=K_radius, layers=layers, lr_edges=lr_edges, flags=flags)


def is_k_root(gstar, x, K_radius, R, _catalog=None):
    """True when B*_K(x) realizes the first K levels of a quasi-tree."""
    return lr_ball(gstar, x, K_radius, R, _catalog=_catalog).clean


@dataclass
class HittingDistribution:
    """Per-start steps until the walk sits at a K-root."""

    times: np.ndarray
    horizon: int

    @property
    def unresolved(self):
        return int(np.count_nonzero(self.times < 0))

    @property
    def hit_fraction(self):
        return 1.0 - self.unresolved / self.times.size

    @property
    def max_time(self):
        hit = self.times[self.times >= 0]
        return int(hit.max()) if hit.size else None


def k_root_hitting(gstar, K_radius, R, starts, horizon, rng):
    """Walk each start on the combined graph until it stands on a K-root.

    Root tests are cached per vertex; a start that is already a K-root
    reports 0. Times are -1 when the horizon runs out first.
    """
    horizon = int(horizon)
    if horizon < 1:
        raise InvalidParameterError("horizon must be >= 1")
    catalog = shared_catalog(gstar.base, R)
    comb = gstar.combined
    cache = {}

    def rooted(v):
        if v not in cache:
            try:
                cache[v] = is_k_root(gstar, v, K_radius, R, _catalog=catalog)
            except SizeLimitError:
                cache[v] = False
        return cache[v]

    times = np.full(len(starts), -1, np.int64)
    for si, s in enumerate(starts):
        v = int(s)
        for step in range(horizon + 1):
            if rooted(v):
                times[si] = step
                break
            row = comb.neighbors(v)
            v = int(row[rng.integers(row.size)])
    return HittingDistribution(times=times, horizon=horizon)


def _build_conditioned_tree(gstar, ball, catalog, rng):
    """Quasi-tree whose first K levels are pinned to B*_K(x0).

    Returns (tree, selected, node_to_ball). `selected` marks every vertex
    whose matching status the revealed ball determines.
    """
    g = gstar.base
    root_uid = int(rng.integers(0, 2**63))
    arena = Arena(catalog, ball.center, root_uid)
    tree = QuasiTree(g, catalog.radius, catalog, arena)
    selected = np.zeros(g.n, bool)
    partner = gstar.partner_array()
    if partner[ball.center] < 0:
        selected[ball.center] = True
    node_ids = {}
    flat = []
    for level, layer in enumerate(ball.layers):
        for idx, node in enumerate(layer):
            flat.append(((level, idx), node))
    node_ids[(0, 0)] = 0
    for key, node in flat:
        level, idx = key
        if node.parent is None:
            continue
        parent_ball = node_ids[node.parent]
        local = node.via_local
        if local == 0:
            arena.open_root_slot()
        bid = arena.materialize_child(parent_ball, local, node.center)
        node_ids[key] = bid
        tail = int(ball.layers[node.parent[0]][node.parent[1]].members[local])
        selected[tail] = True
        selected[node.center] = True
    return tree, selected, node_ids


def _ceil_half(k):
    return (int(k) + 1) // 2


class _FactorCache:
    """Per-ball last-exit factors for the first-entry weight surrogate.

    One batched Monte Carlo run per ball gives the factor for every exit at
    once. Seeds derive from the ball uid, so values are stable under
    re-materialization and independent of the walk's RNG stream. Scratch
    balls created by the runs are rolled back immediately.
    """

    def __init__(self, tree, depth=_FACTOR_DEPTH, trials=_FACTOR_TRIALS):
        self.tree = tree
        self.depth = depth
        self.trials = trials
        self._counts = {}
        self._weight = {}

    def exit_factor(self, b, local):
        if b not in self._counts:
            seed = int(K.derive_seed(int(self.tree.arena.ab_uid[b]), "couple-factor"))
            mark = self.tree.arena.mark()
            try:
                _, counts = run_tree_mc(
                    self.tree, K.MODE_LASTEXIT, TreeVertex(b, 0),
                    self.depth, self.trials, K.new_stream(seed),
                )
            finally:
                self.tree.arena.rollback(mark)
            self._counts[b] = counts
        hits = int(self._counts[b][local])
        p = hits / self.trials if hits else 0.5 / self.trials
        return p

    def prefix_weight(self, b):
        """W of the path from the root down to ball b, memoized."""
        b = int(b)
        if b == 0:
            return 0.0
        if b not in self._weight:
            parent = int(self.tree.arena.ab_parent[b])
            attach = int(self.tree.arena.ab_attach[b])
            w = self.prefix_weight(parent) - math.log(self.exit_factor(parent, attach))
            self._weight[b] = w
        return self._weight[b]


def explore_and_couple(gstar, x0, params, rng):
    """Coupled walk from a K-root, with lazily revealed matching edges.

    params: t (steps, required), K, R, A (first-entry-weight margin; any
    non-finite A disables the weight criterion). Returns a CouplingReport
    whose cause names the first failure event, if any.
    """
    params = dict(params)
    for key in ("t", "K", "R"):
        if key not in params:
            raise InvalidParameterError(f"params must include {key!r}")
    t_steps = int(params["t"])
    K_radius = int(params["K"])
    R = int(params["R"])
    A = float(params.get("A", DEFAULT_A))
    if t_steps < 0:
        raise InvalidParameterError("t must be >= 0")
    g = gstar.base
    n = g.n
    catalog = shared_catalog(g, R)
    ball = lr_ball(gstar, int(x0), K_radius, R, _catalog=catalog)
    if not ball.clean:
        raise InvalidInputError(f"vertex {x0} is not a {K_radius}-root")
    tree, selected, _ = _build_conditioned_tree(gstar, ball, catalog, rng)
    arena = tree.arena
    factors = _FactorCache(tree)
    entropy_on = math.isfinite(A)
    threshold = math.log(n) - A * math.sqrt(math.log(n)) if entropy_on else math.inf
    half_level = _ceil_half(K_radius)
    committed_ancestor = None
    explored = 0
    revealed = selected.copy()

    def twin(b, local):
        c = int(arena.ab_center[b])
        return int(catalog.cb_base[catalog.cb_ptr[c] + local])

    def clipped(b, local):
        c = int(arena.ab_center[b])
        return bool(catalog.cb_clip[catalog.cb_ptr[c] + local])

    def reveal_edge(b, local):
        """Joint draw for the matching edge at (b, local); returns
        (child_ball, cause) with cause set when the edge truncates."""
        nonlocal explored
        u = twin(b, local)
        z = int(rng.integers(n))
        if selected[z] or z == u:
            # graph side would resample from the unmatched; the tree child
            # is z either way, but the edge is truncated and the walk is
            # crossing it right now
            selected[u] = True
            if not selected[z]:
                selected[z] = True
            return None, "matching-coupling-failed"
        if entropy_on:
            lvlnew = int(arena.ab_level[b]) + 1
            if lvlnew >= K_radius:
                w_edge = factors.prefix_weight(b) - math.log(factors.exit_factor(b, local))
                if w_edge > threshold:
                    return None, "truncated-edge"
        members = _members_of(catalog, z)
        if any(revealed[int(v)] for v in members):
            selected[u] = True
            selected[z] = True
            return None, "overlap"
        selected[u] = True
        selected[z] = True
        for v in members:
            revealed[int(v)] = True
        explored += int(members.size)
        child = arena.materialize_child(b, local, z)
        return child, None

    pos = TreeVertex(0, 0)
    tree_path = [pos]
    graph_path = [twin(0, 0)]
    steps_coupled = 0
    outcome, cause = "success", None
    for _ in range(t_steps):
        b, i = pos
        c = int(arena.ab_center[b])
        row0 = catalog.cb_ptr[c] + i
        adj = catalog.cb_adj[catalog.cb_adj_ptr[row0]:catalog.cb_adj_ptr[row0 + 1]]
        if i == 0:
            if arena.ab_parent[b] >= 0:
                lr_kind = "parent"
            elif arena.child_slot(b, 0) != -2:
                lr_kind = "child"
            else:
                lr_kind = None
        else:
            lr_kind = "child"
        deg = adj.size + (1 if lr_kind else 0)
        r = int(rng.integers(deg))
        if r < adj.size:
            pos = TreeVertex(b, int(adj[r]))
        elif lr_kind == "parent":
            pos = TreeVertex(int(arena.ab_parent[b]), int(arena.ab_attach[b]))
        else:
            slot = arena.child_slot(b, i)
            if slot >= 0:
                pos = TreeVertex(slot, 0)
            else:
                child, fail = reveal_edge(b, i)
                if fail is not None:
                    outcome, cause = "fail", fail
                    break
                pos = TreeVertex(child, 0)
        tree_path.append(pos)
        graph_path.append(twin(*pos))
        # arrival checks: broken isomorphism at clipped members, then the
        # wrong-branch membrane once the walk has left the revealed ball
        if clipped(*pos):
            outcome, cause = "fail", "ball-boundary"
            break
        lvl = int(arena.ab_level[pos.ball_id])
        if committed_ancestor is None and lvl > K_radius:
            anc = pos.ball_id
            while int(arena.ab_level[anc]) > half_level:
                anc = int(arena.ab_parent[anc])
            committed_ancestor = anc
        elif committed_ancestor is not None and lvl == half_level and pos.ball_id != committed_ancestor:
            outcome, cause = "fail", "wrong-branch"
            break
        steps_coupled += 1
    bad = measure_bad_fraction(gstar, int(x0), K_radius, R, rng, _catalog=catalog, _ball=ball)
    return CouplingReport(
        outcome=outcome,
        cause=cause,
        steps_coupled=steps_coupled,
        explored_vertices=explored,
        bad_count=bad,
        tree_path=tuple(tree_path),
        graph_path=tuple(graph_path),
    )


def measure_bad_fraction(gstar, x0, K_radius, R, rng, levels=None, _catalog=None, _ball=None):
    """Count half-depth branches whose deep boundary was touched earlier.

    The half-depth balls z_1, z_2, ... of B*_K(x0) are processed in
    discovery order; each runs a breadth-first matching exploration from
    its bottom-level descendants for `levels` further hops (default K),
    marking every vertex it reveals. A z_i is bad when an earlier
    exploration already marked one of its bottom-level descendants. The
    procedure is deterministic given the graph; `rng` is accepted for
    interface symmetry.
    """
    del rng
    g = gstar.base
    catalog = _catalog if _catalog is not None else shared_catalog(g, R)
    ball = _ball if _ball is not None else lr_ball(gstar, int(x0), K_radius, R, _catalog=catalog)
    if not ball.clean:
        raise InvalidInputError(f"vertex {x0} is not a {K_radius}-root")
    if levels is None:
        levels = K_radius
    half = _ceil_half(K_radius)
    if half >= len(ball.layers):
        return 0
    partner = gstar.partner_array()
    # map nodes to their half-depth ancestor index
    anc_of = {}
    for idx in range(len(ball.layers[half])):
        anc_of[(half, idx)] = idx
    for level in range(half + 1, len(ball.layers)):
        for idx, node in enumerate(ball.layers[level]):
            anc_of[(level, idx)] = anc_of[node.parent]
    bottom = len(ball.layers) - 1
    groups = {}
    for idx, node in enumerate(ball.layers[bottom]):
        groups.setdefault(anc_of[(bottom, idx)], []).append(node)
    touched = np.zeros(g.n, bool)
    bad = 0
    for zi in range(len(ball.layers[half])):
        nodes = groups.get(zi, [])
        boundary = [int(v) for node in nodes for v in node.members]
        if any(touched[v] for v in boundary):
            bad += 1
        frontier = []
        for node in nodes:
            for local, v in enumerate(node.members):
                if local == 0 and bottom > 0:
                    continue
                frontier.append(int(v))
        for _ in range(int(levels)):
            nxt = []
            for v in frontier:
                w = int(partner[v])
                if w < 0 or touched[w]:
                    continue
                for m in _members_of(catalog, w):
                    m = int(m)
                    if not touched[m]:
                        touched[m] = True
                        if m != w:
                            nxt.append(m)
            frontier = nxt
    return bad


def save_coupling_csv(rows, path):
    """CSV with `seed,n,K,R,t,outcome,cause,steps_coupled,explored,bad_count`."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("seed,n,K,R,t,outcome,cause,steps_coupled,explored,bad_count\n")
        for r in rows:
            fh.write(
                f"{r['seed']},{r['n']},{r['K']},{r['R']},{r['t']},{r['outcome']},"
                f"{r['cause'] or ''},{r['steps_coupled']},{r['explored']},{r['bad_count']}\n"
            )
