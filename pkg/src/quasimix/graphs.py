"""Base-graph representation, generators, validation, balls, and partitions.

Graphs are undirected with dense integer vertex ids and are stored in CSR
form; parallel edges are represented by repeated column entries, so walk
transition probabilities come out as multiplicity/degree without special
cases. Base graphs are always simple; only the combined quasi-random graph
may carry parallel edges.
"""

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, InvalidParameterError, SamplingFailureError

LABEL_BASE = 0
LABEL_LONGRANGE = 1

_LABEL_NAMES = {LABEL_BASE: "base", LABEL_LONGRANGE: "lr"}
_LABEL_VALUES = {v: k for k, v in _LABEL_NAMES.items()}


class Graph:
    """Undirected (multi)graph in CSR form.

    `indptr`/`indices` hold both directions of every edge; `labels` tags each
    directed entry with LABEL_BASE or LABEL_LONGRANGE. Rows are sorted by
    (neighbor, label). Instances are immutable after construction.
    """

    __slots__ = ("n", "indptr", "indices", "labels", "__weakref__")

    def __init__(self, n, indptr, indices, labels):
        self.n = int(n)
        self.indptr = indptr
        self.indices = indices
        self.labels = labels
        indptr.setflags(write=False)
        indices.setflags(write=False)
        labels.setflags(write=False)

    @classmethod
    def from_edges(cls, n, edges, labels=None, allow_parallel=False):
        """Build a graph from an undirected edge list.

        `edges` is a sequence of (u, v) pairs; `labels` an optional parallel
        sequence of LABEL_* tags (default all base). Self-loops are rejected;
        duplicate undirected edges are rejected unless allow_parallel.
        """
        n = int(n)
        if n < 1:
            raise InvalidParameterError("vertex count must be >= 1")
        edges = list(edges)
        m = len(edges)
        if labels is None:
            labels = [LABEL_BASE] * m
        labels = list(labels)
        if len(labels) != m:
            raise InvalidParameterError("labels length must match edge count")
        eu = np.empty(m, np.int64)
        ev = np.empty(m, np.int64)
        for k, (u, v) in enumerate(edges):
            u = int(u)
            v = int(v)
            if not (0 <= u < n and 0 <= v < n):
                raise InvalidParameterError(f"edge ({u},{v}) out of range for n={n}")
            if u == v:
                raise InvalidParameterError(f"self-loop at vertex {u}")
            eu[k], ev[k] = u, v
        if not allow_parallel and m:
            lo = np.minimum(eu, ev)
            hi = np.maximum(eu, ev)
            keys = lo * n + hi
            if np.unique(keys).size != m:
                raise InvalidParameterError("duplicate edge in simple graph")
        lab = np.asarray(labels, np.uint8)
        deg = np.bincount(np.concatenate([eu, ev]), minlength=n).astype(np.int64)
        indptr = np.zeros(n + 1, np.int64)
        np.cumsum(deg, out=indptr[1:])
        indices = np.empty(2 * m, np.int64)
        elabels = np.empty(2 * m, np.uint8)
        cursor = indptr[:-1].copy()
        for k in range(m):
            u, v = eu[k], ev[k]
            indices[cursor[u]] = v
            elabels[cursor[u]] = lab[k]
            cursor[u] += 1
            indices[cursor[v]] = u
            elabels[cursor[v]] = lab[k]
            cursor[v] += 1
        for v in range(n):
            s, e = indptr[v], indptr[v + 1]
            order = np.lexsort((elabels[s:e], indices[s:e]))
            indices[s:e] = indices[s:e][order]
            elabels[s:e] = elabels[s:e][order]
        return cls(n, indptr, indices, elabels)

    @property
    def num_edges(self):
        return int(self.indices.size // 2)

    @property
    def degree_bound(self):
        """Max degree counting multiplicity."""
        if self.n == 0:
            return 0
        return int(np.max(np.diff(self.indptr)))

    def degrees(self):
        return np.diff(self.indptr)

    def neighbors(self, v):
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    def neighbor_labels(self, v):
        return self.labels[self.indptr[v]:self.indptr[v + 1]]

    @property
    def adjacency(self):
        """Per-vertex list of (neighbor, multiplicity) pairs."""
        out = []
        for v in range(self.n):
            row = self.neighbors(v)
            if row.size == 0:
                out.append([])
                continue
            vals, counts = np.unique(row, return_counts=True)
            out.append(list(zip(vals.tolist(), counts.tolist())))
        return out

    def has_edge(self, u, v):
        row = self.neighbors(u)
        k = np.searchsorted(row, v)
        return bool(k < row.size and row[k] == v)

    def components(self):
        """Connected components as sorted vertex arrays, ordered by min id."""
        seen = np.zeros(self.n, bool)
        comps = []
        for s in range(self.n):
            if seen[s]:
                continue
            seen[s] = True
            comp = [s]
            q = deque([s])
            while q:
                u = q.popleft()
                for w in self.neighbors(u):
                    if not seen[w]:
                        seen[w] = True
                        comp.append(int(w))
                        q.append(int(w))
            comps.append(np.array(sorted(comp), np.int64))
        return comps

    def __repr__(self):
        return f"Graph(n={self.n}, m={self.num_edges}, degree_bound={self.degree_bound})"


@dataclass(frozen=True)
class RootedBall:
    """Closed metric ball with induced adjacency.

    `vertices` lists members in BFS discovery order, center first; `edges`
    holds induced edges as local-index pairs; `distances` aligns with
    `vertices`.
    """

    center: int
    radius: int
    vertices: np.ndarray
    edges: tuple
    distances: np.ndarray


@dataclass(frozen=True)
class Partition:
    blocks: tuple


@dataclass
class ValidationReport:
    component_sizes: list
    max_degree: int
    passed: bool
    reasons: list = field(default_factory=list)


def make_cycle(n):
    """Cycle on n >= 3 vertices."""
    n = int(n)
    if n < 3:
        raise InvalidParameterError("cycle needs n >= 3")
    edges = [(i, (i + 1) % n) for i in range(n)]
    return Graph.from_edges(n, edges)


def make_triangle_union(k):
    """Disjoint union of k triangles; the minimal-component base family."""
    k = int(k)
    if k < 1:
        raise InvalidParameterError("need at least one triangle")
    edges = []
    for i in range(k):
        a = 3 * i
        edges += [(a, a + 1), (a + 1, a + 2), (a, a + 2)]
    return Graph.from_edges(3 * k, edges)


def make_torus(w, h):
    """Connected 4-regular w-by-h torus grid; both sides must be >= 3."""
    w, h = int(w), int(h)
    if w < 3 or h < 3:
        raise InvalidParameterError("torus sides must be >= 3")
    edges = []
    for y in range(h):
        for x in range(w):
            v = x + w * y
            edges.append((v, (x + 1) % w + w * y))
            edges.append((v, x + w * ((y + 1) % h)))
    return Graph.from_edges(w * h, edges)


_PAIRING_BUDGET = 1000


def make_random_regular(n, d, rng):
    """Simple d-regular graph on n labeled vertices.

    For d <= 3 the pairing model with whole-pairing rejection gives the law
    that is exactly uniform over simple labeled d-regular graphs. For larger
    d the acceptance probability of rejection decays like exp(-(d^2-1)/4),
    so pairs are drawn incrementally, skipping loops and repeats, with a
    full restart when the remaining stubs admit no legal pair; the law is
    then uniform only asymptotically in n.
    """
    n, d = int(n), int(d)
    if d < 3:
        raise InvalidParameterError("degree must be >= 3")
    if d >= n:
        raise InvalidParameterError("degree must be < n")
    if (n * d) % 2 != 0:
        raise InvalidParameterError("n*d must be even")
    stubs = np.repeat(np.arange(n, dtype=np.int64), d)
    if d <= 3:
        for _ in range(_PAIRING_BUDGET):
            perm = rng.permutation(stubs)
            a = perm[0::2]
            b = perm[1::2]
            if np.any(a == b):
                continue
            lo = np.minimum(a, b)
            hi = np.maximum(a, b)
            keys = lo * n + hi
            if np.unique(keys).size != keys.size:
                continue
            return Graph.from_edges(n, list(zip(lo.tolist(), hi.tolist())))
        raise SamplingFailureError(
            f"pairing model produced no simple graph in {_PAIRING_BUDGET} tries"
        )
    for _ in range(_PAIRING_BUDGET):
        pool = list(rng.permutation(stubs))
        edges = set()
        misses = 0
        while pool and misses < 100:
            i = int(rng.integers(len(pool)))
            j = int(rng.integers(len(pool)))
            if i == j:
                continue
            u, v = pool[i], pool[j]
            key = (min(u, v), max(u, v))
            if u == v or key in edges:
                misses += 1
                continue
            edges.add(key)
            for k in sorted((i, j), reverse=True):
                pool[k] = pool[-1]
                pool.pop()
            misses = 0
        if not pool:
            return Graph.from_edges(n, sorted(edges))
    raise SamplingFailureError(
        f"stub matching found no simple graph in {_PAIRING_BUDGET} restarts"
    )


def make_clique_tailed(n, d, rng):
    """Random d-regular graph on n vertices with a pendant d-clique.

    Clique vertices take ids n..n+d-1; one bridge edge joins clique vertex n
    to graph vertex 0. The bridged clique vertex ends at degree d, the rest
    at d-1, and vertex 0 at d+1.
    """
    base = make_random_regular(n, d, rng)
    edges = []
    for v in range(base.n):
        for w in base.neighbors(v):
            if v < w:
                edges.append((v, int(w)))
    for i in range(d):
        for j in range(i + 1, d):
            edges.append((n + i, n + j))
    edges.append((0, n))
    return Graph.from_edges(n + d, edges)


def validate_base(g, delta_max, l_min):
    """Report-only check of degree bound and minimum component size."""
    comps = g.components()
    sizes = [int(c.size) for c in comps]
    max_deg = g.degree_bound
    reasons = []
    if max_deg > delta_max:
        reasons.append(f"max degree {max_deg} exceeds bound {delta_max}")
    small = [s for s in sizes if s < l_min]
    if small:
        reasons.append(f"{len(small)} component(s) smaller than {l_min}")
    return ValidationReport(
        component_sizes=sizes,
        max_degree=max_deg,
        passed=not reasons,
        reasons=reasons,
    )


def is_bipartite(g):
    """Two-colorability check by BFS; parallel edges cannot create odd cycles."""
    color = np.full(g.n, -1, np.int8)
    for s in range(g.n):
        if color[s] >= 0:
            continue
        color[s] = 0
        q = deque([s])
        while q:
            u = q.popleft()
            for w in g.neighbors(u):
                w = int(w)
                if color[w] < 0:
                    color[w] = 1 - color[u]
                    q.append(w)
                elif color[w] == color[u]:
                    return False
    return True


def _bfs_ball(g, v, r):
    """Members of the closed r-ball in discovery order, with distances."""
    dist = {v: 0}
    order = [v]
    q = deque([v])
    while q:
        u = q.popleft()
        if dist[u] == r:
            continue
        for w in g.neighbors(u):
            w = int(w)
            if w not in dist:
                dist[w] = dist[u] + 1
                order.append(w)
                q.append(w)
    return order, dist


def ball(g, v, r):
    """Closed ball of radius r around v with induced adjacency."""
    v, r = int(v), int(r)
    if not 0 <= v < g.n:
        raise InvalidParameterError(f"vertex {v} out of range")
    if r < 0:
        raise InvalidParameterError("radius must be >= 0")
    order, dist = _bfs_ball(g, v, r)
    local = {u: k for k, u in enumerate(order)}
    edges = []
    for u in order:
        for w in g.neighbors(u):
            w = int(w)
            if w in local and local[u] < local[w]:
                edges.append((local[u], local[w]))
    return RootedBall(
        center=v,
        radius=r,
        vertices=np.array(order, np.int64),
        edges=tuple(edges),
        distances=np.array([dist[u] for u in order], np.int64),
    )


def _grow_block(g, seed, remaining, size):
    """BFS from seed inside `remaining`, enqueuing smaller ids first."""
    picked = [seed]
    seen = {seed}
    q = deque([seed])
    while q and len(picked) < size:
        u = q.popleft()
        for w in sorted(int(x) for x in g.neighbors(u)):
            if w in remaining and w not in seen:
                seen.add(w)
                picked.append(w)
                q.append(w)
                if len(picked) == size:
                    break
    return picked


def _sub_components(g, members):
    """Connected pieces of the induced subgraph on `members`."""
    members = set(members)
    out = []
    while members:
        s = min(members)
        comp = {s}
        q = deque([s])
        members.discard(s)
        while q:
            u = q.popleft()
            for w in g.neighbors(u):
                w = int(w)
                if w in members:
                    members.discard(w)
                    comp.add(w)
                    q.append(w)
        out.append(comp)
    return out


def greedy_partition(g, l):
    """Partition V into connected blocks with l <= |block| < l^2 * degree_bound.

    Repeatedly grows a size-l connected seed set from the smallest uncovered
    id, then absorbs any sub-l leftover pieces it disconnected; pieces of
    size >= l continue as independent work.
    """
    l = int(l)
    if l < 1:
        raise InvalidParameterError("block size floor must be >= 1")
    blocks = []
    for comp in g.components():
        if comp.size < l:
            raise InvalidInputError(
                f"component of size {comp.size} cannot host a block of size {l}"
            )
        work = [set(int(x) for x in comp)]
        while work:
            s = work.pop()
            if len(s) < 2 * l:
                blocks.append(s)
                continue
            a = set(_grow_block(g, min(s), s, l))
            block = set(a)
            for piece in _sub_components(g, s - a):
                if len(piece) < l:
                    block |= piece
                else:
                    work.append(piece)
            blocks.append(block)
    blocks.sort(key=min)
    return Partition(blocks=tuple(np.array(sorted(b), np.int64) for b in blocks))


def save_edgelist(g, path):
    """Write `n=<count>` header then one `u v label` line per edge."""
    lines = [f"n={g.n}"]
    for v in range(g.n):
        row = g.neighbors(v)
        lab = g.neighbor_labels(v)
        for k in range(row.size):
            w = int(row[k])
            if v < w:
                lines.append(f"{v} {w} {_LABEL_NAMES[int(lab[k])]}")
            elif v == w:
                raise InvalidInputError("self-loop in graph being serialized")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_edgelist(path):
    with open(path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or not lines[0].startswith("n="):
        raise InvalidInputError("edge list must start with an n=<count> header")
    n = int(lines[0][2:])
    edges = []
    labels = []
    for ln in lines[1:]:
        parts = ln.split()
        if len(parts) != 3 or parts[2] not in _LABEL_VALUES:
            raise InvalidInputError(f"bad edge line: {ln!r}")
        edges.append((int(parts[0]), int(parts[1])))
        labels.append(_LABEL_VALUES[parts[2]])
    return Graph.from_edges(n, edges, labels, allow_parallel=True)
