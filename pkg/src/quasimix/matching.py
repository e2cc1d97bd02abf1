"""Uniform perfect matchings and the combined quasi-random graph.

The combined graph keeps a matching edge that coincides with a base edge as
a distinct parallel edge labeled longrange, so every matched vertex has
degree exactly base-degree + 1 and long-range edges always form a perfect
matching on the matched set.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, InvalidParameterError
from .graphs import LABEL_BASE, LABEL_LONGRANGE, Graph


@dataclass(frozen=True)
class PerfectMatching:
    """Unordered vertex pairs covering all but at most one vertex.

    `unmatched` is None for even vertex counts and the single left-out
    vertex id otherwise.
    """

    pairs: tuple
    unmatched: object = None

    @property
    def n(self):
        return 2 * len(self.pairs) + (0 if self.unmatched is None else 1)

    def partner_array(self, n=None):
        """partner[v] = matched partner of v, or -1 for the unmatched vertex."""
        if n is None:
            n = self.n
        partner = np.full(n, -1, np.int64)
        for u, v in self.pairs:
            partner[u] = v
            partner[v] = u
        return partner


def sample_perfect_matching(n, rng):
    """Uniform perfect matching of {0..n-1}; odd n leaves one vertex out.

    A uniform permutation paired off consecutively is exactly uniform over
    the (n-1)!! matchings; for odd n the trailing element is the left-out
    vertex, uniform and independent of the matching of the rest.
    """
    n = int(n)
    if n < 2:
        raise InvalidParameterError("matching needs n >= 2")
    perm = rng.permutation(n)
    unmatched = None
    if n % 2 == 1:
        unmatched = int(perm[-1])
        perm = perm[:-1]
    pairs = []
    for k in range(0, perm.size, 2):
        u, v = int(perm[k]), int(perm[k + 1])
        pairs.append((min(u, v), max(u, v)))
    pairs.sort()
    return PerfectMatching(pairs=tuple(pairs), unmatched=unmatched)


@dataclass(frozen=True)
class StarGraph:
    """Base graph plus matching, with their union as a labeled multigraph."""

    base: Graph
    matching: PerfectMatching
    combined: Graph

    @property
    def n(self):
        return self.base.n

    def partner_array(self):
        return self.matching.partner_array(self.base.n)


def build_star(g, m):
    """Overlay a perfect matching on a base graph.

    The matching must cover exactly g's vertex set (one vertex left out when
    n is odd); anything else is an input error.
    """
    seen = np.zeros(g.n, bool)
    for u, v in m.pairs:
        for x in (u, v):
            if not 0 <= x < g.n:
                raise InvalidInputError(f"matched vertex {x} outside graph")
            if seen[x]:
                raise InvalidInputError(f"vertex {x} matched twice")
            seen[x] = True
    if m.unmatched is not None:
        x = m.unmatched
        if not 0 <= x < g.n:
            raise InvalidInputError(f"unmatched vertex {x} outside graph")
        if seen[x]:
            raise InvalidInputError(f"vertex {x} both matched and unmatched")
        seen[x] = True
    if not np.all(seen):
        missing = int(np.flatnonzero(~seen)[0])
        raise InvalidInputError(f"vertex {missing} not covered by matching")
    if (g.n % 2 == 0) != (m.unmatched is None):
        raise InvalidInputError("unmatched vertex present iff n is odd")
    edges = []
    labels = []
    for v in range(g.n):
        for w in g.neighbors(v):
            if v < int(w):
                edges.append((v, int(w)))
                labels.append(LABEL_BASE)
    for u, v in m.pairs:
        edges.append((u, v))
        labels.append(LABEL_LONGRANGE)
    combined = Graph.from_edges(g.n, edges, labels, allow_parallel=True)
    return StarGraph(base=g, matching=m, combined=combined)


def sample_star(g, rng):
    """Base graph plus a freshly sampled uniform matching."""
    return build_star(g, sample_perfect_matching(g.n, rng))


def save_matching(m, path):
    """Write `u v` pair lines plus an optional `unmatched w` line."""
    lines = [f"{u} {v}" for u, v in m.pairs]
    if m.unmatched is not None:
        lines.append(f"unmatched {m.unmatched}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_matching(path):
    pairs = []
    unmatched = None
    with open(path, encoding="utf-8") as fh:
        for ln in fh:
            ln = ln.strip()
            if not ln:
                continue
            parts = ln.split()
            if parts[0] == "unmatched":
                if unmatched is not None or len(parts) != 2:
                    raise InvalidInputError(f"bad unmatched line: {ln!r}")
                unmatched = int(parts[1])
            else:
                if len(parts) != 2:
                    raise InvalidInputError(f"bad pair line: {ln!r}")
                u, v = int(parts[0]), int(parts[1])
                pairs.append((min(u, v), max(u, v)))
    pairs.sort()
    return PerfectMatching(pairs=tuple(pairs), unmatched=unmatched)
