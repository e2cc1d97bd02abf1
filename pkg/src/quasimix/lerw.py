"""Regeneration analysis, loop-erased walk probabilities, and entropy.

A regeneration happens when the walk crosses a long-range edge it never
crosses again; on a tree this is equivalent to never revisiting the edge's
tail. Confirmed regeneration gaps are i.i.d. after the first, which turns a
single long trace into many independent blocks. Speed is the ratio of mean
level gap to mean time gap; entropy comes from the per-block weights Y_k,
minus-log probabilities that the loop erasure follows its observed branch,
computed from last-exit factors on the quenched tree.

Last-exit factors are estimated two ways: batched Monte Carlo walks stopped
at a relative depth, and an exact absorbing-boundary linear solve on the
depth-truncated subtree. Both target the same depth-truncated quantity, so
they are directly comparable; the residual truncation bias decays
geometrically in the depth.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _kernels as K
from .errors import (
    InsufficientDataError,
    InvalidInputError,
    InvalidParameterError,
    SizeLimitError,
)
from .quasitree import TreeVertex, run_tree_mc

DEFAULT_TAIL_BUFFER = 200
DEFAULT_ESCAPE_DEPTH = 20
DEFAULT_TRIALS = 400
MAX_WTILDE_LEVEL = 10
_SOLVE_STATE_CAP = 500_000
_BOOT_SEED = 0x51AB5
_BOOT_REPS = 1000


@dataclass(frozen=True)
class RegenBlock:
    """One confirmed regeneration: time, level, and the edge crossed."""

    sigma: int
    phi: int
    edge: tuple
    confirmed: bool
    edge_ball: int


@dataclass(frozen=True)
class LerwPath:
    """Long-range edge subsequence of a loop-erased trajectory."""

    edges: tuple


@dataclass
class StepProb:
    """One last-exit factor with its sampling error.

    `wide_ci` flags estimates whose precision is too low to trust
    (few trials, shallow depth, or a clamped zero count).
    """

    value: float
    stderr: float
    method: str
    depth: int
    trials: int
    wide_ci: bool = False


@dataclass
class PathWeight:
    """Minus-log probability of a loop-erasure prefix."""

    value: float
    stderr: float
    wide_ci: bool
    factors: tuple


@dataclass
class WtildeEstimate:
    """First-entry weight of one long-range edge.

    When no trial hits the edge the true weight is unresolved; `value` then
    holds the lower bound log(trials) and `lower_bound_only` is set.
    """

    value: float
    ci_low: object
    ci_high: object
    hits: int
    trials: int
    level: int
    lower_bound_only: bool = False


@dataclass
class EntropyEstimate:
    """Speed and entropy from confirmed regeneration blocks.

    Invariants: h_hat = gamma_hat / mean_phi_gap and
    nu_hat = mean_phi_gap / mean_sigma_gap. `ci` maps each of
    nu/h/gamma to a bootstrap percentile interval. `degenerate` flags
    gamma_hat = 0, which only occurs when every ball has a single exit.
    """

    h_hat: float
    nu_hat: float
    gamma_hat: float
    mean_phi_gap: float
    mean_sigma_gap: float
    ci: dict
    blocks_used: int
    var_y: float
    degenerate: bool = False
    block_rows: tuple = field(default=(), repr=False)


def detect_regenerations(trace, tail_buffer=DEFAULT_TAIL_BUFFER):
    """Confirmed regenerations of a recorded walk.

    An edge qualifies when it is crossed exactly once in the whole trace
    and the crossing happens at least `tail_buffer` steps before the end;
    on a tree a single crossing already implies the tail vertex is never
    revisited. Later blocks are unconfirmable and dropped.
    """
    tail_buffer = int(tail_buffer)
    if tail_buffer < 0:
        raise InvalidParameterError("tail buffer must be >= 0")
    horizon = len(trace) - 1
    counts = {}
    for time, pair, _ in trace.crossings:
        eb = int(trace.ball_ids[time]) if trace.levels[time] > trace.levels[time - 1] else int(trace.ball_ids[time - 1])
        counts.setdefault(eb, []).append((time, pair))
    out = []
    for eb, hits in sorted(counts.items(), key=lambda kv: kv[1][0][0]):
        if len(hits) != 1:
            continue
        time, pair = hits[0]
        if trace.levels[time] <= trace.levels[time - 1]:
            continue
        if time > horizon - tail_buffer:
            continue
        out.append(
            RegenBlock(
                sigma=int(time),
                phi=int(trace.levels[time]),
                edge=pair,
                confirmed=True,
                edge_ball=eb,
            )
        )
    out.sort(key=lambda b: b.sigma)
    return out


def _gap_arrays(block_lists):
    """Per-trace consecutive sigma/phi gaps, pooled."""
    sg, pg = [], []
    for blocks in block_lists:
        if len(blocks) < 2:
            continue
        sig = np.array([b.sigma for b in blocks], np.int64)
        phi = np.array([b.phi for b in blocks], np.int64)
        sg.append(np.diff(sig))
        pg.append(np.diff(phi))
    if not sg:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    return np.concatenate(sg), np.concatenate(pg)


def _bootstrap_ci(samples, stat, reps=_BOOT_REPS, seed=_BOOT_SEED):
    """Percentile bootstrap over block-indexed samples; deterministic."""
    rng = np.random.default_rng(seed)
    n = samples[0].size
    vals = np.empty(reps)
    for r in range(reps):
        idx = rng.integers(0, n, n)
        vals[r] = stat(*[s[idx] for s in samples])
    return float(np.quantile(vals, 0.025)), float(np.quantile(vals, 0.975))


def estimate_speed(block_lists):
    """Speed nu = mean level gap / mean time gap, with a bootstrap CI.

    The opening block of each trace only anchors the first gap; its own
    length is never used, so the estimator sees i.i.d. gaps only.
    """
    sg, pg = _gap_arrays(block_lists)
    if sg.size < 100:
        raise InsufficientDataError(
            f"need >= 100 confirmed gaps, have {sg.size}"
        )
    nu = float(pg.mean() / sg.mean())
    ci = _bootstrap_ci([pg.astype(float), sg.astype(float)], lambda p, s: p.mean() / s.mean())
    return nu, ci


def loop_erase(trace, horizon=None):
    """Chronological loop erasure up to `horizon`, as long-range edges.

    Walks on trees erase to the geodesic, but the erasure is run honestly
    on the vertex path so the result doubles as a trace consistency check.
    """
    top = len(trace) - 1
    if horizon is None:
        horizon = top
    horizon = min(int(horizon), top)
    stack = []
    pos = {}
    for k in range(horizon + 1):
        v = (int(trace.ball_ids[k]), int(trace.local_ids[k]))
        if v in pos:
            for dropped in stack[pos[v] + 1 :]:
                del pos[dropped]
            del stack[pos[v] + 1 :]
        else:
            pos[v] = len(stack)
            stack.append(v)
    edges = []
    for a, b in zip(stack, stack[1:]):
        if a[0] != b[0]:
            edges.append((TreeVertex(*a), TreeVertex(*b)))
    return LerwPath(edges=tuple(edges))


def _branch_locals(t, start_ball):
    """Map each materialized descendant of start_ball to the local exit of
    start_ball it hangs below; start_ball itself maps to -1."""
    a = t.arena
    marks = {int(start_ball): -1}
    for b in range(int(start_ball) + 1, a.n_balls):
        p = int(a.ab_parent[b])
        if p in marks:
            marks[b] = int(a.ab_attach[b]) if p == int(start_ball) else marks[p]
    return marks


def _truncated_absorb_prob(t, start_ball, depth, target_test):
    """P(walk from start_ball's center is absorbed at a depth-`depth` ball
    center passing `target_test`), on the subtree below start_ball.

    Materializes the truncated subtree (rolled back afterwards), assembles
    the absorbing-boundary linear system, and solves it exactly.
    """
    a = t.arena
    mark = a.mark()
    try:
        base_level = int(a.ab_level[start_ball])
        balls = [int(start_ball)]
        frontier = [int(start_ball)]
        absorbing = []
        for rel in range(depth):
            if (len(balls) + len(frontier) * t.catalog.max_ball) * t.catalog.max_ball > _SOLVE_STATE_CAP:
                raise SizeLimitError("truncated subtree too large for the exact solver")
            nxt = []
            for b in frontier:
                c = int(a.ab_center[b])
                size = t.catalog.ball_size(c)
                for local in range(size):
                    slot = a.child_slot(b, local)
                    if slot == -2:
                        continue
                    child = a.ensure_child(b, local)
                    if rel + 1 == depth:
                        absorbing.append(child)
                    else:
                        nxt.append(child)
            balls += nxt
            frontier = nxt
        index = {}
        offsets = []
        total = 0
        for b in balls:
            offsets.append(total)
            index[b] = len(offsets) - 1
            total += t.catalog.ball_size(int(a.ab_center[b]))
        rows, cols, vals = [], [], []
        rhs = np.zeros(total)
        for bi, b in enumerate(balls):
            c = int(a.ab_center[b])
            size = t.catalog.ball_size(c)
            rel = int(a.ab_level[b]) - base_level
            for local in range(size):
                x = offsets[bi] + local
                adj = t.catalog.adj_row(c, local)
                lr = []
                if local == 0:
                    if b != int(start_ball):
                        p = int(a.ab_parent[b])
                        lr.append((index[p], int(a.ab_attach[b]), None))
                    elif a.child_slot(b, 0) not in (-2,):
                        child = a.child_slot(b, 0)
                        if rel + 1 == depth:
                            lr.append((None, None, child))
                        else:
                            lr.append((index[child], 0, None))
                else:
                    child = a.child_slot(b, local)
                    if rel + 1 == depth:
                        lr.append((None, None, child))
                    else:
                        lr.append((index[child], 0, None))
                deg = len(adj) + len(lr)
                w = 1.0 / deg
                for j in adj:
                    rows.append(x)
                    cols.append(offsets[bi] + int(j))
                    vals.append(w)
                for tb, tl, absorbed in lr:
                    if absorbed is not None:
                        if target_test(int(absorbed)):
                            rhs[x] += w
                    else:
                        rows.append(x)
                        cols.append(offsets[tb] + tl)
                        vals.append(w)
        q = sp.csr_matrix((vals, (rows, cols)), shape=(total, total))
        h = spla.spsolve(sp.identity(total, format="csr") - q, rhs)
        return float(h[offsets[index[int(start_ball)]]])
    finally:
        a.rollback(mark)


def lerw_step_prob(t, from_center, target_exit, method="monte-carlo", params=None):
    """Probability that the loop erasure exits a ball through `target_exit`.

    Equivalently, the chance that a walk on the subtree below `from_center`,
    stopped on first reaching relative depth D, made its last visit to the
    ball at `target_exit`. Monte Carlo uses batched kernel walks seeded
    deterministically from the ball identity; exact-truncated solves the
    absorbing linear system at the same depth, so the two estimate the same
    quantity.
    """
    params = dict(params or {})
    t._check(from_center)
    t._check(target_exit)
    if from_center.local_vertex_id != 0:
        raise InvalidParameterError("from_center must be a ball center")
    if target_exit.ball_id != from_center.ball_id or target_exit.local_vertex_id == 0:
        raise InvalidParameterError("target_exit must be a non-center vertex of the same ball")
    depth = int(params.get("depth", DEFAULT_ESCAPE_DEPTH))
    if depth < 1:
        raise InvalidParameterError("depth must be >= 1")
    b = from_center.ball_id
    if method == "monte-carlo":
        trials = int(params.get("trials", DEFAULT_TRIALS))
        if trials < 1:
            raise InvalidParameterError("trials must be >= 1")
        if "rng" in params:
            seed = int(params["rng"].integers(0, 2**63))
        else:
            seed = int(
                K.derive_seed(int(t.arena.ab_uid[b]), "step-prob", depth, trials)
            )
        mark = t.arena.mark()
        try:
            _, counts = run_tree_mc(
                t, K.MODE_LASTEXIT, from_center, depth, trials, K.new_stream(seed)
            )
        finally:
            t.arena.rollback(mark)
        hits = int(counts[target_exit.local_vertex_id])
        wide = trials < 100 or depth < 2
        if hits == 0:
            p = 0.5 / trials
            wide = True
        else:
            p = hits / trials
        se = math.sqrt(p * (1.0 - p) / trials)
        return StepProb(p, se, "monte-carlo", depth, trials, wide)
    if method == "exact-truncated":
        a = t.arena

        def test(ball_id):
            # classify an absorbing ball by the exit of b it hangs below
            cur = int(ball_id)
            while int(a.ab_parent[cur]) != b:
                cur = int(a.ab_parent[cur])
                if cur < 0:
                    return False
            return int(a.ab_attach[cur]) == target_exit.local_vertex_id

        p = _truncated_absorb_prob(t, b, depth, test)
        return StepProb(p, 0.0, "exact-truncated", depth, 0, depth < 2)
    raise InvalidParameterError(f"unknown method {method!r}")


def path_weight_W(t, path, method="monte-carlo", params=None):
    """Minus-log probability that the loop erasure follows `path`.

    Sums -log of the per-ball last-exit factors; factor errors propagate by
    the delta method and any wide-CI factor flags the whole weight.
    """
    factors = []
    total = 0.0
    var = 0.0
    wide = False
    for tail, head in path.edges:
        if int(t.arena.ab_parent[head.ball_id]) != tail.ball_id or head.local_vertex_id != 0:
            raise InvalidParameterError("path edge does not descend a parent-child pair")
        if int(t.arena.ab_attach[head.ball_id]) != tail.local_vertex_id:
            raise InvalidParameterError("path edge tail does not match the child's attach point")
        f = lerw_step_prob(
            t, TreeVertex(tail.ball_id, 0), tail, method=method, params=params
        )
        factors.append(f)
        total += -math.log(f.value)
        if f.value > 0:
            var += (f.stderr / f.value) ** 2
        wide = wide or f.wide_ci
    return PathWeight(value=total, stderr=math.sqrt(var), wide_ci=wide, factors=tuple(factors))


def first_hit_weight_Wtilde(t, e, trials, rng, max_level=MAX_WTILDE_LEVEL):
    """Minus-log chance that the first entry to the edge's level crosses it.

    Runs independent root walks, each stopped at its first arrival to the
    level of e's head ball, and counts arrivals through e. Zero counts give
    only the lower bound log(trials).
    """
    tail, head = e
    t._check(head)
    level = int(t.arena.ab_level[head.ball_id])
    if head.local_vertex_id != 0 or int(t.arena.ab_parent[head.ball_id]) != tail.ball_id:
        raise InvalidParameterError("edge head must be the child ball center")
    if level > int(max_level):
        raise InvalidParameterError(
            f"edge level {level} exceeds the resolvable cap {max_level}"
        )
    trials = int(trials)
    if trials < 1:
        raise InvalidParameterError("trials must be >= 1")
    seed = int(rng.integers(0, 2**63))
    mark = t.arena.mark()
    try:
        _, entered = run_tree_mc(
            t, K.MODE_FIRSTENTRY, t.root, level, trials, K.new_stream(seed)
        )
    finally:
        t.arena.rollback(mark)
    hits = int(np.count_nonzero(entered == head.ball_id))
    if hits == 0:
        return WtildeEstimate(
            value=math.log(trials),
            ci_low=None,
            ci_high=None,
            hits=0,
            trials=trials,
            level=level,
            lower_bound_only=True,
        )
    p = hits / trials
    se = math.sqrt(p * (1.0 - p) / trials)
    # delta method on -log p
    half = 1.959963984540054 * se / p
    w = -math.log(p)
    return WtildeEstimate(
        value=w, ci_low=w - half, ci_high=w + half,
        hits=hits, trials=trials, level=level,
    )


def first_hit_weight_exact(t, e):
    """Absorbing first-passage solve for the same weight, small levels only."""
    tail, head = e
    t._check(head)
    level = int(t.arena.ab_level[head.ball_id])
    if head.local_vertex_id != 0 or int(t.arena.ab_parent[head.ball_id]) != tail.ball_id:
        raise InvalidParameterError("edge head must be the child ball center")
    target = head.ball_id
    p = _truncated_absorb_prob(t, 0, level, lambda bid: bid == target)
    if p <= 0.0:
        return math.inf
    return -math.log(p)


def truncation_event(wtilde, level, n, A, K_cut):
    """True when the weight strictly exceeds log n - A*sqrt(log n) and the
    edge sits at level >= K_cut.

    Accepts a plain number or a WtildeEstimate; a lower-bound-only estimate
    counts as exceeding every finite threshold.
    """
    if isinstance(wtilde, WtildeEstimate):
        w = math.inf if wtilde.lower_bound_only else wtilde.value
    else:
        w = float(wtilde)
    n = int(n)
    if n < 2:
        raise InvalidParameterError("n must be >= 2")
    threshold = math.log(n) - float(A) * math.sqrt(math.log(n))
    return bool(int(level) >= int(K_cut) and w > threshold)


def _ancestor_chain(t, ball, stop_ball):
    """Balls from `stop_ball` down to `ball` inclusive, via parent links."""
    chain = [int(ball)]
    cur = int(ball)
    while cur != int(stop_ball):
        cur = int(t.arena.ab_parent[cur])
        if cur < 0:
            raise InvalidInputError("blocks do not lie on one root branch")
        chain.append(cur)
    chain.reverse()
    return chain


def estimate_entropy(runs, method="monte-carlo", params=None):
    """Speed and entropy from regeneration blocks of one or more traces.

    `runs` is a sequence of (tree, blocks) pairs whose blocks came from
    walks on that tree. For each block index k >= 2 the weight Y_k is the
    minus-log probability of the loop-erasure branch between regeneration
    k-1 and regeneration k, evaluated on the quenched tree by last-exit
    factors.
    """
    rows = []
    ys, pgs, sgs = [], [], []
    for replica, (tree, blocks) in enumerate(runs):
        if len(blocks) < 2:
            continue
        for k in range(1, len(blocks)):
            prev, cur = blocks[k - 1], blocks[k]
            chain = _ancestor_chain(tree, cur.edge_ball, prev.edge_ball)
            edges = []
            for parent, child in zip(chain, chain[1:]):
                attach = int(tree.arena.ab_attach[child])
                edges.append((TreeVertex(parent, attach), TreeVertex(child, 0)))
            w = path_weight_W(tree, LerwPath(tuple(edges)), method=method, params=params)
            y = w.value
            pg = cur.phi - prev.phi
            sg = cur.sigma - prev.sigma
            ys.append(y)
            pgs.append(pg)
            sgs.append(sg)
            rows.append((replica, k + 1, sg, pg, y))
    if len(ys) < 100:
        raise InsufficientDataError(
            f"need >= 100 confirmed blocks, have {len(ys)}"
        )
    y = np.array(ys)
    pg = np.array(pgs, float)
    sg = np.array(sgs, float)
    gamma = float(y.mean())
    mean_pg = float(pg.mean())
    mean_sg = float(sg.mean())
    nu = mean_pg / mean_sg
    h = gamma / mean_pg
    ci = {
        "nu": _bootstrap_ci([pg, sg], lambda p, s: p.mean() / s.mean()),
        "gamma": _bootstrap_ci([y], lambda v: v.mean()),
        "h": _bootstrap_ci([y, pg], lambda v, p: v.mean() / p.mean()),
    }
    return EntropyEstimate(
        h_hat=h,
        nu_hat=nu,
        gamma_hat=gamma,
        mean_phi_gap=mean_pg,
        mean_sigma_gap=mean_sg,
        ci=ci,
        blocks_used=len(ys),
        var_y=float(y.var(ddof=1)) if len(ys) > 1 else 0.0,
        degenerate=bool(gamma <= 0.0),
        block_rows=tuple(rows),
    )


@dataclass
class EntropicTime:
    """Leading-order cutoff prediction log n / (nu * h)."""

    value: float
    ci_low: float
    ci_high: float


def entropic_time(n, est):
    """Predicted mixing time log n / (nu_hat * h_hat) with propagated CI."""
    n = int(n)
    if n < 2:
        raise InvalidParameterError("n must be >= 2")
    if est.degenerate or est.nu_hat <= 0 or est.h_hat <= 0:
        raise InvalidParameterError("entropy estimate is degenerate")
    logn = math.log(n)
    value = logn / (est.nu_hat * est.h_hat)
    nu_lo, nu_hi = est.ci["nu"]
    h_lo, h_hi = est.ci["h"]
    lo = logn / (nu_hi * h_hi)
    hi = logn / (nu_lo * h_lo)
    return EntropicTime(value=value, ci_low=lo, ci_high=hi)


def save_blocks_csv(est, path):
    """Per-block CSV with `replica,block_index,sigma_gap,phi_gap,Y` rows."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("replica,block_index,sigma_gap,phi_gap,Y\n")
        for replica, k, sg, pg, y in est.block_rows:
            fh.write(f"{replica},{k},{sg},{pg},{y:.12g}\n")


def save_entropy_json(est, path, extra=None):
    """Summary JSON with the point estimates, CIs, and block count."""
    payload = {
        "h_hat": est.h_hat,
        "nu_hat": est.nu_hat,
        "gamma_hat": est.gamma_hat,
        "mean_phi_gap": est.mean_phi_gap,
        "mean_sigma_gap": est.mean_sigma_gap,
        "ci": {k: list(v) for k, v in est.ci.items()},
        "blocks_used": est.blocks_used,
        "var_y": est.var_y,
        "degenerate": est.degenerate,
    }
    if extra:
        payload.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
