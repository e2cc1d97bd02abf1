"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

The fallback is selected when numba is unavailable or when the environment
variable QUASIMIX_NO_NUMBA is set to a non-empty value. Both paths run the
same source, so results are bit-identical; tests assert this explicitly.

Random number generation inside kernels uses a splitmix64 stream whose
64-bit state is carried in a one-element uint64 array. Unsigned wrap-around
is intended; pure-python callers silence the numpy overflow warning around
kernel calls (`errstate_for_fallback`).

Quasi-tree walks operate on a flat ball arena. Kernels materialize child
balls themselves from hash-derived sub-seeds, so a child's identity depends
only on (parent uid, attach slot), never on access order. A kernel returns
NEED_CHILD only when the arena arrays are out of capacity; the caller grows
them and re-enters, with all walk progress carried in `state` and the RNG
stream, so re-entry never replays a random draw.
"""

import contextlib
import os
import zlib

import numpy as np

_env_off = bool(os.environ.get("QUASIMIX_NO_NUMBA", ""))
try:
    if _env_off:
        raise ImportError("numba disabled by QUASIMIX_NO_NUMBA")
    import numba

    HAS_NUMBA = True
except ImportError:
    numba = None
    HAS_NUMBA = False

NUMBA_ENABLED = HAS_NUMBA


def errstate_for_fallback():
    """Context silencing integer-overflow warnings on the pure-python path."""
    if NUMBA_ENABLED:
        return contextlib.nullcontext()
    return np.errstate(over="ignore")


# splitmix64 constants, frozen as numpy scalars so numba treats them as u64
_SM_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_SM_M1 = np.uint64(0xBF58476D1CE4E5B9)
_SM_M2 = np.uint64(0x94D049BB133111EB)
_S11 = np.uint64(11)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S32 = np.uint64(32)
_S33 = np.uint64(33)
_INV53 = float(2.0**-53)
_CENTER_TAG = np.uint64(0xC3)

# status codes shared by the tree kernels
DONE = 0
NEED_CHILD = 1
TIMEOUT = 2

# monte-carlo walk modes
MODE_LASTEXIT = 1
MODE_FIRSTENTRY = 2
MODE_ESCAPE = 3

# state slots: 0 ball, 1 local, 2 step-in-trial, 3 last_local,
# 4 outcome accumulator, 5 scratch, 6 pending-lr flag, 7 trial index
STATE_LEN = 8


def _sm64_next_impl(rst):
    s = rst[0] + _SM_GAMMA
    rst[0] = s
    z = (s ^ (s >> _S33)) * _SM_M1
    z = (z ^ (z >> _S27)) * _SM_M2
    return z ^ (z >> _S31)


def _sm64_bounded_impl(rst, k):
    # Lemire-style scaling; bias is O(k / 2**32), negligible at our ranges.
    u = _sm64_next_impl(rst)
    return np.int64(((u >> _S32) * np.uint64(k)) >> _S32)


def _sm64_float_impl(rst):
    return np.float64(_sm64_next_impl(rst) >> _S11) * _INV53


def _mix_impl(a, b):
    st = np.zeros(1, np.uint64)
    st[0] = a + (b + np.uint64(1)) * _SM_M2
    x = _sm64_next_impl(st)
    return _sm64_next_impl(st) ^ x


def _make_child_impl(
    cb_ptr, ab_center, ab_level, ab_parent, ab_attach, ab_uid, ab_child_ptr,
    children, cursors, n_base, b, i,
):
    """Materialize the child ball hanging off local slot i of ball b.

    Returns the new ball id. Caller must have checked capacity.
    The sub-seed depends only on (parent uid, slot), so materialization
    order cannot change the sampled tree.
    """
    u = _mix_impl(ab_uid[b], np.uint64(i))
    ch = _mix_impl(u, _CENTER_TAG)
    cen = np.int64(((ch >> _S32) * np.uint64(n_base)) >> _S32)
    nbid = cursors[0]
    ab_center[nbid] = cen
    ab_level[nbid] = ab_level[b] + 1
    ab_parent[nbid] = b
    ab_attach[nbid] = i
    ab_uid[nbid] = u
    sz = cb_ptr[cen + 1] - cb_ptr[cen]
    cp = cursors[1]
    ab_child_ptr[nbid] = cp
    children[cp] = -2
    for q in range(1, sz):
        children[cp + q] = -1
    cursors[0] = nbid + 1
    cursors[1] = cp + sz
    children[ab_child_ptr[b] + i] = nbid
    return nbid


def _tree_trace_impl(
    cb_ptr, cb_base, cb_adj_ptr, cb_adj,
    ab_center, ab_level, ab_parent, ab_attach, ab_uid, ab_child_ptr,
    children, cursors, n_base, max_ball,
    state, rst, n_steps,
    tr_ball, tr_local, tr_level, tr_cross, tr_edge,
):
    """Recorded simple random walk; fills trace arrays at indices 1..n_steps."""
    b = state[0]
    i = state[1]
    t = state[2]
    while t < n_steps:
        if state[6] == 1:
            c = children[ab_child_ptr[b] + i]
            if c < 0:
                if cursors[0] + 1 > ab_center.shape[0] or cursors[1] + max_ball > children.shape[0]:
                    state[0] = b
                    state[1] = i
                    state[2] = t
                    return NEED_CHILD, b, i
                c = _make_child_impl(
                    cb_ptr, ab_center, ab_level, ab_parent, ab_attach, ab_uid,
                    ab_child_ptr, children, cursors, n_base, b, i,
                )
            state[6] = 0
            nb = c
            ni = np.int64(0)
            cross = 1
            edge = c
        else:
            v = ab_center[b]
            row = cb_ptr[v] + i
            a0 = cb_adj_ptr[row]
            k_in = cb_adj_ptr[row + 1] - a0
            lr_parent = False
            has_lr = False
            if i == 0:
                if ab_parent[b] >= 0:
                    lr_parent = True
                    has_lr = True
                elif children[ab_child_ptr[b]] != -2:
                    has_lr = True
            else:
                has_lr = True
            deg = k_in + (1 if has_lr else 0)
            r = _sm64_bounded_impl(rst, deg)
            if r < k_in:
                nb = b
                ni = cb_adj[a0 + r]
                cross = 0
                edge = np.int64(-1)
            elif lr_parent:
                nb = ab_parent[b]
                ni = ab_attach[b]
                cross = -1
                edge = b
            else:
                c = children[ab_child_ptr[b] + i]
                if c < 0:
                    state[6] = 1
                    if cursors[0] + 1 > ab_center.shape[0] or cursors[1] + max_ball > children.shape[0]:
                        state[0] = b
                        state[1] = i
                        state[2] = t
                        return NEED_CHILD, b, i
                    c = _make_child_impl(
                        cb_ptr, ab_center, ab_level, ab_parent, ab_attach, ab_uid,
                        ab_child_ptr, children, cursors, n_base, b, i,
                    )
                    state[6] = 0
                nb = c
                ni = np.int64(0)
                cross = 1
                edge = c
        b = nb
        i = ni
        t += 1
        tr_ball[t] = b
        tr_local[t] = i
        tr_level[t] = ab_level[b]
        tr_cross[t] = cross
        tr_edge[t] = edge
    state[0] = b
    state[1] = i
    state[2] = t
    return DONE, b, i


def _tree_mc_impl(
    cb_ptr, cb_base, cb_adj_ptr, cb_adj,
    ab_center, ab_level, ab_parent, ab_attach, ab_uid, ab_child_ptr,
    children, cursors, n_base, max_ball,
    state, rst, mode, trials, start_b, start_i, depth, max_steps,
    out_arr,
):
    """Batched unrecorded walks. Semantics per mode:

    MODE_LASTEXIT: subtree walk from the center of start_b (its parent edge
      is blocked); each trial stops on first reaching relative depth `depth`
      and increments out_arr at the local index of the walk's last visit to
      the start ball.
    MODE_FIRSTENTRY: walk from (start_b, start_i); each trial stops on first
      reaching absolute level `depth`; out_arr[trial] = ball id entered.
    MODE_ESCAPE: walk from (start_b, start_i) on the full tree; a trial
      fails on revisiting the start vertex or visiting the vertex one
      long-range step above the start ball, succeeds on reaching relative
      depth `depth`; successes accumulate in state[4].
    """
    trial = state[7]
    b = state[0]
    i = state[1]
    t = state[2]
    base_level = ab_level[start_b]
    while trial < trials:
        if t >= max_steps:
            state[0] = b
            state[1] = i
            state[2] = t
            state[7] = trial
            return TIMEOUT, b, i
        if state[6] == 1:
            c = children[ab_child_ptr[b] + i]
            if c < 0:
                if cursors[0] + 1 > ab_center.shape[0] or cursors[1] + max_ball > children.shape[0]:
                    state[0] = b
                    state[1] = i
                    state[2] = t
                    state[7] = trial
                    return NEED_CHILD, b, i
                c = _make_child_impl(
                    cb_ptr, ab_center, ab_level, ab_parent, ab_attach, ab_uid,
                    ab_child_ptr, children, cursors, n_base, b, i,
                )
            state[6] = 0
            nb = c
            ni = np.int64(0)
        else:
            v = ab_center[b]
            row = cb_ptr[v] + i
            a0 = cb_adj_ptr[row]
            k_in = cb_adj_ptr[row + 1] - a0
            lr_parent = False
            has_lr = False
            if i == 0:
                blocked = mode == MODE_LASTEXIT and b == start_b
                if ab_parent[b] >= 0 and not blocked:
                    lr_parent = True
                    has_lr = True
                elif ab_parent[b] < 0 and children[ab_child_ptr[b]] != -2:
                    has_lr = True
            else:
                has_lr = True
            deg = k_in + (1 if has_lr else 0)
            r = _sm64_bounded_impl(rst, deg)
            if r < k_in:
                nb = b
                ni = cb_adj[a0 + r]
            elif lr_parent:
                nb = ab_parent[b]
                ni = ab_attach[b]
            else:
                c = children[ab_child_ptr[b] + i]
                if c < 0:
                    state[6] = 1
                    if cursors[0] + 1 > ab_center.shape[0] or cursors[1] + max_ball > children.shape[0]:
                        state[0] = b
                        state[1] = i
                        state[2] = t
                        state[7] = trial
                        return NEED_CHILD, b, i
                    c = _make_child_impl(
                        cb_ptr, ab_center, ab_level, ab_parent, ab_attach, ab_uid,
                        ab_child_ptr, children, cursors, n_base, b, i,
                    )
                    state[6] = 0
                nb = c
                ni = np.int64(0)
        b = nb
        i = ni
        t += 1

        finished = False
        if mode == MODE_LASTEXIT:
            if b == start_b:
                state[3] = i
            if ab_level[b] - base_level >= depth:
                out_arr[state[3]] += 1
                finished = True
        elif mode == MODE_FIRSTENTRY:
            if ab_level[b] >= depth:
                out_arr[trial] = b
                finished = True
        else:
            # forbidden: the start vertex itself, and the vertex one
            # long-range step above the start ball (the root center when the
            # start ball is the root)
            failed = False
            if b == start_b and i == start_i:
                failed = True
            elif ab_parent[start_b] >= 0:
                if b == ab_parent[start_b] and i == ab_attach[start_b]:
                    failed = True
            elif b == start_b and i == 0:
                failed = True
            if failed:
                finished = True
            elif ab_level[b] - base_level >= depth:
                state[4] += 1
                finished = True
        if finished:
            trial += 1
            b = start_b
            i = start_i
            t = 0
            state[3] = start_i
    state[0] = b
    state[1] = i
    state[2] = t
    state[7] = trial
    return DONE, b, i


def _bottleneck_scan_impl(Q, pis_vec):
    """Exhaustive bottleneck constants over all vertex subsets.

    Q is the symmetric edge-measure matrix Q(x, y) = pi(x) P(x, y).
    Returns (phi_star, phi_mask, zeta_star, zeta_s_mask, zeta_a_mask).
    Phi* minimizes Q(S, S^c)/pi(S) over 0 < pi(S) <= 1/2; zeta* minimizes
    [Q(A, A) + Q(B, B) + Q(S, S^c)]/pi(S) over nonempty S split as A + B.
    """
    n = Q.shape[0]
    full = 1 << n
    qaa = np.zeros(full, np.float64)
    pis = np.zeros(full, np.float64)
    for m in range(1, full):
        li = 0
        while ((m >> li) & 1) == 0:
            li += 1
        mp = m - (1 << li)
        s = Q[li, li]
        rest = mp
        while rest != 0:
            j = 0
            while ((rest >> j) & 1) == 0:
                j += 1
            s += 2.0 * Q[li, j]
            rest -= 1 << j
        qaa[m] = qaa[mp] + s
        pis[m] = pis[mp] + pis_vec[li]

    phi_star = np.inf
    phi_mask = 0
    zeta_star = np.inf
    zeta_s = 0
    zeta_a = 0
    for m in range(1, full):
        ps = pis[m]
        if ps <= 0.0:
            continue
        qout = ps - qaa[m]
        if ps <= 0.5 + 1e-12 and m != full - 1:
            val = qout / ps
            if val < phi_star:
                phi_star = val
                phi_mask = m
        a = m
        while True:
            val = (qaa[a] + qaa[m - a] + qout) / ps
            if val < zeta_star:
                zeta_star = val
                zeta_s = m
                zeta_a = a
            if a == 0:
                break
            a = (a - 1) & m
    return phi_star, phi_mask, zeta_star, zeta_s, zeta_a


# undecorated references kept for cross-path parity tests; under numba these
# run python control flow over jitted helpers and stay value-identical
tree_trace_py = _tree_trace_impl
tree_mc_py = _tree_mc_impl
bottleneck_scan_py = _bottleneck_scan_impl
sm64_next_py = _sm64_next_impl
sm64_bounded_py = _sm64_bounded_impl

if NUMBA_ENABLED:
    _jit = numba.njit(cache=True, nogil=True)
    sm64_next = _jit(_sm64_next_impl)
    sm64_bounded = _jit(_sm64_bounded_impl)
    sm64_float = _jit(_sm64_float_impl)
    sm64_mix = _jit(_mix_impl)
    # rebind so the walk kernels compile against jitted callees
    _sm64_next_impl = sm64_next
    _sm64_bounded_impl = sm64_bounded
    _mix_impl = sm64_mix
    _make_child = _jit(_make_child_impl)
    _make_child_impl = _make_child
    tree_trace = _jit(_tree_trace_impl)
    tree_mc = _jit(_tree_mc_impl)
    bottleneck_scan = numba.njit(cache=True)(_bottleneck_scan_impl)
else:
    sm64_next = _sm64_next_impl
    sm64_bounded = _sm64_bounded_impl
    sm64_float = _sm64_float_impl
    sm64_mix = _mix_impl
    _make_child = _make_child_impl
    tree_trace = _tree_trace_impl
    tree_mc = _tree_mc_impl
    bottleneck_scan = _bottleneck_scan_impl


def derive_seed(master, *tags):
    """Deterministic 64-bit sub-seed from a master seed and hashable tags.

    Tags may be ints or strings; strings hash via crc32 so the derivation is
    stable across processes and python versions.
    """
    with np.errstate(over="ignore"):
        s = np.uint64(int(master) & 0xFFFFFFFFFFFFFFFF)
        for tag in tags:
            if isinstance(tag, str):
                tag = zlib.crc32(tag.encode("utf-8"))
            t = np.uint64(int(tag) & 0xFFFFFFFFFFFFFFFF)
            # jitted calls box uint64 results as plain ints; re-wrap so the
            # next dispatch stays on the uint64 signature
            s = np.uint64(int(sm64_mix(s, t)) & 0xFFFFFFFFFFFFFFFF)
        return s


def new_stream(seed):
    """Fresh one-element uint64 state array for the kernel RNG."""
    st = np.empty(1, np.uint64)
    st[0] = np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF)
    return st
