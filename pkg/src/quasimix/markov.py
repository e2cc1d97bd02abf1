"""Exact mixing and spectral analysis of walks on finite (multi)graphs.

Everything here is deterministic linear algebra at desk scale: worst-case
total-variation profiles by evolving one distribution per start, spectra of
the symmetrized kernel by dense eigendecomposition (iterative fallback above
a size cap), exhaustive bottleneck-ratio scans on tiny state spaces, and the
projection/restriction chains used by the decomposition bound.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ._kernels import bottleneck_scan
from .errors import InvalidInputError, InvalidParameterError, QuasimixError, SizeLimitError
from .graphs import Graph, is_bipartite
from .matching import StarGraph

DENSE_CAP = 4096
EXACT_START_CAP = 2048
SAMPLED_STARTS = 64


class TransitionKernel:
    """Row-stochastic kernel stored sparse, with the holding probability kept.

    Rows must sum to 1 within 1e-12.
    """

    __slots__ = ("n", "matrix", "laziness")

    def __init__(self, matrix, laziness=0.0):
        matrix = sp.csr_matrix(matrix)
        rowsums = np.asarray(matrix.sum(axis=1)).ravel()
        if matrix.shape[0] != matrix.shape[1]:
            raise InvalidParameterError("kernel must be square")
        if np.any(np.abs(rowsums - 1.0) > 1e-12):
            raise InvalidParameterError("kernel rows must sum to 1")
        if matrix.nnz and matrix.data.min() < -1e-15:
            raise InvalidParameterError("kernel entries must be nonnegative")
        self.n = matrix.shape[0]
        self.matrix = matrix
        self.laziness = float(laziness)

    def dense(self):
        return self.matrix.toarray()

    @property
    def entries(self):
        return self.dense()

    def __repr__(self):
        return f"TransitionKernel(n={self.n}, laziness={self.laziness})"


@dataclass
class MixingProfile:
    """Worst-case TV distance curve with threshold times.

    `d[t]` is max over evaluated starts of the TV distance to pi after t
    steps; in sampled mode this is a lower bound on the true worst case.
    `tmix` maps each requested threshold to the smallest integer t with
    d(t) <= eps, or None when unresolved by the step cap. `window` maps
    eps < 1/2 to tmix(eps) - tmix(1 - eps).
    """

    d: np.ndarray
    tmix: dict
    window: dict
    start_mode: str


@dataclass
class SpectralReport:
    """Edge eigenvalues of a reversible kernel.

    lambda_min and gap_abs are None in iterative mode (and for single-state
    chains, where no second eigenvalue exists).
    """

    lambda2: object
    lambda_min: object
    gap_abs: object
    method: str
    tolerance: float = 0.0


def _as_graph(g):
    if isinstance(g, StarGraph):
        return g.combined
    if isinstance(g, Graph):
        return g
    raise InvalidParameterError("expected a Graph or StarGraph")


def srw_kernel(g, laziness=0.0):
    """Simple random walk kernel, optionally lazy.

    P(x,y) = (1 - laziness) * mult(x,y) / deg(x) off-diagonal, plus the
    holding mass on the diagonal. Parallel edges contribute multiplicity.
    """
    graph = _as_graph(g)
    laziness = float(laziness)
    if not 0.0 <= laziness < 1.0:
        raise InvalidParameterError("laziness must be in [0, 1)")
    deg = graph.degrees()
    if graph.n == 0 or np.any(deg == 0):
        raise InvalidInputError("walk undefined on isolated vertices")
    data = np.repeat((1.0 - laziness) / deg, deg)
    mat = sp.csr_matrix(
        (data, graph.indices.copy(), graph.indptr.copy()), shape=(graph.n, graph.n)
    )
    mat.sum_duplicates()
    if laziness > 0.0:
        mat = mat + laziness * sp.identity(graph.n, format="csr")
    if laziness == 0.0 and is_bipartite(graph):
        warnings.warn(
            "bipartite graph: the non-lazy walk is periodic, laziness=1/2 recommended",
            stacklevel=2,
        )
    return TransitionKernel(mat, laziness=laziness)


def stationary(k, g):
    """Degree-biased stationary distribution, verified against the kernel."""
    graph = _as_graph(g)
    if len(graph.components()) != 1:
        raise InvalidInputError("stationary distribution needs a connected graph")
    deg = graph.degrees().astype(np.float64)
    pi = deg / deg.sum()
    resid = np.max(np.abs(pi @ k.matrix - pi))
    if resid > 1e-12:
        raise InvalidInputError(f"pi P = pi fails by {resid:.2e}")
    return pi


def tv_distance(mu, nu):
    """Total variation distance, half the l1 norm of the difference."""
    mu = np.asarray(mu, np.float64)
    nu = np.asarray(nu, np.float64)
    if mu.shape != nu.shape:
        raise InvalidInputError("distributions must share support size")
    for v in (mu, nu):
        if abs(float(v.sum()) - 1.0) > 1e-9:
            raise InvalidInputError("distribution does not sum to 1")
    return 0.5 * float(np.abs(mu - nu).sum())


def _one_step_tv(k, pi):
    """TV(P(x,.), pi) for every start x, computed row-wise."""
    p = k.matrix
    out = np.empty(k.n)
    for x in range(k.n):
        row = np.asarray(p.getrow(x).todense()).ravel()
        out[x] = 0.5 * np.abs(row - pi).sum()
    return out


def mixing_profile(k, pi, eps_list, t_cap, start_mode="auto", rng=None):
    """Worst-case TV profile d(t) and threshold times.

    Exact mode evolves one distribution per start; sampled mode (forced
    above EXACT_START_CAP states) evolves SAMPLED_STARTS uniform starts plus
    the start with the largest one-step distance, and its d(t) is a lower
    bound. Evolution stops at t_cap or once d(t) < min(eps)/2.
    """
    t_cap = int(t_cap)
    if t_cap < 1:
        raise InvalidParameterError("t_cap must be >= 1")
    eps_list = [float(e) for e in eps_list]
    if not eps_list or any(not 0.0 < e < 1.0 for e in eps_list):
        raise InvalidParameterError("thresholds must lie in (0, 1)")
    pi = np.asarray(pi, np.float64)
    if start_mode == "auto":
        start_mode = "exact-all-starts" if k.n <= EXACT_START_CAP else "sampled-starts"
    if start_mode == "exact-all-starts":
        starts = np.arange(k.n)
        mode_tag = "exact-all-starts"
    elif start_mode == "sampled-starts":
        if rng is None:
            raise InvalidParameterError("sampled-starts mode needs an rng")
        count = min(SAMPLED_STARTS, k.n)
        starts = rng.choice(k.n, size=count, replace=False)
        greedy = int(np.argmax(_one_step_tv(k, pi)))
        if greedy not in starts:
            starts = np.append(starts, greedy)
        mode_tag = f"sampled-starts({starts.size})"
    else:
        raise InvalidParameterError(f"unknown start mode {start_mode!r}")

    m = np.zeros((starts.size, k.n))
    m[np.arange(starts.size), starts] = 1.0
    p = k.matrix
    floor = min(eps_list) / 2.0
    d = [float(np.max(0.5 * np.abs(m - pi).sum(axis=1)))]
    for _ in range(t_cap):
        m = m @ p
        val = float(np.max(0.5 * np.abs(m - pi).sum(axis=1)))
        if val > d[-1] + 1e-12:
            raise QuasimixError("worst-case TV increased along the profile")
        d.append(val)
        if val < floor:
            break
    d = np.array(d)

    def first_below(eps):
        hits = np.flatnonzero(d <= eps)
        return int(hits[0]) if hits.size else None

    tmix = {eps: first_below(eps) for eps in eps_list}
    window = {}
    for eps in eps_list:
        if eps < 0.5:
            lo, hi = first_below(eps), first_below(1.0 - eps)
            window[eps] = None if lo is None or hi is None else lo - hi
    return MixingProfile(d=d, tmix=tmix, window=window, start_mode=mode_tag)


def _symmetrized(k, pi):
    """D^{1/2} P D^{-1/2}; also the reversibility witness."""
    root = np.sqrt(pi)
    s = sp.diags(root) @ k.matrix @ sp.diags(1.0 / root)
    asym = abs(s - s.T)
    if asym.nnz and asym.max() > 1e-10:
        raise InvalidInputError("kernel is not reversible for the given pi")
    return (s + s.T) * 0.5


def spectral_report(k, pi, dense_cap=DENSE_CAP):
    """Edge eigenvalues via the symmetrized kernel.

    Dense symmetric eigendecomposition up to dense_cap states; beyond that
    an iterative Lanczos solve reports lambda2 only.
    """
    pi = np.asarray(pi, np.float64)
    if k.n == 1:
        return SpectralReport(None, None, None, method="dense")
    s = _symmetrized(k, pi)
    if k.n <= dense_cap:
        vals = np.linalg.eigvalsh(s.toarray())
        lam2 = float(vals[-2])
        lmin = float(vals[0])
        gap = 1.0 - max(abs(lam2), abs(lmin))
        return SpectralReport(lam2, lmin, gap, method="dense")
    vals = spla.eigsh(
        s, k=2, which="LA", tol=1e-8, maxiter=100_000, return_eigenvectors=False
    )
    return SpectralReport(
        float(np.sort(vals)[0]), None, None, method="iterative", tolerance=1e-8
    )


def cheeger_bruteforce(k, pi):
    """Exhaustive bottleneck constants with minimizing certificates.

    Phi* scans all proper subsets with pi(S) <= 1/2; zeta* scans all
    nonempty S and all splits S = A + B. Exponential in n, hence the hard
    size cap.
    """
    if k.n > 16:
        raise SizeLimitError("exhaustive scan limited to 16 states")
    pi = np.asarray(pi, np.float64)
    q = k.dense() * pi[:, None]
    q = (q + q.T) * 0.5
    phi, phi_mask, zeta, zs, za = bottleneck_scan(q, pi)
    bits = lambda m: [i for i in range(k.n) if (int(m) >> i) & 1]
    certificates = {
        "phi_set": bits(phi_mask),
        "zeta_set": bits(zs),
        "zeta_a": bits(za),
        "zeta_b": bits(int(zs) - int(za)),
    }
    return float(phi), float(zeta), certificates


def _check_partition_cover(blocks, n):
    seen = np.zeros(n, bool)
    for b in blocks:
        for x in b:
            if not 0 <= x < n or seen[x]:
                raise InvalidInputError("blocks must partition the state space")
            seen[x] = True
    if not np.all(seen):
        raise InvalidInputError("blocks must cover every state")


def block_chain(k, pi, partition):
    """Projected chain on partition blocks.

    Phat(i,j) is the pi-conditional probability of stepping into block j
    from block i; reversible w.r.t. pihat(i) = pi(block_i).
    """
    blocks = list(partition.blocks)
    _check_partition_cover(blocks, k.n)
    pi = np.asarray(pi, np.float64)
    mcount = len(blocks)
    ind = sp.lil_matrix((k.n, mcount))
    for j, b in enumerate(blocks):
        for x in b:
            ind[int(x), j] = 1.0
    ind = ind.tocsr()
    flow = ind.T @ sp.diags(pi) @ k.matrix @ ind
    pihat = np.array([pi[np.asarray(b, int)].sum() for b in blocks])
    phat = sp.diags(1.0 / pihat) @ flow
    return TransitionKernel(phat, laziness=0.0)


def matching_block_multigraph(partition, m):
    """SRW kernel on the block multigraph induced by a perfect matching.

    One multigraph edge per matching pair between (possibly equal) blocks;
    K(i,j) = cross-edge count / |block_i| off-diagonal, the diagonal absorbs
    intra-block loops and any unmatched-vertex mass.
    """
    blocks = list(partition.blocks)
    owner = {}
    for j, b in enumerate(blocks):
        for x in b:
            owner[int(x)] = j
    mcount = len(blocks)
    counts = np.zeros((mcount, mcount))
    for u, v in m.pairs:
        if u not in owner or v not in owner:
            raise InvalidInputError("partition must cover all matched vertices")
        i, j = owner[u], owner[v]
        counts[i, j] += 1
        if i != j:
            counts[j, i] += 1
    sizes = np.array([len(b) for b in blocks], float)
    kmat = counts / sizes[:, None]
    off = kmat - np.diag(np.diag(kmat))
    np.fill_diagonal(kmat, 1.0 - off.sum(axis=1))
    return TransitionKernel(kmat, laziness=0.0)


def restricted_kernel(k, block):
    """Chain restricted to a block, leaked mass folded into the diagonal."""
    block = np.asarray(sorted(int(x) for x in block), np.int64)
    if block.size == 0:
        raise InvalidParameterError("block must be nonempty")
    sub = k.dense()[np.ix_(block, block)]
    off = sub - np.diag(np.diag(sub))
    np.fill_diagonal(sub, 1.0 - off.sum(axis=1))
    return TransitionKernel(sub, laziness=k.laziness)


def save_profile_csv(profile, path):
    """Profile CSV with `t,d` rows."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t,d\n")
        for t, val in enumerate(profile.d):
            fh.write(f"{t},{val:.12g}\n")
