"""Exact mixing, spectra, bottleneck scans, and block chains."""

import itertools
import math

import numpy as np
import pytest

from quasimix.cli import ExperimentConfig, _degree_pi, build_instance
from quasimix.errors import (
    InvalidInputError,
    InvalidParameterError,
    SizeLimitError,
)
from quasimix.graphs import Graph, Partition, greedy_partition, make_cycle, make_triangle_union
from quasimix.markov import (
    TransitionKernel,
    block_chain,
    cheeger_bruteforce,
    matching_block_multigraph,
    mixing_profile,
    restricted_kernel,
    save_profile_csv,
    spectral_report,
    srw_kernel,
    stationary,
    tv_distance,
)
from quasimix.matching import PerfectMatching, build_star, sample_star


def _star(k, seed):
    return sample_star(make_triangle_union(k), np.random.default_rng(seed))


def test_srw_kernel_entries():
    gs = build_star(make_cycle(4), PerfectMatching(pairs=((0, 1), (2, 3))))
    with pytest.warns(UserWarning):
        p = srw_kernel(gs).dense()
    # the doubled {0,1} edge carries multiplicity 2 out of degree 3
    assert p[0, 1] == pytest.approx(2.0 / 3.0)
    assert p[0, 3] == pytest.approx(1.0 / 3.0)
    assert p[0, 0] == 0.0
    lazy = srw_kernel(gs, laziness=0.5).dense()
    assert lazy[0, 0] == pytest.approx(0.5)
    assert lazy[0, 1] == pytest.approx(1.0 / 3.0)
    assert np.allclose(lazy, 0.5 * np.eye(4) + 0.5 * p)


def test_srw_kernel_validation():
    g = make_cycle(5)
    for bad in (-0.1, 1.0, 2.0):
        with pytest.raises(InvalidParameterError):
            srw_kernel(g, laziness=bad)
    with pytest.raises(InvalidInputError):
        srw_kernel(Graph.from_edges(3, [(0, 1)]))
    with pytest.warns(UserWarning):
        srw_kernel(make_cycle(4))


def test_transition_kernel_validation():
    with pytest.raises(InvalidParameterError):
        TransitionKernel(np.ones((2, 3)) / 3.0)
    with pytest.raises(InvalidParameterError):
        TransitionKernel(np.array([[0.5, 0.4], [0.5, 0.5]]))
    with pytest.raises(InvalidParameterError):
        TransitionKernel(np.array([[1.5, -0.5], [0.5, 0.5]]))


def test_stationary_degree_biased():
    gs = _star(4, 2)
    k = srw_kernel(gs)
    pi = stationary(k, gs)
    assert pi == pytest.approx(np.full(12, 1.0 / 12.0))
    with pytest.raises(InvalidInputError):
        stationary(srw_kernel(make_triangle_union(2)), make_triangle_union(2))
    # mismatched graph: degree profile disagrees with the kernel
    other = Graph.from_edges(5, [(0, 1), (1, 2), (2, 3), (3, 4), (0, 2)])
    with pytest.raises(InvalidInputError):
        stationary(srw_kernel(make_cycle(5)), other)


def test_tv_distance():
    assert tv_distance([0.5, 0.5], [0.5, 0.5]) == 0.0
    assert tv_distance([1.0, 0.0], [0.0, 1.0]) == 1.0
    assert tv_distance([0.7, 0.3], [0.4, 0.6]) == pytest.approx(0.3)
    with pytest.raises(InvalidInputError):
        tv_distance([1.0], [0.5, 0.5])
    with pytest.raises(InvalidInputError):
        tv_distance([0.7, 0.7], [0.5, 0.5])


def test_mixing_profile_matches_matrix_powers():
    gs = _star(10, 4)
    k = srw_kernel(gs)
    pi = stationary(k, gs)
    prof = mixing_profile(k, pi, [0.25, 0.1, 0.9], 400)
    assert prof.start_mode == "exact-all-starts"
    # oracle: evolve the full transition matrix by repeated multiplication
    p = k.dense()
    mt = np.eye(30)
    for t, want in enumerate(prof.d):
        if t > 0:
            mt = mt @ p
        got = 0.5 * np.abs(mt - pi).sum(axis=1).max()
        assert got == pytest.approx(float(want), abs=1e-10)
    for eps, t in prof.tmix.items():
        assert prof.d[t] <= eps
        assert t == 0 or prof.d[t - 1] > eps


def test_mixing_profile_window_and_sampled_mode():
    gs = _star(10, 4)
    k = srw_kernel(gs)
    pi = stationary(k, gs)
    prof = mixing_profile(k, pi, [0.25, 0.1, 0.75, 0.9], 400)
    assert prof.window[0.25] == prof.tmix[0.25] - prof.tmix[0.75]
    assert prof.window[0.1] == prof.tmix[0.1] - prof.tmix[0.9]
    assert 0.9 not in prof.window
    # with n <= the sample budget every start is drawn, so the sampled
    # profile coincides with the exact one
    samp = mixing_profile(
        k, pi, [0.25], 400, start_mode="sampled-starts", rng=np.random.default_rng(0)
    )
    assert samp.start_mode.startswith("sampled-starts")
    assert samp.tmix[0.25] == prof.tmix[0.25]
    with pytest.raises(InvalidParameterError):
        mixing_profile(k, pi, [0.25], 400, start_mode="sampled-starts")
    with pytest.raises(InvalidParameterError):
        mixing_profile(k, pi, [0.25], 400, start_mode="bogus")
    with pytest.raises(InvalidParameterError):
        mixing_profile(k, pi, [], 400)
    with pytest.raises(InvalidParameterError):
        mixing_profile(k, pi, [1.5], 400)
    with pytest.raises(InvalidParameterError):
        mixing_profile(k, pi, [0.25], 0)


def test_spectral_report_matches_eigh_oracle():
    gs = _star(6, 7)
    k = srw_kernel(gs)
    pi = stationary(k, gs)
    rep = spectral_report(k, pi)
    assert rep.method == "dense"
    # oracle: symmetrize by hand and take the dense spectrum
    p = k.dense()
    root = np.sqrt(pi)
    s = root[:, None] * p / root[None, :]
    vals = np.linalg.eigvalsh((s + s.T) / 2.0)
    assert rep.lambda2 == pytest.approx(float(vals[-2]), abs=1e-12)
    assert rep.lambda_min == pytest.approx(float(vals[0]), abs=1e-12)
    assert rep.gap_abs == pytest.approx(1.0 - max(abs(vals[-2]), abs(vals[0])))


def test_spectral_iterative_mode():
    gs = _star(16, 1)
    k = srw_kernel(gs)
    pi = stationary(k, gs)
    dense = spectral_report(k, pi)
    iter_rep = spectral_report(k, pi, dense_cap=10)
    assert iter_rep.method == "iterative"
    assert iter_rep.lambda_min is None and iter_rep.gap_abs is None
    assert iter_rep.lambda2 == pytest.approx(dense.lambda2, abs=1e-6)


def test_spectral_anchor_frozen(goldens):
    cfg = ExperimentConfig(experiment="spectral", n_list=(48,), seeds=tuple(range(5)))
    for row in goldens["spectral_n48"]:
        seed, lam2, lmin = int(row[0]), float(row[1]), float(row[2])
        gs, _ = build_instance(cfg, 48, seed)
        rep = spectral_report(srw_kernel(gs), _degree_pi(gs))
        assert rep.lambda2 == pytest.approx(lam2, abs=1e-12)
        assert rep.lambda_min == pytest.approx(lmin, abs=1e-12)
        # triangle components pin the bottom eigenvalue at exactly -2/3
        assert rep.lambda_min == pytest.approx(-2.0 / 3.0, abs=1e-9)


def test_mix_anchor_frozen(goldens):
    cfg = ExperimentConfig(experiment="mix", n_list=(48,), seeds=(0,))
    gs, _ = build_instance(cfg, 48, 0)
    prof = mixing_profile(srw_kernel(gs), _degree_pi(gs), [0.25, 0.1, 0.9], 2000)
    for eps_str, want in goldens["mix_n48_seed0"].items():
        assert prof.tmix[float(eps_str)] == want


def _bottleneck_oracle(p, pi):
    """Subset enumeration straight from the definitions."""
    n = p.shape[0]
    q = p * pi[:, None]
    q = (q + q.T) / 2.0

    def mass(a, b):
        return sum(q[x, y] for x in a for y in b)

    verts = list(range(n))
    phi = math.inf
    zeta = math.inf
    for r in range(1, n):
        for s in map(set, itertools.combinations(verts, r)):
            ps = sum(pi[x] for x in s)
            comp = set(verts) - s
            qout = mass(s, comp)
            if ps <= 0.5 + 1e-12:
                phi = min(phi, qout / ps)
            for ra in range(len(s) + 1):
                for a in map(set, itertools.combinations(sorted(s), ra)):
                    b = s - a
                    zeta = min(zeta, (mass(a, a) + mass(b, b) + qout) / ps)
    # the full set is a legal zeta candidate too
    s = set(verts)
    for ra in range(n + 1):
        for a in map(set, itertools.combinations(verts, ra)):
            b = s - a
            zeta = min(zeta, (mass(a, a) + mass(b, b)) / 1.0)
    return phi, zeta


def test_cheeger_bruteforce_matches_oracle():
    gs = _star(2, 9)
    k = srw_kernel(gs)
    pi = stationary(k, gs)
    phi, zeta, certs = cheeger_bruteforce(k, pi)
    ophi, ozeta = _bottleneck_oracle(k.dense(), pi)
    assert phi == pytest.approx(ophi, abs=1e-12)
    assert zeta == pytest.approx(ozeta, abs=1e-12)
    # certificates must attain the reported optima
    q = k.dense() * pi[:, None]
    q = (q + q.T) / 2.0
    s = certs["phi_set"]
    comp = [x for x in range(6) if x not in s]
    ps = float(sum(pi[x] for x in s))
    assert sum(q[x, y] for x in s for y in comp) / ps == pytest.approx(phi)
    a, b = certs["zeta_a"], certs["zeta_b"]
    ss = certs["zeta_set"]
    assert sorted(a + b) == sorted(ss)
    comp = [x for x in range(6) if x not in ss]
    val = (
        sum(q[x, y] for x in a for y in a)
        + sum(q[x, y] for x in b for y in b)
        + sum(q[x, y] for x in ss for y in comp)
    ) / float(sum(pi[x] for x in ss))
    assert val == pytest.approx(zeta)


def test_cheeger_sandwich_bounds():
    # non-lazy walk on a non-bipartite instance: both spectral edges must
    # land inside the bottleneck sandwiches
    for seed in range(4):
        gs = _star(4, 100 + seed)
        k = srw_kernel(gs)
        pi = stationary(k, gs)
        phi, zeta, _ = cheeger_bruteforce(k, pi)
        rep = spectral_report(k, pi)
        gap2 = 1.0 - rep.lambda2
        gapm = 1.0 + rep.lambda_min
        assert 1.0 - math.sqrt(1.0 - phi * phi) <= gap2 + 1e-12
        assert gap2 <= 2.0 * phi + 1e-12
        assert 1.0 - math.sqrt(1.0 - zeta * zeta) <= gapm + 1e-12
        assert gapm <= 4.0 * zeta + 1e-12


def test_cheeger_size_cap():
    g = make_cycle(17)
    k = srw_kernel(g)
    pi = stationary(k, g)
    with pytest.raises(SizeLimitError):
        cheeger_bruteforce(k, pi)


def test_block_chain_matches_matching_multigraph():
    gs = _star(8, 3)
    k = srw_kernel(gs)
    pi = stationary(k, gs)
    part = greedy_partition(gs.base, 3)
    phat = block_chain(k, pi, part)
    kam = matching_block_multigraph(part, gs.matching)
    # on triangle blocks two of three moves stay inside, so the projected
    # chain is exactly two-thirds holding plus one third of the matching walk
    want = 2.0 / 3.0 * np.eye(8) + kam.dense() / 3.0
    assert np.allclose(phat.dense(), want, atol=1e-12)


def test_block_chain_rejects_bad_partition():
    gs = _star(2, 5)
    k = srw_kernel(gs)
    pi = stationary(k, gs)
    with pytest.raises(InvalidInputError):
        block_chain(k, pi, Partition(blocks=(np.arange(3),)))
    with pytest.raises(InvalidInputError):
        block_chain(k, pi, Partition(blocks=(np.arange(4), np.arange(2, 6))))


def test_restricted_kernel_folds_leak():
    gs = _star(2, 5)
    k = srw_kernel(gs)
    sub = restricted_kernel(k, [0, 1, 2])
    d = sub.dense()
    assert np.allclose(d.sum(axis=1), 1.0)
    full = k.dense()
    off = ~np.eye(3, dtype=bool)
    assert np.allclose(d[off], full[:3, :3][off])
    with pytest.raises(InvalidParameterError):
        restricted_kernel(k, [])


def test_save_profile_csv(tmp_path):
    gs = _star(4, 0)
    k = srw_kernel(gs)
    pi = stationary(k, gs)
    prof = mixing_profile(k, pi, [0.25], 50)
    path = tmp_path / "profile.csv"
    save_profile_csv(prof, path)
    lines = path.read_text(encoding="utf-8").strip().split("\n")
    assert lines[0] == "t,d"
    assert len(lines) == 1 + prof.d.size
    t0, d0 = lines[1].split(",")
    assert t0 == "0" and float(d0) == pytest.approx(float(prof.d[0]))
