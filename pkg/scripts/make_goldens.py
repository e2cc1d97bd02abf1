"""Regenerate tests/fixtures/goldens.json.

Freezes reference values measured by the package itself so the test suite
can detect behavioral drift. Analytic anchors (the exact speed 1/15 and
entropy log 2 of the walk on the triangle-union quasi-tree at R=1) are
recorded alongside the measured values; tests compare against both.

Run from the repository root:

    python3 scripts/make_goldens.py
"""

import json
import math
import os
import sys

import numpy as np

from quasimix._kernels import derive_seed
from quasimix.coupling import is_k_root
from quasimix.cli import ExperimentConfig, build_instance, _degree_pi
from quasimix.graphs import make_cycle, make_torus, make_triangle_union
from quasimix.lerw import (
    detect_regenerations,
    estimate_entropy,
    lerw_step_prob,
)
from quasimix.markov import mixing_profile, spectral_report, srw_kernel
from quasimix.matching import sample_perfect_matching
from quasimix.quasitree import (
    TreeVertex,
    estimate_escape_prob,
    new_quasitree,
    run_walk,
)

MASTER = 0xC0FFEE
OUT = os.path.join(os.path.dirname(__file__), "..", "tests", "fixtures", "goldens.json")


def entropy_anchor():
    # several independent trees: single-tree estimates carry quenched
    # tree-to-tree variance on top of the per-block noise
    base = make_triangle_union(3)
    runs = []
    for rep in range(3):
        rng = np.random.default_rng(derive_seed(MASTER, "goldens", "entropy", rep))
        tree = new_quasitree(base, 1, rng)
        trace = run_walk(tree, tree.root, 200_000, rng)
        runs.append((tree, detect_regenerations(trace)))
    est = estimate_entropy(runs)
    return {
        "nu_hat": est.nu_hat,
        "h_hat": est.h_hat,
        "gamma_hat": est.gamma_hat,
        "blocks_used": est.blocks_used,
        "ci_nu": list(est.ci["nu"]),
        "ci_h": list(est.ci["h"]),
        "nu_analytic": 1.0 / 15.0,
        "h_analytic": math.log(2.0),
    }


def spectral_anchor():
    rows = []
    cfg = ExperimentConfig(experiment="spectral", n_list=(48,), seeds=tuple(range(5)))
    for s in range(5):
        gs, _ = build_instance(cfg, 48, s)
        rep = spectral_report(srw_kernel(gs), _degree_pi(gs))
        rows.append([s, rep.lambda2, rep.lambda_min])
    return rows


def mix_anchor():
    cfg = ExperimentConfig(experiment="mix", n_list=(48,), seeds=(0,))
    gs, _ = build_instance(cfg, 48, 0)
    prof = mixing_profile(srw_kernel(gs), _degree_pi(gs), [0.25, 0.1, 0.9], 2000)
    return {str(e): prof.tmix[e] for e in (0.25, 0.1, 0.9)}


def escape_anchor():
    out = {}
    bases = {
        "triangle": make_triangle_union(3),
        "cycle12": make_cycle(12),
        "torus": make_torus(4, 4),
    }
    for name, base in bases.items():
        rng = np.random.default_rng(derive_seed(MASTER, "goldens", "escape", name))
        tree = new_quasitree(base, 1, rng)
        est = estimate_escape_prob(tree, tree.root, 20, 4000, rng)
        out[name] = {"estimate": est.estimate, "ci_low": est.ci_low, "ci_high": est.ci_high}
    return out


def lerw_probe():
    base = make_triangle_union(3)
    rng = np.random.default_rng(derive_seed(MASTER, "goldens", "lerw"))
    tree = new_quasitree(base, 1, rng)
    center = TreeVertex(0, 0)
    exit_v = TreeVertex(0, 1)
    mc = lerw_step_prob(tree, center, exit_v, params={"trials": 20000, "depth": 6})
    exact = lerw_step_prob(tree, center, exit_v, method="exact-truncated", params={"depth": 6})
    return {
        "mc": mc.value,
        "mc_stderr": mc.stderr,
        "exact": exact.value,
        "depth": 6,
    }


def kroot_anchor():
    cfg = ExperimentConfig(experiment="couple", n_list=(3000,), seeds=(0,), K=4, R=1)
    gs, _ = build_instance(cfg, 3000, 0)
    rng = np.random.default_rng(derive_seed(MASTER, "goldens", "kroot"))
    starts = rng.choice(3000, size=500, replace=False)
    frac = float(np.mean([is_k_root(gs, int(x), 4, 1) for x in starts]))
    return {"n": 3000, "K": 4, "R": 1, "fraction": frac, "starts": 500}


def matching_counts():
    rng = np.random.default_rng(derive_seed(MASTER, "goldens", "matching"))
    counts = {}
    for _ in range(150_000):
        m = sample_perfect_matching(6, rng)
        key = ";".join(f"{u}-{v}" for u, v in m.pairs)
        counts[key] = counts.get(key, 0) + 1
    return counts


def main():
    goldens = {
        "master_seed": MASTER,
        "entropy": entropy_anchor(),
        "spectral_n48": spectral_anchor(),
        "mix_n48_seed0": mix_anchor(),
        "escape": escape_anchor(),
        "lerw_probe": lerw_probe(),
        "kroot": kroot_anchor(),
        "matching_n6_counts": matching_counts(),
    }
    os.makedirs(os.path.dirname(OUT), exist_ok=True)
    with open(OUT, "w", encoding="utf-8") as fh:
        json.dump(goldens, fh, indent=2, sort_keys=True)
    print(f"wrote {os.path.normpath(OUT)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
