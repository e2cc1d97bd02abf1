"""Compare the jitted kernels against the pure-python fallback.

Runs three representative workloads, then re-runs itself in a subprocess
with QUASIMIX_NO_NUMBA=1 and reports wall-clock for both paths plus an
output-digest check: the fallback must produce bit-identical results.

    python3 bench/bench_kernels.py
"""

import hashlib
import json
import os
import subprocess
import sys
import time

import numpy as np

from quasimix._kernels import NUMBA_ENABLED, bottleneck_scan
from quasimix.cli import ExperimentConfig, _degree_pi, build_instance
from quasimix.graphs import make_triangle_union
from quasimix.markov import srw_kernel
from quasimix.quasitree import estimate_escape_prob, new_quasitree, run_walk

WALK_STEPS = 400_000
ESCAPE_TRIALS = 4_000
SCAN_N = 12


def run_workloads():
    results = {}

    tree = new_quasitree(make_triangle_union(3), 1, np.random.default_rng(5))
    t0 = time.perf_counter()
    trace = run_walk(tree, tree.root, WALK_STEPS, np.random.default_rng(7))
    results["tree walk"] = time.perf_counter() - t0
    digest = hashlib.sha256()
    digest.update(trace.ball_ids.tobytes())
    digest.update(trace.levels.tobytes())

    t0 = time.perf_counter()
    esc = estimate_escape_prob(tree, tree.root, 15, ESCAPE_TRIALS, np.random.default_rng(9))
    results["escape mc"] = time.perf_counter() - t0
    digest.update(f"{esc.successes}".encode())

    cfg = ExperimentConfig(experiment="spectral", n_list=(SCAN_N,), seeds=(0,))
    gs, _ = build_instance(cfg, SCAN_N, 0)
    pi = _degree_pi(gs)
    q = srw_kernel(gs).dense() * pi[:, None]
    q = (q + q.T) * 0.5
    t0 = time.perf_counter()
    out = bottleneck_scan(q, pi)
    results["bottleneck scan"] = time.perf_counter() - t0
    digest.update(np.float64(out[0]).tobytes() + np.float64(out[2]).tobytes())

    return results, digest.hexdigest()


def main():
    if os.environ.get("_BENCH_CHILD"):
        results, digest = run_workloads()
        json.dump({"times": results, "digest": digest}, sys.stdout)
        return 0

    if not NUMBA_ENABLED:
        print("numba is not active in this process; nothing to compare")
        return 1

    # first call includes jit compilation; repeat for a warm measurement
    run_workloads()
    jit_times, jit_digest = run_workloads()

    env = dict(os.environ, _BENCH_CHILD="1", QUASIMIX_NO_NUMBA="1")
    proc = subprocess.run(
        [sys.executable, os.path.abspath(__file__)],
        capture_output=True, text=True, env=env, check=True,
    )
    child = json.loads(proc.stdout)

    same = child["digest"] == jit_digest
    print(f"{'workload':<18} {'jit (s)':>10} {'fallback (s)':>14} {'speedup':>9}")
    for name, jt in jit_times.items():
        ft = child["times"][name]
        print(f"{name:<18} {jt:>10.4f} {ft:>14.4f} {ft / jt:>8.1f}x")
    print(f"outputs identical: {same}")
    return 0 if same else 1


if __name__ == "__main__":
    sys.exit(main())
