"""Compute a fixed battery of kernel-backed quantities and print JSON.

Run by the fallback parity test in two subprocesses, once with numba
enabled and once with QUASIMIX_NO_NUMBA=1; both outputs must agree on
every value except the flags themselves.
"""

import hashlib
import json
import sys

import numpy as np

from quasimix._kernels import HAS_NUMBA, NUMBA_ENABLED, derive_seed
from quasimix.cli import ExperimentConfig, _degree_pi, build_instance
from quasimix.graphs import make_triangle_union
from quasimix.lerw import lerw_step_prob
from quasimix.markov import cheeger_bruteforce, mixing_profile, srw_kernel
from quasimix.quasitree import TreeVertex, estimate_escape_prob, new_quasitree, run_walk


def main():
    out = {
        "numba_enabled": bool(NUMBA_ENABLED),
        "has_numba": bool(HAS_NUMBA),
        "seed_chain": int(derive_seed(0xC0FFEE, "parity", 41, "walk")),
    }

    tree = new_quasitree(make_triangle_union(3), 1, np.random.default_rng(5))
    trace = run_walk(tree, tree.root, 3000, np.random.default_rng(7))
    digest = hashlib.sha256()
    digest.update(trace.ball_ids.tobytes())
    digest.update(trace.local_ids.tobytes())
    digest.update(trace.levels.tobytes())
    out["trace_sha"] = digest.hexdigest()
    out["crossings"] = len(trace.crossings)

    esc = estimate_escape_prob(tree, tree.root, 15, 2000, np.random.default_rng(9))
    out["escape_estimate"] = esc.estimate
    out["escape_successes"] = esc.successes

    probe = lerw_step_prob(
        tree, TreeVertex(0, 0), TreeVertex(0, 1), params={"trials": 4000, "depth": 5}
    )
    out["step_prob"] = probe.value
    out["step_prob_se"] = probe.stderr

    cfg = ExperimentConfig(experiment="mix", n_list=(12,), seeds=(0,))
    gs, rngs = build_instance(cfg, 12, 0)
    kern = srw_kernel(gs)
    pi = _degree_pi(gs)
    phi, zeta, certs = cheeger_bruteforce(kern, pi)
    out["phi"] = phi
    out["zeta"] = zeta
    out["phi_set"] = certs["phi_set"]
    prof = mixing_profile(kern, pi, [0.25, 0.1], 500, rng=rngs["walk"])
    out["tmix"] = {str(k): v for k, v in prof.tmix.items()}

    json.dump(out, sys.stdout, sort_keys=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
