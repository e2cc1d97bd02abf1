"""Reproducible experiment harness and command-line entry point.

Experiments are described by a JSON-serializable configuration validated up
front. All randomness flows from a master seed through named streams
(graph, matching, tree, walk) derived per replica, so runs are reproducible
and independent of worker scheduling; a manifest is written before each run
and finalized with row counts and wall-clock afterwards.

Subcommands: generate | mix | spectral | entropy | couple | verify.
Exit codes: 0 pass, 2 invalid config, 3 verification failure, 4 unresolved
or insufficient data.
"""

import argparse
import concurrent.futures
import dataclasses
import hashlib
import json
import math
import os
import sys
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import __version__, _kernels as K
from .coupling import DEFAULT_A, explore_and_couple, is_k_root, save_coupling_csv
from .errors import (
    InsufficientDataError,
    InvalidInputError,
    InvalidParameterError,
    QuasimixError,
    SamplingFailureError,
)
from .graphs import (
    make_clique_tailed,
    make_cycle,
    make_random_regular,
    make_torus,
    make_triangle_union,
    greedy_partition,
    is_bipartite,
    save_edgelist,
)
from .lerw import (
    detect_regenerations,
    entropic_time,
    estimate_entropy,
    save_blocks_csv,
    save_entropy_json,
)
from .markov import (
    block_chain,
    cheeger_bruteforce,
    mixing_profile,
    restricted_kernel,
    spectral_report,
    srw_kernel,
)
from .matching import build_star, sample_perfect_matching, save_matching
from .quasitree import new_quasitree, run_walk

MASTER_SEED_DEFAULT = 0xC0FFEE
_EXPERIMENTS = ("generate", "mix", "spectral", "entropy", "couple", "verify")
_FAMILIES = ("triangle", "cycle", "torus", "random-regular", "clique-tailed")
_STREAMS = ("graph", "matching", "tree", "walk")

EXIT_OK = 0
EXIT_INVALID_CONFIG = 2
EXIT_CHECK_FAILED = 3
EXIT_INSUFFICIENT = 4


@dataclass
class ExperimentConfig:
    """Validated description of one experiment run."""

    experiment: str
    base_family: str = "triangle"
    family_params: dict = field(default_factory=dict)
    n_list: tuple = (48, 96, 192, 384, 768)
    seeds: tuple = tuple(range(10))
    master_seed: int = MASTER_SEED_DEFAULT
    R: int = 1
    K: int = 4
    A: float = DEFAULT_A
    B: float = 0.0
    laziness: float = 0.0
    eps_list: tuple = (0.25, 0.1, 0.9)
    trials: int = 10
    horizon: int = 2000
    out: str = "."

    def validate(self):
        if self.experiment not in _EXPERIMENTS:
            raise InvalidParameterError(f"unknown experiment {self.experiment!r}")
        if self.base_family not in _FAMILIES:
            raise InvalidParameterError(f"unknown base family {self.base_family!r}")
        if not self.n_list or any(int(n) < 3 for n in self.n_list):
            raise InvalidParameterError("n_list must hold sizes >= 3")
        if not self.seeds or any(int(s) < 0 for s in self.seeds):
            raise InvalidParameterError("seeds must be non-negative replica indices")
        if int(self.R) < 1:
            raise InvalidParameterError("R must be >= 1")
        if int(self.K) < 0:
            raise InvalidParameterError("K must be >= 0")
        if not 0.0 <= float(self.laziness) < 1.0:
            raise InvalidParameterError("laziness must lie in [0, 1)")
        if any(not 0.0 < float(e) < 1.0 for e in self.eps_list):
            raise InvalidParameterError("eps thresholds must lie in (0, 1)")
        if int(self.trials) < 1 or int(self.horizon) < 1:
            raise InvalidParameterError("trials and horizon must be >= 1")
        for n in self.n_list:
            _check_family_size(self.base_family, int(n), self.family_params)
        return self

    def to_json(self):
        d = dataclasses.asdict(self)
        d["n_list"] = list(self.n_list)
        d["seeds"] = list(self.seeds)
        d["eps_list"] = list(self.eps_list)
        return json.dumps(d, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as e:
            raise InvalidInputError(f"config is not valid JSON: {e}") from e
        if not isinstance(raw, dict):
            raise InvalidInputError("config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise InvalidParameterError(f"unknown config keys: {sorted(unknown)}")
        if "experiment" not in raw:
            raise InvalidParameterError("config must name an experiment")
        for key in ("n_list", "seeds", "eps_list"):
            if key in raw:
                raw[key] = tuple(raw[key])
        return cls(**raw).validate()

    def config_hash(self):
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()


def _check_family_size(family, n, params):
    if family == "triangle" and n % 3:
        raise InvalidParameterError("triangle family needs n divisible by 3")
    if family == "torus":
        w = int(params.get("w", 0)) or int(math.isqrt(n))
        h = int(params.get("h", 0)) or (n // w if w else 0)
        if w < 3 or h < 3 or w * h != n:
            raise InvalidParameterError(f"torus family cannot realize n={n}")
    if family == "random-regular":
        d = int(params.get("d", 3))
        if d < 3 or (n * d) % 2 or d >= n:
            raise InvalidParameterError(f"degree {d} infeasible at n={n}")
    if family == "clique-tailed":
        d = int(params.get("d", 8))
        # n counts all vertices, clique included; the regular part needs
        # d+1 or more vertices and an even stub count
        if d < 3 or n - d <= d or ((n - d) * d) % 2:
            raise InvalidParameterError(f"clique degree {d} infeasible at n={n}")


def make_base(family, n, params, rng):
    """Base graph of the requested family at size n."""
    n = int(n)
    _check_family_size(family, n, params)
    if family == "triangle":
        return make_triangle_union(n // 3)
    if family == "cycle":
        return make_cycle(n)
    if family == "torus":
        w = int(params.get("w", 0)) or int(math.isqrt(n))
        h = int(params.get("h", 0)) or n // w
        return make_torus(w, h)
    if family == "random-regular":
        return make_random_regular(n, int(params.get("d", 3)), rng)
    if family == "clique-tailed":
        d = int(params.get("d", 8))
        return make_clique_tailed(n - d, d, rng)
    raise InvalidParameterError(f"unknown base family {family!r}")


def _degree_pi(gs):
    """Degree-proportional vector; a stationary vector for the walk on each
    component, defined even when the instance is disconnected (where the
    mixing rows stay unresolved and spectral rows show a closed gap)."""
    deg = gs.combined.degrees().astype(np.float64)
    return deg / deg.sum()


def replica_rngs(master, experiment, n, seed):
    """Named per-replica streams derived from (master seed, replica)."""
    return {
        name: np.random.default_rng(
            int(K.derive_seed(int(master), experiment, int(n), int(seed), name))
        )
        for name in _STREAMS
    }


def build_instance(cfg, n, seed):
    """Base graph plus matched long-range edges for one replica."""
    rngs = replica_rngs(cfg.master_seed, cfg.experiment, n, seed)
    base = make_base(cfg.base_family, n, cfg.family_params, rngs["graph"])
    m = sample_perfect_matching(base.n, rngs["matching"])
    return build_star(base, m), rngs


@dataclass
class RunManifest:
    """Provenance record written before a run and finalized after it."""

    config_hash: str
    code_version: str
    experiment: str
    master_seed: int
    replica_seeds: dict
    started: float
    finished: object = None
    wall_clock_s: object = None
    row_counts: dict = field(default_factory=dict)

    def write(self, out_dir):
        path = os.path.join(out_dir, "manifest.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(dataclasses.asdict(self), fh, indent=2, sort_keys=True)
        return path

    def finalize(self, out_dir, row_counts):
        self.finished = time.time()
        self.wall_clock_s = self.finished - self.started
        self.row_counts = dict(row_counts)
        return self.write(out_dir)


def _start_manifest(cfg):
    os.makedirs(cfg.out, exist_ok=True)
    seeds = {
        f"{n}/{s}": int(K.derive_seed(cfg.master_seed, cfg.experiment, int(n), int(s), "graph"))
        for n in cfg.n_list
        for s in cfg.seeds
    }
    man = RunManifest(
        config_hash=cfg.config_hash(),
        code_version=__version__,
        experiment=cfg.experiment,
        master_seed=int(cfg.master_seed),
        replica_seeds=seeds,
        started=time.time(),
    )
    man.write(cfg.out)
    return man


def _replica_map(cfg, fn, threads):
    """Run fn(n, seed) per replica, merged in fixed (n, seed) order."""
    keys = [(int(n), int(s)) for n in cfg.n_list for s in cfg.seeds]
    if threads <= 1:
        return [(k, fn(*k)) for k in keys]
    results = {}
    with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
        futs = {pool.submit(fn, *k): k for k in keys}
        for fut in concurrent.futures.as_completed(futs):
            results[futs[fut]] = fut.result()
    return [(k, results[k]) for k in keys]


def _fit_log(ns, values):
    """Least-squares fit of values against log n; returns (slope, r2)."""
    x = np.log(np.asarray(ns, np.float64))
    y = np.asarray(values, np.float64)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), r2


def cmd_generate(cfg, threads=1, summary=False):
    """Write instance edge lists and matchings for every replica."""
    man = _start_manifest(cfg)
    counts = {}
    for n in cfg.n_list:
        for s in cfg.seeds:
            gs, _ = build_instance(cfg, n, s)
            stem = os.path.join(cfg.out, f"star_n{n}_seed{s}")
            save_edgelist(gs.combined, stem + ".edges")
            save_matching(gs.matching, stem + ".matching")
            counts[f"star_n{n}_seed{s}.edges"] = gs.combined.num_edges
    man.finalize(cfg.out, counts)
    if summary:
        print(f"generate: wrote {len(counts)} instances to {cfg.out}")
    return EXIT_OK


def _mix_replica(cfg, n, seed):
    gs, rngs = build_instance(cfg, n, seed)
    laz = float(cfg.laziness)
    if laz == 0.0 and is_bipartite(gs.combined):
        warnings.warn(
            f"bipartite instance at n={n} seed={seed}: switching laziness to 1/2"
        )
        laz = 0.5
    eps = sorted(set(float(e) for e in cfg.eps_list) | {1.0 - float(e) for e in cfg.eps_list if e < 0.5})
    kern = srw_kernel(gs, laziness=laz)
    pi = _degree_pi(gs)
    return mixing_profile(kern, pi, eps, cfg.horizon, rng=rngs["walk"])


def cmd_mix(cfg, threads=1, summary=False):
    """CSV of threshold mixing times and windows across n_list x seeds."""
    man = _start_manifest(cfg)
    rows = []
    profs = _replica_map(cfg, lambda n, s: _mix_replica(cfg, n, s), threads)
    for (n, s), prof in profs:
        for e in sorted(cfg.eps_list):
            tm = prof.tmix.get(float(e))
            win = prof.window.get(float(e)) if float(e) < 0.5 else None
            rows.append(
                (n, s, float(e), "NA" if tm is None else tm, "" if win is None else win)
            )
    path = os.path.join(cfg.out, "mix.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("n,seed,eps,tmix,window\n")
        for r in rows:
            fh.write(",".join(str(x) for x in r) + "\n")
    man.finalize(cfg.out, {"mix.csv": len(rows)})
    resolved = [r for r in rows if r[3] != "NA"]
    if summary:
        quarter = {}
        for n, s, e, tm, _ in resolved:
            if e == 0.25:
                quarter.setdefault(n, []).append(tm)
        if len(quarter) >= 2:
            ns = sorted(quarter)
            slope, r2 = _fit_log(ns, [np.mean(quarter[n]) for n in ns])
            print(f"mix: tmix(1/4) vs log n: slope={slope:.3f} r2={r2:.4f}")
        for n in sorted(quarter):
            print(f"mix: n={n} mean tmix(1/4)={np.mean(quarter[n]):.2f}")
    if not resolved:
        return EXIT_INSUFFICIENT
    return EXIT_OK


def cmd_spectral(cfg, threads=1, summary=False):
    """CSV of lambda_2, lambda_min, and the absolute gap per instance."""
    man = _start_manifest(cfg)

    def one(n, s):
        gs, _ = build_instance(cfg, n, s)
        kern = srw_kernel(gs, laziness=float(cfg.laziness))
        pi = _degree_pi(gs)
        return spectral_report(kern, pi)

    reports = _replica_map(cfg, one, threads)
    path = os.path.join(cfg.out, "spectral.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("n,seed,lambda2,lambda_min,gap_abs\n")
        for (n, s), rep in reports:
            fh.write(
                f"{n},{s},{rep.lambda2:.12f},"
                f"{'' if rep.lambda_min is None else format(rep.lambda_min, '.12f')},"
                f"{'' if rep.gap_abs is None else format(rep.gap_abs, '.12f')}\n"
            )
    man.finalize(cfg.out, {"spectral.csv": len(reports)})
    if summary:
        l2 = [rep.lambda2 for _, rep in reports]
        lm = [rep.lambda_min for _, rep in reports if rep.lambda_min is not None]
        print(f"spectral: min(1-lambda2)={1 - max(l2):.4f}", end="")
        if lm:
            print(f" min(1+lambda_min)={1 + min(lm):.4f}")
        else:
            print()
    return EXIT_OK


def cmd_entropy(cfg, threads=1, summary=False):
    """Entropy and speed estimate from quasi-tree walks, plus the predicted
    cutoff times for every n in n_list."""
    man = _start_manifest(cfg)
    base_n = int(cfg.n_list[0])
    runs = []
    for s in cfg.seeds:
        rngs = replica_rngs(cfg.master_seed, cfg.experiment, base_n, s)
        base = make_base(cfg.base_family, base_n, cfg.family_params, rngs["graph"])
        tree = new_quasitree(base, cfg.R, rngs["tree"])
        # one entry per trace: block pairs must not straddle walk boundaries
        for _ in range(int(cfg.trials)):
            trace = run_walk(tree, tree.root, int(cfg.horizon), rngs["walk"])
            runs.append((tree, detect_regenerations(trace)))
    json_path = os.path.join(cfg.out, "entropy.json")
    try:
        est = estimate_entropy(runs)
    except InsufficientDataError as e:
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump({"degenerate": True, "reason": str(e)}, fh, indent=2)
        man.finalize(cfg.out, {"entropy.json": 1})
        print(f"entropy: insufficient data: {e}", file=sys.stderr)
        return EXIT_INSUFFICIENT
    times = {}
    for n in cfg.n_list:
        et = entropic_time(int(n), est)
        corrected = None
        if cfg.B:
            corrected = (math.log(n) - float(cfg.B) * math.sqrt(math.log(n))) / (
                est.nu_hat * est.h_hat
            )
        times[int(n)] = {
            "t_entropic": et.value,
            "ci": [et.ci_low, et.ci_high],
            "B": float(cfg.B),
            "t_corrected": corrected,
        }
    save_entropy_json(est, json_path, extra={"entropic_times": times})
    blocks_path = os.path.join(cfg.out, "entropy_blocks.csv")
    save_blocks_csv(est, blocks_path)
    man.finalize(
        cfg.out, {"entropy.json": 1, "entropy_blocks.csv": est.blocks_used}
    )
    if summary:
        print(
            f"entropy: h={est.h_hat:.4f} nu={est.nu_hat:.4f} "
            f"blocks={est.blocks_used}"
        )
        for n, row in times.items():
            print(f"entropy: n={n} t_entropic={row['t_entropic']:.2f}")
    if est.degenerate:
        return EXIT_INSUFFICIENT
    return EXIT_OK


def _couple_replica(cfg, n, seed):
    gs, rngs = build_instance(cfg, n, seed)
    walk = rngs["walk"]
    x0 = None
    for _ in range(1000):
        cand = int(walk.integers(gs.base.n))
        if is_k_root(gs, cand, cfg.K, cfg.R):
            x0 = cand
            break
    if x0 is None:
        raise SamplingFailureError(f"no {cfg.K}-root found in 1000 probes at n={n}")
    params = {"t": int(cfg.horizon), "K": int(cfg.K), "R": int(cfg.R), "A": float(cfg.A)}
    return explore_and_couple(gs, x0, params, walk)


def cmd_couple(cfg, threads=1, summary=False):
    """Coupling reports per replica, with an aggregated success summary."""
    man = _start_manifest(cfg)
    reports = _replica_map(cfg, lambda n, s: _couple_replica(cfg, n, s), threads)
    rows = []
    for (n, s), rep in reports:
        rows.append(
            {
                "seed": s,
                "n": n,
                "K": int(cfg.K),
                "R": int(cfg.R),
                "t": int(cfg.horizon),
                "outcome": rep.outcome,
                "cause": rep.cause,
                "steps_coupled": rep.steps_coupled,
                "explored": rep.explored_vertices,
                "bad_count": rep.bad_count,
            }
        )
    path = os.path.join(cfg.out, "couple.csv")
    save_coupling_csv(rows, path)
    successes = sum(r["outcome"] == "success" for r in rows)
    causes = {}
    for r in rows:
        if r["cause"]:
            causes[r["cause"]] = causes.get(r["cause"], 0) + 1
    agg = {
        "runs": len(rows),
        "successes": successes,
        "success_rate": successes / len(rows),
        "cause_histogram": causes,
        "t": int(cfg.horizon),
    }
    with open(os.path.join(cfg.out, "couple_summary.json"), "w", encoding="utf-8") as fh:
        json.dump(agg, fh, indent=2, sort_keys=True)
    man.finalize(cfg.out, {"couple.csv": len(rows), "couple_summary.json": 1})
    if summary:
        print(
            f"couple: success {successes}/{len(rows)} "
            f"({agg['success_rate']:.3f}) causes={causes}"
        )
    return EXIT_OK


def _gap2(kern, pi):
    rep = spectral_report(kern, pi)
    return 1.0 if rep.lambda2 is None else 1.0 - rep.lambda2


def cmd_verify(cfg, threads=1, summary=False):
    """Spectral-inequality suite: the projection/restriction gap bound on
    partitioned instances and both eigenvalue sandwiches on small ones."""
    man = _start_manifest(cfg)
    tol = 1e-9
    lines = []
    failures = 0
    checked = 0
    block_size = cfg.family_params.get("block_size")
    for n in cfg.n_list:
        for s in cfg.seeds:
            gs, _ = build_instance(cfg, n, s)
            kern = srw_kernel(gs, laziness=float(cfg.laziness))
            pi = _degree_pi(gs)
            checked += 1
            if gs.base.n <= 16:
                rep = spectral_report(kern, pi)
                phi, zeta, _ = cheeger_bruteforce(kern, pi)
                gap2 = 1.0 - rep.lambda2
                gapm = 1.0 + rep.lambda_min
                ok = (
                    1.0 - math.sqrt(1.0 - phi * phi) - tol <= gap2
                    and gap2 <= 2.0 * phi + tol
                    and 1.0 - math.sqrt(1.0 - zeta * zeta) - tol <= gapm
                    and gapm <= 4.0 * zeta + tol
                )
                lines.append(
                    f"sandwich n={n} seed={s}: phi={phi:.6f} zeta={zeta:.6f} "
                    f"1-l2={gap2:.6f} 1+lmin={gapm:.6f} {'PASS' if ok else 'FAIL'}"
                )
            else:
                # the block floor may not exceed the smallest base component
                if block_size is None:
                    l = min(4, min(c.size for c in gs.base.components()))
                else:
                    l = int(block_size)
                part = greedy_partition(gs.base, l)
                # the projection/restriction product bound requires a chain
                # with nonnegative spectrum; half laziness guarantees that
                kern = srw_kernel(gs, laziness=max(0.5, float(cfg.laziness)))
                gap = _gap2(kern, pi)
                proj = block_chain(kern, pi, part)
                pihat = np.array([pi[np.asarray(b, int)].sum() for b in part.blocks])
                gap_hat = _gap2(proj, pihat)
                gap_star = math.inf
                for blk in part.blocks:
                    idx = np.asarray(sorted(int(x) for x in blk), np.int64)
                    pib = pi[idx] / pi[idx].sum()
                    gap_star = min(gap_star, _gap2(restricted_kernel(kern, blk), pib))
                ok = gap >= gap_hat * gap_star - tol
                lines.append(
                    f"decomposition n={n} seed={s}: gap={gap:.6f} "
                    f"hat={gap_hat:.6f} star={gap_star:.6f} {'PASS' if ok else 'FAIL'}"
                )
            if not ok:
                failures += 1
    report = {
        "instances": checked,
        "failures": failures,
        "passed": failures == 0,
        "lines": lines,
    }
    with open(os.path.join(cfg.out, "verify_report.json"), "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
    man.finalize(cfg.out, {"verify_report.json": checked})
    for line in lines:
        print(line)
    print(f"verify: {checked - failures}/{checked} instances passed")
    return EXIT_OK if failures == 0 else EXIT_CHECK_FAILED


_DEFAULTS = {
    "generate": dict(n_list=(48,), seeds=(0,)),
    "mix": dict(n_list=(48, 96, 192, 384, 768), seeds=tuple(range(10))),
    "spectral": dict(n_list=(96, 192, 384, 768), seeds=tuple(range(20))),
    "entropy": dict(n_list=(768,), seeds=(0, 1, 2), trials=3, horizon=20000),
    "couple": dict(n_list=(30000,), seeds=tuple(range(20)), horizon=100),
    "verify": dict(n_list=(9, 12, 60, 120), seeds=tuple(range(5))),
}

_COMMANDS = {
    "generate": cmd_generate,
    "mix": cmd_mix,
    "spectral": cmd_spectral,
    "entropy": cmd_entropy,
    "couple": cmd_couple,
    "verify": cmd_verify,
}


def load_config(experiment, path=None, seed=None, out=None):
    """Config from JSON file or per-experiment defaults, with overrides."""
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = ExperimentConfig.from_json(fh.read())
        if cfg.experiment != experiment:
            raise InvalidParameterError(
                f"config names experiment {cfg.experiment!r}, command is {experiment!r}"
            )
    else:
        cfg = ExperimentConfig(experiment=experiment, **_DEFAULTS[experiment])
    if seed is not None:
        cfg = dataclasses.replace(cfg, master_seed=int(seed))
    if out is not None:
        cfg = dataclasses.replace(cfg, out=out)
    return cfg.validate()


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="quasimix",
        description="Mixing, spectra, entropy, and coupling experiments on "
        "randomly matched graphs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _EXPERIMENTS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="JSON config path")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--summary", action="store_true")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.command, args.config, args.seed, args.out)
    except (QuasimixError, ValueError, OSError) as e:
        print(f"invalid config: {e}", file=sys.stderr)
        return EXIT_INVALID_CONFIG
    try:
        return _COMMANDS[args.command](
            cfg, threads=max(1, int(args.threads)), summary=bool(args.summary)
        )
    except InsufficientDataError as e:
        print(f"insufficient data: {e}", file=sys.stderr)
        return EXIT_INSUFFICIENT
    except QuasimixError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID_CONFIG


if __name__ == "__main__":
    sys.exit(main())
