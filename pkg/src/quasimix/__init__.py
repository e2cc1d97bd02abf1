"""Simulation laboratory for random walks on quasi-random graphs.

A quasi-random graph is a base graph augmented with a uniform random
perfect matching of its vertex set. The package measures mixing profiles
and spectral gaps of the lazy walk on such graphs exactly at small scale,
and independently predicts the cutoff time from entropic quantities
estimated on lazily sampled quasi-trees.
"""

from ._kernels import HAS_NUMBA, NUMBA_ENABLED, derive_seed
from .coupling import (
    CouplingReport,
    DEFAULT_A,
    HittingDistribution,
    explore_and_couple,
    is_k_root,
    k_root_hitting,
    lr_ball,
    measure_bad_fraction,
)
from .errors import (
    InsufficientDataError,
    InvalidInputError,
    InvalidParameterError,
    QuasimixError,
    SamplingFailureError,
    SizeLimitError,
)
from .graphs import (
    Graph,
    greedy_partition,
    load_edgelist,
    make_clique_tailed,
    make_cycle,
    make_random_regular,
    make_torus,
    make_triangle_union,
    save_edgelist,
    validate_base,
)
from .lerw import (
    EntropyEstimate,
    detect_regenerations,
    entropic_time,
    estimate_entropy,
    lerw_step_prob,
    loop_erase,
    truncation_event,
)
from .markov import (
    MixingProfile,
    SpectralReport,
    TransitionKernel,
    cheeger_bruteforce,
    mixing_profile,
    spectral_report,
    srw_kernel,
    stationary,
    tv_distance,
)
from .matching import (
    PerfectMatching,
    StarGraph,
    build_star,
    sample_perfect_matching,
    sample_star,
)
from .quasitree import (
    QuasiTree,
    estimate_escape_prob,
    new_quasitree,
    run_walk,
)

__version__ = "0.1.0"

__all__ = [
    "HAS_NUMBA",
    "NUMBA_ENABLED",
    "derive_seed",
    "QuasimixError",
    "InvalidParameterError",
    "InvalidInputError",
    "SamplingFailureError",
    "SizeLimitError",
    "InsufficientDataError",
    "Graph",
    "make_cycle",
    "make_triangle_union",
    "make_torus",
    "make_random_regular",
    "make_clique_tailed",
    "validate_base",
    "greedy_partition",
    "save_edgelist",
    "load_edgelist",
    "PerfectMatching",
    "StarGraph",
    "sample_perfect_matching",
    "build_star",
    "sample_star",
    "TransitionKernel",
    "MixingProfile",
    "SpectralReport",
    "srw_kernel",
    "stationary",
    "tv_distance",
    "mixing_profile",
    "spectral_report",
    "cheeger_bruteforce",
    "QuasiTree",
    "new_quasitree",
    "run_walk",
    "estimate_escape_prob",
    "EntropyEstimate",
    "detect_regenerations",
    "loop_erase",
    "lerw_step_prob",
    "estimate_entropy",
    "entropic_time",
    "truncation_event",
    "DEFAULT_A",
    "CouplingReport",
    "HittingDistribution",
    "lr_ball",
    "is_k_root",
    "k_root_hitting",
    "explore_and_couple",
    "measure_bad_fraction",
    "__version__",
]
