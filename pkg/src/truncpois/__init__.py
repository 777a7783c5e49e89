"""Tight privacy accounting for the truncated Poisson sampled Gaussian mechanism."""

from .binom_math import (
    BranchAbsentError,
    TruncatedPoissonParams,
    log_binom_pmf,
    truncation_q,
    truncation_q_direct,
)
from .calibrate_compare import (
    CalibrationError,
    ComparisonReport,
    calibrate_naive_sigma,
    calibrate_sigma,
    compare,
    delta_curve,
    naive_bound,
)
from .dominating_pairs import (
    Adjacency,
    BranchedDominatingPair,
    GaussianMixture,
    MixturePair,
    build_pair,
    reverse,
)
from .oracle import WorstCaseInstance, exact_mechanism_delta, exact_mechanism_law, hockey_stick_mixture
from .pld_core import (
    AccountingResult,
    DiscretePLD,
    NumericalError,
    account,
    account_poisson,
    compose,
    delta_at,
    discretize,
    epsilon_at,
    mix,
)
from .sampler_sim import enumerate_law, lemma_tv, sample_algorithm1, sample_equivalent_process, simulate

__version__ = "0.1.0"

__all__ = [
    "AccountingResult",
    "Adjacency",
    "BranchAbsentError",
    "BranchedDominatingPair",
    "CalibrationError",
    "ComparisonReport",
    "DiscretePLD",
    "GaussianMixture",
    "MixturePair",
    "NumericalError",
    "TruncatedPoissonParams",
    "WorstCaseInstance",
    "account",
    "account_poisson",
    "build_pair",
    "calibrate_naive_sigma",
    "calibrate_sigma",
    "compare",
    "compose",
    "delta_at",
    "delta_curve",
    "discretize",
    "enumerate_law",
    "epsilon_at",
    "exact_mechanism_delta",
    "exact_mechanism_law",
    "hockey_stick_mixture",
    "lemma_tv",
    "log_binom_pmf",
    "mix",
    "naive_bound",
    "reverse",
    "sample_algorithm1",
    "sample_equivalent_process",
    "simulate",
    "truncation_q",
    "truncation_q_direct",
]
