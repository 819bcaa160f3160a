"""Learning binary hash functions for Hamming-space retrieval.

Codes and hash function are optimized jointly: per-point code variables are
constrained to match the hash outputs through a quadratic penalty whose
weight rises over an exponential schedule, alternating exact/approximate
binary code updates with per-bit classifier fits. Includes the two-step
baseline (free codes, then one fit), retrieval metrics, and a CLI runner.
"""

__version__ = "0.1.0"

from ._kernels import BACKEND
from .corpus import (AffinityGraph, Dataset, SplitSpec, SyntheticSpec,
                     adapt_affinities, build_pseudolabel_affinities,
                     build_supervised_affinities, gen_synthetic, load_dataset,
                     make_split)
from .hstep import (ClassifierConfig, HashModel, IdentityMap, RBFMap,
                    fit_hash, hash_apply, make_rbf_map, train_bit_classifier)
from .losses import (LossSpec, SurrogateCoeff, bit_surrogate, pair_loss,
                     penalty_objective, total_loss)
from .mac import (MacConfig, MacTrace, emit_trace, estimate_mu1, free_codes,
                  load_trace, mac_optimize, pca_init_codes, two_step)
from .retrieval import (GroundTruth, build_ground_truth, effective_bits,
                        hamming_knn, pr_at_radius, pr_curve, precision_at_k,
                        retrieval_report)
from .zstep import (BitProblem, Blocks, assemble_bit_problem, build_blocks,
                    min_cut_block, solve_relaxed_qp, spectral_init, zstep_cut,
                    zstep_quad)
from .experiment import compare_arms, run_experiment

__all__ = [
    "AffinityGraph", "BACKEND", "BitProblem", "Blocks", "ClassifierConfig",
    "Dataset", "GroundTruth", "HashModel", "IdentityMap", "LossSpec",
    "MacConfig", "MacTrace", "RBFMap", "SplitSpec", "SurrogateCoeff",
    "SyntheticSpec", "adapt_affinities", "assemble_bit_problem",
    "bit_surrogate", "build_blocks", "build_ground_truth",
    "build_pseudolabel_affinities", "build_supervised_affinities",
    "compare_arms", "effective_bits", "emit_trace", "estimate_mu1",
    "fit_hash", "free_codes", "gen_synthetic", "hamming_knn", "hash_apply",
    "load_dataset", "load_trace", "mac_optimize", "make_rbf_map",
    "make_split", "min_cut_block", "pair_loss", "pca_init_codes",
    "penalty_objective", "pr_at_radius", "pr_curve", "precision_at_k",
    "retrieval_report", "run_experiment", "solve_relaxed_qp",
    "spectral_init", "total_loss", "train_bit_classifier", "two_step",
    "zstep_cut", "zstep_quad",
]
