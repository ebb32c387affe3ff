"""Adaptive block partitions for tensor-product projection operators.

Modules: ``poly`` (sparse polynomials), ``blocks`` (blocks and partitions),
``proj`` (projection operators), ``norms`` (L_p norms), ``kfun`` (the error
function and its closed forms), ``adapt`` (partition construction), ``bench``
(corpus and convergence studies) and ``cli``.
"""

from .adapt import (AdaptivePartition, LocalBlockSpec, build_adaptive, partition_for_budget,
                    spec_from_closed_form, spec_from_km, uniform_partition)
from .blocks import Block, BlockMap, BlockPartition, admissibility_stat, normalize
from .kfun import (HomogeneousPoly, KResult, c_even, c_odd, k_closed_form, k_modified, k_numeric,
                   k_star, k_value, signature, verify_scaling)
from .norms import lp_norm, lp_norm_weighted, partition_error
from .poly import MultiIndex, Polynomial, PolySpace, SpaceKind
from .proj import ProjectionOperator, check_hypotheses, detect_k, parse_operator

__version__ = "0.1.0"

__all__ = [
    "AdaptivePartition", "LocalBlockSpec", "build_adaptive", "partition_for_budget",
    "spec_from_closed_form", "spec_from_km", "uniform_partition",
    "Block", "BlockMap", "BlockPartition", "admissibility_stat", "normalize",
    "HomogeneousPoly", "KResult", "c_even", "c_odd", "k_closed_form", "k_modified", "k_numeric",
    "k_star", "k_value", "signature", "verify_scaling",
    "lp_norm", "lp_norm_weighted", "partition_error",
    "MultiIndex", "Polynomial", "PolySpace", "SpaceKind",
    "ProjectionOperator", "check_hypotheses", "detect_k", "parse_operator",
]
