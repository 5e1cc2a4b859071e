"""Constrained independent vector analysis with Gaussian source models."""
from .constraints import (
    ConstraintSettings,
    ConstraintState,
    RegularizerSettings,
    run_constrained,
    similarity,
)
from .core import (
    CrossCovarianceCache,
    DatasetCollection,
    DemixingSet,
    ReferenceSet,
    SCVCovarianceSet,
    build_cross_covariance_cache,
    center_datasets,
    estimate_sources,
    random_init,
)
from .hybrid import HybridConfig, generate_hybrid
from .iva_g import SolverSettings, iva_g_cost, run_iva_g_v
from .metrics import cross_joint_isi, isi, joint_isi, similarity_factor
from .report import RunReport
from .solver import Problem, make_problem, solve

__version__ = "0.1.0"
