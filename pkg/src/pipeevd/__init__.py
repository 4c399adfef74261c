"""Pipelined two-stage dense symmetric eigensolver.

Dense symmetric matrices are reduced to band form (SBR), chased down to
tridiagonal (BC), solved by implicit-shift QL/QR, and the eigenvectors
are rebuilt through the reordered back transformation.  The pipeline module
runs all of it across cooperating workers with counted communication;
the schedule module prices the same stage graph analytically.
"""

from .backtrans import (BackPlan, RowAccumulator, back_plan_sizes,
                        bc_back_apply, final_gemm, make_back_plan,
                        sbr_back_accumulate, sbr_back_rows)
from .bulge import BulgeReflectorSet, OverlapBlock, bc_reduce, bc_reduce_partition
from .core import (BandMatrix, FlopCounter, ProtocolError, ReflectorPanel,
                   SymmetricMatrix, TridiagonalMatrix, apply_block_reflector,
                   house_vector, sym_rank2k_update)
from .matgen import KINDS, SpectrumSpec, eigen_spectrum, generate, random_orthogonal
from .messaging import HOST, CommLedger, Router, TraceEvent, TraceLog
from .pipeline import PipelineConfig, PipelineError, run, run_auto_skew
from .sbr import SbrConfig, SbrFactors, sbr_reduce
from .schedule import (CostModel, calibrated_model, comm_broadcast_words,
                       comm_triangular_words, crossover_bandwidth,
                       mean_idle_fraction, partition, simulate, unit_model,
                       validate_trace)
from .tridiag import EigenResult, tridiag_eig
from .verify import (AccuracyReport, backward_error, check_gemm_bounds,
                     jacobi_eig_oracle, orthogonality)

__version__ = "0.1.0"

__all__ = [
    "AccuracyReport", "BackPlan", "BandMatrix", "BulgeReflectorSet",
    "CommLedger", "CostModel", "EigenResult", "FlopCounter", "HOST",
    "KINDS", "OverlapBlock", "PipelineConfig", "PipelineError",
    "ProtocolError", "ReflectorPanel", "Router", "RowAccumulator",
    "SbrConfig", "SbrFactors", "SpectrumSpec", "SymmetricMatrix",
    "TraceEvent", "TraceLog", "TridiagonalMatrix",
    "apply_block_reflector", "back_plan_sizes", "backward_error",
    "bc_back_apply", "bc_reduce", "bc_reduce_partition",
    "calibrated_model", "check_gemm_bounds", "comm_broadcast_words",
    "comm_triangular_words", "crossover_bandwidth", "eigen_spectrum",
    "final_gemm", "generate", "house_vector", "jacobi_eig_oracle",
    "make_back_plan", "mean_idle_fraction", "orthogonality", "partition",
    "random_orthogonal", "run", "run_auto_skew", "sbr_back_accumulate",
    "sbr_back_rows", "sbr_reduce", "simulate", "sym_rank2k_update",
    "tridiag_eig", "unit_model", "validate_trace",
]
