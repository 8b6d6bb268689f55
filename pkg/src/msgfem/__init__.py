"""Multiscale spectral GFEM for weighted interior-penalty DG discretizations."""

from .config import RunConfig, parse_config, serialize_config
from .decomposition import (Decomposition, build_decomposition, d_minus,
                            d_plus, grow, square_block)
from .dg_forms import (DGAssembler, DofMap, FormMatrix, assemble_B,
                       assemble_Bplus, assemble_H, assemble_load, energy_norm,
                       gamma_sq, weighted_avg_weights)
from .errors import CoercivityError, ConfigError, MeshError, SolverError
from .gfem import (CoarseSpace, MSGFEMSolution, assemble_coarse, error_report,
                   solve_coarse, solve_msgfem)
from .local_problems import (LocalSpectralData, compute_local_data,
                             eigenproblem, harmonic_basis, particular_solution,
                             select_coarse)
from .mesh import (Coefficient, TriMesh, build_structured_mesh,
                   coefficient_field, face_data)
from .space_ops import (PartitionOfUnity, build_pou, extend_by_zero, h0_dofs,
                        interpolate_product, locality_check, pou_blend,
                        restrict)
from .verification import (ConvergenceRecord, decay_fit, fine_solve,
                           manufactured_convergence, run_property_suite)

__version__ = "0.1.0"
