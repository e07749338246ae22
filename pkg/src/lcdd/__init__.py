"""Data-driven computational mechanics with locally convex data reconstruction."""
from .assembly import (Discretization, EssentialBCs, GlobalSolver, build_beam, build_truss,
                       fifteen_bar, global_step, one_bar, reference_solution)
from .datagen import (MaterialDataset, NoiseSpec, gen_linear_truss, gen_outlier_truss,
                      gen_plane_stress, gen_sigmoid_truss, read_csv, write_csv)
from .driver import (SolveReport, SolverConfig, convergence_study, incremental_load,
                     rms_state, rms_truss, run)
from .errors import (ContractError, CoverageError, DatasetError, DatasetParseError,
                     GeometryError, NNLSConvergenceError, SingularSystemError,
                     UnsupportedDomainError)
from .meshfree import NodeSet, rk_shape, shape_matrix, smoothed_gradient
from .nnls_projection import (SolverParams, convex_project, knn, nearest_point, nnls,
                              project_weights)
from .phase_space import DatasetPoint, LocalState, Metric, m_norm, plane_stress_metric, rescale

__version__ = "0.1.0"
