"""Define constants commonly used throughout adaptive MPC.

SPDX-License-Identifier: BSD-3-Clause
"""

# Geometry tolerances.
REDUNDANCY_TOLERANCE = 1e-8
MEMBERSHIP_TOLERANCE = 1e-9
FACTOR_TOLERANCE = 1e-8
ZERO_TOLERANCE = 1e-12

# LP feasibility tolerances passed to HiGHS. 1e-10 is the smallest it accepts.
LP_FEASIBILITY_TOLERANCE = 1e-10

# QP (OSQP) settings.
QP_EPS_ABS = 1e-9
QP_EPS_REL = 1e-9
QP_EPS_INFEASIBLE = 1e-7
QP_MAX_ITER = 200000
QP_RESIDUAL_TOLERANCE = 1e-6
# OSQP otherwise times its setup to choose when to adapt rho.
QP_ADAPTIVE_RHO_INTERVAL = 25

# Cost matrix (vertex LMI) settings.
LMI_MARGIN = 1e-6
LMI_RESIDUAL_TOLERANCE = 1e-7
LMI_MONOTONE_TOLERANCE = 1e-9

# Runtime monitor tolerances.
LYAPUNOV_TOLERANCE = 1e-5
CONSTRAINT_TOLERANCE = 1e-8
ORDERING_TOLERANCE = 1e-9

# Defaults for scenario fields which may be omitted.
DEFAULT_POL_DIRECTIONS = 8
DEFAULT_KAPPA = 0.5
DEFAULT_LAMBDA_C = 0.95
DEFAULT_HORIZON_CAP = 50
DEFAULT_MAX_ITER = 500
DEFAULT_T_STP = 20
DEFAULT_MODE = "adaptive"
DEFAULT_SEED = 0
DEFAULT_SNAPSHOTS = (0, 3, 7, 20)
DEFAULT_EXCITATION_WINDOW = 4

MODES = ("adaptive", "simplified", "robust")

# Environment variable used to set the log level of the CLI.
LOG_LEVEL_VARIABLE = "ADAMPC_LOG_LEVEL"

# Exit codes.
MONITOR_EXIT_CODE = 1

# Output file names.
TRACE_FILE = "trace.csv"
REPORT_FILE = "report.json"
COMPARISON_FILE = "comparison.json"
SETS_FILE_TEMPLATE = "sets_k{step}.json"

TRACE_FIELDS = (
    "k",
    "x",
    "u",
    "cost",
    "horizon_ext",
    "gamma",
    "n_c",
    "solver_iterations",
    "updated",
    "lyapunov_residual",
    "theta_hat",
    "bound",
    "x_tilde_norm",
    "excitation",
)
