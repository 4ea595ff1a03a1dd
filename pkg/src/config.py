import os

# Paths
BASE_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIGS_DIR = os.path.join(BASE_DIR, "configs")
OUTPUTS_DIR = os.path.join(BASE_DIR, "outputs")

# Output layout
RUNS_SUBDIR = "runs"
FIELDS_SUBDIR = "fields"
HISTORY_FILENAME = "history.csv"
SUMMARY_FILENAME = "summary.csv"
SNAPSHOT_FILENAME = "config.ini"
REPORT_FILENAME = "report.pdf"
CHARTS_FILENAME = "convergence.html"
CSV_FLOAT_FORMAT = "%.12e"

# Logging
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
LOG_LEVEL = "INFO"

# Mesh
MAX_REFINEMENT_LEVEL = 8
DISC_FAN_SECTORS = 8
BOUNDARY_MARKER = 1
EIT_MESH_LEVEL = 4
QPACT_SQUARE_DIVISIONS = 28

# Sparse solves
SOLVE_REL_RESIDUAL = 1e-10
SOLVE_REFINEMENT_STEPS = 3

# EIT source and noise
EIT_GAMMA = 0.1
EIT_BETA = 10.0
EIT_GROUND_ANGLE = 0.0
NOISE_LEVEL = 0.01

# EIT regularization (smoothed TV + Tikhonov)
ALPHA_TV = 0.1
ALPHA_TK = 0.01
TV_EPS = 1e-4
M_REF = 0.0

# qPACT regularization
QPACT_GAMMA_S = 1e-4
QPACT_DELTA_S = 1e-6
QPACT_GAMMA_CTHB = 1e-3
QPACT_DELTA_CTHB = 1e-6
QPACT_GAMMA_MUS = 1e-2
QPACT_DELTA_MUS = 1e-6
QPACT_EPS = 1e-4

# qPACT optics
ANISOTROPY_G = 0.9
GRUNEISEN = 1.0
ILLUMINATION = 1.0
DATA_FLOOR_FRACTION = 1e-6
CLAMP_WARN_FRACTION = 0.01
S_BOUNDS = (1e-6, 1.0 - 1e-6)
CTHB_MIN = 0.0
MUS_MIN = 1e-8

# Extinction coefficients per wavelength (nm): (Hb, HbO2), tabulated molar
# values scaled by 1e-4 into domain units.
EXTINCTION_TABLE = {
    757: (0.1602, 0.0586),
    800: (0.0762, 0.0816),
    850: (0.0691, 0.1058),
}

# INCG
INCG_MAX_ITER = 10
INCG_GRAD_ABS_TOL = 1e-9
INCG_GRAD_REL_TOL = 1e-6
INCG_MAX_CG_ITER = 100
INCG_C_ARMIJO = 1e-4
INCG_MAX_BACKTRACK = 10
INCG_FORCING_CAP = 0.5
INCG_GDM_TOL = 1e-18
HESSIAN_MODE = "full"

# Monolithic baseline
MONOLITHIC_MAX_ITER = 75
MONOLITHIC_GRAD_ABS_TOL = 1e-2
MONOLITHIC_GRAD_REL_TOL = 1e-6

# Consensus ADMM
ADMM_MU = 2.0
ADMM_TAU = 3.0
ADMM_EPS_ABS = 1e-5
ADMM_EPS_REL = 2e-2
ADMM_MAX_GLOBAL_ITER = 10
RHO0_H1 = 0.1
RHO0_L2 = 1000.0
CONSENSUS_NORM = "H1"
Z_UPDATE_MODE = "mean"

# z-update Newton
Z_GRAD_ABS_TOL = 1e-12
Z_GRAD_REL_TOL = 1e-9
Z_MAX_ITER = 10

# qPACT ADMM (global tolerances and adaptive rho)
QPACT_ADMM_MU = 4.0
QPACT_ADMM_TAU = 2.0
QPACT_ADMM_EPS_ABS = 1e-4
QPACT_ADMM_EPS_REL = 1e-3

# Study defaults
DEFAULT_SEED = 1234
DEFAULT_Q = 8
SCALING_Q_VALUES = (2, 4, 8)
SCALING_MESH_LEVELS = (3, 4)
INEXACT_SUBPROBLEM_ITER = 3
EXACT_SUBPROBLEM_ITER = 10
