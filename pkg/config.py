# config.py
LOG_FORMAT = "%(asctime)s [%(levelname)s] %(message)s"
OUTPUT_DIR = "./Data/outputs"  # You can change this to where run artifacts should land.
DATASET_SCHEMA_VERSION = "1"

# Numerical tolerances
TAU_LP = 1e-9               # LP feasibility / optimality tolerance
TAU_FEAS = 1e-7             # adding-up and certificate checks on reconstructed quantities
TAU_OPT = 1e-6              # forward solver objective tolerance
EPSILON_STRICT_SCALE = 1e-6  # strict-inequality margin, multiplied by max_t y_t
PIVOT_TOLERANCE = 1e-11

# Simplex
LP_DEGENERATE_STREAK = 50   # non-improving pivots before switching to Bland's rule
LP_ITERATION_FACTOR = 50    # iteration cap = factor * (rows + columns) + 1000

# Branch-and-bound
NODE_BUDGET = 10**6
PROGRESS_EVERY_NODES = 1000

# Forward simulator
PROBE_BOUNDS = (0.1, 1.1)              # alpha_n(k) ~ Unif(0.1, 1.1)
ASSIGNABLE_SCALE_BOUNDS = (0.1, 1.0)   # S ~ Unif(0.1, 1)
INDEPENDENT_BUNDLE_BOUNDS = (0.0, 1.0)  # beta_n^i(k) ~ Unif(0, 1)
NETWORK_BUDGET = 1.0                   # radar network power constraint C
N_GOODS = 2
ALLOCATE_RESTARTS = 5
ALLOCATE_SEED = 20200504               # restarts are seeded so allocate stays deterministic
ALLOCATE_MAX_STEPS = 500
GRID_ORACLE_RESOLUTION = 200
GRID_ORACLE_REFINE = 10
MIN_RADAR_POWER = 1e-6                 # tracker floor; a zero component measures with variance 1e6

# Three radars: det R^{-1}, Tr R^{-1} and sqrt(beta(1)) * beta(2).
TRI_RADAR_AGENTS = [
    {"utility": "product", "exponents": [1.0, 1.0], "weight": 0.3},
    {"utility": "sum", "exponents": [], "weight": 0.3},
    {"utility": "powerprod", "exponents": [0.5, 1.0], "weight": 0.4},
]

# Reconstruction
CONTOUR_RESOLUTION = 100
CONTOUR_MARGIN = 0.1      # grid spans [min - 10%, max + 10%] of reconstructed bundles
DELTA_ARGMAX = 1e-3
RATIONALIZATION_SAMPLES = 1000

# Experiments
DEFAULT_T = 10
DEFAULT_TRIALS = 100
DEFAULT_SEED = 2020
TYPE_II_MIN_REJECTIONS = 90  # out of 100 independent datasets
