# Default settings values
DEFAULT_DT = 0.01  # Integration step, seconds
DEFAULT_DURATION = 20.0
DEFAULT_INTEGRATOR = "rk4"
DEFAULT_SEED = 0
DEFAULT_INITIAL_BOX = 5.0  # Initial positions drawn from [-box, box]^d
DEFAULT_DIVERGENCE_BOUND = 1e9

DEFAULT_SPATIAL_DIM = 2
DEFAULT_ALPHA = 0.0  # Pure double integrator
DEFAULT_BETA = 0.0
DEFAULT_K_POS = -6.0
DEFAULT_K_VEL = -5.0

# Gain search box and refinement
GAIN_SEARCH_LOW = -10.0
GAIN_SEARCH_HIGH = -0.1
GAIN_SEARCH_POINTS = 12
GAIN_REFINE_ROUNDS = 20

DEFAULT_OBSERVER_POLE = -10.0
DEFAULT_OBSERVER_POLE_SPREAD = 0.025  # Pole j sits at pole * (1 + spread * j)
DEFAULT_PLACEMENT_ITERATIONS = 5  # KNV0 conditioning sweeps
DEFAULT_RANK_TOLERANCE = 1e-8  # Relative to the largest singular value
DEFAULT_STABILITY_MARGIN = 1e-6  # Real parts above -margin count as not decaying

DEFAULT_THRESHOLD_MARGIN = 3.0
DEFAULT_TRANSIENT_CUTOFF = 1.0
DEFAULT_THRESHOLD_FLOOR = 1e-6
DEFAULT_DEBOUNCE = 0.2
DEFAULT_CALIBRATION_DURATION = 5.0
DEFAULT_SELF_CHECK_TOLERANCE = 1e-6

DEFAULT_HEXAGON_RADIUS = 2.0
LAPLACIAN_TOLERANCE = 1e-12

# Per-UAV state layout: [px, vx, py, vy] for d = 2
CHANNELS = ("x", "vx", "y", "vy", "z", "vz")

ATTACK_KINDS = ("node", "broadcast_offset", "broadcast_noise")
MONITOR_MODELS = ("node", "broadcast")
OBSERVER_INIT_MODES = ("exact", "zero")
INTEGRATORS = ("rk4", "euler")

TRACE_FILE = "trace.csv"
MANIFEST_FILE = "manifest.json"
SUMMARY_FILE = "summary.json"
TRACE_BASE_COLUMNS = ["t", "node", "x", "y", "vx", "vy", "hx", "hy", "attack_active"]  # Planar fleets
TRACE_AXES = ("x", "y", "z")
TRACE_REQUIRED_COLUMNS = ["t", "node", "x", "vx", "hx", "attack_active"]
