# Package-wide numeric defaults. Experiment files override the run-level ones.

# Stopping rule
DEFAULT_TOL_MSE = 1e-6
DEFAULT_ITERATION_CAP = 10_000
DEFAULT_BLOWUP_MSE = 1e12

# Inner solvers (penalized argmin, projections, centralized oracles)
INNER_ITERATION_CAP = 200
KKT_TOLERANCE = 1e-9
GAUSS_NEWTON_GTOL = 1e-8
RANGE_SINGULARITY_EPS = 1e-9

# Tuning
GSS_ITERATIONS = 12
GSS_LOG10_BOUNDS = (-4.0, 1.0)

# Accounting
SECONDS_PER_FLOAT = 1.0
SECONDS_PER_OP = 1e-9

# Graph generation
GRAPH_RETRIES = 100

# NEXT defaults
NEXT_ALPHA0 = 0.2
NEXT_STEP_DECAY = 1e-2
NEXT_SURROGATE_TAU = 1.0
NEXT_LINEAR_TAU = 1.0

# Output files
TRACE_FILE = "trace.csv"
SUMMARY_FILE = "summary.json"
TUNED_FILE = "tuned.json"
REPORT_FILE = "report.csv"
SENSITIVITY_FILE = "sensitivity.csv"
INSTANCE_FILE = "instance.json"

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
LOG_DATE_FORMAT = '%Y-%m-%d %H:%M:%S'
