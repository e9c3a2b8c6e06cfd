"""Constants for use across the library"""

BATCH_SCHEMA_VERSION = 1  # version of the line-delimited batch file format.
PARAMS_SCHEMA_VERSION = 1  # version of the parameter file format.
CONFIG_VERSION = 1  # version of the yaml experiment config format.
RESULTS_SCHEMA_VERSION = 1  # version of the learning-curve csv columns.

DEFAULT_WEIGHT_CAP = 20.0
LOG_PROB_INGEST_TOLERANCE = 1e-9
LOG_PROB_FILE_TOLERANCE = 1e-6

# exponents of the exponential branch above this are rejected, not clipped.
MAX_EXPONENT = 700.0

NEWTON_STEPS = 5
NEWTON_RIDGE = 1e-6
NEWTON_MAX_RIDGE = 1e2
NEWTON_MAX_STEP_NORM = 10.0
NEWTON_SHRINK = 0.5
NEWTON_MAX_HALVINGS = 20

CONCAVITY_TOLERANCE = 1e-8
ESTIMATE_DECREASE_TOLERANCE = 1e-9

DUAL_MAX_STEPS = 50
DUAL_DIVERGENCE_LIMIT = 1e6
DUAL_TOLERANCE = 1e-4

NUM_WORKERS_ENV = "IPOWER_NUM_WORKERS"
