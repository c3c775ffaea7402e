"""Default constants for data generation, training and evaluation.

Values marked "desk scale" are reduced from full-scale settings so a complete
synthetic sweep runs on a laptop CPU. Everything here is overridable from an
experiment config document.
"""


# Synthetic TCL data
TCL_DIM = 5
TCL_SEGMENTS = 20
TCL_SAMPLES_PER_SEGMENT = 500
TCL_SWEEP_SIZES = (100, 200, 500, 1000, 2000)
TCL_MIXING_LAYERS = 4
TCL_MEAN_RANGE = (-3.0, 3.0)
TCL_STD_RANGE = (0.01, 3.0)
TCL_MIN_SINGULAR_VALUE = 0.1
TCL_MAX_REJECTIONS = 100

# Network architecture (hidden widths scaled down from 512/384/256/256)
LEAKY_SLOPE = 0.1
DROPOUT_RATE = 0.1
DROPOUT_AFTER_HIDDEN = 2  # dropout follows the second hidden layer
ENCODER_HIDDEN = (64, 48, 32)
DECODER_HIDDEN = (32, 48, 64)
DECODER_LOG_VAR = -4.605170185988091  # log(0.01)

# Optimisation
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
LEARNING_RATE = 1e-3
BATCH_SIZE = 64
TRAIN_STEPS = 20_000  # desk scale; full-scale runs use 70,000
EVAL_INTERVAL = 500
PLATEAU_DECAY = 0.5
PLATEAU_PATIENCE = 5
PLATEAU_MIN_IMPROVEMENT = 1e-3
MIN_LEARNING_RATE = 1e-6

# Priors
VADE_COMPONENTS = 40
RADEMACHER_BITS = 7
IDENTIFIABILITY_NOISE = 1e-2
IDENTIFIABILITY_RETRIES = 10
CN_PENALTY_ALPHA = 0.0

# Metrics
CCA_MAX_DIMS = 20
CCA_RIDGE = 1e-7
ZERO_VARIANCE_GUARD = 1e-12
WILCOXON_EXACT_MAX_N = 25
WILCOXON_TIE_DECIMALS = 12
EVAL_FRACTION = 0.5
FIT_FRACTION = 0.5

# Numerics
SINGULAR_FLOOR = 1e-300
CSV_FORMAT = "%.17g"

# Process
DEFAULT_MAX_WORKERS = 4
DEFAULT_LOG_LEVEL = "INFO"
