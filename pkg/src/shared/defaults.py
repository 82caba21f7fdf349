from __future__ import annotations

# Centralized default values for experiment configuration.
# Single source of truth for defaults across the CLI, the factories and the Pydantic config.

# Benchmark system (3-DOF mass-spring-damper chain)
SAMPLING_TIME_SEC = 0.02
MSD_MASSES = (0.5, 0.4, 0.1)
MSD_SPRINGS = (100.0, 100.0, 100.0)
MSD_DAMPERS = (0.5, 0.5, 0.5)
MSD_HARDENING = 100.0
SATURATION_LEVEL = 30.0
LPF_CUTOFF_HZ = 5.0
SNR_DB = 30.0

# Excitation
MULTISINE_PERIOD = 10000
MULTISINE_BIN_STEP = 3
MULTISINE_RMS = 10.0
EST_PERIODS = 2
VAL_PERIODS = 1
TEST_PERIODS = 1
WARMUP_PERIODS = 1

# Baseline parameter sets, ordered (m1, m2, k1, k2, c1, c2)
BASELINE_IDEAL = (0.5, 0.4, 100.0, 100.0, 0.5, 0.5)
BASELINE_APPROX = (0.5, 0.4, 95.0, 95.0, 0.45, 0.45)

# Model structure
AUG_HIDDEN_LAYERS = 2
AUG_HIDDEN_NODES = 8
AUG_HIDDEN = (AUG_HIDDEN_NODES,) * AUG_HIDDEN_LAYERS
ENCODER_HIDDEN_LAYERS = 2
ENCODER_HIDDEN_NODES = 16
ENCODER_HIDDEN = (ENCODER_HIDDEN_NODES,) * ENCODER_HIDDEN_LAYERS
ENCODER_LAG = 7
OUTPUT_HEAD_STATES = 1
AUG_STATE_SPECTRAL_RADIUS = 0.5

# Training
TRUNCATION_LENGTH = 200
EPOCHS = 3000
BATCH_SIZE = 2000
LEARNING_RATE = 1e-3
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
REGULARIZATION_LAMBDA = 1.0
VALIDATION_EVERY_EPOCHS = 1
DIVERGENCE_PATIENCE = 5
ENCODER_PRETRAIN_EPOCHS = 300
ENCODER_PRETRAIN_BATCH_SIZE = 1000

# Outputs
OUTPUT_DIR = "out"
LOG_FILE_NAME = "lfr_augment.log"
CHECKPOINT_FILE_NAME = "checkpoint.json"
METRICS_FILE_NAME = "metrics.csv"
RESULTS_FILE_NAME = "results.csv"
