# traffic_recon Settings Template
# Copy this file (e.g. to recon_settings.py), edit the values you need and pass it
# with: python -m traffic_recon --settings recon_settings.py <command> ...
# Only UPPERCASE names are read; anything left out keeps its default.

# Regularizer added to the diagonal of C
EPSILON = 1e-4

# Reconstruction
SOLVER_TOLERANCE = 1e-8
SOLVER_SCHEME = "gauss_seidel"     # or "jacobi"

# Hyperparameter learning
LEARN_LAMBDA = 0.0
LEARN_STEP_SIZE = 1.0
LEARN_MAX_STEPS = 500
LEARN_GRAD_TOLERANCE = 1e-6

# Evaluation
DEFAULT_TRIALS = 500
DEFAULT_P_VALUES = (0.5, 0.7, 0.9)

# Map colors (density per band, then one color per band)
BIN_WIDTH = 0.05
PALETTE = ("black", "blue", "green", "yellow", "red")

# Log file name under OUTPUT_DIR (None logs to the console only)
# LOG_FILE_NAME = "traffic_recon.log"
