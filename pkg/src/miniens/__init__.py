"""miniens: multilingual tweet sentiment with miniature transformer ensembles."""

import os

# Bit-for-bit reproducibility needs a fixed BLAS thread count; desk-scale
# matrices are too small to gain from threading anyway.
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

__version__ = "0.1.0"

LABELS = ("Positive", "Negative", "Neutral")
LANGUAGES = ("ar", "en")
