"""crossloc: knowledge transfer between wearable sensor locations.

Trains one encoder per sensor modality, bidirectional latent translators,
and a single shared classifier, with a joint classification + contrastive
alignment objective, then evaluates under leave-one-subject-out splits.
"""

__version__ = "0.1.0"

import os as _os

# fixed-thread configuration: our matrices are small, so single-threaded BLAS
# is both faster and keeps reduction order reproducible. Must happen before
# numpy loads; explicit user settings win.
if "numpy" not in __import__("sys").modules:
    for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, "1")

from .backend import backend_name
from .tensor import Tensor

__all__ = ["Tensor", "backend_name", "__version__"]
