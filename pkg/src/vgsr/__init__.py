"""Keyword-prediction speech models trained from visual tags, plus the
retrieval metrics, baselines and corpus tooling to evaluate them."""

import os

# Cap BLAS parallelism before numpy loads, best effort; our own code is
# single-threaded throughout.
_threads = os.environ.get("VGSR_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"
