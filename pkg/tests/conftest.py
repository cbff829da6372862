"""Session setup: cap math-library threads before numpy first loads so
test runs are reproducible run to run."""

import os

_N = os.environ.get("MLMGEN_THREADS", "1")
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
             "NUMEXPR_NUM_THREADS", "NUMBA_NUM_THREADS"):
    os.environ.setdefault(_var, _N)
