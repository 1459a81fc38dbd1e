"""Hot inner loops with a numba path and a pure-numpy/scipy fallback.

The backend is chosen once at import time from ``SPADESCT_BACKEND``
(``numba`` or ``numpy``).  The default is ``numba`` when it can be imported.

Sparse products take a CSR triple ``(indptr, indices, data)`` and a dense
right-hand side of shape ``(n_cols, batch)``.  Each output row is reduced in
a fixed order, so results do not depend on the thread count.
"""
from __future__ import annotations

import os
import warnings

import numpy as np
import scipy.sparse as sp

_requested = os.environ.get("SPADESCT_BACKEND", "numba").strip().lower()
# the bundled TBB is too old for numba; skip probing it
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")
warnings.filterwarnings("ignore", message="The TBB threading layer")

try:
    if _requested == "numpy":
        raise ImportError
    import numba
    from numba import njit, prange

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"


# ---------------------------------------------------------------- numpy path

def csr_matmul_numpy(indptr, indices, data, x):
    n_rows = len(indptr) - 1
    m = sp.csr_matrix((data, indices, indptr), shape=(n_rows, x.shape[0]))
    return np.asarray(m @ x)


def switch_index_numpy(estimates, bounds):
    """Maximal prefix index whose confidence intervals still intersect.

    ``estimates`` and ``bounds`` are ``(I, n)``; intervals are
    ``[e - 2*rho, e + 2*rho]``.  Returns 0-based indices of length ``n``.
    """
    lo = np.maximum.accumulate(estimates - 2.0 * bounds, axis=0)
    hi = np.minimum.accumulate(estimates + 2.0 * bounds, axis=0)
    ok = lo <= hi
    # ok is monotone (true then false) along axis 0; count the leading run
    return ok.sum(axis=0).astype(np.int64) - 1


# ---------------------------------------------------------------- numba path

if HAVE_NUMBA:

    @njit(parallel=True, cache=True, nogil=True)
    def csr_matmul_numba(indptr, indices, data, x):
        n_rows = len(indptr) - 1
        batch = x.shape[1]
        out = np.zeros((n_rows, batch))
        for r in prange(n_rows):
            for t in range(indptr[r], indptr[r + 1]):
                c = indices[t]
                v = data[t]
                for b in range(batch):
                    out[r, b] += v * x[c, b]
        return out

    @njit(parallel=True, cache=True, nogil=True)
    def switch_index_numba(estimates, bounds):
        n_est, n = estimates.shape
        out = np.empty(n, dtype=np.int64)
        for p in prange(n):
            lo = -np.inf
            hi = np.inf
            chosen = 0
            for i in range(n_est):
                lo = max(lo, estimates[i, p] - 2.0 * bounds[i, p])
                hi = min(hi, estimates[i, p] + 2.0 * bounds[i, p])
                if lo > hi:
                    break
                chosen = i
            out[p] = chosen
        return out

    csr_matmul = csr_matmul_numba
    switch_index = switch_index_numba
else:
    csr_matmul = csr_matmul_numpy
    switch_index = switch_index_numpy


def set_threads(n: int | None) -> None:
    """Set the numba thread count.

    BLAS is pinned to one thread: its reductions may split differently with
    more threads, while the numba kernels partition only output rows.
    """
    try:
        from threadpoolctl import threadpool_limits

        threadpool_limits(1, user_api="blas")
    except ImportError:  # pragma: no cover
        pass
    if n is None:
        return
    n = max(1, int(n))
    if HAVE_NUMBA:
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
