"""Pure-numpy quasi-Monte Carlo sweep kernel.

This is the fallback for :mod:`multipipe._mvnkern` (the Cython build of the
same loop).  Both kernels evaluate the separation-of-variables integrand of
a multivariate normal rectangle probability over a randomly shifted rank-1
lattice; they share all orchestration (factorization, lattice generators,
shift draws) living in :mod:`multipipe.mvn`, and use the same scipy special
functions, so their results agree to summation-order rounding.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtr, ndtri

#: clamp for inverse-CDF arguments, shared with the compiled kernel
UEPS = 1e-15

#: points processed per slab so large J x N buffers stay bounded
_CHUNK = 16384


def sweep_batches(
    cho: np.ndarray,
    lo: np.ndarray,
    hi: np.ndarray,
    gen: np.ndarray,
    shifts: np.ndarray,
    n_pts: int,
) -> np.ndarray:
    """Mean integrand per randomization batch.

    Parameters
    ----------
    cho : (J, J) ndarray
        Scaled, permuted lower-triangular factor with unit (or, for
        degenerate directions, zero) diagonal.
    lo, hi : (J,) ndarray
        Transformed integration bounds matching ``cho``.
    gen : (J-1,) ndarray
        Rank-1 lattice generators in (0, 1).
    shifts : (B, J-1) ndarray
        One uniform shift vector per randomization batch.
    n_pts : int
        Lattice points per batch.

    Returns
    -------
    (B,) ndarray of per-batch means, each an unbiased estimate of the
    rectangle probability.
    """
    n_batches = shifts.shape[0]
    out = np.empty(n_batches)
    for b in range(n_batches):
        out[b] = _sweep_one(cho, lo, hi, gen, shifts[b], n_pts)
    return out


def _sweep_one(cho, lo, hi, gen, shift, n_pts):
    j_dim = cho.shape[0]
    c0 = float(ndtr(lo[0]))
    d0 = float(ndtr(hi[0]))
    if j_dim == 1:
        return d0 - c0
    total = 0.0
    done = 0
    y = np.empty((j_dim - 1, min(_CHUNK, n_pts)))
    while done < n_pts:
        m = min(_CHUNK, n_pts - done)
        idx = np.arange(done + 1, done + m + 1, dtype=np.float64)
        c = np.full(m, c0)
        dc = np.full(m, d0 - c0)
        pv = dc.copy()
        for i in range(1, j_dim):
            z = gen[i - 1] * idx + shift[i - 1]
            z -= np.floor(z)
            x = np.abs(2.0 * z - 1.0)  # tent periodization
            u = c + x * dc
            np.clip(u, UEPS, 1.0 - UEPS, out=u)
            y[i - 1, :m] = ndtri(u)
            s = cho[i, :i] @ y[:i, :m]
            if cho[i, i] > 0.0:
                c = ndtr(lo[i] - s)
                d = ndtr(hi[i] - s)
            else:
                # degenerate direction: the coordinate is deterministic
                # given its predecessors, so the factor is an indicator
                c = (s < lo[i]).astype(np.float64)
                d = (s <= hi[i]).astype(np.float64)
            dc = d - c
            pv = pv * dc
        total += float(pv.sum())
        done += m
    return total / n_pts
