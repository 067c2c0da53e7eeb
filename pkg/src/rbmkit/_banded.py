"""Matrix-vector products summed diagonal by diagonal.

The summation order depends only on the matrix, never on how many rows
are processed at once, so results are bitwise stable under any blocking
of paths. Tridiagonal reflection matrices cost two passes.
"""
import numpy as np


def offsets(A, dense=False):
    """Diagonal offsets o (column - row) carrying nonzeros of A."""
    d, k = A.shape[-2:]
    rng = range(-(d - 1), k)
    if dense:
        return list(rng)
    return [o for o in rng if np.any(np.diagonal(A, o, axis1=-2, axis2=-1))]


def matvec(A, x, offs):
    """y_i = sum_j A[..., i, j] x[..., j], A of shape (d, k) or (..., d, k)."""
    d, k = A.shape[-2:]
    y = np.zeros(np.broadcast_shapes(x.shape[:-1], A.shape[:-2]) + (d,))
    for o in offs:
        a = np.diagonal(A, o, axis1=-2, axis2=-1)
        n = a.shape[-1]
        if o >= 0:
            y[..., :n] += a * x[..., o:o + n]
        else:
            y[..., -o:-o + n] += a * x[..., :n]
    return y


def rowsq(A, offs):
    """sum_j A[..., i, j]^2, same order as matvec."""
    d, k = A.shape[-2:]
    y = np.zeros(A.shape[:-2] + (d,))
    for o in offs:
        a = np.diagonal(A, o, axis1=-2, axis2=-1)
        n = a.shape[-1]
        if o >= 0:
            y[..., :n] += a * a
        else:
            y[..., -o:-o + n] += a * a
    return y
