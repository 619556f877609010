"""Dense complex multilinear algebra.

Tensors are plain ``numpy.ndarray`` objects. Whenever a tensor is
flattened or reshaped the linearization is column-major (first axis
fastest), so ``vec`` of a matrix coincides with the linearization of an
order-2 tensor. Modes are numbered from 0, like numpy axes.

The unfolding convention is the one for which a CP tensor with factors
``U[0], ..., U[N-1]`` satisfies::

    unfold(T, n) == U[n] @ khatri_rao(U[N-1], ..., U[n+1], U[n-1], ..., U[0]).T
"""

from __future__ import annotations

from functools import reduce

import numpy as np

__all__ = [
    "PINV_RTOL",
    "kron",
    "khatri_rao",
    "vec",
    "unvec",
    "diag",
    "diag_row",
    "unfold",
    "fold",
    "mode_n_product",
    "multi_mode_product",
    "cp_tensor",
    "pinv",
    "numerical_rank",
    "dominant_singular_triplet",
]

PINV_RTOL = 1e-12


def kron(*mats):
    """Kronecker product of one or more matrices (or vectors)."""
    return reduce(np.kron, [np.asarray(m) for m in mats])


def khatri_rao(*mats):
    """Column-wise Kronecker product.

    Column ``j`` of the result is ``kron(A[:, j], B[:, j], ...)``; the
    first argument varies slowest along the rows.

    Raises
    ------
    ValueError
        If the column counts differ.
    """
    mats = [np.atleast_2d(np.asarray(m)) for m in mats]
    ncols = mats[0].shape[1]
    for m in mats[1:]:
        if m.shape[1] != ncols:
            raise ValueError(
                f"khatri_rao needs equal column counts, got {mats[0].shape} and {m.shape}"
            )

    def _kr(a, b):
        return (a[:, None, :] * b[None, :, :]).reshape(a.shape[0] * b.shape[0], ncols)

    return reduce(_kr, mats)


def vec(a):
    """Stack the columns of ``a`` into a single vector."""
    return np.asarray(a).reshape(-1, order="F")


def unvec(v, rows, cols):
    """Inverse of :func:`vec` for a ``rows x cols`` matrix."""
    v = np.asarray(v)
    if v.size != rows * cols:
        raise ValueError(f"cannot unvec {v.size} entries into {rows}x{cols}")
    return v.reshape(rows, cols, order="F")


def diag(v):
    """Diagonal matrix with ``v`` on its diagonal."""
    v = np.asarray(v)
    if v.ndim != 1:
        raise ValueError("diag expects a vector")
    return np.diag(v)


def diag_row(b, j):
    """Diagonal matrix built from row ``j`` of ``b``."""
    b = np.asarray(b)
    if not 0 <= j < b.shape[0]:
        raise IndexError(f"row {j} out of range for {b.shape[0]} rows")
    return np.diag(b[j])


def _check_mode(ndim, mode):
    if not 0 <= mode < ndim:
        raise ValueError(f"mode {mode} invalid for a tensor of order {ndim}")


def unfold(tensor, mode):
    """Mode-``mode`` unfolding, shape ``(I_mode, prod of the other extents)``."""
    tensor = np.asarray(tensor)
    _check_mode(tensor.ndim, mode)
    return np.moveaxis(tensor, mode, 0).reshape(tensor.shape[mode], -1, order="F")


def fold(mat, mode, shape):
    """Refold a mode-``mode`` unfolding into a tensor of the given shape."""
    shape = tuple(shape)
    _check_mode(len(shape), mode)
    mat = np.asarray(mat)
    rest = shape[:mode] + shape[mode + 1:]
    if mat.shape != (shape[mode], int(np.prod(rest, dtype=int))):
        raise ValueError(f"matrix of shape {mat.shape} does not fold into {shape} along mode {mode}")
    return np.moveaxis(mat.reshape((shape[mode],) + rest, order="F"), 0, mode)


def mode_n_product(tensor, mat, mode):
    """Multiply ``tensor`` by ``mat`` along ``mode``."""
    tensor = np.asarray(tensor)
    mat = np.asarray(mat)
    _check_mode(tensor.ndim, mode)
    if mat.ndim != 2 or mat.shape[1] != tensor.shape[mode]:
        raise ValueError(
            f"cannot multiply mode {mode} of extent {tensor.shape[mode]} by a {mat.shape} matrix"
        )
    shape = list(tensor.shape)
    shape[mode] = mat.shape[0]
    return fold(mat @ unfold(tensor, mode), mode, shape)


def multi_mode_product(tensor, mats):
    """Apply ``tensor x_0 mats[0] x_1 mats[1] ...``; ``None`` skips a mode."""
    for mode, mat in enumerate(mats):
        if mat is not None:
            tensor = mode_n_product(tensor, mat, mode)
    return tensor


def cp_tensor(factors):
    """Dense tensor from CP factors sharing a common number of columns."""
    factors = [np.asarray(f) for f in factors]
    shape = tuple(f.shape[0] for f in factors)
    mat = factors[0] @ khatri_rao(*factors[:0:-1]).T
    return fold(mat, 0, shape)


def _svd(a):
    return np.linalg.svd(np.asarray(a), full_matrices=False)


def pinv(a, rtol=PINV_RTOL, return_rank=False):
    """Moore-Penrose pseudoinverse through the SVD.

    Singular values below ``rtol * sigma_max`` are treated as zero. With
    ``return_rank=True`` the numerical rank is returned alongside.
    """
    a = np.asarray(a)
    if a.size == 0:
        out = np.zeros(a.shape[::-1], dtype=a.dtype)
        return (out, 0) if return_rank else out
    u, s, vh = _svd(a)
    keep = s > rtol * s[0] if s[0] > 0 else np.zeros_like(s, dtype=bool)
    rank = int(keep.sum())
    out = (vh[:rank].conj().T / s[:rank]) @ u[:, :rank].conj().T
    return (out, rank) if return_rank else out


def numerical_rank(a, rtol=1e-10):
    s = np.linalg.svd(np.asarray(a), compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int((s > rtol * s[0]).sum())


def dominant_singular_triplet(a):
    """Leading singular triplet ``(u, sigma, v)`` with ``a @ v == sigma * u``.

    The phase is fixed so that the first nonzero entry of ``v`` is real and
    positive.

    Raises
    ------
    ValueError
        If ``a`` is the zero matrix.
    """
    a = np.asarray(a)
    if not np.any(a):
        raise ValueError("dominant singular triplet of a zero matrix is undefined")
    u, s, vh = _svd(a)
    u1 = u[:, 0]
    v1 = vh[0].conj()
    idx = np.flatnonzero(np.abs(v1) > 1e-14 * np.abs(v1).max())[0]
    phase = v1[idx] / abs(v1[idx])
    return u1 / phase, float(s[0]), v1 / phase
