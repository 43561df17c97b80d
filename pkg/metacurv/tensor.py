# Copyright (C) 2026 MetaCurv developers.
# This file is part of MetaCurv.
# See the file 'LICENSE' for copying permission.

"""Dense multilinear algebra on float64 numpy arrays.

Tensors are plain ndarrays stored row-major, so mode 1 is the slowest
varying index. Modes are numbered from 1 in every public function, the same
way the formulas are written; shapes are the only thing exposed otherwise.
"""

import numpy as np

from metacurv.exceptions import InvalidArgument

MAX_ORDER = 4

def as_tensor(t):
    """Return `t` as a float64 ndarray of order 1..MAX_ORDER."""
    t = np.asarray(t, dtype=np.float64)
    if t.ndim < 1 or t.ndim > MAX_ORDER:
        raise InvalidArgument(
            "tensor order must be within 1..%d, got %d" % (MAX_ORDER, t.ndim)
        )
    if min(t.shape) < 1:
        raise InvalidArgument("tensor extents must be positive: %s" % (t.shape,))
    return t

def as_matrix(m):
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or min(m.shape) < 1:
        raise InvalidArgument("expected a non-empty matrix, got shape %s" % (m.shape,))
    return m

def _check_mode(ndim, n):
    if not 1 <= n <= ndim:
        raise InvalidArgument("mode %r out of range for order %d" % (n, ndim))

def identity(n):
    return np.eye(n, dtype=np.float64)

def unfold(t, n):
    """Mode-n unfolding: the mode-n fibers become the columns.

    Entry (i_n, j) holds t[i_1, ..., i_N] with
    j = 1 + sum_{k != n} (i_k - 1) J_k and J_k = prod_{m < k, m != n} I_m,
    i.e. the remaining modes are enumerated with the lowest mode fastest.
    """
    t = as_tensor(t)
    _check_mode(t.ndim, n)
    moved = np.moveaxis(t, n - 1, 0)
    return np.reshape(moved, (t.shape[n - 1], -1), order="F")

def fold(m, n, shape):
    """Inverse of unfold(): rebuild a tensor of `shape` from its mode-n
    unfolding."""
    m = as_matrix(m)
    shape = tuple(int(x) for x in shape)
    if not shape or len(shape) > MAX_ORDER or min(shape) < 1:
        raise InvalidArgument("invalid tensor shape %s" % (shape,))
    _check_mode(len(shape), n)

    rest = shape[:n - 1] + shape[n:]
    if m.shape != (shape[n - 1], int(np.prod(rest, dtype=np.int64))):
        raise InvalidArgument(
            "matrix of shape %s cannot be folded at mode %d into %s" %
            (m.shape, n, shape)
        )

    t = np.reshape(m, (shape[n - 1],) + rest, order="F")
    return np.ascontiguousarray(np.moveaxis(t, 0, n - 1))

def mode_product(t, m, n):
    """n-mode product t x_n m, summing t over i_n against m[j, i_n]."""
    t = as_tensor(t)
    m = as_matrix(m)
    _check_mode(t.ndim, n)
    if m.shape[1] != t.shape[n - 1]:
        raise InvalidArgument(
            "mode-%d product needs %d matrix columns, got %d" %
            (n, t.shape[n - 1], m.shape[1])
        )
    out = np.tensordot(m, t, axes=(1, n - 1))
    return np.ascontiguousarray(np.moveaxis(out, 0, n - 1))

def multi_mode_product(t, matrices, transpose=False):
    """Chain distinct-mode products. `matrices` maps mode -> matrix and is
    applied in the iteration order of its items; None entries are skipped."""
    modes = [n for n, m in matrices.items() if m is not None]
    if len(set(modes)) != len(modes):
        raise InvalidArgument("modes must be distinct: %s" % modes)

    for n, m in matrices.items():
        if m is None:
            continue
        t = mode_product(t, as_matrix(m).T if transpose else m, n)
    return t

def kron(a, b):
    return np.kron(as_matrix(a), as_matrix(b))

def vectorize(t):
    """Lexicographic vec() with mode 1 most significant; for an order-3
    tensor position(o, i, f) = ((o-1) Cin + (i-1)) d + f."""
    return np.ravel(as_tensor(t), order="C").copy()

def devectorize(v, shape):
    v = np.asarray(v, dtype=np.float64)
    shape = tuple(int(x) for x in shape)
    if v.ndim != 1 or v.size != int(np.prod(shape, dtype=np.int64)):
        raise InvalidArgument(
            "vector of length %d does not fit shape %s" % (v.size, shape)
        )
    return as_tensor(np.reshape(v, shape, order="C").copy())

def hat_matrices(mo, mi, mf):
    """Expanded factors (Mo x I x I, I x Mi x I, I x I x Mf), all of size
    Cout Cin d. Diagnostic use only."""
    mo, mi, mf = as_matrix(mo), as_matrix(mi), as_matrix(mf)
    io, ii, if_ = identity(mo.shape[0]), identity(mi.shape[0]), identity(mf.shape[0])
    return (
        kron(mo, kron(ii, if_)),
        kron(io, kron(mi, if_)),
        kron(io, kron(ii, mf)),
    )

def inner(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidArgument("inner product of %s and %s" % (a.shape, b.shape))
    return float(np.sum(a * b))

def rel_error(a, b):
    """Max-norm relative error of `a` against the reference `b`."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    diff = np.max(np.abs(a - b)) if a.size else 0.0
    scale = np.max(np.abs(b)) if b.size else 0.0
    if scale == 0.0:
        return float(diff)
    return float(diff / scale)
