# Copyright (C) 2026 MetaCurv developers.
# This file is part of MetaCurv.
# See the file 'LICENSE' for copying permission.

import collections
import numpy as np

from metacurv.exceptions import InvalidArgument, SizeLimitExceeded
from metacurv.tensor import (
    as_matrix, as_tensor, identity, kron, multi_mode_product, unfold,
)

MC1 = "MC1"
MC2 = "MC2"
VARIANTS = MC1, MC2

# Largest Cout * Cin * d for which mc_expand() builds the dense matrix.
EXPAND_CAP = 4096

LayerShape = collections.namedtuple("LayerShape", ("cout", "cin", "d"))

def layer_shape(shape):
    """Map a parameter shape onto (Cout, Cin, d). Bias vectors become
    (Cout, 1, 1), fully connected weights (out, in, 1) and convolution
    kernels (Cout, Cin, h*w)."""
    shape = tuple(int(x) for x in shape)
    if len(shape) == 1:
        return LayerShape(shape[0], 1, 1)
    if len(shape) == 2:
        return LayerShape(shape[0], shape[1], 1)
    if len(shape) == 3:
        return LayerShape(*shape)
    if len(shape) == 4:
        return LayerShape(shape[0], shape[1], shape[2] * shape[3])
    raise InvalidArgument("no layer shape for parameter of shape %s" % (shape,))

class CurvatureBlock(object):
    """Per-parameter-tensor triple (Mo, Mi, Mf). Blocks are never modified
    in place; replace() hands out a new one."""

    def __init__(self, mo, mi, mf, variant=MC2):
        if variant not in VARIANTS:
            raise InvalidArgument("unknown meta-curvature variant %r" % variant)

        self.mo = as_matrix(mo).copy()
        self.mi = as_matrix(mi).copy()
        self.mf = as_matrix(mf).copy()
        self.variant = variant

        for name, m in (("Mo", self.mo), ("Mi", self.mi), ("Mf", self.mf)):
            if m.shape[0] != m.shape[1]:
                raise InvalidArgument("%s must be square, got %s" % (name, m.shape))

        if variant == MC1 and not np.array_equal(self.mo, identity(self.mo.shape[0])):
            raise InvalidArgument("MC1 blocks keep Mo fixed to the identity")

        for m in (self.mo, self.mi, self.mf):
            m.setflags(write=False)

    @property
    def shape(self):
        return LayerShape(self.mo.shape[0], self.mi.shape[0], self.mf.shape[0])

    def replace(self, mo=None, mi=None, mf=None):
        if self.variant == MC1:
            mo = None
        return CurvatureBlock(
            self.mo if mo is None else mo,
            self.mi if mi is None else mi,
            self.mf if mf is None else mf,
            self.variant,
        )

    def __eq__(self, other):
        return (
            isinstance(other, CurvatureBlock) and
            self.variant == other.variant and
            np.array_equal(self.mo, other.mo) and
            np.array_equal(self.mi, other.mi) and
            np.array_equal(self.mf, other.mf)
        )

    def __ne__(self, other):
        return not self == other

    def __repr__(self):
        return "<CurvatureBlock %s %dx%dx%d>" % ((self.variant,) + tuple(self.shape))

def mc_init(shape, variant=MC2):
    """Identity meta-curvature; the transformed gradient starts out as the
    gradient itself."""
    shape = LayerShape(*shape)
    if min(shape) < 1:
        raise InvalidArgument("layer extents must be positive: %s" % (shape,))
    return CurvatureBlock(
        identity(shape.cout), identity(shape.cin), identity(shape.d), variant
    )

def apply_block_grads(b, d_mo=None, d_mi=None, d_mf=None, lr=1.0):
    """Plain gradient step on the factors; None leaves a factor alone and
    MC1 blocks keep Mo at the identity."""
    step = lambda m, d: None if d is None else m - lr * as_matrix(d)
    return b.replace(step(b.mo, d_mo), step(b.mi, d_mi), step(b.mf, d_mf))

def full_matrix_block(m):
    """Unfactored P x P curvature as a (P, 1, 1) block."""
    return CurvatureBlock(m, identity(1), identity(1), MC2)

def _check_shape(t, b):
    t = as_tensor(t)
    if t.shape != tuple(b.shape):
        raise InvalidArgument(
            "tensor of shape %s does not match block %s" % (t.shape, tuple(b.shape))
        )
    return t

def mc_transform(g, b):
    """MC(G) = G x3 Mf x2 Mi x1 Mo."""
    g = _check_shape(g, b)
    if b.shape.d == 1:
        return (b.mf[0, 0] * np.dot(np.dot(b.mo, g[:, :, 0]), b.mi.T))[:, :, None]
    return multi_mode_product(g, collections.OrderedDict(
        ((3, b.mf), (2, b.mi), (1, b.mo))
    ))

def mc_adjoint(u, b):
    """Transpose of mc_transform(): u x3 Mf^T x2 Mi^T x1 Mo^T."""
    u = _check_shape(u, b)
    if b.shape.d == 1:
        return (b.mf[0, 0] * np.dot(np.dot(b.mo.T, u[:, :, 0]), b.mi))[:, :, None]
    return multi_mode_product(u, collections.OrderedDict(
        ((3, b.mf), (2, b.mi), (1, b.mo))
    ), transpose=True)

def mc_expand(b, cap=EXPAND_CAP):
    """Dense Mo (x) Mi (x) Mf acting on vectorize(G)."""
    size = b.shape.cout * b.shape.cin * b.shape.d
    if size > cap:
        raise SizeLimitExceeded(
            "expanded meta-curvature would be %dx%d (cap %d)" % (size, size, cap)
        )
    return kron(b.mo, kron(b.mi, b.mf))

def _matrix_param_grads(g, u, b):
    # d == 1: MC(G) = mf Mo G Mi^T with plain matrices.
    mf = b.mf[0, 0]
    d_mf = np.array([[np.sum(np.dot(np.dot(b.mo, g), b.mi.T) * u)]])
    d_mi = mf * np.dot(np.dot(u.T, b.mo), g)
    if b.variant == MC1:
        d_mo = np.zeros_like(b.mo)
    else:
        d_mo = mf * np.dot(np.dot(u, b.mi), g.T)
    return d_mo, d_mi, d_mf

def mc_param_grads(g, u, b):
    """Gradients of <MC(g), u> with respect to Mo, Mi and Mf.

    Each factor sees the upstream tensor pulled back through the other two
    factors, unfolded along its own mode, times the unfolded input. MC1
    reports a zero Mo gradient so every variant has the same layout.
    """
    g = _check_shape(g, b)
    u = _check_shape(u, b)
    if b.shape.d == 1:
        return _matrix_param_grads(g[:, :, 0], u[:, :, 0], b)
    back = lambda modes: multi_mode_product(u, collections.OrderedDict(
        (n, m) for n, m in ((1, b.mo), (2, b.mi), (3, b.mf)) if n in modes
    ), transpose=True)

    d_mf = np.dot(unfold(back((1, 2)), 3), unfold(g, 3).T)
    d_mi = np.dot(unfold(back((1, 3)), 2), unfold(g, 2).T)
    if b.variant == MC1:
        d_mo = np.zeros_like(b.mo)
    else:
        d_mo = np.dot(unfold(back((2, 3)), 1), unfold(g, 1).T)
    return d_mo, d_mi, d_mf
