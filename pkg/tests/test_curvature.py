# Copyright (C) 2026 MetaCurv developers.
# This file is part of MetaCurv.
# See the file 'LICENSE' for copying permission.

import collections
import numpy as np
import pytest

from metacurv.curvature import (
    MC1, MC2, CurvatureBlock, LayerShape, apply_block_grads,
    full_matrix_block, layer_shape, mc_adjoint, mc_expand, mc_init, mc_param_grads, mc_transform,
)
from metacurv.diag import central_difference, random_block
from metacurv.exceptions import InvalidArgument, SizeLimitExceeded
from metacurv.tensor import (
    identity, inner, kron, multi_mode_product, rel_error, unfold, vectorize,
)

def rng(seed=0):
    return np.random.default_rng(seed)

def test_layer_shape():
    assert layer_shape((40,)) == LayerShape(40, 1, 1)
    assert layer_shape((40, 1)) == (40, 1, 1)
    assert layer_shape((40, 40, 1)) == (40, 40, 1)
    assert layer_shape((64, 3, 3, 3)) == (64, 3, 9)
    with pytest.raises(InvalidArgument):
        layer_shape((1, 1, 1, 1, 1))

def test_mc_init_conv_shape():
    b = mc_init((64, 3, 9), MC2)
    assert np.array_equal(b.mo, identity(64))
    assert np.array_equal(b.mi, identity(3))
    assert np.array_equal(b.mf, identity(9))
    assert b.shape == (64, 3, 9)

def test_mc_init_bias_shape():
    b = mc_init((40, 1, 1))
    assert np.array_equal(b.mo, identity(40))
    assert b.mi.shape == b.mf.shape == (1, 1)

def test_mc_init_invalid():
    with pytest.raises(InvalidArgument):
        mc_init((0, 1, 1))

def test_identity_transform():
    g = rng().standard_normal((2, 3, 4))
    b = mc_init(g.shape)
    assert np.array_equal(mc_transform(g, b), g)
    assert np.array_equal(mc_adjoint(g, b), g)

def test_transform_matches_expansion():
    r = rng(1)
    g = r.standard_normal((2, 3, 4))
    b = random_block(r, g.shape, spread=1.0)
    expected = np.dot(kron(b.mo, kron(b.mi, b.mf)), vectorize(g))
    assert rel_error(vectorize(mc_transform(g, b)), expected) <= 1e-12
    assert rel_error(np.dot(mc_expand(b), vectorize(g)), expected) <= 1e-12

def test_transform_shape_mismatch():
    with pytest.raises(InvalidArgument):
        mc_transform(np.zeros((2, 3, 1)), mc_init((2, 3, 4)))

def test_linearity():
    r = rng(2)
    g1, g2 = r.standard_normal((2, 3, 4)), r.standard_normal((2, 3, 4))
    b = random_block(r, g1.shape, spread=1.0)
    lhs = mc_transform(2.5 * g1 + g2, b)
    rhs = 2.5 * mc_transform(g1, b) + mc_transform(g2, b)
    assert rel_error(lhs, rhs) <= 1e-12

def test_adjoint_identity():
    r = rng(3)
    for shape in ((2, 3, 4), (5, 4, 1), (3, 1, 1)):
        g, u = r.standard_normal(shape), r.standard_normal(shape)
        b = random_block(r, shape, spread=1.0)
        lhs = inner(mc_transform(g, b), u)
        rhs = inner(g, mc_adjoint(u, b))
        assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), 1.0)

def test_symmetric_self_adjoint():
    r = rng(4)
    sym = lambda n: (lambda a: a + a.T)(r.standard_normal((n, n)))
    b = CurvatureBlock(sym(2), sym(3), sym(4))
    g = r.standard_normal((2, 3, 4))
    assert rel_error(mc_adjoint(g, b), mc_transform(g, b)) <= 1e-12

def test_expand_identity():
    assert np.array_equal(mc_expand(mc_init((2, 3, 4))), identity(24))

def test_expand_block_diagonal():
    mf = rng(5).standard_normal((4, 4))
    b = CurvatureBlock(identity(2), identity(3), mf)
    expanded = mc_expand(b)
    for k in range(6):
        assert np.array_equal(expanded[4 * k:4 * k + 4, 4 * k:4 * k + 4], mf)
    off = expanded.copy()
    for k in range(6):
        off[4 * k:4 * k + 4, 4 * k:4 * k + 4] = 0.0
    assert not off.any()

def test_expand_cap():
    b = mc_init((40, 40, 3))
    with pytest.raises(SizeLimitExceeded):
        mc_expand(b)
    assert mc_expand(mc_init((2, 2, 2)), cap=8).shape == (8, 8)
    with pytest.raises(SizeLimitExceeded):
        mc_expand(mc_init((2, 2, 2)), cap=7)

def test_param_grads_zero_upstream():
    r = rng(6)
    g = r.standard_normal((2, 3, 4))
    b = random_block(r, g.shape)
    for d in mc_param_grads(g, np.zeros_like(g), b):
        assert not d.any()

def test_param_grads_identity_block():
    r = rng(7)
    g, u = r.standard_normal((2, 3, 4)), r.standard_normal((2, 3, 4))
    _, _, d_mf = mc_param_grads(g, u, mc_init(g.shape))
    assert rel_error(d_mf, np.dot(unfold(u, 3), unfold(g, 3).T)) <= 1e-12

def test_param_grads_scalar():
    b = mc_init((1, 1, 1))
    d_mo, d_mi, d_mf = mc_param_grads(np.full((1, 1, 1), 3.0), np.full((1, 1, 1), -0.5), b)
    assert d_mo[0, 0] == d_mi[0, 0] == d_mf[0, 0] == -1.5

@pytest.mark.parametrize("shape", [(2, 3, 4), (5, 4, 1)])
def test_param_grads_finite_differences(shape):
    r = rng(8)
    g, u = r.standard_normal(shape), r.standard_normal(shape)
    b = random_block(r, shape)
    analytic = mc_param_grads(g, u, b)

    for k, name in enumerate(("mo", "mi", "mf")):
        base = getattr(b, name)
        f = lambda entries: inner(mc_transform(g, b.replace(**{name: entries.reshape(base.shape)})), u)
        fd = central_difference(f, base.ravel(), 1e-5)
        assert rel_error(analytic[k].ravel(), fd) <= 1e-6

class TestMC1(object):
    def test_mo_must_be_identity(self):
        with pytest.raises(InvalidArgument):
            CurvatureBlock(2 * identity(2), identity(1), identity(1), MC1)

    def test_replace_keeps_mo(self):
        b = mc_init((3, 2, 1), MC1)
        for _ in range(3):
            b = b.replace(mo=np.ones((3, 3)), mi=b.mi + 0.1)
        assert np.array_equal(b.mo, identity(3))
        assert b.mi[0, 0] == pytest.approx(1.3)

    def test_zero_mo_gradient(self):
        r = rng(9)
        g, u = r.standard_normal((3, 2, 2)), r.standard_normal((3, 2, 2))
        d_mo, d_mi, _ = mc_param_grads(g, u, random_block(r, g.shape, MC1))
        assert d_mo.shape == (3, 3) and not d_mo.any()
        assert d_mi.any()

class TestCurvatureBlock(object):
    def test_square(self):
        with pytest.raises(InvalidArgument):
            CurvatureBlock(np.ones((2, 3)), identity(1), identity(1))

    def test_variant(self):
        with pytest.raises(InvalidArgument):
            CurvatureBlock(identity(1), identity(1), identity(1), "MC3")

    def test_immutable(self):
        mi = identity(2)
        b = CurvatureBlock(identity(1), mi, identity(1))
        mi[0, 0] = 5.0
        assert b.mi[0, 0] == 1.0
        with pytest.raises(ValueError):
            b.mi[0, 0] = 2.0

    def test_equality(self):
        assert mc_init((2, 2, 1)) == mc_init((2, 2, 1))
        assert mc_init((2, 2, 1)) != mc_init((2, 2, 1), MC1)

    def test_full_matrix_block(self):
        m = rng(10).standard_normal((5, 5))
        b = full_matrix_block(m)
        assert b.shape == (5, 1, 1)
        g = rng(11).standard_normal((5, 1, 1))
        assert rel_error(mc_transform(g, b).ravel(), np.dot(m, g.ravel())) <= 1e-12

class TestApplyBlockGrads(object):
    def test_step(self):
        r = rng(12)
        b = random_block(r, (3, 2, 2), MC2)
        d_mo, d_mi, d_mf = mc_param_grads(r.standard_normal((3, 2, 2)), r.standard_normal((3, 2, 2)), b)
        after = apply_block_grads(b, d_mo, d_mi, d_mf, lr=0.5)
        assert np.array_equal(after.mo, b.mo - 0.5 * d_mo)
        assert np.array_equal(after.mi, b.mi - 0.5 * d_mi)
        assert np.array_equal(after.mf, b.mf - 0.5 * d_mf)

    def test_none_leaves_factor(self):
        b = mc_init((2, 3, 1))
        after = apply_block_grads(b, d_mi=np.ones((3, 3)), lr=0.1)
        assert np.array_equal(after.mo, b.mo) and np.array_equal(after.mf, b.mf)
        assert after.mi[0, 1] == pytest.approx(-0.1)

    def test_mc1_mo_fixed(self):
        b = mc_init((3, 2, 1), MC1)
        after = apply_block_grads(b, np.ones((3, 3)), np.ones((2, 2)), None, lr=1.0)
        assert np.array_equal(after.mo, identity(3))
        assert after.variant == MC1

@pytest.mark.parametrize("variant", [MC1, MC2])
@pytest.mark.parametrize("shape", [(4, 3, 1), (5, 1, 1), (1, 1, 1)])
def test_matrix_layers_match_mode_products(variant, shape):
    r = rng(13)
    b = random_block(r, shape, variant)
    g, u = r.standard_normal(shape), r.standard_normal(shape)
    products = collections.OrderedDict(((3, b.mf), (2, b.mi), (1, b.mo)))
    assert rel_error(mc_transform(g, b), multi_mode_product(g, products)) <= 1e-12
    assert rel_error(mc_adjoint(u, b), multi_mode_product(u, products, transpose=True)) <= 1e-12

    back = lambda modes: multi_mode_product(u, collections.OrderedDict(
        (n, m) for n, m in ((1, b.mo), (2, b.mi), (3, b.mf)) if n in modes
    ), transpose=True)
    d_mo, d_mi, d_mf = mc_param_grads(g, u, b)
    assert rel_error(d_mf, np.dot(unfold(back((1, 2)), 3), unfold(g, 3).T)) <= 1e-12
    assert rel_error(d_mi, np.dot(unfold(back((1, 3)), 2), unfold(g, 2).T)) <= 1e-12
    if variant == MC2:
        assert rel_error(d_mo, np.dot(unfold(back((2, 3)), 1), unfold(g, 1).T)) <= 1e-12
