# Copyright (C) 2026 MetaCurv developers.
# This file is part of MetaCurv.
# See the file 'LICENSE' for copying permission.

"""Numerical property suites run by `metacurv diag`.

Each suite draws its random instances from a fixed seed and returns one
Check per property with the largest error it saw.
"""

import collections
import itertools
import logging

import numpy as np

from metacurv.analysis import accumulate_full_matrix, full_matrix_meta_grad, snn_decompose
from metacurv.curvature import (
    MC1, MC2, CurvatureBlock, layer_shape, mc_param_grads, mc_transform,
)
from metacurv.exceptions import InvalidArgument
from metacurv.net import (
    MLP, flatten, hvp, init_weights, loss_grad, mse_loss, unflatten,
)
from metacurv.rules import (
    EXACT, FixedLR, MetaCurv, PerCoordinate, PerLayer, adapt, meta_grad_theta,
)
from metacurv.sine import draw_episode
from metacurv.tensor import (
    devectorize, fold, hat_matrices, inner, kron, mode_product, rel_error,
    unfold, vectorize,
)

log = logging.getLogger(__name__)

TINY_SIZES = (1, 4, 4, 1)

class Check(object):
    def __init__(self, name, error, tol):
        self.name = name
        self.error = float(error)
        self.tol = tol

    @property
    def passed(self):
        return self.error <= self.tol

    def __repr__(self):
        return "<Check %s %.3g (tol %.1g) %s>" % (
            self.name, self.error, self.tol, "ok" if self.passed else "FAILED"
        )

def central_difference(f, x, step=1e-6):
    """Gradient of scalar f at x, each coordinate stepped by
    step * (1 + |x_i|)."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for i in range(x.size):
        h = step * (1.0 + abs(x.flat[i]))
        xp, xm = x.copy(), x.copy()
        xp.flat[i] += h
        xm.flat[i] -= h
        grad.flat[i] = (f(xp) - f(xm)) / (2.0 * h)
    return grad

def random_tensor(rng, shape):
    return rng.standard_normal(shape)

def random_block(rng, shape, variant=MC2, spread=0.3):
    cout, cin, d = shape
    mo = np.eye(cout) if variant == MC1 else np.eye(cout) + spread * rng.standard_normal((cout, cout))
    return CurvatureBlock(
        mo,
        np.eye(cin) + spread * rng.standard_normal((cin, cin)),
        np.eye(d) + spread * rng.standard_normal((d, d)),
        variant,
    )

def random_net(rng, sizes=TINY_SIZES):
    """Glorot weights with non-zero biases, so every tensor carries signal."""
    net = init_weights(int(rng.integers(2 ** 31)), sizes)
    params = [
        p if k % 2 == 0 else 0.1 * rng.standard_normal(p.shape)
        for k, p in enumerate(net.params)
    ]
    return MLP(params)

def random_rule(kind, net, rng, alpha=0.01):
    shapes = net.shapes
    if kind == "fixed_lr":
        return FixedLR(shapes, alpha)
    if kind == "per_coordinate":
        return PerCoordinate(shapes, [alpha * (1.0 + 0.5 * rng.random(s)) for s in shapes])
    if kind == "per_layer":
        return PerLayer(shapes, alpha * (1.0 + 0.5 * rng.random(len(shapes) // 2)))
    if kind in (MC1, MC2):
        blocks = [random_block(rng, layer_shape(s), kind) for s in shapes]
        return MetaCurv(shapes, [blocks], alpha, kind)
    raise InvalidArgument("unknown rule kind %r" % kind)

RULE_KINDS = ("fixed_lr", "per_coordinate", "per_layer", MC2)

def composite_loss(net, episode, rule):
    """theta -> L_val(theta - P grad L_tr(theta)) on the flat vector."""
    def f(theta):
        start = net.with_params(unflatten(theta, net.shapes))
        adapted, _ = adapt(start, episode, rule, 1)
        return mse_loss(adapted, episode.eval_x, episode.eval_y)
    return f

def _random_shape(rng, order=None, top=4):
    order = order or int(rng.integers(1, 5))
    return tuple(int(x) for x in rng.integers(1, top + 1, size=order))

def algebra_suite(instances=200, seed=0):
    rng = np.random.default_rng(seed)
    errors = collections.OrderedDict((name, 0.0) for name in (
        "round trip", "unfolding law", "mode commutativity",
        "kronecker equivalence", "expanded commutativity",
    ))

    for _ in range(instances):
        shape = _random_shape(rng)
        t = random_tensor(rng, shape)
        n = int(rng.integers(1, len(shape) + 1))
        m = rng.standard_normal((int(rng.integers(1, 5)), shape[n - 1]))

        same = np.array_equal(fold(unfold(t, n), n, shape), t) and \
            np.array_equal(devectorize(vectorize(t), shape), t)
        errors["round trip"] = max(errors["round trip"], 0.0 if same else 1.0)
        errors["unfolding law"] = max(
            errors["unfolding law"],
            rel_error(unfold(mode_product(t, m, n), n), np.dot(m, unfold(t, n))),
        )

        shape = _random_shape(rng, 3, 5)
        g = random_tensor(rng, shape)
        block = random_block(rng, shape, spread=1.0)
        factors = {1: block.mo, 2: block.mi, 3: block.mf}
        reference = mc_transform(g, block)
        for order in itertools.permutations((1, 2, 3)):
            out = g
            for k in order:
                out = mode_product(out, factors[k], k)
            errors["mode commutativity"] = max(errors["mode commutativity"], rel_error(out, reference))

        expanded = kron(block.mo, kron(block.mi, block.mf))
        vec = vectorize(g)
        errors["kronecker equivalence"] = max(
            errors["kronecker equivalence"],
            rel_error(vectorize(reference), np.dot(expanded, vec)),
        )

        hats = hat_matrices(block.mo, block.mi, block.mf)
        for order in itertools.permutations(range(3)):
            out = vec
            for k in reversed(order):
                out = np.dot(hats[k], out)
            errors["expanded commutativity"] = max(
                errors["expanded commutativity"], rel_error(out, vectorize(reference))
            )

    return [
        Check(name, error, 0.0 if name == "round trip" else 1e-12)
        for name, error in errors.items()
    ]

def gradients_suite(instances=20, seed=0):
    rng = np.random.default_rng(seed)
    checks = []

    error = 0.0
    for _ in range(instances):
        net = random_net(rng)
        episode = draw_episode(rng, 5, 10)
        f = lambda theta: mse_loss(net.with_params(unflatten(theta, net.shapes)), episode.train_x, episode.train_y)
        fd = central_difference(f, flatten(net.params))
        error = max(error, rel_error(flatten(loss_grad(net, episode.train_x, episode.train_y)), fd))
    checks.append(Check("loss_grad vs finite differences", error, 1e-6))

    error = 0.0
    for shape in ((2, 3, 4), (5, 4, 1)):
        for _ in range(max(1, instances // 4)):
            g, u = random_tensor(rng, shape), random_tensor(rng, shape)
            block = random_block(rng, shape)
            analytic = mc_param_grads(g, u, block)
            for k, name in enumerate(("mo", "mi", "mf")):
                base = getattr(block, name)

                def f(entries):
                    b = block.replace(**{name: np.reshape(entries, base.shape)})
                    return inner(mc_transform(g, b), u)

                fd = central_difference(f, base.ravel(), 1e-5)
                error = max(error, rel_error(analytic[k].ravel(), fd))
    checks.append(Check("mc_param_grads vs finite differences", error, 1e-6))

    for kind in RULE_KINDS:
        error = 0.0
        for _ in range(max(1, instances // 4)):
            net = random_net(rng)
            episode = draw_episode(rng, 5, 10)
            rule = random_rule(kind, net, rng)
            exact = flatten(meta_grad_theta(net, episode, rule, EXACT))
            fd = central_difference(composite_loss(net, episode, rule), flatten(net.params), 1e-5)
            error = max(error, rel_error(exact, fd))
        checks.append(Check("exact meta-gradient (%s)" % kind, error, 1e-4))

    error = 0.0
    for _ in range(instances):
        net = random_net(rng, (1, 1))
        episode = draw_episode(rng, 5, 10)
        x = episode.train_x
        features = np.stack([x, np.ones_like(x)], axis=1)
        hessian = 2.0 / x.size * np.dot(features.T, features)
        v = rng.standard_normal(2)
        error = max(error, rel_error(hvp(net, x, episode.train_y, v), np.dot(hessian, v)))
    checks.append(Check("hvp vs least-squares Hessian", error, 1e-8))
    return checks

def eq6_suite(instances=5, seed=0, alpha=0.01, beta=0.1):
    rng = np.random.default_rng(seed)
    outer_error, fd_error, accumulation_error = 0.0, 0.0, 0.0

    for _ in range(instances):
        net = random_net(rng, (1, 3, 3, 1))
        p = net.num_params()
        m = np.eye(p) + 0.1 * rng.standard_normal((p, p))
        episode = draw_episode(rng, 5, 10)

        d_m, u, g = full_matrix_meta_grad(net, episode, m, alpha)
        outer_error = max(outer_error, rel_error(d_m, -alpha * np.outer(u, g)))

        theta = flatten(net.params)

        def f(entries):
            step = alpha * np.dot(np.reshape(entries, (p, p)), g)
            adapted = net.with_params(unflatten(theta - step, net.shapes))
            return mse_loss(adapted, episode.eval_x, episode.eval_y)

        fd = central_difference(f, m.ravel(), 1e-5)
        fd_error = max(fd_error, rel_error(d_m.ravel(), fd))

        episodes = [draw_episode(rng, 5, 10) for _ in range(3)]
        m_t, records = accumulate_full_matrix(net, episodes, m, alpha, beta)
        expected = m + alpha * beta * sum(np.outer(u, g) for g, u in records)
        accumulation_error = max(accumulation_error, rel_error(m_t, expected))

    return [
        Check("full-matrix meta-gradient is -alpha u g^T", outer_error, 1e-12),
        Check("full-matrix meta-gradient vs finite differences", fd_error, 1e-6),
        Check("SGD accumulation on M", accumulation_error, 1e-12),
    ]

def eq8_suite(instances=20, seed=0, alpha=0.01, beta=0.1, decades=3):
    rng = np.random.default_rng(seed)
    identity_error, accumulation_error, violations = 0.0, 0.0, 0

    for _ in range(instances):
        net = random_net(rng, (1, 3, 3, 1))
        p = net.num_params()
        episodes = [draw_episode(rng, 5, 10) for _ in range(2)]
        new_episode = draw_episode(rng, 5, 10)

        report = snn_decompose(net, np.eye(p), episodes, new_episode, alpha, beta)
        identity_error = max(identity_error, report.identity_error)
        accumulation_error = max(accumulation_error, report.accumulation_error)

        residuals = [
            snn_decompose(net, np.eye(p), episodes, new_episode, alpha / 10 ** k, beta).taylor_residual
            for k in range(decades + 1)
        ]
        if not all(a > b for a, b in zip(residuals, residuals[1:])):
            log.debug("Taylor residuals not decreasing: %s", residuals)
            violations += 1

    return [
        Check("soft nearest-neighbour decomposition", identity_error, 1e-10),
        Check("SGD accumulation on M", accumulation_error, 1e-12),
        Check("Taylor residual shrinking with alpha (violations)", violations, 0),
    ]

suites = {
    "algebra": algebra_suite,
    "gradients": gradients_suite,
    "eq6": eq6_suite,
    "eq8": eq8_suite,
}
