# Copyright (C) 2026 MetaCurv developers.
# This file is part of MetaCurv.
# See the file 'LICENSE' for copying permission.

"""What a learned full curvature matrix does to a new task's gradient.

With theta held fixed, plain SGD on an unfactored P x P matrix M only ever
adds outer products of validation and training gradients. Applied to a new
gradient, the accumulated matrix votes among the stored validation
gradients, weighted by how similar each training gradient is to the new one.
"""

import logging
import numpy as np

from metacurv.curvature import (
    apply_block_grads, full_matrix_block, mc_param_grads, mc_transform,
)
from metacurv.exceptions import InvalidArgument, SizeLimitExceeded
from metacurv.net import flatten, hvp, loss_grad, unflatten
from metacurv.tensor import rel_error

log = logging.getLogger(__name__)

# Largest network, in parameters, analysed with a dense P x P matrix.
PARAM_CAP = 200

def _check_size(net, m):
    p = net.num_params()
    if p > PARAM_CAP:
        raise SizeLimitExceeded("full-matrix analysis is capped at %d parameters, net has %d" % (PARAM_CAP, p))
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (p, p):
        raise InvalidArgument("curvature matrix of shape %s for %d parameters" % (m.shape, p))
    return m

def full_matrix_meta_grad(net, episode, m, alpha):
    """Gradient of L_val(theta - alpha M g_tr) with respect to M, through the
    (P, 1, 1) block view. Returns (dM, u, g) where u is the validation
    gradient after the update and g the training gradient."""
    m = _check_size(net, m)
    p = net.num_params()
    block = full_matrix_block(m)

    g = flatten(loss_grad(net, episode.train_x, episode.train_y))
    step = alpha * mc_transform(np.reshape(g, (p, 1, 1)), block).ravel()
    adapted = net.with_params(unflatten(flatten(net.params) - step, net.shapes))
    u = flatten(loss_grad(adapted, episode.eval_x, episode.eval_y))

    d_m, _, _ = mc_param_grads(
        np.reshape(g, (p, 1, 1)), np.reshape(-alpha * u, (p, 1, 1)), block
    )
    return d_m, u, g

def accumulate_full_matrix(net, episodes, m, alpha, beta):
    """One plain SGD step on M per task, theta fixed. Returns the final
    matrix and the (g_tr, u_val) pair recorded at every step."""
    block = full_matrix_block(_check_size(net, m))
    records = []
    for episode in episodes:
        d_m, u, g = full_matrix_meta_grad(net, episode, block.mo, alpha)
        block = apply_block_grads(block, d_mo=d_m, lr=beta)
        records.append((g, u))
    return np.array(block.mo), records

class SnnReport(object):
    """Outcome of snn_decompose()."""

    def __init__(self, m_t, lhs, rhs, weights, accumulation_error,
                 identity_error, taylor_residual, hessian_taylor_residual):
        self.m_t = m_t
        self.lhs = lhs
        self.rhs = rhs
        self.weights = weights
        self.accumulation_error = accumulation_error
        self.identity_error = identity_error
        self.taylor_residual = taylor_residual
        self.hessian_taylor_residual = hessian_taylor_residual

    def __repr__(self):
        return "<SnnReport tasks=%d identity=%.3g taylor=%.3g>" % (
            len(self.weights), self.identity_error, self.taylor_residual
        )

def snn_decompose(net, m, episodes, new_episode, alpha, beta):
    """Accumulate M over `episodes`, then split M_T g_new into M g_new plus
    a similarity-weighted sum of the stored validation gradients.

    The report also measures what swapping each stored validation gradient
    for its value at the unadapted theta costs (`taylor_residual`), and what
    is left once the Hessian term of that expansion is added back
    (`hessian_taylor_residual`).
    """
    m = _check_size(net, m)
    m_t, records = accumulate_full_matrix(net, episodes, m, alpha, beta)

    accumulated = m.copy()
    for g, u in records:
        accumulated += alpha * beta * np.outer(u, g)

    g_new = flatten(loss_grad(net, new_episode.train_x, new_episode.train_y))
    weights = [float(np.dot(g, g_new)) for g, _ in records]

    lhs = np.dot(m_t, g_new)
    rhs = np.dot(m, g_new)
    for w, (_, u) in zip(weights, records):
        rhs = rhs + beta * w * (alpha * u)

    taylor = np.zeros_like(g_new)
    hessian_taylor = np.zeros_like(g_new)
    current = m
    for w, episode, (g, u) in zip(weights, episodes, records):
        v = flatten(loss_grad(net, episode.eval_x, episode.eval_y))
        shift = -alpha * np.dot(current, g)
        hv = hvp(net, episode.eval_x, episode.eval_y, shift)
        taylor += beta * w * alpha * (u - v)
        hessian_taylor += beta * w * alpha * (u - v - hv)
        current = current + alpha * beta * np.outer(u, g)

    report = SnnReport(
        m_t, lhs, rhs, weights,
        rel_error(m_t, accumulated),
        rel_error(lhs, rhs),
        float(np.max(np.abs(taylor))),
        float(np.max(np.abs(hessian_taylor))),
    )
    log.debug("soft nearest-neighbour decomposition: %r", report)
    return report
