# Copyright (C) 2026 MetaCurv developers.
# This file is part of MetaCurv.
# See the file 'LICENSE' for copying permission.

import numpy as np

from metacurv.exceptions import InvalidArgument, NumericFailure

class AdamState(object):
    """First/second moment estimates for one group of parameter arrays."""

    def __init__(self, m, v, t=0, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = [np.asarray(x, dtype=np.float64) for x in m]
        self.v = [np.asarray(x, dtype=np.float64) for x in v]
        self.t = int(t)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    @classmethod
    def zeros_like(cls, params, **kwargs):
        return cls(
            [np.zeros_like(p, dtype=np.float64) for p in params],
            [np.zeros_like(p, dtype=np.float64) for p in params],
            **kwargs
        )

    def to_dict(self):
        return {
            "m": [x.tolist() for x in self.m],
            "v": [x.tolist() for x in self.v],
            "shapes": [list(x.shape) for x in self.m],
            "t": self.t,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
        }

    @classmethod
    def from_dict(cls, d):
        shapes = [tuple(s) for s in d["shapes"]]
        return cls(
            [np.reshape(np.array(x, dtype=np.float64), s) for x, s in zip(d["m"], shapes)],
            [np.reshape(np.array(x, dtype=np.float64), s) for x, s in zip(d["v"], shapes)],
            d["t"], d["beta1"], d["beta2"], d["eps"],
        )

    def __repr__(self):
        return "<AdamState t=%d arrays=%d>" % (self.t, len(self.m))

def adam_step(state, params, grads, lr, iteration=None):
    """One bias-corrected ADAM update. Returns new parameters and a new
    state; neither input is modified."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise InvalidArgument(
            "ADAM group sizes differ: %d params, %d grads, %d moments" %
            (len(params), len(grads), len(state.m))
        )

    for p, g in zip(params, grads):
        if np.shape(p) != np.shape(g):
            raise InvalidArgument("gradient shape %s for parameter %s" % (np.shape(g), np.shape(p)))
        if not np.all(np.isfinite(g)):
            raise NumericFailure("non-finite meta-gradient", iteration)

    t = state.t + 1
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t

    new_params, m, v = [], [], []
    for p, g, m0, v0 in zip(params, grads, state.m, state.v):
        m1 = state.beta1 * m0 + (1.0 - state.beta1) * g
        v1 = state.beta2 * v0 + (1.0 - state.beta2) * (g * g)
        new_params.append(p - (lr / bc1) * m1 / (np.sqrt(v1 / bc2) + state.eps))
        m.append(m1)
        v.append(v1)

    return new_params, AdamState(m, v, t, state.beta1, state.beta2, state.eps)
