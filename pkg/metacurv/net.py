# Copyright (C) 2026 MetaCurv developers.
# This file is part of MetaCurv.
# See the file 'LICENSE' for copying permission.

"""The sinusoid regression network: a ReLU MLP with exact gradients.

Parameters are kept as a list of order-3 tensors, weights (Cout, Cin, 1)
followed by their bias (Cout, 1, 1), layer after layer. The flat ParamVector
concatenates vectorize() of every tensor in that same order; checkpoints
depend on this layout.
"""

import numpy as np

from metacurv.exceptions import InvalidArgument, NumericFailure
from metacurv.tensor import devectorize, vectorize

DEFAULT_SIZES = (1, 40, 40, 1)

# Central-difference step used by hvp() after scaling v to unit max-norm.
HVP_STEP = 1e-4

class MLP(object):
    """Fully connected network with ReLU after every layer but the last."""

    def __init__(self, params):
        params = [np.asarray(p, dtype=np.float64) for p in params]
        if not params or len(params) % 2:
            raise InvalidArgument("expected (weight, bias) pairs, got %d tensors" % len(params))

        for k in range(0, len(params), 2):
            w, b = params[k], params[k + 1]
            if w.ndim != 3 or w.shape[2] != 1:
                raise InvalidArgument("layer %d weight must be (Cout, Cin, 1), got %s" % (k // 2 + 1, w.shape))
            if b.shape != (w.shape[0], 1, 1):
                raise InvalidArgument("layer %d bias must be (%d, 1, 1), got %s" % (k // 2 + 1, w.shape[0], b.shape))
            if k and w.shape[1] != params[k - 2].shape[0]:
                raise InvalidArgument("layer %d does not chain onto layer %d" % (k // 2 + 1, k // 2))

        self.params = params

    @property
    def layers(self):
        return list(zip(self.params[0::2], self.params[1::2]))

    @property
    def sizes(self):
        return (self.params[0].shape[1],) + tuple(w.shape[0] for w, _ in self.layers)

    @property
    def shapes(self):
        return [p.shape for p in self.params]

    @property
    def names(self):
        return param_names(len(self.layers))

    def num_params(self):
        return sum(p.size for p in self.params)

    def with_params(self, params):
        """Same architecture, new values. Only the shapes are checked."""
        params = [np.asarray(p, dtype=np.float64) for p in params]
        if [p.shape for p in params] != self.shapes:
            return MLP(params)
        net = MLP.__new__(MLP)
        net.params = params
        return net

    def __repr__(self):
        return "<MLP %s>" % "-".join(str(x) for x in self.sizes)

def param_names(num_layers):
    names = []
    for k in range(1, num_layers + 1):
        names += ["layer%d_weight" % k, "layer%d_bias" % k]
    return names

def flatten(params):
    return np.concatenate([vectorize(p) for p in params])

def unflatten(vec, shapes):
    vec = np.asarray(vec, dtype=np.float64)
    total = sum(int(np.prod(s)) for s in shapes)
    if vec.ndim != 1 or vec.size != total:
        raise InvalidArgument("parameter vector of length %d, expected %d" % (vec.size, total))

    params, offset = [], 0
    for shape in shapes:
        n = int(np.prod(shape))
        params.append(devectorize(vec[offset:offset + n], shape))
        offset += n
    return params

def _activations(net, xs):
    """Forward pass keeping every layer input and pre-activation."""
    h = np.reshape(xs, (-1, 1))
    inputs, pre = [], []
    last = len(net.layers) - 1
    for k, (w, b) in enumerate(net.layers):
        inputs.append(h)
        z = np.dot(h, w[:, :, 0].T) + b[:, 0, 0]
        pre.append(z)
        h = z if k == last else np.maximum(z, 0.0)
    return h[:, 0], inputs, pre

def forward(net, x):
    """Evaluate the network on a scalar or an array of scalar inputs."""
    xs = np.asarray(x, dtype=np.float64)
    out, _, _ = _activations(net, xs)
    return float(out[0]) if xs.ndim == 0 else np.reshape(out, xs.shape)

def _check_data(xs, ys):
    xs = np.asarray(xs, dtype=np.float64).ravel()
    ys = np.asarray(ys, dtype=np.float64).ravel()
    if xs.size != ys.size or not xs.size:
        raise InvalidArgument("need matching, non-empty inputs (%d vs %d)" % (xs.size, ys.size))
    return xs, ys

def mse_loss(net, xs, ys):
    xs, ys = _check_data(xs, ys)
    out, _, _ = _activations(net, xs)
    return float(np.mean((out - ys) ** 2))

def loss_grad(net, xs, ys):
    """Reverse-mode gradient of mse_loss(), shaped like net.params. The ReLU
    derivative at exactly zero is taken as zero."""
    return loss_and_grad(net, xs, ys)[1]

def loss_and_grad(net, xs, ys):
    """mse_loss() and loss_grad() from a single forward pass."""
    xs, ys = _check_data(xs, ys)
    out, inputs, pre = _activations(net, xs)
    loss = float(np.mean((out - ys) ** 2))

    delta = np.reshape(2.0 * (out - ys) / xs.size, (-1, 1))
    grads = [None] * len(net.params)
    for k in reversed(range(len(net.layers))):
        w = net.params[2 * k]
        grads[2 * k] = np.dot(delta.T, inputs[k])[:, :, None]
        grads[2 * k + 1] = np.sum(delta, axis=0)[:, None, None]
        if k:
            delta = np.dot(delta, w[:, :, 0]) * (pre[k - 1] > 0.0)
    return loss, grads

def hvp(net, xs, ys, v, h=HVP_STEP):
    """Hessian-vector product of mse_loss() by central differences of the
    exact gradient. `v` is scaled to unit max-norm before stepping."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size != net.num_params():
        raise InvalidArgument("direction of length %d, expected %d" % (v.size, net.num_params()))
    if h <= 0:
        raise InvalidArgument("step must be positive, got %r" % h)

    scale = np.max(np.abs(v))
    if scale == 0.0:
        return np.zeros_like(v)

    theta = flatten(net.params)
    step = h * (v / scale)
    plus = net.with_params(unflatten(theta + step, net.shapes))
    minus = net.with_params(unflatten(theta - step, net.shapes))

    hv = (flatten(loss_grad(plus, xs, ys)) - flatten(loss_grad(minus, xs, ys))) / (2.0 * h)
    hv *= scale
    if not np.all(np.isfinite(hv)):
        raise NumericFailure("non-finite Hessian-vector product")
    return hv

def init_weights(seed, sizes=DEFAULT_SIZES):
    """Glorot-uniform weights, zero biases."""
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) < 2 or min(sizes) < 1:
        raise InvalidArgument("invalid layer sizes %s" % (sizes,))

    rng = np.random.default_rng(seed)
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        params.append(rng.uniform(-bound, bound, size=(fan_out, fan_in, 1)))
        params.append(np.zeros((fan_out, 1, 1)))
    return MLP(params)
