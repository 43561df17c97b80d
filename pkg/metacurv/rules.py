# Copyright (C) 2026 MetaCurv developers.
# This file is part of MetaCurv.
# See the file 'LICENSE' for copying permission.

"""Inner-loop update rules and the meta-gradients flowing through them.

Every rule is a linear preconditioner P applied to the training gradient,
theta' = theta - P g. That makes one-step meta-gradients exact: the
validation gradient u at theta' is pulled back through P (for the rule's own
parameters) and through I - P H_train (for theta).
"""

import numpy as np

from metacurv.curvature import (
    MC1, MC2, layer_shape, mc_adjoint, mc_init, mc_param_grads, mc_transform,
    CurvatureBlock,
)
from metacurv.exceptions import InvalidArgument, UnsupportedMode
from metacurv.net import flatten, hvp, loss_and_grad, loss_grad, unflatten
from metacurv.tensor import inner

EXACT = "exact"
FIRST_ORDER = "first_order"
MODES = EXACT, FIRST_ORDER

class InnerRule(object):
    """Base class for inner update rules. Subclasses implement init() and the
    preconditioner; the parameter shapes of the network are always known."""

    kind = None
    trainable = ()

    def __init__(self, shapes, *args, **kwargs):
        self.shapes = [tuple(s) for s in shapes]
        self.init(*args, **kwargs)

    def init(self, *args, **kwargs):
        pass

    def check(self, tensors):
        if len(tensors) != len(self.shapes):
            raise InvalidArgument("expected %d tensors, got %d" % (len(self.shapes), len(tensors)))
        for t, shape in zip(tensors, self.shapes):
            if np.shape(t) != shape:
                raise InvalidArgument("tensor of shape %s where %s was expected" % (np.shape(t), shape))

    def direction(self, g, step=0):
        """P g, the amount subtracted from the parameters."""
        raise NotImplementedError

    def adjoint(self, u, step=0):
        """P^T u."""
        raise NotImplementedError

    def rule_grads(self, u, g, step=0):
        """Gradient of a loss with sensitivity u at theta' = theta - P g with
        respect to every parameter group of the rule."""
        raise NotImplementedError

    def groups(self):
        return {}

    def with_groups(self, groups):
        raise NotImplementedError

    def negative_rates(self):
        return 0

    def to_dict(self):
        return {
            "kind": self.kind,
            "shapes": [list(s) for s in self.shapes],
            "groups": dict(
                (name, [a.tolist() for a in arrays])
                for name, arrays in self.groups().items()
            ),
        }

    def __repr__(self):
        return "<%s %d tensors>" % (self.__class__.__name__, len(self.shapes))

class FixedLR(InnerRule):
    """theta - alpha g, alpha fixed."""

    kind = "fixed_lr"

    def init(self, alpha):
        self.alpha = float(alpha)

    def direction(self, g, step=0):
        self.check(g)
        return [self.alpha * x for x in g]

    def adjoint(self, u, step=0):
        self.check(u)
        return [self.alpha * x for x in u]

    def rule_grads(self, u, g, step=0):
        self.check(u)
        self.check(g)
        return {"alpha": [np.array(-sum(inner(a, b) for a, b in zip(u, g)))]}

    def groups(self):
        return {"alpha": [np.array(self.alpha)]}

    def with_groups(self, groups):
        return FixedLR(self.shapes, float(groups["alpha"][0]))

    def to_dict(self):
        d = InnerRule.to_dict(self)
        d["alpha"] = self.alpha
        return d

class PerCoordinate(InnerRule):
    """Meta-SGD: theta - alpha o g with one learning rate per parameter."""

    kind = "per_coordinate"
    trainable = ("alpha",)

    def init(self, alpha):
        alpha = [np.asarray(a, dtype=np.float64) for a in alpha]
        self.check(alpha)
        self.alpha = alpha

    @classmethod
    def uniform(cls, shapes, alpha):
        return cls(shapes, [np.full(s, float(alpha)) for s in shapes])

    def direction(self, g, step=0):
        self.check(g)
        return [a * x for a, x in zip(self.alpha, g)]

    adjoint = direction

    def rule_grads(self, u, g, step=0):
        self.check(u)
        self.check(g)
        return {"alpha": [-a * b for a, b in zip(u, g)]}

    def groups(self):
        return {"alpha": list(self.alpha)}

    def with_groups(self, groups):
        return PerCoordinate(self.shapes, groups["alpha"])

    def negative_rates(self):
        return int(sum(np.count_nonzero(a < 0) for a in self.alpha))

class PerLayer(InnerRule):
    """One learning rate per layer, shared by its weight and bias."""

    kind = "per_layer"
    trainable = ("alpha",)

    def init(self, alpha):
        alpha = np.asarray(alpha, dtype=np.float64).ravel()
        if 2 * alpha.size != len(self.shapes):
            raise InvalidArgument("%d layer rates for %d tensors" % (alpha.size, len(self.shapes)))
        self.alpha = alpha

    @classmethod
    def uniform(cls, shapes, alpha):
        return cls(shapes, np.full(len(shapes) // 2, float(alpha)))

    def direction(self, g, step=0):
        self.check(g)
        return [self.alpha[k // 2] * x for k, x in enumerate(g)]

    adjoint = direction

    def rule_grads(self, u, g, step=0):
        self.check(u)
        self.check(g)
        d = np.zeros_like(self.alpha)
        for k, (a, b) in enumerate(zip(u, g)):
            d[k // 2] -= inner(a, b)
        return {"alpha": [d]}

    def groups(self):
        return {"alpha": [self.alpha]}

    def with_groups(self, groups):
        return PerLayer(self.shapes, groups["alpha"][0])

    def negative_rates(self):
        return int(np.count_nonzero(self.alpha < 0))

class MetaCurv(InnerRule):
    """theta - alpha MC(g), one curvature block per parameter tensor.

    `blocks` holds one list of blocks per inner step when the steps use
    separate curvature, otherwise a single list shared by every step.
    alpha itself stays fixed.
    """

    kind = "meta_curvature"

    def init(self, blocks, alpha, variant=MC2):
        if not blocks:
            raise InvalidArgument("meta-curvature needs at least one set of blocks")
        for step_blocks in blocks:
            if len(step_blocks) != len(self.shapes):
                raise InvalidArgument("%d blocks for %d tensors" % (len(step_blocks), len(self.shapes)))
            for b, shape in zip(step_blocks, self.shapes):
                if tuple(b.shape) != tuple(layer_shape(shape)):
                    raise InvalidArgument("block %r does not fit parameter %s" % (b, shape))
                if b.variant != variant:
                    raise InvalidArgument("block %r is not %s" % (b, variant))

        self.blocks = [list(step_blocks) for step_blocks in blocks]
        self.alpha = float(alpha)
        self.variant = variant
        self.trainable = ("mi", "mf") if variant == MC1 else ("mo", "mi", "mf")

    @classmethod
    def identity(cls, shapes, alpha, variant=MC2, steps=1):
        blocks = [
            [mc_init(layer_shape(s), variant) for s in shapes]
            for _ in range(steps)
        ]
        return cls(shapes, blocks, alpha, variant)

    def step_blocks(self, step):
        return self.blocks[min(step, len(self.blocks) - 1)]

    def direction(self, g, step=0):
        self.check(g)
        return [
            self.alpha * np.reshape(mc_transform(np.reshape(x, b.shape), b), x.shape)
            for x, b in zip(g, self.step_blocks(step))
        ]

    def adjoint(self, u, step=0):
        self.check(u)
        return [
            self.alpha * np.reshape(mc_adjoint(np.reshape(x, b.shape), b), x.shape)
            for x, b in zip(u, self.step_blocks(step))
        ]

    def rule_grads(self, u, g, step=0):
        self.check(u)
        self.check(g)
        index = min(step, len(self.blocks) - 1)

        grads = dict((name, []) for name in ("mo", "mi", "mf"))
        for s, step_blocks in enumerate(self.blocks):
            for a, b, block in zip(u, g, step_blocks):
                if s == index:
                    d_mo, d_mi, d_mf = mc_param_grads(
                        np.reshape(b, block.shape),
                        -self.alpha * np.reshape(a, block.shape),
                        block,
                    )
                else:
                    d_mo, d_mi, d_mf = (
                        np.zeros_like(block.mo), np.zeros_like(block.mi),
                        np.zeros_like(block.mf),
                    )
                grads["mo"].append(d_mo)
                grads["mi"].append(d_mi)
                grads["mf"].append(d_mf)
        return grads

    def groups(self):
        blocks = [b for step_blocks in self.blocks for b in step_blocks]
        return {
            "mo": [b.mo for b in blocks],
            "mi": [b.mi for b in blocks],
            "mf": [b.mf for b in blocks],
        }

    def with_groups(self, groups):
        blocks, n = [], len(self.shapes)
        for s, step_blocks in enumerate(self.blocks):
            blocks.append([
                b.replace(**dict(
                    (name, groups[name][s * n + k])
                    for name in ("mo", "mi", "mf") if name in groups
                ))
                for k, b in enumerate(step_blocks)
            ])
        return MetaCurv(self.shapes, blocks, self.alpha, self.variant)

    def to_dict(self):
        d = InnerRule.to_dict(self)
        d["alpha"] = self.alpha
        d["variant"] = self.variant
        d["steps"] = len(self.blocks)
        return d

def rule_from_dict(d):
    shapes = [tuple(s) for s in d["shapes"]]
    arrays = lambda name: [np.array(x, dtype=np.float64) for x in d["groups"][name]]

    if d["kind"] == FixedLR.kind:
        return FixedLR(shapes, d["alpha"])
    if d["kind"] == PerCoordinate.kind:
        return PerCoordinate(shapes, arrays("alpha"))
    if d["kind"] == PerLayer.kind:
        return PerLayer(shapes, arrays("alpha")[0])
    if d["kind"] == MetaCurv.kind:
        mo, mi, mf = arrays("mo"), arrays("mi"), arrays("mf")
        n = len(shapes)
        blocks = [
            [
                CurvatureBlock(mo[s * n + k], mi[s * n + k], mf[s * n + k], d["variant"])
                for k in range(n)
            ]
            for s in range(d["steps"])
        ]
        return MetaCurv(shapes, blocks, d["alpha"], d["variant"])
    raise InvalidArgument("unknown inner rule kind %r" % d["kind"])

def maml_rule(shapes, alpha, steps=1, separate=False):
    return FixedLR(shapes, alpha)

def metasgd_rule(shapes, alpha, steps=1, separate=False):
    return PerCoordinate.uniform(shapes, alpha)

def layerlr_rule(shapes, alpha, steps=1, separate=False):
    return PerLayer.uniform(shapes, alpha)

def mc1_rule(shapes, alpha, steps=1, separate=False):
    return MetaCurv.identity(shapes, alpha, MC1, steps if separate else 1)

def mc2_rule(shapes, alpha, steps=1, separate=False):
    return MetaCurv.identity(shapes, alpha, MC2, steps if separate else 1)

rules = {
    "MAML": maml_rule,
    "MetaSGD": metasgd_rule,
    "LayerLR": layerlr_rule,
    "MC1": mc1_rule,
    "MC2": mc2_rule,
}

def make_rule(method, net, alpha, steps=1, separate=False):
    if method not in rules:
        raise InvalidArgument("unknown method %r, expected one of %s" % (method, ", ".join(sorted(rules))))
    return rules[method](net.shapes, alpha, steps, separate)

def inner_update(params, grads, rule, step=0):
    """theta' = theta - P g."""
    rule.check(params)
    return [p - d for p, d in zip(params, rule.direction(grads, step))]

def adapt(net, episode, rule, steps=1):
    """Run the inner loop on the episode's training set. Returns the adapted
    network and the training gradient seen at every step."""
    grads = []
    for step in range(steps):
        g = loss_grad(net, episode.train_x, episode.train_y)
        grads.append(g)
        net = net.with_params(inner_update(net.params, g, rule, step))
    return net, grads

def task_meta_grads(net, episode, rule, mode=EXACT, steps=1):
    """Meta-gradients of one task with respect to theta and to the rule's
    parameter groups, plus the post-adaptation validation loss."""
    if mode not in MODES:
        raise InvalidArgument("unknown meta-gradient mode %r" % mode)
    if mode == EXACT and steps != 1:
        raise UnsupportedMode("exact meta-gradients need exactly one inner step, got %d" % steps)

    adapted, grads = adapt(net, episode, rule, steps)
    val_loss, u = loss_and_grad(adapted, episode.eval_x, episode.eval_y)

    if mode == EXACT:
        hv = hvp(net, episode.train_x, episode.train_y, flatten(rule.adjoint(u)))
        theta_grads = [a - b for a, b in zip(u, unflatten(hv, net.shapes))]
    else:
        theta_grads = u

    # With several steps every step's gradient is paired with the final
    # validation gradient (first order).
    rule_grads = None
    for step, g in enumerate(grads):
        step_grads = rule.rule_grads(u, g, step)
        if rule_grads is None:
            rule_grads = step_grads
        else:
            for name, arrays in step_grads.items():
                rule_grads[name] = [a + b for a, b in zip(rule_grads[name], arrays)]

    return theta_grads, rule_grads, val_loss

def meta_grad_theta(net, episode, rule, mode=EXACT, steps=1):
    return task_meta_grads(net, episode, rule, mode, steps)[0]

def meta_grad_rule(net, episode, rule, steps=1):
    return task_meta_grads(net, episode, rule, FIRST_ORDER, steps)[1]
