# Copyright (C) 2026 MetaCurv developers.
# This file is part of MetaCurv.
# See the file 'LICENSE' for copying permission.

import concurrent.futures
import logging
import math
import os
import time

import numpy as np

from metacurv.adam import AdamState, adam_step
from metacurv.exceptions import (
    CheckpointError, ConfigError, InvalidArgument, NumericFailure,
)
from metacurv.net import MLP, init_weights, mse_loss, unflatten, flatten
from metacurv.rules import MODES, EXACT, adapt, make_rule, rule_from_dict, rules, task_meta_grads
from metacurv.sine import (
    STREAM_TEST, STREAM_TRAIN, STREAM_VAL, draw_episode, task_rng,
)

log = logging.getLogger(__name__)

CHECKPOINT_SCHEMA = "metacurv-checkpoint/1"

THREADS_ENV = "METACURV_THREADS"

METRICS_HEADER = (
    "iteration", "train_loss", "val_loss", "val_ci", "wall_ms", "method",
    "seed", "neg_lr",
)

def default_threads():
    value = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(value))
    except ValueError:
        raise ConfigError("%s must be an integer, got %r" % (THREADS_ENV, value))

class TrainConfig(object):
    """Meta-training settings. Defaults reproduce the sinusoid regression
    setup: one inner step at 0.01, ADAM at 0.001, 25 tasks per iteration,
    70000 iterations."""

    required = ("method",)

    defaults = {
        "k_shot": 5,
        "inner_lr": 0.01,
        "outer_lr": 0.001,
        "meta_batch": 25,
        "iterations": 70000,
        "inner_steps": 1,
        "meta_grad_mode": EXACT,
        "eval_every": 1000,
        "eval_tasks": 200,
        "seed": 0,
        # Validation points per training episode; None follows k_shot.
        "query_points": None,
        "val_points": 100,
        "test_tasks": 600,
        "test_points": 100,
        "separate_blocks": False,
        "sizes": [1, 40, 40, 1],
        "deterministic": True,
    }

    positive = (
        "k_shot", "meta_batch", "iterations", "inner_steps", "eval_every",
        "val_points", "test_points",
    )

    def __init__(self, **kwargs):
        for key in kwargs:
            if key not in self.defaults and key not in self.required:
                raise ConfigError("unknown configuration field %r" % key)
        for key in self.required:
            if kwargs.get(key) is None:
                raise ConfigError("missing required configuration field %r" % key)

        values = dict(self.defaults)
        values.update(kwargs)
        if not isinstance(values["method"], str):
            raise ConfigError("field 'method' must be a string, got %r" % (values["method"],))
        if not isinstance(values["sizes"], (list, tuple)):
            raise ConfigError("field 'sizes' must be a list of layer sizes, got %r" % (values["sizes"],))
        if values["query_points"] is None:
            values["query_points"] = values["k_shot"]
        values["sizes"] = list(values["sizes"])

        for key, value in values.items():
            setattr(self, key, value)
        self.validate()

    def validate(self):
        if self.method not in rules:
            raise ConfigError("field 'method' must be one of %s, got %r" % (", ".join(sorted(rules)), self.method))
        if not isinstance(self.meta_grad_mode, str) or self.meta_grad_mode not in MODES:
            raise ConfigError("field 'meta_grad_mode' must be one of %s, got %r" % (", ".join(MODES), self.meta_grad_mode))

        for key in self.positive + ("query_points",):
            value = getattr(self, key)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ConfigError("field %r must be a positive integer, got %r" % (key, value))
        for key in ("eval_tasks", "test_tasks"):
            value = getattr(self, key)
            if isinstance(value, bool) or not isinstance(value, int) or value < 2:
                raise ConfigError("field %r must be an integer >= 2, got %r" % (key, value))
        for key in ("inner_lr", "outer_lr"):
            value = getattr(self, key)
            if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
                raise ConfigError("field %r must be a finite number, got %r" % (key, value))
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("field 'seed' must be a non-negative integer, got %r" % self.seed)
        if len(self.sizes) < 2 or not all(isinstance(s, int) and s >= 1 for s in self.sizes):
            raise ConfigError("field 'sizes' must list at least two positive integers, got %r" % self.sizes)
        for key in ("separate_blocks", "deterministic"):
            if not isinstance(getattr(self, key), bool):
                raise ConfigError("field %r must be true or false" % key)

        if self.meta_grad_mode == EXACT and self.inner_steps != 1:
            raise ConfigError(
                "field 'meta_grad_mode' must be 'first_order' when inner_steps is %d" % self.inner_steps
            )

    def to_dict(self):
        d = dict((key, getattr(self, key)) for key in self.defaults)
        d["method"] = self.method
        return d

    def __repr__(self):
        return "<TrainConfig %s %d-shot seed=%d>" % (self.method, self.k_shot, self.seed)

class Checkpoint(object):
    """Initial parameters, rule, outer optimizer states and bookkeeping
    after `iteration` completed outer steps."""

    def __init__(self, config, net, rule, adam, iteration=0, best=None):
        self.config = config
        self.net = net
        self.rule = rule
        self.adam = adam
        self.iteration = iteration
        self.best = best or {"iteration": None, "val_loss": None, "val_ci": None}

    @property
    def seed(self):
        return self.config.seed

    @property
    def theta0(self):
        return flatten(self.net.params)

    @classmethod
    def initial(cls, config):
        net = init_weights(config.seed, config.sizes)
        rule = make_rule(
            config.method, net, config.inner_lr, config.inner_steps,
            config.separate_blocks,
        )
        adam = {"theta": AdamState.zeros_like(net.params)}
        groups = rule.groups()
        for name in rule.trainable:
            adam[name] = AdamState.zeros_like(groups[name])
        return cls(config, net, rule, adam)

    def replace(self, **kwargs):
        values = {
            "config": self.config, "net": self.net, "rule": self.rule,
            "adam": self.adam, "iteration": self.iteration, "best": self.best,
        }
        values.update(kwargs)
        return Checkpoint(**values)

    def to_dict(self):
        return {
            "schema": CHECKPOINT_SCHEMA,
            "config": self.config.to_dict(),
            "seed": self.seed,
            "iteration": self.iteration,
            "best": self.best,
            "theta0": self.theta0.tolist(),
            "shapes": [list(s) for s in self.net.shapes],
            "rule": self.rule.to_dict(),
            "adam": dict((name, state.to_dict()) for name, state in self.adam.items()),
        }

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict) or d.get("schema") != CHECKPOINT_SCHEMA:
            raise CheckpointError(
                "unsupported checkpoint schema %r, expected %r" %
                (d.get("schema") if isinstance(d, dict) else None, CHECKPOINT_SCHEMA)
            )
        try:
            config = TrainConfig(**d["config"])
            shapes = [tuple(s) for s in d["shapes"]]
            net = MLP(unflatten(np.array(d["theta0"], dtype=np.float64), shapes))
            rule = rule_from_dict(d["rule"])
            adam = dict((name, AdamState.from_dict(s)) for name, s in d["adam"].items())
            return cls(config, net, rule, adam, d["iteration"], d["best"])
        except (KeyError, TypeError, InvalidArgument, ConfigError) as e:
            raise CheckpointError("malformed checkpoint: %s" % e)

    def __repr__(self):
        return "<Checkpoint %s iteration=%d>" % (self.config.method, self.iteration)

def score(net, rule, episodes, steps):
    """Post-adaptation MSE on each episode's evaluation set: mean and 95%
    confidence half-width over episodes."""
    losses = []
    for episode in episodes:
        adapted, _ = adapt(net, episode, rule, steps)
        losses.append(mse_loss(adapted, episode.eval_x, episode.eval_y))

    losses = np.array(losses)
    ci = 1.96 * np.std(losses, ddof=1) / np.sqrt(losses.size)
    return float(np.mean(losses)), float(ci)

def validation_episodes(config):
    return [
        draw_episode(task_rng(config.seed, STREAM_VAL, j), config.k_shot, config.val_points)
        for j in range(config.eval_tasks)
    ]

def evaluate(checkpoint, n_tasks, k_shot, inner_steps, seed=None, n_eval=100):
    """Adapt to `n_tasks` fresh test tasks and report mean MSE with its 95%
    confidence half-width."""
    if n_tasks < 2:
        raise InvalidArgument("evaluation needs at least two tasks, got %d" % n_tasks)
    seed = checkpoint.seed if seed is None else seed
    episodes = [
        draw_episode(task_rng(seed, STREAM_TEST, j), k_shot, n_eval)
        for j in range(n_tasks)
    ]
    return score(checkpoint.net, checkpoint.rule, episodes, inner_steps)

def _task_grads(config, net, rule, iteration, index):
    rng = task_rng(config.seed, STREAM_TRAIN, iteration, index)
    episode = draw_episode(rng, config.k_shot, config.query_points)
    return task_meta_grads(net, episode, rule, config.meta_grad_mode, config.inner_steps)

def _sum(arrays, more):
    return [a + b for a, b in zip(arrays, more)]

def outer_step(checkpoint, pool=None):
    """One iteration: per-task meta-gradients summed over the meta-batch,
    then one ADAM update for theta and one per trainable rule group."""
    config, net, rule = checkpoint.config, checkpoint.net, checkpoint.rule
    iteration = checkpoint.iteration
    job = lambda index: _task_grads(config, net, rule, iteration, index)

    indexes = range(config.meta_batch)
    if pool is None:
        results = [job(i) for i in indexes]
    elif config.deterministic:
        results = list(pool.map(job, indexes))
    else:
        futures = [pool.submit(job, i) for i in indexes]
        results = [f.result() for f in concurrent.futures.as_completed(futures)]

    theta_grads, rule_grads, losses = None, None, []
    for t_grads, r_grads, loss in results:
        losses.append(loss)
        if theta_grads is None:
            theta_grads, rule_grads = t_grads, r_grads
            continue
        theta_grads = _sum(theta_grads, t_grads)
        for name in rule.trainable:
            rule_grads[name] = _sum(rule_grads[name], r_grads[name])

    adam = dict(checkpoint.adam)
    params, adam["theta"] = adam_step(
        adam["theta"], net.params, theta_grads, config.outer_lr, iteration
    )

    groups = rule.groups()
    updated = {}
    for name in rule.trainable:
        updated[name], adam[name] = adam_step(
            adam[name], groups[name], rule_grads[name], config.outer_lr, iteration
        )

    result = checkpoint.replace(
        net=net.with_params(params),
        rule=rule.with_groups(updated) if updated else rule,
        adam=adam,
        iteration=iteration + 1,
    )
    return result, float(np.mean(losses))

class MetricsRow(object):
    def __init__(self, iteration, train_loss, val_loss, val_ci, wall_ms, method, seed, neg_lr):
        self.iteration = iteration
        self.train_loss = train_loss
        self.val_loss = val_loss
        self.val_ci = val_ci
        self.wall_ms = wall_ms
        self.method = method
        self.seed = seed
        self.neg_lr = neg_lr

    def values(self):
        return [getattr(self, key) for key in METRICS_HEADER]

    def __eq__(self, other):
        # repr() so that the nan train_loss of the first row compares equal.
        return isinstance(other, MetricsRow) and \
            [repr(v) for v in self.values()] == [repr(v) for v in other.values()]

    def __ne__(self, other):
        return not self == other

    def __repr__(self):
        return "<MetricsRow %d val=%.4f>" % (self.iteration, self.val_loss)

def meta_train(config, resume=None, best=None, threads=None, on_checkpoint=None, on_metrics=None):
    """Run meta-training up to `config.iterations` outer steps.

    Validation happens at iteration 0, every `eval_every` steps and after the
    last step; each time `on_metrics(row)` and `on_checkpoint(kind,
    checkpoint)` are called, kind being "last" or "best". Returns the best
    checkpoint and every metrics row produced by this call. A resumed run
    that is not given `best` and never improves on the recorded best returns
    the checkpoint it resumed from.
    """
    if resume is not None:
        mine = dict(config.to_dict(), iterations=None)
        theirs = dict(resume.config.to_dict(), iterations=None)
        if mine != theirs:
            raise ConfigError("resumed checkpoint was trained with a different configuration")
        state = resume.replace(config=config)
    else:
        state = Checkpoint.initial(config)

    threads = default_threads() if threads is None else threads
    pool = concurrent.futures.ThreadPoolExecutor(threads) if threads > 1 else None

    val_set = validation_episodes(config)
    record = best.best if best is not None else (resume.best if resume is not None else None)
    tracker = {"best": best if best is not None else resume, "record": record}
    rows = []
    window = []
    warned = state.rule.negative_rates() > 0
    started = time.time()

    def checkpoint_at(state):
        val_loss, val_ci = score(state.net, state.rule, val_set, config.inner_steps)
        previous = tracker["record"]
        improved = previous is None or previous["val_loss"] is None or val_loss < previous["val_loss"]
        if improved:
            tracker["record"] = {"iteration": state.iteration, "val_loss": val_loss, "val_ci": val_ci}
        state = state.replace(best=tracker["record"])

        wall_ms = 0 if config.deterministic else int(1000 * (time.time() - started))
        train_loss = float(np.mean(window)) if window else float("nan")
        row = MetricsRow(
            state.iteration, train_loss, val_loss, val_ci, wall_ms,
            config.method, config.seed, state.rule.negative_rates(),
        )
        rows.append(row)
        on_metrics and on_metrics(row)

        log.info(
            "iteration %d: train %.4f, val %.4f +- %.4f%s", state.iteration,
            train_loss, val_loss, val_ci, " (best)" if improved else "",
        )
        on_checkpoint and on_checkpoint("last", state)
        if improved:
            tracker["best"] = state
            on_checkpoint and on_checkpoint("best", state)
        return state

    try:
        if resume is None:
            state = checkpoint_at(state)

        while state.iteration < config.iterations:
            try:
                next_state, loss = outer_step(state, pool)
            except NumericFailure as e:
                log.critical("meta-training aborted: %s", e)
                on_checkpoint and on_checkpoint("last", state)
                raise

            state = next_state
            window.append(loss)

            if not warned and state.rule.negative_rates():
                log.warning(
                    "learned learning rates turned negative at iteration %d (%d entries)",
                    state.iteration, state.rule.negative_rates(),
                )
                warned = True

            if state.iteration % config.eval_every == 0 or state.iteration == config.iterations:
                state = checkpoint_at(state)
                window = []
    finally:
        pool and pool.shutdown()

    return tracker["best"], rows
