# Copyright (C) 2026 MetaCurv developers.
# This file is part of MetaCurv.
# See the file 'LICENSE' for copying permission.

import numpy as np

from metacurv.exceptions import InvalidArgument

AMPLITUDE_RANGE = 0.1, 5.0
PHASE_RANGE = 0.0, np.pi
INPUT_RANGE = -5.0, 5.0

# Independent random streams, each addressed by (seed, stream, a, b).
STREAM_TRAIN = 0
STREAM_VAL = 1
STREAM_TEST = 2

def task_rng(seed, stream, a=0, b=0):
    """Counter-based generator: the same (seed, stream, a, b) always yields
    the same numbers, whatever ran before."""
    return np.random.default_rng([int(seed), int(stream), int(a), int(b)])

class SineTask(object):
    """y = amplitude * sin(x - phase)."""

    def __init__(self, amplitude, phase):
        lo, hi = AMPLITUDE_RANGE
        if not lo <= amplitude <= hi:
            raise InvalidArgument("amplitude %r outside [%g, %g]" % (amplitude, lo, hi))
        lo, hi = PHASE_RANGE
        if not lo <= phase <= hi:
            raise InvalidArgument("phase %r outside [0, pi]" % phase)

        self.amplitude = float(amplitude)
        self.phase = float(phase)

    def __call__(self, x):
        return self.amplitude * np.sin(np.asarray(x, dtype=np.float64) - self.phase)

    def __repr__(self):
        return "<SineTask A=%.4f phi=%.4f>" % (self.amplitude, self.phase)

class Episode(object):
    """K-shot training set plus a separate evaluation set of one task."""

    def __init__(self, task, train_x, train_y, eval_x, eval_y):
        self.task = task
        self.train_x = train_x
        self.train_y = train_y
        self.eval_x = eval_x
        self.eval_y = eval_y

    @property
    def k_shot(self):
        return self.train_x.size

    def __repr__(self):
        return "<Episode %r K=%d n_eval=%d>" % (self.task, self.train_x.size, self.eval_x.size)

def sample_task(rng):
    amplitude = rng.uniform(*AMPLITUDE_RANGE)
    phase = rng.uniform(*PHASE_RANGE)
    return SineTask(amplitude, phase)

def sample_episode(task, k_shot, n_eval, rng):
    if k_shot < 1 or n_eval < 1:
        raise InvalidArgument("episode needs K >= 1 and n_eval >= 1, got %d/%d" % (k_shot, n_eval))

    train_x = rng.uniform(*INPUT_RANGE, size=k_shot)
    eval_x = rng.uniform(*INPUT_RANGE, size=n_eval)
    return Episode(task, train_x, task(train_x), eval_x, task(eval_x))

def draw_episode(rng, k_shot, n_eval):
    return sample_episode(sample_task(rng), k_shot, n_eval, rng)
