# Copyright (C) 2026 MetaCurv developers.
# This file is part of MetaCurv.
# See the file 'LICENSE' for copying permission.

from .adam import AdamState, adam_step
from .analysis import (
    SnnReport, accumulate_full_matrix, full_matrix_meta_grad, snn_decompose,
)
from .curvature import (
    MC1, MC2, CurvatureBlock, LayerShape, apply_block_grads, layer_shape,
    mc_adjoint, mc_expand, mc_init, mc_param_grads, mc_transform,
)
from .exceptions import (
    MetaCurvException, InvalidArgument, SizeLimitExceeded, NumericFailure,
    UnsupportedMode, ConfigError, CheckpointError,
)
from .net import (
    MLP, forward, hvp, init_weights, loss_and_grad, loss_grad, mse_loss,
)
from .rules import (
    EXACT, FIRST_ORDER, FixedLR, InnerRule, MetaCurv, PerCoordinate,
    PerLayer, adapt, inner_update, make_rule, meta_grad_rule, meta_grad_theta,
)
from .sine import Episode, SineTask, sample_episode, sample_task
from .tensor import (
    devectorize, fold, kron, mode_product, unfold, vectorize,
)
from .trainer import Checkpoint, TrainConfig, evaluate, meta_train

__version__ = "0.1"
