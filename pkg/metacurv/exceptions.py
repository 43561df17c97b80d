# Copyright (C) 2026 MetaCurv developers.
# This file is part of MetaCurv.
# See the file 'LICENSE' for copying permission.

class MetaCurvException(Exception):
    """Generic MetaCurv exception."""

class InvalidArgument(MetaCurvException, ValueError):
    """Shapes, modes or lengths that do not line up."""

class SizeLimitExceeded(MetaCurvException):
    """A dense expansion or diagnostic was asked for more than its cap."""

class NumericFailure(MetaCurvException):
    """Non-finite values showed up during a computation."""

    def __init__(self, message, iteration=None):
        if iteration is not None:
            message = "%s (iteration %d)" % (message, iteration)
        MetaCurvException.__init__(self, message)
        self.iteration = iteration

class UnsupportedMode(MetaCurvException):
    """Meta-gradient mode not available for this inner loop."""

class ConfigError(MetaCurvException):
    """Missing, unknown or invalid configuration field."""

class CheckpointError(MetaCurvException):
    """Checkpoint or dump file with an unexpected schema."""
