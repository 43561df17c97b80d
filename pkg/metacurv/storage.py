# Copyright (C) 2026 MetaCurv developers.
# This file is part of MetaCurv.
# See the file 'LICENSE' for copying permission.

"""On-disk formats: JSON for configs, checkpoints and eval records, CSV for
metrics and curvature matrices. Floats are written so that reading them
back gives the same 64-bit values."""

import csv
import io
import json
import logging
import os

import numpy as np

from metacurv.curvature import EXPAND_CAP, mc_expand
from metacurv.exceptions import CheckpointError, ConfigError, SizeLimitExceeded
from metacurv.rules import MetaCurv
from metacurv.trainer import METRICS_HEADER, Checkpoint, TrainConfig

log = logging.getLogger(__name__)

RUN_FIELDS = ("output_dir",)

FLOAT_FORMAT = "%.17g"

def dumps(obj):
    return json.dumps(obj, sort_keys=True, indent=1, allow_nan=False) + "\n"

def write_json(path, obj):
    with io.open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(dumps(obj))

def read_json(path, error=CheckpointError):
    try:
        with io.open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except ValueError as e:
        raise error("%s is not valid JSON: %s" % (path, e))

def load_run_config(path):
    """Read a run config file. Returns the TrainConfig and the run options
    (output directory) that are not part of training itself."""
    d = read_json(path, ConfigError)
    if not isinstance(d, dict):
        raise ConfigError("%s must hold a JSON object" % path)

    options = {"output_dir": os.path.join(os.path.dirname(os.path.abspath(path)), "output")}
    for key in RUN_FIELDS:
        if key in d:
            options[key] = d.pop(key)
    return TrainConfig(**d), options

def resolved_config(config, options):
    d = config.to_dict()
    d.update(options)
    return d

def save_checkpoint(checkpoint, path):
    write_json(path, checkpoint.to_dict())

def load_checkpoint(path):
    return Checkpoint.from_dict(read_json(path))

def format_float(value):
    return FLOAT_FORMAT % value

class MetricsWriter(object):
    """Append-only metrics CSV; the header is written once."""

    def __init__(self, path):
        self.path = path
        if not os.path.exists(path) or not os.path.getsize(path):
            with io.open(path, "w", encoding="utf-8", newline="") as f:
                csv.writer(f, lineterminator="\n").writerow(METRICS_HEADER)

    def __call__(self, row):
        values = [
            format_float(v) if isinstance(v, float) else v
            for v in row.values()
        ]
        with io.open(self.path, "a", encoding="utf-8", newline="") as f:
            csv.writer(f, lineterminator="\n").writerow(values)

def read_metrics(path):
    with io.open(path, "r", encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))

def save_matrix(path, m):
    np.savetxt(path, np.atleast_2d(m), fmt=FLOAT_FORMAT, delimiter=",")

def load_matrix(path):
    return np.atleast_2d(np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2))

def matrix_summary(m):
    """Diagonal mean and largest absolute off-diagonal entry."""
    off = m - np.diag(np.diag(m))
    return float(np.mean(np.diag(m))), float(np.max(np.abs(off))) if off.size else 0.0

def dump_matrices(checkpoint, out_dir, cap=EXPAND_CAP):
    """Write every curvature factor as `<layer>_<Mo|Mi|Mf>.csv` and, under
    the size cap, the expanded `<layer>_M_mc.csv`. Returns (filename,
    diagonal mean, max |off-diagonal|) for every factor written."""
    rule = checkpoint.rule
    if not isinstance(rule, MetaCurv):
        raise CheckpointError("checkpoint uses %s, which has no curvature matrices" % rule.kind)

    if not os.path.isdir(out_dir):
        os.makedirs(out_dir)

    names = checkpoint.net.names
    summary = []
    for s, step_blocks in enumerate(rule.blocks):
        prefix = "step%d_" % (s + 1) if len(rule.blocks) > 1 else ""
        for name, block in zip(names, step_blocks):
            layer = prefix + name
            for label, m in (("Mo", block.mo), ("Mi", block.mi), ("Mf", block.mf)):
                filename = "%s_%s.csv" % (layer, label)
                save_matrix(os.path.join(out_dir, filename), m)
                summary.append((filename,) + matrix_summary(m))

            try:
                expanded = mc_expand(block, cap)
            except SizeLimitExceeded as e:
                log.info("not expanding %s: %s", layer, e)
                continue
            save_matrix(os.path.join(out_dir, "%s_M_mc.csv" % layer), expanded)
    return summary

def append_record(path, record):
    with io.open(path, "a", encoding="utf-8", newline="\n") as f:
        f.write(json.dumps(record, sort_keys=True) + "\n")
