# Copyright (C) 2026 MetaCurv developers.
# This file is part of MetaCurv.
# See the file 'LICENSE' for copying permission.

import click
import json
import logging
import os
import sys

from metacurv.curvature import EXPAND_CAP
from metacurv.diag import suites
from metacurv.exceptions import (
    CheckpointError, ConfigError, MetaCurvException, NumericFailure,
)
from metacurv.storage import (
    MetricsWriter, append_record, dump_matrices, load_checkpoint,
    load_run_config, resolved_config, save_checkpoint, write_json,
)
from metacurv.trainer import evaluate, meta_train

log = logging.getLogger(__name__)

EXIT_FAILURE = 1
EXIT_USAGE = 2

def fail(e, code):
    click.echo("error: %s" % e, err=True)
    sys.exit(code)

@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Debug logging")
def metacurv(verbose):
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO)

@metacurv.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False), help="Run config (JSON)")
@click.option("--out", "output_dir", type=click.Path(file_okay=False), help="Overrides the config's output_dir")
@click.option("--resume", type=click.Path(exists=True, dir_okay=False), help="Continue from a last.ckpt.json")
def train(config_path, output_dir, resume):
    """Meta-train and keep the checkpoint with the lowest validation loss."""
    try:
        config, options = load_run_config(config_path)
    except ConfigError as e:
        fail(e, EXIT_USAGE)

    if output_dir:
        options["output_dir"] = output_dir
    out = options["output_dir"]
    if not os.path.isdir(out):
        os.makedirs(out)

    best_path = os.path.join(out, "best.ckpt.json")
    metrics_path = os.path.join(out, "metrics.csv")
    log.info("training %r into %s", config, out)
    write_json(os.path.join(out, "resolved_config.json"), resolved_config(config, options))

    start, best = None, None
    try:
        if resume:
            start = load_checkpoint(resume)
            if os.path.exists(best_path):
                best = load_checkpoint(best_path)
    except CheckpointError as e:
        fail(e, EXIT_USAGE)

    if start is None and os.path.exists(metrics_path):
        os.remove(metrics_path)

    def on_checkpoint(kind, checkpoint):
        save_checkpoint(checkpoint, os.path.join(out, "%s.ckpt.json" % kind))

    try:
        best, _ = meta_train(
            config, resume=start, best=best, on_checkpoint=on_checkpoint,
            on_metrics=MetricsWriter(metrics_path),
        )
    except NumericFailure as e:
        fail(e, EXIT_FAILURE)
    except (ConfigError, CheckpointError) as e:
        fail(e, EXIT_USAGE)

    if best is not None:
        click.echo("best validation MSE %.4f +- %.4f at iteration %d" % (
            best.best["val_loss"], best.best["val_ci"], best.best["iteration"]
        ))

@metacurv.command("eval")
@click.argument("checkpoint", type=click.Path(exists=True, dir_okay=False))
@click.option("--tasks", type=click.IntRange(min=2), help="Test tasks (default from the config)")
@click.option("--shots", type=click.IntRange(min=1), help="K-shot (default from the config)")
@click.option("--steps", type=click.IntRange(min=1), help="Inner steps (default from the config)")
@click.option("--points", type=click.IntRange(min=1), help="Evaluation points per task")
@click.option("--seed", type=click.IntRange(min=0), help="Test task stream (default: training seed)")
@click.option("--results", type=click.Path(dir_okay=False), help="JSON lines file the record is appended to")
def evaluate_checkpoint(checkpoint, tasks, shots, steps, points, seed, results):
    """Mean test MSE with a 95% confidence interval."""
    try:
        ckpt = load_checkpoint(checkpoint)
    except CheckpointError as e:
        fail(e, EXIT_USAGE)

    config = ckpt.config
    tasks = tasks or config.test_tasks
    shots = shots or config.k_shot
    steps = steps or config.inner_steps
    points = points or config.test_points
    seed = config.seed if seed is None else seed

    try:
        mse, ci = evaluate(ckpt, tasks, shots, steps, seed, points)
    except MetaCurvException as e:
        fail(e, EXIT_FAILURE)

    record = {
        "checkpoint": checkpoint,
        "method": config.method,
        "iteration": ckpt.iteration,
        "tasks": tasks,
        "shots": shots,
        "steps": steps,
        "points": points,
        "seed": seed,
        "mse": mse,
        "ci95": ci,
    }
    click.echo("%s %d-shot, %d step(s): %.3f +- %.3f" % (config.method, shots, steps, mse, ci))
    click.echo(json.dumps(record, sort_keys=True))

    results = results or os.path.join(os.path.dirname(os.path.abspath(checkpoint)), "eval_results.jsonl")
    append_record(results, record)

@metacurv.command()
@click.argument("checkpoint", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False), help="Directory for the CSV dumps")
@click.option("--expand-cap", default=EXPAND_CAP, type=click.IntRange(min=1), help="Largest expanded matrix written")
def inspect(checkpoint, out_dir, expand_cap):
    """Dump the curvature matrices of a checkpoint as CSV."""
    try:
        summary = dump_matrices(load_checkpoint(checkpoint), out_dir, expand_cap)
    except CheckpointError as e:
        fail(e, EXIT_USAGE)
    except (IOError, OSError) as e:
        fail(e, EXIT_FAILURE)

    for filename, diag_mean, off_diag in summary:
        click.echo("%-28s diagonal mean %10.6f  max |off-diagonal| %10.6f" % (filename, diag_mean, off_diag))

@metacurv.command()
@click.option("--suite", required=True, type=click.Choice(sorted(suites)), help="Property suite to run")
@click.option("--instances", type=click.IntRange(min=1), help="Random instances (default per suite)")
@click.option("--seed", default=0, type=click.IntRange(min=0))
def diag(suite, instances, seed):
    """Check algebraic and gradient identities on random instances."""
    kwargs = {"seed": seed}
    if instances:
        kwargs["instances"] = instances

    log.debug("running suite %s with %r", suite, kwargs)
    checks = suites[suite](**kwargs)
    for check in checks:
        click.echo("%-52s max error %.3e  tol %.1e  %s" % (
            check.name, check.error, check.tol, "ok" if check.passed else "FAILED"
        ))

    if not all(check.passed for check in checks):
        sys.exit(EXIT_FAILURE)
