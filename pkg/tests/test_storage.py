# Copyright (C) 2026 MetaCurv developers.
# This file is part of MetaCurv.
# See the file 'LICENSE' for copying permission.

import io
import json
import numpy as np
import os
import pytest

from metacurv.exceptions import CheckpointError, ConfigError
from metacurv.storage import (
    MetricsWriter, append_record, dump_matrices, load_checkpoint,
    load_matrix, load_run_config, matrix_summary, read_metrics,
    resolved_config, save_checkpoint, save_matrix,
)
from metacurv.tensor import kron
from metacurv.trainer import (
    METRICS_HEADER, Checkpoint, MetricsRow, TrainConfig, outer_step,
)

def small_checkpoint(method="MC2", **kwargs):
    values = {
        "method": method, "sizes": [1, 4, 4, 1], "meta_batch": 2,
        "eval_tasks": 2, "val_points": 5,
    }
    values.update(kwargs)
    return Checkpoint.initial(TrainConfig(**values))

def write(path, obj):
    with io.open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(obj))

def read(path):
    with io.open(path, "rb") as f:
        return f.read()

class TestRunConfig(object):
    def test_defaults(self, tmpdir):
        path = str(tmpdir.join("run.json"))
        write(path, {"method": "MC2", "k_shot": 10})
        config, options = load_run_config(path)
        assert config.k_shot == 10 and config.query_points == 10
        assert options["output_dir"] == os.path.join(str(tmpdir), "output")

        resolved = resolved_config(config, options)
        assert resolved["outer_lr"] == 0.001 and resolved["method"] == "MC2"
        assert resolved["output_dir"] == options["output_dir"]

    def test_output_dir(self, tmpdir):
        path = str(tmpdir.join("run.json"))
        write(path, {"method": "MAML", "output_dir": "runs/maml"})
        _, options = load_run_config(path)
        assert options["output_dir"] == "runs/maml"

    def test_unknown_field(self, tmpdir):
        path = str(tmpdir.join("run.json"))
        write(path, {"method": "MAML", "shots": 5})
        with pytest.raises(ConfigError) as e:
            load_run_config(path)
        assert "shots" in str(e.value)

    def test_not_json(self, tmpdir):
        path = str(tmpdir.join("run.json"))
        with io.open(path, "w") as f:
            f.write(u"method: MAML\n")
        with pytest.raises(ConfigError):
            load_run_config(path)

    def test_not_an_object(self, tmpdir):
        path = str(tmpdir.join("run.json"))
        write(path, ["MAML"])
        with pytest.raises(ConfigError):
            load_run_config(path)

class TestCheckpointFile(object):
    def test_byte_round_trip(self, tmpdir):
        first, second = str(tmpdir.join("a.json")), str(tmpdir.join("b.json"))
        c, _ = outer_step(small_checkpoint())
        save_checkpoint(c, first)
        save_checkpoint(load_checkpoint(first), second)
        assert read(first) == read(second)

    def test_lossless(self, tmpdir):
        path = str(tmpdir.join("a.json"))
        c, _ = outer_step(small_checkpoint("MetaSGD"))
        save_checkpoint(c, path)
        again = load_checkpoint(path)
        assert np.array_equal(again.theta0, c.theta0)
        for a, b in zip(again.rule.alpha, c.rule.alpha):
            assert np.array_equal(a, b)

    def test_wrong_schema(self, tmpdir):
        path = str(tmpdir.join("a.json"))
        write(path, {"schema": "something-else/1"})
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_garbage(self, tmpdir):
        path = str(tmpdir.join("a.json"))
        with io.open(path, "w") as f:
            f.write(u"{")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

def test_metrics_writer(tmpdir):
    path = str(tmpdir.join("metrics.csv"))
    value = 0.1 + 0.2
    writer = MetricsWriter(path)
    writer(MetricsRow(0, float("nan"), value, 0.5, 0, "MC2", 0, 0))
    MetricsWriter(path)(MetricsRow(1000, 1.25, value, 0.5, 0, "MC2", 0, 3))

    lines = read(path).decode("utf-8").splitlines()
    assert lines[0] == ",".join(METRICS_HEADER)
    assert len(lines) == 3

    rows = read_metrics(path)
    assert rows[0]["train_loss"] == "nan"
    assert float(rows[1]["val_loss"]) == value
    assert rows[1]["iteration"] == "1000" and rows[1]["neg_lr"] == "3"

def test_matrix_round_trip(tmpdir):
    path = str(tmpdir.join("m.csv"))
    m = np.random.default_rng(0).standard_normal((4, 3)) / 3.0
    save_matrix(path, m)
    assert np.array_equal(load_matrix(path), m)

    save_matrix(path, np.array([[1.0 / 7]]))
    assert load_matrix(path)[0, 0] == 1.0 / 7

def test_matrix_summary():
    m = np.array([[1.0, -0.5], [0.25, 3.0]])
    assert matrix_summary(m) == (2.0, 0.5)
    assert matrix_summary(np.eye(1)) == (1.0, 0.0)

class TestDumpMatrices(object):
    def test_identity_at_start(self, tmpdir):
        out = str(tmpdir.join("dump"))
        summary = dump_matrices(small_checkpoint(), out)
        assert len(summary) == 6 * 3
        for filename, diag_mean, off_diag in summary:
            m = load_matrix(os.path.join(out, filename))
            assert np.array_equal(m, np.eye(m.shape[0]))
            assert (diag_mean, off_diag) == (1.0, 0.0)

        names = sorted(os.listdir(out))
        assert "layer1_weight_Mo.csv" in names and "layer3_bias_Mf.csv" in names
        assert "layer2_weight_M_mc.csv" in names

    def test_expanded_matches_factors(self, tmpdir):
        out = str(tmpdir.join("dump"))
        c = small_checkpoint()
        for _ in range(3):
            c, _ = outer_step(c)
        dump_matrices(c, out)

        load = lambda name: load_matrix(os.path.join(out, name))
        for layer in c.net.names:
            factors = [load("%s_%s.csv" % (layer, label)) for label in ("Mo", "Mi", "Mf")]
            expected = kron(factors[0], kron(factors[1], factors[2]))
            assert np.abs(load("%s_M_mc.csv" % layer) - expected).max() <= 1e-12 * np.abs(expected).max()

    def test_cap(self, tmpdir):
        out = str(tmpdir.join("dump"))
        dump_matrices(small_checkpoint(), out, cap=4)
        names = os.listdir(out)
        assert "layer1_weight_M_mc.csv" in names
        assert "layer2_weight_M_mc.csv" not in names

    def test_separate_steps(self, tmpdir):
        out = str(tmpdir.join("dump"))
        c = small_checkpoint(inner_steps=2, meta_grad_mode="first_order", separate_blocks=True)
        dump_matrices(c, out)
        names = os.listdir(out)
        assert "step1_layer1_weight_Mo.csv" in names
        assert "step2_layer3_bias_Mf.csv" in names

    def test_no_curvature(self, tmpdir):
        with pytest.raises(CheckpointError):
            dump_matrices(small_checkpoint("MetaSGD"), str(tmpdir))

def test_append_record(tmpdir):
    path = str(tmpdir.join("results.jsonl"))
    append_record(path, {"mse": 0.5, "method": "MC2"})
    append_record(path, {"mse": 0.25, "method": "MAML"})
    records = [json.loads(line) for line in read(path).decode("utf-8").splitlines()]
    assert [r["method"] for r in records] == ["MC2", "MAML"]

CONFIGS = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "configs")

@pytest.mark.parametrize("method", ["maml", "mc2"])
def test_smoke_configs(method):
    names = ["smoke_%s.json" % method] + ["smoke_%s_seed%d.json" % (method, s) for s in (1, 2)]
    loaded = [load_run_config(os.path.join(CONFIGS, name)) for name in names]
    assert [config.seed for config, _ in loaded] == [0, 1, 2]
    assert len(set(options["output_dir"] for _, options in loaded)) == 3

    strip = lambda config: dict(config.to_dict(), seed=None)
    first = strip(loaded[0][0])
    assert first["iterations"] == 10000 and first["k_shot"] == 5
    assert all(strip(config) == first for config, _ in loaded)
