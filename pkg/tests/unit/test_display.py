"""Tests for the display modules (Rich table and panel rendering)."""

from pathlib import Path

import numpy as np

from indexnet.core.fnn import FeedForwardNet
from indexnet.core.gradcheck import GradCheckEntry, GradCheckReport
from indexnet.core.nn_math import Loss
from indexnet.core.trainer import EpochMetrics, TrainingSummary
from indexnet.display.detailed import (
    display_checkpoint_header,
    display_evaluation,
    display_training_summary,
)
from indexnet.display.tables import (
    display_gradcheck_table,
    display_layers_table,
    display_manifest_table,
    display_metrics_table,
)
from indexnet.utils.checkpoint import Checkpoint


def _checkpoint():
    return Checkpoint(
        digest="0123456789abcdef" * 4,
        config={"name": "tiny", "network": {"kind": "fnn"}, "optimizer": {"kind": "adam"}},
        arrays={"model.head": np.zeros((2, 3)), "data.mean": np.zeros(())},
        meta={"epoch": 7, "lr": 0.01, "step_count": 14, "family": "fnn", "parameters": 6},
    )


class TestTables:
    def test_gradcheck_table(self, capsys):
        report = GradCheckReport(
            entries=[GradCheckEntry("w", (0, 1), 1.0, 1.0, 0.0)], threshold=1e-5
        )
        display_gradcheck_table(report)
        out = capsys.readouterr().out
        assert "PASS" in out
        assert "w[0,1]" in out
        assert "1 entries checked" in out

    def test_gradcheck_table_failure(self, capsys):
        report = GradCheckReport(
            entries=[GradCheckEntry("b", (2,), 1.0, 2.0, 0.5)], threshold=1e-5
        )
        display_gradcheck_table(report)
        assert "FAIL" in capsys.readouterr().out

    def test_manifest_table(self, capsys):
        display_manifest_table(_checkpoint())
        out = capsys.readouterr().out
        assert "model.head" in out
        assert "2x3" in out
        assert "scalar" in out

    def test_layers_table(self, capsys):
        net = FeedForwardNet.create([2, 3, 2], "tanh", Loss.parse("cross_entropy"))
        display_layers_table(net.describe(), title="tiny (fnn)")
        out = capsys.readouterr().out
        assert "tiny (fnn)" in out
        assert "output" in out

    def test_metrics_table_shows_last_epochs(self, capsys):
        history = [EpochMetrics(e, 1.0 / e, 2.0 / e, float("nan"), 0.01) for e in range(1, 13)]
        display_metrics_table(history, last=3)
        out = capsys.readouterr().out
        assert "12" in out
        assert " 9 " not in out


class TestPanels:
    def test_training_summary(self, capsys, tmp_path):
        summary = TrainingSummary(
            "tiny",
            2,
            history=[EpochMetrics(2, 0.5, 0.4, 1.0, 0.01)],
            checkpoints=[tmp_path / "final.ckpt"],
            metrics_path=tmp_path / "metrics.csv",
        )
        display_training_summary(summary, tmp_path)
        out = capsys.readouterr().out
        assert "Training complete" in out
        assert "metrics.csv" in out
        assert "final.ckpt" in out

    def test_training_summary_without_epochs(self, capsys):
        display_training_summary(TrainingSummary("tiny", 0), None)
        assert "No epochs were run" in capsys.readouterr().out

    def test_evaluation_regression(self, capsys):
        display_evaluation("sine-rnn", 0.125, float("nan"), 64)
        out = capsys.readouterr().out
        assert "0.125" in out
        assert "n/a (regression)" in out

    def test_checkpoint_header(self, capsys):
        display_checkpoint_header(_checkpoint(), Path("final.ckpt"))
        out = capsys.readouterr().out
        assert "Format version: 1" in out
        assert "Epoch: 7" in out
        assert "adam" in out
