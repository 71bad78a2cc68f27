from __future__ import annotations

import contextlib
import io
import json
import math
from unittest.mock import patch

import pandas as pd
import pytest
import torch

from molang.cli import EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, main
from molang.dataset import load_manifest, save_manifest
from molang.metrics import read_log
from molang.stage import LAST, METRICS_LOG
from molang.stages.contrastive import ContrastiveStage

from .base import TestBase
from .common import TINY_MOTION, TINY_TEXT, tiny_dataset, tiny_spec


class TestCli(TestBase):
    def setUp(self) -> None:
        super().setUp()
        train, test = tiny_dataset(classes=3, clips_per_class=5)
        self.train_path = self.tmp / "data" / "train.jsonl"
        self.test_path = self.tmp / "data" / "test.jsonl"
        save_manifest(train, self.train_path)
        save_manifest(test, self.test_path)

        self.config_path = self.tmp / "molang.json"
        config = {
            "batch_size": 4,
            "motion": TINY_MOTION,
            "text": TINY_TEXT,
            "pretrain": {"epochs": 1},
            "train": {"epochs": 1},
            "finetune": {"epochs": 1},
        }
        self.config_path.write_text(json.dumps(config))

    def run_cli(self, *argv: str) -> tuple[int, str]:
        out = io.StringIO()
        with contextlib.redirect_stdout(out):
            code = main(list(argv))
        return code, out.getvalue()

    def train(self, out: str = "run", *extra: str) -> tuple[int, str]:
        return self.run_cli(
            "train",
            "--config",
            str(self.config_path),
            "--train",
            str(self.train_path),
            "--out",
            str(self.tmp / out),
            *extra,
        )

    def test_synth(self) -> None:
        spec = self.tmp / "spec.json"
        spec.write_text(tiny_spec().to_json())
        out = self.tmp / "synth"
        code, stdout = self.run_cli(
            "synth", "--spec", str(spec), "--seed", "0", "--out", str(out)
        )
        assert code == EXIT_OK
        summary = json.loads(stdout)
        assert (summary["train"], summary["test"]) == (12, 3)
        train = load_manifest(out / "train.jsonl")
        assert summary["train"] == len(train)
        assert summary["train_fingerprint"] == train.fingerprint
        assert (out / "config.json").exists()

    def test_synth_bad_spec(self) -> None:
        spec = self.tmp / "spec.json"
        spec.write_text(tiny_spec(classes=1).to_json())
        code, _ = self.run_cli(
            "synth", "--spec", str(spec), "--out", str(self.tmp)
        )
        assert code == EXIT_USAGE

    def test_synth_mistyped_spec(self) -> None:
        good = json.loads(tiny_spec().to_json())
        axis = good["classes"][0]["programs"][0]
        cases = {
            "min_frames": {**good, "min_frames": "10"},
            "jitter_std": {**good, "jitter_std": "a"},
            "axis": {
                **good,
                "classes": [
                    {
                        **good["classes"][0],
                        "programs": [{**axis, "axis": [0, 1]}],
                    },
                    *good["classes"][1:],
                ],
            },
            "classes": {**good, "classes": "walk"},
            "top level": [good],
        }
        spec = self.tmp / "spec.json"
        for name, payload in cases.items():
            with self.subTest(name):
                spec.write_text(json.dumps(payload))
                code, stdout = self.run_cli(
                    "synth", "--spec", str(spec), "--out", str(self.tmp)
                )
                assert code == EXIT_USAGE
                assert stdout == ""

    def test_pretrain(self) -> None:
        code, stdout = self.run_cli(
            "pretrain",
            "--config",
            str(self.config_path),
            "--train",
            str(self.train_path),
            "--out",
            str(self.tmp / "p"),
            "--all-frames",
        )
        assert code == EXIT_OK
        assert stdout.startswith("final loss ")
        resolved = json.loads((self.tmp / "p" / "config.json").read_text())
        assert resolved["config"]["stage"]["mmp_all_frames"]
        assert resolved["config"]["stage"]["epochs"] == 1

    def test_train_flags_override_file(self) -> None:
        code, stdout = self.train("run", "--no-recon", "--epochs", "2")
        assert code == EXIT_OK
        assert str(self.tmp / "run" / LAST) in stdout
        records = read_log(self.tmp / "run" / METRICS_LOG)
        assert {r["epoch"] for r in records} == {0, 1}
        assert all(r["alpha"] == 0.0 for r in records)

    def test_train_needs_data(self) -> None:
        code, _ = self.run_cli("train", "--out", str(self.tmp))
        assert code == EXIT_USAGE

    def test_finetune_needs_checkpoint(self) -> None:
        code, _ = self.run_cli(
            "finetune", "--train", str(self.train_path), "--out", str(self.tmp)
        )
        assert code == EXIT_USAGE

    def test_non_finite_loss(self) -> None:
        nan = torch.tensor(math.nan, requires_grad=True)
        with patch.object(
            ContrastiveStage, "batch_loss", return_value=(nan, {})
        ):
            code, _ = self.train()
        assert code == EXIT_NUMERICAL

    def test_eval_recognition(self) -> None:
        self.train()
        checkpoint = self.tmp / "run" / LAST
        code, stdout = self.run_cli(
            "eval",
            "--task",
            "recognition",
            "--ckpt",
            str(checkpoint),
            "--data",
            str(self.test_path),
        )
        assert code == EXIT_OK
        metrics = json.loads(stdout)
        assert set(metrics) == {"accuracy", "labels", "clips"}
        assert metrics["clips"] == 3
        out = self.tmp / "run" / "eval"
        for name in ("confusion.csv", "similarities.csv", "top3.txt"):
            assert (out / name).exists()
        assert json.loads((out / "recognition.json").read_text()) == metrics

    def test_eval_retrieval(self) -> None:
        self.train()
        code, stdout = self.run_cli(
            "eval",
            "--task",
            "retrieval",
            "--ckpt",
            str(self.tmp / "run" / LAST),
            "--data",
            str(self.train_path),
            "--out",
            str(self.tmp / "ret"),
            "--n-labels",
            "3",
            "--n-questions",
            "6",
            "--n-candidates",
            "4",
        )
        assert code == EXIT_OK
        metrics = json.loads(stdout)
        assert metrics["questions"] == 6
        assert metrics["top1"] <= metrics["top3"]
        assert len(pd.read_csv(self.tmp / "ret" / "ranks.csv")) == 6

    def test_eval_needs_full_model(self) -> None:
        self.run_cli(
            "pretrain",
            "--config",
            str(self.config_path),
            "--train",
            str(self.train_path),
            "--out",
            str(self.tmp / "p"),
        )
        code, _ = self.run_cli(
            "eval",
            "--ckpt",
            str(self.tmp / "p" / LAST),
            "--data",
            str(self.test_path),
        )
        assert code == EXIT_USAGE

    def test_embed(self) -> None:
        self.train()
        for modality in ("motion", "text"):
            out = self.tmp / f"{modality}.csv"
            code, stdout = self.run_cli(
                "embed",
                "--ckpt",
                str(self.tmp / "run" / LAST),
                "--data",
                str(self.test_path),
                "--out",
                str(out),
                "--modality",
                modality,
            )
            assert code == EXIT_OK
            assert json.loads(stdout)["rows"] == 3
            frame = pd.read_csv(out)
            assert len(frame) == 3
            assert list(frame.columns[:2]) == ["id", "label"]

    def test_missing_checkpoint(self) -> None:
        code, _ = self.run_cli(
            "embed",
            "--ckpt",
            str(self.tmp / "none.moln"),
            "--data",
            str(self.test_path),
            "--out",
            str(self.tmp / "e.csv"),
        )
        assert code == EXIT_USAGE

    @pytest.mark.slow
    def test_pipeline(self) -> None:
        code, _ = self.run_cli(
            "pretrain",
            "--config",
            str(self.config_path),
            "--train",
            str(self.train_path),
            "--out",
            str(self.tmp / "p"),
        )
        assert code == EXIT_OK
        code, _ = self.train(
            "c", "--motion-ckpt", str(self.tmp / "p" / LAST)
        )
        assert code == EXIT_OK
        code, _ = self.run_cli(
            "finetune",
            "--config",
            str(self.config_path),
            "--train",
            str(self.train_path),
            "--ckpt",
            str(self.tmp / "c" / LAST),
            "--out",
            str(self.tmp / "f"),
        )
        assert code == EXIT_OK
        code, stdout = self.run_cli(
            "eval",
            "--ckpt",
            str(self.tmp / "f" / LAST),
            "--data",
            str(self.test_path),
        )
        assert code == EXIT_OK
        assert 0.0 <= json.loads(stdout)["accuracy"] <= 1.0

    @pytest.mark.slow
    def test_ablate(self) -> None:
        code, stdout = self.run_cli(
            "ablate",
            "--config",
            str(self.config_path),
            "--train",
            str(self.train_path),
            "--test",
            str(self.test_path),
            "--out",
            str(self.tmp / "grid"),
            "--epochs",
            "1",
            "--seeds",
            "1",
            "--pretrain-epochs",
            "1",
            "--n-questions",
            "0",
        )
        assert code == EXIT_OK
        assert "mmp" in stdout
        table = pd.read_csv(self.tmp / "grid" / "ablation.csv")
        assert len(table) == 8
