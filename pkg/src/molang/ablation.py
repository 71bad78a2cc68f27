"""The {MMP, GCB, CstAR} toggle grid.

Every row trains a contrastive model under one toggle combination and is
scored on the test split. Stage-1 checkpoints depend only on the GCB toggle
and the seed, so rows that share them pretrain once.
"""

from __future__ import annotations

import dataclasses
import itertools
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
import pandas as pd

from molang.config import StageConfig
from molang.dataset import paired_samples
from molang.evaluation import (
    build_retrieval_questions,
    eval_recognition,
    eval_retrieval,
)
from molang.exception import MolangConfigException
from molang.stages.contrastive import train_contrastive
from molang.stages.pretrain import pretrain_mmp

if TYPE_CHECKING:
    from molang.config import EvalConfig
    from molang.dataset import DatasetManifest
    from molang.metrics import MetricsReport

LOGGER = logging.getLogger("molang")

TOGGLES = ("mmp", "gcb", "cstar")


@dataclass(frozen=True)
class Toggles:
    mmp: bool
    gcb: bool
    cstar: bool

    @property
    def name(self) -> str:
        return "_".join(
            f"{t}{'+' if getattr(self, t) else '-'}" for t in TOGGLES
        )

    @classmethod
    def grid(cls, axes: tuple[str, ...] = TOGGLES) -> list[Toggles]:
        """Every on/off combination of ``axes``; other toggles stay on."""
        unknown = sorted(set(axes) - set(TOGGLES))
        if unknown:
            m = f"unknown ablation toggles {unknown}, use {TOGGLES}"
            raise MolangConfigException(m)
        rows = []
        for values in itertools.product((False, True), repeat=len(axes)):
            flags = dict.fromkeys(TOGGLES, True) | dict(zip(axes, values))
            rows.append(cls(**flags))
        return rows


@dataclass
class AblationRow:
    toggles: Toggles
    alpha: float
    pretrain_checkpoints: list[str | None] = field(default_factory=list)
    reports: list[MetricsReport] = field(default_factory=list)

    def mean(self, metric: str) -> float | None:
        values = [getattr(r, metric) for r in self.reports]
        if any(v is None for v in values) or not values:
            return None
        return float(np.mean(values))


def ablation_table(rows: list[AblationRow]) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {
                "mmp": row.toggles.mmp,
                "gcb": row.toggles.gcb,
                "cstar": row.toggles.cstar,
                "alpha": row.alpha,
                "accuracy": row.mean("accuracy"),
                "top1": row.mean("top1"),
                "top3": row.mean("top3"),
                "seeds": len(row.reports),
            }
            for row in rows
        ]
    )


def ablation_run(
    base: StageConfig,
    train: DatasetManifest,
    test: DatasetManifest,
    evaluation: EvalConfig,
    seeds: tuple[int, ...] = (0, 1, 2),
    pretrain_epochs: int = 50,
    axes: tuple[str, ...] = TOGGLES,
) -> list[AblationRow]:
    """Train and score every toggle row for every seed.

    ``base`` is a contrastive-stage config; its ``out_dir`` is the grid root.
    """
    if base.stage != "contrastive":
        m = f"ablations start from a contrastive config, got {base.stage}"
        raise MolangConfigException(m)
    root = Path(base.out_dir)
    test_samples = list(paired_samples(test))
    labels = sorted({s.label for s in test_samples})
    pretrained: dict[tuple[bool, int], str] = {}

    rows = []
    for toggles in Toggles.grid(axes):
        row = AblationRow(toggles, alpha=base.alpha if toggles.cstar else 0.0)
        for seed in seeds:
            checkpoint = None
            if toggles.mmp:
                key = (toggles.gcb, seed)
                if key not in pretrained:
                    pre_dir = root / "pretrain" / f"gcb{key[0]:d}_{seed}"
                    pre = StageConfig.for_stage(
                        "mmp_pretrain",
                        epochs=pretrain_epochs,
                        batch_size=base.batch_size,
                        seed=seed,
                        gcb=toggles.gcb,
                        preset=base.preset,
                        motion=base.motion,
                        out_dir=str(pre_dir),
                    )
                    pretrained[key] = str(pretrain_mmp(train, pre).checkpoint)
                checkpoint = pretrained[key]

            config = dataclasses.replace(
                base,
                seed=seed,
                gcb=toggles.gcb,
                cstar_recon=toggles.cstar,
                mmp_init=toggles.mmp,
                init_checkpoint=checkpoint,
                out_dir=str(root / toggles.name / f"seed{seed}"),
            )
            result = train_contrastive(train, config)
            report = result.report
            report.accuracy = eval_recognition(
                result.model, test_samples, labels, evaluation.batch_size
            ).accuracy
            if evaluation.n_questions > 0:
                questions = build_retrieval_questions(
                    test_samples,
                    evaluation.n_labels,
                    evaluation.n_questions,
                    seed,
                    evaluation.n_candidates,
                )
                retrieval = eval_retrieval(
                    result.model, test_samples, questions, evaluation.batch_size
                )
                report.top1, report.top3 = retrieval.top1, retrieval.top3
            report.write(Path(config.out_dir) / "report.json")

            row.pretrain_checkpoints.append(checkpoint)
            row.reports.append(report)
        LOGGER.info(f"Ablation row {toggles.name}: {row.mean('accuracy')}.")
        rows.append(row)
    return rows


def write_ablation(rows: list[AblationRow], out_dir: Path | str) -> Path:
    """CSV of the grid plus a plain-text rendering of the same table."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = ablation_table(rows)
    path = out_dir / "ablation.csv"
    table.to_csv(path, index=False)

    shown = table.copy()
    for t in TOGGLES:
        shown[t] = shown[t].map({True: "+", False: "-"})
    (out_dir / "ablation.txt").write_text(
        shown.to_string(index=False, float_format="{:.4f}".format) + "\n"
    )
    return path
