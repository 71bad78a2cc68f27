"""Run configuration.

Values resolve as command-line flags over a JSON config file over built-in
defaults. The resolved configuration is written next to every artifact.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any, Self

from molang.const import (
    ADAM_LR,
    RECON_WEIGHT,
    SCHEDULER_ETA_MIN,
    SCHEDULER_T0,
    SCHEDULER_T_MULT,
    TAU_INIT,
    THREADS_ENV,
)
from molang.exception import MolangConfigException
from molang.motion_encoder import MotionEncoderConfig
from molang.nn.optim import SchedulerState

if TYPE_CHECKING:
    from molang.typing import Payload

LOGGER = logging.getLogger("molang")

STAGES = ("mmp_pretrain", "contrastive", "finetune")

STAGE_DEFAULTS: dict[str, dict[str, Any]] = {
    "mmp_pretrain": {"epochs": 50, "batch_size": 64},
    "contrastive": {"epochs": 100, "batch_size": 64},
    "finetune": {"epochs": 30, "batch_size": 64},
}


def _from_dict[T](cls: type[T], data: Payload, what: str) -> T:
    names = {f.name for f in dataclasses.fields(cls)}  # type: ignore[arg-type]
    unknown = set(data) - names
    if unknown:
        raise MolangConfigException(f"unknown {what} options {sorted(unknown)}")
    return cls(**data)


@dataclass
class StageConfig:
    stage: str
    epochs: int = 1
    batch_size: int = 64
    seed: int = 0
    masking: bool = True
    mmp_init: bool = True
    gcb: bool = True
    cstar_recon: bool = True
    alpha: float = RECON_WEIGHT
    tau_init: float = TAU_INIT
    lr: float = ADAM_LR
    eta_min: float = SCHEDULER_ETA_MIN
    t0: int = SCHEDULER_T0
    t_mult: int = SCHEDULER_T_MULT
    mmp_all_frames: bool = False
    unique_texts_per_batch: bool = True
    preset: str = "desk"
    motion: dict[str, Any] = field(default_factory=dict)
    text: dict[str, Any] = field(default_factory=dict)
    train_manifest: str | None = None
    test_manifest: str | None = None
    init_checkpoint: str | None = None
    out_dir: str = "runs"
    resume: bool = False

    def __post_init__(self) -> None:
        if self.stage not in STAGES:
            m = f"unknown stage {self.stage!r}, use one of {STAGES}"
            raise MolangConfigException(m)
        if self.epochs < 0 or self.batch_size < 1:
            m = f"bad epochs/batch size: {self.epochs}/{self.batch_size}"
            raise MolangConfigException(m)
        if self.stage == "finetune" and not self.init_checkpoint:
            m = "finetuning needs a contrastive-stage checkpoint"
            raise MolangConfigException(m)

    @classmethod
    def for_stage(cls, stage: str, **overrides: Any) -> Self:
        if stage not in STAGE_DEFAULTS:
            m = f"unknown stage {stage!r}, use one of {STAGES}"
            raise MolangConfigException(m)
        return cls(stage=stage, **{**STAGE_DEFAULTS[stage], **overrides})

    @property
    def recon_weight(self) -> float:
        return self.alpha if self.cstar_recon else 0.0

    @property
    def scheduler(self) -> SchedulerState:
        return SchedulerState(
            t0=self.t0,
            t_mult=self.t_mult,
            eta_min=self.eta_min,
            eta_max=self.lr,
        )

    def motion_config(self) -> MotionEncoderConfig:
        overrides = {**self.motion, "use_gcb": self.gcb}
        return MotionEncoderConfig.from_preset(self.preset, **overrides)

    def to_dict(self) -> Payload:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Payload) -> Self:
        return _from_dict(cls, data, "stage")


@dataclass
class EvalConfig:
    task: str = "recognition"
    checkpoint: str | None = None
    data: str | None = None
    n_labels: int = 8
    n_questions: int = 200
    n_candidates: int = 15
    seed: int = 0
    batch_size: int = 128
    out_dir: str | None = None

    def __post_init__(self) -> None:
        if self.task not in ("recognition", "retrieval"):
            m = f"unknown task {self.task!r}, use recognition or retrieval"
            raise MolangConfigException(m)

    def to_dict(self) -> Payload:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Payload) -> Self:
        return _from_dict(cls, data, "eval")


def merge_config(*layers: Payload | None) -> Payload:
    """Later layers win; ``None`` values never override."""
    out: Payload = {}
    for layer in layers:
        for key, value in (layer or {}).items():
            if value is None:
                continue
            if isinstance(value, dict) and isinstance(out.get(key), dict):
                out[key] = merge_config(out[key], value)
            else:
                out[key] = value
    return out


def read_config_file(path: Path | str | None) -> Payload:
    if path is None:
        return {}
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as e:
        raise MolangConfigException(f"can't read {path}: {e}") from e
    except json.JSONDecodeError as e:
        m = f"{path}:{e.lineno}:{e.colno}: {e.msg}"
        raise MolangConfigException(m) from e
    if not isinstance(data, dict):
        raise MolangConfigException(f"{path} must hold a JSON object")
    return data


def write_resolved(
    out_dir: Path | str,
    config: Payload,
    fingerprints: dict[str, str] | None = None,
) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "config.json"
    doc = {"config": config, "fingerprints": fingerprints or {}}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def data_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        threads = int(raw)
    except ValueError as e:
        m = f"{THREADS_ENV} must be an integer, got {raw!r}"
        raise MolangConfigException(m) from e
    return max(1, threads)
