"""Training stage base class.

Every stage runs the same epoch loop: reseed, set the scheduled learning
rate, step over batches, then write the ``last`` checkpoint (with Adam
moments and the scheduler epoch) and, when the epoch-mean loss improved,
the ``best`` one. Subclasses register under ``NAME`` and supply the model,
the samples and the per-batch loss.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, ClassVar

import numpy as np
import torch

from molang.batch import collate
from molang.config import write_resolved
from molang.const import MAX_TOKENS
from molang.exception import (
    MolangConfigException,
    MolangNumericalException,
)
from molang.metrics import (
    MetricsLogger,
    MetricsReport,
    config_fingerprint,
    read_log,
)
from molang.model import MoLang, save_model
from molang.nn.checkpoint import (
    Checkpoint,
    load_state,
    optimizer_tensors,
    read_checkpoint,
    restore_optimizer,
    write_checkpoint,
)
from molang.nn.optim import build_adam, cosine_lr, optimization_step, set_lr

if TYPE_CHECKING:
    from torch import nn

    from molang.batch import Batch
    from molang.config import StageConfig
    from molang.dataset import DatasetManifest, MotionSample
    from molang.motion_encoder import MotionEncoder
    from molang.typing import Payload
    from molang.vocab import Vocab

LOGGER = logging.getLogger("molang")

LAST = "last.moln"
BEST = "best.moln"
OPTIMIZER = "last.optim.moln"
METRICS_LOG = "metrics.jsonl"
REPORT = "report.json"

# Options that move artifacts around without changing any result.
UNFINGERPRINTED = frozenset({"out_dir", "resume"})


def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    """One stream per epoch so a resumed run replays the same draws."""
    torch.manual_seed(seed * 1_000_003 + epoch)
    return np.random.default_rng([seed, epoch])


def shuffled_batches(
    count: int, batch_size: int, rng: np.random.Generator
) -> list[list[int]]:
    order = rng.permutation(count).tolist()
    return [order[i : i + batch_size] for i in range(0, count, batch_size)]


@dataclass
class StageResult:
    model: MoLang | MotionEncoder
    checkpoint: Path
    best_checkpoint: Path
    report: MetricsReport


class TrainingStage:
    NAME: ClassVar[str]
    subclasses: ClassVar[dict[str, type[TrainingStage]]] = {}

    def __init__(self, config: StageConfig, manifest: DatasetManifest):
        if config.stage != self.NAME:
            m = f"{self.__class__.__name__} can't run a {config.stage} config"
            raise MolangConfigException(m)
        self.config = config
        self.manifest = manifest
        self.out_dir = Path(config.out_dir)
        self.vocab: Vocab | None = None
        self.samples: list[MotionSample] = self.load_samples()
        if not self.samples:
            m = f"{self.NAME}: the training manifest yields no samples"
            raise MolangConfigException(m)

    @classmethod
    def __init_subclass__(cls) -> None:
        super().__init_subclass__()
        if hasattr(cls, "NAME"):
            cls.subclasses[cls.NAME] = cls

    def __repr__(self) -> str:
        return (
            f"{self.__class__.__name__}(out_dir={str(self.out_dir)!r}, "
            f"samples={len(self.samples)})"
        )

    @classmethod
    def from_config(
        cls, config: StageConfig, manifest: DatasetManifest
    ) -> TrainingStage:
        if config.stage not in cls.subclasses:
            m = f"{config.stage} is not a known training stage."
            LOGGER.warning(m)
            raise MolangConfigException(m)
        return cls.subclasses[config.stage](config, manifest)

    def load_samples(self) -> list[MotionSample]:
        raise NotImplementedError

    def build_model(self) -> MoLang | MotionEncoder:
        raise NotImplementedError

    def batch_loss(
        self, model: nn.Module, batch: Batch, rng: np.random.Generator
    ) -> tuple[torch.Tensor, dict[str, float]]:
        raise NotImplementedError

    def collate_batch(
        self, model: MoLang | MotionEncoder, indices: list[int]
    ) -> Batch:
        """Pads to the limits the model was built with."""
        motion = model.motion if isinstance(model, MoLang) else model
        max_tokens = (
            model.text.config.max_tokens
            if isinstance(model, MoLang)
            else MAX_TOKENS
        )
        return collate(
            [self.samples[i] for i in indices],
            self.vocab,
            max_frames=motion.config.max_len,
            max_tokens=max_tokens,
        )

    def check_lengths(self, model: MoLang | MotionEncoder) -> None:
        motion = model.motion if isinstance(model, MoLang) else model
        longest = max(self.samples, key=lambda s: len(s.frames))
        if len(longest.frames) > motion.config.max_len:
            m = (
                f"{longest.sample_id} has {len(longest.frames)} frames, the "
                f"motion encoder takes at most {motion.config.max_len}"
            )
            raise MolangConfigException(m)

    def epoch_batches(self, rng: np.random.Generator) -> list[list[int]]:
        return shuffled_batches(
            len(self.samples), self.config.batch_size, rng
        )

    def optimize(
        self,
        model: nn.Module,
        loss: torch.Tensor,
        optimizer: torch.optim.Optimizer,
    ) -> None:
        optimization_step(model, loss, optimizer)

    def config_payload(self) -> Payload:
        return {"stage": self.config.to_dict()}

    def _save_last(
        self,
        model: MoLang | MotionEncoder,
        optimizer: torch.optim.Optimizer,
        metadata: Payload,
    ) -> None:
        save_model(model, self.out_dir / LAST, metadata)
        tensors, steps = optimizer_tensors(model, optimizer)
        write_checkpoint(
            self.out_dir / OPTIMIZER,
            Checkpoint(tensors, metadata={"steps": steps, **metadata}),
        )

    def _resume(
        self, model: MoLang | MotionEncoder, optimizer: torch.optim.Optimizer
    ) -> Payload | None:
        last = self.out_dir / LAST
        if not last.exists():
            LOGGER.info(f"No {last} to resume from, starting fresh.")
            return None
        load_state(model, read_checkpoint(last).tensors)
        state = read_checkpoint(self.out_dir / OPTIMIZER)
        restore_optimizer(
            model, optimizer, state.tensors, state.metadata["steps"]
        )
        epoch = state.metadata["epoch"]
        LOGGER.info(f"Resuming {self.NAME} after epoch {epoch}.")
        return state.metadata

    def run(self) -> StageResult:
        config = self.config
        started = time.monotonic()
        torch.manual_seed(config.seed)
        model = self.build_model()
        self.check_lengths(model)
        optimizer = build_adam(model.parameters(), config.lr)
        scheduler = config.scheduler

        payload = self.config_payload()
        stage = {
            k: v
            for k, v in payload["stage"].items()
            if k not in UNFINGERPRINTED
        }
        fingerprint = config_fingerprint({**payload, "stage": stage})
        data_fingerprint = self.manifest.fingerprint
        write_resolved(
            self.out_dir, payload, {"train_manifest": data_fingerprint}
        )

        history: list[dict[str, float]] = []
        best = math.inf
        start = 0
        resumed = self._resume(model, optimizer) if config.resume else None
        if resumed is not None:
            history = resumed["history"]
            best = resumed["best"]
            start = resumed["epoch"] + 1
            log_path = self.out_dir / METRICS_LOG
            kept = [r for r in read_log(log_path) if r["epoch"] < start]
        else:
            kept = []

        LOGGER.info(
            f"{self.NAME}: {len(self.samples)} samples, epochs "
            f"{start}..{config.epochs}, output {self.out_dir}."
        )
        with MetricsLogger(self.out_dir / METRICS_LOG) as log:
            for record in kept:
                log.log(**record)

            for epoch in range(start, config.epochs):
                lr = cosine_lr(scheduler, epoch)
                set_lr(optimizer, lr)
                rng = epoch_rng(config.seed, epoch)
                model.train()

                totals: dict[str, float] = {}
                batches = self.epoch_batches(rng)
                for step, indices in enumerate(batches):
                    batch = self.collate_batch(model, indices)
                    try:
                        loss, values = self.batch_loss(model, batch, rng)
                        self.optimize(model, loss, optimizer)
                    except MolangNumericalException as e:
                        m = f"{self.NAME} epoch {epoch} step {step}: {e}"
                        raise MolangNumericalException(m) from e
                    log.log(epoch=epoch, step=step, lr=lr, **values)
                    for key, value in values.items():
                        totals[key] = totals.get(key, 0.0) + value

                mean = {k: v / len(batches) for k, v in totals.items()}
                history.append({"epoch": epoch, "lr": lr, **mean})
                LOGGER.debug(f"{self.NAME} epoch {epoch}: {mean}.")

                improved = mean["total"] < best
                best = min(best, mean["total"])
                metadata = {"epoch": epoch, "best": best, "history": history}
                self._save_last(model, optimizer, metadata)
                if improved:
                    save_model(model, self.out_dir / BEST, metadata)

        if not history:
            metadata = {"epoch": -1, "best": best, "history": history}
            self._save_last(model, optimizer, metadata)
            save_model(model, self.out_dir / BEST, metadata)

        report = MetricsReport(
            seed=config.seed,
            config_fingerprint=fingerprint,
            data_fingerprint=data_fingerprint,
            epochs=history,
            wall_clock=time.monotonic() - started,
        )
        report.write(self.out_dir / REPORT)
        model.eval()
        LOGGER.info(f"{self.NAME} finished, checkpoint {self.out_dir / LAST}.")
        return StageResult(
            model=model,
            checkpoint=self.out_dir / LAST,
            best_checkpoint=self.out_dir / BEST,
            report=report,
        )
