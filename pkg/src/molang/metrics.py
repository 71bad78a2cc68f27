from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Self

from molang.exception import MolangInvalidArgumentException

if TYPE_CHECKING:
    from types import TracebackType

    from molang.typing import Payload

LOGGER = logging.getLogger("molang")


def config_fingerprint(config: Payload) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


@dataclass
class MetricsReport:
    """Per-epoch losses plus whatever evaluation ran afterwards.

    ``wall_clock`` is informational and excluded from equality, so two runs
    with the same config, seed and data compare equal.
    """

    seed: int
    config_fingerprint: str
    data_fingerprint: str = ""
    epochs: list[dict[str, float]] = field(default_factory=list)
    accuracy: float | None = None
    top1: float | None = None
    top3: float | None = None
    wall_clock: float = field(default=0.0, compare=False)

    def __post_init__(self) -> None:
        for name in ("accuracy", "top1", "top3"):
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 1.0:
                m = f"{name}={value} is outside [0, 1]"
                raise MolangInvalidArgumentException(m)

    @property
    def final_loss(self) -> float | None:
        return self.epochs[-1]["total"] if self.epochs else None

    def to_dict(self) -> Payload:
        return {
            "seed": self.seed,
            "config_fingerprint": self.config_fingerprint,
            "data_fingerprint": self.data_fingerprint,
            "epochs": self.epochs,
            "accuracy": self.accuracy,
            "top1": self.top1,
            "top3": self.top3,
            "wall_clock": self.wall_clock,
        }

    @classmethod
    def from_dict(cls, data: Payload) -> Self:
        return cls(**data)

    def write(self, path: Path | str) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def read(cls, path: Path | str) -> Self:
        return cls.from_dict(json.loads(Path(path).read_text()))


class MetricsLogger:
    """Append-only JSON-lines log, one record per step or epoch."""

    def __init__(self, path: Path | str, append: bool = False):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._file = self.path.open("a" if append else "w")

    def __enter__(self) -> Self:
        return self

    def __exit__(
        self,
        exc_type: type[BaseException] | None,
        exc: BaseException | None,
        tb: TracebackType | None,
    ) -> None:
        self.close()

    def log(self, **record: object) -> None:
        self._file.write(json.dumps(record, sort_keys=True) + "\n")
        self._file.flush()

    def close(self) -> None:
        if not self._file.closed:
            self._file.close()


def read_log(path: Path | str) -> list[Payload]:
    lines = Path(path).read_text().splitlines()
    return [json.loads(line) for line in lines if line]
