from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Self

from molang.clip import MotionClip, load_clip, normalize_clip, save_clip
from molang.const import TRANSITION_LABEL
from molang.exception import (
    MolangInvalidArgumentException,
    MolangParseException,
)

if TYPE_CHECKING:
    from collections.abc import Iterator

    from molang.typing import FloatArray, Payload

LOGGER = logging.getLogger("molang")

MANIFEST_FORMAT = "molang-manifest"
MANIFEST_VERSION = 1
SPLITS = ("train", "test")


@dataclass(frozen=True)
class MotionSample:
    """One training item: normalized frames plus the text paired with them."""

    sample_id: str
    frames: FloatArray
    text: str = ""
    label: str = ""


@dataclass
class ManifestEntry:
    path: str
    annotation: int | None = None
    label: str | None = None
    clip: MotionClip | None = field(default=None, compare=False, repr=False)

    def to_payload(self) -> Payload:
        return {
            "path": self.path,
            "annotation": self.annotation,
            "label": self.label,
        }


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    split: str = "train"
    root: Path | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if self.split not in SPLITS:
            m = f"{self.split!r} isn't a split, use one of {SPLITS}"
            raise MolangInvalidArgumentException(m)

    def __len__(self) -> int:
        return len(self.entries)

    def clip_bytes(self, entry: ManifestEntry) -> bytes:
        if entry.clip is not None:
            return entry.clip.to_bytes()
        return self._resolve(entry).read_bytes()

    def load(self, entry: ManifestEntry) -> MotionClip:
        if entry.clip is None:
            entry.clip = load_clip(self._resolve(entry))
        return entry.clip

    def _resolve(self, entry: ManifestEntry) -> Path:
        path = Path(entry.path)
        if self.root is not None and not path.is_absolute():
            path = self.root / path
        return path

    @property
    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        for entry in self.entries:
            digest.update(self.clip_bytes(entry))
        return digest.hexdigest()

    @property
    def labels(self) -> list[str]:
        return sorted({e.label for e in self.entries if e.label})

    def dumps(self) -> str:
        header = {
            "format": MANIFEST_FORMAT,
            "version": MANIFEST_VERSION,
            "split": self.split,
            "fingerprint": self.fingerprint,
        }
        lines = [json.dumps(header, sort_keys=True)]
        lines += [
            json.dumps(e.to_payload(), sort_keys=True) for e in self.entries
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str, root: Path | None = None) -> Self:
        source = str(root or "<manifest>")
        lines = text.splitlines()
        if not lines:
            raise MolangParseException(f"{source}:1:1: empty manifest")

        records = []
        for lineno, line in enumerate(lines, start=1):
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as e:
                m = f"{source}:{lineno}:{e.colno}: {e.msg}"
                raise MolangParseException(m) from e

        header, *rows = records
        if not isinstance(header, dict) or header.get("format") != (
            MANIFEST_FORMAT
        ):
            m = f"{source}:1:1: not a {MANIFEST_FORMAT} file"
            raise MolangParseException(m)

        entries = []
        for lineno, row in enumerate(rows, start=2):
            try:
                entries.append(
                    ManifestEntry(
                        path=str(row["path"]),
                        annotation=row.get("annotation"),
                        label=row.get("label"),
                    )
                )
            except (KeyError, TypeError) as e:
                m = f"{source}:{lineno}:1: malformed entry: {e}"
                raise MolangParseException(m) from e

        try:
            manifest = cls(entries, split=header["split"], root=root)
        except (KeyError, MolangInvalidArgumentException) as e:
            m = f"{source}:1:1: bad manifest header: {e}"
            raise MolangParseException(m) from e

        stored = header.get("fingerprint")
        if stored is not None and stored != manifest.fingerprint:
            LOGGER.warning(f"Manifest {source} fingerprint is stale.")
        return manifest


def load_manifest(path: Path | str) -> DatasetManifest:
    path = Path(path)
    return DatasetManifest.loads(path.read_text(), root=path.parent)


def save_manifest(
    manifest: DatasetManifest, path: Path | str, write_clips: bool = True
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if write_clips:
        for entry in manifest.entries:
            if entry.clip is not None:
                save_clip(entry.clip, path.parent / entry.path)
    manifest.root = path.parent
    path.write_text(manifest.dumps())


def _selected(clip: MotionClip, entry: ManifestEntry) -> MotionClip:
    if entry.annotation is None:
        return clip
    try:
        annotation = clip.annotations[entry.annotation]
    except IndexError as e:
        m = f"{entry.path} has no annotation #{entry.annotation}"
        raise MolangInvalidArgumentException(m) from e
    return MotionClip(clip.fps, clip.frames, [annotation])


def paired_samples(manifest: DatasetManifest) -> Iterator[MotionSample]:
    """One sample per annotation span, transitions excluded."""
    for entry in manifest.entries:
        clip = _selected(manifest.load(entry), entry)
        stem = Path(entry.path).stem
        for w, window in enumerate(normalize_clip(clip)):
            for k, a in enumerate(window.annotations):
                if a.text.strip().lower() == TRANSITION_LABEL:
                    LOGGER.debug(f"Skipping transition in {entry.path}.")
                    continue
                yield MotionSample(
                    sample_id=f"{stem}:{w}:{k}",
                    frames=window.frames[a.start : a.end],
                    text=a.text,
                    label=entry.label or a.text,
                )


def motion_samples(manifest: DatasetManifest) -> Iterator[MotionSample]:
    """Whole normalized windows, for motion-only pretraining."""
    for entry in manifest.entries:
        clip = manifest.load(entry)
        stem = Path(entry.path).stem
        for w, window in enumerate(normalize_clip(clip)):
            yield MotionSample(
                sample_id=f"{stem}:{w}",
                frames=window.frames,
                label=entry.label or "",
            )
