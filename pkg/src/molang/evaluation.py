"""Recognition and retrieval protocols.

Recognition encodes every label text once and predicts, per clip, the label
whose projection is most similar to the clip's. Retrieval asks, for a label
text, which of a fixed set of candidate clips matches it. Exact ties always
go to the lowest index.
"""

from __future__ import annotations

import hashlib
import logging
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
import pandas as pd
import torch

from molang.batch import collate
from molang.config import data_threads
from molang.exception import (
    MolangContractException,
    MolangInvalidArgumentException,
)
from molang.model import MoLang, evaluating

if TYPE_CHECKING:
    from collections.abc import Sequence

    from molang.dataset import MotionSample
    from molang.motion_encoder import MotionEncoder
    from molang.typing import FloatArray, IntArray

LOGGER = logging.getLogger("molang")

RETRIEVAL_CANDIDATES = 15
EMBEDDING_TOLERANCE = 1e-5


def embed_motions(
    encoder: MotionEncoder,
    samples: Sequence[MotionSample],
    batch_size: int = 128,
) -> FloatArray:
    """Unmasked unit-norm projections, ``N x p`` in sample order."""
    chunks = [
        samples[i : i + batch_size] for i in range(0, len(samples), batch_size)
    ]
    # Batch order is fixed by ``chunks``; threads only collate.
    with ThreadPoolExecutor(max_workers=data_threads()) as pool:
        pad = partial(collate, max_frames=encoder.config.max_len)
        batches = list(pool.map(pad, chunks))

    out = []
    with evaluating(encoder):
        for batch in batches:
            _, projected, _ = encoder(batch.motion, batch.validity)
            out.append(projected.double().numpy())
    return np.concatenate(out) if out else np.zeros((0, 0))


def embed_texts(model: MoLang, texts: Sequence[str]) -> FloatArray:
    with evaluating(model):
        return model.encode_texts(list(texts)).double().numpy()


def ranked(similarities: FloatArray) -> IntArray:
    """Indices by descending similarity, ties in index order."""
    return np.argsort(-similarities, axis=-1, kind="stable")


@dataclass
class RecognitionResult:
    accuracy: float
    labels: list[str]
    sample_ids: list[str]
    truth: IntArray
    predictions: IntArray
    similarities: FloatArray
    confusion: IntArray

    def top_k(self, k: int = 3) -> IntArray:
        return ranked(self.similarities)[:, :k]

    def to_dict(self) -> dict[str, object]:
        return {
            "accuracy": self.accuracy,
            "labels": self.labels,
            "clips": len(self.sample_ids),
        }


def eval_recognition(
    model: MoLang,
    samples: Sequence[MotionSample],
    label_texts: Sequence[str],
    batch_size: int = 128,
) -> RecognitionResult:
    if not label_texts:
        raise MolangInvalidArgumentException("no label texts to recognize")
    labels = list(label_texts)
    index = {label: i for i, label in enumerate(labels)}
    unknown = sorted({s.label for s in samples} - set(index))
    if unknown:
        m = f"clips carry labels outside the label set: {unknown}"
        raise MolangInvalidArgumentException(m)
    if not samples:
        raise MolangInvalidArgumentException("no clips to recognize")

    label_vecs = embed_texts(model, labels)
    motion_vecs = embed_motions(model.motion, samples, batch_size)
    similarities = motion_vecs @ label_vecs.T

    truth = np.array([index[s.label] for s in samples])
    predictions = ranked(similarities)[:, 0]
    confusion = np.zeros((len(labels), len(labels)), dtype=np.int64)
    np.add.at(confusion, (truth, predictions), 1)

    accuracy = float(np.mean(truth == predictions))
    LOGGER.info(f"Recognition accuracy {accuracy:.4f}, {len(samples)} clips.")
    return RecognitionResult(
        accuracy=accuracy,
        labels=labels,
        sample_ids=[s.sample_id for s in samples],
        truth=truth,
        predictions=predictions,
        similarities=similarities,
        confusion=confusion,
    )


@dataclass(frozen=True)
class RetrievalQuestion:
    query: str
    candidates: tuple[str, ...]
    answer: int

    def __post_init__(self) -> None:
        if not 0 <= self.answer < len(self.candidates):
            n = len(self.candidates)
            m = f"answer {self.answer} is outside {n} candidates"
            raise MolangInvalidArgumentException(m)
        if len(set(self.candidates)) != len(self.candidates):
            raise MolangInvalidArgumentException("candidates repeat a clip")

    @property
    def correct(self) -> str:
        return self.candidates[self.answer]


def build_retrieval_questions(
    samples: Sequence[MotionSample],
    n_labels: int = 8,
    n_questions: int = 200,
    seed: int = 0,
    n_candidates: int = RETRIEVAL_CANDIDATES,
) -> list[RetrievalQuestion]:
    """Multiple-choice questions over the ``n_labels`` most frequent labels.

    Each question holds one clip of the query label and ``n_candidates - 1``
    distractors whose labels cycle through a shuffled list of the other
    labels, so distractor labels are as distinct as the label count allows.
    """
    if n_labels < 2 or n_candidates < 2:
        m = f"need >= 2 labels and candidates, got {n_labels}/{n_candidates}"
        raise MolangInvalidArgumentException(m)

    groups: dict[str, list[str]] = defaultdict(list)
    for s in samples:
        groups[s.label].append(s.sample_id)
    counts = Counter({label: len(ids) for label, ids in groups.items()})
    eligible = sorted(
        (label for label, n in counts.items() if n >= 2),
        key=lambda label: (-counts[label], label),
    )
    if len(eligible) < n_labels:
        m = (
            f"{n_labels} labels with >= 2 clips needed, found "
            f"{len(eligible)} (short by {n_labels - len(eligible)})"
        )
        raise MolangInvalidArgumentException(m)

    labels = eligible[:n_labels]
    pool = sum(counts[label] for label in labels)
    if pool - max(counts[label] for label in labels) < n_candidates - 1:
        m = (
            f"{pool} clips over {n_labels} labels can't supply "
            f"{n_candidates - 1} distractors per question"
        )
        raise MolangInvalidArgumentException(m)

    rng = np.random.default_rng(seed)
    questions = []
    for _ in range(n_questions):
        query = labels[rng.integers(len(labels))]
        correct = groups[query][rng.integers(len(groups[query]))]
        others = [labels[i] for i in rng.permutation(len(labels))]
        others = [label for label in others if label != query]

        used = {correct}
        distractors = []
        for k in range(n_candidates - 1):
            label = others[k % len(others)]
            free = [i for i in groups[label] if i not in used]
            if not free:
                free = [
                    i for o in others for i in groups[o] if i not in used
                ]
            pick = free[rng.integers(len(free))]
            used.add(pick)
            distractors.append(pick)

        candidates = [correct, *distractors]
        order = rng.permutation(n_candidates)
        questions.append(
            RetrievalQuestion(
                query=query,
                candidates=tuple(candidates[i] for i in order),
                answer=int(np.flatnonzero(order == 0)[0]),
            )
        )
    return questions


@dataclass
class RetrievalResult:
    top1: float
    top3: float
    ranks: list[int] = field(default_factory=list)

    def to_dict(self) -> dict[str, object]:
        return {
            "top1": self.top1,
            "top3": self.top3,
            "questions": len(self.ranks),
        }


def eval_retrieval(
    model: MoLang,
    samples: Sequence[MotionSample],
    questions: Sequence[RetrievalQuestion],
    batch_size: int = 128,
) -> RetrievalResult:
    """Rank each question's candidates by text-to-motion similarity."""
    if not questions:
        raise MolangInvalidArgumentException("no retrieval questions")

    by_id = {s.sample_id: s for s in samples}
    clip_ids = sorted({c for q in questions for c in q.candidates})
    missing = [c for c in clip_ids if c not in by_id]
    if missing:
        m = f"questions reference unknown clips {missing[:5]}"
        raise MolangInvalidArgumentException(m)
    queries = sorted({q.query for q in questions})

    motion_vecs = embed_motions(
        model.motion, [by_id[c] for c in clip_ids], batch_size
    )
    text_vecs = embed_texts(model, queries)
    row = {c: i for i, c in enumerate(clip_ids)}
    column = {t: i for i, t in enumerate(queries)}

    ranks = []
    for q in questions:
        sims = motion_vecs[[row[c] for c in q.candidates]] @ (
            text_vecs[column[q.query]]
        )
        order = ranked(sims)
        ranks.append(int(np.flatnonzero(order == q.answer)[0]) + 1)

    r = np.array(ranks)
    result = RetrievalResult(
        top1=float(np.mean(r <= 1)), top3=float(np.mean(r <= 3)), ranks=ranks
    )
    LOGGER.info(
        f"Retrieval top-1 {result.top1:.4f}, top-3 {result.top3:.4f} on "
        f"{len(questions)} questions."
    )
    return result


def write_recognition_artifacts(
    result: RecognitionResult, out_dir: Path | str, label_of: Sequence[str]
) -> list[Path]:
    """Confusion matrix and similarity CSVs plus the top-3 text dump."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    confusion = pd.DataFrame(
        result.confusion, index=result.labels, columns=result.labels
    )
    confusion.index.name = "label"
    confusion.to_csv(out_dir / "confusion.csv")

    sims = pd.DataFrame(result.similarities, columns=result.labels)
    predicted = [result.labels[i] for i in result.predictions]
    sims.insert(0, "predicted", predicted)
    sims.insert(0, "label", list(label_of))
    sims.insert(0, "clip", result.sample_ids)
    sims.to_csv(
        out_dir / "similarities.csv", index=False, float_format="%.6f"
    )

    lines = []
    for i, top in enumerate(result.top_k(3)):
        ranked_labels = " ".join(
            f"{k}. {result.labels[j]} ({result.similarities[i, j]:.4f})"
            for k, j in enumerate(top, start=1)
        )
        clip = result.sample_ids[i]
        lines.append(f"clip {clip} [{label_of[i]}]: {ranked_labels}")
    (out_dir / "top3.txt").write_text("\n".join(lines) + "\n")

    return [
        out_dir / "confusion.csv",
        out_dir / "similarities.csv",
        out_dir / "top3.txt",
    ]


def write_retrieval_artifacts(
    result: RetrievalResult,
    questions: Sequence[RetrievalQuestion],
    out_dir: Path | str,
) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(
        {
            "question": range(len(questions)),
            "query": [q.query for q in questions],
            "correct": [q.correct for q in questions],
            "rank": result.ranks,
        }
    )
    path = out_dir / "ranks.csv"
    frame.to_csv(path, index=False)
    return path


def export_embeddings(
    ids: Sequence[str],
    labels: Sequence[str],
    vectors: FloatArray,
    path: Path | str,
) -> Path:
    """One row per item: id, label, then the projected components."""
    if len(ids) != len(vectors) or len(labels) != len(vectors):
        m = f"{len(ids)} ids, {len(labels)} labels, {len(vectors)} vectors"
        raise MolangInvalidArgumentException(m)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    dim = vectors.shape[1] if vectors.ndim == 2 else 0
    frame = pd.DataFrame(vectors, columns=[f"v{i}" for i in range(dim)])
    frame.insert(0, "label", list(labels))
    frame.insert(0, "id", list(ids))
    frame.to_csv(path, index=False, float_format="%.9g")
    return path


def read_embeddings(
    path: Path | str,
) -> tuple[list[str], list[str], FloatArray]:
    frame = pd.read_csv(path, dtype={"id": str, "label": str})
    vectors = frame.drop(columns=["id", "label"]).to_numpy(dtype=np.float64)
    norms = np.linalg.norm(vectors, axis=1)
    if len(norms) and np.abs(norms - 1.0).max() > EMBEDDING_TOLERANCE:
        m = f"{path} holds vectors that aren't unit norm"
        raise MolangContractException(m)
    return frame["id"].tolist(), frame["label"].fillna("").tolist(), vectors


def parameter_checksum(model: torch.nn.Module) -> str:
    """Digest of every parameter and buffer in the state dict."""
    digest = hashlib.sha256()
    for name, tensor in sorted(model.state_dict().items()):
        digest.update(name.encode())
        digest.update(tensor.detach().cpu().numpy().tobytes())
    return digest.hexdigest()
