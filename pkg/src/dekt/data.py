"""Interaction logs: parsing, vocabularies, fixed-length sequences and folds."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from datetime import datetime
from typing import Iterable, Sequence

import numpy as np

EMOTIONS = ("concentration", "boredom", "confusion", "frustration")
CSV_COLUMNS = (
    "student_id",
    "exercise_id",
    "concept_ids",
    "timestamp",
    "answer_time_s",
    "correct",
    *EMOTIONS,
)
MAX_INTERVAL_MIN = 43200
MAX_ANSWER_TIME_S = 3600
# fixed sequence lengths for the three reference datasets
PRESET_LENGTHS = {"assist2012": 100, "assistchall": 500, "ednet-kt1": 150}


class DataError(ValueError):
    pass


class MalformedRow(DataError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class UnknownToken(DataError):
    pass


@dataclass
class InteractionRecord:
    student_id: str
    exercise_id: str
    concept_ids: tuple[str, ...]
    answer_time: float
    interval_time: float
    correct: int
    emotions: tuple[float, float, float, float] | None = None
    timestamp: float = 0.0

    def __post_init__(self):
        if not self.concept_ids:
            raise DataError(f"exercise {self.exercise_id!r} has no concepts")
        if self.correct not in (0, 1):
            raise DataError(f"correct must be 0 or 1, got {self.correct!r}")
        if self.answer_time < 0 or self.interval_time < 0:
            raise DataError("negative time")
        if self.emotions is not None:
            if len(self.emotions) != 4 or not all(0.0 <= v <= 1.0 for v in self.emotions):
                raise DataError(f"emotions must be four values in [0, 1], got {self.emotions}")


def has_emotions(records: Sequence[InteractionRecord]) -> bool:
    """True when every record carries emotions; False when none does."""
    flags = {r.emotions is not None for r in records}
    if len(flags) > 1:
        raise DataError("mixed emotion presence within one dataset")
    return flags == {True}


# ---------------------------------------------------------------------------
# parsing


@dataclass
class ColumnMapping:
    """Maps the canonical columns onto a foreign CSV layout.

    ``timestamp_format`` is a ``strptime`` pattern; ``None`` means numeric
    seconds. ``answer_time_scale`` converts the answer-time column to seconds
    (0.001 for milliseconds). Emotion columns may be left unmapped for
    emotionless datasets.
    """

    columns: dict[str, str] = field(default_factory=lambda: {c: c for c in CSV_COLUMNS})
    concept_sep: str = ";"
    timestamp_format: str | None = None
    answer_time_scale: float = 1.0

    @classmethod
    def from_json(cls, text: str) -> "ColumnMapping":
        raw = json.loads(text)
        cols = {c: c for c in CSV_COLUMNS}
        cols.update(raw.get("columns", {}))
        return cls(
            columns=cols,
            concept_sep=raw.get("concept_sep", ";"),
            timestamp_format=raw.get("timestamp_format"),
            answer_time_scale=float(raw.get("answer_time_scale", 1.0)),
        )


def _parse_time(text: str, fmt: str | None) -> float:
    if fmt is None:
        return float(text)
    return datetime.strptime(text, fmt).timestamp()


def parse_interactions(
    source: str | bytes | io.IOBase, mapping: ColumnMapping | None = None
) -> list[InteractionRecord]:
    """Read an interaction CSV into records sorted by (student, timestamp)."""
    mapping = mapping or ColumnMapping()
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    if isinstance(source, str):
        source = io.StringIO(source)
    elif isinstance(source, io.BufferedIOBase) or "b" in getattr(source, "mode", ""):
        source = io.TextIOWrapper(source, encoding="utf-8")
    reader = csv.DictReader(source)
    cols = mapping.columns
    required = ["student_id", "exercise_id", "concept_ids", "timestamp", "answer_time_s", "correct"]
    header = reader.fieldnames or []
    missing = [c for c in required if cols[c] not in header]
    if missing:
        raise MalformedRow(1, f"missing columns {missing}")
    emo_cols = [cols[e] for e in EMOTIONS if cols.get(e) in header]

    raw = []
    for row in reader:
        line = reader.line_num
        try:
            correct = row[cols["correct"]].strip()
            if correct not in ("0", "1"):
                raise ValueError(f"correct must be 0 or 1, got {correct!r}")
            concepts = tuple(c for c in row[cols["concept_ids"]].split(mapping.concept_sep) if c)
            if not concepts:
                raise ValueError("empty concept list")
            ts = _parse_time(row[cols["timestamp"]].strip(), mapping.timestamp_format)
            at = float(row[cols["answer_time_s"]]) * mapping.answer_time_scale
            if ts < 0 or at < 0 or not (math.isfinite(ts) and math.isfinite(at)):
                raise ValueError("negative or non-finite time")
            cells = [row[c].strip() for c in emo_cols]
            if len(emo_cols) < 4 or all(c == "" for c in cells):
                emotions = None
            elif any(c == "" for c in cells):
                raise ValueError("emotion columns partially populated")
            else:
                emotions = tuple(float(c) for c in cells)
                if not all(0.0 <= v <= 1.0 for v in emotions):
                    raise ValueError("emotion value outside [0, 1]")
        except (ValueError, TypeError, KeyError) as exc:
            raise MalformedRow(line, str(exc)) from None
        raw.append((row[cols["student_id"]], ts, row[cols["exercise_id"]], concepts, at, int(correct), emotions))

    raw.sort(key=lambda r: (r[0], r[1]))
    records = []
    prev_student, prev_ts = None, 0.0
    for sid, ts, ex, concepts, at, correct, emotions in raw:
        interval = 0.0 if sid != prev_student else min((ts - prev_ts) / 60.0, MAX_INTERVAL_MIN)
        records.append(
            InteractionRecord(sid, ex, concepts, min(at, MAX_ANSWER_TIME_S), interval, correct, emotions, ts)
        )
        prev_student, prev_ts = sid, ts
    has_emotions(records)
    return records


def write_interactions(records: Iterable[InteractionRecord], out: io.TextIOBase) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in records:
        emo = [repr(float(v)) for v in r.emotions] if r.emotions is not None else [""] * 4
        ts = int(r.timestamp) if float(r.timestamp).is_integer() else repr(r.timestamp)
        at = int(r.answer_time) if float(r.answer_time).is_integer() else repr(r.answer_time)
        writer.writerow([r.student_id, r.exercise_id, ";".join(r.concept_ids), ts, at, r.correct, *emo])


# ---------------------------------------------------------------------------
# categorical encodings


def discretize_emotion(v: float, bins: int) -> int:
    """Bin index of an emotion value; padding offset is the caller's job."""
    if bins < 1:
        raise ValueError("bins must be >= 1")
    if not 0.0 <= v <= 1.0:
        raise ValueError(f"emotion value {v} outside [0, 1]")
    return min(int(math.floor(v * bins)), bins - 1)


def discretize_emotions(values: np.ndarray, bins: int) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if bins < 1:
        raise ValueError("bins must be >= 1")
    if np.any((values < 0) | (values > 1)):
        raise ValueError("emotion values outside [0, 1]")
    return np.minimum(np.floor(values * bins).astype(np.int64), bins - 1)


def answer_time_token(seconds: float) -> int:
    return int(round(min(seconds, MAX_ANSWER_TIME_S)))


def interval_token(minutes: float) -> int:
    return int(math.floor(min(minutes, MAX_INTERVAL_MIN)))


@dataclass
class Vocabulary:
    """Token -> index tables; index 0 is padding in every table."""

    exercise: dict[str, int]
    concept: dict[str, int]
    answer_time: dict[int, int]
    interval_time: dict[int, int]
    bins: int
    frozen: bool = False

    @property
    def sizes(self) -> dict[str, int]:
        return {
            "exercise": len(self.exercise) + 1,
            "concept": len(self.concept) + 1,
            "answer_time": len(self.answer_time) + 1,
            "interval_time": len(self.interval_time) + 1,
            "emotion": self.bins + 1,
        }

    @property
    def n_concepts(self) -> int:
        return len(self.concept)

    @classmethod
    def build(cls, records: Sequence[InteractionRecord], bins: int) -> "Vocabulary":
        def table(tokens):
            return {tok: i + 1 for i, tok in enumerate(sorted(set(tokens)))}

        return cls(
            exercise=table(r.exercise_id for r in records),
            concept=table(c for r in records for c in r.concept_ids),
            answer_time=table(answer_time_token(r.answer_time) for r in records),
            interval_time=table(interval_token(r.interval_time) for r in records),
            bins=bins,
        )

    def freeze(self) -> "Vocabulary":
        return Vocabulary(self.exercise, self.concept, self.answer_time, self.interval_time, self.bins, True)

    def encode(self, field_name: str, token) -> int:
        table = getattr(self, field_name)
        idx = table.get(token)
        if idx is None:
            if self.frozen:
                raise UnknownToken(f"unknown {field_name} token {token!r}")
            idx = len(table) + 1
            table[token] = idx
        return idx

    def to_json(self) -> dict:
        return {
            "exercise": self.exercise,
            "concept": self.concept,
            "answer_time": {str(k): v for k, v in self.answer_time.items()},
            "interval_time": {str(k): v for k, v in self.interval_time.items()},
            "bins": self.bins,
        }

    @classmethod
    def from_json(cls, raw: dict, frozen: bool = True) -> "Vocabulary":
        return cls(
            exercise=dict(raw["exercise"]),
            concept=dict(raw["concept"]),
            answer_time={int(k): v for k, v in raw["answer_time"].items()},
            interval_time={int(k): v for k, v in raw["interval_time"].items()},
            bins=int(raw["bins"]),
            frozen=frozen,
        )


# ---------------------------------------------------------------------------
# sequences


@dataclass
class StudentSequence:
    student_id: str
    exercise: np.ndarray  # (L,) int
    concept: np.ndarray  # (L,) int, first concept
    answer_time: np.ndarray
    interval_time: np.ndarray
    answer: np.ndarray  # 0 pad, 1 incorrect, 2 correct
    emotion_bins: np.ndarray  # (L, 4), bin + 1, 0 pad
    emotion_values: np.ndarray  # (L, 4) raw values, 0 on padding / emotionless
    mask: np.ndarray  # (L,) 1.0 valid
    real_length: int
    chunk: int = 0

    @property
    def length(self) -> int:
        return len(self.mask)


def build_sequences(
    records: Sequence[InteractionRecord], length: int, vocab: Vocabulary, bins: int | None = None
) -> list[StudentSequence]:
    """Split each student's ordered history into zero-padded chunks of ``length``."""
    if length < 2:
        raise ValueError("sequence length must be >= 2")
    bins = vocab.bins if bins is None else bins
    by_student: dict[str, list[InteractionRecord]] = {}
    for r in records:
        by_student.setdefault(r.student_id, []).append(r)

    out = []
    for sid, recs in by_student.items():
        for chunk, start in enumerate(range(0, len(recs), length)):
            part = recs[start : start + length]
            n = len(part)
            ints = np.zeros((5, length), dtype=np.int64)
            emo_vals = np.zeros((length, 4))
            emo_bins = np.zeros((length, 4), dtype=np.int64)
            for t, r in enumerate(part):
                ints[0, t] = vocab.encode("exercise", r.exercise_id)
                ints[1, t] = vocab.encode("concept", r.concept_ids[0])
                ints[2, t] = vocab.encode("answer_time", answer_time_token(r.answer_time))
                ints[3, t] = vocab.encode("interval_time", interval_token(r.interval_time))
                ints[4, t] = r.correct + 1
                if r.emotions is not None:
                    emo_vals[t] = r.emotions
                    emo_bins[t] = discretize_emotions(np.asarray(r.emotions), bins) + 1
            mask = np.zeros(length)
            mask[:n] = 1.0
            out.append(
                StudentSequence(sid, ints[0], ints[1], ints[2], ints[3], ints[4], emo_bins, emo_vals, mask, n, chunk)
            )
    return out


@dataclass
class Batch:
    """Time-major stacking of sequences: every array is (B, L[, 4])."""

    exercise: np.ndarray
    answer_time: np.ndarray
    interval_time: np.ndarray
    answer: np.ndarray
    emotion_bins: np.ndarray
    emotion_values: np.ndarray
    mask: np.ndarray
    student_ids: list[str]

    @property
    def size(self) -> int:
        return self.exercise.shape[0]

    @property
    def length(self) -> int:
        return self.exercise.shape[1]

    @classmethod
    def from_sequences(cls, seqs: Sequence[StudentSequence]) -> "Batch":
        return cls(
            exercise=np.stack([s.exercise for s in seqs]),
            answer_time=np.stack([s.answer_time for s in seqs]),
            interval_time=np.stack([s.interval_time for s in seqs]),
            answer=np.stack([s.answer for s in seqs]),
            emotion_bins=np.stack([s.emotion_bins for s in seqs]),
            emotion_values=np.stack([s.emotion_values for s in seqs]),
            mask=np.stack([s.mask for s in seqs]),
            student_ids=[s.student_id for s in seqs],
        )

    def padded(self, extra: int) -> "Batch":
        """Copy with ``extra`` padding steps appended to every sequence."""

        def pad(a):
            widths = [(0, 0), (0, extra)] + [(0, 0)] * (a.ndim - 2)
            return np.pad(a, widths)

        return Batch(
            pad(self.exercise),
            pad(self.answer_time),
            pad(self.interval_time),
            pad(self.answer),
            pad(self.emotion_bins),
            pad(self.emotion_values),
            pad(self.mask),
            list(self.student_ids),
        )


# ---------------------------------------------------------------------------
# folds


@dataclass
class Fold:
    train: list[str]
    validation: list[str]
    test: list[str]


def split_folds(student_ids: Sequence[str], k: int = 5, val_fraction: float = 0.2, seed: int = 0) -> list[Fold]:
    """k-fold partition by student; non-test students split train/validation."""
    ids = list(student_ids)
    if len(set(ids)) != len(ids):
        raise ValueError("student ids must be distinct")
    if k < 2:
        raise ValueError("k must be >= 2")
    if len(ids) < k:
        raise ValueError(f"{len(ids)} students cannot fill {k} folds")
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(len(ids))]
    parts = [list(p) for p in np.array_split(np.array(order, dtype=object), k)]
    folds = []
    for i in range(k):
        rest = [s for j, p in enumerate(parts) if j != i for s in p]
        rest = [rest[j] for j in rng.permutation(len(rest))]
        n_val = int(round(len(rest) * val_fraction))
        folds.append(Fold(train=rest[n_val:], validation=rest[:n_val], test=parts[i]))
    return folds


# ---------------------------------------------------------------------------
# Q-matrix


def build_qmatrix(
    records: Sequence[InteractionRecord] | dict[str, Sequence[str]],
    vocab: Vocabulary,
    multi_hot: bool = False,
) -> np.ndarray:
    """Exercise-index -> concept-weight rows over the ``vocab.n_concepts`` concepts.

    Row 0 (padding exercise) is all zeros; every other row sums to one.
    """
    if isinstance(records, dict):
        concepts_of = {ex: tuple(cs) for ex, cs in records.items()}
    else:
        concepts_of = {}
        for r in records:
            concepts_of.setdefault(r.exercise_id, r.concept_ids)
    q = np.zeros((len(vocab.exercise) + 1, vocab.n_concepts))
    for ex, idx in vocab.exercise.items():
        cs = concepts_of.get(ex)
        if not cs:
            raise DataError(f"exercise {ex!r} has an empty concept list")
        if multi_hot:
            uniq = list(dict.fromkeys(cs))
            for c in uniq:
                q[idx, vocab.concept[c] - 1] += 1.0 / len(uniq)
        else:
            q[idx, vocab.concept[cs[0]] - 1] = 1.0
    return q


def read_qmatrix_csv(source: io.TextIOBase, sep: str = ";") -> dict[str, tuple[str, ...]]:
    out = {}
    for row in csv.DictReader(source):
        out[row["exercise_id"]] = tuple(c for c in row["concept_ids"].split(sep) if c)
    return out


def write_qmatrix_csv(concepts_of: dict[str, Sequence[str]], out: io.TextIOBase) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["exercise_id", "concept_ids"])
    for ex in sorted(concepts_of):
        writer.writerow([ex, ";".join(concepts_of[ex])])
