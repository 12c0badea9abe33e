"""Domain types shared by every stage, dataset statistics and on-disk formats.

Choice logs, template manifests and label sets are UTF-8 CSV files with a
header row. Template images are stored as 8-bit PNG files named
``<template_id>.png``; in memory they are float arrays in ``[0, 1]``.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from .exceptions import DataIntegrityError, EmptyDatasetError

DEFAULT_FACE_DIM = 128
DEFAULT_DESIGN_DIM = 1000


class Source(str, Enum):
    INTERNAL = "internal"
    EXTERNAL = "external"


class Exposure(str, Enum):
    CHOSEN = "chosen"
    UNCHOSEN_IN_CHOSEN_THEME = "unchosen_in_chosen_theme"
    COVER_OF_UNCHOSEN_THEME = "cover_of_unchosen_theme"
    EXTERNAL_POSITIVE = "external_positive"

    @property
    def positive(self) -> bool:
        return self in (Exposure.CHOSEN, Exposure.EXTERNAL_POSITIVE)


@dataclass(frozen=True, eq=False)
class ConsumerProfile:
    consumer_id: str
    face_embedding: np.ndarray
    source: Source = Source.INTERNAL

    def __post_init__(self):
        vec = np.asarray(self.face_embedding, dtype=float)
        if vec.ndim != 1 or not np.all(np.isfinite(vec)):
            raise DataIntegrityError(f"consumer {self.consumer_id}: face embedding must be a finite vector")
        object.__setattr__(self, "face_embedding", vec)
        object.__setattr__(self, "source", Source(self.source))

    def __eq__(self, other):
        return (isinstance(other, ConsumerProfile) and self.consumer_id == other.consumer_id
                and self.source == other.source
                and np.array_equal(self.face_embedding, other.face_embedding))


@dataclass(frozen=True, eq=False)
class DesignTemplate:
    template_id: str
    theme_id: str
    image: np.ndarray
    display_rank: int | None = None
    is_cover: bool = False
    source: Source = Source.INTERNAL

    def __post_init__(self):
        img = np.asarray(self.image, dtype=float)
        if img.ndim != 3 or img.shape[2] != 3:
            raise DataIntegrityError(f"template {self.template_id}: image must be HxWx3, got {img.shape}")
        if img.size and (img.min() < 0.0 or img.max() > 1.0):
            raise DataIntegrityError(f"template {self.template_id}: image values outside [0, 1]")
        object.__setattr__(self, "image", img)
        object.__setattr__(self, "source", Source(self.source))
        if self.display_rank is not None:
            rank = int(self.display_rank)
            if rank < 1:
                raise DataIntegrityError(f"template {self.template_id}: display_rank must be positive")
            object.__setattr__(self, "display_rank", rank)
        if self.source is Source.INTERNAL and self.display_rank is None:
            raise DataIntegrityError(f"internal template {self.template_id} has no display_rank")

    def __eq__(self, other):
        return (isinstance(other, DesignTemplate)
                and (self.template_id, self.theme_id, self.display_rank, self.is_cover, self.source)
                == (other.template_id, other.theme_id, other.display_rank, other.is_cover, other.source)
                and np.array_equal(self.image, other.image))


@dataclass(frozen=True)
class DesignEmbedding:
    template_id: str
    vector: np.ndarray = field(compare=False)


@dataclass(frozen=True)
class ChoiceRecord:
    consumer_id: str
    template_id: str
    outcome: int
    exposure: Exposure

    def __post_init__(self):
        exposure = Exposure(self.exposure)
        object.__setattr__(self, "exposure", exposure)
        outcome = int(self.outcome)
        if outcome not in (0, 1):
            raise DataIntegrityError(f"outcome must be 0 or 1, got {self.outcome!r}")
        if outcome != int(exposure.positive):
            raise DataIntegrityError(
                f"record ({self.consumer_id}, {self.template_id}): outcome {outcome} "
                f"inconsistent with exposure {exposure.value}")
        object.__setattr__(self, "outcome", outcome)


@dataclass(frozen=True)
class LabelEntry:
    template_id: str
    raw_score: float
    bin_value: float = math.nan
    normalized_label: float = math.nan


@dataclass(frozen=True)
class PopularityLabelSet:
    """Per-template popularity scores, bins and normalized GAN labels.

    ``entries`` may hold the same template more than once after small labels
    have been replicated.
    """

    entries: tuple[LabelEntry, ...]

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def template_ids(self) -> list[str]:
        return [e.template_id for e in self.entries]

    @property
    def raw_scores(self) -> np.ndarray:
        return np.array([e.raw_score for e in self.entries], dtype=float)

    @property
    def bin_values(self) -> np.ndarray:
        return np.array([e.bin_value for e in self.entries], dtype=float)

    @property
    def normalized_labels(self) -> np.ndarray:
        return np.array([e.normalized_label for e in self.entries], dtype=float)

    def counts(self) -> dict[float, int]:
        values, counts = np.unique(self.bin_values, return_counts=True)
        return {float(v): int(c) for v, c in zip(values, counts)}

    @classmethod
    def from_scores(cls, scores: dict[str, float] | Iterable[tuple[str, float]]) -> "PopularityLabelSet":
        items = scores.items() if isinstance(scores, dict) else scores
        return cls(tuple(LabelEntry(str(t), float(s)) for t, s in items))


@dataclass(frozen=True)
class DatasetStats:
    n_pairs: int
    n_positive: int
    n_negative: int
    positive_rate: float
    split_fractions: tuple[float, ...] = ()


def compute_dataset_stats(records: Sequence[ChoiceRecord], split_fractions=()) -> DatasetStats:
    if len(records) == 0:
        raise EmptyDatasetError("cannot compute statistics of an empty dataset")
    n_pos = sum(r.outcome for r in records)
    n = len(records)
    return DatasetStats(n, n_pos, n - n_pos, n_pos / n, tuple(split_fractions))


def split_test_size(n: int, test_fraction: float) -> int:
    """Round-half-up size of the test side of a split."""
    return int(math.floor(test_fraction * n + 0.5))


def split_train_test(records: Sequence, test_fraction: float, seed=None):
    """Random disjoint partition into ``(train, test)`` lists.

    The test side receives ``round_half_up(test_fraction * n)`` items.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must lie strictly between 0 and 1, got {test_fraction}")
    records = list(records)
    n = len(records)
    n_test = split_test_size(n, test_fraction)
    order = np.random.default_rng(seed).permutation(n)
    test_idx = np.sort(order[:n_test])
    train_idx = np.sort(order[n_test:])
    return [records[i] for i in train_idx], [records[i] for i in test_idx]


# ---------------------------------------------------------------- persistence

CHOICE_COLUMNS = ["consumer_id", "template_id", "outcome", "exposure"]
MANIFEST_COLUMNS = ["template_id", "theme_id", "display_rank", "is_cover", "source"]
LABEL_COLUMNS = ["template_id", "raw_score", "bin_value", "normalized_label"]


def _read_rows(path, columns):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or list(reader.fieldnames[: len(columns)]) != columns:
            raise DataIntegrityError(f"{path}: expected header {columns}, got {reader.fieldnames}")
        return list(reader)


def _write_rows(path, columns, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        writer.writerows(rows)
    os.replace(tmp, path)


def write_choice_records(path, records: Iterable[ChoiceRecord]):
    _write_rows(path, CHOICE_COLUMNS,
                ([r.consumer_id, r.template_id, r.outcome, r.exposure.value] for r in records))


def read_choice_records(path) -> list[ChoiceRecord]:
    return [ChoiceRecord(r["consumer_id"], r["template_id"], int(r["outcome"]), Exposure(r["exposure"]))
            for r in _read_rows(path, CHOICE_COLUMNS)]


def image_to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_image(path, image: np.ndarray):
    Image.fromarray(image_to_uint8(image), mode="RGB").save(path, format="PNG")


def load_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=float) / 255.0


def write_templates(directory, templates: Iterable[DesignTemplate]):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rows = []
    for t in templates:
        save_image(directory / f"{t.template_id}.png", t.image)
        rows.append([t.template_id, t.theme_id, "" if t.display_rank is None else t.display_rank,
                     int(t.is_cover), t.source.value])
    _write_rows(directory / "manifest.csv", MANIFEST_COLUMNS, rows)


def read_templates(directory) -> list[DesignTemplate]:
    directory = Path(directory)
    out = []
    for r in _read_rows(directory / "manifest.csv", MANIFEST_COLUMNS):
        out.append(DesignTemplate(
            template_id=r["template_id"],
            theme_id=r["theme_id"],
            image=load_image(directory / f"{r['template_id']}.png"),
            display_rank=int(r["display_rank"]) if r["display_rank"] else None,
            is_cover=bool(int(r["is_cover"])),
            source=Source(r["source"]),
        ))
    return out


def write_label_set(path, labels: PopularityLabelSet):
    _write_rows(path, LABEL_COLUMNS,
                ([e.template_id, repr(e.raw_score), repr(e.bin_value), repr(e.normalized_label)]
                 for e in labels))


def read_label_set(path) -> PopularityLabelSet:
    return PopularityLabelSet(tuple(
        LabelEntry(r["template_id"], float(r["raw_score"]), float(r["bin_value"]), float(r["normalized_label"]))
        for r in _read_rows(path, LABEL_COLUMNS)))


def check_cover_invariant(templates: Iterable[DesignTemplate]):
    """Every theme must have exactly one internal cover template."""
    covers: dict[str, int] = {}
    for t in templates:
        if t.source is Source.INTERNAL:
            covers.setdefault(t.theme_id, 0)
            covers[t.theme_id] += int(t.is_cover)
    bad = sorted(theme for theme, n in covers.items() if n != 1)
    if bad:
        raise DataIntegrityError(f"themes without exactly one cover template: {bad}")
