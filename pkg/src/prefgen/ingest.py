"""Turn order logs and user photos into choice records and design templates."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from PIL import Image
from scipy import ndimage

from .data import (ChoiceRecord, DesignTemplate, Exposure, Source, load_image,
                   save_image)
from .exceptions import DataIntegrityError, EmptyDatasetError

FACE_CROP_FRACTION = 0.4


@dataclass(frozen=True)
class ThemePage:
    """One theme as shown on the selection screen."""

    theme_id: str
    cover_template_id: str
    template_ids: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "template_ids", tuple(self.template_ids))
        if self.cover_template_id not in self.template_ids:
            raise DataIntegrityError(f"theme {self.theme_id}: cover {self.cover_template_id} not among its templates")


@dataclass(frozen=True)
class RawOrderEvent:
    consumer_id: str
    chosen_theme_ids: frozenset
    chosen_template_ids: frozenset
    visible_theme_pages: tuple[ThemePage, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "chosen_theme_ids", frozenset(self.chosen_theme_ids))
        object.__setattr__(self, "chosen_template_ids", frozenset(self.chosen_template_ids))
        object.__setattr__(self, "visible_theme_pages", tuple(self.visible_theme_pages))


@dataclass(frozen=True, eq=False)
class ExternalPhoto:
    photo_id: str
    image: np.ndarray
    person_mask: np.ndarray

    def __post_init__(self):
        image = np.asarray(self.image, dtype=float)
        mask = np.asarray(self.person_mask).astype(bool)
        if image.ndim != 3 or mask.shape != image.shape[:2]:
            raise DataIntegrityError(f"photo {self.photo_id}: mask shape {mask.shape} does not match image {image.shape}")
        if not mask.any():
            raise DataIntegrityError(f"photo {self.photo_id}: person mask is empty")
        object.__setattr__(self, "image", image)
        object.__setattr__(self, "person_mask", mask)


def build_choice_records(events: Iterable[RawOrderEvent]) -> list[ChoiceRecord]:
    """Expand order events into labelled consumer-template pairs.

    Every template of a chosen theme yields a record (positive when the
    template itself was photographed); an unchosen theme contributes only its
    cover template, as a negative. Other templates of unchosen themes were
    never seen and produce nothing.
    """
    records = []
    for ev in events:
        pages = {p.theme_id: p for p in ev.visible_theme_pages}
        unknown = ev.chosen_theme_ids - pages.keys()
        if unknown:
            raise DataIntegrityError(f"consumer {ev.consumer_id}: chosen themes {sorted(unknown)} were not shown")
        allowed = set()
        for theme in ev.chosen_theme_ids:
            allowed.update(pages[theme].template_ids)
        stray = ev.chosen_template_ids - allowed
        if stray:
            raise DataIntegrityError(
                f"consumer {ev.consumer_id}: chosen templates {sorted(stray)} lie outside the chosen themes")
        for page in ev.visible_theme_pages:
            if page.theme_id in ev.chosen_theme_ids:
                for tid in page.template_ids:
                    if tid in ev.chosen_template_ids:
                        records.append(ChoiceRecord(ev.consumer_id, tid, 1, Exposure.CHOSEN))
                    else:
                        records.append(ChoiceRecord(ev.consumer_id, tid, 0, Exposure.UNCHOSEN_IN_CHOSEN_THEME))
            else:
                records.append(ChoiceRecord(ev.consumer_id, page.cover_template_id, 0,
                                            Exposure.COVER_OF_UNCHOSEN_THEME))
    return records


def theme_pages(templates: Iterable[DesignTemplate]) -> list[ThemePage]:
    """Group internal templates into theme pages ordered by theme id then display rank."""
    by_theme: dict[str, list[DesignTemplate]] = {}
    for t in templates:
        if t.source is Source.INTERNAL:
            by_theme.setdefault(t.theme_id, []).append(t)
    pages = []
    for theme in sorted(by_theme):
        members = sorted(by_theme[theme], key=lambda t: (t.display_rank, t.template_id))
        covers = [t.template_id for t in members if t.is_cover]
        if len(covers) != 1:
            raise DataIntegrityError(f"theme {theme} has {len(covers)} cover templates")
        pages.append(ThemePage(theme, covers[0], tuple(t.template_id for t in members)))
    return pages


def neighborhood_mean_inpaint(image: np.ndarray, mask: np.ndarray, tol: float = 1e-7,
                              max_iter: int = 10_000) -> np.ndarray:
    """Fill masked pixels with the iterated mean of their 8-neighbourhood.

    Masked pixels start at the median colour of the unmasked ones and are
    relaxed (Jacobi sweeps) until the largest update falls below ``tol``.
    Unmasked pixels are returned unchanged. Sweeps run on deviations from
    the median so a constant background is reproduced exactly.
    """
    mask = np.asarray(mask, dtype=bool)
    image = np.asarray(image, dtype=float)
    if not mask.any():
        return image.copy()
    base = np.median(image[~mask], axis=0)
    out = image - base
    out[mask] = 0.0
    ring = np.ones((3, 3))
    ring[1, 1] = 0.0
    n_neighbors = ndimage.convolve(np.ones(mask.shape), ring, mode="constant", cval=0.0)
    for _ in range(max_iter):
        sums = np.stack([ndimage.convolve(out[..., c], ring, mode="constant", cval=0.0)
                         for c in range(out.shape[2])], axis=-1)
        update = sums[mask] / n_neighbors[mask][:, None]
        delta = np.max(np.abs(update - out[mask]))
        out[mask] = update
        if delta < tol:
            break
    filled = image.copy()
    filled[mask] = out[mask] + base
    return filled


def face_crop_box(mask: np.ndarray) -> tuple[int, int, int, int]:
    """``(row0, row1, col0, col1)`` of the top part of the mask bounding box."""
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    r0, r1 = rows[0], rows[-1] + 1
    height = max(1, int(math.ceil(FACE_CROP_FRACTION * (r1 - r0))))
    return int(r0), int(r0 + height), int(cols[0]), int(cols[-1] + 1)


def split_external_photo(photo: ExternalPhoto, inpainter: Callable | None = None,
                         theme_id: str = "external") -> tuple[DesignTemplate, np.ndarray]:
    """Separate a user photo into a background template and a face crop."""
    mask = photo.person_mask
    if mask.all():
        raise DataIntegrityError(f"photo {photo.photo_id}: mask covers the whole image, no background left")
    inpainter = inpainter or neighborhood_mean_inpaint
    background = np.asarray(inpainter(photo.image, mask), dtype=float)
    background[~mask] = photo.image[~mask]
    r0, r1, c0, c1 = face_crop_box(mask)
    face = photo.image[r0:r1, c0:c1].copy()
    template = DesignTemplate(photo.photo_id, theme_id, np.clip(background, 0.0, 1.0),
                              display_rank=None, is_cover=False, source=Source.EXTERNAL)
    return template, face


def external_positive(consumer_id: str, template_id: str) -> ChoiceRecord:
    return ChoiceRecord(consumer_id, template_id, 1, Exposure.EXTERNAL_POSITIVE)


def simulate_external_rank(internal_ranks: Sequence[int], n: int, seed=None) -> list[int]:
    """Draw ``n`` ranks i.i.d. from the empirical distribution of internal ranks."""
    ranks = np.asarray(list(internal_ranks), dtype=int)
    if ranks.size == 0:
        raise EmptyDatasetError("no internal ranks to resample from")
    return [int(r) for r in np.random.default_rng(seed).choice(ranks, size=int(n), replace=True)]


# ---------------------------------------------------------------- file formats

ORDER_COLUMNS = ["consumer_id", "chosen_theme_ids", "chosen_template_ids"]


def write_order_log(path, events: Iterable[RawOrderEvent]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(ORDER_COLUMNS)
        for ev in events:
            writer.writerow([ev.consumer_id, ";".join(sorted(ev.chosen_theme_ids)),
                             ";".join(sorted(ev.chosen_template_ids))])


def read_order_log(path, pages: Sequence[ThemePage]) -> list[RawOrderEvent]:
    """Read order events; every session is assumed to have browsed all ``pages``."""
    events = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ORDER_COLUMNS:
            raise DataIntegrityError(f"{path}: expected header {ORDER_COLUMNS}, got {reader.fieldnames}")
        for row in reader:
            split = lambda s: frozenset(x for x in s.split(";") if x)  # noqa: E731
            events.append(RawOrderEvent(row["consumer_id"], split(row["chosen_theme_ids"]),
                                        split(row["chosen_template_ids"]), tuple(pages)))
    return events


def write_external_photo(directory, photo: ExternalPhoto):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_image(directory / f"{photo.photo_id}.png", photo.image)
    Image.fromarray(photo.person_mask.astype(np.uint8) * 255).convert("1").save(
        directory / f"{photo.photo_id}.mask.png")


def read_external_photos(directory) -> list[ExternalPhoto]:
    """Load ``<stem>.png`` / ``<stem>.mask.png`` pairs from a directory."""
    directory = Path(directory)
    photos = []
    for mask_path in sorted(directory.glob("*.mask.png")):
        stem = mask_path.name[: -len(".mask.png")]
        image_path = directory / f"{stem}.png"
        if not image_path.exists():
            raise DataIntegrityError(f"mask {mask_path.name} has no matching image")
        with Image.open(mask_path) as im:
            mask = np.asarray(im.convert("L")) > 127
        photos.append(ExternalPhoto(stem, load_image(image_path), mask))
    return photos


def pages_by_theme(pages: Iterable[ThemePage]) -> Mapping[str, ThemePage]:
    return {p.theme_id: p for p in pages}
