"""Turn aggregate popularity scores into continuous GAN labels.

Scores inside ``[lo, hi]`` are snapped down to a regular grid (the bin's
lower edge), crowded labels are capped, sparse labels are replicated, and
finally every label is divided by the largest one so the top label is 1.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .data import PopularityLabelSet
from .exceptions import ConfigError, EmptyDatasetError

log = logging.getLogger(__name__)

_GRID_TOL = 1e-9


@dataclass(frozen=True)
class BinningConfig:
    score_range: tuple[float, float] = (0.4, 0.65)
    bin_width: float = 0.025
    per_label_cap: int | None = 200
    min_per_label_replication: int | None = None
    seed: int | None = 0

    def __post_init__(self):
        lo, hi = self.score_range
        if not 0.0 <= lo < hi <= 1.0:
            raise ConfigError(f"score_range must satisfy 0 <= lo < hi <= 1, got {self.score_range}")
        if self.bin_width <= 0:
            raise ConfigError("bin_width must be positive")
        steps = (hi - lo) / self.bin_width
        if abs(steps - round(steps)) > _GRID_TOL * max(1.0, steps):
            raise ConfigError(f"bin_width {self.bin_width} does not divide the range {self.score_range}")
        if self.per_label_cap is not None and self.per_label_cap < 1:
            raise ConfigError("per_label_cap must be at least 1")
        if self.min_per_label_replication is not None:
            if self.min_per_label_replication < 1:
                raise ConfigError("min_per_label_replication must be at least 1")
            if self.per_label_cap is not None and self.min_per_label_replication > self.per_label_cap:
                raise ConfigError("min_per_label_replication cannot exceed per_label_cap")

    @property
    def n_grid(self) -> int:
        lo, hi = self.score_range
        return int(round((hi - lo) / self.bin_width)) + 1

    def grid(self) -> np.ndarray:
        lo = self.score_range[0]
        return np.round(lo + self.bin_width * np.arange(self.n_grid), 12)


def _as_label_set(scores) -> PopularityLabelSet:
    if isinstance(scores, PopularityLabelSet):
        return scores
    return PopularityLabelSet.from_scores(scores)


def bin_popularity(scores, config: BinningConfig) -> PopularityLabelSet:
    """Drop out-of-range scores and snap the rest to the lower edge of their bin."""
    labels = _as_label_set(scores)
    lo, hi = config.score_range
    grid = config.grid()
    kept, dropped = [], 0
    for e in labels:
        if not lo <= e.raw_score <= hi:
            dropped += 1
            continue
        k = min(int(math.floor((e.raw_score - lo) / config.bin_width + _GRID_TOL)), config.n_grid - 1)
        kept.append(replace(e, bin_value=float(grid[k])))
    if dropped:
        log.info("dropped %d of %d scores outside [%g, %g]", dropped, len(labels), lo, hi)
    if not kept:
        raise EmptyDatasetError(f"no popularity scores inside [{lo}, {hi}]")
    return PopularityLabelSet(tuple(kept))


def _groups(labels: PopularityLabelSet) -> dict[float, list[int]]:
    groups: dict[float, list[int]] = {}
    for k, e in enumerate(labels):
        groups.setdefault(e.bin_value, []).append(k)
    return groups


def cap_per_label(labels: PopularityLabelSet, cap: int, seed=None) -> PopularityLabelSet:
    """Subsample (without replacement) every label holding more than ``cap`` entries."""
    if cap < 1:
        raise ValueError("cap must be at least 1")
    rng = np.random.default_rng(seed)
    keep = []
    for value in sorted(g := _groups(labels)):
        idx = g[value]
        keep.extend(idx if len(idx) <= cap else rng.choice(idx, size=cap, replace=False).tolist())
    keep.sort()
    return PopularityLabelSet(tuple(labels.entries[k] for k in keep))


def replicate_small_classes(labels: PopularityLabelSet, min_count: int, seed=None) -> PopularityLabelSet:
    """Pad every label with fewer than ``min_count`` entries by resampling it."""
    if min_count < 1:
        raise ValueError("min_count must be at least 1")
    if len(labels) == 0:
        raise EmptyDatasetError("cannot replicate an empty label set")
    rng = np.random.default_rng(seed)
    entries = list(labels.entries)
    for value in sorted(g := _groups(labels)):
        idx = g[value]
        if len(idx) < min_count:
            extra = rng.choice(idx, size=min_count - len(idx), replace=True)
            entries.extend(labels.entries[k] for k in extra)
    return PopularityLabelSet(tuple(entries))


def normalize_labels(labels: PopularityLabelSet) -> PopularityLabelSet:
    top = float(np.max(labels.bin_values)) if len(labels) else 0.0
    if not top > 0.0:
        raise ValueError("largest bin value must be positive to normalize")
    return PopularityLabelSet(tuple(replace(e, normalized_label=e.bin_value / top) for e in labels))


class PopularityLabeler(TransformerMixin, BaseEstimator):
    """bin -> cap -> replicate -> normalize, as one fitted transformer.

    ``fit`` takes template popularity scores (a mapping or a
    :class:`PopularityLabelSet`); ``label_set_`` holds the result and
    ``summary_`` the per-label counts after each step.
    """

    def __init__(self, score_range=(0.4, 0.65), bin_width=0.025, per_label_cap=200,
                 min_per_label_replication=None, seed=0):
        self.score_range = score_range
        self.bin_width = bin_width
        self.per_label_cap = per_label_cap
        self.min_per_label_replication = min_per_label_replication
        self.seed = seed

    def _config(self) -> BinningConfig:
        return BinningConfig(tuple(self.score_range), self.bin_width, self.per_label_cap,
                             self.min_per_label_replication, self.seed)

    def fit(self, X, y=None):
        cfg = self._config()
        labels = bin_popularity(X, cfg)
        summary = {"binned": labels.counts()}
        if cfg.per_label_cap is not None:
            labels = cap_per_label(labels, cfg.per_label_cap, cfg.seed)
            summary["capped"] = labels.counts()
        if cfg.min_per_label_replication is not None:
            labels = replicate_small_classes(labels, cfg.min_per_label_replication, cfg.seed)
            summary["replicated"] = labels.counts()
        self.label_set_ = normalize_labels(labels)
        self.summary_ = summary
        self.max_bin_value_ = float(np.max(self.label_set_.bin_values))
        return self

    def transform(self, X):
        """Normalized labels for new raw scores, using the fitted grid and maximum."""
        check_is_fitted(self, "label_set_")
        cfg = self._config()
        binned = bin_popularity(X, cfg)
        return np.array([e.bin_value / self.max_bin_value_ for e in binned])

    def fit_transform(self, X, y=None, **fit_params):
        return self.fit(X).label_set_


def write_label_summary(path, summary: dict[str, dict[float, int]]):
    steps = list(summary)
    values = sorted({v for counts in summary.values() for v in counts})
    lines = ["bin_value," + ",".join(steps)]
    for v in values:
        lines.append(f"{v:.6g}," + ",".join(str(summary[s].get(v, 0)) for s in steps))
    Path(path).write_text("\n".join(lines) + "\n")
