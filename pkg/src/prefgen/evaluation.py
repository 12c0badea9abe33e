"""Scoring generated designs: predicted choice probability, embedding distance
to popular/unpopular templates, and theme hit rate."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted
from torch import nn

from .embeddings import DesignEmbedder
from .exceptions import EmptyDatasetError, SingleClassError
from .ingest import simulate_external_rank
from .predictor import aggregate_popularity_many


# ---------------------------------------------------------------- choice probabilities

@dataclass
class ChoiceProbReport:
    means: dict[str, float]
    baseline: str
    normalized: dict[str, float] = field(init=False)
    deltas: dict[str, float] = field(init=False)
    per_image: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        base = self.means[self.baseline]
        self.normalized = {k: (1.0 if k == self.baseline else v / base) for k, v in self.means.items()}
        self.deltas = {k: v - 1.0 for k, v in self.normalized.items()}

    def write(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["image_set", "mean_choice_prob", "normalized", "delta_pct"])
            for k, v in self.means.items():
                writer.writerow([k, f"{v:.6f}", f"{self.normalized[k]:.4f}", f"{100 * self.deltas[k]:+.2f}%"])


def compare_choice_probs(predictor, image_sets: Mapping[str, Sequence], consumers, internal_ranks,
                         design_embedder: DesignEmbedder | None = None, baseline: str | None = None,
                         seed=None) -> ChoiceProbReport:
    """Mean aggregate popularity of every image set, relative to a baseline set.

    Each image gets a display rank drawn from the empirical internal rank
    distribution, as for external templates.
    """
    embedder = design_embedder if design_embedder is not None else DesignEmbedder().fit()
    rng = np.random.default_rng(seed)
    per_image = {}
    for name, images in image_sets.items():
        if len(images) == 0:
            raise EmptyDatasetError(f"image set {name!r} is empty")
        designs = embedder.transform(list(images))
        ranks = simulate_external_rank(internal_ranks, len(designs), int(rng.integers(2**31 - 1)))
        per_image[name] = aggregate_popularity_many(predictor, designs, ranks, consumers)
    baseline = baseline if baseline is not None else next(iter(image_sets))
    return ChoiceProbReport({k: float(v.mean()) for k, v in per_image.items()}, baseline, per_image)


# ---------------------------------------------------------------- distance metric

@dataclass
class DistanceReport:
    scores: dict[str, np.ndarray]

    @property
    def mean(self) -> dict[str, float]:
        return {k: float(np.mean(v)) for k, v in self.scores.items()}

    @property
    def median(self) -> dict[str, float]:
        return {k: float(np.median(v)) for k, v in self.scores.items()}

    def write(self, path):
        names = list(self.scores)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["statistic"] + names)
            writer.writerow(["Mean"] + [f"{self.mean[k]:.4f}" for k in names])
            writer.writerow(["Median"] + [f"{self.median[k]:.4f}" for k in names])


def select_top_bottom(adoption_counts: Mapping[str, int], k: int = 3):
    """Most and least adopted template ids; ties go to the smaller id."""
    if k < 1 or len(adoption_counts) < 2 * k:
        raise ValueError(f"need at least {2 * k} templates to pick top/bottom {k}")
    ids = sorted(adoption_counts)
    top = sorted(ids, key=lambda t: -adoption_counts[t])[:k]
    bottom = sorted(ids, key=lambda t: adoption_counts[t])[:k]
    return top, bottom


def _embed_all(images_or_vectors, embedder):
    arr = images_or_vectors
    if isinstance(arr, np.ndarray) and arr.ndim == 2:
        return arr.astype(float)
    return embedder.transform(list(arr))


def distance_metric(generated, top, bottom, design_embedder: DesignEmbedder | None = None) -> DistanceReport:
    """Per-image ``D = sum_top d^2 + sum_bottom (1 - d)^2``; lower is better.

    ``generated`` is one set or a mapping of named sets (images, or
    precomputed embeddings as a 2-D array); ``top``/``bottom`` are reference
    images or embeddings. Euclidean distances are min-max scaled to
    ``[0, 1]`` over every generated-reference pair in the call.
    """
    if len(top) == 0 or len(bottom) == 0:
        raise EmptyDatasetError("top and bottom reference sets must be nonempty")
    embedder = design_embedder if design_embedder is not None else DesignEmbedder().fit()
    sets = generated if isinstance(generated, Mapping) else {"generated": generated}
    top_e = _embed_all(top, embedder)
    bottom_e = _embed_all(bottom, embedder)
    refs = np.vstack([top_e, bottom_e])
    raw = {}
    for name, images in sets.items():
        emb = _embed_all(images, embedder)
        if emb.shape[0] == 0:
            raise EmptyDatasetError(f"generated set {name!r} is empty")
        raw[name] = np.linalg.norm(emb[:, None, :] - refs[None, :, :], axis=-1)
    lo = min(d.min() for d in raw.values())
    hi = max(d.max() for d in raw.values())
    span = hi - lo if hi > lo else 1.0
    n_top = top_e.shape[0]
    scores = {}
    for name, d in raw.items():
        d = (d - lo) / span
        scores[name] = (d[:, :n_top] ** 2).sum(axis=1) + ((1.0 - d[:, n_top:]) ** 2).sum(axis=1)
    return DistanceReport(scores)


# ---------------------------------------------------------------- theme classifier

class _SmallCNN(nn.Module):
    def __init__(self, width=16):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(3, width, 3, 2, 1), nn.ReLU(True),
            nn.Conv2d(width, 2 * width, 3, 2, 1), nn.ReLU(True),
            nn.Conv2d(2 * width, 2 * width, 3, 2, 1), nn.ReLU(True),
            nn.AdaptiveAvgPool2d(1), nn.Flatten(),
        )
        self.head = nn.Linear(2 * width, 1)

    def forward(self, x):
        return self.head(self.body(x)).squeeze(-1)


def _to_nchw(images) -> torch.Tensor:
    arr = np.asarray(images, dtype=np.float32)
    if arr.ndim != 4:
        raise ValueError(f"expected an (n, H, W, 3) batch, got {arr.shape}")
    return torch.from_numpy(arr).permute(0, 3, 1, 2).mul(2.0).sub(1.0).contiguous()


class ThemeClassifier(ClassifierMixin, BaseEstimator):
    """Small convolutional in-theme / out-of-theme image classifier."""

    def __init__(self, width=16, epochs=30, batch_size=32, learning_rate=1e-3, seed=0):
        self.width = width
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed

    def fit(self, X, y):
        x = _to_nchw(X)
        y = torch.as_tensor(np.asarray(y), dtype=torch.float32)
        if torch.unique(y).numel() < 2:
            raise SingleClassError("theme classifier needs both classes")
        torch.manual_seed(self.seed)
        gen = torch.Generator().manual_seed(self.seed)
        self.net_ = _SmallCNN(self.width)
        opt = torch.optim.Adam(self.net_.parameters(), lr=self.learning_rate)
        n = x.shape[0]
        pos_weight = (y == 0).sum() / (y == 1).sum()
        loss_fn = nn.BCEWithLogitsLoss(pos_weight=pos_weight)
        self.net_.train()
        for _ in range(self.epochs):
            order = torch.randperm(n, generator=gen)
            for start in range(0, n, self.batch_size):
                idx = order[start:start + self.batch_size]
                loss = loss_fn(self.net_(x[idx]), y[idx])
                opt.zero_grad(set_to_none=True)
                loss.backward()
                opt.step()
        self.net_.eval()
        self.classes_ = np.array([0, 1])
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "net_")
        with torch.no_grad():
            p = torch.sigmoid(self.net_(_to_nchw(X))).numpy().astype(float)
        return np.column_stack([1 - p, p])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(int)


def train_theme_classifier(positives, negatives, seed=0, **params) -> ThemeClassifier:
    if len(positives) == 0 or len(negatives) == 0:
        raise SingleClassError("need both in-theme and out-of-theme images")
    X = np.concatenate([np.asarray(positives), np.asarray(negatives)])
    y = np.concatenate([np.ones(len(positives)), np.zeros(len(negatives))])
    return ThemeClassifier(seed=seed, **params).fit(X, y)


def hit_rate(classifier, generated_images) -> float:
    """Fraction of generated images classified in-theme (probability >= 0.5)."""
    if len(generated_images) == 0:
        raise EmptyDatasetError("no generated images to score")
    return float(np.mean(classifier.predict(np.asarray(generated_images)) == 1))


def write_hit_rate_report(path, rows: Mapping[str, Mapping[str, float]]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["classifier", "accuracy", "fnr", "fpr", "hit_rate"])
        for name, r in rows.items():
            writer.writerow([name] + [f"{r[k]:.4f}" for k in ("accuracy", "fnr", "fpr", "hit_rate")])


# ---------------------------------------------------------------- histograms

def emit_histograms(values: Mapping[str, Sequence[float]], bins=20, out_dir=None, name="histograms",
                    title=None):
    """Bin every series on shared edges; optionally write ``<name>.png`` and ``<name>.csv``.

    Returns ``(edges, {series: counts})``.
    """
    series = {k: np.asarray(v, dtype=float).ravel() for k, v in values.items()}
    if not series or any(v.size == 0 for v in series.values()):
        raise EmptyDatasetError("every histogram series must be nonempty")
    all_values = np.concatenate(list(series.values()))
    if np.isscalar(bins) or np.ndim(bins) == 0:
        edges = np.histogram_bin_edges(all_values, bins=int(bins))
    else:
        edges = np.asarray(bins, dtype=float)
    counts = {k: np.histogram(v, bins=edges)[0] for k, v in series.items()}
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / f"{name}.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bin_lo", "bin_hi"] + list(counts))
            for b in range(len(edges) - 1):
                writer.writerow([f"{edges[b]:.6g}", f"{edges[b + 1]:.6g}"] + [int(c[b]) for c in counts.values()])
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
        fig, ax = plt.subplots(figsize=(6, 4))
        for k, v in series.items():
            ax.hist(v, bins=edges, alpha=0.5, label=k)
        ax.set_xlabel("value")
        ax.set_ylabel("count")
        if title:
            ax.set_title(title)
        ax.legend()
        fig.tight_layout()
        fig.savefig(out_dir / f"{name}.png", dpi=100)
        plt.close(fig)
    return edges, counts
