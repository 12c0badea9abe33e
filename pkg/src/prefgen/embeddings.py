"""Face and design embedders.

The defaults are seeded random projections of downsampled pixels. They are
deterministic, need no weights and keep the pipeline independent of any
particular network; embeddings computed elsewhere can be loaded from a CSV
file with :func:`load_embeddings`.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .data import DEFAULT_DESIGN_DIM, DEFAULT_FACE_DIM
from .exceptions import DataIntegrityError, DimensionMismatchError, EmptyDatasetError


@dataclass(frozen=True)
class EmbedderSpec:
    kind: str
    output_dim: int
    implementation_id: str = "random-projection-v1"
    seed: int | None = None

    def __post_init__(self):
        if self.kind not in ("face", "design"):
            raise ValueError(f"kind must be 'face' or 'design', got {self.kind!r}")
        if self.output_dim < 1:
            raise ValueError("output_dim must be positive")

    def build(self):
        cls = FaceEmbedder if self.kind == "face" else DesignEmbedder
        if self.seed is None:
            return cls(output_dim=self.output_dim).fit()
        return cls(output_dim=self.output_dim, seed=self.seed).fit()


def _resample(image, grid: int, gray: bool) -> np.ndarray:
    img = np.asarray(image, dtype=float)
    if img.ndim == 2:
        img = img[..., None]
    if img.size == 0 or img.shape[0] == 0 or img.shape[1] == 0:
        raise EmptyDatasetError("cannot embed an empty image")
    if img.min() < 0.0 or img.max() > 1.0:
        raise DataIntegrityError("image values must lie in [0, 1]")
    channels = [img.mean(axis=2)] if gray else [img[..., c] for c in range(img.shape[2])]
    out = []
    for ch in channels:
        if ch.shape == (grid, grid):
            out.append(ch)
        else:
            pil = Image.fromarray(ch.astype(np.float32), mode="F")
            out.append(np.asarray(pil.resize((grid, grid), Image.Resampling.BOX), dtype=float))
    return np.stack(out, axis=-1)


class _ProjectionEmbedder(TransformerMixin, BaseEstimator):
    _gray = False
    _n_channels = 3

    def __init__(self, output_dim=None, grid=16, seed=0, projection=None):
        self.output_dim = output_dim
        self.grid = grid
        self.seed = seed
        self.projection = projection

    def fit(self, X=None, y=None):
        n_in = self.grid * self.grid * self._n_channels
        if self.projection is not None:
            proj = np.asarray(self.projection, dtype=float)
            if proj.shape != (self.output_dim, n_in):
                raise DimensionMismatchError(f"projection must have shape {(self.output_dim, n_in)}, got {proj.shape}")
        else:
            rng = np.random.default_rng(self.seed)
            proj = rng.standard_normal((self.output_dim, n_in)) / np.sqrt(n_in)
        self.components_ = proj
        self.n_features_in_ = n_in
        return self

    def _features(self, image) -> np.ndarray:
        return _resample(image, self.grid, self._gray).ravel()

    def _finish(self, vectors: np.ndarray) -> np.ndarray:
        return vectors

    def transform(self, X: Iterable) -> np.ndarray:
        check_is_fitted(self, "components_")
        images = list(X) if not (isinstance(X, np.ndarray) and X.ndim == 3) else [X]
        if not images:
            return np.empty((0, self.output_dim))
        feats = np.stack([self._features(im) for im in images])
        return self._finish(feats @ self.components_.T)

    def embed(self, image) -> np.ndarray:
        return self.transform([image])[0]


class FaceEmbedder(_ProjectionEmbedder):
    """Unit-norm projection of the mean-centred grayscale face."""

    _gray = True
    _n_channels = 1

    def __init__(self, output_dim=DEFAULT_FACE_DIM, grid=16, seed=0, projection=None):
        super().__init__(output_dim=output_dim, grid=grid, seed=seed, projection=projection)

    def _features(self, image):
        f = super()._features(image)
        return f - f.mean()

    def _finish(self, vectors):
        norms = np.linalg.norm(vectors, axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        return vectors / norms


class DesignEmbedder(_ProjectionEmbedder):
    """Projection of downsampled RGB pixels; outputs are not normalized."""

    def __init__(self, output_dim=DEFAULT_DESIGN_DIM, grid=16, seed=1, projection=None):
        super().__init__(output_dim=output_dim, grid=grid, seed=seed, projection=projection)


_DEFAULT_FACE = None
_DEFAULT_DESIGN = None


def embed_face(image, embedder: FaceEmbedder | None = None) -> np.ndarray:
    global _DEFAULT_FACE
    if embedder is None:
        if _DEFAULT_FACE is None:
            _DEFAULT_FACE = FaceEmbedder().fit()
        embedder = _DEFAULT_FACE
    return embedder.embed(image)


def embed_design(image, embedder: DesignEmbedder | None = None) -> np.ndarray:
    global _DEFAULT_DESIGN
    if embedder is None:
        if _DEFAULT_DESIGN is None:
            _DEFAULT_DESIGN = DesignEmbedder().fit()
        embedder = _DEFAULT_DESIGN
    return embedder.embed(image)


def average_consumer_embedding(vectors: Sequence) -> np.ndarray:
    if len(vectors) == 0:
        raise EmptyDatasetError("no embeddings to average")
    rows = [np.asarray(v, dtype=float).ravel() for v in vectors]
    if len({r.size for r in rows}) != 1:
        raise DimensionMismatchError("embeddings to average must share one length")
    return np.vstack(rows).mean(axis=0)


def save_embeddings(path, embeddings: dict[str, np.ndarray]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        dim = len(next(iter(embeddings.values()))) if embeddings else 0
        writer.writerow(["id"] + [f"v{k}" for k in range(dim)])
        for key, vec in embeddings.items():
            writer.writerow([key] + [repr(float(x)) for x in vec])


def load_embeddings(path, dim: int | None = None) -> dict[str, np.ndarray]:
    """Read an ``id, v0, v1, ...`` CSV file, checking every row has ``dim`` entries."""
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[0] != "id":
            raise DataIntegrityError(f"{path}: missing 'id' header")
        for row in reader:
            vec = np.array([float(x) for x in row[1:]])
            if dim is not None and vec.size != dim:
                raise DimensionMismatchError(f"{path}: embedding for {row[0]!r} has length {vec.size}, expected {dim}")
            if not np.all(np.isfinite(vec)):
                raise DataIntegrityError(f"{path}: embedding for {row[0]!r} is not finite")
            out[row[0]] = vec
    return out
