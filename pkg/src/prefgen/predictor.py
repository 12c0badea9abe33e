"""Consumer choice model: feature construction, class balancing, a random
forest classifier and aggregate popularity scores."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import joblib
import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.ensemble import RandomForestClassifier
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import ChoiceRecord, ConsumerProfile, Source
from .exceptions import DataIntegrityError, DimensionMismatchError, EmptyDatasetError, SingleClassError

THRESHOLD = 0.5


@dataclass(frozen=True, eq=False)
class FeatureRow:
    consumer_id: str
    template_id: str
    x: np.ndarray
    y: int


def build_feature_matrix(records: Sequence[ChoiceRecord], consumer_embeddings: Mapping[str, np.ndarray],
                         design_embeddings: Mapping[str, np.ndarray], ranks: Mapping[str, float],
                         dtype=np.float32):
    """Stack ``[face | design | rank]`` rows for every record.

    Returns ``(X, y)``; column order is fixed: face embedding, then design
    embedding, then display rank.
    """
    if not records:
        raise EmptyDatasetError("no records to featurize")
    face_dim = _common_dim(consumer_embeddings, "consumer")
    design_dim = _common_dim(design_embeddings, "template")
    X = np.empty((len(records), face_dim + design_dim + 1), dtype=dtype)
    y = np.empty(len(records), dtype=np.int8)
    for k, r in enumerate(records):
        try:
            face = consumer_embeddings[r.consumer_id]
        except KeyError:
            raise DataIntegrityError(f"no face embedding for consumer {r.consumer_id!r}") from None
        try:
            design = design_embeddings[r.template_id]
        except KeyError:
            raise DataIntegrityError(f"no design embedding for template {r.template_id!r}") from None
        rank = ranks.get(r.template_id)
        if rank is None or not np.isfinite(rank):
            raise DataIntegrityError(f"no display rank for template {r.template_id!r}")
        X[k, :face_dim] = face
        X[k, face_dim:-1] = design
        X[k, -1] = rank
        y[k] = r.outcome
    return X, y


def _common_dim(embeddings: Mapping[str, np.ndarray], what: str) -> int:
    dims = {len(v) for v in embeddings.values()}
    if len(dims) > 1:
        expected = len(next(iter(embeddings.values())))
        bad = next(k for k, v in embeddings.items() if len(v) != expected)
        raise DimensionMismatchError(f"{what} {bad!r} has embedding length {len(embeddings[bad])}, expected {expected}")
    if not dims:
        raise EmptyDatasetError(f"no {what} embeddings")
    return dims.pop()


def build_feature_rows(records, consumer_embeddings, design_embeddings, ranks) -> list[FeatureRow]:
    X, y = build_feature_matrix(records, consumer_embeddings, design_embeddings, ranks, dtype=float)
    return [FeatureRow(r.consumer_id, r.template_id, X[k], int(y[k])) for k, r in enumerate(records)]


def rows_to_arrays(rows: Sequence[FeatureRow]):
    return np.stack([r.x for r in rows]), np.array([r.y for r in rows])


def upsample_indices(y, target: int, seed=None) -> np.ndarray:
    """Row indices with the minority class resampled (with replacement) to ``target`` rows."""
    y = np.asarray(y)
    classes, counts = np.unique(y, return_counts=True)
    if classes.size < 2:
        raise SingleClassError("upsampling needs both classes present")
    minority = classes[np.argmin(counts)]
    minority_idx = np.flatnonzero(y == minority)
    if target < minority_idx.size:
        raise ValueError(f"target {target} is below the current minority count {minority_idx.size}")
    majority_idx = np.flatnonzero(y != minority)
    if target == minority_idx.size:
        drawn = minority_idx
    else:
        drawn = np.random.default_rng(seed).choice(minority_idx, size=target, replace=True)
    return np.concatenate([majority_idx, np.sort(drawn)])


def upsample_minority(X, y=None, target: int = 0, seed=None):
    """Resample the minority class to exactly ``target`` rows.

    Accepts either arrays ``(X, y)`` or a list of :class:`FeatureRow` (with
    ``y=None``); returns the same kind.
    """
    if y is None:
        rows = list(X)
        idx = upsample_indices([r.y for r in rows], target, seed)
        return [rows[i] for i in idx]
    X = np.asarray(X)
    idx = upsample_indices(y, target, seed)
    return X[idx], np.asarray(y)[idx]


class ChoicePredictor(ClassifierMixin, BaseEstimator):
    """Random forest estimate of ``Pr(Y_ij = 1 | face, design, rank)``.

    Parameters
    ----------
    n_trees : int
        Number of trees in the forest.
    class_weighting : {"balanced", "none"}
        Class weights used while growing the trees.
    seed : int or None
        Seeds both the minority upsampling and the forest.
    upsample_target : int or None
        When set, the minority class is resampled to this many rows before
        fitting.
    provenance : {"internal", "internal+external"}
        Which choice evidence the training rows came from; recorded only.
    """

    def __init__(self, n_trees=100, class_weighting="balanced", seed=0, upsample_target=None,
                 max_features="sqrt", provenance="internal", n_jobs=None):
        self.n_trees = n_trees
        self.class_weighting = class_weighting
        self.seed = seed
        self.upsample_target = upsample_target
        self.max_features = max_features
        self.provenance = provenance
        self.n_jobs = n_jobs

    def fit(self, X, y):
        if self.n_trees < 1:
            raise ValueError("n_trees must be at least 1")
        if self.class_weighting not in ("balanced", "none"):
            raise ValueError(f"class_weighting must be 'balanced' or 'none', got {self.class_weighting!r}")
        X, y = check_X_y(X, y, dtype=np.float32)
        if X.shape[0] < 2:
            raise EmptyDatasetError("need at least two training rows")
        classes = np.unique(y)
        if classes.size < 2:
            raise SingleClassError(f"training rows contain only class {classes[0]}")
        if self.upsample_target:
            X, y = upsample_minority(X, y, self.upsample_target, self.seed)
        self.forest_ = RandomForestClassifier(
            n_estimators=self.n_trees,
            class_weight="balanced" if self.class_weighting == "balanced" else None,
            max_features=self.max_features,
            random_state=self.seed,
            n_jobs=self.n_jobs,
        ).fit(X, y)
        self.classes_ = self.forest_.classes_
        self.n_features_in_ = X.shape[1]
        return self

    def _check(self, X):
        check_is_fitted(self, "forest_")
        X = check_array(np.atleast_2d(X), dtype=np.float32)
        if X.shape[1] != self.n_features_in_:
            raise DimensionMismatchError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return X

    def predict_proba(self, X):
        return self.forest_.predict_proba(self._check(X))

    def choice_prob(self, X) -> np.ndarray:
        """Positive-class probability for each row."""
        proba = self.predict_proba(X)
        return proba[:, list(self.classes_).index(1)]

    def predict(self, X):
        return (self.choice_prob(X) >= THRESHOLD).astype(int)


def predict_choice_prob(predictor: ChoicePredictor, face, design, rank) -> float:
    x = np.concatenate([np.asarray(face, float).ravel(), np.asarray(design, float).ravel(), [float(rank)]])
    return float(predictor.choice_prob(x[None, :])[0])


def _internal_faces(consumers) -> np.ndarray:
    if isinstance(consumers, np.ndarray):
        faces = np.atleast_2d(consumers)
    else:
        faces = [c.face_embedding for c in consumers
                 if not isinstance(c, ConsumerProfile) or c.source is Source.INTERNAL]
        faces = np.asarray(faces, dtype=float) if faces else np.empty((0, 0))
    if faces.shape[0] == 0:
        raise EmptyDatasetError("aggregate popularity needs at least one internal consumer")
    return faces


def aggregate_popularity_many(predictor: ChoicePredictor, designs, ranks, consumers,
                              chunk_rows: int = 50_000) -> np.ndarray:
    """Aggregate popularity for several designs at once.

    ``consumers`` is a list of :class:`ConsumerProfile` (external consumers
    are skipped) or a plain ``(N, E_f)`` array of internal face embeddings.
    """
    faces = _internal_faces(consumers)
    designs = np.atleast_2d(np.asarray(designs, dtype=np.float32))
    ranks = np.broadcast_to(np.asarray(ranks, dtype=np.float32), (designs.shape[0],))
    n = faces.shape[0]
    per_chunk = max(1, chunk_rows // n)
    out = np.empty(designs.shape[0])
    for start in range(0, designs.shape[0], per_chunk):
        stop = min(start + per_chunk, designs.shape[0])
        k = stop - start
        X = np.empty((k * n, faces.shape[1] + designs.shape[1] + 1), dtype=np.float32)
        X[:, : faces.shape[1]] = np.tile(faces, (k, 1))
        X[:, faces.shape[1]:-1] = np.repeat(designs[start:stop], n, axis=0)
        X[:, -1] = np.repeat(ranks[start:stop], n)
        out[start:stop] = predictor.choice_prob(X).reshape(k, n).mean(axis=1)
    return out


def aggregate_popularity(predictor: ChoicePredictor, design, rank, consumers) -> float:
    """Mean predicted choice probability of one design over internal consumers."""
    return float(aggregate_popularity_many(predictor, np.asarray(design)[None, :], [rank], consumers)[0])


@dataclass(frozen=True)
class PredictorMetrics:
    accuracy: float
    balanced_accuracy: float
    fnr: float
    fpr: float

    @classmethod
    def from_rates(cls, fnr: float, fpr: float, accuracy: float = float("nan")) -> "PredictorMetrics":
        return cls(accuracy, 1.0 - (fnr + fpr) / 2.0, fnr, fpr)

    @classmethod
    def from_counts(cls, tp: int, tn: int, fp: int, fn: int) -> "PredictorMetrics":
        if tp + fn == 0 or tn + fp == 0:
            raise SingleClassError("balanced metrics need both classes in the test set")
        return cls.from_rates(fn / (fn + tp), fp / (fp + tn), (tp + tn) / (tp + tn + fp + fn))


def confusion_counts(y_true, y_pred):
    y_true = np.asarray(y_true).astype(bool)
    y_pred = np.asarray(y_pred).astype(bool)
    tp = int(np.sum(y_true & y_pred))
    tn = int(np.sum(~y_true & ~y_pred))
    fp = int(np.sum(~y_true & y_pred))
    fn = int(np.sum(y_true & ~y_pred))
    return tp, tn, fp, fn


def evaluate_predictor(predictor, X, y=None) -> PredictorMetrics:
    """Accuracy, balanced accuracy, FNR and FPR at the 0.5 threshold."""
    if y is None:
        X, y = rows_to_arrays(X)
    return PredictorMetrics.from_counts(*confusion_counts(y, predictor.predict(X)))


def write_metrics_report(path, metrics: Mapping[str, PredictorMetrics]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "accuracy", "balanced_accuracy", "fnr", "fpr"])
        for name, m in metrics.items():
            writer.writerow([name, f"{m.accuracy:.4f}", f"{m.balanced_accuracy:.4f}", f"{m.fnr:.4f}", f"{m.fpr:.4f}"])


def save_predictor(predictor: ChoicePredictor, path, face_dim: int | None = None):
    """Write ``<path>`` (joblib blob) and ``<path>.json`` (manifest)."""
    check_is_fitted(predictor, "forest_")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    joblib.dump(predictor, path)
    manifest = {
        "n_trees": predictor.n_trees,
        "seed": predictor.seed,
        "class_weighting": predictor.class_weighting,
        "upsample_target": predictor.upsample_target,
        "n_features": int(predictor.n_features_in_),
        "face_dim": face_dim,
        "design_dim": None if face_dim is None else int(predictor.n_features_in_) - face_dim - 1,
        "provenance": predictor.provenance,
    }
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_predictor(path) -> ChoicePredictor:
    predictor = joblib.load(path)
    manifest = json.loads(Path(str(path) + ".json").read_text())
    if manifest["n_features"] != predictor.n_features_in_:
        raise DimensionMismatchError("model manifest disagrees with the stored forest")
    return predictor
