import math

import numpy as np
import pytest

from prefgen.evaluation import (ChoiceProbReport, DistanceReport, ThemeClassifier, compare_choice_probs,
                                distance_metric, emit_histograms, hit_rate, select_top_bottom,
                                train_theme_classifier, write_hit_rate_report)
from prefgen.exceptions import EmptyDatasetError, SingleClassError
from prefgen.synth import render_design


class _BrightnessModel:
    """Choice probability = mean of the design embedding block."""

    def __init__(self, face_dim):
        self.face_dim = face_dim

    def choice_prob(self, X):
        return np.clip(np.asarray(X)[:, self.face_dim:-1].mean(axis=1), 0, 1)


class _Identity:
    def transform(self, images):
        return np.array([np.asarray(i, float).ravel() for i in images])


def test_report_normalization_and_table_format(tmp_path):
    rep = ChoiceProbReport({"DCGAN": 0.2, "enhanced": 0.2 * (1 - 0.0443), "advanced": 0.2 * 1.0354}, "DCGAN")
    assert rep.normalized["DCGAN"] == 1.0
    assert rep.deltas["DCGAN"] == 0.0
    assert round(100 * rep.deltas["enhanced"], 2) == -4.43
    rep.write(tmp_path / "t.csv")
    text = (tmp_path / "t.csv").read_text()
    assert "-4.43%" in text and "+3.54%" in text


def test_equal_means_give_zero_delta_both_ways():
    a = ChoiceProbReport({"x": 0.3, "y": 0.3}, "x")
    b = ChoiceProbReport({"x": 0.3, "y": 0.3}, "y")
    assert a.deltas["y"] == 0 and b.deltas["x"] == 0


def test_compare_set_with_itself():
    images = [render_design(np.array([s, 0.0]), 8) for s in np.linspace(-1, 1, 5)]
    faces = np.zeros((4, 2))
    rep = compare_choice_probs(_BrightnessModel(2), {"a": images, "b": images}, faces, [1, 2, 3],
                               design_embedder=_Identity(), seed=0)
    assert rep.deltas["b"] == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(EmptyDatasetError):
        compare_choice_probs(_BrightnessModel(2), {"a": images, "b": []}, faces, [1], _Identity())


def test_brighter_set_scores_higher():
    dark = [render_design(np.array([-2.0, 0.0]), 8)] * 3
    bright = [render_design(np.array([2.0, 0.0]), 8)] * 3
    rep = compare_choice_probs(_BrightnessModel(2), {"dark": dark, "bright": bright}, np.zeros((3, 2)), [1],
                               _Identity())
    assert rep.deltas["bright"] > 0


def test_distance_extremes():
    a, b = np.zeros(4), np.ones(4)
    rep = distance_metric({"g": np.vstack([a, b])}, np.vstack([a] * 3), np.vstack([b] * 3))
    assert rep.scores["g"].tolist() == [0.0, 6.0]


def _loop_distance(gen, top, bottom):
    refs = list(top) + list(bottom)
    raw = [[math.sqrt(sum((x - y) ** 2 for x, y in zip(g, r))) for r in refs] for g in gen]
    lo = min(min(row) for row in raw)
    hi = max(max(row) for row in raw)
    out = []
    for row in raw:
        d = [(v - lo) / (hi - lo) for v in row]
        out.append(sum(v ** 2 for v in d[:len(top)]) + sum((1 - v) ** 2 for v in d[len(top):]))
    return out


def test_distance_matches_loop_oracle():
    rng = np.random.default_rng(0)
    gen, top, bottom = rng.normal(size=(5, 7)), rng.normal(size=(3, 7)), rng.normal(size=(3, 7))
    rep = distance_metric(gen, top, bottom)
    assert np.max(np.abs(rep.scores["generated"] - _loop_distance(gen, top, bottom))) <= 1e-9
    assert np.all((rep.scores["generated"] >= 0) & (rep.scores["generated"] <= 6))


def test_distance_decreases_toward_top_member():
    rng = np.random.default_rng(1)
    top = rng.normal(0, 0.2, size=(3, 4))
    bottom = rng.normal(0, 0.2, size=(3, 4)) + 5
    # one anchor sits on a reference (min distance 0), one far away (max), so scaling is fixed
    anchors = np.vstack([top[1], np.full(4, 40.0)])
    start = np.full(4, 2.5) + rng.normal(0, 0.2, 4)
    scores = []
    for t in np.linspace(0.05, 0.6, 8):
        point = (1 - t) * start + t * top[0]
        scores.append(distance_metric(np.vstack([point, anchors]), top, bottom).scores["generated"][0])
    assert np.all(np.diff(scores) < 0)


def test_distance_report_layout(tmp_path):
    rep = DistanceReport({"DCGAN": np.array([0.5, 0.7]), "CcGAN": np.array([0.4, 0.5])})
    rep.write(tmp_path / "d.csv")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines == ["statistic,DCGAN,CcGAN", "Mean,0.6000,0.4500", "Median,0.6000,0.4500"]
    with pytest.raises(EmptyDatasetError):
        distance_metric(np.zeros((1, 2)), np.zeros((0, 2)), np.zeros((1, 2)))


def test_top_bottom_selection_tie_break():
    counts = {"t3": 5, "t1": 5, "t2": 9, "t4": 0, "t5": 1, "t6": 0}
    top, bottom = select_top_bottom(counts, 3)
    assert top == ["t2", "t1", "t3"]
    assert bottom == ["t4", "t6", "t5"]


def _two_class(n, seed):
    rng = np.random.default_rng(seed)
    pos = [render_design(np.array([rng.normal(1.5, 0.3), rng.normal(1.5, 0.3), *rng.normal(size=2)]), 32)
           for _ in range(n)]
    neg = [render_design(np.array([rng.normal(-1.5, 0.3), rng.normal(-1.5, 0.3), *rng.normal(size=2)]), 32)
           for _ in range(n)]
    return np.array(pos), np.array(neg)


def test_theme_classifier_separable():
    pos, neg = _two_class(60, 0)
    clf = train_theme_classifier(pos[:40], neg[:40], seed=0, epochs=15)
    X = np.concatenate([pos[40:], neg[40:]])
    y = np.array([1] * 20 + [0] * 20)
    assert (clf.predict(X) == y).mean() >= 0.95
    assert 0 <= hit_rate(clf, pos[40:]) <= 1


def test_theme_classifier_errors():
    pos, _ = _two_class(4, 1)
    with pytest.raises(SingleClassError):
        train_theme_classifier(pos, [])
    with pytest.raises(SingleClassError):
        ThemeClassifier(epochs=1).fit(pos, np.ones(4))


class _Always:
    def __init__(self, value):
        self.value = value

    def predict(self, X):
        return np.full(len(X), self.value)


def test_hit_rate_identities(tmp_path):
    images = np.zeros((7, 4, 4, 3))
    assert hit_rate(_Always(1), images) == 1.0
    assert hit_rate(_Always(0), images) == 0.0
    with pytest.raises(EmptyDatasetError):
        hit_rate(_Always(1), images[:0])
    pos, neg = _two_class(30, 2)
    clf = train_theme_classifier(pos[:20], neg[:20], seed=0, epochs=5)
    a, b = pos[20:], neg[20:25]
    joint = hit_rate(clf, np.concatenate([a, b]))
    assert joint == pytest.approx((len(a) * hit_rate(clf, a) + len(b) * hit_rate(clf, b)) / (len(a) + len(b)))
    assert joint == 1 - np.mean(clf.predict(np.concatenate([a, b])) == 0)
    write_hit_rate_report(tmp_path / "h.csv", {"theme": {"accuracy": 0.972, "fnr": 0.024, "fpr": 0.034,
                                                         "hit_rate": 0.99}})
    assert (tmp_path / "h.csv").read_text().splitlines()[1] == "theme,0.9720,0.0240,0.0340,0.9900"


def test_histograms(tmp_path):
    edges, counts = emit_histograms({"one": [0.3]}, bins=5)
    assert np.count_nonzero(counts["one"]) == 1
    rng = np.random.default_rng(0)
    series = {"u": rng.uniform(size=10_000), "n": rng.normal(size=500)}
    edges, counts = emit_histograms({"u": series["u"]}, bins=10)
    assert counts["u"].sum() == 10_000
    assert counts["u"].max() / counts["u"].min() < 1.3
    edges, counts = emit_histograms(series, bins=20, out_dir=tmp_path, name="h", title="t")
    assert counts["n"].sum() == 500 and counts["u"].sum() == 10_000
    assert (tmp_path / "h.png").stat().st_size > 0
    assert len((tmp_path / "h.csv").read_text().splitlines()) == 21
    with pytest.raises(EmptyDatasetError):
        emit_histograms({"e": []})
