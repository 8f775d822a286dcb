# Copyright 2026 The tirrlab Authors.
# Licensed under the Apache License, Version 2.0, see LICENSE for details.
# SPDX-License-Identifier: Apache-2.0

import numpy as np
import pytest

from tirrlab.core import Side, UserId
from tirrlab.errors import ConfigError, DegenerateLabels
from tirrlab.evalkit import (RECALL_NOTE, Counts, ScoredPair, best_f1_threshold,
                             confusion_at_threshold, evaluate_pairs, pca_projection, prf1,
                             project_embeddings, read_report, register_projector, roc_and_auc,
                             standard_prf1, write_projection_tsv, write_report, write_roc_tsv)


def _pairs(scored):
    return [ScoredPair(UserId(Side.X, i), UserId(Side.Y, i), float(s), int(l))
            for i, (s, l) in enumerate(scored)]


FOUR = _pairs([(0.9, 1), (0.8, 0), (0.6, 1), (0.2, 0)])


def test_confusion():
    assert confusion_at_threshold(FOUR, 0.5) == Counts(2, 1, 3)
    assert confusion_at_threshold(FOUR, 0.0) == Counts(2, 2, 4)
    assert confusion_at_threshold(FOUR, 0.95) == Counts(0, 0, 0)
    assert confusion_at_threshold(FOUR, 0.6) == Counts(2, 1, 3)


# (rl, rn, r) -> (precision, recall, f1) with recall |RL| / |R|.
PRF1_CASES = [
    ((3, 1, 4), (0.75, 0.75, 0.75)),
    ((2, 2, 4), (0.5, 0.5, 0.5)),
    ((2, 1, 4), (2 / 3, 0.5, 4 / 7)),
    ((0, 0, 0), (0.0, 0.0, 0.0)),
    ((0, 5, 5), (0.0, 0.0, 0.0)),
    ((5, 0, 5), (1.0, 1.0, 1.0)),
    ((1, 0, 1), (1.0, 1.0, 1.0)),
    ((1, 1, 2), (0.5, 0.5, 0.5)),
    ((1, 3, 4), (0.25, 0.25, 0.25)),
    ((3, 1, 6), (0.75, 0.5, 0.6)),
    ((4, 4, 8), (0.5, 0.5, 0.5)),
    ((7, 3, 10), (0.7, 0.7, 0.7)),
    ((9, 1, 10), (0.9, 0.9, 0.9)),
    ((1, 9, 10), (0.1, 0.1, 0.1)),
    ((2, 0, 4), (1.0, 0.5, 2 / 3)),
    ((6, 2, 12), (0.75, 0.5, 0.6)),
    ((1, 2, 3), (1 / 3, 1 / 3, 1 / 3)),
    ((50, 50, 100), (0.5, 0.5, 0.5)),
    ((8, 2, 16), (0.8, 0.5, 8 / 13)),
    ((3, 0, 9), (1.0, 1 / 3, 0.5)),
    ((0, 3, 0), (0.0, 0.0, 0.0)),
]


@pytest.mark.parametrize("counts,expected", PRF1_CASES)
def test_prf1_literal(counts, expected):
    got = prf1(Counts(*counts))
    assert got == pytest.approx(expected)


def test_standard_prf1():
    got = standard_prf1(Counts(2, 1, 3), total_positives=4)
    assert got == pytest.approx((2 / 3, 0.5, 4 / 7))
    assert standard_prf1(Counts(0, 0, 0), 0) == (0.0, 0.0, 0.0)


def test_perfect_separation():
    pairs = _pairs([(0.9, 1), (0.8, 1), (0.3, 0), (0.1, 0)])
    points, area = roc_and_auc(pairs)
    assert area == 1.0
    assert points[0] == (0.0, 0.0) and points[-1] == (1.0, 1.0)
    assert best_f1_threshold(pairs) == 0.8


def test_random_scores_give_half():
    rng = np.random.default_rng(0)
    pairs = _pairs(zip(rng.random(10000), rng.integers(0, 2, 10000)))
    _, area = roc_and_auc(pairs)
    assert area == pytest.approx(0.5, abs=0.02)


def test_reversed_scores():
    rng = np.random.default_rng(1)
    scored = list(zip(rng.random(500), rng.integers(0, 2, 500)))
    _, area = roc_and_auc(_pairs(scored))
    _, flipped = roc_and_auc(_pairs([(-s, l) for s, l in scored]))
    assert flipped == pytest.approx(1.0 - area, abs=1e-12)


def test_roc_is_monotone():
    rng = np.random.default_rng(2)
    pairs = _pairs(zip(np.round(rng.random(300), 2), rng.integers(0, 2, 300)))
    points, area = roc_and_auc(pairs)
    fpr = [p[0] for p in points]
    tpr = [p[1] for p in points]
    assert fpr == sorted(fpr) and tpr == sorted(tpr)
    assert 0.0 <= area <= 1.0


def test_degenerate_labels():
    with pytest.raises(DegenerateLabels):
        roc_and_auc(_pairs([(0.3, 1), (0.5, 1)]))
    with pytest.raises(DegenerateLabels):
        best_f1_threshold(_pairs([(0.3, 0)]))


def test_best_threshold():
    assert best_f1_threshold(_pairs([(0.9, 1), (0.5, 0), (0.4, 0)])) == 0.9
    # Equal F1 at 0.9 and 0.3: the lower threshold wins.
    pairs = _pairs([(0.9, 1), (0.7, 0), (0.5, 0), (0.3, 1)])
    assert best_f1_threshold(pairs) == 0.3
    # Tied scores move together.
    assert best_f1_threshold(_pairs([(0.6, 1), (0.6, 0), (0.2, 0)])) == 0.6


def test_evaluate_and_report(tmp_path):
    rng = np.random.default_rng(3)
    labels = rng.integers(0, 2, 400)
    scores = np.clip(0.3 * labels + 0.7 * rng.random(400), 0, 1)
    pairs = _pairs(zip(scores, labels))
    report = evaluate_pairs("demo", pairs[:200], pairs[200:])
    assert report.n_pairs == 200
    assert report.note == RECALL_NOTE
    assert report.total_positives == sum(p.label for p in pairs[200:])

    lit = prf1(report.counts)
    std = standard_prf1(report.counts, report.total_positives)
    assert (report.precision, report.recall, report.f1) == tuple(lit)
    assert (report.recall_standard, report.f1_standard) == (std.recall, std.f1)
    assert report.r == report.rl + report.rn
    assert report.precision == report.recall
    assert abs(report.f1_standard - report.f1_train) < 0.15

    path = tmp_path / "demo.json"
    write_report(report, path)
    assert read_report(path) == report
    write_roc_tsv(report.roc, tmp_path / "demo.roc.tsv")
    lines = (tmp_path / "demo.roc.tsv").read_text().splitlines()
    assert lines[0] == "fpr\ttpr" and len(lines) == len(report.roc) + 1


def test_projection():
    rng = np.random.default_rng(4)
    emb = rng.normal(size=(20, 6))
    emb[5] = emb[3]
    points = project_embeddings(emb, list(range(20)))
    assert len(points) == 20
    assert (points[3].x, points[3].y) == (points[5].x, points[5].y)
    assert [p.label for p in points] == list(range(20))
    assert project_embeddings(emb, list(range(20))) == points


def test_projection_of_identical_points():
    points = project_embeddings(np.ones((2, 4)), ["a", "b"])
    assert (points[0].x, points[0].y) == (points[1].x, points[1].y)
    assert not pca_projection(np.ones((3, 4))).any()


def test_projection_errors_and_plugins(tmp_path):
    with pytest.raises(ConfigError):
        project_embeddings(np.zeros((3, 2)), [0, 1, 2], method="umap")
    with pytest.raises(ValueError):
        project_embeddings(np.zeros((1, 2)), [0])
    register_projector("first_two", lambda e: e[:, :2])
    points = project_embeddings(np.arange(6.0).reshape(2, 3), [1, 0], method="first_two")
    assert points[1][:2] == (3.0, 4.0)
    write_projection_tsv(points, tmp_path / "p.tsv")
    assert (tmp_path / "p.tsv").read_text().splitlines() == ["x\ty\tlabel", "0.0\t1.0\t1",
                                                            "3.0\t4.0\t0"]


def test_projection_separates_labels():
    # Two clouds split along one axis stay apart after projection.
    rng = np.random.default_rng(5)
    labels = np.repeat([0, 1], 100)
    emb = rng.normal(size=(200, 8)) * 0.3
    emb[:, 2] += 3.0 * labels
    points = project_embeddings(emb, labels.tolist())
    xs = np.array([p.x for p in points])
    split = (xs > np.median(xs)).astype(int)
    accuracy = max((split == labels).mean(), (split != labels).mean())
    assert accuracy > 0.9
