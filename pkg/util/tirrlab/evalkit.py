# Copyright 2026 The tirrlab Authors.
# Licensed under the Apache License, Version 2.0, see LICENSE for details.
# SPDX-License-Identifier: Apache-2.0
#
# Reciprocal evaluation of scored pairs: confusion counts, precision, recall
# and F1, ROC sweep with AUC, threshold selection and 2-D projections.

import hashlib
import json
import logging as log
from dataclasses import asdict, dataclass, field
from typing import List, NamedTuple

import numpy as np
from sklearn.decomposition import PCA
from sklearn.metrics import auc, roc_curve

from .core import UserId
from .errors import ConfigError, DegenerateLabels, IoFailure

# Attached to every report.
RECALL_NOTE = ("Recall follows |RL| / |R|. Whenever every recommended pair is labelled, "
               "|R| = |RL| + |RN| and this recall equals precision; recall_standard "
               "divides by all positive pairs instead.")


@dataclass(frozen=True)
class ScoredPair:
    x: UserId
    y: UserId
    score: float
    label: int


class Counts(NamedTuple):
    rl: int
    rn: int
    r: int


class PRF1(NamedTuple):
    precision: float
    recall: float
    f1: float


def _div(a, b):
    return a / b if b else 0.0


def f1_score(precision, recall):
    return _div(2.0 * precision * recall, precision + recall)


def confusion_at_threshold(pairs, t):
    """Pairs scoring at least `t` are recommended."""
    rl = rn = 0
    for p in pairs:
        if p.score >= t:
            if p.label == 1:
                rl += 1
            else:
                rn += 1
    return Counts(rl, rn, rl + rn)


def prf1(counts, total_positives=None):
    """Precision |RL|/(|RL|+|RN|), recall |RL|/|R| and their F1."""
    precision = _div(counts.rl, counts.rl + counts.rn)
    recall = _div(counts.rl, counts.r)
    return PRF1(precision, recall, f1_score(precision, recall))


def standard_prf1(counts, total_positives):
    """As `prf1`, but recall is taken over all positive pairs."""
    precision = _div(counts.rl, counts.rl + counts.rn)
    recall = _div(counts.rl, total_positives)
    return PRF1(precision, recall, f1_score(precision, recall))


def _labels_scores(pairs):
    labels = np.array([p.label for p in pairs], dtype=np.int64)
    scores = np.array([p.score for p in pairs], dtype=np.float64)
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == len(labels):
        raise DegenerateLabels("Need both matches and like-dislike pairs, got {} of {} positive".format(
            n_pos, len(labels)))
    return labels, scores


def roc_and_auc(pairs):
    """ROC points `(fpr, tpr)` for every distinct score plus the empty sentinel."""
    labels, scores = _labels_scores(pairs)
    fpr, tpr, _ = roc_curve(labels, scores, pos_label=1, drop_intermediate=False)
    points = [(float(f), float(t)) for f, t in zip(fpr, tpr)]
    return points, float(auc(fpr, tpr))


def best_f1_threshold(pairs):
    """
    The candidate score with the highest F1 (recall over all positives);
    among equal F1 values the lowest threshold wins.
    """
    labels, scores = _labels_scores(pairs)
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    tp = np.cumsum(y)
    fp = np.cumsum(1 - y)
    # Last index of every run of equal scores: thresholds at that score.
    last = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    best_t, best_f1 = None, -1.0
    total = int(labels.sum())
    for i in last:
        f1 = standard_prf1(Counts(int(tp[i]), int(fp[i]), int(tp[i] + fp[i])), total).f1
        if f1 >= best_f1:
            best_t, best_f1 = float(s[i]), f1
    return best_t


# -------------------- Reports --------------------

def pairs_digest(pairs):
    text = "".join("{}\t{}\t{}\n".format(p.x, p.y, p.label) for p in pairs)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass
class EvalReport:
    model: str
    threshold: float
    rl: int
    rn: int
    r: int
    total_positives: int
    precision: float
    recall: float
    f1: float
    recall_standard: float
    f1_standard: float
    auc: float
    f1_train: float
    n_pairs: int
    pairs_digest: str
    roc: List = field(default_factory=list)
    note: str = RECALL_NOTE

    @property
    def counts(self):
        return Counts(self.rl, self.rn, self.r)

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True, indent=4)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        d["roc"] = [tuple(p) for p in d["roc"]]
        return cls(**d)


def evaluate_pairs(model, train_pairs, eval_pairs):
    """Select the threshold on `train_pairs` and report on `eval_pairs`."""
    t = best_f1_threshold(train_pairs)
    train_pos = sum(p.label for p in train_pairs)
    f1_train = standard_prf1(confusion_at_threshold(train_pairs, t), train_pos).f1
    counts = confusion_at_threshold(eval_pairs, t)
    total = sum(p.label for p in eval_pairs)
    lit = prf1(counts, total)
    std = standard_prf1(counts, total)
    points, area = roc_and_auc(eval_pairs)
    log.info("%s: AUC %.4f, F1 %.4f (standard %.4f) at threshold %.6f",
             model, area, lit.f1, std.f1, t)
    return EvalReport(model, t, counts.rl, counts.rn, counts.r, total,
                      lit.precision, lit.recall, lit.f1, std.recall, std.f1,
                      area, f1_train, len(eval_pairs), pairs_digest(eval_pairs), points)


def _write(path, text):
    try:
        with open(path, "w") as f:
            f.write(text)
    except OSError as e:
        raise IoFailure("Unable to write {}: {}".format(path, e))


def write_report(report, path):
    _write(path, report.to_json() + "\n")


def read_report(path):
    try:
        with open(path, "r") as f:
            return EvalReport.from_json(f.read())
    except OSError as e:
        raise IoFailure("Unable to read report {}: {}".format(path, e))


def write_roc_tsv(points, path):
    _write(path, "fpr\ttpr\n" + "".join("{!r}\t{!r}\n".format(f, t) for f, t in points))


# -------------------- Projection --------------------

class ProjectedPoint(NamedTuple):
    x: float
    y: float
    label: object


def pca_projection(embeddings):
    """Top two principal axes; component signs are fixed deterministically."""
    n, dim = embeddings.shape
    k = min(2, n, dim)
    xy = np.zeros((n, 2))
    centered = embeddings - embeddings.mean(axis=0)
    if k and np.any(centered):
        xy[:, :k] = PCA(n_components=k, svd_solver="full").fit_transform(embeddings)
    return xy


PROJECTORS = {"pca": pca_projection}


def register_projector(name, fn):
    """Make `fn`, mapping an (n, d) array to (n, 2), available as `name`."""
    PROJECTORS[name] = fn


def project_embeddings(embeddings, labels, method="pca"):
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if len(embeddings) < 2:
        raise ValueError("Projection needs at least two embeddings")
    if method not in PROJECTORS:
        raise ConfigError("Unknown projection method {!r}; known: {}".format(
            method, ", ".join(sorted(PROJECTORS))))
    xy = PROJECTORS[method](embeddings)
    return [ProjectedPoint(float(a), float(b), label) for (a, b), label in zip(xy, labels)]


def write_projection_tsv(points, path):
    _write(path, "x\ty\tlabel\n" + "".join(
        "{!r}\t{!r}\t{}\n".format(p.x, p.y, p.label) for p in points))
