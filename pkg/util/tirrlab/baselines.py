# Copyright 2026 The tirrlab Authors.
# Licensed under the Apache License, Version 2.0, see LICENSE for details.
# SPDX-License-Identifier: Apache-2.0
#
# Reduced comparison recommenders sharing the reciprocal scoring surface:
# attribute statistics, image anchors and latent factors, each directed
# score combined by the harmonic mean.

import logging as log
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .checkpoint import Checkpoint
from .core import Kind, Side, UserId
from .errors import Divergence
from .siamese import distance, head_probability

NEUTRAL = 0.5


def harmonic_reciprocal(q_xy, q_yx):
    if q_xy + q_yx == 0:
        return 0.0
    return 2.0 * q_xy * q_yx / (q_xy + q_yx)


def directed_labels(log_):
    """`(judge, target, label)` per expression: 1 for liking, 0 for a Dislike."""
    return [(e.actor, e.target, 0 if e.kind is Kind.DISLIKE else 1) for e in log_.events]


def _uid_array(uids):
    return np.array([[0 if u.side is Side.X else 1, u.key] for u in uids],
                    dtype=np.int64).reshape(-1, 2)


def _uids_from_array(arr):
    return [UserId(Side.X if s == 0 else Side.Y, int(k)) for s, k in arr]


# -------------------- RECON-lite --------------------

class ReconCheckpoint(Checkpoint):
    KIND = "recon"


class AttributeProfiles(object):
    """
    Per judge and attribute, how often each attribute value was seen and
    liked. Like fractions are Laplace-smoothed with `alpha`; judges without
    any expression fall back to the global like rate. `attributes` covers
    every user that may be scored.
    """
    def __init__(self, attributes, likes, views, global_rate, alpha, n_buckets):
        self.attributes = attributes
        self.likes = likes
        self.views = views
        self.global_rate = global_rate
        self.alpha = alpha
        self.n_buckets = n_buckets

    def preference(self, judge, target):
        if judge not in self.views or target not in self.attributes:
            return self.global_rate
        likes, views = self.likes[judge], self.views[judge]
        values = self.attributes[target]
        a = self.alpha
        q = [(likes[i, v] + a) / (views[i, v] + 2 * a)
             for i, v in enumerate(values)]
        return float(np.mean(q))

    def to_checkpoint(self):
        users = sorted(self.attributes)
        judges = sorted(self.views)
        return ReconCheckpoint(OrderedDict([
            ("users", _uid_array(users)),
            ("attributes", np.array([self.attributes[u] for u in users], dtype=np.int64)),
            ("judges", _uid_array(judges)),
            ("likes", np.stack([self.likes[j] for j in judges]).astype(np.int64)
             if judges else np.zeros((0, 0, 0), dtype=np.int64)),
            ("views", np.stack([self.views[j] for j in judges]).astype(np.int64)
             if judges else np.zeros((0, 0, 0), dtype=np.int64)),
        ]), {"global_rate": self.global_rate, "alpha": self.alpha, "n_buckets": self.n_buckets})

    @classmethod
    def from_checkpoint(cls, ckpt):
        t = ckpt.tensors
        users = _uids_from_array(t["users"])
        judges = _uids_from_array(t["judges"])
        return cls({u: tuple(int(v) for v in row) for u, row in zip(users, t["attributes"])},
                   dict(zip(judges, t["likes"])), dict(zip(judges, t["views"])),
                   ckpt.meta["global_rate"], ckpt.meta["alpha"], ckpt.meta["n_buckets"])


def fit_recon(log_, attributes, n_buckets, alpha=1.0):
    """Count attribute values of liked and seen targets per judge."""
    log_.require_training_split("RECON-lite")
    labels = directed_labels(log_)
    n_attr = len(next(iter(attributes.values())))
    likes, views = dict(), dict()
    for judge, target, label in labels:
        if judge not in views:
            views[judge] = np.zeros((n_attr, n_buckets), dtype=np.int64)
            likes[judge] = np.zeros((n_attr, n_buckets), dtype=np.int64)
        for i, v in enumerate(attributes[target]):
            views[judge][i, v] += 1
            likes[judge][i, v] += label
    global_rate = sum(label for _, _, label in labels) / len(labels) if labels else NEUTRAL
    log.debug("RECON-lite: %d judges, global like rate %.4f", len(views), global_rate)
    return AttributeProfiles(dict(attributes), likes, views, global_rate, alpha, n_buckets)


def recon_lite_score(x, y, profiles):
    return harmonic_reciprocal(profiles.preference(x, y), profiles.preference(y, x))


# -------------------- ImRec-lite --------------------

class ImrecCheckpoint(Checkpoint):
    KIND = "imrec"


@dataclass(frozen=True)
class ImrecConfig:
    anchors: int = 5
    siamese_digests: dict = None

    def to_checkpoint(self):
        return ImrecCheckpoint(OrderedDict(), {"anchors": self.anchors,
                                               "siamese_digests": self.siamese_digests})

    @classmethod
    def from_checkpoint(cls, ckpt):
        return cls(ckpt.meta["anchors"], ckpt.meta["siamese_digests"])


def liked_anchors(judge, log_, reference_time, n, exclude=None):
    """The judge's `n` most recently liked users before `reference_time`."""
    anchors = list()
    for idx in log_.by_actor.get(judge, ()):
        e = log_.events[idx]
        if e.ts >= reference_time:
            break
        if e.kind is not Kind.DISLIKE and e.target != exclude:
            anchors.append(e.target)
    return anchors[-n:] if n > 0 else []


def imrec_directed(judge, candidate, nets, embed, log_, reference_time, n_anchors=5):
    anchors = liked_anchors(judge, log_, reference_time, n_anchors, exclude=candidate)
    if not anchors:
        return NEUTRAL
    c = embed(candidate)
    net = nets[candidate.side]
    return float(np.mean([head_probability(distance(embed(a), c), net) for a in anchors]))


def imrec_lite_score(x, y, nets, embed, log_, reference_time, n_anchors=5):
    return harmonic_reciprocal(
        imrec_directed(x, y, nets, embed, log_, reference_time, n_anchors),
        imrec_directed(y, x, nets, embed, log_, reference_time, n_anchors))


# -------------------- LFRR-lite --------------------

class LfrrCheckpoint(Checkpoint):
    KIND = "lfrr"


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


class DirectedFactors(object):
    """Latent factor model for judges of one side scoring the other side."""
    def __init__(self, judges, targets, judge_vecs, target_vecs, judge_bias, target_bias,
                 global_bias=0.0):
        self.judges = list(judges)
        self.targets = list(targets)
        self.judge_index = {u: i for i, u in enumerate(self.judges)}
        self.target_index = {u: i for i, u in enumerate(self.targets)}
        self.judge_vecs = judge_vecs
        self.target_vecs = target_vecs
        self.judge_bias = judge_bias
        self.target_bias = target_bias
        self.global_bias = global_bias

    @classmethod
    def initial(cls, judges, targets, dim, rng):
        return cls(judges, targets,
                   rng.normal(0.0, 0.1, (len(judges), dim)),
                   rng.normal(0.0, 0.1, (len(targets), dim)),
                   np.zeros(len(judges)), np.zeros(len(targets)))

    def logit(self, judge, target):
        """Unknown users contribute no vector and no bias."""
        z = self.global_bias
        j = self.judge_index.get(judge)
        t = self.target_index.get(target)
        if j is not None:
            z += self.judge_bias[j]
        if t is not None:
            z += self.target_bias[t]
        if j is not None and t is not None:
            z += float(self.judge_vecs[j] @ self.target_vecs[t])
        return z

    def score(self, judge, target):
        return float(_sigmoid(self.logit(judge, target)))

    def sgd_epoch(self, samples, order, lr, reg):
        total = 0.0
        for k in order:
            j, t, y = samples[k]
            u, v = self.judge_vecs[j], self.target_vecs[t]
            p = _sigmoid(u @ v + self.judge_bias[j] + self.target_bias[t] + self.global_bias)
            p_c = min(max(p, 1e-12), 1.0 - 1e-12)
            total -= y * np.log(p_c) + (1 - y) * np.log(1 - p_c)
            g = p - y
            self.judge_vecs[j] = u - lr * (g * v + reg * u)
            self.target_vecs[t] = v - lr * (g * u + reg * v)
            self.judge_bias[j] -= lr * g
            self.target_bias[t] -= lr * g
            self.global_bias -= lr * g
        return total / len(order)

    def tensors(self, prefix):
        return OrderedDict([
            (prefix + ".judges", _uid_array(self.judges)),
            (prefix + ".targets", _uid_array(self.targets)),
            (prefix + ".judge_vecs", self.judge_vecs),
            (prefix + ".target_vecs", self.target_vecs),
            (prefix + ".judge_bias", self.judge_bias),
            (prefix + ".target_bias", self.target_bias),
            (prefix + ".global_bias", np.array([self.global_bias])),
        ])

    @classmethod
    def from_tensors(cls, t, prefix):
        return cls(_uids_from_array(t[prefix + ".judges"]),
                   _uids_from_array(t[prefix + ".targets"]),
                   t[prefix + ".judge_vecs"], t[prefix + ".target_vecs"],
                   t[prefix + ".judge_bias"], t[prefix + ".target_bias"],
                   float(t[prefix + ".global_bias"][0]))


class LatentFactors(object):
    """One directed model per judging side plus the training loss log."""
    def __init__(self, directed, losses=()):
        self.directed = directed
        self.losses = list(losses)

    def score(self, judge, target):
        return self.directed[judge.side].score(judge, target)

    def to_checkpoint(self, meta=None):
        tensors = OrderedDict()
        for side in Side:
            tensors.update(self.directed[side].tensors(side.value))
        return LfrrCheckpoint(tensors, dict(meta or {}, losses=self.losses))

    @classmethod
    def from_checkpoint(cls, ckpt):
        return cls({side: DirectedFactors.from_tensors(ckpt.tensors, side.value) for side in Side},
                   ckpt.meta.get("losses", []))


def lfrr_lite_train(log_, dim=16, epochs=20, lr=0.01, reg=0.001, seed=17):
    """
    Two directed latent factor models fitted by per-sample SGD on the
    binary cross-entropy of directed expressions.
    """
    log_.require_training_split("LFRR-lite")
    labels = directed_labels(log_)
    rng = np.random.default_rng(seed)
    directed, samples = dict(), dict()
    for side in Side:
        own = [(j, t, y) for j, t, y in labels if j.side is side]
        judges = sorted({j for j, _, _ in own})
        targets = sorted({t for _, t, _ in own})
        model = DirectedFactors.initial(judges, targets, dim, rng)
        directed[side] = model
        samples[side] = [(model.judge_index[j], model.target_index[t], y) for j, t, y in own]

    losses = list()
    for epoch in range(epochs):
        total, count = 0.0, 0
        for side in Side:
            if not samples[side]:
                continue
            order = rng.permutation(len(samples[side]))
            total += directed[side].sgd_epoch(samples[side], order, lr, reg) * len(order)
            count += len(order)
        mean = total / count if count else 0.0
        if not np.isfinite(mean) or not all(
                np.all(np.isfinite(m.judge_vecs)) and np.all(np.isfinite(m.target_vecs))
                for m in directed.values()):
            raise Divergence("LFRR-lite diverged in epoch {}".format(epoch + 1))
        losses.append(float(mean))
        log.info("lfrr epoch %d: mean loss %.6f", epoch + 1, mean)
    return LatentFactors(directed, losses)


def lfrr_lite_score(x, y, factors):
    return harmonic_reciprocal(factors.score(x, y), factors.score(y, x))
