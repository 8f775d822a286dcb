# Copyright 2026 The tirrlab Authors.
# Licensed under the Apache License, Version 2.0, see LICENSE for details.
# SPDX-License-Identifier: Apache-2.0
#
# Unidirectional preference model: a twin CNN encoder with shared weights,
# the absolute embedding difference and a single-unit probability head.

import logging as log
import math
from collections import OrderedDict, defaultdict
from dataclasses import asdict, dataclass
from typing import Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .checkpoint import Checkpoint
from .core import Kind, Side, UserId
from .errors import Divergence, InsufficientJudges, UninitializedWeights

LOSS_BCE = "bce"
LOSS_CONTRASTIVE = "contrastive"

# Buffers that count towards a layer's size. `num_batches_tracked` is
# bookkeeping and does not.
_TRACKED_BUFFERS = ("running_mean", "running_var")


@dataclass(frozen=True)
class EncoderSpec:
    input_size: int = 100
    # Input channels followed by the output channels of conv1 .. conv6.
    channels: Tuple[int, ...] = (3, 3, 64, 192, 384, 256, 256)
    kernels: Tuple[int, ...] = (7, 3, 2, 2, 1, 3)
    dense: Tuple[int, int] = (256, 128)

    @classmethod
    def miniature(cls):
        """Same layer kinds on 8x8 inputs, a few hundred parameters."""
        return cls(input_size=8, channels=(3, 3, 2, 3, 4, 4, 3),
                   kernels=(3, 3, 2, 2, 1, 3), dense=(4, 4))

    @classmethod
    def from_dict(cls, d):
        return cls(d["input_size"], tuple(d["channels"]), tuple(d["kernels"]),
                   tuple(d["dense"]))

    def as_dict(self):
        return asdict(self)

    @property
    def embedding_dim(self):
        return self.dense[1]

    def spatial_trace(self):
        """Edge length after the input and after each pooling stage."""
        trace = [self.input_size]
        for _ in range(5):
            trace.append(math.ceil(trace[-1] / 3))
        return trace


def _pool(x):
    return F.max_pool2d(x, kernel_size=3, stride=3, ceil_mode=True)


class Encoder(nn.Module):
    """
    conv1 > pool > norm > conv2 > pool > norm > conv3 > pool > conv4 > pool >
    conv5 > conv6 > pool > flatten > dense1 > dense2. All convolutions are
    stride 1 with same padding and ReLU; dense2 is linear.
    """
    def __init__(self, spec=EncoderSpec()):
        super().__init__()
        self.spec = spec
        c, k = spec.channels, spec.kernels
        self.conv1 = nn.Conv2d(c[0], c[1], k[0], padding="same")
        self.norm1 = nn.BatchNorm2d(c[1])
        self.conv2 = nn.Conv2d(c[1], c[2], k[1], padding="same")
        self.norm2 = nn.BatchNorm2d(c[2])
        self.conv3 = nn.Conv2d(c[2], c[3], k[2], padding="same")
        self.conv4 = nn.Conv2d(c[3], c[4], k[3], padding="same")
        self.conv5 = nn.Conv2d(c[4], c[5], k[4], padding="same")
        self.conv6 = nn.Conv2d(c[5], c[6], k[5], padding="same")
        flat = c[6] * spec.spatial_trace()[-1]**2
        self.dense1 = nn.Linear(flat, spec.dense[0])
        self.dense2 = nn.Linear(spec.dense[0], spec.dense[1])

    def forward(self, x):
        x = self.norm1(_pool(F.relu(self.conv1(x))))
        x = self.norm2(_pool(F.relu(self.conv2(x))))
        x = _pool(F.relu(self.conv3(x)))
        x = _pool(F.relu(self.conv4(x)))
        x = F.relu(self.conv5(x))
        x = _pool(F.relu(self.conv6(x)))
        x = torch.flatten(x, 1)
        x = F.relu(self.dense1(x))
        return self.dense2(x)


def layer_parameter_counts(module):
    """Trainable parameters plus tracked statistics of every direct child."""
    counts = OrderedDict()
    for name, child in module.named_children():
        n = sum(p.numel() for p in child.parameters())
        n += sum(b.numel() for bname, b in child.named_buffers()
                 if bname in _TRACKED_BUFFERS)
        if n:
            counts[name] = n
    return counts


class SiameseNet(nn.Module):
    """Encoder shared by both branches plus the dense 128 -> 1 head."""
    def __init__(self, spec=EncoderSpec(), seed=None):
        super().__init__()
        self.encoder = Encoder(spec)
        self.head = nn.Linear(spec.embedding_dim, 1)
        self.initialized = False
        if seed is not None:
            self.reset_parameters(seed)

    @property
    def spec(self):
        return self.encoder.spec

    def reset_parameters(self, seed):
        """Fan-in scaled uniform weights, zero biases, unit norm scales."""
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            for m in self.modules():
                if isinstance(m, (nn.Conv2d, nn.Linear)):
                    nn.init.kaiming_uniform_(m.weight, nonlinearity="relu")
                    nn.init.zeros_(m.bias)
                elif isinstance(m, nn.BatchNorm2d):
                    m.reset_running_stats()
                    nn.init.ones_(m.weight)
                    nn.init.zeros_(m.bias)
        self.initialized = True

    def check_initialized(self):
        if not self.initialized:
            raise UninitializedWeights("Siamese weights were never initialized or loaded")

    def embed(self, images):
        self.check_initialized()
        return self.encoder(images)

    def forward(self, a, b):
        """Probability that the judge likes `b` given the liked anchor `a`."""
        h = self.embed(torch.cat([a, b]))
        d = distance(h[:len(a)], h[len(a):])
        return torch.sigmoid(self.head(d)).squeeze(-1)


def encode(image, net):
    """Embedding of one HxWx3 image in inference mode."""
    net.check_initialized()
    x = torch.as_tensor(np.asarray(image, dtype=np.float32)).permute(2, 0, 1)
    net.eval()
    with torch.no_grad():
        return net.embed(x.unsqueeze(0))[0].numpy()


def distance(h1, h2):
    return abs(h1 - h2)


def head_probability(d, net):
    net.check_initialized()
    with torch.no_grad():
        logit = net.head(torch.as_tensor(np.asarray(d, dtype=np.float32)))
    return float(torch.sigmoid(logit).reshape(-1)[0])


def bce_loss(p, label, epsilon=1e-7):
    p = torch.clamp(torch.as_tensor(p), epsilon, 1.0 - epsilon)
    label = torch.as_tensor(label, dtype=p.dtype)
    return -(label * torch.log(p) + (1 - label) * torch.log(1 - p))


def contrastive_loss(d, label, margin=1.0, flip_label_convention=False):
    """
    Label 1 marks a similar pair (a like), which is pulled together; label 0
    pairs are pushed out to the margin. The flag swaps the two roles.
    """
    d = torch.as_tensor(d)
    similar = torch.as_tensor(label, dtype=d.dtype)
    if flip_label_convention:
        similar = 1 - similar
    return (similar * 0.5 * d**2 +
            (1 - similar) * 0.5 * torch.clamp(margin - d, min=0.0)**2)


@dataclass(frozen=True)
class LossConfig:
    kind: str = LOSS_BCE
    margin: float = 1.0
    epsilon: float = 1e-7
    flip_label_convention: bool = False
    learning_rate: float = 0.0001

    def __post_init__(self):
        if self.kind not in (LOSS_BCE, LOSS_CONTRASTIVE):
            raise ValueError("Unknown loss kind {!r}".format(self.kind))
        if self.margin <= 0:
            raise ValueError("The contrastive margin must be positive")

    @classmethod
    def from_cfg(cls, cfg):
        """Build from the `siamese` section of a run configuration."""
        loss = cfg["loss"]
        return cls(loss["kind"], loss["margin"], loss["epsilon"],
                   loss["flip_label_convention"], cfg["learning_rate"])


def pair_loss(net, a, b, labels, loss_config):
    """Mean loss of a batch of (anchor, candidate, label) pairs."""
    h = net.embed(torch.cat([a, b]))
    d = distance(h[:len(a)], h[len(a):])
    if loss_config.kind == LOSS_BCE:
        p = torch.sigmoid(net.head(d)).squeeze(-1)
        return bce_loss(p, labels, loss_config.epsilon).mean()
    norm = torch.linalg.vector_norm(d, dim=-1)
    metric = contrastive_loss(norm, labels, loss_config.margin,
                              loss_config.flip_label_convention).mean()
    # Head fitted on detached differences only.
    p = torch.sigmoid(net.head(d.detach())).squeeze(-1)
    return metric + bce_loss(p, labels, loss_config.epsilon).mean()


# -------------------- Triplets --------------------

@dataclass(frozen=True, order=True)
class Triplet:
    """Images of three users of the judged side, keyed by user id."""
    judge: UserId
    anchor: UserId
    positive: UserId
    negative: UserId


def judge_preferences(log_, judged_side=None):
    """Map each judge to its sorted liked and disliked targets."""
    likes = defaultdict(set)
    dislikes = defaultdict(set)
    for e in log_.events:
        if judged_side is not None and e.target.side is not judged_side:
            continue
        if e.kind is Kind.DISLIKE:
            dislikes[e.actor].add(e.target)
        else:
            likes[e.actor].add(e.target)
    return {j: (tuple(sorted(likes[j])), tuple(sorted(dislikes[j])))
            for j in sorted(set(likes) | set(dislikes))}


def sample_triplets(log_, n, seed, judged_side=None):
    """
    Draw `n` triplets uniformly from all (anchor, positive, negative)
    combinations of single judges. Sampling is without replacement unless
    `n` exceeds the number of distinct triplets.
    """
    log_.require_training_split("Triplet sampling")
    eligible = [(j, l, d) for j, (l, d) in judge_preferences(log_, judged_side).items()
                if len(l) >= 2 and len(d) >= 1]
    if not eligible:
        raise InsufficientJudges(
            "No judge has two Likes and a Dislike{}".format(
                "" if judged_side is None else " on side " + judged_side.value))
    weights = np.array([len(l) * (len(l) - 1) * len(d) for _, l, d in eligible],
                       dtype=np.float64)
    total = int(weights.sum())
    replace = n > total
    if replace:
        log.warning("Requested %d triplets but only %d are distinct; sampling with replacement",
                    n, total)

    rng = np.random.default_rng(seed)
    probs = weights / weights.sum()
    chosen = set()
    triplets = list()
    while len(triplets) < n:
        judge, liked, disliked = eligible[int(rng.choice(len(eligible), p=probs))]
        a, p = rng.choice(len(liked), size=2, replace=False)
        t = Triplet(judge, liked[a], liked[p], disliked[int(rng.integers(len(disliked)))])
        if not replace:
            if t in chosen:
                continue
            chosen.add(t)
        triplets.append(t)
    return triplets


def _triplet_batch(triplets, images):
    a = images.batch([t.anchor for t in triplets])
    p = images.batch([t.positive for t in triplets])
    n = images.batch([t.negative for t in triplets])
    return a, p, n


# -------------------- Training --------------------

class SiameseCheckpoint(Checkpoint):
    KIND = "siamese"

    @classmethod
    def from_net(cls, net, meta):
        tensors = OrderedDict((name, t.detach().cpu().numpy())
                              for name, t in net.state_dict().items())
        meta = dict(meta, spec=net.spec.as_dict())
        return cls(tensors, meta)

    def to_net(self):
        net = SiameseNet(EncoderSpec.from_dict(self.meta["spec"]))
        net.load_state_dict(OrderedDict(
            (name, torch.from_numpy(arr.copy())) for name, arr in self.tensors.items()))
        net.initialized = True
        net.eval()
        return net

    @property
    def losses(self):
        return list(self.meta.get("losses", []))

    @property
    def judged_side(self):
        side = self.meta.get("judged_side")
        return None if side is None else Side(side)


def train_siamese(triplets, images, loss_config, epochs, batch_size, seed,
                  spec=EncoderSpec(), judged_side=None):
    """
    Fit encoder and head with Adam. Each triplet contributes a positive
    (anchor, positive) and a negative (anchor, negative) pair.
    """
    if not triplets:
        raise ValueError("Siamese training needs at least one triplet")
    net = SiameseNet(spec, seed=seed)
    optimizer = torch.optim.Adam(net.parameters(), lr=loss_config.learning_rate)
    rng = np.random.default_rng(seed)
    tag = "siamese" if judged_side is None else "siamese_" + judged_side.value
    losses = list()
    net.train()
    for epoch in range(epochs):
        order = rng.permutation(len(triplets))
        total, count = 0.0, 0
        for start in range(0, len(order), batch_size):
            batch = [triplets[i] for i in order[start:start + batch_size]]
            a, p, n = _triplet_batch(batch, images)
            labels = torch.cat([torch.ones(len(batch)), torch.zeros(len(batch))])
            loss = pair_loss(net, torch.cat([a, a]), torch.cat([p, n]), labels, loss_config)
            if not torch.isfinite(loss):
                raise Divergence("{} loss became non-finite in epoch {}".format(tag, epoch + 1))
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += float(loss) * len(batch)
            count += len(batch)
        losses.append(total / count)
        log.info("%s epoch %d: mean loss %.6f", tag, epoch + 1, losses[-1])
    net.eval()
    meta = {
        "seed": seed,
        "loss": asdict(loss_config),
        "epochs": epochs,
        "batch_size": batch_size,
        "n_triplets": len(triplets),
        "losses": losses,
        "judged_side": None if judged_side is None else judged_side.value,
    }
    return SiameseCheckpoint.from_net(net, meta)


def train_siamese_sides(log_, images, cfg):
    """One checkpoint per judged side, keyed by that side."""
    loss_config = LossConfig.from_cfg(cfg)
    ckpts = dict()
    for offset, side in enumerate(Side):
        triplets = sample_triplets(log_, cfg["n_triplets"], cfg["seed"] + offset, side)
        ckpt = train_siamese(triplets, images, loss_config, cfg["epochs"], cfg["batch_size"],
                             cfg["seed"] + offset, judged_side=side)
        ckpt.meta["trained_on"] = [{"split": log_.provenance, "digest": log_.digest()}]
        ckpts[side] = ckpt
    return ckpts


def triplet_accuracy(net, triplets, images, batch_size=256):
    """Fraction of triplets where the positive outscores the negative."""
    net.eval()
    hits = 0
    with torch.no_grad():
        for start in range(0, len(triplets), batch_size):
            batch = triplets[start:start + batch_size]
            a, p, n = _triplet_batch(batch, images)
            hits += int((net(a, p) > net(a, n)).sum())
    return hits / len(triplets)


# -------------------- Embeddings --------------------

def embed_users(net, uids, images, batch_size=256):
    """Inference-mode embeddings of many users as float32 arrays."""
    net.check_initialized()
    net.eval()
    uids = list(uids)
    table = dict()
    with torch.no_grad():
        for start in range(0, len(uids), batch_size):
            chunk = uids[start:start + batch_size]
            h = net.embed(images.batch(chunk)).numpy()
            table.update(zip(chunk, h))
    return table


class Embedder(object):
    """Lazily cached embeddings, each user encoded by the network of its side."""
    def __init__(self, nets, images):
        self.nets = nets
        self.images = images
        self._table = dict()

    def __call__(self, uid):
        if uid not in self._table:
            self.precompute([uid])
        return self._table[uid]

    def precompute(self, uids):
        missing = sorted(set(uids) - set(self._table))
        for side in Side:
            chunk = [u for u in missing if u.side is side]
            if chunk:
                self._table.update(embed_users(self.nets[side], chunk, self.images))


def anchored_expressions(log_):
    """
    `(judge, anchor, target, label)` for every directed expression that has
    an earlier liked anchor of the same judge, first expression per pair.
    Label 1 marks a like, 0 a dislike.
    """
    last_like = dict()
    seen = set()
    rows = list()
    for e in log_.events:
        anchor = last_like.get(e.actor)
        if anchor is not None and (e.actor, e.target) not in seen and anchor != e.target:
            seen.add((e.actor, e.target))
            rows.append((e.actor, anchor, e.target, 0 if e.kind is Kind.DISLIKE else 1))
        if e.kind is not Kind.DISLIKE:
            last_like[e.actor] = e.target
    return rows


def siamese_scored_pairs(nets, log_, images):
    """
    Head probability of (most recent liked anchor, target) for every anchored
    expression of `log_`, as `(judge, target, probability, label)` tuples.
    """
    embed = Embedder(nets, images)
    rows = anchored_expressions(log_)
    embed.precompute({u for _, a, t, _ in rows for u in (a, t)})
    return [(judge, target, head_probability(distance(embed(anchor), embed(target)),
                                             nets[target.side]), label)
            for judge, anchor, target, label in rows]
