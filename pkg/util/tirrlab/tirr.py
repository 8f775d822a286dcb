# Copyright 2026 The tirrlab Authors.
# Licensed under the Apache License, Version 2.0, see LICENSE for details.
# SPDX-License-Identifier: Apache-2.0
#
# Temporal reciprocal model: an LSTM runs over the signed Siamese difference
# vectors between a user's past expressions and a candidate, and a dense
# stack turns its summary plus the candidate embedding into a like
# probability. Both directions are averaged into the match probability.

import logging as log
from collections import OrderedDict
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .checkpoint import Checkpoint
from .core import HISTORY_CAP, YEAR_TICKS, build_history, extract_labeled_pairs
from .errors import Divergence, EmptyPool, ProvenanceError, UninitializedWeights
from .imgproc import pad_and_mask
from .siamese import bce_loss, distance


@dataclass(frozen=True)
class TirrSpec:
    seq_len: int = HISTORY_CAP
    step_dim: int = 128
    hidden: int = 128
    dense1: int = 128
    dense2: int = 128
    dropout: float = 0.4

    @classmethod
    def miniature(cls):
        return cls(seq_len=3, step_dim=4, hidden=4, dense1=4, dense2=4)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def as_dict(self):
        return asdict(self)


class LstmState(NamedTuple):
    cell: torch.Tensor
    hidden: torch.Tensor
    forget: torch.Tensor
    input: torch.Tensor
    candidate: torch.Tensor
    output: torch.Tensor


class LstmCell(nn.Module):
    """Gates stacked as input, forget, candidate write, output."""
    def __init__(self, input_dim, hidden):
        super().__init__()
        self.hidden = hidden
        self.weight_ih = nn.Parameter(torch.empty(4 * hidden, input_dim))
        self.weight_hh = nn.Parameter(torch.empty(4 * hidden, hidden))
        self.bias = nn.Parameter(torch.zeros(4 * hidden))

    def initial_state(self, batch, dtype=torch.float32):
        z = torch.zeros(batch, self.hidden, dtype=dtype)
        return LstmState(z, z, z, z, z, z)

    def forward(self, state, x, mask=None):
        gates = x @ self.weight_ih.T + state.hidden @ self.weight_hh.T + self.bias
        i, f, g, o = gates.chunk(4, dim=-1)
        i, f, g, o = torch.sigmoid(i), torch.sigmoid(f), torch.tanh(g), torch.sigmoid(o)
        cell = f * state.cell + i * g
        hidden = o * torch.tanh(cell)
        if mask is not None:
            keep = mask.unsqueeze(-1)
            cell = torch.where(keep, cell, state.cell)
            hidden = torch.where(keep, hidden, state.hidden)
        return LstmState(cell, hidden, f, i, g, o)


def lstm_step(state, x, cell, mask=None):
    return cell(state, x, mask)


class TirrNet(nn.Module):
    def __init__(self, spec=TirrSpec(), seed=None):
        super().__init__()
        self.spec = spec
        self.lstm = LstmCell(spec.step_dim, spec.hidden)
        self.dense1 = nn.Linear(spec.step_dim, spec.dense1)
        self.dense2 = nn.Linear(spec.hidden + spec.dense1, spec.dense2)
        self.dropout = nn.Dropout(spec.dropout)
        self.out = nn.Linear(spec.dense2, 1)
        self.initialized = False
        if seed is not None:
            self.reset_parameters(seed)

    def reset_parameters(self, seed):
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            for name, p in self.named_parameters():
                if name.endswith("bias"):
                    nn.init.zeros_(p)
                else:
                    bound = 1.0 / np.sqrt(p.shape[1])
                    nn.init.uniform_(p, -bound, bound)
        self.initialized = True

    def summary(self, steps, mask):
        """Hidden state after the last unmasked step."""
        state = self.lstm.initial_state(steps.shape[0], steps.dtype)
        for t in range(steps.shape[1]):
            state = lstm_step(state, steps[:, t], self.lstm, mask[:, t])
        return state.hidden

    def forward(self, steps, mask, candidate):
        if not self.initialized:
            raise UninitializedWeights("TIRR weights were never initialized or loaded")
        cand = F.relu(self.dense1(candidate))
        z = torch.cat([self.summary(steps, mask), cand], dim=-1)
        z = self.dropout(F.relu(self.dense2(z)))
        return torch.sigmoid(self.out(z)).squeeze(-1)


def history_step_vectors(history, candidate, embed):
    """Signed embedding differences of each history item against `candidate`."""
    c = embed(candidate)
    return [item.polarity * distance(embed(item.target), c) for item in history.items]


@dataclass
class HistoryPolicy:
    cap: int = HISTORY_CAP
    max_age: int = YEAR_TICKS

    def history(self, user, log_, reference_time, exclude=None):
        return build_history(user, log_, reference_time, self.cap, self.max_age, exclude)


class TirrModel(object):
    """
    Trained network plus the frozen per-side Siamese networks, reached
    through an `Embedder`. Histories come from whatever log is passed in.
    """
    def __init__(self, net, embedder, policy=HistoryPolicy()):
        self.net = net
        self.embedder = embedder
        self.policy = policy

    def directed_rows(self, rows, length=None):
        """
        Batch tensors for `(history, candidate)` rows. `length` may exceed the
        net's sequence length; extra steps are masked padding.
        """
        length = length or self.net.spec.seq_len
        dim = self.net.spec.step_dim
        steps, masks, cands = [], [], []
        for history, candidate in rows:
            seq = pad_and_mask(history_step_vectors(history, candidate, self.embedder),
                               length, dim)
            steps.append(seq.steps)
            masks.append(seq.mask)
            cands.append(self.embedder(candidate))
        return (torch.from_numpy(np.stack(steps)), torch.from_numpy(np.stack(masks)),
                torch.from_numpy(np.stack(cands).astype(np.float32)))

    def directed_scores(self, rows, length=None):
        self.net.eval()
        with torch.no_grad():
            return self.net(*self.directed_rows(rows, length)).numpy()

    def pair_rows(self, log_, pairs):
        """Two rows per pair in canonical orientation: (lo judges hi), (hi judges lo)."""
        rows = list()
        for x, y, t in pairs:
            lo, hi = (x, y) if x < y else (y, x)
            rows.append((self.policy.history(lo, log_, t, exclude=hi), hi))
            rows.append((self.policy.history(hi, log_, t, exclude=lo), lo))
        self.embedder.precompute({u for h, c in rows for u in [c] + [i.target for i in h.items]})
        return rows


def directed_score(history, candidate, model, length=None):
    return float(model.directed_scores([(history, candidate)], length)[0])


def match_probability(x, y, histories, model):
    """Average of both directed scores, computed in one canonically ordered batch."""
    lo, hi = (x, y) if x < y else (y, x)
    p = model.directed_scores([(histories[lo], hi), (histories[hi], lo)])
    return float(0.5 * (p[0] + p[1]))


def score_pairs(model, log_, pairs, batch_size=512):
    """
    Match probabilities of `(x, y, reference_time)` triples, with histories
    drawn from `log_` strictly before each reference time.
    """
    scores = list()
    for start in range(0, len(pairs), batch_size):
        rows = model.pair_rows(log_, pairs[start:start + batch_size])
        p = model.directed_scores(rows)
        scores.extend(float(s) for s in 0.5 * (p[0::2] + p[1::2]))
    return scores


def recommend_top_k(x, pool, k, model, log_, reference_time):
    """Candidates ranked by match probability, ties broken by user id."""
    if k < 1:
        raise ValueError("k must be at least 1")
    pool = sorted(set(pool))
    if not pool:
        raise EmptyPool("No candidates to recommend to {}".format(x))
    scores = score_pairs(model, log_, [(x, c, reference_time) for c in pool])
    ranked = sorted(zip(pool, scores), key=lambda cs: (-cs[1], cs[0]))
    return ranked[:k]


# -------------------- Training --------------------

class TirrCheckpoint(Checkpoint):
    KIND = "tirr"

    @classmethod
    def from_net(cls, net, meta):
        tensors = OrderedDict((name, t.detach().cpu().numpy())
                              for name, t in net.state_dict().items())
        return cls(tensors, dict(meta, spec=net.spec.as_dict()))

    def to_net(self):
        net = TirrNet(TirrSpec.from_dict(self.meta["spec"]))
        net.load_state_dict(OrderedDict(
            (name, torch.from_numpy(arr.copy())) for name, arr in self.tensors.items()))
        net.initialized = True
        net.eval()
        return net

    @property
    def losses(self):
        return list(self.meta.get("losses", []))

    def verify_siamese(self, siamese_ckpts):
        """Refuse Siamese weights other than the ones training used."""
        for side, ckpt in siamese_ckpts.items():
            expected = self.meta["siamese_digests"].get(side.value)
            if expected != ckpt.digest():
                raise ProvenanceError(
                    "TIRR was trained against Siamese weights {} for side {}, got {}".format(
                        expected, side.value, ckpt.digest()))


def load_tirr_model(ckpt, siamese_ckpts, embedder, policy=HistoryPolicy()):
    ckpt.verify_siamese(siamese_ckpts)
    return TirrModel(ckpt.to_net(), embedder, policy)


def train_tirr(match_set, siamese_ckpts, embedder, cfg, seed, policy=HistoryPolicy(),
               spec=None):
    """
    Fit the TIRR weights with Adam on the match split. Each labelled pair is
    scored in canonical orientation, so the order within a pair is irrelevant.
    The Siamese networks behind `embedder` are only read.
    """
    match_set.require_training_split("TIRR training")
    return fit_pairs(extract_labeled_pairs(match_set), match_set, siamese_ckpts, embedder,
                     cfg, seed, policy, spec)


def fit_pairs(pairs, log_, siamese_ckpts, embedder, cfg, seed, policy=HistoryPolicy(),
              spec=None):
    """Train on explicit labelled pairs with histories drawn from `log_`."""
    log_.require_training_split("TIRR training")
    if not pairs:
        raise ValueError("No labelled pairs to train on")
    spec = spec or TirrSpec(seq_len=HISTORY_CAP, dropout=cfg["dropout"])
    net = TirrNet(spec, seed=seed)
    model = TirrModel(net, embedder, policy)

    rows = model.pair_rows(log_, [(p.x, p.y, p.reference_time) for p in pairs])
    steps, masks, cands = model.directed_rows(rows)
    labels = torch.tensor([float(p.label) for p in pairs])

    optimizer = torch.optim.Adam(net.parameters(), lr=cfg["learning_rate"])
    rng = np.random.default_rng(seed)
    batch_size = cfg["batch_size"]
    losses = list()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        net.train()
        for epoch in range(cfg["epochs"]):
            order = rng.permutation(len(pairs))
            total = 0.0
            for start in range(0, len(order), batch_size):
                idx = torch.from_numpy(order[start:start + batch_size])
                both = torch.stack([2 * idx, 2 * idx + 1], dim=1).reshape(-1)
                p = net(steps[both], masks[both], cands[both])
                prob = 0.5 * (p[0::2] + p[1::2])
                loss = bce_loss(prob, labels[idx]).mean()
                if not torch.isfinite(loss):
                    raise Divergence("TIRR loss became non-finite in epoch {}".format(epoch + 1))
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                total += float(loss) * len(idx)
            losses.append(total / len(pairs))
            log.info("tirr epoch %d: mean loss %.6f", epoch + 1, losses[-1])
    net.eval()

    meta = {
        "seed": seed,
        "epochs": cfg["epochs"],
        "batch_size": batch_size,
        "learning_rate": cfg["learning_rate"],
        "n_pairs": len(pairs),
        "losses": losses,
        "history": {"cap": policy.cap, "max_age": policy.max_age},
        "siamese_digests": {side.value: ckpt.digest() for side, ckpt in siamese_ckpts.items()},
        "trained_on": [{"split": log_.provenance, "digest": log_.digest()}],
    }
    return TirrCheckpoint.from_net(net, meta)
