# Copyright 2026 The tirrlab Authors.
# Licensed under the Apache License, Version 2.0, see LICENSE for details.
# SPDX-License-Identifier: Apache-2.0

import numpy as np
import pytest
import torch

from tirrlab.core import HistoryItem, LabeledPair, PreferenceHistory, Side, UserId, extract_labeled_pairs
from tirrlab.errors import EmptyPool, ProvenanceError, UninitializedWeights
from tirrlab.gradcheck import check_gradients
from tirrlab.siamese import (EncoderSpec, Embedder, LossConfig, bce_loss, sample_triplets,
                             train_siamese)
from tirrlab.tirr import (HistoryPolicy, LstmCell, TirrCheckpoint, TirrModel, TirrNet, TirrSpec,
                          directed_score, fit_pairs, history_step_vectors, load_tirr_model, lstm_step,
                          match_probability, recommend_top_k, score_pairs, train_tirr)

SPEC = TirrSpec.miniature()
POLICY = HistoryPolicy(cap=3)
CFG = {"epochs": 10, "batch_size": 16, "learning_rate": 0.01, "dropout": 0.4}


@pytest.fixture(scope="module")
def siamese_ckpts(small_log, tiny_images):
    ckpts = dict()
    for side in Side:
        triplets = sample_triplets(small_log, 16, 0, side)
        ckpts[side] = train_siamese(triplets, tiny_images, LossConfig(learning_rate=0.01), 1, 8,
                                    1, EncoderSpec.miniature(), side)
    return ckpts


@pytest.fixture
def embedder(siamese_ckpts, tiny_images):
    return Embedder({side: ckpt.to_net() for side, ckpt in siamese_ckpts.items()}, tiny_images)


@pytest.fixture
def model(embedder):
    return TirrModel(TirrNet(SPEC, seed=0), embedder, POLICY)


@pytest.fixture(scope="module")
def pairs(small_log):
    return extract_labeled_pairs(small_log)[:200]


def test_full_size_layout():
    net = TirrNet(seed=0)
    assert net.lstm.weight_ih.shape == (512, 128)
    assert net.dense1.in_features == 128 and net.dense1.out_features == 128
    assert net.dense2.in_features == 256 and net.dense2.out_features == 128
    assert net.out.in_features == 128
    assert net.dropout.p == 0.4


def _cell(i_bias, f_bias):
    cell = LstmCell(2, 2)
    with torch.no_grad():
        cell.weight_ih.copy_(torch.linspace(-1, 1, 16).reshape(8, 2))
        cell.weight_hh.copy_(torch.linspace(1, -1, 16).reshape(8, 2))
        cell.bias.zero_()
        cell.bias[0:2] = i_bias
        cell.bias[2:4] = f_bias
    state = cell.initial_state(1)
    return cell, state._replace(cell=torch.tensor([[0.3, -0.7]]), hidden=torch.tensor([[0.1, 0.2]]))


def test_lstm_pass_through_gates():
    cell, state = _cell(-1e4, 1e4)
    with torch.no_grad():
        new = lstm_step(state, torch.tensor([[0.5, -1.5]]), cell)
    assert torch.equal(new.forget, torch.ones(1, 2))
    assert torch.equal(new.input, torch.zeros(1, 2))
    assert torch.equal(new.cell, state.cell)


def test_lstm_forget_everything():
    cell, state = _cell(1e4, -1e4)
    with torch.no_grad():
        new = lstm_step(state, torch.tensor([[0.5, -1.5]]), cell)
    assert torch.equal(new.forget, torch.zeros(1, 2))
    assert torch.equal(new.cell, new.input * new.candidate)


def test_lstm_masked_step():
    cell, state = _cell(0.0, 0.0)
    with torch.no_grad():
        new = lstm_step(state, torch.tensor([[0.5, -1.5]]), cell, torch.tensor([False]))
    assert torch.equal(new.cell, state.cell)
    assert torch.equal(new.hidden, state.hidden)


def test_step_vectors(uid):
    table = {uid("y1"): np.array([1.0, 2.0]), uid("y2"): np.array([0.0, 5.0])}
    liked = PreferenceHistory(uid("x1"), (HistoryItem(uid("y1"), 1, 1), ))
    disliked = PreferenceHistory(uid("x1"), (HistoryItem(uid("y1"), -1, 1), ))
    assert history_step_vectors(PreferenceHistory(uid("x1"), ()), uid("y2"), table.get) == []
    assert not history_step_vectors(liked, uid("y1"), table.get)[0].any()
    like_vec = history_step_vectors(liked, uid("y2"), table.get)[0]
    assert like_vec.tolist() == [1.0, 3.0]
    assert np.array_equal(history_step_vectors(disliked, uid("y2"), table.get)[0], -like_vec)


def test_uninitialized(embedder, uid):
    model = TirrModel(TirrNet(SPEC), embedder, POLICY)
    with pytest.raises(UninitializedWeights):
        directed_score(PreferenceHistory(uid("x1"), ()), uid("y1"), model)


def test_empty_histories_share_score(model, uid):
    rows = [(PreferenceHistory(uid("x1"), ()), uid("y4")),
            (PreferenceHistory(uid("x7"), ()), uid("y4"))]
    scores = model.directed_scores(rows)
    assert scores[0] == scores[1]
    assert 0.0 < scores[0] < 1.0


def test_scores_deterministic_and_bounded(model, small_log, pairs):
    triples = [(p.x, p.y, p.reference_time) for p in pairs[:50]]
    a = score_pairs(model, small_log, triples)
    b = score_pairs(model, small_log, triples, batch_size=7)
    assert a == b
    assert all(0.0 < s < 1.0 for s in a)


def test_padding_never_changes_score(model, small_log, pairs):
    rows = model.pair_rows(small_log, [(p.x, p.y, p.reference_time) for p in pairs[:40]])
    assert np.array_equal(model.directed_scores(rows), model.directed_scores(rows, length=20))


def test_pair_symmetry(model, small_log, pairs):
    forward = [(p.x, p.y, p.reference_time) for p in pairs]
    backward = [(p.y, p.x, p.reference_time) for p in pairs]
    assert score_pairs(model, small_log, forward) == score_pairs(model, small_log, backward)


def test_random_pair_symmetry(model, small_log):
    rng = np.random.default_rng(4)
    end = small_log.events[-1].ts + 1
    forward = [(UserId(Side.X, int(rng.integers(30))), UserId(Side.Y, int(rng.integers(30))),
                int(rng.integers(end))) for _ in range(1000)]
    backward = [(y, x, t) for x, y, t in forward]
    assert score_pairs(model, small_log, forward) == score_pairs(model, small_log, backward)


def test_match_probability(model, small_log, pairs):
    p = pairs[0]
    histories = {p.x: POLICY.history(p.x, small_log, p.reference_time, exclude=p.y),
                 p.y: POLICY.history(p.y, small_log, p.reference_time, exclude=p.x)}
    assert (match_probability(p.x, p.y, histories, model) ==
            match_probability(p.y, p.x, histories, model))
    assert match_probability(p.x, p.y, histories, model) == pytest.approx(
        score_pairs(model, small_log, [(p.x, p.y, p.reference_time)])[0], abs=1e-6)

    with torch.no_grad():
        model.net.out.weight.zero_()
        model.net.out.bias.zero_()
    assert match_probability(p.x, p.y, histories, model) == 0.5


def test_gradients_match_finite_differences():
    net = TirrNet(SPEC, seed=3).double().eval()
    gen = torch.Generator().manual_seed(1)
    steps = torch.randn(4, 3, 4, generator=gen, dtype=torch.float64)
    mask = torch.tensor([[True] * 3, [False, True, True], [False, False, True], [True] * 3])
    cands = torch.randn(4, 4, generator=gen, dtype=torch.float64)
    labels = torch.tensor([1.0, 0.0], dtype=torch.float64)

    def loss():
        p = net(steps, mask, cands)
        return bce_loss(0.5 * (p[0::2] + p[1::2]), labels).mean()

    result = check_gradients(loss, net.named_parameters(), n_coords=100)
    assert result.n_coords == 100
    assert result.max_rel_error <= 1e-4, result.worst


def test_zero_epochs_is_initialization(small_log, siamese_ckpts, embedder, pairs):
    cfg = dict(CFG, epochs=0)
    ckpt = fit_pairs(pairs, small_log, siamese_ckpts, embedder, cfg, 5, POLICY, SPEC)
    init = TirrNet(SPEC, seed=5).state_dict()
    assert ckpt.losses == []
    for name, t in init.items():
        assert np.array_equal(ckpt.tensors[name], t.numpy())


def test_swapped_pairs_train_identically(small_log, siamese_ckpts, embedder, pairs):
    swapped = [LabeledPair(p.y, p.x, p.label, p.reference_time) for p in pairs]
    cfg = dict(CFG, epochs=2)
    a = fit_pairs(pairs, small_log, siamese_ckpts, embedder, cfg, 5, POLICY, SPEC)
    b = fit_pairs(swapped, small_log, siamese_ckpts, embedder, cfg, 5, POLICY, SPEC)
    assert a.losses == b.losses
    assert all(np.array_equal(a.tensors[n], b.tensors[n]) for n in a.tensors)


def test_training_lowers_loss_and_freezes_encoder(small_log, siamese_ckpts, embedder):
    before = {side: net.state_dict() for side, net in embedder.nets.items()}
    before = {side: {k: v.clone() for k, v in sd.items()} for side, sd in before.items()}
    ckpt = train_tirr(small_log, siamese_ckpts, embedder, CFG, 5, POLICY, SPEC)
    assert len(ckpt.losses) == CFG["epochs"]
    assert ckpt.losses[-1] < ckpt.losses[0]
    for side, net in embedder.nets.items():
        for k, v in net.state_dict().items():
            assert torch.equal(v, before[side][k])
    assert ckpt.meta["siamese_digests"] == {s.value: c.digest() for s, c in siamese_ckpts.items()}
    assert ckpt.meta["trained_on"] == [{"split": "full", "digest": small_log.digest()}]


def test_checkpoint_provenance(tmp_path, small_log, siamese_ckpts, embedder, pairs):
    ckpt = fit_pairs(pairs[:32], small_log, siamese_ckpts, embedder, dict(CFG, epochs=1), 5,
                     POLICY, SPEC)
    ckpt.save(tmp_path / "tirr.ckpt")
    back = TirrCheckpoint.load(tmp_path / "tirr.ckpt")
    model = load_tirr_model(back, siamese_ckpts, embedder, POLICY)
    triples = [(p.x, p.y, p.reference_time) for p in pairs[:10]]
    direct = TirrModel(ckpt.to_net(), embedder, POLICY)
    assert score_pairs(model, small_log, triples) == score_pairs(direct, small_log, triples)

    swapped = {Side.X: siamese_ckpts[Side.Y], Side.Y: siamese_ckpts[Side.X]}
    with pytest.raises(ProvenanceError):
        load_tirr_model(back, swapped, embedder, POLICY)


def test_recommend_top_k(model, small_log):
    x = UserId(Side.X, 0)
    pool = [UserId(Side.Y, i) for i in range(6)]
    ranked = recommend_top_k(x, pool, 10, model, small_log, 10**6)
    assert sorted(u for u, _ in ranked) == pool
    scores = [s for _, s in ranked]
    assert scores == sorted(scores, reverse=True)
    exhaustive = score_pairs(model, small_log, [(x, c, 10**6) for c in pool])
    assert ranked[0][0] == pool[int(np.argmax(exhaustive))]
    assert recommend_top_k(x, pool[:1], 1, model, small_log, 10**6)[0][0] == pool[0]
    assert len(recommend_top_k(x, pool, 2, model, small_log, 10**6)) == 2
    with pytest.raises(EmptyPool):
        recommend_top_k(x, [], 1, model, small_log, 10**6)
    with pytest.raises(ValueError):
        recommend_top_k(x, pool, 0, model, small_log, 10**6)
