import copy
import io

import numpy as np
import pytest

from conftest import random_tables
from mrnel.autograd import Tape
from mrnel.corpus import Corpus, Document, Mention
from mrnel.params import ModelConfig, init_params
from mrnel.score import make_leaves
from mrnel.training import (AdamState, TrainConfig, adam_step,
                            diversity_regularizer, dist, document_loss, fit,
                            gradient_check, ranking_loss)


def loss_value(rho, gold_idx, scored, mask, gamma):
    tape = Tape(recording=False)
    node, n = ranking_loss(tape, tape.wrap(rho), np.asarray(gold_idx),
                           np.asarray(scored), np.asarray(mask), gamma)
    return float(node.value), n


class TestRankingLoss:
    def test_hand_computed_three_candidates(self):
        # gold 0.5; terms: gold -> gamma = 0.1,
        # e2 -> max(0, 0.1 - 0.5 + 0.45) = 0.05, e3 -> 0; total 0.15
        rho = np.array([[0.5, 0.45, 0.2]])
        val, n = loss_value(rho, [0], [True], np.ones((1, 3), bool), 0.1)
        assert n == 1
        assert val == pytest.approx(0.15, abs=1e-12)

    def test_gold_winning_by_margin_costs_exactly_gamma(self):
        rho = np.array([[2.0, 0.5, -1.0], [3.0, 1.0, 0.0]])
        val, n = loss_value(rho, [0, 0], [True, True],
                            np.ones((2, 3), bool), 0.01)
        assert val == pytest.approx(0.02, abs=1e-12)
        assert n == 2

    def test_unscored_mention_contributes_nothing(self):
        rho = np.array([[0.0, 5.0], [0.0, 5.0]])
        val, n = loss_value(rho, [0, -1], [True, False],
                            np.ones((2, 2), bool), 0.1)
        only_first, _ = loss_value(rho[:1], [0], [True],
                                   np.ones((1, 2), bool), 0.1)
        assert val == pytest.approx(only_first)
        assert n == 1

    def test_padded_candidates_excluded(self):
        rho = np.array([[0.2, 99.0]])
        mask = np.array([[True, False]])
        val, _ = loss_value(rho, [0], [True], mask, 0.1)
        assert val == pytest.approx(0.1)

    def test_no_scored_mentions_zero_loss(self):
        val, n = loss_value(np.zeros((2, 2)), [-1, -1], [False, False],
                            np.ones((2, 2), bool), 0.1)
        assert val == 0.0 and n == 0

    def test_gradient_pushes_gold_up(self):
        tape = Tape()
        rho = tape.leaf(np.array([[0.0, 0.0]]))
        node, _ = ranking_loss(tape, rho, np.array([0]), np.array([True]),
                               np.ones((1, 2), bool), 0.1)
        tape.backward(node)
        assert rho.grad[0, 0] < 0 < rho.grad[0, 1]


class TestDist:
    def _d(self, x, y):
        return float(dist(Tape(recording=False), np.asarray(x, float),
                          np.asarray(y, float)).value)

    def test_identical_is_zero(self):
        assert self._d([1.0, 2.0], [1.0, 2.0]) == pytest.approx(0.0)

    def test_scaling_invariance(self):
        assert self._d([1.0, 2.0], [3.0, 6.0]) == pytest.approx(0.0, abs=1e-12)

    def test_opposite_is_two(self):
        assert self._d([1.0, -1.0], [-2.0, 2.0]) == pytest.approx(2.0)

    def test_orthonormal_is_sqrt_two(self):
        assert self._d([1.0, 0.0], [0.0, 5.0]) == pytest.approx(np.sqrt(2))

    def test_zero_vector_conventions(self):
        assert self._d([0.0, 0.0], [0.0, 0.0]) == 0.0
        assert self._d([0.0, 0.0], [1.0, 0.0]) == 2.0
        assert self._d([1.0, 0.0], [0.0, 0.0]) == 2.0


def reg_value(R, Dm, lambda1, lambda2, d):
    words, ents = random_tables(np.random.default_rng(0), d=d)
    params = init_params(ModelConfig(dim=d, num_relations=R.shape[0]),
                         0, words, ents)
    params.R = R.astype(np.float32)
    params.Dm = Dm.astype(np.float32)
    tape = Tape(recording=False)
    leaves = make_leaves(tape, params)
    return float(diversity_regularizer(tape, leaves, lambda1, lambda2).value)


class TestDiversityRegularizer:
    def test_single_relation_is_zero(self):
        assert reg_value(np.ones((1, 4)), np.ones((1, 4)),
                         -1e-7, -1e-7, 4) == 0.0

    def test_identical_relations_zero(self):
        R = np.tile([1.0, 2.0, 0.0, -1.0], (3, 1))
        assert reg_value(R, R.copy(), -1e-7, -1e-7, 4) == pytest.approx(0.0)

    def test_hand_computed_two_relations(self):
        # dist(R_1, R_2) = 2 (opposite), dist(D_1, D_2) = sqrt(2)
        R = np.array([[1.0, 0, 0, 0], [-1.0, 0, 0, 0]])
        Dm = np.array([[1.0, 0, 0, 0], [0, 1.0, 0, 0]])
        got = reg_value(R, Dm, -1e-7, -1e-7, 4)
        assert got == pytest.approx(-1e-7 * (2 + np.sqrt(2)), rel=1e-9)

    def test_negative_lambda_rewards_spread(self):
        R_far = np.array([[1.0, 0, 0, 0], [0, 1.0, 0, 0]])
        R_near = np.array([[1.0, 0.01, 0, 0], [1.0, 0, 0.01, 0]])
        Dm = np.ones((2, 4))
        assert reg_value(R_far, Dm, -1e-7, 0.0, 4) < \
            reg_value(R_near, Dm, -1e-7, 0.0, 4)


class TestAdam:
    def test_zero_gradient_leaves_params_unchanged(self):
        words, ents = random_tables(np.random.default_rng(0), d=4)
        params = init_params(ModelConfig(dim=4), 0, words, ents)
        before = params.A.copy()
        state = AdamState()
        adam_step(params, {"A": np.zeros_like(params.A)}, state, 1e-2)
        assert np.array_equal(params.A, before)
        assert state.t == 1

    def test_first_step_magnitude_near_lr(self):
        words, ents = random_tables(np.random.default_rng(0), d=4)
        params = init_params(ModelConfig(dim=4), 0, words, ents)
        before = params.A.astype(np.float64)
        g = np.array([1.0, -2.0, 0.5, -0.1])
        adam_step(params, {"A": g}, AdamState(), 1e-2)
        step = params.A.astype(np.float64) - before
        # bias-corrected first step is -lr * sign(g) up to eps
        assert np.allclose(step, -1e-2 * np.sign(g), atol=1e-6)

    def test_opposes_gradient_sign(self):
        words, ents = random_tables(np.random.default_rng(1), d=4)
        params = init_params(ModelConfig(dim=4), 3, words, ents)
        before = params.B.astype(np.float64)
        g = np.array([0.3, -0.7, 1.2, -0.2])
        state = AdamState()
        for _ in range(5):
            adam_step(params, {"B": g}, state, 1e-3)
        moved = params.B.astype(np.float64) - before
        assert (np.sign(moved) == -np.sign(g)).all()
        assert state.t == 5


def toy_training_world(d=4, seed=0):
    """Two-candidate task where the context word identifies the gold."""
    rng = np.random.default_rng(seed)
    words, ents = random_tables(rng, d=d)
    docs = []
    for i in range(6):
        gold, other = f"E{i}", f"E{(i + 7) % 20}"
        m = Mention(0, 1, "m", gold,
                    [(other, 0.7), (gold, 0.3)] if i % 2 else
                    [(gold, 0.3), (other, 0.7)])
        # context words re-use the gold entity's identity: w_i tracks E_i
        docs.append(Document(f"d{i}", ["m"] + [f"w{i}"] * 4, [m]))
    train = Corpus(docs[:4])
    dev = Corpus(docs[4:])
    params = init_params(ModelConfig(dim=d, num_relations=2, dropout=0.0),
                         seed, words, ents)
    return train, dev, params


class TestDocumentLoss:
    def test_floor_is_gamma_times_scored(self):
        train, _, params = toy_training_world()
        cfg = TrainConfig(gamma=0.05, lambda1=0.0, lambda2=0.0)
        for doc in train:
            tape = Tape(recording=False)
            total, rank_val, n_scored, _ = document_loss(
                tape, doc, params, cfg, train=False)
            assert rank_val >= 0.05 * n_scored - 1e-12

    def test_regularizer_added_to_total(self):
        train, _, params = toy_training_world()
        cfg_on = TrainConfig(lambda1=-1e-2, lambda2=-1e-2)
        cfg_off = TrainConfig(lambda1=0.0, lambda2=0.0)
        doc = train.documents[0]
        t1, t2 = Tape(recording=False), Tape(recording=False)
        with_reg = float(document_loss(t1, doc, params, cfg_on,
                                       train=False)[0].value)
        without = float(document_loss(t2, doc, params, cfg_off,
                                      train=False)[0].value)
        assert with_reg < without  # negative lambda rewards spread


class TestFit:
    def test_patience_one_with_flat_dev_stops_after_two_epochs(self):
        train, dev, params = toy_training_world()
        # single-candidate dev mentions: F1 is 1.0 every epoch
        for doc in dev:
            m = doc.mentions[0]
            m.candidates = [(m.gold, 1.0)]
        cfg = TrainConfig(patience=1, max_epochs=50, dev_f1_switch=2.0)
        _, log = fit(train, dev, copy.deepcopy(params), cfg)
        assert len(log) == 2

    def test_lr_switch_on_first_crossing(self):
        train, dev, params = toy_training_world()
        cfg = TrainConfig(max_epochs=3, patience=20, dev_f1_switch=0.0,
                          lr_initial=1e-4, lr_reduced=1e-5)
        _, log = fit(train, dev, copy.deepcopy(params), cfg)
        assert log[0]["lr"] == 1e-4          # switch applies after epoch 1
        assert all(r["lr"] == 1e-5 for r in log[1:])

    def test_bit_reproducible(self):
        train, dev, params = toy_training_world()
        cfg = TrainConfig(max_epochs=3, patience=20, dev_f1_switch=2.0,
                          seed=11)
        runs = []
        for _ in range(2):
            fh = io.StringIO()
            best, log = fit(train, dev, copy.deepcopy(params), cfg,
                            log_fh=fh)
            runs.append((best, log, fh.getvalue()))
        assert runs[0][0].equals(runs[1][0])
        for a, b in zip(runs[0][1], runs[1][1]):
            assert (a["epoch"], a["loss"], a["dev_f1"], a["lr"]) == \
                (b["epoch"], b["loss"], b["dev_f1"], b["lr"])
        # log text matches column-for-column except wall-clock seconds
        for la, lb in zip(runs[0][2].splitlines(), runs[1][2].splitlines()):
            assert la.split(",")[:4] == lb.split(",")[:4]

    def test_learns_separable_toy(self):
        train, dev, params = toy_training_world()
        cfg = TrainConfig(max_epochs=60, patience=60, dev_f1_switch=2.0,
                          lr_initial=5e-2, gamma=0.05,
                          lambda1=0.0, lambda2=0.0)
        best, log = fit(train, train, copy.deepcopy(params), cfg)
        assert max(r["dev_f1"] for r in log) == 1.0
        # at the optimum every hinge term except gold-vs-gold is zero
        floor = cfg.gamma * sum(len(d.mentions) for d in train)
        assert min(r["loss"] for r in log) == pytest.approx(floor, abs=1e-6)

    def test_empty_train_corpus_rejected(self):
        _, dev, params = toy_training_world()
        with pytest.raises(ValueError):
            fit(Corpus([]), dev, params, TrainConfig())

    def test_invalid_config_rejected(self):
        train, dev, params = toy_training_world()
        with pytest.raises(ValueError):
            fit(train, dev, params, TrainConfig(gamma=0.0))


class TestGradientCheck:
    def test_small_instance_passes_threshold(self):
        rng = np.random.default_rng(5)
        words, ents = random_tables(rng, d=4)
        params = init_params(ModelConfig(dim=4, num_relations=2, hidden=4,
                                         lbp_iters=4),
                             2, words, ents)
        m1 = Mention(0, 1, "m", "E1", [("E1", 0.6), ("E2", 0.4)])
        m2 = Mention(3, 4, "m", "E3", [("E3", 0.5), ("E4", 0.5)])
        doc = Document("g", ["m", "w1", "w2", "m", "w3"], [m1, m2])
        worst = gradient_check(params, [doc], eps=1e-5)
        assert worst < 1e-3

    def test_fixed_dropout_mask_passes_threshold(self):
        rng = np.random.default_rng(6)
        words, ents = random_tables(rng, d=4)
        params = init_params(ModelConfig(dim=4, num_relations=2, hidden=4,
                                         lbp_iters=4, dropout=0.3),
                             4, words, ents)
        m1 = Mention(0, 1, "m", "E1", [("E1", 0.6), ("E2", 0.4)])
        doc = Document("g", ["m", "w1", "w2"], [m1])
        worst = gradient_check(params, [doc], eps=1e-5, train=True,
                               dropout_seed=9)
        assert worst < 1e-3
