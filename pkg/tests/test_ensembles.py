import math
import warnings

import numpy as np
import pytest

from calib_lab import autodiff as ad
from calib_lab.augment import AugmentPolicy
from calib_lab.data import Vocabulary, generate_toy_corpus, tokenize
from calib_lab.ensembles import (
    EnsembleConfig, mc_dropout_predict, mimo_member_batches, mimo_predict, mimo_train_step, predict_average,
    train_deep_ensemble,
)
from calib_lab.losses import LossSpec
from calib_lab.metrics import disagreement
from calib_lab.model import EncoderConfig, MimoClassifier, TransformerClassifier
from calib_lab.training import EvalData, OptimConfig, TrainingSet, predict_probs


@pytest.fixture(scope="module")
def tiny():
    corpus = generate_toy_corpus(num_classes=3, size=48, dev_size=12, test_size=24, vocab_size=60,
                                 keywords_per_class=6, seed=2)
    splits = corpus.splits
    vocab = Vocabulary.build(splits.train)
    cfg = EncoderConfig(vocab_size=len(vocab), max_seq_len=24, model_dim=16, num_heads=2, ffn_dim=24,
                        num_blocks=3, num_classes=3, init_std=0.1)

    def toks(rows):
        return [tokenize(ex.words, vocab, 24) for ex in rows], np.array([ex.label for ex in rows])

    evals = EvalData(*toks(splits.train), *toks(splits.dev), *toks(splits.test))
    return splits, vocab, cfg, evals


def make_data_factory(splits, vocab):
    def make(seed):
        return TrainingSet(splits.train, vocab, 24, AugmentPolicy(), seed)
    return make


class TestPredictAverage:
    def test_two_member_example(self):
        a = np.array([[0.2, 0.8]])
        b = np.array([[0.8, 0.2]])
        pred = predict_average([a, b])
        np.testing.assert_allclose(pred.probs, [[0.5, 0.5]])
        avg_nll = -math.log(pred.probs[0, 0])
        mean_member = -(math.log(0.2) + math.log(0.8)) / 2
        assert avg_nll == pytest.approx(0.693147, abs=1e-6)
        assert mean_member == pytest.approx(0.916291, abs=1e-6)
        assert pred.member_probs.shape == (2, 1, 2)

    def test_identical_members(self):
        p = np.random.default_rng(0).dirichlet(np.ones(4), size=10)
        avg = predict_average([p, p, p]).probs
        np.testing.assert_allclose(avg, p, rtol=0, atol=1e-15)
        np.testing.assert_array_equal(avg.argmax(axis=1), p.argmax(axis=1))
        np.testing.assert_array_equal(predict_average([p, p]).probs, p)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(1)
        pred = predict_average([rng.dirichlet(np.ones(5), size=20) for _ in range(4)])
        np.testing.assert_allclose(pred.probs.sum(axis=1), 1.0, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            predict_average([np.ones((2, 3)) / 3, np.ones((2, 4)) / 4])
        with pytest.raises(ValueError):
            predict_average([])


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            EnsembleConfig("bagging")
        with pytest.raises(ValueError):
            EnsembleConfig("mimo", members=0)
        with pytest.raises(ValueError):
            EnsembleConfig("mc-dropout", mc_dropout_rate=1.0)
        with pytest.raises(ValueError):
            EnsembleConfig("deep-ensemble", members=2, member_seeds=[1])

    def test_member_seeds(self):
        assert EnsembleConfig("deep-ensemble", members=3).seeds_for(5)[0] == 5
        assert len(set(EnsembleConfig("deep-ensemble", members=3).seeds_for(5))) == 3
        assert EnsembleConfig("deep-ensemble", members=2, member_seeds=[4, 9]).seeds_for(0) == [4, 9]


class TestMCDropout:
    def test_zero_rate_matches_forward(self, tiny):
        _, _, cfg, evals = tiny
        model = TransformerClassifier(cfg, seed=0)
        det = predict_probs(model, evals.test)
        pred = mc_dropout_predict(model, evals.test, 4, 0.0, np.random.default_rng(0))
        for member in pred.member_probs:
            np.testing.assert_array_equal(member, det)

    def test_members_differ_with_dropout(self, tiny):
        _, _, cfg, evals = tiny
        model = TransformerClassifier(cfg, seed=0)
        pred = mc_dropout_predict(model, evals.test, 5, 0.1, np.random.default_rng(0))
        assert not all(np.array_equal(pred.member_probs[0], m) for m in pred.member_probs[1:])
        assert model.dropout_rate == cfg.dropout_rate  # restored

    def test_rate_validation(self, tiny):
        _, _, cfg, evals = tiny
        with pytest.raises(ValueError):
            mc_dropout_predict(TransformerClassifier(cfg), evals.test, 2, 1.0, np.random.default_rng(0))


class TestDeepEnsemble:
    def test_identical_seeds_identical_members(self, tiny):
        splits, vocab, cfg, evals = tiny
        ens = EnsembleConfig("deep-ensemble", members=2, member_seeds=[3, 3])
        with pytest.warns(UserWarning, match="duplicate"):
            pairs = train_deep_ensemble(cfg, ens, make_data_factory(splits, vocab), evals,
                                        OptimConfig(epochs=1), LossSpec(), seed=0)
        a, b = (m.state_dict() for m, _ in pairs)
        for name in a:
            np.testing.assert_array_equal(a[name], b[name])

    def test_distinct_seeds_disagree(self, tiny):
        splits, vocab, cfg, evals = tiny
        ens = EnsembleConfig("deep-ensemble", members=3)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            pairs = train_deep_ensemble(cfg, ens, make_data_factory(splits, vocab), evals,
                                        OptimConfig(epochs=2), LossSpec(), seed=0)
        states = [m.state_dict() for m, _ in pairs]
        assert any(not np.array_equal(states[0][k], states[1][k]) for k in states[0])
        preds = [predict_probs(m, evals.test) for m, _ in pairs]
        assert disagreement(preds) > 0

    def test_shared_body_init(self, tiny):
        splits, vocab, cfg, evals = tiny
        ens = EnsembleConfig("deep-ensemble", members=2, de_init="shared-body")
        pairs = train_deep_ensemble(cfg, ens, make_data_factory(splits, vocab), evals,
                                    OptimConfig(epochs=0), LossSpec(), seed=0)
        a, b = (m.state_dict() for m, _ in pairs)
        for name in a:
            same = np.array_equal(a[name], b[name])
            assert same == (not (name.startswith("head") and name.endswith(".w")))


class TestMimo:
    def test_member_batches(self):
        rng = np.random.default_rng(0)
        base = np.arange(4)
        assert all(all(np.array_equal(b, base) for b in mimo_member_batches(base, 100, 3, 1.0, rng))
                   for _ in range(20))
        batches = mimo_member_batches(base, 100, 2, 0.0, rng)
        np.testing.assert_array_equal(batches[0], base)
        assert not np.array_equal(batches[1], base)

    def test_repetition_rate(self):
        rng = np.random.default_rng(1)
        base = np.arange(8)
        same = sum(np.array_equal(*mimo_member_batches(base, 1000, 2, 0.2, rng)) for _ in range(5000))
        assert 0.18 < same / 5000 < 0.22

    def test_gradient_reaches_every_member(self, tiny):
        splits, vocab, cfg, _ = tiny
        model = MimoClassifier(cfg, members=2, seed=0)
        data = TrainingSet(splits.train, vocab, 24, AugmentPolicy(), 0)
        mimo_train_step(model, data, np.arange(8), 1, 0.0, LossSpec(), np.random.default_rng(0),
                        np.random.default_rng(1))
        for prefix in ("first.0", "first.1", "last.0", "last.1", "head.0", "head.1", "blocks.1", "embed"):
            grads = [p.grad for k, p in model.params.items() if k.startswith(prefix)]
            assert any(np.abs(g).sum() > 0 for g in grads), prefix

    def test_loss_is_member_sum(self, tiny):
        from calib_lab.data import pad_batch
        from calib_lab.losses import composite_loss
        splits, vocab, cfg, _ = tiny
        model = MimoClassifier(cfg, members=2, seed=0)
        data = TrainingSet(splits.train, vocab, 24, AugmentPolicy(), 0)
        idx = np.arange(6)
        loss = mimo_train_step(model, data, idx, 1, 1.0, LossSpec(), np.random.default_rng(0), None)
        seqs, labels = data.batch(idx, 1)
        with ad.no_grad():
            members, _ = model.forward(pad_batch(seqs))
            want = sum(composite_loss(LossSpec(), p, labels).item() for p in members)
        assert loss == pytest.approx(want, abs=1e-12)

    def test_predict_sums_to_one(self, tiny):
        _, _, cfg, evals = tiny
        pred = mimo_predict(MimoClassifier(cfg, members=3, seed=0), evals.test)
        assert pred.member_probs.shape == (3, len(evals.test), 3)
        np.testing.assert_allclose(pred.probs.sum(axis=1), 1.0, atol=1e-12)


class TestJensen:
    def test_random_ensembles(self):
        rng = np.random.default_rng(0)
        for _ in range(300):
            m, k, n = int(rng.integers(2, 6)), int(rng.integers(2, 21)), 16
            members = [rng.dirichlet(np.ones(k) * rng.uniform(0.1, 2), size=n) for _ in range(m)]
            labels = rng.integers(0, k, n)
            avg = predict_average(members).probs
            idx = np.arange(n)
            ens_nll = -np.log(avg[idx, labels])
            member_nll = np.mean([-np.log(p[idx, labels]) for p in members], axis=0)
            assert np.all(ens_nll <= member_nll + 1e-12)
