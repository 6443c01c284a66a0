import math

import numpy as np
import pytest

from conftest import make_model
from mvcnn.autodiff import finite_difference_check
from mvcnn.checkpoint import dumps, loads
from mvcnn.embeddings import EmbeddingVersion
from mvcnn.network import NetworkConfig, build_model
from mvcnn.pretrain import (
    PretrainConfig,
    PretrainTables,
    average_prediction,
    build_noise_distribution,
    draw_noise,
    nce_loss,
    nce_step,
    run_pretraining,
)
from mvcnn.synthetic import separable_task
from mvcnn.text import PAD_ID, Vocabulary
from mvcnn.training import TrainConfig, train_supervised


class TestNoiseDistribution:
    def test_alpha_one(self):
        d = build_noise_distribution([[2, 2, 3], [2]], alpha=1.0)
        np.testing.assert_allclose(d.probs[2:], [0.75, 0.25])

    def test_alpha_zero_uniform(self):
        d = build_noise_distribution([[2, 2, 3, 4, 4, 4]], alpha=0.0)
        np.testing.assert_allclose(d.probs[2:], [1 / 3] * 3)

    def test_default_alpha(self):
        d = build_noise_distribution([[2] * 16 + [3]])
        np.testing.assert_allclose(d.probs[2:], [8 / 9, 1 / 9])
        assert abs(d.probs.sum() - 1) < 1e-12

    def test_padding_excluded(self):
        d = build_noise_distribution([[PAD_ID, 2]], vocab_size=4)
        assert d.probs[PAD_ID] == 0 and d.probs[2] == 1

    def test_empty(self):
        with pytest.raises(ValueError):
            build_noise_distribution([])

    def test_sampling_frequencies(self, rng):
        d = build_noise_distribution([[2, 2, 2, 3]], alpha=1.0)
        draws = d.sample(rng, 20000)
        assert set(np.unique(draws)) == {2, 3}
        assert abs(np.mean(draws == 2) - 0.75) < 0.02

    def test_redraw_avoids_target(self, rng):
        d = build_noise_distribution([[2, 3, 4]], alpha=1.0)
        assert not np.any(draw_noise(d, 2, 50, rng) == 2)

    def test_redraw_gives_up(self, rng):
        d = build_noise_distribution([[2]], alpha=1.0)
        assert np.all(draw_noise(d, 2, 3, rng) == 2)


class TestAverage:
    def test_identical(self):
        v = np.array([0.3, -1.0])
        np.testing.assert_array_equal(average_prediction(v, [v, v]), v)

    def test_hand_mean(self):
        got = average_prediction(np.array([1.0, 0.0]), [np.array([0.0, 1.0]), np.array([2.0, 2.0])])
        np.testing.assert_allclose(got, [1, 1])

    def test_mismatch(self):
        with pytest.raises(ValueError):
            average_prediction(np.zeros(2), [np.zeros(3)])


def nce_fixture(delta_t, delta_n, k=1):
    """Tables where pred=[1] and the score equals delta + ln(k Pn)."""
    probs = np.array([0.0, 0.5, 0.5])
    out = np.zeros((3, 1))
    bias = np.array([0.0, delta_t, delta_n]) + np.log(k * probs.clip(1e-300))
    return np.ones(1), out, bias, probs


class TestNCELoss:
    def test_zero_deltas(self):
        pred, out, bias, probs = nce_fixture(0.0, 0.0)
        assert abs(nce_loss(pred, 1, [2], out, bias, probs).loss - 2 * math.log(2)) < 1e-12

    def test_perfect_discrimination(self):
        pred, out, bias, probs = nce_fixture(50.0, -50.0)
        assert nce_loss(pred, 1, [2], out, bias, probs).loss < 1e-20

    def test_hand_value(self):
        pred, out, bias, probs = nce_fixture(1.0, -1.0)
        got = nce_loss(pred, 1, [2], out, bias, probs).loss
        assert abs(got - 2 * math.log(1 + math.exp(-1))) < 1e-12

    def test_all_zero_is_k_plus_one_ln2(self, rng):
        V, d, k = 6, 3, 4
        probs = np.full(V, 1 / V)
        bias = np.full(V, math.log(k / V))
        res = nce_loss(rng.normal(size=d), 1, [2, 3, 4, 5], np.zeros((V, d)), bias, probs)
        assert abs(res.loss - (k + 1) * math.log(2)) < 1e-12

    def test_nonnegative(self, rng):
        for _ in range(100):
            V, d = 7, 3
            probs = rng.dirichlet(np.ones(V))
            res = nce_loss(rng.normal(size=d) * 5, 0, rng.integers(0, V, 5),
                           rng.normal(size=(V, d)), rng.normal(size=V), probs)
            assert res.loss >= 0

    def test_out_of_vocab(self):
        pred, out, bias, probs = nce_fixture(0.0, 0.0)
        with pytest.raises(KeyError):
            nce_loss(pred, 5, [2], out, bias, probs)

    def test_gradient_wrt_pred(self, rng):
        V, d = 6, 4
        probs = rng.dirichlet(np.ones(V))
        out, bias = rng.normal(size=(V, d)), rng.normal(size=V)
        noise = [2, 3, 3]
        pred = rng.normal(size=d)
        res = nce_loss(pred, 1, noise, out, bias, probs)
        eps = 1e-6
        for i in range(d):
            e = np.zeros(d)
            e[i] = eps
            num = (nce_loss(pred + e, 1, noise, out, bias, probs).loss
                   - nce_loss(pred - e, 1, noise, out, bias, probs).loss) / (2 * eps)
            assert abs(num - res.d_pred[i]) < 1e-8


def pretrain_setup(seed=0, c=1):
    vocab = Vocabulary.build([[f"w{i}" for i in range(12)]])
    rng = np.random.default_rng(seed)
    m = make_model(vocab, rng, c=c, d=4, layers=1, sizes=(3,), kernels=2, classes=2)
    corpus = [vocab.encode(f"w{i} w{(i + 1) % 12} w{(i + 3) % 12} w{(i * 5) % 12}".split())
              for i in range(12)]
    return vocab, m, corpus


class TestRunPretraining:
    def test_lr_zero_changes_nothing(self):
        _, m, corpus = pretrain_setup()
        before = {n: p.value.copy() for n, p in m.named_parameters().items()}
        run_pretraining(corpus, m, PretrainConfig(epochs=1, lr=0.0), np.random.default_rng(0))
        for n, p in m.named_parameters().items():
            np.testing.assert_array_equal(p.value, before[n])

    def test_no_hit_rows_move(self):
        vocab = Vocabulary.build([["a", "b", "zz"]])
        known = EmbeddingVersion("v", 4, {"a": np.ones(4), "b": -np.ones(4)})
        cfg = NetworkConfig(c=1, d=4, num_layers=1, filter_sizes=(3,), kernels_per_size=2)
        m = build_model(vocab, cfg, np.random.default_rng(0), versions=[known])
        row = vocab.index["zz"]
        before = m.table.channels[0].value[row].copy()
        run_pretraining([vocab.encode("a zz b".split())], m, PretrainConfig(epochs=1),
                        np.random.default_rng(0))
        assert np.any(m.table.channels[0].value[row] != before)
        assert not m.table.channels[0].value[PAD_ID].any()

    def test_deterministic(self):
        traces = []
        for _ in range(2):
            _, m, corpus = pretrain_setup()
            traces.append(run_pretraining(corpus, m, PretrainConfig(epochs=2),
                                          np.random.default_rng(3)).step_losses)
        assert traces[0] == traces[1]

    def test_loss_decreases(self):
        _, m, corpus = pretrain_setup()
        res = run_pretraining(corpus, m, PretrainConfig(epochs=10, lr=0.01), np.random.default_rng(0))
        assert res.epoch_losses[-1] < res.epoch_losses[0]
        assert len(res.step_losses) == 10 * sum(len(s) for s in corpus)

    def test_rejects_empty(self):
        _, m, _ = pretrain_setup()
        with pytest.raises(ValueError):
            run_pretraining([], m, PretrainConfig(), np.random.default_rng(0))
        with pytest.raises(ValueError):
            run_pretraining([[]], m, PretrainConfig(), np.random.default_rng(0))

    def test_isolation(self):
        vocab, m, corpus = pretrain_setup()
        run_pretraining(corpus, m, PretrainConfig(epochs=1), np.random.default_rng(0))
        # only the network survives the checkpoint; the pretraining tables do not
        m2 = loads(dumps(m))
        ds = separable_task(n_sentences=6, vocab_size=12, seed=0)
        report, _ = train_supervised(m2, {"train": ds}, TrainConfig(max_epochs=2))
        assert len(report.train_loss) == 2


def test_pretraining_gradient(rng):
    _, m, corpus = pretrain_setup(c=2)
    V = len(m.table.vocab)
    tables = PretrainTables.random(V, m.config.hidden_dim, rng, init_range=0.5)
    ids = corpus[0]
    dist = build_noise_distribution(corpus, V)
    noise = np.array([2, 5, 7])

    def loss():
        return nce_step(m, tables, ids, 1, noise, dist.probs, t=1)

    params = list(m.named_parameters().values()) + tables.parameters()
    assert finite_difference_check(loss, params, max_coords=10) < 1e-4
