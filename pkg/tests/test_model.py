import numpy as np
import pytest

from shiftuq.model import (
    FEATURE_SCALE,
    Dataset,
    EmbeddingModel,
    PretrainDiverged,
    aggregate,
    bernoulli_log_lik,
    gaussian_log_lik,
    head_inputs,
    head_predict,
    log_lik,
    pretrain_embedding,
)
from shiftuq.nn import DenseNet
from shiftuq.rngs import SeedTree


def linear_data(n=80, seed=0, noise=0.0):
    rng = SeedTree(seed).child("data").generator()
    x = rng.uniform(0.0, 1.0, (n, 1))
    y = 2.0 * x[:, 0] + noise * rng.standard_normal(n)
    return Dataset(x, y, "regression")


class TestDataset:
    def test_promotes_1d_x(self):
        d = Dataset(np.arange(3.0), np.zeros(3), "regression")
        assert d.x.shape == (3, 1)
        assert d.width == 1 and d.n == 3

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError):
            Dataset(np.zeros((3, 2)), np.zeros(4), "regression")

    def test_rejects_bad_task(self):
        with pytest.raises(ValueError):
            Dataset(np.zeros((3, 2)), np.zeros(3), "ranking")

    def test_rejects_nonbinary_labels(self):
        with pytest.raises(ValueError):
            Dataset(np.zeros((3, 1)), np.array([0.0, 0.5, 1.0]), "classification")

    def test_subset_carries_y_mean(self):
        d = Dataset(np.arange(4.0), np.arange(4.0), "regression", y_mean=np.arange(4.0) * 2)
        s = d.subset(np.array([1, 3]))
        np.testing.assert_array_equal(s.y_mean, [2.0, 6.0])


class TestLikelihoods:
    def test_gaussian_at_mean(self):
        assert gaussian_log_lik(1.0, 1.0) == pytest.approx(-0.9189385332046727, abs=1e-12)

    def test_gaussian_quadratic_falloff(self):
        base = gaussian_log_lik(0.0, 0.0)
        assert gaussian_log_lik(2.0, 0.0) == pytest.approx(base - 2.0)

    def test_bernoulli_at_zero_logit(self):
        assert bernoulli_log_lik(1.0, 0.0) == pytest.approx(np.log(0.5))
        assert bernoulli_log_lik(0.0, 0.0) == pytest.approx(np.log(0.5))

    def test_bernoulli_extreme_logits_exact(self):
        # correct label at huge logit: ~0; wrong label: -|logit|, no overflow
        assert bernoulli_log_lik(1.0, 500.0) == pytest.approx(0.0, abs=1e-200)
        assert bernoulli_log_lik(0.0, 500.0) == pytest.approx(-500.0, rel=1e-15)
        assert bernoulli_log_lik(1.0, -500.0) == pytest.approx(-500.0, rel=1e-15)

    def test_log_lik_dispatch(self):
        assert log_lik(1.0, 1.0, "regression") == pytest.approx(-0.9189385332046727)
        assert log_lik(1.0, 0.0, "classification") == pytest.approx(np.log(0.5))
        with pytest.raises(ValueError):
            log_lik(1.0, 1.0, "other")

    def test_vectorized(self):
        out = bernoulli_log_lik(np.array([1.0, 0.0]), np.array([0.0, 0.0]))
        np.testing.assert_allclose(out, np.log(0.5) * np.ones(2))


class TestHeadConvention:
    def test_head_inputs_appends_constant(self):
        out = head_inputs(np.ones((2, 3)))
        assert out.shape == (2, 4)
        np.testing.assert_array_equal(out[:, 3], [FEATURE_SCALE, FEATURE_SCALE])

    def test_head_predict_single_and_batch(self):
        head = np.array([1.0, 2.0])
        single = head_predict(head, np.array([0.5]))
        batch = head_predict(head, np.array([[0.5], [1.0]]))
        assert single == pytest.approx(0.5 + 2.0 * FEATURE_SCALE)
        assert batch.shape == (2,)


class TestAggregate:
    def test_mean_value(self):
        e = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_allclose(aggregate(e), [2.0, 3.0])

    def test_bitwise_permutation_invariance(self):
        rng = SeedTree(8).child("agg").generator()
        e = rng.standard_normal((50, 6))
        base = aggregate(e)
        for _ in range(5):
            perm = rng.permutation(50)
            assert np.array_equal(aggregate(e[perm]), base)

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            aggregate(np.zeros((0, 3)))


class TestPretrain:
    def test_untouched_net_prediction_parity(self):
        # steps=0 isolates the normalization step: predictions must match the
        # raw initialized net exactly (up to fold-in rounding)
        data = linear_data()
        res = pretrain_embedding(data, embed_dim=4, steps=0, rng=SeedTree(3).child("pre").generator())
        ref = DenseNet.create([1, 4, 1], ["relu", "identity"], SeedTree(3).child("pre").generator())
        got = head_predict(res.head, res.embedding.embed(data.x))
        np.testing.assert_allclose(got, ref.forward(data.x)[:, 0], rtol=1e-12, atol=1e-14)

    def test_normalized_embedding_rms(self):
        data = linear_data()
        res = pretrain_embedding(data, embed_dim=4, steps=0, rng=SeedTree(3).child("pre").generator())
        z = res.embedding.embed(data.x)
        pooled = float(np.sqrt(np.mean(np.square(z))))
        np.testing.assert_allclose(pooled, FEATURE_SCALE, rtol=1e-12)

    def test_rescale_is_shared_across_coordinates(self):
        # a unit barely active on the train inputs must not get its own
        # amplifier; the shared factor keeps coordinate ratios intact
        data = linear_data()
        res = pretrain_embedding(data, embed_dim=4, steps=5, lr=0.05, rng=SeedTree(3).child("pre").generator())
        z = res.embedding.embed(data.x)
        per_coord = np.sqrt(np.mean(np.square(z), axis=0))
        alive = per_coord[per_coord > 1e-12]
        assert alive.size >= 2
        assert alive.max() / alive.min() > 10

    def test_fits_noiseless_line(self):
        data = linear_data(noise=0.0)
        res = pretrain_embedding(data, embed_dim=8, steps=800, lr=0.1, rng=SeedTree(1).child("pre").generator())
        pred = head_predict(res.head, res.embedding.embed(data.x))
        rmse = float(np.sqrt(np.mean(np.square(pred - data.y))))
        assert rmse < 0.03
        assert res.trace[-1] > res.trace[0]

    def test_classification_loglik_improves(self):
        rng = SeedTree(5).child("data").generator()
        x = rng.uniform(-1, 1, (100, 1))
        y = (x[:, 0] > 0).astype(float)
        data = Dataset(x, y, "classification")
        res = pretrain_embedding(data, embed_dim=6, steps=400, lr=0.2, rng=SeedTree(5).child("pre").generator())
        probs = 1.0 / (1.0 + np.exp(-head_predict(res.head, res.embedding.embed(x))))
        acc = float(np.mean((probs >= 0.5) == (y == 1.0)))
        assert acc > 0.95

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_raises(self):
        data = linear_data(noise=0.0)
        with pytest.raises(PretrainDiverged):
            pretrain_embedding(data, embed_dim=4, steps=200, lr=1e6, rng=SeedTree(2).child("pre").generator())

    def test_same_seed_same_result(self):
        data = linear_data()
        a = pretrain_embedding(data, embed_dim=4, steps=30, rng=SeedTree(7).child("pre").generator())
        b = pretrain_embedding(data, embed_dim=4, steps=30, rng=SeedTree(7).child("pre").generator())
        assert np.array_equal(a.head, b.head)
        for la, lb in zip(a.embedding.net.layers, b.embedding.net.layers):
            assert np.array_equal(la.weights, lb.weights)

    def test_embedding_model_dims(self):
        net = DenseNet.create([2, 5], rng=np.random.default_rng(0))
        em = EmbeddingModel(net)
        assert em.embed_dim == 5 and em.in_width == 2
        assert em.embed(np.zeros((3, 2))).shape == (3, 5)
