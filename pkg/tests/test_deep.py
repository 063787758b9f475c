import numpy as np
import pytest

from ckmeans.autodiff import Sgd, Tape, constant, finite_diff_grad, parameter, zero_grad
from ckmeans.concrete import ConfigError, TemperatureSchedule, hard_assign
from ckmeans.data import make_blobs
from ckmeans.deep import (
    Autoencoder,
    MlpSpec,
    TrainConfig,
    ae_km,
    ae_loss,
    ckm_loss,
    load_checkpoint,
    pretrain,
    save_checkpoint,
    train_ckm,
)
from ckmeans.kmeans import InputError
from ckmeans.metrics import evaluate


def identity_autoencoder(d):
    """Single linear layer each side, wired to the identity map."""
    ae = Autoencoder.initialize(d, MlpSpec((d,)), np.random.default_rng(0))
    for w, b in ae.enc + ae.dec:
        w.value[...] = np.eye(d)
        b.value[...] = 0.0
    return ae


def small_blob_dataset(seed=0, n_per=64, d=10, k=4, scale=20.0):
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((k, d)) * scale
    return make_blobs(n_per, centers, spread=1.0, rng=rng)


class TestMlpSpec:
    def test_latent_dim(self):
        assert MlpSpec((64, 32, 8)).latent_dim == 8

    def test_rejects_empty_or_nonpositive(self):
        with pytest.raises(ConfigError):
            MlpSpec(())
        with pytest.raises(ConfigError):
            MlpSpec((8, 0))


class TestEncodeDecode:
    def test_identity_encoder_reproduces_input(self):
        ae = identity_autoencoder(3)
        x = np.random.default_rng(1).standard_normal((5, 3))
        with Tape():
            z = ae.encode(constant(x))
            out = ae.decode(z)
        np.testing.assert_allclose(z.value, x)
        np.testing.assert_allclose(out.value, x)

    def test_output_shape_is_batch_by_last_width(self):
        ae = Autoencoder.initialize(12, MlpSpec((8, 5)), np.random.default_rng(2))
        with Tape():
            z = ae.encode(constant(np.zeros((7, 12))))
            x = ae.decode(z)
        assert z.value.shape == (7, 5)
        assert x.value.shape == (7, 12)

    def test_wrong_input_dim_rejected(self):
        ae = Autoencoder.initialize(4, MlpSpec((3,)), np.random.default_rng(3))
        with Tape():
            with pytest.raises(ConfigError):
                ae.encode(constant(np.zeros((2, 5))))

    def test_first_layer_grad_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        ae = Autoencoder.initialize(6, MlpSpec((5, 3)), rng)
        x = rng.standard_normal((8, 6))
        w0 = ae.enc[0][0]
        base = w0.value.copy()

        def f(wv):
            w0.value[...] = wv
            with Tape():
                out = ae_loss(ae, constant(x)).value[0, 0]
            w0.value[...] = base
            return out

        zero_grad(ae.params())
        with Tape() as tape:
            tape.backward(ae_loss(ae, constant(x)))
        fd = finite_diff_grad(f, base.copy())
        rel = np.max(np.abs(w0.grad - fd)) / max(np.max(np.abs(fd)), 1e-12)
        assert rel < 1e-4


class TestAeLoss:
    def test_perfect_identity_autoencoder_is_zero(self):
        ae = identity_autoencoder(4)
        x = np.random.default_rng(5).standard_normal((9, 4))
        with Tape():
            loss = ae_loss(ae, constant(x))
        assert loss.value[0, 0] == pytest.approx(0.0, abs=1e-24)

    def test_zero_output_decoder_gives_sum_of_squares(self):
        ae = identity_autoencoder(4)
        w, b = ae.dec[-1]
        w.value[...] = 0.0
        b.value[...] = 0.0
        x = np.random.default_rng(6).standard_normal((9, 4))
        with Tape():
            loss = ae_loss(ae, constant(x))
        assert loss.value[0, 0] == pytest.approx(np.sum(x * x), rel=1e-12)


class TestPretrain:
    def test_loss_drops_below_ten_percent_on_blobs(self):
        ds = small_blob_dataset(seed=7, n_per=64, d=10)
        cfg = TrainConfig(k=4, pretrain_epochs=60, batch_size=64, seed=7)
        ae = Autoencoder.initialize(10, MlpSpec((16, 4)), np.random.default_rng(7))
        history = pretrain(ae, ds.X, cfg)
        assert history[-1] < 0.1 * history[0]

    def test_zero_epochs_leaves_parameters_unchanged(self):
        ae = Autoencoder.initialize(5, MlpSpec((4,)), np.random.default_rng(8))
        before = [p.value.copy() for p in ae.params()]
        pretrain(ae, np.random.default_rng(8).standard_normal((20, 5)),
                 TrainConfig(k=2, pretrain_epochs=0))
        for prev, p in zip(before, ae.params()):
            np.testing.assert_array_equal(prev, p.value)

    def test_same_seed_bit_identical(self):
        X = np.random.default_rng(9).standard_normal((40, 6))

        def run():
            ae = Autoencoder.initialize(6, MlpSpec((4, 2)), np.random.default_rng(1))
            pretrain(ae, X, TrainConfig(k=2, pretrain_epochs=5, seed=3))
            return [p.value.copy() for p in ae.params()]

        for a, b in zip(run(), run()):
            np.testing.assert_array_equal(a, b)


class TestCkmLoss:
    def test_points_on_centroids_give_zero(self):
        ae = identity_autoencoder(2)
        M = np.array([[0.0, 0.0], [10.0, 10.0]])
        X = M[[0, 1, 0, 1]]
        with Tape():
            loss = ckm_loss(ae, constant(X), parameter(M), sigma=1.0, tau=1e-3,
                            rng=np.random.default_rng(10))
        assert loss.value[0, 0] == pytest.approx(0.0, abs=1e-18)

    def test_k1_is_distance_to_single_centroid_regardless_of_sampling(self):
        ae = identity_autoencoder(3)
        rng = np.random.default_rng(11)
        X = rng.standard_normal((12, 3))
        mu = rng.standard_normal((1, 3))
        for seed in (0, 1, 2):
            with Tape():
                loss = ckm_loss(ae, constant(X), parameter(mu), sigma=1.0, tau=1.0,
                                rng=np.random.default_rng(seed))
            assert loss.value[0, 0] == pytest.approx(np.sum((X - mu) ** 2), rel=1e-12)

    def test_centroid_grad_matches_fd_with_frozen_sample(self):
        from ckmeans.concrete import discretize, rbf_log_probs, concrete_sample, gumbel_sample

        rng = np.random.default_rng(12)
        ae = Autoencoder.initialize(5, MlpSpec((4, 3)), rng)
        X = rng.standard_normal((9, 5))
        M0 = rng.standard_normal((3, 3))
        with Tape():
            z = ae.encode(constant(X))
            lp = rbf_log_probs(z, constant(M0), 1.0)
            h = concrete_sample(lp, gumbel_sample(9, 3, rng), tau=0.7)
            frozen = discretize(h.value)
        z_fixed = z.value

        def loss_of_m(Mv):
            with Tape():
                diff = constant(z_fixed) - constant(frozen) @ constant(Mv)
                return diff.sq_frobenius().value[0, 0]

        m = parameter(M0)
        with Tape() as tape:
            diff = constant(z_fixed) - constant(frozen) @ m
            tape.backward(diff.sq_frobenius())
        fd = finite_diff_grad(loss_of_m, M0.copy())
        assert np.max(np.abs(m.grad - fd)) / np.max(np.abs(fd)) < 1e-4

    def test_soft_path_full_gradient_matches_fd(self):
        # sample=False, hard=False: the loss is a smooth function of M
        rng = np.random.default_rng(13)
        ae = Autoencoder.initialize(4, MlpSpec((3,)), rng)
        X = rng.standard_normal((6, 4))
        M0 = rng.standard_normal((2, 3))

        def loss_of_m(Mv):
            with Tape():
                return ckm_loss(ae, constant(X), constant(Mv), 1.0, 0.8,
                                np.random.default_rng(0), sample=False,
                                hard=False).value[0, 0]

        m = parameter(M0)
        zero_grad(ae.params())
        with Tape() as tape:
            loss = ckm_loss(ae, constant(X), m, 1.0, 0.8,
                            np.random.default_rng(0), sample=False, hard=False)
            tape.backward(loss)
        fd = finite_diff_grad(loss_of_m, M0.copy())
        assert np.max(np.abs(m.grad - fd)) / np.max(np.abs(fd)) < 1e-4


class TestTrainCkm:
    def test_zero_weight_freezes_centroids_but_not_decoder(self):
        ds = small_blob_dataset(seed=14, n_per=32, d=6, k=2)
        spec = MlpSpec((5, 2))
        cfg = TrainConfig(k=2, ckm_weight=0.0, pretrain_epochs=3, joint_epochs=3,
                          batch_size=32, seed=14)
        rng = np.random.default_rng(14)
        ae0 = Autoencoder.initialize(6, spec, rng)
        pretrain(ae0, ds.X, cfg, rng)
        dec_before = [p.value.copy() for p in ae0.decoder_params()]

        # reproduce the centroid init the trainer will draw from the same stream
        m_init = kmeanspp_like(ae0, ds.X, cfg)
        result = train_ckm(ds.X, spec, cfg, ae=ae0)
        np.testing.assert_array_equal(result.centroids, m_init)
        assert any(not np.array_equal(prev, p.value)
                   for prev, p in zip(dec_before, result.autoencoder.decoder_params()))

    def test_output_shapes_and_label_range(self):
        ds = small_blob_dataset(seed=15, n_per=32, d=8, k=3)
        result = train_ckm(ds.X, MlpSpec((6, 3)),
                           TrainConfig(k=3, pretrain_epochs=5, joint_epochs=5,
                                       batch_size=64, seed=15))
        assert result.centroids.shape == (3, 3)
        assert result.labels.min() >= 0 and result.labels.max() < 3
        assert set(result.history) == {"pretrain_ae", "joint_ae", "joint_ckm"}
        assert len(result.history["pretrain_ae"]) == 5
        assert len(result.history["joint_ae"]) == len(result.history["joint_ckm"]) == 5
        assert all(np.isfinite(v) for vals in result.history.values() for v in vals)

    def test_deterministic_under_seed(self):
        ds = small_blob_dataset(seed=16, n_per=24, d=5, k=2)
        cfg = TrainConfig(k=2, pretrain_epochs=4, joint_epochs=4, batch_size=48, seed=5)
        a = train_ckm(ds.X, MlpSpec((4, 2)), cfg)
        b = train_ckm(ds.X, MlpSpec((4, 2)), cfg)
        np.testing.assert_array_equal(a.centroids, b.centroids)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_too_few_points_rejected(self):
        with pytest.raises(InputError):
            train_ckm(np.zeros((2, 3)), MlpSpec((2,)), TrainConfig(k=5))

    def test_latent_dim_equals_centroid_dim(self):
        ds = small_blob_dataset(seed=17, n_per=16, d=7, k=2)
        result = train_ckm(ds.X, MlpSpec((5, 4)),
                           TrainConfig(k=2, pretrain_epochs=2, joint_epochs=2,
                                       batch_size=32, seed=17))
        assert result.centroids.shape[1] == result.autoencoder.latent_dim == 4


def kmeanspp_like(ae0, X, cfg):
    """Replays the trainer's RNG consumption up to centroid init (ae provided,
    so the stream starts at kmeans++)."""
    from ckmeans.kmeans import kmeanspp_init

    rng = np.random.default_rng(cfg.seed)
    return kmeanspp_init(ae0.transform(X), cfg.k, rng)


class TestGradientRouting:
    """One joint step (plain SGD, full batch): decoder deltas are independent
    of the clustering weight, centroid deltas scale exactly linearly with it,
    encoder deltas respond to both losses."""

    @staticmethod
    def one_sgd_step(weight, seed=18):
        ds = small_blob_dataset(seed=seed, n_per=16, d=6, k=2)
        cfg = TrainConfig(k=2, ckm_weight=weight, pretrain_epochs=2,
                          joint_epochs=1, batch_size=ds.n, seed=seed,
                          joint_optimizer="sgd", joint_lr=1e-4)
        rng = np.random.default_rng(seed)
        ae0 = Autoencoder.initialize(6, MlpSpec((4, 2)), rng)
        pretrain(ae0, ds.X, cfg, rng)
        enc0 = [p.value.copy() for p in ae0.encoder_params()]
        dec0 = [p.value.copy() for p in ae0.decoder_params()]
        m0 = kmeanspp_like(ae0, ds.X, cfg)
        result = train_ckm(ds.X, MlpSpec((4, 2)), cfg, ae=ae0)
        enc_d = [p.value - prev for prev, p in
                 zip(enc0, result.autoencoder.encoder_params())]
        dec_d = [p.value - prev for prev, p in
                 zip(dec0, result.autoencoder.decoder_params())]
        return enc_d, dec_d, result.centroids - m0

    def test_decoder_delta_independent_of_weight(self):
        _, dec_a, _ = self.one_sgd_step(0.0)
        _, dec_b, _ = self.one_sgd_step(2.0)
        for a, b in zip(dec_a, dec_b):
            np.testing.assert_array_equal(a, b)

    def test_centroid_delta_scales_linearly(self):
        _, _, m1 = self.one_sgd_step(1.0)
        _, _, m2 = self.one_sgd_step(2.0)
        np.testing.assert_array_equal(m2, 2.0 * m1)

    def test_encoder_delta_responds_to_both_losses(self):
        enc_a, _, _ = self.one_sgd_step(0.0)
        enc_b, _, _ = self.one_sgd_step(2.0)
        assert any(not np.array_equal(a, b) for a, b in zip(enc_a, enc_b))
        assert any(np.abs(a).max() > 0 for a in enc_a)  # reconstruction alone moves it


class TestSanityModeDescent:
    def test_soft_deterministic_full_batch_loss_non_increasing(self):
        rng = np.random.default_rng(19)
        ds = small_blob_dataset(seed=19, n_per=16, d=5, k=2)
        ae = Autoencoder.initialize(5, MlpSpec((4, 2)), rng)
        cfg = TrainConfig(k=2, pretrain_epochs=10, batch_size=ds.n, seed=19)
        pretrain(ae, ds.X, cfg, rng)
        m = parameter(kmeanspp_init_latent(ae, ds.X, 2, rng))
        params = ae.params() + [m]
        opt = Sgd(lr=1e-5)
        losses = []
        for _ in range(30):
            zero_grad(params)
            with Tape() as tape:
                xb = constant(ds.X)
                loss = ae_loss(ae, xb) + ckm_loss(
                    ae, xb, m, 1.0, 0.5, np.random.default_rng(0),
                    sample=False, hard=False)
                tape.backward(loss)
            opt.step(params)
            losses.append(loss.value[0, 0])
        assert all(b <= a + 1e-9 for a, b in zip(losses, losses[1:]))


def kmeanspp_init_latent(ae, X, k, rng):
    from ckmeans.kmeans import kmeanspp_init

    return kmeanspp_init(ae.transform(X), k, rng)


class TestDeepVsTwoStep:
    def test_joint_training_beats_or_ties_frozen_embedding_on_blobs(self):
        # 50-d data from 4 well-separated 10-d latents via random linear map
        rng = np.random.default_rng(20)
        latent_centers = rng.standard_normal((4, 10)) * 10
        lift = rng.standard_normal((10, 50))
        wins = 0
        seeds = range(3)
        for seed in seeds:
            rng_s = np.random.default_rng([21, seed])
            latents = make_blobs(64, latent_centers, spread=1.0, rng=rng_s)
            X = latents.X @ lift + 0.1 * rng_s.standard_normal((latents.n, 50))
            spec = MlpSpec((32, 8))
            cfg = TrainConfig(k=4, pretrain_epochs=30, joint_epochs=40,
                              batch_size=128, seed=seed)
            ae = Autoencoder.initialize(50, spec, np.random.default_rng(seed))
            pretrain(ae, X, cfg)
            deep = train_ckm(X, spec, cfg, ae=ae)
            base = ae_km(X, spec, cfg, ae=ae)
            nmi_deep = evaluate(latents.labels, deep.labels)["nmi"]
            nmi_base = evaluate(latents.labels, base.labels)["nmi"]
            wins += nmi_deep >= nmi_base - 1e-12
        assert wins >= 2


class TestCheckpoint:
    def test_round_trip_reproduces_labels(self, tmp_path):
        ds = small_blob_dataset(seed=22, n_per=32, d=6, k=3)
        cfg = TrainConfig(k=3, pretrain_epochs=3, joint_epochs=3, batch_size=64,
                          seed=22, schedule=TemperatureSchedule(1.0, 0.2, 0.1))
        result = train_ckm(ds.X, MlpSpec((5, 3)), cfg)
        path = tmp_path / "model.npz"
        save_checkpoint(path, result.autoencoder, result.centroids, cfg)
        ae2, m2, cfg2 = load_checkpoint(path)
        np.testing.assert_array_equal(m2, result.centroids)
        assert cfg2 == cfg
        labels2 = hard_assign(ae2.transform(ds.X), m2, cfg2.sigma)
        np.testing.assert_array_equal(labels2, result.labels)

    def test_rejects_unknown_version(self, tmp_path):
        import json

        import numpy as np

        path = tmp_path / "bad.npz"
        np.savez(path, meta=np.array(json.dumps({"format_version": 99})))
        with pytest.raises(ConfigError):
            load_checkpoint(path)
