"""Network assembly: shape closure, classifier output law, coefficient layer."""

import numpy as np
import pytest

import collabsc.autodiff as ad
from collabsc.network import (ConfigError, LayerSpec, Network, NetworkConfig,
                              SelfExpressiveLayer)
from collabsc.rng import Xorshift64Star


def dense_config(latent=20, k=2, guess=3):
    return NetworkConfig(
        encoder=(LayerSpec("dense", 32), LayerSpec("dense", latent, activation="none")),
        classifier_head=(LayerSpec("dense", 16),),
        num_clusters=k, intrinsic_dim_guess=guess)


def conv_config():
    return NetworkConfig(
        encoder=(LayerSpec("conv", 10, kernel_size=5, stride=2),
                 LayerSpec("conv", 20, kernel_size=3, stride=2),
                 LayerSpec("conv", 30, kernel_size=3, stride=2, activation="none")),
        classifier_head=(LayerSpec("conv", 10, kernel_size=2),),
        num_clusters=10, intrinsic_dim_guess=9)


class TestBuildValidation:
    def test_latent_dimension_rule_enforced(self):
        with pytest.raises(ConfigError, match="latent_dim"):
            Network(dense_config(latent=5, k=2, guess=3), (8,))

    def test_mnist_style_latent_dimension(self):
        net = Network(conv_config(), (1, 28, 28))
        assert net.latent_feature_shape == (30, 4, 4)
        assert net.latent_dim == 480
        assert net.latent_dim >= 9 * 10

    def test_conv_encoder_rejects_flat_input(self):
        with pytest.raises(ConfigError, match=r"\(C, H, W\)"):
            Network(conv_config(), (784,))

    def test_explicit_decoder_shape_mismatch_rejected(self):
        config = NetworkConfig(
            encoder=(LayerSpec("dense", 20, activation="none"),),
            decoder=(LayerSpec("dense", 9, activation="none"),),
            classifier_head=(),
            num_clusters=2, intrinsic_dim_guess=3)
        with pytest.raises(ConfigError, match="reproduce"):
            Network(config, (8,))


class TestForward:
    def test_end_to_end_shape_closure_dense(self):
        net = Network(dense_config(), (8,), seed=0)
        x = Xorshift64Star(1).normals((5, 8))
        z = net.encode(x)
        assert z.shape == (5, 20)
        layer = SelfExpressiveLayer(5)
        recon = net.decode(layer.apply(z))
        assert recon.shape == (5, 8)

    def test_end_to_end_shape_closure_conv(self):
        net = Network(conv_config(), (1, 28, 28), seed=0)
        x = Xorshift64Star(2).normals((3, 784))
        z = net.encode(x)
        assert z.shape == (3, 480)
        recon = net.decode(z)
        assert recon.shape == (3, 784)

    def test_zero_input_through_zero_weights(self):
        net = Network(dense_config(), (8,), seed=0)
        for name, p in net.params.items():
            if name.startswith("encoder."):
                p.values[:] = 0.0
        z = net.encode(np.zeros((3, 8)))
        np.testing.assert_array_equal(z.values, np.zeros((3, 20)))

    def test_identity_dense_encoder_passes_input_through(self):
        config = NetworkConfig(
            encoder=(LayerSpec("dense", 8, activation="none"),),
            classifier_head=(),
            num_clusters=2, intrinsic_dim_guess=3)
        net = Network(config, (8,), seed=0)
        net.params["encoder.0.W"].values = np.eye(8)
        net.params["encoder.0.b"].values[:] = 0.0
        x = Xorshift64Star(3).normals((4, 8))
        np.testing.assert_allclose(net.encode(x).values, x)

    def test_classifier_rows_unit_norm_positive(self):
        net = Network(dense_config(k=4), (8,), seed=5)
        x = Xorshift64Star(4).normals((6, 8))
        nu = net.predictions(x).values
        assert nu.shape == (6, 4)
        assert (nu > 0).all()
        np.testing.assert_allclose(np.sqrt((nu * nu).sum(axis=1)), 1.0, atol=1e-12)

    def test_uniform_logits_give_uniform_predictions(self):
        net = Network(dense_config(k=10, latent=90, guess=9), (8,), seed=0)
        for name in ("classifier.0.W", "classifier.0.b", "classifier.out.W",
                     "classifier.out.b"):
            net.params[name].values[:] = 0.0
        nu = net.predictions(np.ones((2, 8))).values
        np.testing.assert_allclose(nu, 1.0 / np.sqrt(10), atol=1e-12)

    def test_saturated_logit_gives_one_hot(self):
        net = Network(dense_config(k=3), (8,), seed=0)
        net.params["classifier.out.W"].values[:] = 0.0
        net.params["classifier.out.b"].values[:] = [1000.0, 0.0, 0.0]
        nu = net.predictions(np.ones((2, 8))).values
        np.testing.assert_allclose(nu[:, 0], 1.0, atol=1e-12)
        assert nu[:, 1].max() < 1e-12

    def test_batch_of_one_rejected(self):
        net = Network(dense_config(), (8,), seed=0)
        with pytest.raises(ad.ShapeError, match="at least 2"):
            net.encode(np.ones((1, 8)))

    def test_deterministic_init_per_seed(self):
        a = Network(dense_config(), (8,), seed=7)
        b = Network(dense_config(), (8,), seed=7)
        for name in a.params:
            np.testing.assert_array_equal(a.params[name].values, b.params[name].values)
        c = Network(dense_config(), (8,), seed=8)
        assert any((a.params[n].values != c.params[n].values).any() for n in a.params)


class TestSelfExpressiveLayer:
    def test_zero_coefficients_zero_output(self):
        layer = SelfExpressiveLayer(4)
        z = ad.constant(np.ones((4, 3)))
        np.testing.assert_array_equal(layer.apply(z).values, np.zeros((4, 3)))

    def test_mutual_expression_of_duplicates(self):
        layer = SelfExpressiveLayer(2)
        layer.coeffs.values[:] = [[0.0, 1.0], [1.0, 0.0]]
        z = ad.constant(np.array([[2.0, 5.0], [2.0, 5.0]]))
        np.testing.assert_allclose(layer.apply(z).values, z.values)

    def test_row_convention_hand_case(self):
        layer = SelfExpressiveLayer(2)
        layer.coeffs.values[:] = [[0.0, 2.0], [0.5, 0.0]]
        z = ad.constant(np.array([[1.0, 0.0], [2.0, 0.0]]))
        np.testing.assert_allclose(layer.apply(z).values, [[1.0, 0.0], [2.0, 0.0]])

    def test_rejects_unprojected_diagonal(self):
        layer = SelfExpressiveLayer(3)
        layer.coeffs.values[:] = np.eye(3)
        with pytest.raises(ValueError, match="diagonal"):
            layer.apply(ad.constant(np.ones((3, 2))))

    def test_projection_zeroes_diagonal(self):
        layer = SelfExpressiveLayer(3)
        layer.coeffs.values[:] = np.ones((3, 3))
        layer.project_diagonal()
        assert (np.diag(layer.coeffs.values) == 0.0).all()
        assert layer.coeffs.values[0, 1] == 1.0

    def test_batch_below_two_rejected(self):
        with pytest.raises(ConfigError, match=">= 2"):
            SelfExpressiveLayer(1)


class TestDecoderMirror:
    def test_mirrored_decoder_ends_linear(self):
        net = Network(dense_config(), (8,), seed=0)
        assert net.decoder_plans[-1].spec.activation == "none"

    def test_mirrored_conv_decoder_restores_odd_sizes(self):
        config = NetworkConfig(
            encoder=(LayerSpec("conv", 4, kernel_size=3, stride=2),
                     LayerSpec("conv", 8, kernel_size=3, stride=2, activation="none")),
            classifier_head=(),
            num_clusters=2, intrinsic_dim_guess=3)
        net = Network(config, (1, 7, 7), seed=0)  # 7 -> 4 -> 2 and back
        x = Xorshift64Star(5).normals((2, 49))
        recon = net.decode(net.encode(x))
        assert recon.shape == (2, 49)

    def test_mixed_conv_dense_encoder_mirrors(self):
        config = NetworkConfig(
            encoder=(LayerSpec("conv", 4, kernel_size=3, stride=2),
                     LayerSpec("dense", 24, activation="none")),
            classifier_head=(),
            num_clusters=2, intrinsic_dim_guess=3)
        net = Network(config, (1, 8, 8), seed=0)
        x = Xorshift64Star(6).normals((2, 64))
        recon = net.decode(net.encode(x))
        assert recon.shape == (2, 64)


class TestParameterGroups:
    def test_groups_partition_parameters(self):
        net = Network(dense_config(), (8,), seed=0)
        ae = set(net.autoencoder_params())
        cls = set(net.classifier_params())
        assert ae.isdisjoint(cls)
        assert ae | cls == set(net.params)
        assert "classifier.out.W" in cls

    def test_snapshot_and_load_round_trip(self):
        net = Network(dense_config(), (8,), seed=0)
        snap = net.snapshot()
        for p in net.params.values():
            p.values += 1.0
        net.load_values(snap)
        for name, p in net.params.items():
            np.testing.assert_array_equal(p.values, snap[name])

    def test_load_rejects_missing_parameter(self):
        net = Network(dense_config(), (8,), seed=0)
        snap = net.snapshot()
        del snap["classifier.out.W"]
        with pytest.raises(KeyError, match="classifier.out.W"):
            net.load_values(snap)
