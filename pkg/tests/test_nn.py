"""Layer, architecture, and checkpoint contracts."""

import numpy as np
import pytest

from neuralbayes import nn, oracles
from neuralbayes import tensor as T
from neuralbayes.errors import ConfigError, FormatError, ShapeError
from neuralbayes.tensor import Tensor

ENCODER_ARCH = "C(200,3,1,0)-P(2,2,0,max)-C(500,3,1,0)-C(700,3,1,0)-P(2,2,0,max)-C(1000,3,1,0)"


class TestOrthogonalInit:
    def test_one_by_one_is_sign(self):
        for seed in range(6):
            v = nn.orthogonal_init(1, 1, seed).data
            assert abs(abs(v[0, 0]) - 1.0) < 1e-12

    def test_square_orthonormal(self):
        w = nn.orthogonal_init(4, 4, 7).data
        np.testing.assert_allclose(w.T @ w, np.eye(4), atol=1e-6)

    def test_wide_rows_orthonormal(self):
        w = nn.orthogonal_init(3, 9, 2).data
        np.testing.assert_allclose(w @ w.T, np.eye(3), atol=1e-6)

    def test_tall_cols_orthonormal(self):
        w = nn.orthogonal_init(9, 3, 2).data
        np.testing.assert_allclose(w.T @ w, np.eye(3), atol=1e-6)

    def test_singular_values_are_one(self):
        s = np.linalg.svd(nn.orthogonal_init(6, 11, 1).data, compute_uv=False)
        np.testing.assert_allclose(s, 1.0, atol=1e-6)

    def test_deterministic_per_seed(self):
        a = nn.orthogonal_init(5, 5, 42).data
        b = nn.orthogonal_init(5, 5, 42).data
        assert np.array_equal(a, b)
        assert not np.array_equal(a, nn.orthogonal_init(5, 5, 43).data)


class TestLayerGradients:
    def _check(self, layer, x, train=True, tol=1e-4):
        """Finite-difference check of d(sum(out^2))/d(params, input)."""
        params = dict(layer.parameters())
        params["x"] = x
        saved_stats = {k: v.copy() for k, v in layer.buffers().items()}

        def build(p):
            for name, t in p.items():
                if name != "x":
                    setattr(layer, name, t)
            out = layer.forward(p["x"], train)
            for name, v in saved_stats.items():  # keep running stats fixed across evals
                layer.set_buffer(name, v.copy())
            return T.tsum(out * out)

        analytic = T.gradients(build(params), params)

        def value(arrs):
            frozen = {k: Tensor(v, requires_grad=True) for k, v in arrs.items()}
            return build(frozen).item()

        numeric = oracles.finite_diff_grad(value, {k: p.data for k, p in params.items()})
        for name in params:
            rel = np.abs(analytic[name] - numeric[name]) / np.maximum(1.0, np.abs(analytic[name]))
            assert rel.max() <= tol, f"{name}: rel err {rel.max():.3e}"

    def test_dense(self):
        rng = np.random.default_rng(0)
        layer = nn.DenseLayer(4, 3, seed=1)
        self._check(layer, Tensor(rng.standard_normal((5, 4)), requires_grad=True))

    def test_conv(self):
        rng = np.random.default_rng(1)
        layer = nn.Conv2dLayer(2, 3, 3, stride=1, padding=1, seed=1)
        self._check(layer, Tensor(rng.standard_normal((2, 2, 4, 4)), requires_grad=True))

    def test_batchnorm_train(self):
        rng = np.random.default_rng(2)
        layer = nn.BatchNormLayer(3)
        x = Tensor(rng.standard_normal((6, 3)) * 2.0 + 1.0, requires_grad=True)
        self._check(layer, x, train=True)

    def test_batchnorm_eval(self):
        rng = np.random.default_rng(3)
        layer = nn.BatchNormLayer(3)
        layer.running_mean = rng.standard_normal(3)
        layer.running_var = rng.uniform(0.5, 2.0, 3)
        x = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
        self._check(layer, x, train=False)


class TestBatchNorm:
    def test_train_normalizes(self):
        rng = np.random.default_rng(4)
        layer = nn.BatchNormLayer(5)
        x = Tensor(rng.standard_normal((64, 5)) * 3.0 + 7.0)
        out = nn.batchnorm_forward(layer, x, "train").data
        np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-6)
        np.testing.assert_allclose(out.std(axis=0), 1.0, atol=1e-3)

    def test_constant_feature_yields_shift(self):
        layer = nn.BatchNormLayer(2)
        layer.shift = Tensor(np.array([3.0, -1.0]), requires_grad=True)
        x = Tensor(np.full((8, 2), 5.0))
        out = nn.batchnorm_forward(layer, x, "train").data
        np.testing.assert_allclose(out, np.tile([3.0, -1.0], (8, 1)), atol=1e-12)

    def test_eval_is_pure(self):
        rng = np.random.default_rng(5)
        layer = nn.BatchNormLayer(3)
        layer.running_mean = rng.standard_normal(3)
        layer.running_var = rng.uniform(0.5, 2.0, 3)
        rm, rv = layer.running_mean.copy(), layer.running_var.copy()
        x = Tensor(rng.standard_normal((4, 3)))
        a = nn.batchnorm_forward(layer, x, "eval").data
        b = nn.batchnorm_forward(layer, x, "eval").data
        assert np.array_equal(a, b)
        assert np.array_equal(layer.running_mean, rm) and np.array_equal(layer.running_var, rv)

    def test_train_updates_running_stats_and_differs_from_eval(self):
        rng = np.random.default_rng(6)
        layer = nn.BatchNormLayer(3)
        x = Tensor(rng.standard_normal((16, 3)) + 4.0)
        train_out = nn.batchnorm_forward(layer, x, "train").data
        assert not np.array_equal(layer.running_mean, np.zeros(3))
        eval_out = nn.batchnorm_forward(layer, x, "eval").data
        assert not np.allclose(train_out, eval_out)

    def test_batch_of_one_rejected(self):
        layer = nn.BatchNormLayer(3)
        with pytest.raises(ShapeError):
            nn.batchnorm_forward(layer, Tensor(np.ones((1, 3))), "train")

    def test_conv_featuremaps(self):
        rng = np.random.default_rng(7)
        layer = nn.BatchNormLayer(4)
        x = Tensor(rng.standard_normal((8, 4, 3, 3)) * 2.0 - 1.0)
        out = nn.batchnorm_forward(layer, x, "train").data
        np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-6)

    def test_bad_mode(self):
        with pytest.raises(ConfigError):
            nn.batchnorm_forward(nn.BatchNormLayer(2), Tensor(np.ones((4, 2))), "warmup")


class TestForwardWithStates:
    def test_empty_network_is_identity(self):
        net = nn.Network([], taps=())
        x = np.random.default_rng(8).standard_normal((3, 2))
        out, states = net.forward_with_states(Tensor(x))
        assert states == []
        np.testing.assert_array_equal(out.data, x)

    def test_mlp_shapes(self):
        net = nn.build_mlp(2, [500], 3, seed=0)
        out, states = net.forward_with_states(Tensor(np.random.default_rng(9).standard_normal((4, 2))))
        assert [s.shape for s in states] == [(4, 500)]
        assert out.shape == (4, 3)

    def test_state_count_equals_tap_count(self):
        net = nn.build_mlp(3, [8, 8, 8, 8], None, seed=1)
        _, states = net.forward_with_states(Tensor(np.ones((2, 3))))
        assert len(states) == len(net.taps) == 4

    @pytest.mark.slow
    def test_encoder_spatial_sizes(self):
        # the stated 2x2x1000 output holds at 28x28 input; standard conv/pool
        # arithmetic gives 3x3x1000 for 32x32 (32-30-15-13-11-5-3)
        net = nn.build_cnn(ENCODER_ARCH, (3, 32, 32), seed=0, batchnorm=False)
        out, states = net.forward_with_states(
            Tensor(np.random.default_rng(10).standard_normal((1, 3, 32, 32))))
        assert out.shape == (1, 1000, 3, 3)
        # the four conv taps yield 4 plain states and 8 with pooled scales
        from neuralbayes import mim
        assert len(mim.collect_states(states, mim.MimConfig(use_scales=False))) == 4
        assert len(mim.collect_states(states, mim.MimConfig(use_scales=True))) == 8
        net28 = nn.build_cnn(ENCODER_ARCH, (1, 28, 28), seed=0, batchnorm=False)
        out28 = net28.forward(Tensor(np.random.default_rng(11).standard_normal((1, 1, 28, 28))))
        assert out28.shape == (1, 1000, 2, 2)

    def test_cnn_with_global_pool_and_head(self):
        arch = "C(8,3,1,0)-P(2,2,0,max)-C(12,3,1,0)-P(.,.,.,avg)-FC(10)"
        net = nn.build_cnn(arch, (1, 12, 12), seed=3, batchnorm=True, softmax_head=True)
        out, states = net.forward_with_states(Tensor(np.random.default_rng(12).standard_normal((2, 1, 12, 12))), train=True)
        assert out.shape == (2, 10)
        np.testing.assert_allclose(out.data.sum(axis=1), 1.0, atol=1e-12)
        assert len(states) == 2

    def test_bad_tap_rejected(self):
        with pytest.raises(ConfigError):
            nn.Network([nn.ReluLayer()], taps=[3])

    def test_malformed_arch_token(self):
        with pytest.raises(ConfigError):
            nn.build_cnn("C(8,3,1,0)-Q(2)", (1, 8, 8), seed=0)


class TestCheckpoint:
    def _train_a_little(self, net, x):
        params = net.parameters()
        loss = T.tsum(net.forward(Tensor(x), train=True))
        grads = T.gradients(loss, params)
        for name, p in params.items():
            p.data = p.data - 0.01 * grads[name]

    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(13)
        net = nn.build_mlp(3, [7, 5], 2, seed=2, batchnorm=True)
        self._train_a_little(net, rng.standard_normal((6, 3)))
        jp, bp = nn.save_checkpoint(net, tmp_path / "ckpt")
        loaded = nn.load_checkpoint(tmp_path / "ckpt")
        for name, p in net.parameters().items():
            assert np.array_equal(loaded.parameters()[name].data, p.data), name
        for name, b in net.buffers().items():
            assert np.array_equal(loaded.buffers()[name], b), name
        # bytes written by a re-save are identical too
        nn.save_checkpoint(loaded, tmp_path / "ckpt2")
        assert (tmp_path / "ckpt2.bin").read_bytes() == bp.read_bytes()
        assert (tmp_path / "ckpt2.json").read_text() == jp.read_text()

    def test_loaded_network_reproduces_outputs(self, tmp_path):
        rng = np.random.default_rng(14)
        net = nn.build_mlp(4, [6], 3, seed=5, batchnorm=True)
        x = rng.standard_normal((5, 4))
        nn.save_checkpoint(net, tmp_path / "m")
        loaded = nn.load_checkpoint(tmp_path / "m.json")
        assert np.array_equal(net.forward(Tensor(x)).data, loaded.forward(Tensor(x)).data)

    def test_truncated_binary_rejected(self, tmp_path):
        net = nn.build_mlp(2, [3], 2, seed=0)
        _, bp = nn.save_checkpoint(net, tmp_path / "t")
        bp.write_bytes(bp.read_bytes()[:-8])
        with pytest.raises(FormatError, match="truncated"):
            nn.load_checkpoint(tmp_path / "t")

    def test_bad_format_marker(self, tmp_path):
        net = nn.build_mlp(2, [3], 2, seed=0)
        jp, _ = nn.save_checkpoint(net, tmp_path / "u")
        jp.write_text(jp.read_text().replace("nb-checkpoint-v1", "other"))
        with pytest.raises(FormatError):
            nn.load_checkpoint(tmp_path / "u")
