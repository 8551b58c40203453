"""
Tests for the prior and denoiser networks
"""
import numpy as np
import pytest

from src.models.errors import CheckpointError, ShapeError
from src.nets import DenoiserArch, DenoiserNet, PriorArch, PriorNet, denoiser_forward, freeze, prior_forward
from src.ndgrad.graph import Graph, backward
from src.ndgrad.tensor import Precision


@pytest.fixture
def image():
    return np.random.default_rng(0).standard_normal((2, 1, 8, 8)).astype(np.float32)


class TestPriorNet:
    """PriorNet construction, forward and freezing"""

    def test_untrained_prior_is_uniform(self, image):
        for classes in (2, 3):
            probs = PriorNet(PriorArch(num_classes=classes), seed=1).predict(image)
            assert probs.shape == (2, classes, 8, 8)
            np.testing.assert_allclose(probs, 1.0 / classes, atol=1e-7)

    def test_prior_forward_gives_probabilities(self, image):
        net = PriorNet(PriorArch(width=8), seed=2)
        net.update("out.w", np.random.default_rng(1).normal(0.0, 0.1, net.params["out.w"].shape).astype(np.float32))
        probs = prior_forward(net, image)
        assert probs.tobytes() == net.predict(image).tobytes()
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)
        assert probs.min() >= 0.0
        assert np.ptp(probs) > 0.0

    def test_same_seed_same_parameters(self):
        a, b = PriorNet(seed=3), PriorNet(seed=3)
        assert a.state_bytes() == b.state_bytes()
        assert a.state_bytes() != PriorNet(seed=4).state_bytes()

    def test_parameters_are_float32(self):
        nets = [PriorNet(PriorArch(width=8), seed=0), DenoiserNet(DenoiserArch(widths=(2, 2, 2), time_dim=4, T=10))]
        for net in nets:
            assert {value.dtype for value in net.params.values()} == {np.dtype(np.float32)}

    def test_wrong_channels(self):
        net = PriorNet(PriorArch(image_channels=2))
        with pytest.raises(ShapeError):
            net.predict(np.zeros((1, 1, 8, 8), dtype=np.float32))

    def test_frozen_prior_gets_no_gradients(self, image):
        net = freeze(PriorNet(seed=0))
        graph = Graph(Precision.TRAIN)
        probs = net.forward(graph, graph.leaf(image))
        loss = graph.sum(probs)
        assert not loss.requires_grad
        assert backward(graph, loss) == {}
        assert all(not leaf.requires_grad for leaf in graph.leaves())

    def test_frozen_update_rejected(self):
        net = PriorNet(seed=0).freeze()
        with pytest.raises(RuntimeError):
            net.update("out.b", np.ones(2, dtype=np.float32))
        with pytest.raises(ValueError):
            net.params["out.b"][0] = 1.0

    def test_save_load_bit_exact(self, tmp_path, image):
        net = PriorNet(PriorArch(width=8), seed=2)
        net.update("out.w", np.full_like(net.params["out.w"], 0.01))
        net.freeze()
        path = net.save(tmp_path / "prior.ckpt")

        loaded = PriorNet.load(path)
        assert loaded.frozen
        assert loaded.arch == net.arch
        assert loaded.state_bytes() == net.state_bytes()
        assert loaded.predict(image).tobytes() == net.predict(image).tobytes()

    def test_load_rejects_other_kind(self, tmp_path):
        path = DenoiserNet(DenoiserArch(widths=(2, 2, 2), time_dim=4, T=10)).save(tmp_path / "d.ckpt")
        with pytest.raises(CheckpointError):
            PriorNet.load(path)

    def test_load_rejects_mismatched_arch(self, tmp_path):
        path = PriorNet(PriorArch(width=8)).save(tmp_path / "prior.ckpt")
        with pytest.raises(CheckpointError) as exc:
            PriorNet.load(path, expect_arch=PriorArch(width=4))
        assert exc.value.tensor == "conv0.w"


class TestDenoiserNet:
    """DenoiserNet shapes, heads and DDS gating"""

    @pytest.fixture
    def arch(self):
        return DenoiserArch(widths=(4, 6, 8), time_dim=8, T=100, dds_steps=(25, 50, 75))

    def _inputs(self, batch=2, classes=2, size=8):
        rng = np.random.default_rng(5)
        s_t = rng.standard_normal((batch, classes, size, size))
        image = rng.standard_normal((batch, 1, size, size))
        prior = np.full((batch, classes, size, size), 1.0 / classes)
        return s_t, image, prior

    def _forward(self, net, t, **kwargs):
        s_t, image, prior = self._inputs(**kwargs)
        graph = Graph(Precision.TRAIN)
        return net.forward(graph, graph.leaf(s_t), graph.leaf(image), graph.leaf(prior), t)

    def test_default_parameter_count(self):
        count = DenoiserNet(DenoiserArch.with_default_dds()).parameter_count()
        assert 100_000 < count < 150_000

    def test_initial_v_is_zero(self, arch):
        v_hat, _ = self._forward(DenoiserNet(arch, seed=0), 40)
        assert v_hat.shape == (2, 2, 8, 8)
        assert np.all(v_hat.data == 0.0)

    def test_no_aux_outside_dds_steps(self, arch):
        _, aux = self._forward(DenoiserNet(arch), [10, 40])
        assert aux == {}

    def test_denoiser_forward_matches_method(self, arch):
        net = DenoiserNet(arch, seed=1)
        net.update("out.w", np.random.default_rng(2).normal(0.0, 0.1, net.params["out.w"].shape).astype(np.float32))
        s_t, image, prior = self._inputs()
        graph = Graph(Precision.TRAIN)
        v_hat, aux = denoiser_forward(net, graph, graph.leaf(s_t), graph.leaf(image), graph.leaf(prior), 40)
        direct, _ = self._forward(net, 40)
        assert aux == {}
        assert v_hat.shape == (2, 2, 8, 8)
        assert np.abs(v_hat.data).max() > 0.0
        np.testing.assert_array_equal(v_hat.data, direct.data)
        np.testing.assert_allclose(net.predict_v(s_t, image, prior, 40), direct.data, rtol=1e-6, atol=1e-7)

    def test_aux_for_members_only(self, arch):
        _, aux = self._forward(DenoiserNet(arch), [50, 40])
        assert list(aux) == [50]
        np.testing.assert_array_equal(aux[50].members, [True, False])
        assert aux[50].logits.shape == (2, 2, 8, 8)

    def test_dds_window(self):
        arch = DenoiserArch(widths=(4, 6, 8), time_dim=8, T=100, dds_steps=(50,), dds_window=3)
        _, aux = self._forward(DenoiserNet(arch), [47, 54])
        np.testing.assert_array_equal(aux[50].members, [True, False])

    def test_aux_heads_leave_main_path_unchanged(self):
        base = dict(widths=(4, 6, 8), time_dim=8, T=100)
        plain = DenoiserNet(DenoiserArch(**base), seed=9)
        with_heads = DenoiserNet(DenoiserArch(dds_steps=(50,), **base), seed=9)
        for name, value in plain.params.items():
            assert with_heads.params[name].tobytes() == value.tobytes()

    def test_three_classes(self):
        net = DenoiserNet(DenoiserArch(num_classes=3, widths=(4, 6, 8), time_dim=8, T=10))
        v_hat, _ = self._forward(net, 5, classes=3)
        assert v_hat.shape == (2, 3, 8, 8)

    def test_size_must_divide_by_four(self, arch):
        with pytest.raises(ShapeError):
            self._forward(DenoiserNet(arch), 5, size=6)

    def test_step_range(self, arch):
        with pytest.raises(ValueError):
            self._forward(DenoiserNet(arch), 0)
        with pytest.raises(ValueError):
            self._forward(DenoiserNet(arch), [5, 101])

    def test_arch_validation(self):
        with pytest.raises(ValueError):
            DenoiserArch(T=10, dds_steps=(11,))
        with pytest.raises(ValueError):
            DenoiserArch(time_dim=7)

    def test_save_load_round_trip(self, tmp_path, arch):
        net = DenoiserNet(arch, seed=4)
        loaded = DenoiserNet.load(net.save(tmp_path / "denoiser.ckpt"))
        assert loaded.arch == arch
        assert loaded.state_bytes() == net.state_bytes()
        assert not loaded.frozen


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
