"""
Tests for the training losses and the optimizer
"""
import numpy as np
import pytest

from src.models.errors import ShapeError
from src.nets.denoiser_net import AuxLogits
from src.nets.prior_net import PriorArch, PriorNet
from src.ndgrad.graph import Graph
from src.ndgrad.tensor import Precision
from src.training.losses import loss_dds, loss_total, loss_vel
from src.training.optimizer import Adam


@pytest.fixture
def graph():
    return Graph(Precision.CHECK)


def _target(batch=2, size=4):
    y = np.zeros((batch, 2, size, size))
    y[:, 1] = 1.0
    return y


class TestLossVel:
    """Velocity regression loss"""

    def test_exact_prediction(self, graph):
        v = np.random.default_rng(0).standard_normal((2, 2, 4, 4))
        assert loss_vel(graph, graph.leaf(v), graph.leaf(v)).item() == 0.0

    def test_unit_offset(self, graph):
        v = np.zeros((2, 2, 4, 4))
        assert loss_vel(graph, graph.leaf(v + 1.0), graph.leaf(v)).item() == pytest.approx(1.0)

    def test_shape_mismatch(self, graph):
        with pytest.raises(ShapeError):
            loss_vel(graph, graph.leaf(np.zeros((1, 2, 4, 4))), graph.leaf(np.zeros((1, 3, 4, 4))))


class TestLossDDS:
    """Deep diffusion supervision"""

    def _head(self, graph, step, logits, members=None):
        members = np.ones(logits.shape[0], dtype=bool) if members is None else np.asarray(members)
        return AuxLogits(step=step, logits=graph.leaf(logits), members=members)

    def test_uniform_logits_give_ln2_per_step(self, graph):
        y = graph.leaf(_target())
        aux = {
            250: self._head(graph, 250, np.zeros((2, 2, 4, 4))),
            500: self._head(graph, 500, np.zeros((2, 2, 4, 4))),
        }
        assert loss_dds(graph, aux, y, tau=1.0).item() == pytest.approx(2 * np.log(2.0))

    def test_temperature_scales_logits(self, graph):
        logits = np.random.default_rng(1).standard_normal((2, 2, 4, 4))
        y = graph.leaf(_target())
        hot = loss_dds(graph, {5: self._head(graph, 5, logits)}, y, tau=2.0).item()
        direct = loss_dds(graph, {5: self._head(graph, 5, logits / 2.0)}, y, tau=1.0).item()
        assert hot == pytest.approx(direct)

    def test_members_only(self, graph):
        logits = np.zeros((2, 2, 4, 4))
        logits[1, 1] = 10.0
        y = graph.leaf(_target())
        both = loss_dds(graph, {5: self._head(graph, 5, logits)}, y, tau=1.0).item()
        first = loss_dds(graph, {5: self._head(graph, 5, logits, [True, False])}, y, tau=1.0).item()
        assert first == pytest.approx(np.log(2.0))
        assert both < first

    def test_empty_map_rejected(self, graph):
        with pytest.raises(ValueError):
            loss_dds(graph, {}, graph.leaf(_target()), tau=1.0)

    def test_stray_step_rejected(self, graph):
        aux = {7: self._head(graph, 7, np.zeros((2, 2, 4, 4)))}
        with pytest.raises(ValueError):
            loss_dds(graph, aux, graph.leaf(_target()), tau=1.0, dds_steps=[5, 10])


class TestLossTotal:
    """Weighted combination"""

    def test_weighted_sum(self, graph):
        total = loss_total(graph, graph.leaf(1.0), graph.leaf(2.0), lam=0.1)
        assert total.item() == pytest.approx(1.2)

    def test_without_dds(self, graph):
        l_vel = graph.leaf(0.7)
        assert loss_total(graph, l_vel, None, lam=0.1) is l_vel


class TestAdam:
    """Adam updates"""

    def test_first_step_moves_by_lr(self):
        net = PriorNet(PriorArch(width=2, depth=2), seed=0)
        before = {k: v.copy() for k, v in net.params.items()}
        grads = {name: np.ones_like(v) for name, v in net.params.items()}
        grads["out.b"] = -np.ones_like(net.params["out.b"])
        Adam(net, lr=0.01).step(grads)

        np.testing.assert_allclose(net.params["conv0.w"], before["conv0.w"] - 0.01, atol=1e-6)
        np.testing.assert_allclose(net.params["out.b"], before["out.b"] + 0.01, atol=1e-6)

    def test_missing_gradient_leaves_parameter(self):
        net = PriorNet(PriorArch(width=2, depth=2), seed=0)
        before = net.params["conv0.w"].copy()
        Adam(net).step({"out.b": np.ones(2)})
        np.testing.assert_array_equal(net.params["conv0.w"], before)

    def test_frozen_module_rejected(self):
        with pytest.raises(ValueError):
            Adam(PriorNet(seed=0).freeze())


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
