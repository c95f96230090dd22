import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pixelgrasp import model, training
from pixelgrasp.errors import EmptyDataset, ShapeMismatch
from pixelgrasp.labels import GraspMaps
from pixelgrasp.nn_core import Tensor

TINY = model.ModelConfig(in_channels=2, input_side=16, base_width=2, levels=2, seed=0)


def toy_dataset(n=6, side=16, channels=2, seed=0):
    rng = np.random.default_rng(seed)
    data = []
    for _ in range(n):
        x = rng.uniform(0, 1, size=(channels, side, side)).astype(np.float32)
        y = np.zeros((4, side, side), dtype=np.float32)
        r, c = rng.integers(4, side - 4, size=2)
        y[0, r - 1:r + 2, c - 1:c + 2] = 1.0
        y[1, r - 1:r + 2, c - 1:c + 2] = 1.0
        y[3, r - 1:r + 2, c - 1:c + 2] = 0.4
        data.append((x, y))
    return data


class TestSplit:
    def test_cornell_sized_split(self):
        train, val = training.split_dataset(range(1035), 0.8, seed=1)
        assert len(train) == 828 and len(val) == 207

    def test_single_sample(self):
        train, val = training.split_dataset([42], 0.8, seed=0)
        assert train == [42] and val == []

    def test_deterministic(self):
        a = training.split_dataset(range(50), 0.8, seed=9)
        b = training.split_dataset(range(50), 0.8, seed=9)
        assert a == b

    def test_empty_rejected(self):
        with pytest.raises(EmptyDataset):
            training.split_dataset([], 0.8, seed=0)

    @settings(max_examples=50)
    @given(st.integers(1, 200), st.floats(0.05, 0.95), st.integers(0, 999))
    def test_disjoint_exhaustive(self, n, frac, seed):
        train, val = training.split_dataset(range(n), frac, seed)
        assert sorted(train + val) == list(range(n))
        assert not set(train) & set(val)


class TestCompositeLoss:
    def test_zero_on_equal(self):
        maps = GraspMaps(*(np.random.default_rng(0).random((4, 4)).astype(np.float32)
                           for _ in range(4)))
        assert training.composite_loss(maps, maps).item() == 0.0

    def test_single_pixel_hand_value(self):
        pred = GraspMaps(q=np.array([[1.0]]), cos2phi=np.array([[1.0]]),
                         sin2phi=np.array([[0.0]]), w=np.array([[1.0]]))
        label = GraspMaps(q=np.array([[0.0]]), cos2phi=np.array([[0.0]]),
                          sin2phi=np.array([[0.0]]), w=np.array([[0.0]]))
        assert training.composite_loss(pred, label).item() == pytest.approx(3.0, abs=1e-12)

    def test_lambda_linearity(self):
        rng = np.random.default_rng(1)
        pred = GraspMaps(*(rng.random((3, 3)).astype(np.float32) for _ in range(4)))
        label = GraspMaps(*(rng.random((3, 3)).astype(np.float32) for _ in range(4)))
        base = training.composite_loss(pred, label, training.LossWeights()).item()
        doubled = training.composite_loss(pred, label, training.LossWeights(q=2.0)).item()
        q_term = training.plane_losses(pred, label)["q"]
        assert doubled - base == pytest.approx(q_term, rel=1e-6)

    def test_shape_mismatch(self):
        a = GraspMaps(*(np.zeros((2, 2)) for _ in range(4)))
        b = GraspMaps(*(np.zeros((3, 3)) for _ in range(4)))
        with pytest.raises(ShapeMismatch):
            training.composite_loss(a, b)

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            training.LossWeights(q=-0.1)


class TestTrain:
    def test_zero_epochs_no_change(self):
        net = model.build(TINY)
        before = [p.data.tobytes() for p in net.parameters]
        log = training.train(toy_dataset(), net, training.TrainConfig(epochs=0))
        assert log == []
        assert [p.data.tobytes() for p in net.parameters] == before

    def test_determinism(self):
        def run():
            net = model.build(TINY)
            cfg = training.TrainConfig(epochs=3, batch_size=2, seed=5)
            return [r.train_loss for r in training.train(toy_dataset(), net, cfg)]

        assert run() == run()

    def test_loss_decreases(self):
        net = model.build(TINY)
        cfg = training.TrainConfig(epochs=25, batch_size=3, seed=2)
        log = training.train(toy_dataset(), net, cfg)
        assert log[-1].train_loss < log[0].train_loss

    def test_empty_dataset(self):
        with pytest.raises(EmptyDataset):
            training.train([], model.build(TINY), training.TrainConfig())

    def test_progress_sink_called(self):
        seen = []
        training.train(toy_dataset(), model.build(TINY),
                       training.TrainConfig(epochs=2), progress=seen.append)
        assert [r.epoch for r in seen] == [1, 2]


def test_composite_loss_grad_check_through_full_network():
    from pixelgrasp.nn_core import grad_check
    rng = np.random.default_rng(4)
    cfg = model.ModelConfig(in_channels=1, input_side=8, base_width=1, levels=1, seed=2)
    net = model.build(cfg)
    x = rng.uniform(0.1, 0.9, size=(1, 1, 8, 8))
    y = rng.uniform(0.0, 1.0, size=(1, 4, 8, 8))
    original = net._params

    def fn(plist):
        # run the forward pass with the checker's tensors installed
        it = iter(plist)
        net._params = [(name, next(it), next(it)) for name, _, _ in original]
        net._by_name = {name: (w, b) for name, w, b in net._params}
        preds = net.forward(Tensor(x))
        targets = [Tensor(y[:, i:i + 1]) for i in range(4)]
        return training.composite_loss(preds, targets)

    try:
        err = grad_check(fn, net.parameters, eps=1e-4)
    finally:
        net._params = original
        net._by_name = {name: (w, b) for name, w, b in original}
    assert err < 1e-3


class TestEvaluate:
    def test_zero_when_labels_equal_outputs(self):
        net = model.build(TINY)
        data = toy_dataset(3)
        constructed = []
        for x, _ in data:
            q, c, s, w = net.forward(Tensor(x[None]))
            y = np.concatenate([q.data[0], c.data[0], s.data[0], w.data[0]])
            constructed.append((x, y))
        result = training.evaluate(net, constructed)
        assert result.loss == pytest.approx(0.0, abs=1e-10)

    def test_single_sample_equals_composite(self):
        net = model.build(TINY)
        data = toy_dataset(1)
        x, y = data[0]
        q, c, s, w = net.forward(Tensor(x[None]))
        direct = training.composite_loss(
            (q, c, s, w), [Tensor(y[None, i:i + 1]) for i in range(4)]).item()
        assert training.evaluate(net, data).loss == pytest.approx(direct, rel=1e-6)

    def test_breakdown_sums_to_loss(self):
        net = model.build(TINY)
        weights = training.LossWeights(q=2.0, cos=0.5, sin=1.5, w=3.0)
        data = toy_dataset(4)
        result = training.evaluate(net, data, weights)
        weighted = (2.0 * result.breakdown["q"] + 0.5 * result.breakdown["cos"]
                    + 1.5 * result.breakdown["sin"] + 3.0 * result.breakdown["w"])
        assert weighted == pytest.approx(result.loss, rel=1e-6)

    def test_parameters_untouched(self):
        net = model.build(TINY)
        before = [p.data.tobytes() for p in net.parameters]
        training.evaluate(net, toy_dataset(3))
        assert [p.data.tobytes() for p in net.parameters] == before

    def test_empty_rejected(self):
        with pytest.raises(EmptyDataset):
            training.evaluate(model.build(TINY), [])
