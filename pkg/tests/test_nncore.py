import numpy as np
import pytest

from gradcheck import numeric_grad, rel_error
from pcrkit import nncore as nn


class TestDense:
    def test_zero_weight_broadcasts_bias(self):
        y = nn.dense_forward(np.ones((3, 4)), np.zeros((4, 2)), np.array([1.0, 2.0]))
        np.testing.assert_array_equal(y, [[1, 2]] * 3)

    def test_hand_product(self):
        y = nn.dense_forward(np.array([[1.0, 0]]), np.array([[3.0, 4], [5, 6]]), np.zeros(2))
        np.testing.assert_array_equal(y, [[3, 4]])

    def test_identity(self, rng):
        x = rng.normal(size=(5, 3))
        np.testing.assert_array_equal(nn.dense_forward(x, np.eye(3), np.zeros(3)), x)

    def test_shape_mismatch(self):
        with pytest.raises(nn.ShapeError):
            nn.dense_forward(np.ones((2, 3)), np.ones((4, 2)), np.zeros(2))
        with pytest.raises(nn.ShapeError):
            nn.dense_backward(np.ones((2, 3)), np.ones((3, 2)), np.ones((3, 2)))

    def test_backward_zero(self, rng):
        dx, dW, db = nn.dense_backward(rng.normal(size=(4, 3)), rng.normal(size=(3, 2)), np.zeros((4, 2)))
        assert not dx.any() and not dW.any() and not db.any()

    def test_backward_scalar(self):
        dx, dW, db = nn.dense_backward(np.array([[2.0]]), np.array([[3.0]]), np.array([[1.0]]))
        assert (dx.item(), dW.item(), db.item()) == (3.0, 2.0, 1.0)

    @pytest.mark.parametrize("dtype,tol", [(np.float64, 1e-6), (np.float32, 1e-3)])
    def test_backward_finite_differences(self, rng, dtype, tol):
        x = rng.normal(size=(4, 3)).astype(dtype)
        W = rng.normal(size=(3, 5)).astype(dtype)
        b = rng.normal(size=5).astype(dtype)
        probe = rng.normal(size=(4, 5)).astype(dtype)
        h = 1e-6 if dtype == np.float64 else 1e-2

        def loss():
            return float(np.sum(probe.astype(np.float64) * nn.dense_forward(x, W, b)))

        dx, dW, db = nn.dense_backward(x, W, probe)
        for arr, grad in ((x, dx), (W, dW), (b, db)):
            num, _ = numeric_grad(loss, arr, h)
            assert rel_error(num, grad) < tol


class TestRelu:
    def test_forward(self):
        np.testing.assert_array_equal(nn.relu_forward(np.array([-1.0, 0, 2])), [0, 0, 2])

    def test_backward(self):
        np.testing.assert_array_equal(nn.relu_backward(np.array([-1.0, 2]), np.array([5.0, 5])), [0, 5])

    def test_backward_at_zero_is_zero(self):
        assert nn.relu_backward(np.array([0.0]), np.array([1.0]))[0] == 0

    def test_finite_differences(self, rng):
        x = rng.normal(size=20)
        x[np.abs(x) < 0.05] = 0.5
        probe = rng.normal(size=20)
        num, _ = numeric_grad(lambda: float(np.sum(probe * nn.relu_forward(x))), x)
        assert rel_error(num, nn.relu_backward(x, probe)) < 1e-6


class TestMaxPool:
    def test_single_row(self):
        pooled, arg = nn.maxpool_points(np.array([[1.0, -2, 3]]))
        np.testing.assert_array_equal(pooled, [1, -2, 3])
        np.testing.assert_array_equal(arg, [0, 0, 0])

    def test_small(self):
        pooled, arg = nn.maxpool_points(np.array([[1.0, 5], [3, 2]]))
        np.testing.assert_array_equal(pooled, [3, 5])
        np.testing.assert_array_equal(arg, [1, 0])

    def test_ties_lowest_row(self):
        _, arg = nn.maxpool_points(np.array([[1.0, 0], [1.0, 0], [0, 0]]))
        np.testing.assert_array_equal(arg, [0, 0])

    def test_permutation(self, rng):
        f = rng.normal(size=(50, 8))
        pooled, _ = nn.maxpool_points(f)
        for _ in range(10):
            assert nn.maxpool_points(f[rng.permutation(50)])[0].tobytes() == pooled.tobytes()

    def test_batched_matches_unbatched(self, rng):
        f = rng.normal(size=(3, 10, 4))
        pooled, arg = nn.maxpool_points(f)
        for b in range(3):
            p, a = nn.maxpool_points(f[b])
            np.testing.assert_array_equal(pooled[b], p)
            np.testing.assert_array_equal(arg[b], a)

    def test_backward_zero(self):
        assert not nn.maxpool_backward(np.array([1, 0]), np.zeros(2), 3).any()

    def test_backward_routing(self):
        out = nn.maxpool_backward(np.array([2]), np.array([7.0]), 4)
        np.testing.assert_array_equal(out[:, 0], [0, 0, 7, 0])

    def test_finite_differences(self, rng):
        f = rng.normal(size=(6, 4))
        probe = rng.normal(size=4)
        _, arg = nn.maxpool_points(f)
        num, _ = numeric_grad(lambda: float(np.sum(probe * nn.maxpool_points(f)[0])), f)
        assert rel_error(num, nn.maxpool_backward(arg, probe, 6)) < 1e-6


class TestDropout:
    def test_no_drop(self, rng):
        x = rng.normal(size=(4, 4))
        y, mask = nn.dropout_forward(x, 0.0, rng, True)
        np.testing.assert_array_equal(y, x)
        assert np.all(mask == 1)

    def test_inference(self, rng):
        x = rng.normal(size=(4, 4))
        y, _ = nn.dropout_forward(x, 0.9, rng, False)
        np.testing.assert_array_equal(y, x)

    def test_keep_fraction(self):
        x = np.ones(1_000_000)
        y, mask = nn.dropout_forward(x, 0.5, np.random.default_rng(0), True)
        kept = np.mean(mask > 0)
        assert 0.498 <= kept <= 0.502
        np.testing.assert_array_equal(np.unique(y), [0, 2])

    def test_backward_uses_mask(self, rng):
        x = rng.normal(size=10)
        y, mask = nn.dropout_forward(x, 0.3, rng, True)
        np.testing.assert_array_equal(nn.dropout_backward(mask, np.ones(10)), mask)

    def test_bad_rate(self, rng):
        with pytest.raises(ValueError):
            nn.dropout_forward(np.ones(3), 1.0, rng, True)


def scalar_store(value=0.0, grad=0.0):
    store = nn.ParamStore()
    store.add("w", np.array([[value]]), np.zeros(1))
    store["w"].dW[...] = grad
    return store


class TestAdam:
    def test_zero_grad_no_change(self, rng):
        store = nn.init_params([("a", 3, 4)], rng)
        before = store["a"].W.copy()
        nn.adam_step(store, nn.AdamState())
        np.testing.assert_array_equal(store["a"].W, before)

    def test_single_step(self):
        store = scalar_store(0.0, 1.0)
        nn.adam_step(store, nn.AdamState(lr=1e-3))
        assert store["w"].W.item() == pytest.approx(-1e-3 / (1 + 1e-8), rel=1e-12)
        assert store["w"].W.item() == pytest.approx(-9.99999e-4, rel=1e-5)
        assert store["w"].dW.item() == 0

    def test_matches_reference_sequence(self):
        # closed-form Adam on a fixed gradient sequence
        grads = [0.5, -1.0, 2.0, 0.1]
        store = scalar_store(1.0)
        state = nn.AdamState(lr=0.01)
        theta, m, v = 1.0, 0.0, 0.0
        for t, g in enumerate(grads, start=1):
            store["w"].dW[...] = g
            nn.adam_step(store, state)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            theta -= 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
            assert store["w"].W.item() == pytest.approx(theta, rel=1e-12)

    def test_decay_schedule(self):
        state = nn.AdamState(lr=1e-3, decay_rate=0.7, decay_every=3_000_000)
        assert state.effective_lr(2_999_999) == 1e-3
        assert state.effective_lr(3_000_000) == pytest.approx(0.7e-3)
        assert state.effective_lr(6_000_000) == pytest.approx(0.49e-3)

    def test_decay_applied_in_step(self):
        store = scalar_store(0.0, 1.0)
        state = nn.AdamState(lr=1e-3, decay_every=1)
        nn.adam_step(store, state)
        assert store["w"].W.item() == pytest.approx(-0.7e-3, rel=1e-6)

    def test_deterministic(self, rng):
        a = nn.init_params([("x", 4, 3)], np.random.default_rng(1), np.float32)
        b = a.copy()
        g = rng.normal(size=(4, 3)).astype(np.float32)
        for store in (a, b):
            state = nn.AdamState()
            for _ in range(3):
                store["x"].dW[...] = g
                nn.adam_step(store, state)
        assert a["x"].W.tobytes() == b["x"].W.tobytes()

    def test_bad_betas(self):
        with pytest.raises(ValueError):
            nn.AdamState(beta1=1.0)


class TestInit:
    def test_seeded(self):
        sizes = [("a", 3, 8), ("b", 8, 2)]
        a = nn.init_params(sizes, np.random.default_rng(4))
        b = nn.init_params(sizes, np.random.default_rng(4))
        for (_, x), (_, y) in zip(a.arrays(), b.arrays()):
            assert x.tobytes() == y.tobytes()

    def test_he_uniform_bounds(self, rng):
        store = nn.init_params([("a", 64, 256)], rng)
        bound = np.sqrt(6 / 64)
        assert np.abs(store["a"].W).max() <= bound
        assert np.abs(store["a"].W).max() > 0.9 * bound
        assert not store["a"].b.any()

    def test_duplicate_names(self, rng):
        with pytest.raises(KeyError):
            nn.init_params([("a", 2, 2), ("a", 2, 2)], rng)

    def test_slot_shapes(self, rng):
        store = nn.init_params([("a", 5, 3)], rng)
        layer = store["a"]
        for slot in ("dW", "mW", "vW"):
            assert getattr(layer, slot).shape == layer.W.shape
        for slot in ("db", "mb", "vb"):
            assert getattr(layer, slot).shape == layer.b.shape


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path, rng):
        store = nn.init_params([("enc0", 3, 4), ("head_out", 4, 7)], rng)
        state = nn.AdamState()
        for _ in range(2):
            for layer in store.layers.values():
                layer.dW[...] = rng.normal(size=layer.W.shape)
                layer.db[...] = rng.normal(size=layer.b.shape)
            nn.adam_step(store, state)
        path = tmp_path / "m.ckpt"
        nn.save_checkpoint(path, store, state, {"note": "x"})
        loaded, lstate, manifest = nn.load_checkpoint(path)
        assert manifest["note"] == "x"
        assert lstate == state
        for slots in (("W", "b"), ("mW", "mb"), ("vW", "vb")):
            for (n1, a), (n2, b) in zip(store.arrays(slots), loaded.arrays(slots)):
                assert n1 == n2 and a.tobytes() == b.tobytes()

    def test_blob_is_little_endian_f32(self, tmp_path, rng):
        store = nn.init_params([("a", 2, 3)], rng)
        path = tmp_path / "m.ckpt"
        nn.save_checkpoint(path, store)
        blob = nn.blob_path(path).read_bytes()
        assert len(blob) == 4 * 3 * (6 + 3)
        np.testing.assert_array_equal(np.frombuffer(blob[:24], "<f4").reshape(2, 3), store["a"].W)

    def test_corrupt_blob(self, tmp_path, rng):
        store = nn.init_params([("a", 2, 3)], rng)
        path = tmp_path / "m.ckpt"
        nn.save_checkpoint(path, store)
        nn.blob_path(path).write_bytes(b"\0" * 8)
        with pytest.raises(ValueError):
            nn.load_checkpoint(path)
