"""Reverse-mode tape: primitive gradients, optimizers, checkpoints."""

import numpy as np
import pytest

from combgrad import DimensionMismatch, NonFinite, ShapeMismatch, matching_layer
from combgrad import tape
from combgrad.tape import (
    GumbelConfig,
    ParamStore,
    Tensor,
    adam_step,
    add,
    comb_node,
    concat,
    custom_node,
    embed,
    gumbel_softmax_st,
    load_checkpoint,
    log_softmax,
    matmul,
    mul,
    nll,
    relu,
    save_checkpoint,
    scale,
    sgd_step,
    softmax_t,
    tanh,
    tmean,
    tsum,
)

from helpers import central_fd, rel_err

RNG = np.random.default_rng(1234)


def fd_check(build, x0, *, eps=1e-6, tol=1e-5):
    """Compare tape gradient of a scalar graph against central differences.

    build(x_tensor) must return a scalar Tensor; returns max relative error.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    xt = Tensor(x0.copy())
    loss = build(xt)
    loss.backward()
    got = xt.grad.copy()

    def f(x):
        return build(Tensor(np.asarray(x, dtype=np.float64))).item()

    want = central_fd(f, x0, eps=eps)
    err = rel_err(got, want)
    assert err < tol, f"rel err {err}"
    return err


class TestPrimitiveGradients:
    def test_matmul(self):
        B = Tensor(RNG.standard_normal((4, 3)))
        r = RNG.standard_normal((2, 3))
        fd_check(lambda x: tsum(mul(matmul(x, B), Tensor(r))), RNG.standard_normal((2, 4)))

    def test_matmul_right_operand(self):
        A = Tensor(RNG.standard_normal((2, 4)))
        r = RNG.standard_normal((2, 3))
        fd_check(lambda x: tsum(mul(matmul(A, x), Tensor(r))), RNG.standard_normal((4, 3)))

    def test_add_with_broadcast_bias(self):
        A = Tensor(RNG.standard_normal((3, 4)))
        r = RNG.standard_normal((3, 4))
        fd_check(lambda x: tsum(mul(add(A, x), Tensor(r))), RNG.standard_normal((1, 4)))

    def test_mul(self):
        B = Tensor(RNG.standard_normal((3, 3)))
        fd_check(lambda x: tsum(mul(x, B)), RNG.standard_normal((3, 3)))

    def test_scale(self):
        fd_check(lambda x: tsum(scale(x, -2.5)), RNG.standard_normal((2, 5)))

    def test_tanh(self):
        r = RNG.standard_normal((2, 3))
        fd_check(lambda x: tsum(mul(tanh(x), Tensor(r))), RNG.standard_normal((2, 3)))

    def test_relu_away_from_kink(self):
        x0 = RNG.standard_normal((3, 3))
        x0 = np.where(np.abs(x0) < 0.1, 0.5, x0)
        r = RNG.standard_normal((3, 3))
        fd_check(lambda x: tsum(mul(relu(x), Tensor(r))), x0)

    def test_log_softmax(self):
        r = RNG.standard_normal((3, 4))
        fd_check(lambda x: tsum(mul(log_softmax(x), Tensor(r))), RNG.standard_normal((3, 4)))

    def test_log_softmax_rows_normalize(self):
        out = log_softmax(Tensor(np.zeros((2, 4))))
        assert np.allclose(out.value, -np.log(4.0))

    def test_softmax_temperature(self):
        r = RNG.standard_normal((3, 4))
        fd_check(lambda x: tsum(mul(softmax_t(x, 0.7), Tensor(r))), RNG.standard_normal((3, 4)))

    def test_nll_integer_targets(self):
        ids = np.array([0, 2, 1])
        fd_check(lambda x: nll(log_softmax(x), ids), RNG.standard_normal((3, 4)))

    def test_nll_one_hot_targets(self):
        Y = np.eye(4)[[0, 2, 1]]
        fd_check(lambda x: nll(log_softmax(x), Y), RNG.standard_normal((3, 4)))

    def test_nll_sum_reduction(self):
        ids = np.array([1, 1])
        fd_check(lambda x: nll(log_softmax(x), ids, reduction="sum"), RNG.standard_normal((2, 3)))

    def test_tsum_and_tmean(self):
        fd_check(tsum, RNG.standard_normal((2, 3)))
        fd_check(tmean, RNG.standard_normal((2, 3)))

    def test_embed_accumulates_repeated_rows(self):
        ids = np.array([0, 1, 0, 2])
        r = RNG.standard_normal((4, 3))
        fd_check(lambda x: tsum(mul(embed(x, ids), Tensor(r))), RNG.standard_normal((5, 3)))

    def test_concat(self):
        B = Tensor(RNG.standard_normal((2, 3)))
        r = RNG.standard_normal((4, 3))
        fd_check(lambda x: tsum(mul(concat([x, B], axis=0), Tensor(r))), RNG.standard_normal((2, 3)))

    def test_shared_subexpression_accumulates(self):
        x = Tensor(np.array([1.0, 2.0]))
        loss = tsum(add(x, x))
        loss.backward()
        assert np.array_equal(x.grad, [2.0, 2.0])

    def test_long_chain_does_not_recurse(self):
        x = Tensor(np.array([1.0]))
        y = x
        for _ in range(5000):
            y = add(y, x)
        tsum(y).backward()
        assert x.grad is not None


class TestStraightThroughSampler:
    def test_forward_emits_one_hot_argmax_of_noisy_logits(self):
        logits = Tensor(RNG.standard_normal((6, 4)))
        out = gumbel_softmax_st(logits, 2.0, np.random.default_rng(99))
        assert out.value.shape == (6, 4)
        assert np.array_equal(np.sort(np.unique(out.value)), [0.0, 1.0])
        assert np.array_equal(out.value.sum(axis=1), np.ones(6))

    def test_forward_is_reproducible_per_seed(self):
        logits = Tensor(RNG.standard_normal((6, 4)))
        a = gumbel_softmax_st(logits, 2.0, np.random.default_rng(5)).value
        b = gumbel_softmax_st(logits, 2.0, np.random.default_rng(5)).value
        assert np.array_equal(a, b)

    def test_temperature_does_not_change_the_sample(self):
        logits = Tensor(RNG.standard_normal((6, 4)))
        a = gumbel_softmax_st(logits, 0.5, np.random.default_rng(5)).value
        b = gumbel_softmax_st(logits, 5.0, np.random.default_rng(5)).value
        assert np.array_equal(a, b)

    def test_backward_follows_the_tempered_softmax_path(self):
        x0 = RNG.standard_normal((3, 4))
        r = RNG.standard_normal((3, 4))
        tau = 1.3

        xt = Tensor(x0.copy())
        out = gumbel_softmax_st(xt, tau, np.random.default_rng(77))
        tsum(mul(out, Tensor(r))).backward()
        got = xt.grad.copy()

        # Rebuild the same noise and differentiate the soft path by hand.
        rng = np.random.default_rng(77)
        u = rng.uniform(low=np.finfo(np.float64).tiny, high=1.0, size=x0.shape)
        noise = -np.log(-np.log(u))

        def f(x):
            z = (x + noise) / tau
            z = z - z.max(axis=1, keepdims=True)
            e = np.exp(z)
            soft = e / e.sum(axis=1, keepdims=True)
            return float((soft * r).sum())

        want = central_fd(f, x0, eps=1e-6)
        assert rel_err(got, want) < 1e-5

    def test_one_dim_logits_rejected(self):
        with pytest.raises(ShapeMismatch):
            gumbel_softmax_st(Tensor(np.zeros(4)), 1.0, np.random.default_rng(0))


class TestOptimalValueNode:
    def layer_and_point(self):
        d = 4
        Y = np.eye(d)[[0, 2, 1]]
        logits = RNG.standard_normal((3, d))
        logP = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        return matching_layer(Y), logP

    def test_composite_gradient_matches_finite_differences(self):
        layer, logP = self.layer_and_point()

        def build(x):
            return comb_node(x, layer)

        fd_check(build, logP.ravel(), eps=1e-7, tol=1e-5)

    def test_upstream_scaling_via_square(self):
        layer, logP = self.layer_and_point()
        xt = Tensor(logP.ravel().copy())
        z = comb_node(xt, layer)
        mul(z, z).backward()
        g_sq = xt.grad.copy()

        xt2 = Tensor(logP.ravel().copy())
        z2 = comb_node(xt2, layer)
        z2.backward()
        assert np.allclose(g_sq, 2.0 * z2.item() * xt2.grad, atol=1e-12)

    def test_custom_node_routes_vjps(self):
        a = Tensor(np.array([1.0, 2.0]))
        b = Tensor(np.array([3.0]))
        out = custom_node([a, b], 5.0, [lambda up: up * np.array([10.0, 20.0]), lambda up: up * np.array([30.0])])
        out.backward()
        assert np.array_equal(a.grad, [10.0, 20.0])
        assert np.array_equal(b.grad, [30.0])

    def test_custom_node_requires_one_vjp_per_parent(self):
        with pytest.raises(ShapeMismatch):
            custom_node([Tensor(np.zeros(2))], 0.0, [])

    def test_corrupted_gradient_is_caught_by_fd(self):
        # Negative control: a deliberately wrong vjp must fail the check.
        def build(x):
            return custom_node([x], float(np.tanh(x.value).sum()), [lambda up: up * (1.0 - np.tanh(x.value) ** 2) * 1.01])

        x0 = RNG.standard_normal(5)
        xt = Tensor(x0.copy())
        build(xt).backward()
        got = xt.grad.copy()
        want = central_fd(lambda x: float(np.tanh(x).sum()), x0, eps=1e-6)
        assert rel_err(got, want) > 1e-5


class TestBackwardGuards:
    def test_non_scalar_start_rejected(self):
        with pytest.raises(DimensionMismatch):
            Tensor(np.zeros(3)).backward()

    def test_non_finite_start_rejected(self):
        with pytest.raises(NonFinite):
            Tensor(np.array(np.inf)).backward()

    def test_nll_shape_guards(self):
        with pytest.raises(ShapeMismatch):
            nll(Tensor(np.zeros((2, 3))), np.zeros((3, 3)))
        with pytest.raises(ShapeMismatch):
            nll(Tensor(np.zeros(3)), np.array([0]))
        with pytest.raises(ValueError):
            nll(Tensor(np.zeros((2, 3))), np.array([0, 1]), reduction="median")


class TestOptimizers:
    def test_sgd_updates_and_counts_steps(self):
        store = ParamStore(seed=7)
        w = store.add("w", np.array([1.0, 2.0]))
        w.grad = np.array([0.5, -0.5])
        sgd_step(store, lr=0.1)
        assert np.allclose(w.value, [0.95, 2.05])
        assert store.step == 1

    def test_adam_first_step_is_bias_corrected(self):
        store = ParamStore()
        w = store.add("w", np.zeros(3))
        g = np.array([1.0, -2.0, 0.5])
        w.grad = g.copy()
        adam_step(store, lr=0.01)
        expect = -0.01 * g / (np.abs(g) + 1e-8)
        assert np.allclose(w.value, expect, atol=1e-12)

    def test_adam_skips_parameters_without_gradients(self):
        store = ParamStore()
        w = store.add("w", np.ones(2))
        adam_step(store, lr=0.1)
        assert np.array_equal(w.value, [1.0, 1.0])
        assert store.step == 1

    def test_zero_grad_and_collect(self):
        store = ParamStore()
        w = store.add("w", np.ones(2))
        assert np.array_equal(store.collect_grads()["w"], np.zeros(2))
        w.grad = np.ones(2)
        store.zero_grad()
        assert w.grad is None

    def test_duplicate_parameter_name_rejected(self):
        store = ParamStore()
        store.add("w", np.ones(1))
        with pytest.raises(ValueError):
            store.add("w", np.ones(1))


class TestCheckpoints:
    def test_round_trip_is_bitwise(self, tmp_path):
        store = ParamStore(seed=123)
        store.add("a", np.random.default_rng(1).standard_normal((3, 4)))
        store.add("b", np.array([1e-300, 1.0, np.pi]))
        store.step = 42
        path = str(tmp_path / "ck.params.txt")
        save_checkpoint(store, path)
        back = load_checkpoint(path)
        assert back.seed == 123 and back.step == 42
        assert set(back.params) == {"a", "b"}
        for name in ("a", "b"):
            assert np.array_equal(back.params[name].value, store.params[name].value)

    def test_unrecognized_file_rejected(self, tmp_path):
        path = str(tmp_path / "bad.txt")
        with open(path, "w") as f:
            f.write("something else\n")
        with pytest.raises(ValueError):
            load_checkpoint(path)


class TestTemperatureSchedule:
    def test_linear_descent_to_floor(self):
        cfg = GumbelConfig(start=5.0, step=0.5, floor=1.0)
        assert cfg.tau_at(1) == 5.0
        assert cfg.tau_at(2) == 4.5
        assert cfg.tau_at(9) == 1.0
        assert cfg.tau_at(50) == 1.0
