import numpy as np
import pytest

from rieif import ndgrad as ng


def max_rel_err(got, want, floor=1e-4):
    """Componentwise relative error with an absolute floor near zero."""
    worst = 0.0
    for k in want:
        a, b = np.asarray(got[k]), np.asarray(want[k])
        denom = np.maximum(floor, np.maximum(np.abs(a), np.abs(b)))
        worst = max(worst, float((np.abs(a - b) / denom).max()))
    return worst


def test_sum_of_squares_gradient():
    def program(p):
        return ng.tsum(ng.square(p["p"]))

    loss, grads = ng.evaluate_with_gradients(program, {"p": np.array([1.0, 2.0])})
    assert loss == 5.0
    np.testing.assert_allclose(grads["p"], [2.0, 4.0])


def test_softplus_gradient_at_zero():
    def program(p):
        return ng.tsum(ng.softplus(p["x"]))

    _, grads = ng.evaluate_with_gradients(program, {"x": np.array([0.0])})
    np.testing.assert_allclose(grads["x"], [0.5], atol=1e-12)


def test_masked_softmax_masked_logit_gets_zero_gradient():
    mask = np.array([1.0, 1.0, 0.0])
    const = np.array([0.3, -1.2, 0.7])

    def program(p):
        w = ng.masked_softmax(p["z"], mask)
        return ng.tsum(ng.mul(w, ng.Tensor(const)))

    z0 = np.array([0.1, -0.4, 2.0])
    _, grads = ng.evaluate_with_gradients(program, {"z": z0})
    assert grads["z"][2] == 0.0
    fd = ng.finite_difference_gradient(program, {"z": z0}, step=1e-5)
    assert max_rel_err(grads, fd) < 1e-4


def test_masked_softmax_fully_masked_row_is_zero():
    mask = np.zeros((2, 3))
    mask[0] = [1, 0, 1]

    def program(p):
        w = ng.masked_softmax(p["z"], mask)
        return ng.tsum(ng.square(w))

    z = np.arange(6.0).reshape(2, 3)
    probs = ng.masked_softmax(ng.Tensor(z), mask).data
    assert np.all(probs[1] == 0.0)
    assert probs[0, 1] == 0.0
    np.testing.assert_allclose(probs[0].sum(), 1.0, atol=1e-12)
    _, grads = ng.evaluate_with_gradients(program, {"z": z})
    fd = ng.finite_difference_gradient(program, {"z": z}, step=1e-5)
    assert max_rel_err(grads, fd) < 1e-4


def test_finite_difference_basics():
    fd = ng.finite_difference_gradient(
        lambda p: ng.tsum(ng.square(p["x"])), {"x": np.array([3.0])}, step=1e-5
    )
    np.testing.assert_allclose(fd["x"], [6.0], atol=1e-6)
    fd = ng.finite_difference_gradient(
        lambda p: ng.tsum(ng.softplus(p["x"])), {"x": np.array([0.0])}, step=1e-5
    )
    np.testing.assert_allclose(fd["x"], [0.5], atol=1e-6)


def _reduce(t, w):
    return ng.tsum(ng.mul(t, ng.Tensor(w)))


PRIMITIVE_CASES = {
    "add_broadcast": (
        {"a": (2, 3), "b": (3,)},
        lambda p: ng.add(p["a"], p["b"]),
    ),
    "mul_broadcast": (
        {"a": (2, 3), "b": (2, 1)},
        lambda p: ng.mul(p["a"], p["b"]),
    ),
    "matmul": (
        {"a": (3, 4), "b": (4, 2)},
        lambda p: ng.matmul(p["a"], p["b"]),
    ),
    "matmul_batched": (
        {"a": (2, 3, 4), "b": (4, 2)},
        lambda p: ng.matmul(p["a"], p["b"]),
    ),
    "matmul_broadcast_heads": (
        {"a": (1, 3, 4), "b": (2, 4, 2)},
        lambda p: ng.matmul(p["a"], p["b"]),
    ),
    "concat": (
        {"a": (2, 3), "b": (2, 2)},
        lambda p: ng.concat([p["a"], p["b"]], axis=-1),
    ),
    "reshape": ({"a": (2, 6)}, lambda p: ng.reshape(p["a"], (3, 4))),
    "swap_last2": ({"a": (2, 3, 4)}, lambda p: ng.swap_last2(p["a"])),
    "transpose": ({"a": (2, 3, 4)}, lambda p: ng.transpose(p["a"], (1, 0, 2))),
    "broadcast_to": ({"a": (1, 4)}, lambda p: ng.broadcast_to(p["a"], (3, 4))),
    "narrow": ({"a": (2, 6)}, lambda p: ng.narrow(p["a"], 1, 4)),
    "sum_axis": ({"a": (3, 4)}, lambda p: ng.tsum(p["a"], axis=0)),
    "mean_axis": ({"a": (3, 4)}, lambda p: ng.tmean(p["a"], axis=1)),
    "square": ({"a": (3, 3)}, lambda p: ng.square(p["a"])),
    "sqrt_pos": ({"a": (2, 3)}, lambda p: ng.sqrt(ng.add(ng.square(p["a"]), ng.Tensor(np.ones((2, 3)))))),
    "div_eps": ({"a": (2, 3), "b": (2, 3)}, lambda p: ng.div_eps(p["a"], ng.square(p["b"]), 1e-8)),
    "softplus": ({"a": (3, 4)}, lambda p: ng.softplus(p["a"])),
    "sigmoid": ({"a": (3, 4)}, lambda p: ng.sigmoid(p["a"])),
    "tanh": ({"a": (3, 4)}, lambda p: ng.tanh(p["a"])),
    "l2_normalize": ({"a": (3, 5)}, lambda p: ng.l2_normalize(p["a"])),
    "scale": ({"a": (2, 2)}, lambda p: ng.scale(p["a"], -1.7)),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVE_CASES))
def test_primitive_gradients_match_finite_differences(name):
    shapes, build = PRIMITIVE_CASES[name]
    rng = np.random.default_rng(hash(name) % 2**32)
    for trial in range(3):
        params = {k: rng.normal(size=s) for k, s in shapes.items()}
        out_shape = build({k: ng.Tensor(v) for k, v in params.items()}).shape
        w = rng.normal(size=out_shape)

        def program(p):
            return _reduce(build(p), w)

        _, grads = ng.evaluate_with_gradients(program, params)
        fd = ng.finite_difference_gradient(program, params, step=1e-5)
        assert max_rel_err(grads, fd) < 1e-4, f"{name} trial {trial}"


def test_masked_softmax_gradient_matches_fd():
    rng = np.random.default_rng(7)
    mask = np.array([[1.0, 1.0, 0.0, 1.0], [1.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 0.0]])
    for _ in range(3):
        z = rng.normal(size=(2, 3, 4))
        w = rng.normal(size=(2, 3, 4))

        def program(p):
            return _reduce(ng.masked_softmax(p["z"], mask), w)

        _, grads = ng.evaluate_with_gradients(program, {"z": z})
        fd = ng.finite_difference_gradient(program, {"z": z}, step=1e-5)
        assert max_rel_err(grads, fd) < 1e-4


def test_softplus_non_expansive():
    rng = np.random.default_rng(123)
    a = rng.normal(scale=5.0, size=1000)
    b = rng.normal(scale=5.0, size=1000)
    from rieif import kernels

    gap = np.abs(kernels.softplus(a) - kernels.softplus(b))
    assert np.all(gap <= np.abs(a - b) + 1e-12)


def test_shape_mismatch_reports_primitive_and_shapes():
    with pytest.raises(ng.ShapeError) as exc:
        ng.matmul(ng.Tensor(np.ones((2, 3))), ng.Tensor(np.ones((4, 2))))
    assert exc.value.op == "matmul"
    assert ((2, 3), (4, 2)) == exc.value.shapes
    with pytest.raises(ng.ShapeError):
        ng.add(ng.Tensor(np.ones((2, 3))), ng.Tensor(np.ones((4,))))


def test_non_scalar_program_output_rejected():
    with pytest.raises(ng.ShapeError):
        ng.evaluate_with_gradients(lambda p: ng.square(p["x"]), {"x": np.ones(3)})


def test_unused_parameter_gets_zero_gradient():
    _, grads = ng.evaluate_with_gradients(
        lambda p: ng.tsum(ng.square(p["x"])),
        {"x": np.ones(2), "unused": np.ones((2, 2))},
    )
    np.testing.assert_array_equal(grads["unused"], np.zeros((2, 2)))


def test_determinism_bit_identical():
    rng = np.random.default_rng(0)
    params = {"a": rng.normal(size=(4, 4)), "b": rng.normal(size=(4, 2))}
    w = rng.normal(size=(4, 2))

    def program(p):
        h = ng.softplus(ng.matmul(p["a"], p["b"]))
        return _reduce(ng.l2_normalize(h), w)

    l1, g1 = ng.evaluate_with_gradients(program, params)
    l2, g2 = ng.evaluate_with_gradients(program, params)
    assert l1 == l2
    for k in g1:
        assert np.array_equal(g1[k], g2[k])


def test_adamw_first_step_is_signed_lr():
    params = {"p": np.array([1.0, -2.0])}
    grads = {"p": np.array([0.3, -0.7])}
    state = ng.adamw_init(params, learning_rate=1e-3, weight_decay=0.0)
    new, _ = ng.adamw_step(state, params, grads)
    expected = params["p"] - 1e-3 * grads["p"] / (np.abs(grads["p"]) + 1e-8)
    np.testing.assert_allclose(new["p"], expected, rtol=1e-12)


def test_adamw_zero_gradient_cases():
    params = {"p": np.array([1.0])}
    zero = {"p": np.zeros(1)}
    state = ng.adamw_init(params, learning_rate=1e-3, weight_decay=0.0)
    new, _ = ng.adamw_step(state, params, zero)
    np.testing.assert_array_equal(new["p"], params["p"])

    state = ng.adamw_init(params, learning_rate=1e-3, weight_decay=1e-5)
    new, _ = ng.adamw_step(state, params, zero)
    np.testing.assert_allclose(new["p"], [1.0 - 1e-8], rtol=1e-12)


def test_adamw_step_count_increments():
    params = {"p": np.zeros(2)}
    state = ng.adamw_init(params, learning_rate=1e-3)
    for expected in (1, 2, 3):
        params, state = ng.adamw_step(state, params, {"p": np.ones(2)})
        assert state.step_count == expected


def test_cosine_lr_endpoints_and_midpoint():
    assert ng.cosine_lr(0.1, 0, 10) == pytest.approx(0.1)
    assert ng.cosine_lr(0.1, 10, 10) == pytest.approx(0.0, abs=1e-18)
    assert ng.cosine_lr(0.1, 5, 10) == pytest.approx(0.05)
    lrs = [ng.cosine_lr(0.1, e, 10) for e in range(11)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def test_clip_grad_norm():
    grads = {"a": np.array([1.2, 0.0]), "b": np.array([1.6])}  # norm 2
    clipped = ng.clip_grad_norm(grads, 1.0)
    assert ng.global_grad_norm(clipped) <= 1.0 + 1e-9
    np.testing.assert_allclose(clipped["a"], [0.6, 0.0])

    small = {"a": np.array([0.3, 0.4])}  # norm 0.5
    assert ng.clip_grad_norm(small, 1.0) is small

    exact = {"a": np.array([3.0, 4.0])}  # norm exactly 5
    assert ng.clip_grad_norm(exact, 5.0) is exact
