import math

import numpy as np
import pytest

from qamatch import numerics as nx
from qamatch.numerics import Adam, Parameter, Tensor
from qamatch.numerics.gradcheck import numeric_grad
from qamatch.numerics.rng import RandomSource


def _rel(a, n):
    return np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-6))


def _check_op(build, shapes, draws=50, seed=0, low=-1.5, high=1.5):
    """Gradient of sum(r * op(inputs)) w.r.t. every input, against central differences."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(draws):
        xs = [Parameter(rng.uniform(low, high, size=s), f"x{k}") for k, s in enumerate(shapes)]
        out_shape = build(*xs).shape
        r = rng.standard_normal(out_shape)

        def f():
            return float(np.sum(build(*xs).value * r))

        for x in xs:
            x.zero_grad()
        nx.tsum(nx.mul(build(*xs), Tensor(r))).backward()
        for x in xs:
            worst = max(worst, _rel(x.grad, numeric_grad(f, x.value)))
    assert worst < 1e-4, worst


OPS = {
    "add": (lambda a, b: nx.add(a, b), [(3, 4), (4,)]),
    "sub": (lambda a, b: nx.sub(a, b), [(3, 4), (3, 1)]),
    "mul": (lambda a, b: nx.mul(a, b), [(2, 3), (2, 3)]),
    "matmul": (lambda a, b: nx.matmul(a, b), [(3, 4), (4, 2)]),
    "matmul_batched": (lambda a, b: nx.matmul(a, b), [(2, 3, 4), (2, 4, 2)]),
    "matmul_3d_2d": (lambda a, b: nx.matmul(a, b), [(2, 3, 4), (4, 5)]),
    "concat": (lambda a, b: nx.concat([a, b], axis=-1), [(2, 3), (2, 2)]),
    "tanh": (lambda a: nx.tanh(a), [(3, 3)]),
    "sigmoid": (lambda a: nx.sigmoid(a), [(3, 3)]),
    "softmax": (lambda a: nx.softmax(a), [(2, 5)]),
    "masked_softmax": (lambda a: nx.masked_softmax(a, np.array([[1, 1, 0, 1], [0, 0, 0, 0]])), [(2, 4)]),
    "take": (lambda a: nx.take(a, np.array([2, 0, 2])), [(3, 2)]),
    "index": (lambda a: nx.index(a, (slice(None), 1)), [(3, 4)]),
    "reshape": (lambda a: nx.reshape(a, (6,)), [(2, 3)]),
    "mean": (lambda a: nx.mean(a), [(3, 2)]),
    "cross_entropy": (lambda a: nx.cross_entropy(a, np.array([1, 0, 1])), [(3, 2)]),
    "lstm_cell": (lambda x, h, c, W, b: nx.concat(list(nx.lstm_cell(x, h, c, W, b))), [(2, 3), (2, 2), (2, 2), (5, 8), (8,)]),
    "lstm_step": (
        lambda x, h, c, W, b: nx.lstm_step(x, h, c, W, b, np.array([1.0, 0.0])),
        [(2, 3), (2, 2), (2, 2), (5, 8), (8,)],
    ),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_primitive_gradients(name):
    build, shapes = OPS[name]
    _check_op(build, shapes)


def test_lstm_sequence_gradient():
    mask = np.array([[1, 1, 1], [1, 0, 0]], dtype=float)
    _check_op(lambda x, W, b: nx.lstm_sequence(x, mask, W, b), [(2, 3, 2), (5, 12), (12,)], draws=20)


def test_backward_rejects_non_scalar():
    x = Parameter(np.ones(3), "x")
    with pytest.raises(ValueError):
        nx.mul(x, Tensor(np.ones(3))).backward()


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(ValueError, match=r"\(3, 4\).*\(5, 2\)"):
        nx.matmul(Tensor(np.ones((3, 4))), Tensor(np.ones((5, 2))))


def test_sum_wx_gradient_is_outer_product():
    W = Parameter(np.arange(6.0).reshape(2, 3), "W")
    x = np.array([1.0, -2.0, 0.5])
    nx.tsum(nx.matmul(W, Tensor(x[:, None]))).backward()
    np.testing.assert_array_equal(W.grad, np.outer(np.ones(2), x))


def test_unused_parameter_gradient_is_zero():
    a, b = Parameter(np.ones(2), "a"), Parameter(np.ones(2), "b")
    nx.tsum(nx.mul(a, a)).backward()
    np.testing.assert_array_equal(b.grad, np.zeros(2))


def test_softmax_examples():
    np.testing.assert_allclose(nx.softmax(np.array([0.0, 0.0])).value, [0.5, 0.5])
    rng = np.random.default_rng(1)
    for _ in range(100):
        y = nx.softmax(rng.normal(0, 5, size=7)).value
        assert np.all((y > 0) & (y < 1))
        assert abs(y.sum() - 1) < 1e-12


def test_cross_entropy_ln2():
    assert nx.cross_entropy(np.array([0.0, 0.0]), 0).value == pytest.approx(0.693147, abs=1e-6)
    assert float(nx.cross_entropy(np.array([0.0, 0.0]), 0).value) == pytest.approx(math.log(2), abs=1e-15)


def test_dropout_eval_identity_and_expectation():
    x = Tensor(np.arange(5.0))
    assert nx.dropout(x, 0.3, training=False) is x
    rng = RandomSource(3, "dropout")
    out = nx.dropout(Tensor(np.ones(100_000)), 0.3, True, rng).value
    assert abs(out.mean() - 1.0) < 0.01
    assert set(np.unique(out)) == {0.0, 1 / 0.7}
    assert abs((out == 0).mean() - 0.3) < 0.01
    with pytest.raises(ValueError):
        nx.dropout(x, 1.0, True, rng)


def test_dropout_repeated_applications_mean():
    rng = RandomSource(5, "dropout")
    acc = np.zeros(4)
    n = 100_000
    for _ in range(n // 1000):
        acc += nx.dropout(Tensor(np.ones((1000, 4))), 0.3, True, rng).value.sum(axis=0)
    np.testing.assert_allclose(acc / n, 1.0, rtol=0.01)


def _sig(v):
    return 1.0 / (1.0 + math.exp(-v))


def test_lstm_cell_hand_computed_two_units():
    # 1-d input, 2 hidden units; W rows are [x, h1, h2], columns [i1 i2 f1 f2 o1 o2 g1 g2]
    W = np.array(
        [
            [0.1, -0.2, 0.3, 0.4, -0.5, 0.6, 0.7, -0.8],
            [0.2, 0.1, -0.1, 0.0, 0.3, 0.2, -0.4, 0.5],
            [-0.3, 0.2, 0.1, -0.2, 0.0, 0.1, 0.2, 0.3],
        ]
    )
    b = np.array([0.0, 0.1, 1.0, 1.0, 0.0, -0.1, 0.05, 0.0])
    x, h0, c0 = [0.5], [0.2, -0.1], [0.3, 0.4]
    hh, cc = [], []
    for u in range(2):
        z = [b[k] + x[0] * W[0, k] + h0[0] * W[1, k] + h0[1] * W[2, k] for k in range(8)]
        i, f, o, g = _sig(z[u]), _sig(z[2 + u]), _sig(z[4 + u]), math.tanh(z[6 + u])
        c = f * c0[u] + i * g
        cc.append(c)
        hh.append(o * math.tanh(c))
    h, c = nx.lstm_cell(np.array([x]), np.array([h0]), np.array([c0]), Tensor(W), Tensor(b))
    np.testing.assert_allclose(h.value[0], hh, atol=1e-14)
    np.testing.assert_allclose(c.value[0], cc, atol=1e-14)


def test_lstm_zero_weights_give_zero_h():
    rng = np.random.default_rng(0)
    h, _ = nx.lstm_cell(rng.normal(size=(1, 3)), np.zeros((1, 2)), np.zeros((1, 2)), Tensor(np.zeros((5, 8))), Tensor(np.zeros(8)))
    np.testing.assert_array_equal(h.value, 0.0)


def test_fused_step_matches_composed_cell():
    rng = np.random.default_rng(2)
    x, h, c = rng.normal(size=(3, 4)), rng.normal(size=(3, 2)), rng.normal(size=(3, 2))
    W, b = Tensor(rng.normal(size=(6, 8))), Tensor(rng.normal(size=8))
    hc, cc = nx.lstm_cell(x, h, c, W, b)
    s = nx.lstm_step(x, h, c, W, b)
    np.testing.assert_allclose(s.value[0], hc.value, atol=1e-13)
    np.testing.assert_allclose(s.value[1], cc.value, atol=1e-13)


def test_sequence_of_length_one_is_one_cell():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(2, 1, 3))
    W, b = Tensor(rng.normal(size=(5, 8))), Tensor(rng.normal(size=8))
    out = nx.lstm_sequence(x, np.ones((2, 1)), W, b)
    h, _ = nx.lstm_cell(x[:, 0], np.zeros((2, 2)), np.zeros((2, 2)), W, b)
    np.testing.assert_allclose(out.value[:, 0], h.value, atol=1e-13)


def test_sequence_carries_state_over_padding():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(1, 4, 3))
    W, b = Tensor(rng.normal(size=(5, 8))), Tensor(rng.normal(size=8))
    padded = nx.lstm_sequence(x, np.array([[1, 1, 0, 0.0]]), W, b).value
    short = nx.lstm_sequence(x[:, :2], np.ones((1, 2)), W, b).value
    np.testing.assert_allclose(padded[0, -1], short[0, -1], atol=1e-14)


def test_adam_first_step_magnitude():
    p = Parameter(np.array([0.0]), "w")
    opt = Adam([p])
    p.grad[...] = 1.0
    opt.step(0.001)
    assert p.value[0] == pytest.approx(-0.001 / (1 + 1e-8), abs=1e-15)
    assert opt.state.step == 1


def test_adam_zero_grad_leaves_param():
    p = Parameter(np.array([0.25, -1.0]), "w")
    opt = Adam([p])
    opt.step(0.001)
    np.testing.assert_array_equal(p.value, [0.25, -1.0])


def test_adam_symmetry_and_missing_grad():
    a, b = Parameter(np.array([1.0]), "a"), Parameter(np.array([1.0]), "b")
    opt = Adam([a, b])
    for g in (0.3, -0.7, 2.0):
        a.grad[...] = g
        b.grad[...] = g
        opt.step(0.01)
    np.testing.assert_array_equal(a.value, b.value)
    a.grad = None
    with pytest.raises(ValueError, match="no gradient"):
        opt.step(0.01)


def test_adam_matches_reference_loop():
    rng = np.random.default_rng(9)
    p = Parameter(rng.normal(size=3), "w")
    ref = p.value.copy()
    m = np.zeros(3)
    v = np.zeros(3)
    opt = Adam([p])
    for t in range(1, 6):
        g = rng.normal(size=3)
        p.grad[...] = g
        opt.step(0.01)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    np.testing.assert_allclose(p.value, ref, rtol=1e-13)


def test_rng_determinism_and_streams():
    a, b = RandomSource(11, "x"), RandomSource(11, "x")
    np.testing.assert_array_equal(a.random(5), b.random(5))
    assert not np.array_equal(RandomSource(11, "x").random(5), RandomSource(11, "y").random(5))
    np.testing.assert_array_equal(a.child("k").random(3), b.child("k").random(3))


def test_checkpoint_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    params = {"W": rng.normal(size=(3, 4)), "b": np.array([1e-300, -0.0, np.pi])}
    header = {"variant": "HDM", "dims": [3, 4]}
    path = tmp_path / "c.npz"
    nx.save_checkpoint(path, header, params, {"vocab": np.array(["a", "b"])})
    h, p, e = nx.load_checkpoint(path)
    assert h == header
    for k in params:
        assert p[k].tobytes() == params[k].tobytes()
    assert list(e["vocab"]) == ["a", "b"]
