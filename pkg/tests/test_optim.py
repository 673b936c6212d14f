import numpy as np
import pytest

from lscnn.errors import ShapeError
from lscnn.optim import Adam, AdamState, adam_step
from lscnn.tensor import make_rng


def test_first_step_is_sign_sized():
    for g in (1e-3, 0.5, -20.0):
        w = np.array([1.0])
        st = AdamState.for_param(w, lr=1e-4)
        w2, st = adam_step(w, np.array([g]), st)
        expected = -1e-4 * g / (abs(g) + 1e-8)
        np.testing.assert_allclose(w2 - w, [expected], rtol=1e-9)
        assert st.t == 1


def test_zero_gradient_is_fixed_point():
    w = make_rng(0).standard_normal(5)
    st = AdamState.for_param(w)
    for _ in range(10):
        w2, st = adam_step(w, np.zeros(5), st)
        np.testing.assert_array_equal(w2, w)
    assert not st.m.any() and not st.v.any() and st.t == 10


def _reference_adam(w, steps, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Scalar recurrence written out directly."""
    m = v = 0.0
    trace = [w]
    for t in range(1, steps + 1):
        g = 2 * (w - 3)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w = w - lr * (m / (1 - b1 ** t)) / ((v / (1 - b2 ** t)) ** 0.5 + eps)
        trace.append(w)
    return trace


def test_quadratic_against_scalar_recurrence():
    w = np.array([0.0])
    st = AdamState.for_param(w, lr=0.1)
    trace = [0.0]
    for _ in range(100):
        w, st = adam_step(w, 2 * (w - 3), st)
        trace.append(float(w[0]))
    ref = _reference_adam(0.0, 100, 0.1)
    np.testing.assert_allclose(trace, ref, rtol=1e-12, atol=1e-12)
    assert abs(trace[-1] - 3) < abs(trace[0] - 3)
    # distance to the optimum shrinks over the first phase of the run
    dist = np.abs(np.array(trace) - 3)
    assert np.all(np.diff(dist[:25]) < 0)


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        adam_step(np.zeros(3), np.zeros(4), AdamState.for_param(np.zeros(3)))


def test_disjoint_tensors_order_independent():
    rng = make_rng(1)
    a0, b0 = rng.standard_normal(4), rng.standard_normal((2, 2))
    ga = [rng.standard_normal(4) for _ in range(5)]
    gb = [rng.standard_normal((2, 2)) for _ in range(5)]

    def run(order):
        p = {"a": a0.copy(), "b": b0.copy()}
        opt = Adam(lr=1e-2)
        for i in range(5):
            grads = {"a": ga[i], "b": gb[i]}
            opt.step(p, {k: grads[k] for k in order})
        return p

    p1, p2 = run("ab"), run("ba")
    np.testing.assert_array_equal(p1["a"], p2["a"])
    np.testing.assert_array_equal(p1["b"], p2["b"])


def test_update_bounded_by_lr_over_one_minus_beta1():
    rng = make_rng(7)
    w = np.zeros(50)
    st = AdamState.for_param(w)
    bound = 1e-4 / (1 - 0.9)
    for i in range(300):
        scale = 10.0 ** rng.integers(-6, 6)
        g = rng.standard_normal(50) * scale
        if i % 17 == 0:
            g[:] = 0
        w2, st = adam_step(w, g, st)
        assert np.all(np.abs(w2 - w) <= bound * (1 + 1e-9))
        w = w2
