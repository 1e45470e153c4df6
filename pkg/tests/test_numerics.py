import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import central_difference, direct_autocorrelation, direct_cross_correlation, naive_dft, relative_error
from slicecast.numerics import (
    GraphError,
    ShapeError,
    Tensor,
    XorShift64Star,
    autocorrelation,
    concat,
    correlation_scores,
    cross_correlation,
    delay_aggregate,
    gelu,
    irfft,
    layer_norm,
    mse_loss,
    no_grad,
    rfft,
    roll,
    set_debug,
    softmax,
    take_along_axis,
    tensor,
)


def gradcheck(build, *arrays_, tol=1e-4):
    """Compare autodiff gradients of scalar ``build(*tensors)`` with central differences."""
    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays_]
    out = build(*leaves)
    out.backward()
    for leaf, arr in zip(leaves, arrays_):
        work = arr.copy()

        def f():
            ts = [Tensor(a.copy()) if a is not arr else Tensor(work.copy()) for a in arrays_]
            with no_grad():
                return build(*ts).item()

        num = central_difference(f, work)
        assert relative_error(leaf.grad, num) < tol, (leaf.grad, num)


rng = np.random.default_rng(1234)


# -- core op examples --------------------------------------------------------


def test_matmul_identity():
    a = tensor([[1, 2], [3, 4]])
    assert np.array_equal((a @ tensor(np.eye(2))).data, a.data)


def test_softmax_symmetric():
    assert np.allclose(softmax(tensor([0.0, 0.0])).data, [0.5, 0.5])


def test_roll_definition():
    assert roll(tensor([1, 2, 3, 4]), 1).data.tolist() == [4, 1, 2, 3]


def test_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        tensor(np.ones((2, 3))) @ tensor(np.ones((4, 5)))
    with pytest.raises(ShapeError, match=r"\(2,\).*\(3,\)"):
        tensor([1, 2]) + tensor([1, 2, 3])


def test_square_gradient():
    x = tensor(3.0, requires_grad=True)
    (x * x).backward()
    assert x.grad == pytest.approx(6.0)


def test_backward_twice_raises():
    x = tensor(2.0, requires_grad=True)
    y = x * x
    y.backward()
    with pytest.raises(GraphError):
        y.backward()


def test_fan_out_accumulates():
    x = tensor(2.0, requires_grad=True)
    y = x * x + x * 3.0 + x
    y.backward()
    assert x.grad == pytest.approx(2 * 2.0 + 3.0 + 1.0)


def test_no_grad_records_nothing():
    x = tensor([1.0, 2.0], requires_grad=True)
    with no_grad():
        y = (x * 2).sum()
    assert not y.requires_grad


def test_debug_mode_flags_non_finite():
    set_debug(True)
    try:
        with pytest.raises(FloatingPointError):
            tensor([0.0]).log()
    finally:
        set_debug(False)


def test_sum_matmul_gradient_vs_finite_differences():
    w = rng.standard_normal((3, 4))
    v = rng.standard_normal((4, 1))
    gradcheck(lambda W, V: (W @ V).sum(), w, v)


@pytest.mark.parametrize(
    "name,build,shapes",
    [
        ("add_broadcast", lambda a, b: ((a + b) * a).sum(), [(3, 4), (4,)]),
        ("sub", lambda a, b: ((a - b) ** 2).sum(), [(2, 3), (2, 3)]),
        ("div", lambda a, b: (a / (b * b + 1.0)).sum(), [(2, 3), (1, 3)]),
        ("batched_matmul", lambda a, b: ((a @ b) ** 2).mean(), [(2, 3, 4), (4, 5)]),
        ("softmax", lambda a, b: (softmax(a, axis=-1) * b).sum(), [(3, 5), (3, 5)]),
        ("layer_norm", lambda a, g, b: (layer_norm(a, g, b) * layer_norm(a)).sum(), [(4, 6), (6,), (6,)]),
        ("mean_axis", lambda a: (a.mean(axis=1) ** 2).sum(), [(3, 4, 2)]),
        ("concat", lambda a, b: (concat([a, b], axis=1) ** 2).sum(), [(2, 3), (2, 2)]),
        ("slice", lambda a: (a[:, 1:3] * a[:, 0:2]).sum(), [(3, 4)]),
        ("roll", lambda a, b: (roll(a, 2, axis=0) * b).sum(), [(5, 3), (5, 3)]),
        ("gelu", lambda a: gelu(a).sum(), [(4, 3)]),
        ("tanh_exp", lambda a: (a.tanh() * a.exp()).sum(), [(3,)]),
        ("transpose_reshape", lambda a: (a.transpose(1, 0, 2).reshape(4, 6) ** 2).sum(), [(3, 4, 2)]),
        ("mse", lambda a, b: mse_loss(a * b, np.ones((3, 2))), [(3, 2), (3, 2)]),
    ],
)
def test_op_gradients(name, build, shapes):
    arrays_ = [rng.standard_normal(s) for s in shapes]
    gradcheck(build, *arrays_)


def test_take_along_axis_gradient_with_duplicates():
    a = rng.standard_normal((2, 5))
    idx = np.array([[0, 0, 3], [4, 1, 1]])
    gradcheck(lambda x: (take_along_axis(x, idx, axis=1) ** 2).sum(), a)


# -- FFT ------------------------------------------------------------------------


def test_rfft_constant():
    out = rfft([2.5, 2.5, 2.5, 2.5])
    assert out[0] == pytest.approx(10.0)
    assert np.allclose(out[1:], 0)


def test_rfft_impulse():
    assert np.allclose(rfft([1.0, 0, 0, 0, 0, 0]), np.ones(4))


def test_rfft_rejects_short():
    with pytest.raises(ValueError):
        rfft([1.0])


@pytest.mark.parametrize("n", [128, 37, 96])
def test_rfft_matches_naive_dft(n):
    x = rng.standard_normal(n)
    ref = naive_dft(x)
    got = rfft(x)
    assert np.max(np.abs(got - ref)) / np.max(np.abs(ref)) < 1e-9


@given(arrays(np.float64, st.integers(2, 64), elements=st.floats(-1e3, 1e3)))
@settings(max_examples=50, deadline=None)
def test_irfft_roundtrip(x):
    back = irfft(rfft(x), len(x))
    scale = max(np.max(np.abs(x)), 1e-300)
    assert np.max(np.abs(back - x)) <= 1e-9 * scale + 1e-300


def test_fft_linearity_and_parseval():
    x, y = rng.standard_normal(50), rng.standard_normal(50)
    assert np.allclose(rfft(2 * x + 3 * y), 2 * rfft(x) + 3 * rfft(y), rtol=1e-12, atol=1e-12)
    full = np.fft.fft(x)  # full spectrum for Parseval only
    assert np.sum(np.abs(full) ** 2) / len(x) == pytest.approx(np.sum(x**2), rel=1e-9)
    half = rfft(x)
    energy = (np.abs(half[0]) ** 2 + 2 * np.sum(np.abs(half[1:-1]) ** 2) + np.abs(half[-1]) ** 2) / len(x)
    assert energy == pytest.approx(np.sum(x**2), rel=1e-9)


# -- autocorrelation -----------------------------------------------------------------


def test_autocorrelation_constant():
    assert np.allclose(autocorrelation(np.full(10, 3.0)), 9.0)


def test_autocorrelation_period_four():
    x = np.tile([1.0, 0.2, -0.5, 0.1], 8)
    r = autocorrelation(x)
    ref = direct_autocorrelation(x)
    assert 1 + int(np.argmax(r[1 : len(x) // 2 + 1])) == 1 + int(np.argmax(ref[1 : len(x) // 2 + 1])) == 4


@pytest.mark.parametrize("n", [96, 17])
def test_autocorrelation_matches_direct(n):
    x = rng.standard_normal(n)
    ref = direct_autocorrelation(x)
    assert np.max(np.abs(autocorrelation(x) - ref)) / np.max(np.abs(ref)) < 1e-9


@given(st.integers(0, 40), st.integers(0, 2**31))
@settings(max_examples=30, deadline=None)
def test_autocorrelation_shift_invariant(shift, seed):
    x = np.random.default_rng(seed).standard_normal(41)
    assert np.allclose(autocorrelation(np.roll(x, shift)), autocorrelation(x), rtol=1e-9, atol=1e-12)


def test_cross_correlation_matches_direct():
    q, k = rng.standard_normal(30), rng.standard_normal(30)
    assert np.allclose(cross_correlation(q, k), direct_cross_correlation(q, k), atol=1e-12)


def test_correlation_scores_gradient():
    q = rng.standard_normal((2, 9, 3))
    k = rng.standard_normal((2, 9, 3))
    w = rng.standard_normal((2, 9))
    gradcheck(lambda a, b: (correlation_scores(a, b) * w).sum(), q, k)


def test_correlation_scores_value():
    q = rng.standard_normal((7, 2))
    k = rng.standard_normal((7, 2))
    got = correlation_scores(tensor(q), tensor(k)).data
    ref = (direct_cross_correlation(q[:, 0], k[:, 0]) + direct_cross_correlation(q[:, 1], k[:, 1])) / 2
    assert np.allclose(got, ref, atol=1e-12)


def test_delay_aggregate_value_and_gradient():
    v = rng.standard_normal((2, 6, 3))
    w = rng.standard_normal((2, 2))
    delays = np.array([[1, 4], [0, 5]])
    out = delay_aggregate(tensor(v), tensor(w), delays).data
    for b in range(2):
        ref = sum(w[b, i] * np.roll(v[b], -delays[b, i], axis=0) for i in range(2))
        assert np.allclose(out[b], ref)
    probe = rng.standard_normal((2, 6, 3))
    gradcheck(lambda a, c: (delay_aggregate(a, c, delays) * probe).sum(), v, w)


# -- RNG -------------------------------------------------------------------------------------


def test_xorshift_reproducible():
    a, b = XorShift64Star(7), XorShift64Star(7)
    assert [a.next_u64() for _ in range(5)] == [b.next_u64() for _ in range(5)]
    assert XorShift64Star(7).next_u64() != XorShift64Star(8).next_u64()


def test_xorshift_reference_step():
    # xorshift64* step worked by hand from state 1: x ^= x>>12; x ^= x<<25; x ^= x>>27
    g = XorShift64Star.__new__(XorShift64Star)
    g._state = 1
    x = 1
    x ^= x >> 12
    x ^= (x << 25) & (2**64 - 1)
    x ^= x >> 27
    assert g.next_u64() == (x * 0x2545F4914F6CDD1D) % 2**64


def test_xorshift_distributions():
    g = XorShift64Star(3)
    u = g.uniform(0.0, 1.0, (4000,))
    assert 0 <= u.min() and u.max() < 1 and abs(u.mean() - 0.5) < 0.03
    z = g.normal((4000,))
    assert abs(z.mean()) < 0.06 and abs(z.std() - 1) < 0.06
    p = g.permutation(20)
    assert sorted(p.tolist()) == list(range(20))
