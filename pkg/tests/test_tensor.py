import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from finder import tensor as T
from finder.gradcheck import numeric_grad, relative_error
from finder.optim import Adam, AdamState, adam_step, clip_gradients, global_grad_norm
from finder.tensor import Tensor


def leaf(a):
    return Tensor(a, requires_grad=True)


def test_matmul_identity(rng):
    a = rng.normal(size=(2, 5))
    out = T.matmul(Tensor(np.eye(2)), Tensor(a))
    np.testing.assert_allclose(out.data, a, rtol=1e-6)


def test_segment_mean_example():
    out = T.segment_mean(Tensor([[1.0, 3.0], [5.0, 7.0]]), [0, 0])
    np.testing.assert_array_equal(out.data, [[3.0, 5.0]])


def test_segment_mean_empty_segment_is_zero():
    out = T.segment_mean(Tensor([[2.0], [4.0]]), [0, 0], num_segments=3)
    np.testing.assert_array_equal(out.data, [[3.0], [0.0], [0.0]])


def test_conv1d_zero_signal():
    w = Tensor(np.random.default_rng(0).normal(size=(3, 2, 4)))
    out = T.conv1d(Tensor(np.zeros((2, 7, 2))), w)
    assert out.shape == (2, 7, 4)
    assert not out.data.any()


def test_conv1d_matches_direct_sum(f64, rng):
    x = rng.normal(size=(2, 6, 3))
    w = rng.normal(size=(3, 3, 4))
    out = T.conv1d(Tensor(x), Tensor(w)).data
    xp = np.pad(x, ((0, 0), (1, 1), (0, 0)))
    ref = np.zeros((2, 6, 4))
    for b in range(2):
        for p in range(6):
            for t in range(3):
                ref[b, p] += xp[b, p + t] @ w[t]
    np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)


def test_square_derivative():
    x = leaf(3.0)
    T.backward(T.mul(x, x))
    assert x.grad == pytest.approx(6.0)


def test_relu_inactive_derivative():
    x = leaf(-1.0)
    T.backward(T.relu(x))
    assert x.grad == 0.0


def test_relu_subgradient_at_zero():
    x = leaf(0.0)
    T.backward(T.relu(x))
    assert x.grad == 0.0


def test_backward_accumulates():
    x = leaf(2.0)
    y = T.mul(x, x)
    T.backward(y)
    T.backward(y)
    assert x.grad == pytest.approx(8.0)
    x.zero_grad()
    T.backward(y)
    assert x.grad == pytest.approx(4.0)


def test_backward_rejects_non_scalar():
    x = leaf(np.ones(3))
    with pytest.raises(T.ShapeError):
        T.backward(T.mul(x, 2.0))


def test_shape_error_names_op_and_shapes():
    with pytest.raises(T.ShapeError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(T.ShapeError, match=r"add.*\(2, 3\).*\(4,\)"):
        T.add(Tensor(np.ones((2, 3))), Tensor(np.ones(4)))


def test_strict_checks_reject_nonfinite():
    bad = Tensor([1.0, np.nan])
    T.exp(bad)  # permitted by default
    with T.strict_checks():
        with pytest.raises(T.NonFiniteError):
            T.exp(bad)


def test_default_precision_is_32_bit():
    assert Tensor([1.0]).dtype == np.float32
    with T.precision(np.float64):
        assert Tensor([1.0]).dtype == np.float64
        assert T.mul(Tensor([1.0]), 0.5).dtype == np.float64


def test_broadcast_trailing_singleton(f64, rng):
    a = leaf(rng.normal(size=(4, 3)))
    b = leaf(rng.normal(size=(4, 1)))
    T.backward(T.sum(T.mul(a, b)))
    np.testing.assert_allclose(b.grad[:, 0], a.data.sum(axis=1))
    assert a.grad.shape == (4, 3)


def test_every_reachable_parameter_gets_grad(rng):
    ps = [leaf(rng.normal(size=(3, 3))) for _ in range(3)]
    unused = leaf(np.ones(2))
    x = Tensor(rng.normal(size=(2, 3)))
    for p in ps:
        x = T.relu(T.matmul(x, p))
    T.backward(T.sum(x))
    assert all(p.grad is not None and p.grad.shape == p.shape for p in ps)
    assert unused.grad is None


def test_tape_visits_each_op_once(rng):
    x = leaf(rng.normal(size=(3,)))
    y = T.mul(x, x)
    z = T.add(y, y)  # y used twice
    loss = T.sum(T.exp(z))
    tape = T.collect_tape(loss)
    seqs = [op.seq for _, op in tape]
    assert seqs == sorted(seqs) and len(set(seqs)) == len(seqs) == 4


# --- finite-difference adjoints for every primitive -------------------------

def _fd_check(build, inputs, tol=1e-6):
    weights = np.random.default_rng(99).normal(size=build().shape)

    def f():
        return T.sum(T.mul(build(), Tensor(weights)))

    for p in inputs:
        p.grad = None
    T.backward(f())
    for p in inputs:
        err = relative_error(p.grad, numeric_grad(f, p, 1e-6), floor=1e-6).max()
        assert err < tol, (p.name, err)


PRIMITIVES = {
    "matmul": lambda r: ([r.normal(size=(3, 4)), r.normal(size=(4, 2))], lambda a, b: T.matmul(a, b)),
    "add": lambda r: ([r.normal(size=(3, 4)), r.normal(size=(4,))], lambda a, b: T.add(a, b)),
    "sub": lambda r: ([r.normal(size=(3, 1)), r.normal(size=(3, 4))], lambda a, b: T.sub(a, b)),
    "mul": lambda r: ([r.normal(size=(3, 4)), r.normal(size=(3, 1))], lambda a, b: T.mul(a, b)),
    "div": lambda r: ([r.normal(size=(3, 4)), r.uniform(1, 2, size=(3, 4))], lambda a, b: T.div(a, b)),
    "scalar": lambda r: ([r.normal(size=(5,))], lambda a: T.sub(2.5, T.mul(a, 1.7))),
    "neg": lambda r: ([r.normal(size=(5,))], lambda a: T.neg(a)),
    "exp": lambda r: ([r.normal(size=(3, 2))], lambda a: T.exp(a)),
    "relu": lambda r: ([r.choice([-1, 1], size=(4, 3)) * r.uniform(0.1, 1, size=(4, 3))], lambda a: T.relu(a)),
    "sum_axis": lambda r: ([r.normal(size=(3, 4))], lambda a: T.sum(a, axis=1)),
    "mean_axis": lambda r: ([r.normal(size=(3, 4))], lambda a: T.mean(a, axis=0)),
    "mean_all": lambda r: ([r.normal(size=(3, 4))], lambda a: T.reshape(T.mean(a), (1,))),
    "concat": lambda r: ([r.normal(size=(3, 2)), r.normal(size=(3, 4))], lambda a, b: T.concat([a, b])),
    "gather": lambda r: ([r.normal(size=(4, 3))], lambda a: T.gather(a, [0, 2, 2, 3, 0])),
    "segment_sum": lambda r: ([r.normal(size=(5, 3))], lambda a: T.segment_sum(a, [0, 0, 1, 2, 2], 4)),
    "segment_mean": lambda r: ([r.normal(size=(5, 3))], lambda a: T.segment_mean(a, [0, 1, 1, 1, 2])),
    "conv1d": lambda r: ([r.normal(size=(2, 5, 2)), r.normal(size=(3, 2, 3))], lambda a, b: T.conv1d(a, b)),
    "reshape": lambda r: ([r.normal(size=(2, 6))], lambda a: T.reshape(a, (3, 4))),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_adjoint_matches_finite_differences(name, f64):
    arrays, fn = PRIMITIVES[name](np.random.default_rng(len(name)))
    inputs = [Tensor(a, requires_grad=True, name=f"{name}[{i}]") for i, a in enumerate(arrays)]
    _fd_check(lambda: fn(*inputs), inputs)


def test_tape_replay_is_deterministic(rng):
    a = rng.normal(size=(6, 5)).astype(np.float32)
    w = rng.normal(size=(5, 4)).astype(np.float32)

    def run():
        x, p = Tensor(a), Tensor(w, requires_grad=True)
        loss = T.sum(T.exp(T.mul(T.relu(T.matmul(x, p)), 0.1)))
        T.backward(loss)
        return loss.data.tobytes(), p.grad.tobytes()

    assert run() == run()


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.integers(1, 4), st.randoms(use_true_random=False))
def test_segment_mean_permutation_equivariant(n, segs, rnd):
    rows = np.array([[rnd.uniform(-5, 5) for _ in range(3)] for _ in range(n)])
    ids = np.array([rnd.randrange(segs) for _ in range(n)])
    perm = np.array(rnd.sample(range(n), n))
    with T.precision(np.float64):
        a = T.segment_mean(Tensor(rows), ids, segs).data
        b = T.segment_mean(Tensor(rows[perm]), ids[perm], segs).data
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


# --- optimizer and clipping --------------------------------------------------

def test_adam_first_step_descends():
    x = Tensor([1.0], requires_grad=True)
    opt = Adam([x], lr=0.1)
    T.backward(T.sum(T.mul(x, x)))
    opt.step()
    assert x.data[0] < 1.0


def test_adam_converges_on_shifted_quadratic(f64):
    x = Tensor([0.0], requires_grad=True)
    opt = Adam([x], lr=0.1, decay=1.0)
    for _ in range(2000):
        opt.zero_grad()
        d = T.sub(x, 5.0)
        T.backward(T.sum(T.mul(d, d)))
        opt.step()
    assert abs(x.data[0] - 5.0) < 1e-2


def test_learning_rate_decay_closed_form():
    x = Tensor([0.0], requires_grad=True)
    opt = Adam([x])
    for _ in range(100):
        x.grad = np.ones(1, dtype=np.float32)
        opt.step()
    assert opt.current_lr == pytest.approx(3e-4 * 0.999 ** 100)
    assert opt.current_lr == pytest.approx(2.714e-4, abs=5e-8)


def test_adam_state_moments_match_shapes():
    ps = [Tensor(np.zeros((2, 3)), requires_grad=True), Tensor(np.zeros(4), requires_grad=True)]
    st_ = Adam(ps).state
    assert [m.shape for m in st_.m] == [(2, 3), (4,)]
    assert isinstance(st_, AdamState)


def test_adam_requires_grads():
    p = Tensor([1.0], requires_grad=True, name="w")
    opt = Adam([p])
    with pytest.raises(ValueError, match="w"):
        adam_step([p], opt.state)


def _with_grads(*gs):
    ps = []
    for g in gs:
        p = Tensor(np.zeros_like(g, dtype=float), requires_grad=True)
        p.grad = np.asarray(g, dtype=np.float32)
        ps.append(p)
    return ps


def test_clip_rescales_large_norm():
    ps = _with_grads([6.0, 0.0], [8.0])
    clip_gradients(ps, 5.0)
    np.testing.assert_allclose(ps[0].grad, [3.0, 0.0], rtol=1e-6)
    np.testing.assert_allclose(ps[1].grad, [4.0], rtol=1e-6)


def test_clip_leaves_small_norm():
    ps = _with_grads([0.6, 0.0], [0.8])
    clip_gradients(ps, 5.0)
    np.testing.assert_array_equal(ps[0].grad, np.float32([0.6, 0.0]))


def test_clip_preserves_direction(rng):
    ps = _with_grads(rng.normal(size=10) * 30, rng.normal(size=5) * 30)
    ps = [Tensor(p.data, requires_grad=True) for p in ps]
    for p in ps:
        p.grad = rng.normal(size=p.shape) * 30
    before = np.concatenate([p.grad for p in ps])
    clip_gradients(ps, 1.0)
    after = np.concatenate([p.grad for p in ps])
    cos = before @ after / (np.linalg.norm(before) * np.linalg.norm(after))
    assert abs(cos - 1.0) < 1e-12
    assert global_grad_norm(ps) <= 1.0 + 1e-12
