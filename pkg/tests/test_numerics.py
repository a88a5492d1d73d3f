import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from infovgae import numerics as nx


def dense_grad(fn, *values):
    """Build params from values, run backward on fn(*params), return grads."""
    params = [nx.parameter(v) for v in values]
    nx.backward(fn(*params))
    return [p.grad for p in params]


# --- spmm -------------------------------------------------------------------

def test_spmm_identity():
    b = np.arange(6.0).reshape(3, 2)
    out = nx.spmm(sp.identity(3, format="csr"), b)
    assert np.array_equal(out.value, b)


def test_spmm_zero():
    out = nx.spmm(sp.csr_matrix((3, 3)), np.ones((3, 2)))
    assert np.array_equal(out.value, np.zeros((3, 2)))


def test_spmm_swap():
    a = nx.sparse_from_entries(2, 2, [(0, 1, 1.0), (1, 0, 1.0)])
    out = nx.spmm(a, [[1, 2], [3, 4]])
    assert np.array_equal(out.value, [[3, 4], [1, 2]])


def test_spmm_shape_mismatch():
    with pytest.raises(nx.DimensionError):
        nx.spmm(sp.identity(3, format="csr"), np.ones((2, 2)))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**31 - 1))
def test_spmm_equals_dense(n, k, m, seed):
    rng = np.random.default_rng(seed)
    dense_a = rng.normal(size=(n, k)) * (rng.random((n, k)) < 0.4)
    b = rng.normal(size=(k, m))
    out = nx.spmm(sp.csr_matrix(dense_a), b)
    assert np.allclose(out.value, dense_a @ b, rtol=0, atol=1e-12)


def test_spmm_gradient_flows_to_dense_operand():
    a = sp.csr_matrix(np.array([[0.0, 2.0], [1.0, 0.0]]))
    (g,) = dense_grad(lambda b: nx.sum_all(nx.spmm(a, b)), np.ones((2, 3)))
    assert np.allclose(g, a.T @ np.ones((2, 3)))


def test_sparse_from_entries_rejects_duplicates_and_sorts():
    with pytest.raises(ValueError):
        nx.sparse_from_entries(2, 2, [(0, 0, 1.0), (0, 0, 2.0)])
    m = nx.sparse_from_entries(3, 3, [(2, 1, 1.0), (0, 2, 3.0), (0, 0, 4.0)])
    assert m.has_sorted_indices
    assert m.toarray()[0, 2] == 3.0
    with pytest.raises(nx.NumericError):
        nx.sparse_from_entries(1, 1, [(0, 0, np.nan)])


# --- backward -----------------------------------------------------------------

def test_backward_sum_is_ones():
    (g,) = dense_grad(nx.sum_all, np.arange(4.0).reshape(2, 2))
    assert np.array_equal(g, np.ones((2, 2)))


def test_backward_relu_kink_convention():
    (g,) = dense_grad(lambda w: nx.sum_all(nx.relu(w)), [[-1.0, 2.0]])
    assert np.array_equal(g, [[0.0, 1.0]])
    (g,) = dense_grad(lambda w: nx.sum_all(nx.max0(w)), [[0.0]])
    assert g[0, 0] == 0.0


def test_backward_sigmoid_at_zero():
    (g,) = dense_grad(lambda w: nx.sum_all(nx.sigmoid(w)), [[0.0]])
    assert g[0, 0] == pytest.approx(0.25, abs=1e-15)


def test_backward_requires_scalar():
    with pytest.raises(ValueError):
        nx.backward(nx.parameter(np.ones((2, 1))))


def test_backward_accumulates_across_calls():
    w = nx.parameter(np.ones((1, 2)))
    nx.backward(nx.sum_all(w))
    nx.backward(nx.sum_all(w))
    assert np.array_equal(w.grad, [[2.0, 2.0]])
    w.zero_grad()
    assert np.array_equal(w.grad, np.zeros((1, 2)))


def test_diamond_graph_accumulates_both_paths():
    x = np.array([[1.5, -2.0]])
    (g,) = dense_grad(lambda p: nx.sum_all(nx.mul(p, p)), x)
    assert np.array_equal(g, 2 * x)


def test_backward_visits_shared_node_once():
    w = nx.parameter(np.array([[3.0]]))
    h = nx.exp(w)
    loss = nx.sum_all(nx.add(nx.mul(h, h), h))  # e^{2w} + e^w
    nx.backward(loss)
    assert w.grad[0, 0] == pytest.approx(2 * np.exp(6.0) + np.exp(3.0), rel=1e-12)


def test_topological_order_is_acyclic_and_complete():
    w = nx.parameter(np.ones((2, 2)))
    a = nx.matmul(w, w)
    b = nx.add(a, w)
    order = nx._topological(nx.sum_all(b))
    ids = [id(n) for n in order]
    assert len(ids) == len(set(ids))
    assert ids.index(id(w)) < ids.index(id(a)) < ids.index(id(b))


# --- op values ----------------------------------------------------------------

def test_sigmoid_clamped_never_zero_or_one():
    out = nx.sigmoid([[-1e3, 1e3, 0.0]]).value
    assert out[0, 0] == nx.SIGMOID_EPS
    assert out[0, 1] == 1 - nx.SIGMOID_EPS
    assert np.all(np.isfinite(np.log(out))) and np.all(np.isfinite(np.log1p(-out)))


def test_log_is_clamped():
    out = nx.log([[0.0, 1.0]]).value
    assert out[0, 0] == np.log(nx.LOG_FLOOR)
    (g,) = dense_grad(lambda p: nx.sum_all(nx.log(p)), [[0.0, 2.0]])
    assert np.array_equal(g, [[0.0, 0.5]])


def test_slice_and_concat_rows():
    x = np.arange(12.0).reshape(4, 3)
    p = nx.parameter(x)
    top, bottom = nx.slice_rows(p, 0, 1), nx.slice_rows(p, 1, 4)
    joined = nx.concat_rows([bottom, top])
    assert np.array_equal(joined.value, np.vstack([x[1:], x[:1]]))
    nx.backward(nx.sum_all(nx.mul(joined, joined)))
    assert np.array_equal(p.grad, 2 * x)


def test_shape_errors():
    with pytest.raises(nx.DimensionError):
        nx.matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(nx.DimensionError):
        nx.add(np.ones((2, 3)), np.ones((3, 2)))
    with pytest.raises(nx.DimensionError):
        nx.mul(np.ones((2, 3)), np.ones((1, 3)))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_matmul_raises():
    with pytest.raises(nx.NumericError):
        nx.matmul([[1e200]], [[1e200]])


def test_operator_sugar():
    a = nx.parameter([[1.0, 2.0]])
    b = nx.parameter([[3.0, 4.0]])
    assert np.array_equal((a + b).value, [[4.0, 6.0]])
    assert np.array_equal((a - b).value, [[-2.0, -2.0]])
    assert np.array_equal((a * b).value, [[3.0, 8.0]])
    assert np.array_equal((a @ b.T).value, [[11.0]])


def test_gram_symmetric_and_matches_matmul():
    x = np.random.default_rng(1).normal(size=(20, 3))
    g = nx.gram(x).value
    assert np.array_equal(g, g.T)
    assert np.allclose(g, x @ x.T, rtol=0, atol=1e-12)


def test_weighted_bce_logits_matches_composition():
    rng = np.random.default_rng(2)
    t = (rng.random((6, 6)) < 0.3).astype(float)
    w = 4.0 * t + (1 - t)
    x = rng.normal(size=(6, 6))
    fused = nx.weighted_bce_logits(x, 2 * t - 1, w).value[0, 0]
    p = nx.sigmoid(x).value
    slow = -np.mean(w * (t * np.log(p) + (1 - t) * np.log(1 - p)))
    assert fused == pytest.approx(slow, rel=1e-12)


# --- gradient checks ------------------------------------------------------------

def _away_from_zero(rng, shape, margin=0.1):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin, x)


OP_CASES = {
    "matmul": lambda a, b: nx.sum_all(nx.mul(nx.matmul(a, nx.transpose(b)),
                                             nx.matmul(a, nx.transpose(b)))),
    "add": lambda a, b: nx.sum_all(nx.mul(nx.add(a, b), a)),
    "mul": lambda a, b: nx.sum_all(nx.mul(a, b)),
    "scalar_mul": lambda a, b: nx.sum_all(nx.mul(nx.scalar_mul(a, -2.5), b)),
    "relu": lambda a, b: nx.sum_all(nx.mul(nx.relu(a), b)),
    "max0": lambda a, b: nx.sum_all(nx.mul(nx.max0(a), b)),
    "leaky_relu": lambda a, b: nx.sum_all(nx.mul(nx.leaky_relu(a, 0.2), b)),
    "sigmoid": lambda a, b: nx.sum_all(nx.mul(nx.sigmoid(a), b)),
    "exp": lambda a, b: nx.sum_all(nx.mul(nx.exp(a), b)),
    "log": lambda a, b: nx.sum_all(nx.mul(nx.log(nx.mul(a, a)), b)),
    "mean": lambda a, b: nx.mean_all(nx.mul(a, b)),
    "slice_concat": lambda a, b: nx.sum_all(nx.mul(
        nx.concat_rows([nx.slice_rows(a, 2, 4), nx.slice_rows(a, 0, 2)]), b)),
    "gram": lambda a, b: nx.sum_all(nx.mul(nx.gram(a), nx.gram(b))),
    "bce": lambda a, b: nx.weighted_bce_logits(
        nx.matmul(a, nx.transpose(b)), np.where(np.eye(4) > 0, 1.0, -1.0), np.full((4, 4), 2.0)),
    "spmm": lambda a, b: nx.sum_all(nx.mul(nx.spmm(sp.csr_matrix(np.tri(4)), a), b)),
}


@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_op_gradients_finite_difference(name):
    rng = np.random.default_rng(7)
    a = nx.parameter(_away_from_zero(rng, (4, 3)))
    b = nx.parameter(_away_from_zero(rng, (4, 3)))
    err = nx.finite_difference_check(lambda: OP_CASES[name](a, b), [a, b], h=1e-6, n_coords=100)
    assert err < 1e-4, name


def test_fd_check_quadratic_and_linear():
    w = nx.parameter(np.random.default_rng(0).normal(size=(3, 3)))
    assert nx.finite_difference_check(lambda: nx.sum_all(nx.mul(w, w)), [w], h=1e-5) < 1e-6
    assert nx.finite_difference_check(lambda: nx.sum_all(w), [w], h=1e-5) < 1e-9


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_fd_check_rejects_nonfinite_and_bad_h():
    w = nx.parameter([[0.0]])
    with pytest.raises(nx.NumericError):
        nx.finite_difference_check(lambda: nx.scalar_mul(nx.sum_all(w), np.inf), [w])
    with pytest.raises(ValueError):
        nx.finite_difference_check(lambda: nx.sum_all(w), [w], h=0.0)


# --- Adam ----------------------------------------------------------------------

def test_adam_zero_gradient_leaves_params():
    w = nx.parameter([[1.0, -2.0]])
    nx.backward(nx.scalar_mul(nx.sum_all(w), 0.0))
    nx.Adam().step([w])
    assert np.array_equal(w.value, [[1.0, -2.0]])


def test_adam_first_step():
    w = nx.parameter([[0.5]])
    nx.backward(nx.sum_all(w))
    nx.Adam(lr=0.01).step([w])
    expected = 0.5 - 0.01 * 1.0 / (1.0 + 1e-8)
    assert w.value[0, 0] == pytest.approx(expected, abs=1e-15)
    assert w.grad[0, 0] == 0.0


def test_adam_identical_params_stay_identical():
    a, b = nx.parameter([[0.3, 0.7]]), nx.parameter([[0.3, 0.7]])
    opt = nx.Adam(lr=0.05)
    for _ in range(2):
        nx.backward(nx.add(nx.sum_all(nx.mul(a, a)), nx.sum_all(nx.mul(b, b))))
        opt.step([a, b])
    assert np.array_equal(a.value, b.value)
    assert np.array_equal(opt.m[0], opt.m[1]) and np.array_equal(opt.v[0], opt.v[1])


def test_adam_minimizes_quadratic():
    w = nx.parameter([[3.0, -4.0]])
    opt = nx.Adam(lr=0.1)
    for _ in range(500):
        nx.backward(nx.sum_all(nx.mul(w, w)))
        opt.step([w])
    assert np.abs(w.value).max() < 1e-2


def test_adam_validates_hyperparameters():
    with pytest.raises(ValueError):
        nx.Adam(beta1=1.0)
    with pytest.raises(ValueError):
        nx.Adam(eps=0.0)
