import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hairl import diffcore as dc
from hairl.errors import DimensionError, NumericError

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


def _store(rng, **shapes):
    s = dc.ParamStore()
    for k, shp in shapes.items():
        s.add(k, rng.standard_normal(shp))
    return s


# --- linear -----------------------------------------------------------------

def test_linear_identity_and_bias():
    assert np.allclose(dc.linear([1.0, 2.0], np.eye(2), [0.0, 0.0]).data, [1, 2])
    assert np.allclose(dc.linear([1.0, 1.0], [[1, 0], [0, 1]], [1.0, -1.0]).data, [2, 0])


def test_linear_matches_triple_loop(rng):
    x, W, b = rng.standard_normal((3, 4)), rng.standard_normal((4, 5)), rng.standard_normal(5)
    ref = np.zeros((3, 5))
    for i in range(3):
        for j in range(5):
            ref[i, j] = b[j] + sum(x[i, k] * W[k, j] for k in range(4))
    assert np.max(np.abs(dc.linear(x, W, b).data - ref)) < 1e-12


def test_linear_shape_errors():
    with pytest.raises(DimensionError):
        dc.linear(np.ones(3), np.ones((2, 2)), np.ones(2))
    with pytest.raises(DimensionError):
        dc.linear(np.ones(2), np.ones((2, 2)), np.ones(3))


# --- softmax ----------------------------------------------------------------

def test_softmax_examples():
    assert np.allclose(dc.softmax([0.0, 0.0, 0.0]).data, 1 / 3, atol=1e-12)
    assert np.allclose(dc.softmax([1.0, -1.0]).data, [0.8808, 0.1192], atol=1e-4)
    assert dc.softmax([3.7]).data.tolist() == [1.0]
    with pytest.raises(DimensionError):
        dc.softmax(np.zeros(0))


@given(arrays(np.float64, st.integers(1, 8), elements=finite), finite)
def test_softmax_normalized_and_shift_invariant(x, c):
    p = dc.softmax(x).data
    assert (p > 0).all() and abs(p.sum() - 1) < 1e-12
    assert np.allclose(p, dc.softmax(x + c).data, atol=1e-12)


# --- gru --------------------------------------------------------------------

def _gru_params(rng, n_in, H, zero=False):
    f = (lambda s: np.zeros(s)) if zero else (lambda s: rng.standard_normal(s) * 0.5)
    return f((n_in, 3 * H)), f((H, 2 * H)), f((H, H)), f(3 * H)


def test_gru_zero_weights(rng):
    h = rng.standard_normal(4)
    out = dc.gru_cell(rng.standard_normal(3), h, *_gru_params(rng, 3, 4, zero=True)).data
    assert np.allclose(out, 0.5 * h, atol=1e-15)
    assert np.all(dc.gru_cell(np.zeros(3), np.zeros(4), *_gru_params(rng, 3, 4, zero=True)).data == 0)


def test_gru_matches_scalar_oracle(rng):
    n_in, H = 3, 4
    x, h = rng.standard_normal(n_in), rng.standard_normal(H)
    Wx, U_ru, U_c, b = _gru_params(rng, n_in, H)
    sig = lambda v: 1 / (1 + np.exp(-v))
    ref = np.zeros(H)
    r = [sig(sum(x[k] * Wx[k, j] for k in range(n_in)) + sum(h[k] * U_ru[k, j] for k in range(H)) + b[j])
         for j in range(H)]
    for j in range(H):
        u = sig(sum(x[k] * Wx[k, H + j] for k in range(n_in))
                + sum(h[k] * U_ru[k, H + j] for k in range(H)) + b[H + j])
        c = np.tanh(sum(x[k] * Wx[k, 2 * H + j] for k in range(n_in))
                    + sum(r[k] * h[k] * U_c[k, j] for k in range(H)) + b[2 * H + j])
        ref[j] = (1 - u) * h[j] + u * c
    assert np.max(np.abs(dc.gru_cell(x, h, Wx, U_ru, U_c, b).data - ref)) < 1e-12


def test_gru_shape_error(rng):
    with pytest.raises(DimensionError):
        dc.gru_cell(np.ones(3), np.ones(4), *_gru_params(rng, 2, 4))


def test_gru_gradient(rng):
    p = _store(rng, x=(2, 3), h=(2, 4), Wx=(3, 12), U_ru=(4, 8), U_c=(4, 4), b=(12,))
    loss = lambda: dc.tsum(dc.square(dc.gru_cell(p["x"], p["h"], p["Wx"], p["U_ru"], p["U_c"], p["b"])))
    assert dc.grad_check(loss, p) < 1e-7


# --- elementwise ops and their gradients ------------------------------------

OPS = {
    "exp": lambda a, b: dc.exp(a * 0.3),
    "log": lambda a, b: dc.log(dc.square(a) + 1.0),
    "tanh": lambda a, b: dc.tanh(a),
    "sigmoid": lambda a, b: dc.sigmoid(a),
    "softplus": lambda a, b: dc.softplus(a),
    "logaddexp": lambda a, b: dc.logaddexp(a, b),
    "div": lambda a, b: a / (dc.square(b) + 1.0),
    "power": lambda a, b: dc.power(dc.square(a) + 1.0, 1.5),
    "matmul": lambda a, b: a @ b.T,
    "log_softmax": lambda a, b: dc.log_softmax(a),
    "logsumexp": lambda a, b: dc.logsumexp(a),
    "entropy": lambda a, b: dc.categorical_entropy(a),
    "concat": lambda a, b: dc.concat([a, b * 2.0], axis=1),
    "stack": lambda a, b: dc.stack([a, b], axis=0),
    "getitem": lambda a, b: a[np.array([0, 2, 2])],
    "pick": lambda a, b: dc.pick(a, np.array([1, 0, 3])),
    "mean": lambda a, b: dc.tmean(a * b, axis=0),
    "reshape": lambda a, b: (a.reshape(4, 3) * 2.0),
    "minimum": lambda a, b: dc.minimum(a, b + 0.5),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients(name, rng):
    p = _store(rng, a=(3, 4), b=(3, 4))
    w = rng.standard_normal(OPS[name](p["a"], p["b"]).shape)
    assert dc.grad_check(lambda: dc.tsum(OPS[name](p["a"], p["b"]) * w), p) < 1e-7


def test_broadcast_gradient(rng):
    p = _store(rng, a=(3, 4), b=(4,))
    assert dc.grad_check(lambda: dc.tsum(dc.tanh(p["a"] * p["b"] + p["b"])), p) < 1e-7


def test_clip_gradient_masks_outside(rng):
    p = dc.ParamStore()
    x = p.add("x", [-2.0, 0.0, 2.0])
    dc.tsum(dc.clip(x, -1, 1)).backward()
    assert x.grad.tolist() == [0.0, 1.0, 0.0]


def test_matmul_needs_2d():
    with pytest.raises(DimensionError):
        dc.matmul(np.ones(3), np.ones((3, 2)))


def test_no_grad_records_nothing(rng):
    p = _store(rng, a=(2,))
    with dc.no_grad():
        y = dc.exp(p["a"])
    assert y._backward is None and not y.requires_grad


# --- grad_check harness -----------------------------------------------------

def test_grad_check_quadratic(rng):
    p = _store(rng, a=(3,), b=(2, 2))
    assert dc.grad_check(lambda: dc.tsum(dc.square(p["a"])) + dc.tsum(dc.square(p["b"])), p) < 1e-7


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_grad_check_rejects_nonfinite():
    p = dc.ParamStore()
    p.add("a", [0.0])
    with pytest.raises(NumericError):
        dc.grad_check(lambda: dc.log(p["a"] * 0.0).sum(), p)


def test_grad_check_detects_wrong_gradient(rng):
    p = _store(rng, a=(3,))

    def broken():  # value of a^2 but gradient of a
        a = p["a"]
        return dc._node(np.sum(a.data ** 2), (a,), lambda g: (g * np.ones(3),))

    assert dc.grad_check(broken, p) > 1e-2


# --- parameters, optimizer, persistence -------------------------------------

def test_param_store_names_unique():
    s = dc.ParamStore()
    s.add("w", [1.0])
    with pytest.raises(KeyError):
        s.add("w", [2.0])


def test_load_state_dict_checks(rng):
    s = _store(rng, w=(2, 2))
    with pytest.raises(DimensionError):
        s.load_state_dict({"w": np.zeros(3)})
    with pytest.raises(KeyError):
        s.load_state_dict({})


def test_adam_zero_gradient_is_noop(rng):
    s = _store(rng, w=(3,))
    before = s["w"].data.copy()
    opt = dc.Adam(s, lr=0.1)
    s["w"].grad = np.zeros(3)
    opt.step()
    assert np.array_equal(before, s["w"].data)


def test_adam_rejects_nan(rng):
    s = _store(rng, w=(3,))
    s["w"].grad = np.array([0.0, np.nan, 1.0])
    with pytest.raises(NumericError):
        dc.Adam(s).step()


def test_adam_minimizes_quadratic(rng):
    s = _store(rng, w=(4,))
    opt = dc.Adam(s, lr=0.05)
    for _ in range(500):
        opt.zero_grad()
        dc.tsum(dc.square(s["w"] - 3.0)).backward()
        opt.step()
    assert np.allclose(s["w"].data, 3.0, atol=1e-3)


def test_save_load_roundtrip(tmp_path, rng):
    a, b = _store(rng, w=(2, 3), v=(4,)), _store(rng, u=(1,))
    path = tmp_path / "ck.npz"
    dc.save_params(path, {"a": a, "b": b}, meta='{"k": 1}')
    stores, meta = dc.load_params(path)
    assert meta == '{"k": 1}'
    assert np.array_equal(stores["a"]["w"], a["w"].data) and np.array_equal(stores["b"]["u"], b["u"].data)
