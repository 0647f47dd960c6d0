import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latrisk.numerics import (
    AutodiffError,
    IncompatibleCheckpoint,
    NonFiniteGradient,
    OptimState,
    ParamStore,
    SeededRng,
    ShapeError,
    T,
    Tensor,
    adam_step,
    grad,
    init_mlp,
    load_checkpoint,
    mlp_forward,
    save_checkpoint,
)
from latrisk.numerics.checkpoint import CheckpointError
from latrisk.verify import finite_difference_check


def test_zero_weights_return_bias():
    p = {"W0": np.zeros((3, 2)), "b0": np.array([0.5, -1.5])}
    x = np.random.default_rng(0).normal(size=(4, 3))
    out = mlp_forward(p, x, (3, 2)).data
    np.testing.assert_array_equal(out, np.tile([0.5, -1.5], (4, 1)))


def test_identity_layer():
    p = {"W0": np.eye(3), "b0": np.zeros(3)}
    x = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(mlp_forward(p, x, (3, 3)).data, x)


def test_two_layer_matches_hand_oracle():
    rng = np.random.default_rng(7)
    store = ParamStore()
    init_mlp(store, "", (2, 5, 3), rng)
    x = np.array([[1.0, 0.0]])
    out = mlp_forward(dict(store.items()), x, (2, 5, 3), "relu").data
    h = np.maximum(0.0, x @ store["W0"] + store["b0"])
    ref = h @ store["W1"] + store["b1"]
    assert np.max(np.abs(out - ref)) <= 1e-12


def test_shape_error_names_layer():
    p = {"W0": np.eye(3), "b0": np.zeros(3), "W1": np.zeros((2, 1)), "b1": np.zeros(1)}
    with pytest.raises(ShapeError, match="W1"):
        mlp_forward(p, np.ones((1, 3)), (3, 3, 1))


def test_linear_gradient_is_outer_product():
    rng = np.random.default_rng(1)
    W = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
    x = rng.normal(size=(4, 3))
    (g,) = grad(T.tsum(T.matmul(x, W)), [W])
    np.testing.assert_allclose(g, np.tile(x.sum(axis=0)[:, None], (1, 2)), rtol=0, atol=1e-12)
    res = finite_difference_check(lambda p: T.tsum(T.matmul(x, p["W"])), {"W": W.data}, rng, h=1e-6)
    assert res.max_rel < 1e-5


def test_unreachable_gradient_is_zero_and_stationary_point():
    w = Tensor(np.array(3.0), requires_grad=True)
    v = Tensor(np.array(2.0), requires_grad=True)
    gw, gv = grad(T.square(w - 3.0), [w, v])
    assert gw == 0.0 and gv == 0.0


def test_backward_on_detached_scalar_raises():
    with pytest.raises(AutodiffError):
        grad(Tensor(np.array(1.0)), [Tensor(np.array(1.0), requires_grad=True)])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_elementwise_ops_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    x0 = rng.uniform(0.2, 2.0, size=(3, 2))

    def f(p):
        x = p["x"]
        y = T.tanh(x) * T.softplus(x) + T.log(x) / T.sqrt(x + 1.0) - T.exp(-x) * T.cos(x)
        return T.tsum(T.power(y, 2.0)) + T.mean(T.huber(x - 1.0, 0.5))

    res = finite_difference_check(f, {"x": x0}, rng, per_array=6)
    assert res.max_rel < 1e-6


def test_adam_zero_gradient_keeps_params():
    s = ParamStore({"w": np.array([1.0, -2.0])})
    st_ = OptimState.for_store(s, 0.1)
    adam_step(s, {"w": np.zeros(2)}, st_)
    np.testing.assert_array_equal(s["w"], [1.0, -2.0])
    assert s.version == 1


def test_adam_descends_and_is_bounded():
    s = ParamStore({"w": np.array(1.0)})
    st_ = OptimState.for_store(s, 0.1)
    for _ in range(20):
        before = float(s["w"])
        adam_step(s, {"w": np.array(2.0 * before)}, st_)
        assert abs(float(s["w"]) - before) <= 0.1 * (1 + 1e-12)
    assert float(s["w"]) < 1.0


def test_adam_deterministic_and_rejects_nan():
    def run():
        s = ParamStore({"w": np.arange(3.0)})
        o = OptimState.for_store(s, 0.01)
        for k in range(3):
            adam_step(s, {"w": np.sin(np.arange(3.0) + k)}, o)
        return s["w"]

    np.testing.assert_array_equal(run(), run())
    s = ParamStore({"w": np.zeros(2)})
    with pytest.raises(NonFiniteGradient, match="w"):
        adam_step(s, {"w": np.array([np.nan, 0.0])}, OptimState.for_store(s, 0.1))


def test_seeded_rng_streams():
    a = SeededRng(5, (1, 2)).generator().normal(size=4)
    b = SeededRng(5, (1, 2)).generator().normal(size=4)
    c = SeededRng(5, (1, 3)).generator().normal(size=4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    x = SeededRng(0, (0,)).generator().normal(size=20000)
    y = SeededRng(0, (1,)).generator().normal(size=20000)
    assert abs(np.corrcoef(x, y)[0, 1]) < 0.03


def test_checkpoint_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    arrays = {"a": rng.normal(size=(3, 4)), "b": np.array(np.pi), "c": rng.normal(size=7) * 1e-300}
    p = tmp_path / "ck.bin"
    save_checkpoint(p, arrays, 42, {"kind": "x"})
    back, header = load_checkpoint(p)
    assert header["seed"] == 42 and header["meta"] == {"kind": "x"}
    assert [m["name"] for m in header["manifest"]] == ["a", "b", "c"]
    for k in arrays:
        assert back[k].tobytes() == np.asarray(arrays[k], dtype="<f8").tobytes()


def test_checkpoint_version_and_magic(tmp_path):
    p = tmp_path / "ck.bin"
    save_checkpoint(p, {"a": np.zeros(2)}, 0)
    raw = p.read_bytes().replace(b'"format_version": 1', b'"format_version": 9')
    p.write_bytes(raw)
    with pytest.raises(IncompatibleCheckpoint):
        load_checkpoint(p)
    p.write_bytes(b"garbage" * 4)
    with pytest.raises(CheckpointError):
        load_checkpoint(p)


def test_param_store_order_and_checksum():
    s = ParamStore()
    s.add("z", np.zeros(2))
    s.add("a", np.ones(2))
    assert s.names() == ["z", "a"]
    c0 = s.checksum()
    s.set("a", np.ones(2))
    assert s.checksum() == c0 and s.version == 1
    s.set("a", np.array([1.0, 2.0]))
    assert s.checksum() != c0
