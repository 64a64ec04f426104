import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from moodreader import checkpoint
from moodreader.nn import (
    BatchNorm,
    ConfigError,
    DataError,
    DegenerateBatchError,
    GradientCheckError,
    Linear,
    MultiHeadAttention,
    Parameter,
    RngState,
    ShapeError,
    Tensor,
    cross_entropy,
    dropout,
    gradient_check,
    layer_norm,
    linear,
    multi_head_attention,
    softmax,
)
from moodreader.nn import tensor as T


def projection_loss(out: Tensor, seed: int = 7) -> Tensor:
    """Random fixed projection so that gradients are generic (not identically zero)."""
    r = np.random.default_rng(seed).normal(size=out.shape)
    return (out * r).sum()


# -- linear -------------------------------------------------------------------
def test_linear_identity():
    out = linear(Tensor([1.0, 2.0]), Tensor(np.eye(2)))
    np.testing.assert_array_equal(out.data, [1.0, 2.0])


def test_linear_scalar_oracle():
    out = linear(Tensor([1.0, 0.0]), Tensor([[2.0, 3.0], [5.0, 7.0]]))
    np.testing.assert_array_equal(out.data, [2.0, 3.0])


def test_linear_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(3,\).*\(2, 2\)"):
        linear(Tensor(np.ones(3)), Tensor(np.eye(2)))


@pytest.mark.parametrize("point", range(10))
def test_linear_gradient(point):
    rng = np.random.default_rng(point)
    x, w, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 5)), rng.normal(size=5)
    err = gradient_check(lambda x, w, b: linear(x, w, b).sum(), [x, w, b])
    assert err < 1e-4


# -- layer norm ---------------------------------------------------------------
def test_layer_norm_constant_row():
    out = layer_norm(Tensor([5.0, 5.0, 5.0]), Tensor(np.ones(3)), Tensor(np.zeros(3)))
    np.testing.assert_array_equal(out.data, [0.0, 0.0, 0.0])


def test_layer_norm_two_values():
    eps = 1e-5
    out = layer_norm(Tensor([1.0, 3.0]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps)
    # mean 2, variance 1: x_hat = +-1 / sqrt(1 + eps)
    np.testing.assert_allclose(out.data, [-1 / math.sqrt(1 + eps), 1 / math.sqrt(1 + eps)], rtol=1e-12)


@pytest.mark.parametrize("point", range(10))
def test_layer_norm_gradient(point):
    rng = np.random.default_rng(100 + point)
    x, g, s = rng.normal(size=(3, 6)), rng.normal(size=6), rng.normal(size=6)
    err = gradient_check(lambda x, g, s: projection_loss(layer_norm(x, g, s)), [x, g, s])
    assert err < 1e-4


def test_layer_norm_zero_variance_gradient_finite():
    x = np.full((2, 4), 3.0)
    err = gradient_check(lambda x: projection_loss(layer_norm(x, Tensor(np.ones(4)), Tensor(np.zeros(4)))), [x])
    assert np.isfinite(err)


# -- softmax ------------------------------------------------------------------
def test_softmax_symmetric():
    np.testing.assert_allclose(softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])


def test_softmax_scalar_oracle():
    e = [math.exp(v) for v in (1.0, 2.0, 3.0)]
    expected = [v / sum(e) for v in e]
    np.testing.assert_allclose(softmax(Tensor([1.0, 2.0, 3.0])).data, expected, atol=1e-12)
    np.testing.assert_allclose(expected, [0.0900, 0.2447, 0.6652], atol=1e-4)


@settings(max_examples=60, deadline=None)
@given(
    arrays(np.float64, (3, 5), elements=st.floats(-500, 500)),
    st.floats(-1e3, 1e3),
)
def test_softmax_normalized_and_shift_invariant(x, c):
    y = softmax(Tensor(x), axis=-1).data
    assert np.all(y >= 0)
    np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-6)
    np.testing.assert_allclose(softmax(Tensor(x + c), axis=-1).data, y, atol=1e-9)


@pytest.mark.parametrize("point", range(10))
def test_softmax_gradient(point):
    x = np.random.default_rng(200 + point).normal(size=(2, 5))
    assert gradient_check(lambda x: projection_loss(softmax(x, axis=-1)), [x]) < 1e-4


# -- attention ----------------------------------------------------------------
def _mha_params(rng, d, zero_value=False):
    p = {k: Tensor(rng.normal(size=(d, d))) for k in ("wq", "wk", "wv", "wo")}
    p["bo"] = Tensor(rng.normal(size=d))
    if zero_value:
        p["wv"] = Tensor(np.zeros((d, d)))
    return p


def test_attention_single_token_is_value_path():
    rng = np.random.default_rng(0)
    p = _mha_params(rng, 4)
    x = Tensor(rng.normal(size=(1, 4)))
    out, w = multi_head_attention(x, x, 2, p)
    expected = x.data @ p["wv"].data @ p["wo"].data + p["bo"].data
    np.testing.assert_array_equal(w.data, np.ones((2, 1, 1)))
    np.testing.assert_allclose(out.data, expected, rtol=1e-12)


def test_attention_zero_value_weights_gives_bias():
    rng = np.random.default_rng(1)
    p = _mha_params(rng, 4, zero_value=True)
    q, kv = Tensor(rng.normal(size=(3, 4))), Tensor(rng.normal(size=(5, 4)))
    out, _ = multi_head_attention(q, kv, 2, p)
    np.testing.assert_allclose(out.data, np.tile(p["bo"].data, (3, 1)))


def test_attention_two_token_scalar_oracle():
    x = [[1.0, -0.5], [0.25, 2.0]]
    wq = [[0.5, -1.0], [1.5, 0.25]]
    wk = [[-0.75, 0.5], [0.2, 1.0]]
    wv = [[1.0, 2.0], [-1.0, 0.5]]
    wo = [[0.3, -0.2], [0.7, 1.1]]
    bo = [0.1, -0.3]

    def mv(row, w):
        return [sum(row[i] * w[i][j] for i in range(2)) for j in range(2)]

    q = [mv(r, wq) for r in x]
    k = [mv(r, wk) for r in x]
    v = [mv(r, wv) for r in x]
    expected = []
    for i in range(2):
        s = [sum(q[i][t] * k[j][t] for t in range(2)) / math.sqrt(2) for j in range(2)]
        e = [math.exp(si) for si in s]
        a = [ei / sum(e) for ei in e]
        att = [sum(a[j] * v[j][t] for j in range(2)) for t in range(2)]
        expected.append([o + b for o, b in zip(mv(att, wo), bo)])

    params = {"wq": Tensor(wq), "wk": Tensor(wk), "wv": Tensor(wv), "wo": Tensor(wo), "bo": Tensor(bo)}
    out, _ = multi_head_attention(Tensor(x), Tensor(x), 1, params)
    np.testing.assert_allclose(out.data, expected, rtol=1e-12)


def test_attention_head_divisibility():
    with pytest.raises(ConfigError):
        MultiHeadAttention(6, 4, RngState(0))
    rng = np.random.default_rng(0)
    with pytest.raises(ConfigError):
        multi_head_attention(Tensor(np.ones((2, 6))), Tensor(np.ones((2, 6))), 4, _mha_params(rng, 6))


@pytest.mark.parametrize("point", range(10))
def test_attention_gradient(point):
    rng = np.random.default_rng(300 + point)
    x = rng.normal(size=(3, 4))
    ws = [rng.normal(size=(4, 4)) * 0.5 for _ in range(4)]
    bo = rng.normal(size=4)

    def f(x, wq, wk, wv, wo, bo):
        out, _ = multi_head_attention(x, x, 2, dict(wq=wq, wk=wk, wv=wv, wo=wo, bo=bo))
        return projection_loss(out)

    assert gradient_check(f, [x, *ws, bo]) < 1e-4


# -- dropout ------------------------------------------------------------------
def test_dropout_identities():
    x = Tensor(np.arange(6.0))
    assert dropout(x, 0.0, RngState(0), True) is x
    assert dropout(x, 0.7, RngState(0), False) is x


def test_dropout_rate_fraction():
    out = dropout(Tensor(np.ones(100_000)), 0.5, RngState(3), True).data
    zero_frac = np.mean(out == 0)
    assert abs(zero_frac - 0.5) < 0.01
    np.testing.assert_array_equal(np.unique(out), [0.0, 2.0])


def test_dropout_rejects_rate_one():
    with pytest.raises(ConfigError):
        dropout(Tensor(np.ones(3)), 1.0, RngState(0), True)


def test_rng_determinism():
    a = dropout(Tensor(np.ones(1000)), 0.3, RngState(42), True).data
    b = dropout(Tensor(np.ones(1000)), 0.3, RngState(42), True).data
    np.testing.assert_array_equal(a, b)
    la, lb = Linear(5, 3, RngState(9)), Linear(5, 3, RngState(9))
    np.testing.assert_array_equal(la.weight.data, lb.weight.data)
    r = RngState(1)
    r.random(3)
    r.normal(size=2)
    assert r.position == 2


# -- batch norm ---------------------------------------------------------------
def test_batch_norm_constant_column():
    bn = BatchNorm(2)
    out = bn(Tensor([[3.0, 1.0], [3.0, 2.0], [3.0, 3.0]]))
    np.testing.assert_array_equal(out.data[:, 0], 0.0)


def test_batch_norm_two_rows():
    bn = BatchNorm(1, eps=1e-5)
    out = bn(Tensor([[0.0], [2.0]]))
    np.testing.assert_allclose(out.data, [[-1 / math.sqrt(1 + 1e-5)], [1 / math.sqrt(1 + 1e-5)]])


def test_batch_norm_degenerate_batch():
    with pytest.raises(DegenerateBatchError):
        BatchNorm(3)(Tensor(np.ones((1, 3))))


def test_batch_norm_inference_deterministic():
    bn = BatchNorm(3)
    rng = np.random.default_rng(0)
    for _ in range(5):
        bn(Tensor(rng.normal(size=(8, 3))))
    bn.eval()
    x = Tensor(rng.normal(size=(1, 3)))
    np.testing.assert_array_equal(bn(x).data, bn(x).data)
    expected = (x.data - bn.running_mean) / np.sqrt(bn.running_var + bn.eps)
    np.testing.assert_allclose(bn(x).data, expected)


@pytest.mark.parametrize("point", range(10))
def test_batch_norm_gradient(point):
    rng = np.random.default_rng(400 + point)
    x, g, s = rng.normal(size=(5, 3)), rng.normal(size=3), rng.normal(size=3)
    f = lambda x, g, s: projection_loss(T.batch_norm_train(x, g, s)[0])
    assert gradient_check(f, [x, g, s]) < 1e-4


# -- cross entropy --------------------------------------------------------------
def test_cross_entropy_perfect():
    y = Tensor(np.eye(3))
    assert cross_entropy(y, np.arange(3)).item() == 0.0


def test_cross_entropy_uniform():
    y = Tensor(np.full((4, 3), 1 / 3))
    assert cross_entropy(y, [0, 1, 2, 1]).item() == pytest.approx(math.log(3), abs=1e-12)
    assert math.log(3) == pytest.approx(1.0986, abs=1e-4)


def test_cross_entropy_onehot_matches_index():
    rng = np.random.default_rng(0)
    y = softmax(Tensor(rng.normal(size=(4, 5))))
    labels = np.array([0, 4, 2, 2])
    assert cross_entropy(y, labels).item() == pytest.approx(cross_entropy(y, np.eye(5)[labels]).item())


def test_cross_entropy_floor_keeps_finite():
    y = Tensor([[1.0, 0.0]])
    assert cross_entropy(y, [1]).item() == pytest.approx(-math.log(1e-12))


def test_cross_entropy_label_range():
    with pytest.raises(DataError):
        cross_entropy(Tensor(np.full((2, 3), 1 / 3)), [0, 3])


@pytest.mark.parametrize("point", range(10))
def test_cross_entropy_gradient_through_softmax(point):
    rng = np.random.default_rng(500 + point)
    scores = rng.normal(size=(4, 3))
    labels = rng.integers(0, 3, size=4)
    assert gradient_check(lambda s: cross_entropy(softmax(s, axis=-1), labels), [scores]) < 1e-4


# -- misc kernel ops -------------------------------------------------------------
@pytest.mark.parametrize(
    "fn",
    [
        lambda a, b: projection_loss(T.gelu(a) * b),
        lambda a, b: projection_loss(T.tanh(a) / (b * b + 1.0)),
        lambda a, b: projection_loss(T.concat([a, b], axis=1).transpose() @ T.exp(b * 0.1)),
        lambda a, b: projection_loss(T.stack([a, b], axis=1)[:, 0] - T.mean(b, axis=0, keepdims=True)),
        lambda a, b: projection_loss(T.gather_rows(T.reshape(a, (1, 3, 4)), np.array([[2, 0]]))),
        lambda a, b: projection_loss(T.scatter_rows(T.reshape(b, (1, 3, 4)), np.array([[4, 1, 0]]), 5)),
    ],
)
def test_kernel_op_gradients(fn):
    rng = np.random.default_rng(11)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    assert gradient_check(fn, [a, b]) < 1e-4


def test_gradient_check_reports_non_finite():
    with pytest.raises(GradientCheckError):
        gradient_check(lambda x: T.log(x).sum(), [np.array([-1.0, 1.0])])


def test_parameter_names_unique():
    mha = MultiHeadAttention(4, 2, RngState(0))
    names = [n for n, _ in mha.named_parameters()]
    assert len(names) == len(set(names)) == 5


def test_checkpoint_round_trip(tmp_path):
    arrays = {"a.weight": np.arange(6.0).reshape(2, 3), "b": np.array([1, 2], dtype=np.int64),
              "c": np.ones(3, dtype=np.float32)}
    path = checkpoint.save(tmp_path / "x.ckpt", arrays, {"k": 1})
    loaded, meta = checkpoint.load(path)
    assert meta == {"k": 1}
    for k, v in arrays.items():
        np.testing.assert_array_equal(loaded[k], v)
        assert loaded[k].dtype == v.dtype
    assert path.read_bytes()[:8] == checkpoint.MAGIC


def test_checkpoint_errors(tmp_path):
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.load(tmp_path / "missing.ckpt")
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"not a checkpoint at all")
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.load(bad)


def test_module_state_dict_round_trip():
    a, b = Linear(3, 2, RngState(1)), Linear(3, 2, RngState(2))
    b.load_state_dict(a.state_dict())
    np.testing.assert_array_equal(a.weight.data, b.weight.data)
    with pytest.raises(KeyError):
        b.load_state_dict({"weight": a.weight.data})
