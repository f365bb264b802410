import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from xmodal.adapter import (Adapter, backward, decode_checkpoint, encode_checkpoint, forward, forward_pooled,
                            init_adapter, load_checkpoint, params_hash, save_checkpoint)
from xmodal.errors import CorruptFile, FormatError, InvalidCache, InvalidConfig, ShapeError
from xmodal.numerics import check_gradient, mean_pool


def one_d(w1=2.0, b1=0.0, w2=3.0, b2=1.0):
    return Adapter([[w1]], [b1], [[w2]], [b2])


def test_init_deterministic_and_bounded():
    a, b = init_adapter(2048, 512, 512, seed=5), init_adapter(2048, 512, 512, seed=5)
    for p, q in zip(a.params(), b.params()):
        np.testing.assert_array_equal(p, q)
    assert np.abs(a.W1).max() <= 1 / np.sqrt(2048)
    assert np.abs(a.W2).max() <= 1 / np.sqrt(512)
    assert not a.b1.any() and not a.b2.any()
    assert not np.array_equal(init_adapter(2048, 512, 512, seed=6).W1, a.W1)


@pytest.mark.parametrize("dims", [(0, 4, 4), (3, -1, 4), (3, 4, 0)])
def test_init_rejects_bad_dims(dims):
    with pytest.raises(InvalidConfig):
        init_adapter(*dims)


def test_zero_adapter_zero_output(rng):
    a = Adapter(np.zeros((4, 3)), np.zeros(4), np.zeros((2, 4)), np.zeros(2))
    out, _ = forward(a, rng.standard_normal((5, 3)))
    np.testing.assert_array_equal(out, [0, 0])


def test_forward_hand_example():
    out, cache = forward(one_d(), [[1.0], [3.0]])
    assert cache.pooled[0, 0] == 2.0
    assert cache.post[0, 0] == 4.0
    assert out[0] == 13.0


def test_dead_relu():
    out, _ = forward(one_d(w1=-1.0), [[2.0]])
    assert out[0] == 1.0


def test_backward_hand_example():
    a = one_d()
    _, cache = forward(a, [[1.0], [3.0]])
    g = backward(a, cache, [1.0])
    assert g.W2[0, 0] == 4.0 and g.b2[0] == 1.0
    assert g.W1[0, 0] == 6.0 and g.b1[0] == 3.0


def test_backward_zero_grad(rng):
    a = init_adapter(5, 4, 3, seed=0)
    _, cache = forward(a, rng.standard_normal((2, 5)))
    for g in backward(a, cache, np.zeros(3)).as_list():
        assert not g.any()


def test_relu_derivative_at_zero_is_zero():
    a = one_d(w1=0.0, b1=0.0)
    _, cache = forward(a, [[1.0]])
    g = backward(a, cache, [1.0])
    assert g.W1[0, 0] == 0.0 and g.b1[0] == 0.0


def test_stale_cache_rejected(rng):
    a = init_adapter(5, 4, 3, seed=0)
    _, cache = forward(a, rng.standard_normal((2, 5)))
    a.mark_updated()
    with pytest.raises(InvalidCache):
        backward(a, cache, np.ones(3))
    with pytest.raises(InvalidCache):
        backward(init_adapter(5, 4, 3, seed=0), cache, np.ones(3))


def test_shape_error():
    with pytest.raises(ShapeError):
        forward(init_adapter(5, 4, 3), np.ones((2, 4)))


def _squared_norm_error(a, seq):
    def f(vec):
        b = a.copy()
        b.set_flat(vec)
        out, _ = forward(b, seq)
        return float(out @ out)

    out, cache = forward(a, seq)
    return check_gradient(f, a.flat(), backward(a, cache, 2 * out).flat())


def test_gradient_random_adapter(rng):
    a = init_adapter(5, 4, 3, seed=11)
    a.b1 += 0.1 * rng.standard_normal(4)
    assert _squared_norm_error(a, rng.standard_normal((3, 5))) < 1e-4


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(1, 8), st.integers(1, 4), st.integers(0, 2**31))
def test_gradient_property(f, h, fo, t, seed):
    rng = np.random.default_rng(seed)
    a = init_adapter(f, h, fo, seed=seed)
    a.b1 += 0.1 * rng.standard_normal(h)
    seq = rng.standard_normal((t, f))
    _, cache = forward(a, seq)
    assume(np.abs(cache.pre).min() > 1e-2)  # central differences straddling a ReLU kink are meaningless
    assert _squared_norm_error(a, seq) < 1e-4


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 5), st.integers(0, 2**31))
def test_pool_first_equivalence_and_determinism(f, t, seed):
    rng = np.random.default_rng(seed)
    a = init_adapter(f, 7, 3, seed=seed)
    seq = rng.standard_normal((t, f))
    out, _ = forward(a, seq)
    again, _ = forward(a, seq)
    assert out.tobytes() == again.tobytes()
    pooled, _ = forward(a, mean_pool(seq)[None, :])
    np.testing.assert_array_equal(out, pooled)


def test_batched_forward_matches_single(rng):
    a = init_adapter(6, 5, 4, seed=2)
    x = rng.standard_normal((3, 6))
    batched, _ = forward_pooled(a, x)
    for i in range(3):
        np.testing.assert_allclose(batched[i], forward(a, x[i:i + 1])[0], rtol=1e-12)


def test_checkpoint_round_trip(tmp_path):
    ads = {"audio": init_adapter(6, 5, 4, seed=1), "text": init_adapter(3, 5, 4, seed=2)}
    meta = {"epoch": 12, "score": 0.139, "config_hash": "abc"}
    path = tmp_path / "c.xmck"
    save_checkpoint(path, ads, meta)
    back, meta2 = load_checkpoint(path)
    assert meta2 == meta and meta2["score"] == 0.139
    for tower in ads:
        for p, q in zip(ads[tower].params(), back[tower].params()):
            assert p.tobytes() == q.tobytes()
    assert params_hash(ads) == params_hash(back)


def test_checkpoint_errors():
    ads = {"audio": init_adapter(2, 2, 2), "text": init_adapter(2, 2, 2)}
    raw = encode_checkpoint(ads, {"epoch": 1})
    with pytest.raises(FormatError):
        decode_checkpoint(b"XXXX" + raw[4:])
    with pytest.raises(FormatError):
        decode_checkpoint(raw[:4] + b"\x02\x00" + raw[6:])
    with pytest.raises(CorruptFile):
        decode_checkpoint(raw[:-5])
    with pytest.raises(CorruptFile):
        decode_checkpoint(raw[:30])
