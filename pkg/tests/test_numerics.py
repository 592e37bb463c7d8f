import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from contactcast.numerics import (DTYPE_F32, DTYPE_I32, DTYPE_U8, BadMagicError, SeededRng, ShapeError,
                                  TensorFormatError, TruncatedTensorError, UnknownDtypeError, decode_tensor,
                                  derive_seed, encode_tensor, gaussian_sample, matmul, read_tensor,
                                  splitmix64, write_tensor)


def test_matmul_examples():
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(matmul(np.eye(2), m), m)
    assert np.array_equal(matmul(m, [[0.0], [1.0]]), [[2.0], [4.0]])


def test_matmul_triple_loop_oracle():
    rng = np.random.default_rng(0)
    a, b = rng.integers(-9, 9, (7, 5)).astype(float), rng.integers(-9, 9, (5, 3)).astype(float)
    ref = np.zeros((7, 3))
    for i in range(7):
        for j in range(3):
            for k in range(5):
                ref[i, j] += a[i, k] * b[k, j]
    assert np.array_equal(matmul(a, b), ref)


def test_matmul_rejects_bad_shapes():
    with pytest.raises(ShapeError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(0, 2 ** 32 - 1))
def test_matmul_associative(n, k, m, p, seed):
    rng = np.random.default_rng(seed)
    a, b, c = rng.normal(size=(n, k)), rng.normal(size=(k, m)), rng.normal(size=(m, p))
    lhs, rhs = matmul(matmul(a, b), c), matmul(a, matmul(b, c))
    assert np.linalg.norm(lhs - rhs) <= 1e-9 * max(1.0, np.linalg.norm(lhs))


def test_gaussian_sample():
    rng = SeededRng(1)
    assert gaussian_sample(rng, 0, 0, 4).tolist() == [0, 0, 0, 0]
    assert gaussian_sample(rng, 5, 0, 1).tolist() == [5]
    x = gaussian_sample(rng, 0, 1, 100_000)
    assert abs(x.mean()) < 0.02 and abs(x.std() - 1) < 0.02
    with pytest.raises(ValueError):
        gaussian_sample(rng, 0, -1, 3)


def test_rng_determinism_and_split():
    a, b = SeededRng(42), SeededRng(42)
    assert np.array_equal(a.random(10_000), b.random(10_000))
    assert SeededRng(42).split("x").seed == SeededRng(42).split("x").seed
    assert SeededRng(42).split("x").seed != SeededRng(42).split("y").seed
    assert derive_seed(42, 1) != derive_seed(42, "1")


def test_splitmix64_reference_values():
    # first outputs of the reference generator seeded with 0
    state, out = 0, []
    for _ in range(2):
        out.append(splitmix64(state))
        state = (state + 0x9E3779B97F4A7C15) & ((1 << 64) - 1)
    assert out == [0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4]


def test_tensor_round_trip_example(tmp_path):
    g = np.arange(9, dtype=np.float32).reshape(3, 3)
    write_tensor(tmp_path / "g.cft", g)
    assert np.array_equal(read_tensor(tmp_path / "g.cft"), g)


@given(st.sampled_from([np.float32, np.uint8, np.int32]),
       hnp.array_shapes(min_dims=1, max_dims=4, min_side=0, max_side=5), st.integers(0, 2 ** 32 - 1))
def test_tensor_round_trip_bit_exact(dtype, shape, seed):
    rng = np.random.default_rng(seed)
    if dtype is np.float32:
        arr = rng.normal(size=shape).astype(np.float32)
    else:
        arr = rng.integers(0, 200, shape).astype(dtype)
    back = decode_tensor(encode_tensor(arr))
    assert back.dtype == np.dtype(dtype) and back.shape == arr.shape
    assert back.tobytes() == arr.tobytes()


def test_thousand_random_grids_round_trip():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        g = rng.normal(size=tuple(rng.integers(1, 6, 2))).astype(np.float32)
        assert decode_tensor(encode_tensor(g)).tobytes() == g.tobytes()


def test_tensor_header_layout():
    blob = encode_tensor(np.array([[1, 2, 3]], dtype=np.uint8))
    assert blob[:4] == b"CFT1" and blob[4] == DTYPE_U8 and blob[5] == 2
    assert blob[6:14] == (1).to_bytes(4, "little") + (3).to_bytes(4, "little")
    assert blob[14:] == bytes([1, 2, 3])
    assert encode_tensor(np.zeros(2, dtype=np.int64))[4] == DTYPE_I32
    assert encode_tensor(np.zeros(2))[4] == DTYPE_F32


def test_tensor_errors_are_distinct(tmp_path):
    (tmp_path / "empty.cft").write_bytes(b"")
    with pytest.raises(BadMagicError):
        read_tensor(tmp_path / "empty.cft")
    blob = encode_tensor(np.ones((2, 2), dtype=np.float32))
    with pytest.raises(TruncatedTensorError):
        decode_tensor(blob[:-1])
    with pytest.raises(TruncatedTensorError):
        decode_tensor(blob[:8])
    with pytest.raises(UnknownDtypeError):
        decode_tensor(blob[:4] + bytes([9]) + blob[5:])
    with pytest.raises(TensorFormatError):
        decode_tensor(blob + b"\0")
    with pytest.raises(ShapeError):
        encode_tensor(np.zeros((1, 1, 1, 1, 1)))
    assert not issubclass(BadMagicError, TruncatedTensorError)
