"""Dense arrays, seeded randomness and the CFT1 tensor file format.

Grids and matrices are plain 2-D ``numpy.ndarray`` objects in float64; the
helpers here only validate them.  All randomness flows through
:class:`SeededRng`, a thin wrapper over numpy's Philox counter-based bit
generator, so streams are identical across runs and platforms.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MASK64 = (1 << 64) - 1

CFT_MAGIC = b"CFT1"
DTYPE_F32 = 0
DTYPE_U8 = 1
DTYPE_I32 = 2
_CODE_TO_DTYPE = {
    DTYPE_F32: np.dtype("<f4"),
    DTYPE_U8: np.dtype("u1"),
    DTYPE_I32: np.dtype("<i4"),
}


class ShapeError(ValueError):
    pass


class TensorFormatError(ValueError):
    pass


class BadMagicError(TensorFormatError):
    pass


class TruncatedTensorError(TensorFormatError):
    pass


class UnknownDtypeError(TensorFormatError):
    pass


def as_grid(values, *, name: str = "grid") -> np.ndarray:
    """Return ``values`` as a finite float64 (height, width) array."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name}: expected a 2-D grid, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: non-finite values")
    return arr


def as_matrix(values, *, name: str = "matrix") -> np.ndarray:
    return as_grid(values, name=name)


def same_shape(*arrays, names=None) -> None:
    shapes = {np.shape(a) for a in arrays}
    if len(shapes) > 1:
        label = ", ".join(names) if names else "inputs"
        raise ShapeError(f"{label}: shape mismatch {[np.shape(a) for a in arrays]}")


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, name="a")
    b = as_matrix(b, name="b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} x {b.shape} is not conformable")
    return a @ b


# --------------------------------------------------------------------------
# randomness


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def derive_seed(seed: int, *keys) -> int:
    """Mix ``seed`` with integer or string keys into a child 64-bit seed.

    Each key is folded in as ``h = splitmix64(h ^ k)`` where strings are
    first reduced to an integer with FNV-1a (64 bit).
    """
    h = splitmix64(int(seed) & MASK64)
    for key in keys:
        if isinstance(key, str):
            k = 0xCBF29CE484222325
            for byte in key.encode("utf-8"):
                k = ((k ^ byte) * 0x100000001B3) & MASK64
        else:
            k = int(key) & MASK64
        h = splitmix64(h ^ k)
    return h


class SeededRng:
    """Philox-4x64 stream keyed by a 64-bit seed; ``split`` derives children."""

    def __init__(self, seed: int):
        self.seed = int(seed) & MASK64
        self._gen = np.random.Generator(np.random.Philox(key=self.seed))

    def split(self, *keys) -> "SeededRng":
        return SeededRng(derive_seed(self.seed, *keys))

    def normal(self, mu=0.0, sigma=1.0, size=None):
        return self._gen.normal(mu, sigma, size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def random(self, size=None):
        return self._gen.random(size)

    def choice(self, a, size=None, replace=True, p=None):
        return self._gen.choice(a, size=size, replace=replace, p=p)

    def permutation(self, x):
        return self._gen.permutation(x)

    def __repr__(self):
        return f"SeededRng(seed={self.seed})"


def gaussian_sample(rng: SeededRng, mu: float, sigma: float, n: int) -> np.ndarray:
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return np.full(int(n), float(mu))
    return rng.normal(mu, sigma, int(n))


# --------------------------------------------------------------------------
# CFT1 tensor files


def _infer_code(arr: np.ndarray) -> int:
    if arr.dtype == np.bool_ or arr.dtype == np.uint8:
        return DTYPE_U8
    if np.issubdtype(arr.dtype, np.integer):
        return DTYPE_I32
    return DTYPE_F32


def encode_tensor(array, dtype_code: int | None = None) -> bytes:
    arr = np.asarray(array)
    if not 1 <= arr.ndim <= 4:
        raise ShapeError(f"CFT1 supports ranks 1-4, got {arr.ndim}")
    code = _infer_code(arr) if dtype_code is None else int(dtype_code)
    if code not in _CODE_TO_DTYPE:
        raise UnknownDtypeError(f"unknown dtype code {code}")
    header = CFT_MAGIC + struct.pack("<BB", code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    payload = np.ascontiguousarray(arr, dtype=_CODE_TO_DTYPE[code]).tobytes()
    return header + payload


def decode_tensor(data: bytes) -> np.ndarray:
    if len(data) < 4 or data[:4] != CFT_MAGIC:
        raise BadMagicError("bad magic: not a CFT1 tensor")
    if len(data) < 6:
        raise TruncatedTensorError("truncated header")
    code, rank = data[4], data[5]
    if code not in _CODE_TO_DTYPE:
        raise UnknownDtypeError(f"unknown dtype code {code}")
    if not 1 <= rank <= 4:
        raise TensorFormatError(f"invalid rank {rank}")
    end = 6 + 4 * rank
    if len(data) < end:
        raise TruncatedTensorError("truncated dims")
    dims = struct.unpack(f"<{rank}I", data[6:end])
    dtype = _CODE_TO_DTYPE[code]
    nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(data) < end + nbytes:
        raise TruncatedTensorError(f"payload truncated: need {nbytes} bytes, have {len(data) - end}")
    if len(data) > end + nbytes:
        raise TensorFormatError("trailing bytes after payload")
    return np.frombuffer(data, dtype=dtype, count=int(np.prod(dims)), offset=end).reshape(dims).copy()


def write_tensor(path, array, dtype_code: int | None = None) -> None:
    Path(path).write_bytes(encode_tensor(array, dtype_code))


def read_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())
