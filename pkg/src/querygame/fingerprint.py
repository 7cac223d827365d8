"""Probabilistic content fingerprints for query images.

A fingerprint is the set of the `top_k` numerically smallest salted window
hashes taken over the quantized, flattened image: quantize every intensity to
a multiple of `quant_step`, slide a length-`window` byte window across the
flattened stream, hash each window with SHA-256 (salt prepended, digest
truncated to 64 bits), and keep the `top_k` smallest distinct values. Two
fingerprints match when they share at least `match_threshold` hash values.

Hashing is the hot loop: ~3,000 digests per CIFAR-sized image. A compiled
kernel (querygame._winhash, Cython + OpenSSL) is used when available and a
pure hashlib implementation otherwise; both produce bit-identical hashes.
Select explicitly with the QUERYGAME_FINGERPRINT env var ("fast"/"pure").
"""

import hashlib
import os
from dataclasses import dataclass

import numpy as np

try:
    from . import _winhash
except ImportError:
    _winhash = None

_BACKEND_ENV = "QUERYGAME_FINGERPRINT"


@dataclass(frozen=True)
class BlacklightParams:
    """Fingerprint and matching parameters.

    Defaults are calibrated so that consecutive PGD round candidates (l-inf
    gap <= 4/255) collide while streams of distinct images produce zero
    false-positive collisions; see tests/test_acceptance.py.
    """

    quant_step: float = 48.0 / 255.0
    window: int = 20
    top_k: int = 50
    match_threshold: int = 9
    salt_len: int = 16

    def __post_init__(self):
        if not 0.0 < self.quant_step <= 1.0:
            raise ValueError("quant_step must be in (0, 1]")
        if self.window < 1:
            raise ValueError("window must be positive")
        if self.top_k < 1:
            raise ValueError("top_k must be positive")
        if self.salt_len < 0:
            raise ValueError("salt_len must be non-negative")


def available_backends():
    backends = ["pure"]
    if _winhash is not None:
        backends.insert(0, "fast")
    return tuple(backends)


def default_backend() -> str:
    env = os.environ.get(_BACKEND_ENV, "auto")
    if env not in ("auto", "fast", "pure"):
        raise ValueError(f"{_BACKEND_ENV} must be auto, fast, or pure, not {env!r}")
    if env == "auto":
        return "fast" if _winhash is not None else "pure"
    if env == "fast" and _winhash is None:
        raise RuntimeError("fast fingerprint backend requested but the "
                           "compiled querygame._winhash extension is not installed")
    return env


def quantize(image: np.ndarray, quant_step: float) -> np.ndarray:
    """Quantize intensities to bin indices; returns a flat uint8 stream."""
    bins = np.round(np.asarray(image, dtype=np.float64) / quant_step)
    if bins.size and bins.max() > 255:
        raise ValueError(f"quant_step {quant_step} yields more than 256 bins")
    return bins.astype(np.uint8).reshape(-1)


def _window_hashes_pure(data: np.ndarray, salt: bytes, window: int) -> np.ndarray:
    buf = data.tobytes()
    n = len(buf) - window + 1
    if n <= 0:
        return np.empty(0, dtype=np.uint64)
    sha256 = hashlib.sha256
    return np.fromiter(
        (int.from_bytes(sha256(salt + buf[i:i + window]).digest()[:8], "big")
         for i in range(n)),
        dtype=np.uint64, count=n)


MAX_HASH_PREFIX = 192  # salt length + window width bound shared by both backends


def window_hashes(data: np.ndarray, salt: bytes, window: int,
                  backend: str = None) -> np.ndarray:
    """Salted 64-bit hash of every length-`window` window of a uint8 stream."""
    if window < 1:
        raise ValueError("window width must be positive")
    if len(salt) + window > MAX_HASH_PREFIX:
        raise ValueError(f"salt length + window width must be <= {MAX_HASH_PREFIX}")
    data = np.ascontiguousarray(data, dtype=np.uint8)
    backend = backend or default_backend()
    if backend == "fast":
        if _winhash is None:
            raise RuntimeError("compiled fingerprint backend unavailable")
        return _winhash.window_hashes(data, salt, window)
    if backend == "pure":
        return _window_hashes_pure(data, salt, window)
    raise ValueError(f"unknown fingerprint backend {backend!r}")


def fingerprint(image: np.ndarray, salt: bytes,
                params: BlacklightParams = BlacklightParams(),
                backend: str = None) -> np.ndarray:
    """Fingerprint of one image: sorted array of <= top_k distinct hashes."""
    stream = quantize(image, params.quant_step)
    hashes = window_hashes(stream, salt, params.window, backend=backend)
    return np.unique(hashes)[:params.top_k]


def shared_hash_count(a: np.ndarray, b: np.ndarray) -> int:
    """Number of hash values two fingerprints have in common."""
    return int(np.intersect1d(a, b, assume_unique=True).size)
