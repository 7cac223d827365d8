# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled sliding-window hash kernel.

Computes SHA-256(salt || window) truncated to the leading 8 bytes for every
length-`width` window of a byte stream, using OpenSSL's one-shot SHA-256
(stack context, no per-call allocation). Must stay bit-identical to the
hashlib fallback in querygame.fingerprint.
"""

import numpy as np

cimport numpy as cnp
from libc.string cimport memcpy

cdef extern from *:
    """
    #define OPENSSL_API_COMPAT 0x10100000L
    #define OPENSSL_SUPPRESS_DEPRECATED 1
    #include <openssl/sha.h>
    """
    ctypedef struct SHA256_CTX:
        pass
    int SHA256_Init(SHA256_CTX *c)
    int SHA256_Update(SHA256_CTX *c, const void *data, size_t n)
    int SHA256_Final(unsigned char *md, SHA256_CTX *c)

DEF MAX_PREFIX = 192


def window_hashes(const unsigned char[::1] data, bytes salt, int width):
    """Return a uint64 array of salted window hashes, one per window position."""
    cdef Py_ssize_t salt_len = len(salt)
    if width < 1:
        raise ValueError("window width must be positive")
    if salt_len + width > MAX_PREFIX:
        raise ValueError(f"salt length + window width must be <= {MAX_PREFIX}")
    cdef Py_ssize_t n = data.shape[0] - width + 1
    if n <= 0:
        return np.empty(0, dtype=np.uint64)
    cdef cnp.ndarray[cnp.uint64_t, ndim=1] out = np.empty(n, dtype=np.uint64)
    cdef const unsigned char* salt_ptr = salt
    cdef unsigned char buf[MAX_PREFIX]
    cdef unsigned char md[32]
    cdef SHA256_CTX ctx
    cdef Py_ssize_t i
    cdef int j
    cdef unsigned long long h
    memcpy(buf, salt_ptr, salt_len)
    for i in range(n):
        memcpy(buf + salt_len, &data[i], width)
        SHA256_Init(&ctx)
        SHA256_Update(&ctx, buf, salt_len + width)
        SHA256_Final(md, &ctx)
        h = 0
        for j in range(8):
            h = (h << 8) | md[j]
        out[i] = h
    return out
