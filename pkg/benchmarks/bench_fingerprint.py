#!/usr/bin/env python3
"""Benchmark the fingerprint backends: compiled kernel vs pure hashlib.

The sliding-window hashing dominates detector runtime (~3,000 SHA-256
digests per CIFAR-sized image), so this is the loop the optional Cython
extension exists for. Also verifies both backends agree bit-for-bit on the
benchmark inputs.

Usage: python benchmarks/bench_fingerprint.py [--images N] [--repeats R]
"""

import argparse
import time

import numpy as np

from querygame.fingerprint import (BlacklightParams, available_backends,
                                   fingerprint)


def bench(backend: str, images, salt: bytes, params, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        for image in images:
            fingerprint(image, salt, params, backend=backend)
        best = min(best, time.perf_counter() - start)
    return best


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--images", type=int, default=50)
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    images = rng.random((args.images, 32, 32, 3)).astype(np.float32)
    params = BlacklightParams()
    salt = rng.bytes(params.salt_len)

    backends = available_backends()
    print(f"backends available: {', '.join(backends)}")
    if "fast" in backends:
        mismatches = sum(
            not np.array_equal(fingerprint(img, salt, params, backend="fast"),
                               fingerprint(img, salt, params, backend="pure"))
            for img in images[:10])
        print(f"fast/pure agreement on {min(10, len(images))} images: "
              f"{'OK' if mismatches == 0 else f'{mismatches} MISMATCHES'}")

    results = {}
    for backend in backends:
        elapsed = bench(backend, images, salt, params, args.repeats)
        per_image = elapsed / len(images) * 1000
        results[backend] = per_image
        print(f"{backend:5s}: {per_image:7.3f} ms/image "
              f"({len(images) / elapsed:7.1f} images/s; "
              f"10k-image study ~{per_image * 10:.0f}s)")
    if len(results) == 2:
        print(f"speedup: {results['pure'] / results['fast']:.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
