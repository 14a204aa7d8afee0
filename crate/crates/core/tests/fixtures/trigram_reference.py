#!/usr/bin/env python3
"""Standalone reference for the hashed character-trigram text encoder.

Produces the frozen vectors asserted in tests/encoder_reference.rs.
Usage: python3 trigram_reference.py <dim> <seed> <text>...
"""
import math
import sys

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
MASK = (1 << 64) - 1
BOS, EOS = "\x02", "\x03"


def fnv1a(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * FNV_PRIME) & MASK
    return h


def encode(text: str, dim: int, seed: int):
    norm = " ".join(text.strip().lower().split())
    if not norm:
        raise ValueError("empty")
    chars = [BOS] + list(norm) + [EOS]
    vec = [0.0] * dim
    hashes = []
    for i in range(len(chars) - 2):
        gram = "".join(chars[i : i + 3]).encode("utf-8")
        h = fnv1a(seed.to_bytes(8, "little") + gram)
        hashes.append(h)
        vec[h % dim] += -1.0 if (h >> 63) & 1 else 1.0
    if all(v == 0.0 for v in vec):
        for h in hashes:
            vec[h % dim] += 1.0
    n = math.sqrt(sum(v * v for v in vec))
    return [v / n for v in vec]


if __name__ == "__main__":
    dim, seed = int(sys.argv[1]), int(sys.argv[2])
    for text in sys.argv[3:]:
        print(repr(text), [repr(v) for v in encode(text, dim, seed)])
