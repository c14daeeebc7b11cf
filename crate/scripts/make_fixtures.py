#!/usr/bin/env python3
"""Writes the 100-sample test fixtures under crates/core/tests/fixtures.

MNIST fixtures are the first 100 images of the official train and test
files in data/mnist. The CIFAR-10 fixture is synthetic: no CIFAR-10 files
ship with the repository, so 100 records of seeded noise (label k carries
a brighter k-th row band) exercise the binary layout.
"""
import gzip
import random
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
SRC = ROOT / "data" / "mnist"
DST = ROOT / "crates" / "core" / "tests" / "fixtures"
N = 100


def head_idx(name, header, record):
    raw = gzip.open(SRC / f"{name}.gz", "rb").read()
    out = bytearray(raw[:header])
    out[4:8] = N.to_bytes(4, "big")
    out += raw[header : header + N * record]
    (DST / "mnist" / name).write_bytes(bytes(out))


def cifar():
    rng = random.Random(2015)
    out = bytearray()
    for i in range(N):
        label = i % 10
        out.append(label)
        for c in range(3):
            for y in range(32):
                for x in range(32):
                    v = rng.randrange(0, 128)
                    if y // 3 == label:
                        v += 127
                    out.append(v)
    (DST / "cifar10" / "test_batch.bin").write_bytes(bytes(out))


def main():
    (DST / "mnist").mkdir(parents=True, exist_ok=True)
    (DST / "cifar10").mkdir(parents=True, exist_ok=True)
    for split in ("train", "t10k"):
        head_idx(f"{split}-images-idx3-ubyte", 16, 28 * 28)
        head_idx(f"{split}-labels-idx1-ubyte", 8, 1)
    cifar()


if __name__ == "__main__":
    main()
