#!/usr/bin/env python3
"""Build the bundled MNIST subset (gzipped IDX) from the `mnist` npm package.

The npm package ships 10,000 MNIST digits as per-class JSON arrays of
pixels scaled to [0, 1] with three decimals, i.e. round(byte / 255, 3),
which maps back to the original byte exactly.

Usage: npm pack mnist && tar xzf mnist-*.tgz
       python3 scripts/make_mnist_subset.py package/src/digits data/mnist-subset
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path

TRAIN_PER_CLASS = 500
TEST_PER_CLASS = 300
PIXELS = 28 * 28


def write_idx(path, magic, dims, payload):
    header = struct.pack(">I", magic) + b"".join(struct.pack(">I", d) for d in dims)
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(header + bytes(payload))


def main(src, dst):
    src, dst = Path(src), Path(dst)
    dst.mkdir(parents=True, exist_ok=True)
    train, test = [], []
    for digit in range(10):
        data = json.loads((src / f"{digit}.json").read_text())["data"]
        images = [data[i:i + PIXELS] for i in range(0, len(data), PIXELS)]
        need = TRAIN_PER_CLASS + TEST_PER_CLASS
        if len(images) < need:
            sys.exit(f"digit {digit}: only {len(images)} images, need {need}")
        as_bytes = [[round(v * 255) for v in img] for img in images]
        train += [(digit, img) for img in as_bytes[:TRAIN_PER_CLASS]]
        test += [(digit, img) for img in as_bytes[TRAIN_PER_CLASS:need]]
    rng = random.Random(20240101)
    rng.shuffle(train)
    rng.shuffle(test)
    for name, rows in (("train", train), ("t10k", test)):
        pixels = [p for _, img in rows for p in img]
        write_idx(dst / f"{name}-images-idx3-ubyte.gz", 2051, (len(rows), 28, 28), pixels)
        write_idx(dst / f"{name}-labels-idx1-ubyte.gz", 2049, (len(rows),), [d for d, _ in rows])
        print(f"{name}: {len(rows)} samples")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
