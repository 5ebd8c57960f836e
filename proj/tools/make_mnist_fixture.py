#!/usr/bin/env python3
"""Build the small MNIST IDX fixture used by the training smoke tests.

The 5000-image MNIST subset shipped inside the mlxtend wheel is converted to
standard IDX files holding digits 0 and 1 only:

    train-images-idx3-ubyte / train-labels-idx1-ubyte   150 images per digit
    t10k-images-idx3-ubyte  / t10k-labels-idx1-ubyte    100 images per digit

Usage:
    pip download mlxtend --no-deps -d /tmp/mlx
    python3 tools/make_mnist_fixture.py /tmp/mlx/mlxtend-*.whl tests/data/mnist_subset
"""
import gzip
import io
import pathlib
import struct
import sys
import zipfile

import numpy as np

DIGITS = (0, 1)
TRAIN_PER_DIGIT = 150
TEST_PER_DIGIT = 100


def write_idx(out_dir, prefix, images, labels):
    n = len(labels)
    with open(out_dir / f"{prefix}-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
        f.write(images.astype(np.uint8).tobytes())
    with open(out_dir / f"{prefix}-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(labels.astype(np.uint8).tobytes())


def main():
    wheel, out_dir = sys.argv[1], pathlib.Path(sys.argv[2])
    out_dir.mkdir(parents=True, exist_ok=True)
    raw = zipfile.ZipFile(wheel).read("mlxtend/data/data/mnist_5k.csv.gz")
    table = np.loadtxt(io.BytesIO(gzip.decompress(raw)), delimiter=",")
    pixels, labels = table[:, :-1].astype(np.uint8), table[:, -1].astype(int)

    train_idx, test_idx = [], []
    for d in DIGITS:
        idx = np.flatnonzero(labels == d)
        train_idx.extend(idx[:TRAIN_PER_DIGIT])
        test_idx.extend(idx[TRAIN_PER_DIGIT:TRAIN_PER_DIGIT + TEST_PER_DIGIT])
    # Keep the source order so classes interleave as in the original file.
    train_idx.sort()
    test_idx.sort()
    write_idx(out_dir, "train", pixels[train_idx], labels[train_idx])
    write_idx(out_dir, "t10k", pixels[test_idx], labels[test_idx])


if __name__ == "__main__":
    main()
