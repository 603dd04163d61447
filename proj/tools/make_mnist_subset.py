#!/usr/bin/env python3
"""Convert the 10,000-digit MNIST sample shipped in the `mnist` npm package
(src/digits/<d>.json, values stored as round(byte / 255, 3)) into gzipped IDX
files split 9000 train / 1000 test.

usage: make_mnist_subset.py <path-to-npm-package> <out-dir>
"""
import gzip
import json
import struct
import sys
from pathlib import Path

import numpy as np


def write_idx(path, array):
    array = np.ascontiguousarray(array, dtype=np.uint8)
    header = struct.pack(">HBB", 0, 0x08, array.ndim)
    header += b"".join(struct.pack(">I", d) for d in array.shape)
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(header + array.tobytes())


def main():
    pkg, out = Path(sys.argv[1]), Path(sys.argv[2])
    images, labels = [], []
    for digit in range(10):
        raw = np.asarray(json.loads((pkg / "src" / "digits" / f"{digit}.json").read_text())["data"])
        n = raw.size // 784
        images.append(np.rint(raw[: n * 784].reshape(n, 28, 28) * 255.0))
        labels += [digit] * n
    images = np.concatenate(images).astype(np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    order = np.random.default_rng(20151207).permutation(len(labels))
    images, labels = images[order], labels[order]
    out.mkdir(parents=True, exist_ok=True)
    write_idx(out / "train-images-idx3-ubyte.gz", images[:9000])
    write_idx(out / "train-labels-idx1-ubyte.gz", labels[:9000])
    write_idx(out / "t10k-images-idx3-ubyte.gz", images[9000:])
    write_idx(out / "t10k-labels-idx1-ubyte.gz", labels[9000:])


if __name__ == "__main__":
    main()
