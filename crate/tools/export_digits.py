#!/usr/bin/env python3
"""Export the scikit-learn 8x8 handwritten digits to IDX files.

Writes gzipped IDX image/label pairs (train and held-out splits) under
data/digits/. Pixel values are rescaled from 0..16 to 0..255 bytes.
Deterministic: fixed split (every 6th sample held out), gzip mtime=0.
"""
import gzip
import struct
import sys
from pathlib import Path

import numpy as np
from sklearn.datasets import load_digits


def write_images(path: Path, arr: np.ndarray) -> None:
    n, h, w = arr.shape
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, n, h, w))
        f.write(arr.tobytes())


def write_labels(path: Path, arr: np.ndarray) -> None:
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, len(arr)))
        f.write(arr.tobytes())


def main() -> None:
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("data/digits")
    out.mkdir(parents=True, exist_ok=True)
    d = load_digits()
    pix = np.round(d.images * (255.0 / 16.0)).clip(0, 255).astype(np.uint8)
    labels = d.target.astype(np.uint8)
    test = np.arange(len(labels)) % 6 == 0
    write_images(out / "train-images-idx3-ubyte.gz", pix[~test])
    write_labels(out / "train-labels-idx1-ubyte.gz", labels[~test])
    write_images(out / "test-images-idx3-ubyte.gz", pix[test])
    write_labels(out / "test-labels-idx1-ubyte.gz", labels[test])
    for name, y in (("train", labels[~test]), ("test", labels[test])):
        counts = np.bincount(y, minlength=10)
        print(f"{name}: n={len(y)} class counts={counts.tolist()}")


if __name__ == "__main__":
    main()
