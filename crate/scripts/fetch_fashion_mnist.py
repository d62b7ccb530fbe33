#!/usr/bin/env python3
"""Writes a reduced, class-balanced Fashion-MNIST in gzipped IDX format.

The images come from the `fashion-mnist` npm package (one JSON file of raw
28x28 uint8 images per class). Usage:

    python3 scripts/fetch_fashion_mnist.py [out_dir] [train_per_class] [test_per_class]
"""

import gzip
import json
import random
import struct
import subprocess
import sys
import tarfile
import tempfile
from pathlib import Path


def write_images(path, images):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))


def write_labels(path, labels):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(bytes(labels))


def main():
    out = Path(sys.argv[1] if len(sys.argv) > 1 else "data/fashion-mnist")
    n_train = int(sys.argv[2]) if len(sys.argv) > 2 else 1200
    n_test = int(sys.argv[3]) if len(sys.argv) > 3 else 300
    out.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(["npm", "pack", "fashion-mnist@1.1.0"], cwd=tmp, check=True, capture_output=True)
        with tarfile.open(next(Path(tmp).glob("fashion-mnist-*.tgz"))) as tar:
            tar.extractall(tmp, filter="data")
        per_class = [
            json.loads((Path(tmp) / "package/src/clothes" / f"{c}.json").read_text())["data"] for c in range(10)
        ]
    rng = random.Random(0)
    train, test = [], []
    for c, images in enumerate(per_class):
        picked = rng.sample(range(len(images)), n_train + n_test)
        train += [(images[i], c) for i in picked[:n_train]]
        test += [(images[i], c) for i in picked[n_train:]]
    rng.shuffle(train)
    rng.shuffle(test)
    for name, rows in [("train", train), ("t10k", test)]:
        write_images(out / f"{name}-images-idx3-ubyte.gz", [img for img, _ in rows])
        write_labels(out / f"{name}-labels-idx1-ubyte.gz", [c for _, c in rows])
    print(f"wrote {len(train)} train and {len(test)} test images to {out}")


if __name__ == "__main__":
    main()
