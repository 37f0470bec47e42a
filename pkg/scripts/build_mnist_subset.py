"""Convert the digit samples bundled in the npm ``mnist`` package to IDX files.

The npm package stores 10,000 MNIST digits as ``byte / 255`` rounded to three
decimals, which round-trips to the original bytes exactly.

    npm pack mnist && tar xzf mnist-*.tgz
    python scripts/build_mnist_subset.py package/src/digits tests/data/mnist-subset
"""

from __future__ import annotations

import argparse
import gzip
import json
from pathlib import Path

import numpy as np

from cpabaug.dataset_io import write_idx_images, write_idx_labels


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("digits_dir", type=Path)
    parser.add_argument("out_prefix")
    args = parser.parse_args()

    images, labels = [], []
    for digit in range(10):
        data = np.array(json.loads((args.digits_dir / f"{digit}.json").read_text())["data"])
        raw = np.round(data * 255.0)
        if np.abs(raw / 255.0 - data).max() > 5e-4 + 1e-12:
            raise SystemExit(f"digit {digit}: values are not rounded byte intensities")
        block = raw.reshape(-1, 28, 28) / 255.0
        images.append(block)
        labels.append(np.full(len(block), digit))
    images = np.concatenate(images)
    labels = np.concatenate(labels)

    for suffix, writer, payload in (
        ("images-idx3-ubyte", write_idx_images, images),
        ("labels-idx1-ubyte", write_idx_labels, labels),
    ):
        plain = Path(f"{args.out_prefix}-{suffix}")
        writer(payload, plain)
        with open(plain, "rb") as src, gzip.GzipFile(f"{plain}.gz", "wb", mtime=0) as dst:
            dst.write(src.read())
        plain.unlink()
    print(f"wrote {len(images)} images to {args.out_prefix}-*.gz")


if __name__ == "__main__":
    main()
