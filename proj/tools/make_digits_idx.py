#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Write the 8x8 handwritten digits set as an IDX image/label pair.

usage: make_digits_idx.py OUT_DIR
Writes OUT_DIR/images.idx (uint8, N x 1 x 8 x 8) and OUT_DIR/labels.idx.
"""
import argparse
import pathlib
import struct

import numpy as np
from sklearn.datasets import load_digits


def write_idx(path, array):
    array = np.ascontiguousarray(array, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">BBBB", 0, 0, 0x08, array.ndim))
        f.write(struct.pack(">" + "I" * array.ndim, *array.shape))
        f.write(array.tobytes())


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out_dir", type=pathlib.Path)
    args = ap.parse_args()
    digits = load_digits()
    # pixel range is 0..16
    images = np.rint(digits.images * (255.0 / 16.0)).astype(np.uint8)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    write_idx(args.out_dir / "images.idx", images.reshape(-1, 1, 8, 8))
    write_idx(args.out_dir / "labels.idx", digits.target)
    print(f"wrote {len(images)} samples to {args.out_dir}")


if __name__ == "__main__":
    main()
