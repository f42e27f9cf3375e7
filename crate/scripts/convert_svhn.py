#!/usr/bin/env python3
"""Convert the cropped-digit house-number .mat files to the flat 3073-byte
record layout the `cmsc` loader reads (1 label byte + 3072 pixel bytes in
channel-planar R, G, B order, 32x32 row-major per channel).

Usage:
    python3 scripts/convert_svhn.py train_32x32.mat train.bin
    python3 scripts/convert_svhn.py test_32x32.mat  test.bin

Labels in the source use 10 for digit zero; they are remapped to 0 so all
labels fall in [0, 10). Requires scipy and numpy.
"""

import sys

import numpy as np
import scipy.io


def convert(src: str, dst: str) -> None:
    mat = scipy.io.loadmat(src)
    images = mat["X"]  # (32, 32, 3, n) uint8
    labels = mat["y"].flatten().astype(np.int64)  # 1..10, 10 means digit 0
    labels = np.where(labels == 10, 0, labels).astype(np.uint8)
    n = images.shape[3]
    with open(dst, "wb") as out:
        for i in range(n):
            out.write(bytes([labels[i]]))
            # (32, 32, 3) -> channel-planar, row-major within each channel
            img = images[:, :, :, i]
            for c in range(3):
                out.write(img[:, :, c].astype(np.uint8).tobytes())
    print(f"{dst}: {n} records written")


if __name__ == "__main__":
    if len(sys.argv) != 3:
        print(__doc__)
        sys.exit(2)
    convert(sys.argv[1], sys.argv[2])
