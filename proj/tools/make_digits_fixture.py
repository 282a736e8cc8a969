#!/usr/bin/env python3
"""Regenerate the 8x8 handwritten-digit IDX fixtures under tests/data/.

Exports the first 1200 samples of sklearn's bundled digits dataset
(NIST-derived, 8x8, intensities 0..16 rescaled to 0..255) in the classic
IDX image/label format the loader understands.
"""

import pathlib
import struct

import numpy as np
from sklearn.datasets import load_digits

OUT = pathlib.Path(__file__).resolve().parent.parent / "tests" / "data"
N = 1200


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    d = load_digits()
    images = np.clip(np.round(d.images[:N] * 255.0 / 16.0), 0, 255).astype(np.uint8)
    labels = d.target[:N].astype(np.uint8)

    with open(OUT / "digits-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 8, 8))
        f.write(images.tobytes())
    with open(OUT / "digits-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.tobytes())
    print(f"wrote {len(images)} images to {OUT}")


if __name__ == "__main__":
    main()
