"""Writes scikit-learn's 8x8 handwritten digits as an IDX image/label pair.

Used as a stand-in for MNIST in the DNN smoke run when no MNIST files are
available. Pixel intensities 0..16 are rescaled to 0..255.
"""
import struct

import numpy as np
from sklearn.datasets import load_digits

digits = load_digits()
images = np.clip(np.rint(digits.images * 255.0 / 16.0), 0, 255).astype(np.uint8)
labels = digits.target.astype(np.uint8)
n, rows, cols = images.shape

with open("digits-images-idx3-ubyte", "wb") as f:
    f.write(struct.pack(">IIII", 0x803, n, rows, cols))
    f.write(images.tobytes())
with open("digits-labels-idx1-ubyte", "wb") as f:
    f.write(struct.pack(">II", 0x801, n))
    f.write(labels.tobytes())
