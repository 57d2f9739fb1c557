"""Binary PGM (P5) reading and writing, maxval 255.

Used for phantom images, prediction masks, and offset heatmaps. Grayscale
only; values are uint8.
"""

import numpy as np


def write_pgm(path, img):
    """Write a 2d uint8 array as binary PGM."""
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError(f"PGM image must be 2d, got shape {img.shape}")
    if img.dtype != np.uint8:
        if img.min() < 0 or img.max() > 255:
            raise ValueError("PGM values must lie in [0, 255]")
        img = img.astype(np.uint8)
    h, w = img.shape
    try:
        with open(path, "wb") as f:
            f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
            f.write(img.tobytes())
    except OSError as e:
        raise OSError(f"PGM write failed for {path}: {e}") from e
    return path


def read_pgm(path):
    """Read a binary PGM written by write_pgm (single whitespace tokens, maxval 255)."""
    with open(path, "rb") as f:
        data = f.read()
    # Header: magic, width, height, maxval as whitespace-separated tokens,
    # possibly with comment lines starting '#'.
    tokens = []
    i = 0
    while len(tokens) < 4:
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if data[i:i + 1] == b"#":
            while i < len(data) and data[i:i + 1] != b"\n":
                i += 1
            continue
        start = i
        while i < len(data) and not data[i:i + 1].isspace():
            i += 1
        tokens.append(data[start:i])
    i += 1  # single whitespace after maxval
    if tokens[0] != b"P5":
        raise ValueError(f"not a binary PGM: magic {tokens[0]!r} in {path}")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise ValueError(f"unsupported PGM maxval {maxval} in {path}")
    img = np.frombuffer(data[i:i + w * h], dtype=np.uint8).reshape(h, w)
    return img.copy()


def float_to_pgm(arr):
    """Map a float array in [0, 1] to uint8 0..255 with round-half-even."""
    arr = np.asarray(arr, dtype=np.float64)
    return np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
