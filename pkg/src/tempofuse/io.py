"""PFM (float maps) and binary PGM (8-bit images) readers and writers."""
from __future__ import annotations

import os

import numpy as np


def write_pfm(path, data) -> None:
    """Write an H x W (``Pf``) or H x W x 3 (``PF``) map, little-endian, bottom row first."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 2:
        header = b"Pf"
    elif data.ndim == 3 and data.shape[2] == 3:
        header = b"PF"
    else:
        raise ValueError(f"PFM supports H x W or H x W x 3 arrays, got {data.shape}")
    h, w = data.shape[:2]
    with open(path, "wb") as f:
        f.write(header + b"\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(np.flipud(data).astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        kind = f.readline().strip()
        if kind not in (b"Pf", b"PF"):
            raise ValueError(f"{os.fspath(path)}: not a PFM file (header {kind!r})")
        dims = f.readline().split()
        while not dims:  # tolerate blank lines
            dims = f.readline().split()
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline().strip())
        dtype = "<f4" if scale < 0 else ">f4"
        channels = 3 if kind == b"PF" else 1
        raw = np.frombuffer(f.read(w * h * channels * 4), dtype=dtype)
    shape = (h, w, 3) if channels == 3 else (h, w)
    return np.flipud(raw.reshape(shape)).astype(np.float64)


def write_pgm(path, image) -> None:
    """Write a [0, 1] float image (or uint8) as binary 8-bit PGM."""
    image = np.asarray(image)
    if image.dtype != np.uint8:
        image = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    h, w = image.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(image.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read binary PGM; returns uint8 array."""
    with open(path, "rb") as f:
        data = f.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise ValueError(f"{os.fspath(path)}: only binary P5 PGM is supported")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval > 255:
        raise ValueError(f"{os.fspath(path)}: 16-bit PGM not supported")
    pos += 1
    return np.frombuffer(data[pos:pos + w * h], dtype=np.uint8).reshape(h, w).copy()
