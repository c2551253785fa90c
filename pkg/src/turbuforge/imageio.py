"""Minimal PFM / PGM / PPM image export and import."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def write_pfm(path, image: np.ndarray) -> None:
    """Grayscale portable float map (Pf), little-endian, bottom-up rows."""
    img = np.asarray(image, dtype=np.float32)
    if img.ndim != 2:
        raise ValueError("write_pfm expects a 2-D grayscale image")
    h, w = img.shape
    with open(Path(path), "wb") as fh:
        fh.write(b"Pf\n")
        fh.write(f"{w} {h}\n".encode())
        fh.write(b"-1.0\n")  # negative scale marks little-endian
        fh.write(img[::-1].astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] not in (b"Pf", b"PF"):
        raise ValueError(f"{path} is not a PFM file")
    if parts[0] == b"PF":
        raise ValueError("color PFM not supported")
    w, h = (int(v) for v in parts[1].split())
    scale = float(parts[2])
    dtype = "<f4" if scale < 0 else ">f4"
    img = np.frombuffer(parts[3], dtype=dtype, count=w * h).reshape(h, w)
    return img[::-1].astype(np.float64)


def write_pgm(path, image: np.ndarray) -> None:
    """8-bit binary PGM (P5); input in [0, 1] is scaled to 0..255."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("write_pgm expects a 2-D grayscale image")
    data = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    h, w = data.shape
    with open(Path(path), "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if not raw.startswith(b"P5"):
        raise ValueError(f"{path} is not a binary PGM file")
    fields, pos = [], 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while end < len(raw) and not raw[end:end + 1].isspace():
            end += 1
        fields.append(int(raw[pos:end]))
        pos = end
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    img = np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=pos)
    return img.reshape(h, w).astype(np.float64) / maxval


def write_ppm(path, image: np.ndarray) -> None:
    """8-bit binary PPM (P6) for 3-channel images in [0, 1]."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("write_ppm expects an (H, W, 3) image")
    data = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    h, w = data.shape[:2]
    with open(Path(path), "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(data.tobytes())
