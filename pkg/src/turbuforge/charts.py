"""Procedural test charts.

All charts are generated on demand (no binary assets): a two-digit
composite, a resolution wedge, and a checkerboard. Values are float64 in
[0, 1] and fully determined by the arguments.
"""

from __future__ import annotations

import numpy as np

# 3x5 block font, one string per digit row (1 = foreground)
_FONT = {
    "0": ("111", "101", "101", "101", "111"),
    "1": ("010", "110", "010", "010", "111"),
    "2": ("111", "001", "111", "100", "111"),
    "3": ("111", "001", "111", "001", "111"),
    "4": ("101", "101", "111", "001", "001"),
    "5": ("111", "100", "111", "001", "111"),
    "6": ("111", "100", "111", "101", "111"),
    "7": ("111", "001", "010", "010", "010"),
    "8": ("111", "101", "111", "101", "111"),
    "9": ("111", "101", "111", "001", "111"),
}


def _glyph(ch: str) -> np.ndarray:
    rows = _FONT[ch]
    return np.array([[int(c) for c in row] for row in rows], dtype=np.float64)


def digits(n: int, value: int = 42) -> np.ndarray:
    """Two-digit composite: the glyphs of ``value`` centered on black."""
    if n < 16:
        raise ValueError("digits chart needs n >= 16")
    if not 0 <= value <= 99:
        raise ValueError("value must be a two-digit number (0..99)")
    text = f"{value:02d}"
    block = np.concatenate(
        [_glyph(text[0]), np.zeros((5, 1)), _glyph(text[1])], axis=1)  # 5 x 7
    scale = max(1, int(n * 0.7) // 7)
    block = np.kron(block, np.ones((scale, scale)))
    out = np.zeros((n, n))
    r0 = (n - block.shape[0]) // 2
    c0 = (n - block.shape[1]) // 2
    out[r0:r0 + block.shape[0], c0:c0 + block.shape[1]] = block
    return out


def wedges(n: int) -> np.ndarray:
    """Resolution wedge: bar gratings whose period halves left to right,
    vertical bars in the top half and horizontal bars in the bottom."""
    if n < 16:
        raise ValueError("wedges chart needs n >= 16")
    out = np.zeros((n, n))
    groups = 4
    gw = n // groups
    col = np.arange(n)
    row = np.arange(n)
    for g in range(groups):
        period = max(2, n // (4 * 2 ** g))
        sel = slice(g * gw, n if g == groups - 1 else (g + 1) * gw)
        out[: n // 2, sel] = ((col[sel] // (period // 2)) % 2)[None, :]
        out[n // 2:, sel] = ((row[n // 2:] // (period // 2)) % 2)[:, None]
    return out


def checker(n: int, cells: int = 8) -> np.ndarray:
    """Checkerboard with ``cells`` squares per side."""
    if cells < 2 or cells > n:
        raise ValueError("cells must be in 2..n")
    size = max(1, n // cells)
    rows = np.arange(n)[:, None] // size
    cols = np.arange(n)[None, :] // size
    return ((rows + cols) % 2).astype(np.float64)


CHARTS = {"digits": digits, "wedges": wedges, "checker": checker}


def chart(name: str, n: int) -> np.ndarray:
    """Builtin chart by name ("digits", "wedges", "checker")."""
    if name not in CHARTS:
        raise ValueError(f"unknown chart {name!r}; choose from {sorted(CHARTS)}")
    return CHARTS[name](n)
