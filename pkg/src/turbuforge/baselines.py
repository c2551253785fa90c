"""Reference reconstructions that need no training: stack mean and lucky
frames selected by gradient-energy sharpness."""

from __future__ import annotations

import numpy as np

from .render import FrameStack


def baseline_mean(stack: FrameStack) -> np.ndarray:
    """Pixelwise average of all frames, clamped to [0, 1]."""
    if len(stack) < 1:
        raise ValueError("stack must contain at least one frame")
    return np.clip(stack.frames.mean(axis=0), 0.0, 1.0)


def sharpness(frame: np.ndarray) -> float:
    """Gradient energy sum |grad y|^2 (forward differences)."""
    gr = np.diff(frame, axis=0)
    gc = np.diff(frame, axis=1)
    return float((gr ** 2).sum() + (gc ** 2).sum())


def baseline_lucky(stack: FrameStack, top_k: int) -> np.ndarray:
    """Average of the top_k frames ranked by gradient-energy sharpness.

    Ties are broken by frame index so the selection is deterministic.
    """
    l = len(stack)
    if not 1 <= top_k <= l:
        raise ValueError(f"top_k must be in 1..{l}, got {top_k}")
    scores = np.array([sharpness(f) for f in stack.frames])
    order = np.lexsort((np.arange(l), -scores))
    # Average in frame order, not rank order, so selecting every frame
    # reproduces the plain stack mean bit for bit.
    chosen = np.sort(order[:top_k])
    return np.clip(stack.frames[chosen].mean(axis=0), 0.0, 1.0)
