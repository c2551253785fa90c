"""Reconstruction quality metrics and the per-run metric report."""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np


def psnr(image: np.ndarray, reference: np.ndarray) -> float:
    """PSNR in dB for images on [0, 1]: 10 log10(1 / mse).

    Near-identical pairs (mse below 1e-10) are capped at 99 dB so exact
    matches stay finite.
    """
    a = np.asarray(image, dtype=np.float64)
    b = np.asarray(reference, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-10:
        return 99.0
    return 10.0 * np.log10(1.0 / mse)


@dataclass
class MetricReport:
    psnr_db: float | None
    masked_magnitude_error: float | None
    wall_clock_s: float
    config_hash: str

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        return cls(**json.loads(text))
