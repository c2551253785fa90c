"""Physical and sampling configuration shared by every pipeline stage."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, asdict, replace

MAX_ZERNIKE_MODES = 36  # radial order <= 7, see zernike.py
_U64_MAX = 2**64 - 1

# Desk-scale kernel supports per grid size. 33 px is the reference support at
# N=128; smaller grids shrink the support roughly in proportion, floored so the
# blur tails of strong turbulence (D/r0 up to ~5) still fit.
_DESK_KERNEL = {16: 9, 32: 11, 64: 17, 128: 33}


@dataclass(frozen=True)
class TurbulenceParams:
    """Configuration of the anisoplanatic blur simulator.

    The strength of the turbulence is summarized by ``d_over_r0``, the ratio
    of aperture diameter to the Fried coherence length. All three of
    ``aperture_diameter_m``, ``fried_param_m`` and ``d_over_r0`` are stored
    and must agree; use :meth:`from_strength` to build a consistent set from
    the ratio alone.
    """

    aperture_diameter_m: float = 0.1
    fried_param_m: float = 0.05
    d_over_r0: float = 2.0
    wavelength_m: float = 525e-9
    target_distance_m: float = 1000.0
    image_size_px: int = 128
    kernel_size_px: int = 33
    num_zernike: int = 15
    corr_length_px: float = 32.0
    anchor_stride_px: int = 16
    seed: int = 0

    def __post_init__(self):
        for name in ("aperture_diameter_m", "fried_param_m", "d_over_r0",
                     "wavelength_m", "target_distance_m", "corr_length_px"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and v > 0):
                raise ValueError(f"{name} must be a positive real, got {v!r}")
        for name in ("image_size_px", "kernel_size_px", "num_zernike",
                     "anchor_stride_px"):
            v = getattr(self, name)
            if not (isinstance(v, int) and v > 0):
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        ratio = self.aperture_diameter_m / self.fried_param_m
        if abs(ratio - self.d_over_r0) > 1e-12 * max(abs(ratio), abs(self.d_over_r0)):
            raise ValueError(
                f"d_over_r0={self.d_over_r0} inconsistent with "
                f"aperture/fried={ratio}")
        if self.kernel_size_px % 2 == 0:
            raise ValueError("kernel_size_px must be odd")
        if self.kernel_size_px > self.image_size_px:
            raise ValueError("kernel_size_px must not exceed image_size_px")
        if self.num_zernike < 3:
            raise ValueError("num_zernike must be >= 3 (tilt terms required)")
        if self.num_zernike > MAX_ZERNIKE_MODES:
            raise ValueError(f"num_zernike capped at {MAX_ZERNIKE_MODES}")
        if self.anchor_stride_px >= 2 * self.image_size_px:
            raise ValueError("anchor_stride_px too large for the image grid")
        if not (isinstance(self.seed, int) and 0 <= self.seed <= _U64_MAX):
            raise ValueError("seed must be an unsigned 64-bit integer")

    @classmethod
    def from_strength(cls, d_over_r0: float, *, aperture_diameter_m: float = 0.1,
                      **kwargs) -> "TurbulenceParams":
        """Build params from the strength ratio, deriving the Fried length."""
        if d_over_r0 <= 0:
            raise ValueError("d_over_r0 must be positive")
        return cls(aperture_diameter_m=aperture_diameter_m,
                   fried_param_m=aperture_diameter_m / d_over_r0,
                   d_over_r0=d_over_r0, **kwargs)

    @classmethod
    def desk(cls, image_size_px: int, d_over_r0: float = 2.0,
             **kwargs) -> "TurbulenceParams":
        """Desk-scale defaults for a given grid size.

        Correlation length and anchor stride shrink proportionally from the
        N=128 reference values (32 px and 16 px); kernel support follows the
        table in ``_DESK_KERNEL``.
        """
        n = image_size_px
        defaults = dict(
            image_size_px=n,
            kernel_size_px=_DESK_KERNEL.get(n, max(9, (n // 4) | 1)),
            corr_length_px=max(2.0, 32.0 * n / 128.0),
            anchor_stride_px=max(1, round(16 * n / 128)),
        )
        defaults.update(kwargs)
        return cls.from_strength(d_over_r0, **defaults)

    def with_strength(self, d_over_r0: float) -> "TurbulenceParams":
        """Same configuration at a different turbulence strength."""
        if d_over_r0 <= 0:
            raise ValueError("d_over_r0 must be positive")
        return replace(self, d_over_r0=d_over_r0,
                       fried_param_m=self.aperture_diameter_m / d_over_r0)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TurbulenceParams":
        return cls(**d)

    def content_hash(self) -> str:
        """Stable 16-hex-digit digest of the full parameter set."""
        payload = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]
