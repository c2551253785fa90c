"""Spatially correlated Zernike coefficient fields over an anchor lattice.

Coefficients are sampled at a coarse lattice of anchor points covering the
image grid and interpolated bilinearly to per-pixel values. Anchors at
distance r have cross-correlation exp(-r^2 / (2 corr_length^2)) per mode,
which factorizes over the two axes, so the spatial square root is applied
axis by axis. The per-anchor marginal is N(0, Sigma) with Sigma the Noll
covariance.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .params import TurbulenceParams
from .zernike import NollCovariance

_NOISE_SALT = 0x9E3779B97F4A7C15  # splitmix64 golden-ratio increment


def anchor_positions(n: int, stride: int) -> np.ndarray:
    """1-D anchor coordinates covering 0..n-1 inclusive of both borders."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    pos = list(range(0, n, stride))
    if pos[-1] != n - 1:
        pos.append(n - 1)
    return np.asarray(pos, dtype=np.int64)


def correlation_sqrt(positions: np.ndarray, corr_length: float) -> np.ndarray:
    """Symmetric square root of the Gaussian correlation matrix.

    Uses an eigendecomposition with eigenvalues clamped at zero, which stays
    well defined in both the fully-correlated (corr_length -> inf) and
    uncorrelated (corr_length -> 0) limits.
    """
    p = np.asarray(positions, dtype=np.float64)
    d2 = (p[:, None] - p[None, :]) ** 2
    corr = np.exp(-d2 / (2.0 * corr_length ** 2))
    w, v = np.linalg.eigh(corr)
    w = np.clip(w, 0.0, None)
    return v * np.sqrt(w)


@dataclass(frozen=True)
class CoefficientField:
    """Per-anchor coefficient vectors with bilinear interpolation.

    ``alphas[r, c]`` is the coefficient vector (modes 2..M) at anchor
    (anchor_rows[r], anchor_cols[c]).
    """

    anchor_rows: np.ndarray
    anchor_cols: np.ndarray
    alphas: np.ndarray          # (R, C, M-1) float64
    corr_length_px: float
    image_size_px: int
    noise_seed: int
    interpolation: str = dc_field(default="bilinear")

    @property
    def num_coeffs(self) -> int:
        return self.alphas.shape[-1]

    def at_pixels(self) -> np.ndarray:
        """Interpolate to a dense (N, N, M-1) per-pixel coefficient array."""
        n = self.image_size_px
        i0r, i1r, wr = _axis_weights(self.anchor_rows, n)
        i0c, i1c, wc = _axis_weights(self.anchor_cols, n)
        a = self.alphas
        top = a[i0r][:, i0c] * (1 - wc)[None, :, None] + a[i0r][:, i1c] * wc[None, :, None]
        bot = a[i1r][:, i0c] * (1 - wc)[None, :, None] + a[i1r][:, i1c] * wc[None, :, None]
        return top * (1 - wr)[:, None, None] + bot * wr[:, None, None]

    def at(self, row: int, col: int) -> np.ndarray:
        """Interpolated coefficient vector at one pixel."""
        i0r, i1r, wr = _axis_weights(self.anchor_rows, self.image_size_px)
        i0c, i1c, wc = _axis_weights(self.anchor_cols, self.image_size_px)
        a = self.alphas
        top = a[i0r[row], i0c[col]] * (1 - wc[col]) + a[i0r[row], i1c[col]] * wc[col]
        bot = a[i1r[row], i0c[col]] * (1 - wc[col]) + a[i1r[row], i1c[col]] * wc[col]
        return top * (1 - wr[row]) + bot * wr[row]


def _axis_weights(anchors: np.ndarray, n: int):
    """Bilinear segment indices and weights for every pixel along one axis."""
    anchors = np.asarray(anchors, dtype=np.float64)
    pix = np.arange(n, dtype=np.float64)
    seg = np.clip(np.searchsorted(anchors, pix, side="right") - 1,
                  0, len(anchors) - 2)
    lo, hi = anchors[seg], anchors[seg + 1]
    w = np.where(hi > lo, (pix - lo) / np.maximum(hi - lo, 1e-300), 0.0)
    w = np.clip(w, 0.0, 1.0)
    # pixels sitting exactly on the last anchor
    on_last = pix >= anchors[-1]
    w = np.where(on_last, 1.0, w)
    return seg, seg + 1, w


def frame_rng(seed: int, frame_index: int, salt: int = 0) -> np.random.Generator:
    """Counter-based generator keyed by (seed, frame); order independent.

    The key is built as an explicit uint64 array: numpy coerces plain python
    ints through float64, which drops low bits above 2**53 and would collapse
    nearby salted seeds onto one stream.
    """
    key = np.array([(seed ^ (salt * _NOISE_SALT)) % 2**64,
                    frame_index % 2**64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def sample_coefficient_field(cov: NollCovariance, params: TurbulenceParams,
                             seed: int, frame_index: int = 0) -> CoefficientField:
    """Draw one correlated coefficient field for a single frame.

    Every anchor's marginal distribution is N(0, cov.matrix); anchors at
    distance r are correlated by exp(-r^2 / (2 corr_length^2)). The draw is
    fully determined by (seed, frame_index).
    """
    rows = anchor_positions(params.image_size_px, params.anchor_stride_px)
    cols = anchor_positions(params.image_size_px, params.anchor_stride_px)
    rng = frame_rng(seed, frame_index)
    xi = rng.standard_normal((len(rows), len(cols), cov.matrix.shape[0]))
    xi = correlate_xi(xi, rows, cols, params.corr_length_px)
    alphas = xi @ cov.cholesky_factor.T
    return CoefficientField(anchor_rows=rows, anchor_cols=cols, alphas=alphas,
                            corr_length_px=params.corr_length_px,
                            image_size_px=params.image_size_px,
                            noise_seed=seed)


def correlate_xi(xi: np.ndarray, rows: np.ndarray, cols: np.ndarray,
                 corr_length: float) -> np.ndarray:
    """Apply the spatial correlation square root along both lattice axes.

    Input and output are (R, C, M-1) with unit marginal variance per entry.
    """
    fr = correlation_sqrt(rows, corr_length)
    fc = correlation_sqrt(cols, corr_length)
    out = np.tensordot(fr, xi, axes=(1, 0))            # (R, C, M-1)
    out = np.moveaxis(np.tensordot(fc, out, axes=(1, 1)), 0, 1)
    return out


def reparameterized_coeffs(xi, d_over_r0, cov_at_unit: NollCovariance):
    """Coefficients as a differentiable function of the strength ratio.

    alpha = d^(5/6) * chol(Sigma(1)) @ xi, so d(alpha)/dd =
    (5/6) d^(-1/6) chol(Sigma(1)) @ xi. ``xi`` has shape (..., M-1) and may
    be a numpy array or a torch tensor; with torch inputs the result stays
    on the autograd tape (including through ``d_over_r0`` when it is a
    tensor), which is how the strength estimate receives gradients.
    """
    if cov_at_unit.d_over_r0 != 1.0:
        raise ValueError("cov_at_unit must be evaluated at d_over_r0 = 1")
    chol = cov_at_unit.cholesky_factor
    if hasattr(xi, "requires_grad") or hasattr(d_over_r0, "requires_grad"):
        import torch
        xi_t = torch.as_tensor(xi)
        d_t = d_over_r0 if torch.is_tensor(d_over_r0) else torch.as_tensor(
            float(d_over_r0), dtype=xi_t.dtype)
        if float(d_t.detach().min() if d_t.ndim else d_t.detach()) <= 0:
            raise ValueError("d_over_r0 must be positive")
        chol_t = torch.as_tensor(chol, dtype=xi_t.dtype)
        return d_t ** (5.0 / 6.0) * (xi_t @ chol_t.T)
    d = float(d_over_r0)
    if d <= 0:
        raise ValueError("d_over_r0 must be positive")
    return d ** (5.0 / 6.0) * (np.asarray(xi) @ chol.T)


def field_from_xi(xi: np.ndarray, d_over_r0: float, cov_at_unit: NollCovariance,
                  params: TurbulenceParams, noise_seed: int = 0) -> CoefficientField:
    """Wrap reparameterized coefficients on the anchor lattice into a field.

    ``xi`` must be shaped (R, C, M-1) for the lattice implied by ``params``
    and should already carry the spatial correlation (unit marginals).
    """
    rows = anchor_positions(params.image_size_px, params.anchor_stride_px)
    cols = anchor_positions(params.image_size_px, params.anchor_stride_px)
    if xi.shape != (len(rows), len(cols), cov_at_unit.matrix.shape[0]):
        raise ValueError(f"xi shape {xi.shape} does not match lattice "
                         f"({len(rows)}, {len(cols)}, {cov_at_unit.matrix.shape[0]})")
    alphas = np.asarray(reparameterized_coeffs(xi, d_over_r0, cov_at_unit))
    return CoefficientField(anchor_rows=rows, anchor_cols=cols, alphas=alphas,
                            corr_length_px=params.corr_length_px,
                            image_size_px=params.image_size_px,
                            noise_seed=noise_seed)
