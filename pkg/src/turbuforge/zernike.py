"""Zernike modes on the unit disk and the Kolmogorov coefficient covariance.

Modes follow Noll's single-index convention: j=1 is piston, even j pairs with
the cosine azimuthal term and odd j with the sine term, and each mode is
normalized so its RMS over the unit disk is one. The covariance of the
expansion coefficients of Kolmogorov-turbulence phase over an aperture of
diameter D follows the classical analytic Gamma-function expression and
scales as (D/r0)^(5/3).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import gamma

from .params import MAX_ZERNIKE_MODES

# Leading constant of the covariance expression. Collecting the Kolmogorov
# spectrum normalization and the angular integrals gives
#   2 * (24/5 * G(6/5))^(5/6) * G(11/6)^2 * G(7/3) * G(17/6) / pi^(3/2)
# which reproduces the published per-mode variances (tilt 0.448*(D/r0)^(5/3),
# defocus 0.0232, coma 0.0062).
_COV_FRONT = (2.0 * (24.0 / 5.0 * gamma(6.0 / 5.0)) ** (5.0 / 6.0)
              * gamma(11.0 / 6.0) ** 2 * gamma(7.0 / 3.0) * gamma(17.0 / 6.0)
              / math.pi ** 1.5)


def noll_to_nm(j: int) -> tuple[int, int]:
    """Map a Noll index j >= 1 to (radial order n, signed azimuthal order m).

    Negative m denotes the sine term, positive m the cosine term, matching
    the parity rule of Noll's ordering (even j -> cosine).
    """
    if j < 1:
        raise ValueError(f"Noll index must be >= 1, got {j}")
    n, rem = 0, j - 1
    while rem > n:
        n += 1
        rem -= n
    m = (n % 2) + 2 * ((rem + (n + 1) % 2) // 2)
    if m == 0:
        return n, 0
    return (n, m) if j % 2 == 0 else (n, -m)


def _radial_poly(n: int, m: int, rho: np.ndarray) -> np.ndarray:
    """Zernike radial polynomial R_n^m evaluated at rho (m = |m|)."""
    out = np.zeros_like(rho)
    for s in range((n - m) // 2 + 1):
        c = ((-1) ** s * math.factorial(n - s)
             / (math.factorial(s) * math.factorial((n + m) // 2 - s)
                * math.factorial((n - m) // 2 - s)))
        out += c * rho ** (n - 2 * s)
    return out


@dataclass(frozen=True)
class ZernikeBasis:
    """Stack of Noll-indexed modes sampled on a square grid.

    ``modes[j-1]`` holds mode j on a side_px x side_px grid of pixel
    centers covering [-1, 1] in both axes, zeroed outside the circular
    aperture.
    """

    num_modes: int
    side_px: int
    modes: np.ndarray        # (num_modes, side, side) float64
    aperture_mask: np.ndarray  # (side, side) bool

    def mode(self, j: int) -> np.ndarray:
        if not 1 <= j <= self.num_modes:
            raise ValueError(f"mode index {j} outside 1..{self.num_modes}")
        return self.modes[j - 1]


def build_zernike_basis(num_modes: int, side_px: int) -> ZernikeBasis:
    """Evaluate Noll modes 1..num_modes on a unit-disk grid.

    Parameters
    ----------
    num_modes : int
        Number of modes, at most 36 (radial order <= 7).
    side_px : int
        Odd grid side of at least 7 so the disk has a center pixel.
    """
    if num_modes < 1:
        raise ValueError("num_modes must be >= 1")
    if num_modes > MAX_ZERNIKE_MODES:
        raise ValueError(f"num_modes capped at {MAX_ZERNIKE_MODES} "
                         "(radial order <= 7)")
    if side_px < 7:
        raise ValueError("side_px must be >= 7")
    if side_px % 2 == 0:
        raise ValueError("side_px must be odd (center pixel required)")

    # Pixel-center sampling of [-1, 1]: no sample sits exactly on the rim,
    # which keeps the discrete modes near-orthogonal (rim pixels otherwise
    # dominate the quadrature error between same-azimuthal-order modes).
    coords = (2.0 * np.arange(side_px) + 1.0 - side_px) / side_px
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    rho = np.hypot(xx, yy)
    theta = np.arctan2(yy, xx)
    mask = rho <= 1.0 + 1e-12

    modes = np.zeros((num_modes, side_px, side_px))
    for j in range(1, num_modes + 1):
        n, m_signed = noll_to_nm(j)
        m = abs(m_signed)
        rad = _radial_poly(n, m, rho)
        if m == 0:
            z = math.sqrt(n + 1.0) * rad
        elif m_signed > 0:
            z = math.sqrt(2.0 * (n + 1.0)) * rad * np.cos(m * theta)
        else:
            z = math.sqrt(2.0 * (n + 1.0)) * rad * np.sin(m * theta)
        modes[j - 1] = np.where(mask, z, 0.0)
    return ZernikeBasis(num_modes=num_modes, side_px=side_px,
                        modes=modes, aperture_mask=mask)


@dataclass(frozen=True)
class NollCovariance:
    """Covariance of coefficients over modes 2..M (piston dropped).

    ``matrix`` has side M-1; entry (i, j) is the covariance of modes
    i+2 and j+2. ``cholesky_factor`` is lower triangular with
    L @ L.T == matrix.
    """

    matrix: np.ndarray
    d_over_r0: float
    cholesky_factor: np.ndarray

    @property
    def num_modes(self) -> int:
        return self.matrix.shape[0] + 1


def _cov_entry(ji: int, jj: int) -> float:
    """Unit-strength covariance of Noll modes ji, jj (zero by symmetry rules)."""
    ni, mi = noll_to_nm(ji)
    nj, mj = noll_to_nm(jj)
    if abs(mi) != abs(mj):
        return 0.0
    m = abs(mi)
    # cosine and sine terms of the same |m| are uncorrelated
    if m != 0 and (ji % 2) != (jj % 2):
        return 0.0
    sign = (-1.0) ** ((ni + nj - 2 * m) // 2)
    num = (_COV_FRONT * sign * math.sqrt((ni + 1.0) * (nj + 1.0))
           * gamma((ni + nj - 5.0 / 3.0) / 2.0))
    den = (gamma((ni - nj + 17.0 / 3.0) / 2.0)
           * gamma((nj - ni + 17.0 / 3.0) / 2.0)
           * gamma((ni + nj + 23.0 / 3.0) / 2.0))
    return num / den


@lru_cache(maxsize=8)
def _unit_covariance(num_modes: int) -> np.ndarray:
    m = num_modes - 1
    cov = np.empty((m, m))
    for a in range(m):
        for b in range(a, m):
            cov[a, b] = cov[b, a] = _cov_entry(a + 2, b + 2)
    return cov


def noll_covariance(num_modes: int, d_over_r0: float) -> NollCovariance:
    """Analytic coefficient covariance for modes 2..num_modes.

    Piston is excluded: it only shifts the global phase and leaves the PSF
    unchanged. The matrix scales exactly as (d_over_r0)^(5/3).
    """
    if num_modes < 2:
        raise ValueError("num_modes must be >= 2")
    if num_modes > MAX_ZERNIKE_MODES:
        raise ValueError(f"num_modes capped at {MAX_ZERNIKE_MODES}")
    if d_over_r0 <= 0:
        raise ValueError("d_over_r0 must be positive")

    cov = _unit_covariance(num_modes) * float(d_over_r0) ** (5.0 / 3.0)
    cov = 0.5 * (cov + cov.T)
    eigmin = float(np.linalg.eigvalsh(cov).min())
    if eigmin < -1e-10 * max(1.0, float(np.abs(cov).max())):
        raise RuntimeError(
            "Noll covariance is not positive semidefinite "
            f"(min eigenvalue {eigmin:.3e}); this indicates a bug in the "
            "analytic covariance evaluation")
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        jitter = 1e-12 * float(np.trace(cov)) / cov.shape[0]
        chol = np.linalg.cholesky(cov + jitter * np.eye(cov.shape[0]))
    return NollCovariance(matrix=cov, d_over_r0=float(d_over_r0),
                          cholesky_factor=chol)
