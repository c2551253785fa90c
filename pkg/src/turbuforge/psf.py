"""Point spread functions from pupil phase, plus a fast low-rank surrogate.

The exact path evaluates h = |FFT(A exp(-j phi))|^2 on a 2x zero-padded grid,
recenters, crops to the kernel support and normalizes to unit sum.

The surrogate replaces the per-kernel FFT with a PCA mixture whose weights
come from a ridge regression on the coefficients, in the spirit of learned
phase-to-kernel maps. Two refinements are needed to make the mixture
accurate at realistic strengths: the tilt modes, which translate the PSF
rather than reshape it, are factored out and applied as a Fourier-domain
shift of the mixture, and the regression uses a quadratic feature lift of
the coefficients (PSF intensity is not linear in phase). Everything stays
differentiable with respect to the coefficients and, through the
reparameterized sampler, the turbulence strength.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import fft as _sfft

from .params import TurbulenceParams
from .zernike import ZernikeBasis, build_zernike_basis, noll_covariance
from .field import frame_rng

_FIT_SALT = 3
_PSB_MAGIC = b"PSB1"


def phase_from_coeffs(alpha: np.ndarray, basis: ZernikeBasis) -> np.ndarray:
    """Pupil phase phi = sum_i alpha_i Z_(i+2), masked to the aperture.

    ``alpha`` covers modes 2..M; piston is excluded because it cannot
    change the PSF.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (basis.num_modes - 1,):
        raise ValueError(f"alpha must have length {basis.num_modes - 1} "
                         f"(modes 2..{basis.num_modes}), got shape {alpha.shape}")
    phi = np.tensordot(alpha, basis.modes[1:], axes=(0, 0))
    return np.where(basis.aperture_mask, phi, 0.0)


def psf_from_phase(phase: np.ndarray, basis: ZernikeBasis) -> np.ndarray:
    """Exact PSF of one phase screen; non-negative and normalized to sum 1."""
    phase = np.asarray(phase, dtype=np.float64)
    if phase.shape != basis.aperture_mask.shape:
        raise ValueError("phase grid does not match the basis aperture")
    return _psf_batch(phase[None], basis.aperture_mask)[0]


def psfs_from_coeffs(alphas: np.ndarray, basis: ZernikeBasis) -> np.ndarray:
    """Exact PSFs for a batch of coefficient vectors, shape (B, M-1)."""
    alphas = np.asarray(alphas, dtype=np.float64)
    if alphas.ndim != 2 or alphas.shape[1] != basis.num_modes - 1:
        raise ValueError("alphas must be (batch, num_modes-1)")
    phases = np.tensordot(alphas, basis.modes[1:], axes=(1, 0))
    return _psf_batch(phases, basis.aperture_mask)


def _psf_batch(phases: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """|FFT(pupil)|^2 on a 2x padded grid, recentered, cropped, unit sum."""
    b, s = phases.shape[0], phases.shape[-1]
    pupil = np.where(mask[None], np.exp(-1j * phases), 0.0)
    padded = np.zeros((b, 2 * s, 2 * s), dtype=np.complex128)
    padded[:, :s, :s] = pupil
    spec = np.fft.fft2(padded)
    inten = np.abs(spec) ** 2
    inten = np.fft.fftshift(inten, axes=(-2, -1))
    start = s - s // 2  # center bin of the padded grid sits at index s
    crop = inten[:, start:start + s, start:start + s]
    sums = crop.sum(axis=(-2, -1), keepdims=True)
    return crop / sums


def coeff_features(alpha: np.ndarray) -> np.ndarray:
    """Quadratic feature lift [alpha, upper-triangle(alpha alpha^T)].

    Shared by the numpy and torch surrogate paths; shape (..., M-1) maps to
    (..., F) with F = (M-1) + (M-1)M/2.
    """
    m = alpha.shape[-1]
    iu0, iu1 = np.triu_indices(m)
    quad = alpha[..., :, None] * alpha[..., None, :]
    return np.concatenate([alpha, quad[..., iu0, iu1]], axis=-1)


def feature_dim(num_zernike: int) -> int:
    m = num_zernike - 1
    return m + m * (m + 1) // 2


@dataclass(frozen=True)
class PsfBasis:
    """Low-rank surrogate: h(alpha) ~ shift(mean + sum_r w_r component_r).

    ``coeff_weights`` (R, F) and ``coeff_bias`` (R,) give the mixture
    weights w = W f(alpha) + b, ridge-regressed on the quadratic feature
    lift of the coefficients. ``tilt_slope_px`` converts the two tilt
    coefficients into the kernel translation applied as a Fourier phase
    ramp (zero when the fit did not factor tilt out). ``residual_stats``
    records held-out relative L2 errors against exact PSFs.
    """

    rank: int
    kernel_size_px: int
    num_zernike: int
    num_samples: int
    mean_psf: np.ndarray       # (k, k)
    components: np.ndarray     # (R, k, k), orthonormal when flattened
    coeff_weights: np.ndarray  # (R, F)
    coeff_bias: np.ndarray     # (R,)
    tilt_slope_px: float
    residual_stats: dict
    d_range: tuple

    def __post_init__(self):
        object.__setattr__(self, "_spectra", None)

    def spectra(self) -> tuple:
        """Cached rfft2 of the mean and components, shared across calls.

        Stored in single precision: the surrogate's own approximation error
        sits around ten percent, so complex64 spectra cost nothing in
        fidelity and halve the evaluation bandwidth.
        """
        if self._spectra is None:
            mean_spec = np.fft.rfft2(self.mean_psf).astype(np.complex64)
            comp_spec = np.fft.rfft2(self.components,
                                     axes=(-2, -1)).astype(np.complex64)
            object.__setattr__(self, "_spectra", (mean_spec, comp_spec))
        return self._spectra


def _calibrate_tilt_slope(zbasis: ZernikeBasis) -> float:
    """Kernel translation (columns) per unit of the first tilt coefficient."""
    k = zbasis.side_px
    m = zbasis.num_modes
    probes = np.zeros((9, m - 1))
    probes[:, 0] = np.linspace(-1.5, 1.5, 9)
    psfs = psfs_from_coeffs(probes, zbasis)
    centroids = psfs.sum(axis=1) @ np.arange(k)
    return float(np.polyfit(probes[:, 0], centroids, 1)[0])


def fit_psf_basis(params: TurbulenceParams, rank: int, num_samples: int,
                  seed: int, d_range: tuple | None = None,
                  factor_tilt: bool = True) -> PsfBasis:
    """Fit the surrogate on exact PSF draws.

    Parameters
    ----------
    params : TurbulenceParams
        Supplies kernel size, mode count and the strength at which to
        sample when ``d_range`` is None.
    rank : int
        Number of principal components retained.
    num_samples : int
        Exact PSF draws; should be at least 50x the rank for a stable fit
        (smaller counts are allowed for full-rank reconstruction tests and
        produce a warning).
    d_range : (lo, hi), optional
        When given, each sample's strength is drawn log-uniformly from this
        range, which makes the surrogate usable across strengths (needed
        when the strength itself is being estimated).
    factor_tilt : bool
        Fit the principal components on tilt-free PSFs and reproduce tilt
        as a calibrated translation. This is what makes realistic
        strengths representable at low rank; turn it off only for
        full-rank reconstruction checks on tiny sample sets.
    """
    if rank < 1:
        raise ValueError("rank must be >= 1")
    if rank >= num_samples:
        raise ValueError(f"rank ({rank}) must be smaller than num_samples "
                         f"({num_samples})")
    if num_samples < 50 * rank:
        warnings.warn(f"fitting rank {rank} on only {num_samples} samples; "
                      "production fits use >= 50x rank", stacklevel=2)

    k = params.kernel_size_px
    m = params.num_zernike
    zbasis = build_zernike_basis(m, k)
    cov1 = noll_covariance(m, 1.0)
    rng = frame_rng(seed, 0, salt=_FIT_SALT)

    if d_range is None:
        d = np.full(num_samples, params.d_over_r0)
        d_lo = d_hi = float(params.d_over_r0)
    else:
        d_lo, d_hi = float(d_range[0]), float(d_range[1])
        if not 0 < d_lo <= d_hi:
            raise ValueError("d_range must satisfy 0 < lo <= hi")
        d = np.exp(rng.uniform(np.log(d_lo), np.log(d_hi), size=num_samples))
    xi = rng.standard_normal((num_samples, m - 1))
    alphas = d[:, None] ** (5.0 / 6.0) * (xi @ cov1.cholesky_factor.T)

    if factor_tilt:
        shape_alphas = alphas.copy()
        shape_alphas[:, :2] = 0.0
        slope = _calibrate_tilt_slope(zbasis)
    else:
        shape_alphas = alphas
        slope = 0.0
    shape_psfs = psfs_from_coeffs(shape_alphas, zbasis).reshape(num_samples, -1)

    n_fit = max(rank + 1, int(num_samples * 0.8))
    if num_samples - n_fit < 1:
        n_fit = num_samples  # tiny fits keep everything, no held-out stats

    mean = shape_psfs[:n_fit].mean(axis=0)
    centered = shape_psfs[:n_fit] - mean
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:rank]                                   # (R, k*k), orthonormal

    w_true = centered @ comps.T                         # (n_fit, R)
    design = np.concatenate([coeff_features(alphas[:n_fit]),
                             np.ones((n_fit, 1))], axis=1)
    beta = np.linalg.lstsq(design, w_true, rcond=None)[0]
    weights, bias = beta[:-1].T, beta[-1]

    basis = PsfBasis(rank=rank, kernel_size_px=k, num_zernike=m,
                     num_samples=num_samples, mean_psf=mean.reshape(k, k),
                     components=comps.reshape(rank, k, k),
                     coeff_weights=weights, coeff_bias=bias,
                     tilt_slope_px=slope, residual_stats={},
                     d_range=(d_lo, d_hi))

    if num_samples - n_fit >= 1:
        exact = psfs_from_coeffs(alphas[n_fit:], zbasis)
        approx = surrogate_psf(alphas[n_fit:], basis)
        diff = (approx - exact).reshape(len(exact), -1)
        rel = (np.linalg.norm(diff, axis=1)
               / np.linalg.norm(exact.reshape(len(exact), -1), axis=1))
        stats = {"median_rel_l2": float(np.median(rel)),
                 "mean_rel_l2": float(rel.mean()),
                 "p90_rel_l2": float(np.quantile(rel, 0.9))}
    else:
        stats = {"median_rel_l2": 0.0, "mean_rel_l2": 0.0, "p90_rel_l2": 0.0}
    basis.residual_stats.update(stats)
    return basis


def _shift_ramp(basis: PsfBasis, alpha: np.ndarray) -> tuple:
    """Separable Fourier ramps translating by (slope*a3, slope*a2) pixels."""
    k = basis.kernel_size_px
    fr = np.fft.fftfreq(k).astype(np.float32)
    fc = np.fft.rfftfreq(k).astype(np.float32)
    scale = np.float32(-2.0 * np.pi * basis.tilt_slope_px)
    phase_r = (scale * alpha[..., 1, None].astype(np.float32)) * fr
    phase_c = (scale * alpha[..., 0, None].astype(np.float32)) * fc
    ramp_r = np.empty(phase_r.shape, dtype=np.complex64)
    ramp_c = np.empty(phase_c.shape, dtype=np.complex64)
    ramp_r.real, ramp_r.imag = np.cos(phase_r), np.sin(phase_r)
    ramp_c.real, ramp_c.imag = np.cos(phase_c), np.sin(phase_c)
    return ramp_r, ramp_c


def surrogate_psf(alpha: np.ndarray, basis: PsfBasis) -> np.ndarray:
    """Surrogate kernel(s) for coefficients shaped (..., M-1).

    The translated PCA mixture is clamped at zero and renormalized so the
    output always satisfies the kernel invariants (non-negative, unit sum).
    The mixture itself is evaluated in single precision, orders of
    magnitude below the fit's own approximation error; the clamp and the
    unit-sum normalization run in double on the returned float64 array.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape[-1] != basis.num_zernike - 1:
        raise ValueError(f"alpha trailing dim must be "
                         f"{basis.num_zernike - 1}, got {alpha.shape}")
    k = basis.kernel_size_px
    w = coeff_features(alpha) @ basis.coeff_weights.T + basis.coeff_bias
    mean_spec, comp_spec = basis.spectra()
    spec = np.tensordot(w.astype(np.float32), comp_spec, axes=(-1, 0))
    spec += mean_spec
    if basis.tilt_slope_px != 0.0:
        ramp_r, ramp_c = _shift_ramp(basis, alpha)
        spec *= ramp_r[..., :, None]
        spec *= ramp_c[..., None, :]
    mix = _sfft.irfft2(spec, s=(k, k), overwrite_x=True,
                       workers=-1).astype(np.float64)
    np.maximum(mix, 0.0, out=mix)
    sums = np.einsum("...ij->...", mix)
    mix /= np.maximum(sums, 1e-300)[..., None, None]
    return mix


class SurrogateTorch:
    """Torch-side view of a PsfBasis for differentiable rendering."""

    def __init__(self, basis: PsfBasis, dtype=None):
        import torch
        self.kernel_size_px = basis.kernel_size_px
        self.rank = basis.rank
        self.tilt_slope_px = basis.tilt_slope_px
        dt = dtype or torch.get_default_dtype()
        k = basis.kernel_size_px
        self.mean_spec = torch.as_tensor(np.fft.rfft2(basis.mean_psf))
        self.comp_spec = torch.as_tensor(
            np.fft.rfft2(basis.components, axes=(-2, -1)))
        self.weights = torch.as_tensor(basis.coeff_weights, dtype=dt)
        self.bias = torch.as_tensor(basis.coeff_bias, dtype=dt)
        self.freq_r = torch.as_tensor(np.fft.fftfreq(k), dtype=dt)
        self.freq_c = torch.as_tensor(np.fft.rfftfreq(k), dtype=dt)
        if dt == torch.float32:
            self.mean_spec = self.mean_spec.to(torch.complex64)
            self.comp_spec = self.comp_spec.to(torch.complex64)

    def features(self, alpha):
        import torch
        m = alpha.shape[-1]
        iu0, iu1 = np.triu_indices(m)
        quad = alpha.unsqueeze(-1) * alpha.unsqueeze(-2)
        return torch.cat([alpha, quad[..., iu0, iu1]], dim=-1)

    def __call__(self, alpha):
        """Kernels for alpha (..., M-1); clamp uses a straight-through rule."""
        import torch
        from .autodiff import straight_through_clamp
        k = self.kernel_size_px
        w = self.features(alpha) @ self.weights.T + self.bias
        spec = self.mean_spec + torch.tensordot(
            w.to(self.comp_spec.dtype), self.comp_spec, dims=([-1], [0]))
        if self.tilt_slope_px != 0.0:
            dr = self.tilt_slope_px * alpha[..., 1]
            dc = self.tilt_slope_px * alpha[..., 0]
            pr = -2.0 * np.pi * self.freq_r * dr.unsqueeze(-1)
            pc = -2.0 * np.pi * self.freq_c * dc.unsqueeze(-1)
            ramp_r = torch.polar(torch.ones_like(pr), pr)
            ramp_c = torch.polar(torch.ones_like(pc), pc)
            spec = spec * (ramp_r.unsqueeze(-1) * ramp_c.unsqueeze(-2)).to(spec.dtype)
        mix = torch.fft.irfft2(spec, s=(k, k))
        mix = straight_through_clamp(mix, 0.0)
        sums = torch.clamp(mix.sum(dim=(-2, -1), keepdim=True), min=1e-30)
        return mix / sums


def save_psf_basis(path, basis: PsfBasis) -> None:
    """Write the PSB1 cache format (u32 header, then f32 payload)."""
    path = Path(path)
    stats = basis.residual_stats
    with open(path, "wb") as fh:
        fh.write(_PSB_MAGIC)
        fh.write(struct.pack("<4I", basis.num_zernike, basis.kernel_size_px,
                             basis.rank, basis.num_samples))
        for arr in (basis.mean_psf, basis.components, basis.coeff_weights,
                    basis.coeff_bias):
            fh.write(np.asarray(arr, dtype="<f4").tobytes())
        tail = np.array([stats.get("median_rel_l2", 0.0),
                         stats.get("mean_rel_l2", 0.0),
                         stats.get("p90_rel_l2", 0.0),
                         basis.d_range[0], basis.d_range[1],
                         basis.tilt_slope_px], dtype="<f4")
        fh.write(tail.tobytes())


def load_psf_basis(path) -> PsfBasis:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != _PSB_MAGIC:
        raise ValueError(f"{path} is not a PSB1 file")
    m, k, rank, num_samples = struct.unpack_from("<4I", raw, 4)
    off = 4 + 16
    def take(count):
        nonlocal off
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=off)
        off += 4 * count
        return arr.astype(np.float64)
    mean = take(k * k).reshape(k, k)
    comps = take(rank * k * k).reshape(rank, k, k)
    nf = feature_dim(m)
    weights = take(rank * nf).reshape(rank, nf)
    bias = take(rank)
    tail = take(6)
    stats = {"median_rel_l2": float(tail[0]), "mean_rel_l2": float(tail[1]),
             "p90_rel_l2": float(tail[2])}
    return PsfBasis(rank=rank, kernel_size_px=k, num_zernike=m,
                    num_samples=num_samples, mean_psf=mean, components=comps,
                    coeff_weights=weights, coeff_bias=bias,
                    tilt_slope_px=float(tail[5]), residual_stats=stats,
                    d_range=(float(tail[3]), float(tail[4])))


def cached_psf_basis(params: TurbulenceParams, rank: int, num_samples: int,
                     seed: int, d_range: tuple | None = None,
                     cache_dir=None) -> PsfBasis:
    """Fit-or-load wrapper keyed by a content hash of the fit inputs."""
    if cache_dir is None:
        return fit_psf_basis(params, rank, num_samples, seed, d_range)
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    dtag = "fixed" if d_range is None else f"{d_range[0]:g}-{d_range[1]:g}"
    name = (f"psf_basis_{params.content_hash()}_r{rank}_n{num_samples}"
            f"_s{seed}_d{dtag}.psb")
    path = cache_dir / name
    if path.exists():
        return load_psf_basis(path)
    basis = fit_psf_basis(params, rank, num_samples, seed, d_range)
    save_psf_basis(path, basis)
    return basis
