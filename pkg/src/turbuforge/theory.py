"""Executable checks of when distribution matching pins down the scene.

The identifiability results that motivate adversarial sensing are stated
for spatially invariant blur, so everything here lives in the circular
(periodic) convolution world where the Fourier transform diagonalizes the
forward model exactly. In that setting, two scenes whose blurred
observations share a distribution must agree in Fourier magnitude at every
frequency where the kernel family's power spectral density E[|F h|^2] is
nonzero; if the mean kernel spectrum E[F h] is nonvanishing the scene
itself (phase included) is pinned down; and if the simulator draws
h_s = h_correction * h instead of h, the matching point moves to
h_correction * x.

Each of those statements gets a runnable counterpart: a spectral mask
built by thresholding a Monte Carlo estimate of the family PSD, a masked
Fourier-magnitude error, a brute-force moment-matching oracle that inverts
the observation statistics without any adversarial machinery, and a report
comparing a reconstruction against the correction-blurred truth. All of it
is numpy only and deterministic per seed.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.signal import fftconvolve

from .field import frame_rng
from .psf import phase_from_coeffs, psf_from_phase
from .zernike import build_zernike_basis, noll_covariance

_FRAME_SALT = 5  # observation kernels drawn inside the oracle
_PSD_SALT = 11   # kernels drawn for Monte Carlo spectrum estimates

DEFAULT_TAU = 1e-3


def _as_scene(image: np.ndarray, name: str = "image") -> np.ndarray:
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def _validate_kernel(kernel: np.ndarray) -> np.ndarray:
    k = np.asarray(kernel, dtype=np.float64)
    if k.ndim != 2:
        raise ValueError(f"kernel must be 2-D, got shape {k.shape}")
    if k.min() < -1e-9:
        raise ValueError(f"kernel has negative entries (min {k.min():.3e})")
    s = k.sum()
    if abs(s - 1.0) > 1e-6:
        raise ValueError(f"kernel must sum to 1, got {s:.8f}")
    return k


def embed_kernel(kernel: np.ndarray, grid_px: int) -> np.ndarray:
    """Place a small kernel on an n x n periodic grid, center at (0, 0).

    The embedding makes fft2 of the result the kernel's transfer function
    on the scene grid, with zero phase for symmetric kernels.
    """
    k = np.asarray(kernel, dtype=np.float64)
    if k.ndim != 2:
        raise ValueError("kernel must be 2-D")
    if k.shape[0] > grid_px or k.shape[1] > grid_px:
        raise ValueError(f"kernel {k.shape} exceeds grid {grid_px}")
    out = np.zeros((grid_px, grid_px))
    out[:k.shape[0], :k.shape[1]] = k
    return np.roll(out, (-(k.shape[0] // 2), -(k.shape[1] // 2)), axis=(0, 1))


def kernel_spectrum(kernel: np.ndarray, grid_px: int) -> np.ndarray:
    """Transfer function F(embed(h)) on the scene grid (complex array)."""
    return np.fft.fft2(embed_kernel(kernel, grid_px))


def circular_convolve(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Periodic convolution of a scene with a small kernel via the FFT."""
    img = _as_scene(image)
    if img.shape[0] != img.shape[1]:
        raise ValueError("circular_convolve expects a square scene")
    spec = kernel_spectrum(kernel, img.shape[0])
    return np.fft.ifft2(np.fft.fft2(img) * spec).real


@dataclass(frozen=True)
class KernelFamily:
    """A distribution over unit-sum non-negative blur kernels.

    ``draw`` maps a numpy Generator to one kernel. Finite mixtures also
    carry their components and weights so the mean spectrum and mean power
    spectrum are available exactly, with no Monte Carlo error.
    """

    name: str
    draw: Callable[[np.random.Generator], np.ndarray]
    components: tuple | None = None
    probs: tuple | None = None
    mean_spectrum_fn: Callable[[int], np.ndarray] | None = None
    mean_power_spectrum_fn: Callable[[int], np.ndarray] | None = None

    def __post_init__(self):
        if (self.components is None) != (self.probs is None):
            raise ValueError("components and probs must be given together")
        if self.components is not None:
            if len(self.components) != len(self.probs):
                raise ValueError("components and probs lengths differ")
            if abs(sum(self.probs) - 1.0) > 1e-9:
                raise ValueError("probs must sum to 1")
            for c in self.components:
                _validate_kernel(c)

    def mean_spectrum(self, grid_px: int) -> np.ndarray | None:
        """Exact E[F h] on the scene grid, or None when no closed form."""
        if self.mean_spectrum_fn is not None:
            return self.mean_spectrum_fn(grid_px)
        if self.components is None:
            return None
        out = np.zeros((grid_px, grid_px), dtype=np.complex128)
        for c, p in zip(self.components, self.probs):
            out += p * kernel_spectrum(c, grid_px)
        return out

    def mean_power_spectrum(self, grid_px: int) -> np.ndarray | None:
        """Exact E[|F h|^2] on the scene grid, or None when no closed form."""
        if self.mean_power_spectrum_fn is not None:
            return self.mean_power_spectrum_fn(grid_px)
        if self.components is None:
            return None
        out = np.zeros((grid_px, grid_px))
        for c, p in zip(self.components, self.probs):
            out += p * np.abs(kernel_spectrum(c, grid_px)) ** 2
        return out


def _mixture_family(name: str, kernels: Sequence[np.ndarray],
                    probs: Sequence[float]) -> KernelFamily:
    kernels = tuple(np.asarray(k, dtype=np.float64) for k in kernels)
    probs = tuple(float(p) for p in probs)

    def draw(rng: np.random.Generator) -> np.ndarray:
        return kernels[rng.choice(len(kernels), p=probs)]

    return KernelFamily(name=name, draw=draw, components=kernels, probs=probs)


def delta_family() -> KernelFamily:
    """Always the identity kernel; flat unit spectrum."""
    return _mixture_family("delta", [np.ones((1, 1))], [1.0])


def box_delta_family(box_px: int = 3) -> KernelFamily:
    """Even mixture of the identity kernel and a box blur.

    The smallest family whose observations are genuinely ambiguous frame
    to frame, yet whose PSD stays bounded away from zero (the delta
    component contributes a flat 1 everywhere), so the spectral mask is
    all ones and magnitude recovery is possible at every frequency.
    """
    if box_px < 2:
        raise ValueError("box_px must be at least 2")
    box = np.full((box_px, box_px), 1.0 / box_px**2)
    return _mixture_family(f"box{box_px}-delta", [np.ones((1, 1)), box],
                           [0.5, 0.5])


def _gaussian_kernel(sigma: float, kernel_px: int) -> np.ndarray:
    c = kernel_px // 2
    r = np.arange(kernel_px, dtype=np.float64) - c
    g = np.exp(-0.5 * (r / sigma) ** 2)
    k = np.outer(g, g)
    return k / k.sum()


def gaussian_family(sigmas: Sequence[float] = (0.4, 0.8, 1.2),
                    kernel_px: int = 9) -> KernelFamily:
    """Uniform mixture of centered Gaussian blurs of the given widths.

    Every component has a strictly positive transfer function, so the mean
    spectrum E[F h] is positive everywhere and first-moment division
    recovers the scene exactly in the infinite-data limit.
    """
    if len(sigmas) == 0:
        raise ValueError("sigmas must be nonempty")
    kernels = [_gaussian_kernel(s, kernel_px) for s in sigmas]
    probs = [1.0 / len(kernels)] * len(kernels)
    name = "gauss-" + "-".join(f"{s:g}" for s in sigmas)
    return _mixture_family(name, kernels, probs)


def lowpass_family(grid_px: int, cutoff_cycles: float) -> KernelFamily:
    """One fixed low-pass kernel with half-power point at ``cutoff_cycles``.

    The transfer function is a radial Gaussian in frequency scaled so
    |H|^2 crosses 1/2 exactly at the cutoff (cycles per pixel); the
    spatial kernel is its inverse DFT, which is positive. Thresholding
    the PSD at tau = 0.5 therefore reproduces the passband disk.
    """
    if not 0 < cutoff_cycles <= 0.5:
        raise ValueError("cutoff_cycles must be in (0, 0.5]")
    f = np.fft.fftfreq(grid_px)
    rr = np.sqrt(f[:, None] ** 2 + f[None, :] ** 2)
    spec = np.exp(-0.5 * np.log(2.0) * (rr / cutoff_cycles) ** 2)
    kern = np.fft.ifft2(spec).real
    kern = np.fft.fftshift(kern)
    # inverse DFT of a sampled Gaussian is positive up to roundoff
    kern = np.clip(kern, 0.0, None)
    kern /= kern.sum()
    return _mixture_family(f"lowpass-{cutoff_cycles:g}", [kern], [1.0])


def two_point_family(grid_px: int) -> KernelFamily:
    """Half the identity plus half a uniformly displaced copy (ghosting).

    Each draw splits the light between the original position and one
    random grid shift, so every frequency bin sees an independent random
    cosine: |F h|^2 = (1 + cos(2 pi k.t / n)) / 2. The exact moments are
    E[F h] = 1/2 and E[|F h|^2] = 1/2 off DC (1 at DC), and an average
    over frames fluctuates independently in every bin. That makes the
    oracle's error concentrate tightly around its 1/sqrt(L) law, which is
    what a convergence-in-L check needs; mixture families put all their
    fluctuation in a handful of component proportions and converge far
    more erratically.
    """
    if grid_px < 2:
        raise ValueError("grid_px must be at least 2")
    c = grid_px // 2

    def draw(rng: np.random.Generator) -> np.ndarray:
        t = int(rng.integers(grid_px * grid_px))
        dr, dc = divmod(t, grid_px)
        k = np.zeros((grid_px, grid_px))
        k[c, c] += 0.5
        k[(c + dr) % grid_px, (c + dc) % grid_px] += 0.5
        return k

    def mean_spec(n: int) -> np.ndarray:
        if n != grid_px:
            raise ValueError(f"family built for grid {grid_px}, asked {n}")
        out = np.full((n, n), 0.5, dtype=np.complex128)
        out[0, 0] = 1.0
        return out

    def mean_power(n: int) -> np.ndarray:
        if n != grid_px:
            raise ValueError(f"family built for grid {grid_px}, asked {n}")
        out = np.full((n, n), 0.5)
        out[0, 0] = 1.0
        return out

    return KernelFamily(name=f"two-point-{grid_px}", draw=draw,
                        mean_spectrum_fn=mean_spec,
                        mean_power_spectrum_fn=mean_power)


def zernike_family(d_over_r0: float, kernel_px: int = 33,
                   num_modes: int = 15) -> KernelFamily:
    """Physical turbulence kernels: one aperture-phase PSF per draw.

    Coefficients follow the atmospheric covariance at the given strength;
    no closed-form spectrum, so masks come from Monte Carlo.
    """
    zbasis = build_zernike_basis(num_modes, kernel_px)
    cov = noll_covariance(num_modes, d_over_r0)

    def draw(rng: np.random.Generator) -> np.ndarray:
        alpha = cov.cholesky_factor @ rng.standard_normal(num_modes - 1)
        return psf_from_phase(phase_from_coeffs(alpha, zbasis), zbasis)

    return KernelFamily(name=f"zernike-d{d_over_r0:g}-k{kernel_px}",
                        draw=draw)


def convolved_family(base: KernelFamily,
                     correction: np.ndarray) -> KernelFamily:
    """The family of correction * h for h drawn from ``base``.

    Models a simulator whose every kernel is the true one blurred by a
    fixed correction; matching its observation distribution steers the
    reconstruction to correction * x instead of x.
    """
    corr = _validate_kernel(correction)

    def conv(k: np.ndarray) -> np.ndarray:
        out = np.clip(fftconvolve(k, corr, mode="full"), 0.0, None)
        return out / out.sum()

    def draw(rng: np.random.Generator) -> np.ndarray:
        return conv(base.draw(rng))

    comps = None if base.components is None else tuple(
        conv(c) for c in base.components)
    return KernelFamily(name=f"{base.name}*corr", draw=draw,
                        components=comps, probs=base.probs)


@dataclass(frozen=True)
class SpectralMask:
    """Binary support of the family PSD on the scene frequency grid.

    ``mask`` is 1 exactly where ``psd_estimate`` exceeds tau times its
    maximum. ``num_kernel_samples`` is 0 when the PSD is exact (closed
    form) rather than a Monte Carlo average.
    """

    mask: np.ndarray
    psd_estimate: np.ndarray
    tau: float
    num_kernel_samples: int

    def __post_init__(self):
        if self.mask.shape != self.psd_estimate.shape:
            raise ValueError("mask and psd_estimate shapes differ")
        expect = self.psd_estimate > self.tau * self.psd_estimate.max()
        if not np.array_equal(self.mask, expect):
            raise ValueError("mask does not match thresholded psd_estimate")

    @property
    def support_fraction(self) -> float:
        return float(self.mask.mean())


def mask_from_psd(psd: np.ndarray, tau: float = DEFAULT_TAU,
                  num_kernel_samples: int = 0) -> SpectralMask:
    """Threshold a power spectral density at tau times its maximum."""
    psd = np.asarray(psd, dtype=np.float64)
    if tau <= 0:
        raise ValueError("tau must be positive")
    return SpectralMask(mask=psd > tau * psd.max(), psd_estimate=psd,
                        tau=float(tau), num_kernel_samples=num_kernel_samples)


def estimate_spectral_mask(family: KernelFamily, grid_px: int,
                           num_samples: int = 400, tau: float = DEFAULT_TAU,
                           seed: int = 0) -> SpectralMask:
    """Monte Carlo PSD of the family, thresholded at tau times its max.

    Averages |F h|^2 over ``num_samples`` draws on the scene grid. Each
    draw uses its own counter-based stream, so the estimate is
    deterministic per seed and order-independent.
    """
    if num_samples < 100:
        raise ValueError("num_samples must be at least 100")
    psd = np.zeros((grid_px, grid_px))
    for i in range(num_samples):
        h = family.draw(frame_rng(seed, i, salt=_PSD_SALT))
        psd += np.abs(kernel_spectrum(h, grid_px)) ** 2
    psd /= num_samples
    return mask_from_psd(psd, tau, num_kernel_samples=num_samples)


def masked_magnitude_error(x: np.ndarray, x_tilde: np.ndarray,
                           mask: SpectralMask) -> float:
    """Relative L2 gap between Fourier magnitudes on the mask support.

    ||S (|F x| - |F x_tilde|)||_2 / ||S |F x|||_2. The reference scene
    must have energy on the support.
    """
    a = _as_scene(x, "x")
    b = _as_scene(x_tilde, "x_tilde")
    if a.shape != b.shape or a.shape != mask.mask.shape:
        raise ValueError(f"shape mismatch: x {a.shape}, x_tilde {b.shape}, "
                         f"mask {mask.mask.shape}")
    ma = np.abs(np.fft.fft2(a)) * mask.mask
    mb = np.abs(np.fft.fft2(b)) * mask.mask
    den = np.linalg.norm(ma)
    if den == 0.0:
        raise ValueError("reference spectrum is zero on the mask support")
    return float(np.linalg.norm(ma - mb) / den)


def _family_spectra(family: KernelFamily, grid_px: int,
                    num_kernel_samples: int, seed: int):
    """(E[F h], E[|F h|^2]) on the grid, exact when available else MC."""
    mean = family.mean_spectrum(grid_px)
    power = family.mean_power_spectrum(grid_px)
    if mean is not None and power is not None:
        return mean, power
    mean = np.zeros((grid_px, grid_px), dtype=np.complex128)
    power = np.zeros((grid_px, grid_px))
    for i in range(num_kernel_samples):
        spec = kernel_spectrum(family.draw(frame_rng(seed, i,
                                                     salt=_PSD_SALT)),
                               grid_px)
        mean += spec
        power += np.abs(spec) ** 2
    return mean / num_kernel_samples, power / num_kernel_samples


def isoplanatic_oracle(x_true: np.ndarray, family: KernelFamily,
                       num_frames: int, seed: int, *, moment: int = 2,
                       tau: float = DEFAULT_TAU,
                       num_kernel_samples: int = 2000,
                       projection_iters: int = 200) -> np.ndarray:
    """Brute-force distribution matcher for spatially invariant blur.

    Simulates ``num_frames`` noiseless periodic observations y_i = h_i * x
    and inverts their moments, with no adversarial machinery involved:

    - moment=2: E[|F y|^2] = |F x|^2 E[|F h|^2], so dividing the observed
      power by the family PSD on the mask support gives the scene's
      Fourier magnitude; the scene is then recovered by alternating
      projections between that masked magnitude and the box [0, 1] in
      image space, initialized at the observation mean (whose phases are
      already correct whenever the mean transfer function is positive).
      The last step applied is the magnitude projection.
    - moment=1: E[F y] = E[F h] F x, so dividing the mean observed
      spectrum by the mean transfer function recovers the scene exactly,
      phase included, wherever E[F h] is nonzero.
    """
    x = _as_scene(x_true, "x_true")
    if x.shape[0] != x.shape[1]:
        raise ValueError("isoplanatic_oracle expects a square scene")
    if moment not in (1, 2):
        raise ValueError(f"moment must be 1 or 2, got {moment}")
    if num_frames < 1:
        raise ValueError("num_frames must be positive")
    n = x.shape[0]

    spec_x = np.fft.fft2(x)
    sum_spec = np.zeros_like(spec_x)
    sum_power = np.zeros((n, n))
    for i in range(num_frames):
        h = family.draw(frame_rng(seed, i, salt=_FRAME_SALT))
        spec_y = spec_x * kernel_spectrum(h, n)
        sum_spec += spec_y
        sum_power += np.abs(spec_y) ** 2
    mean_spec = sum_spec / num_frames
    mean_power = sum_power / num_frames

    mean_h, power_h = _family_spectra(family, n, num_kernel_samples, seed)
    support = mask_from_psd(power_h, tau).mask
    if support.mean() < 0.1:
        warnings.warn(f"mask covers {support.mean():.1%} of frequencies; "
                      "oracle is under-determined", stacklevel=2)

    if moment == 1:
        safe = np.abs(mean_h) > 1e-12 * np.abs(mean_h).max()
        spec_hat = np.where(safe, mean_spec / np.where(safe, mean_h, 1.0),
                            0.0)
        return np.clip(np.fft.ifft2(spec_hat).real, 0.0, 1.0)

    mag2 = np.where(support, mean_power / np.where(support, power_h, 1.0),
                    0.0)
    target_mag = np.sqrt(np.clip(mag2, 0.0, None))
    recon = np.fft.ifft2(mean_spec).real  # observation mean
    spec = np.fft.fft2(recon)
    for it in range(projection_iters):
        phase = np.exp(1j * np.angle(spec))
        spec = np.where(support, target_mag * phase, spec)
        if it == projection_iters - 1:
            break
        recon = np.clip(np.fft.ifft2(spec).real, 0.0, 1.0)
        spec = np.fft.fft2(recon)
    return np.fft.ifft2(spec).real


@dataclass(frozen=True)
class MismatchReport:
    """How a reconstruction splits between the truth and its blurred twin.

    Relative L2 and masked-magnitude errors of the reconstruction against
    both h_correction * x (the point a correction-blurred simulator steers
    to) and x itself.
    """

    rel_l2_vs_corrected: float
    rel_l2_vs_truth: float
    masked_error_vs_corrected: float
    masked_error_vs_truth: float
    support_fraction: float


def model_mismatch_report(x_true: np.ndarray, family: KernelFamily,
                          h_correction: np.ndarray, recon: np.ndarray, *,
                          tau: float = DEFAULT_TAU,
                          num_kernel_samples: int = 2000,
                          seed: int = 0) -> MismatchReport:
    """Compare a reconstruction against the correction-blurred truth.

    When the simulator draws h_correction * h while reality draws h, a
    perfect distribution match lands on h_correction * x; the report makes
    the comparison against both that target and the unblurred truth, in
    plain relative L2 and on the family's spectral support.
    """
    x = _as_scene(x_true, "x_true")
    r = _as_scene(recon, "recon")
    if x.shape != r.shape:
        raise ValueError(f"shape mismatch: x_true {x.shape}, recon {r.shape}")
    corrected = circular_convolve(x, _validate_kernel(h_correction))
    _, power_h = _family_spectra(family, x.shape[0], num_kernel_samples,
                                 seed)
    mask = mask_from_psd(power_h, tau)

    def rel_l2(target: np.ndarray) -> float:
        return float(np.linalg.norm(r - target) / np.linalg.norm(target))

    return MismatchReport(
        rel_l2_vs_corrected=rel_l2(corrected),
        rel_l2_vs_truth=rel_l2(x),
        masked_error_vs_corrected=masked_magnitude_error(corrected, r, mask),
        masked_error_vs_truth=masked_magnitude_error(x, r, mask),
        support_fraction=mask.support_fraction,
    )


def discriminator_margin(real_scores: np.ndarray,
                         fake_scores: np.ndarray) -> float:
    """|mean(real) - mean(fake)|: how far apart the critic still holds the
    two distributions. Small margins gate the distribution-matching
    checks; large ones mean the match was never achieved."""
    r = np.asarray(real_scores, dtype=np.float64).ravel()
    f = np.asarray(fake_scores, dtype=np.float64).ravel()
    if r.size == 0 or f.size == 0:
        raise ValueError("score arrays must be nonempty")
    return float(abs(r.mean() - f.mean()))


def hash_inputs(**kwargs) -> str:
    """Short stable hash of a check's inputs for the verification log."""
    canon = json.dumps(_canonical(kwargs), sort_keys=True)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _canonical(obj):
    if isinstance(obj, np.ndarray):
        return ["array", str(obj.dtype), list(obj.shape),
                hashlib.sha256(np.ascontiguousarray(obj).tobytes())
                .hexdigest()[:16]]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, (bool, int, float, str)) or obj is None:
        return obj
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, dict):
        return {str(k): _canonical(v) for k, v in sorted(obj.items())}
    raise TypeError(f"cannot hash input of type {type(obj).__name__}")


@dataclass(frozen=True)
class VerificationRecord:
    """One line of the verification report."""

    name: str
    inputs_hash: str
    metric: float
    threshold: float
    passed: bool

    def to_json(self) -> str:
        return json.dumps({"name": self.name, "inputs_hash": self.inputs_hash,
                           "metric": self.metric, "threshold": self.threshold,
                           "passed": self.passed})

    @classmethod
    def from_json(cls, line: str) -> "VerificationRecord":
        return cls(**json.loads(line))


def write_verification_report(path, records: Iterable[VerificationRecord]) -> None:
    """Write one JSON record per line."""
    text = "".join(r.to_json() + "\n" for r in records)
    Path(path).write_text(text)


def read_verification_report(path) -> list[VerificationRecord]:
    lines = Path(path).read_text().splitlines()
    return [VerificationRecord.from_json(line) for line in lines if line]
