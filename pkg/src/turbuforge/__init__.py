"""Adversarial multiframe deblurring through simulated atmospheric turbulence."""

__version__ = "0.1.0"

from .params import TurbulenceParams
from .zernike import (ZernikeBasis, NollCovariance, build_zernike_basis,
                      noll_covariance, noll_to_nm)
from .field import (CoefficientField, sample_coefficient_field,
                    reparameterized_coeffs, field_from_xi)
from .psf import (PsfBasis, phase_from_coeffs, psf_from_phase,
                  psfs_from_coeffs, fit_psf_basis, surrogate_psf,
                  save_psf_basis, load_psf_basis, cached_psf_basis)
from .render import (PsfField, FrameStack, convolve_exact, convolve_tiled,
                     simulate_stack, save_stack, load_stack,
                     psf_field_from_coeffs, psf_field_surrogate,
                     uniform_psf_field)
from .metrics import psnr, MetricReport

__all__ = [
    "TurbulenceParams", "ZernikeBasis", "NollCovariance", "CoefficientField",
    "PsfBasis", "PsfField", "FrameStack", "MetricReport",
    "build_zernike_basis", "noll_covariance", "noll_to_nm",
    "sample_coefficient_field", "reparameterized_coeffs", "field_from_xi",
    "phase_from_coeffs", "psf_from_phase", "psfs_from_coeffs",
    "fit_psf_basis", "surrogate_psf", "save_psf_basis", "load_psf_basis",
    "cached_psf_basis", "convolve_exact", "convolve_tiled", "simulate_stack",
    "save_stack", "load_stack", "psf_field_from_coeffs",
    "psf_field_surrogate", "uniform_psf_field", "psnr",
]
