"""Tests for quality metrics and the metric report container."""

import numpy as np
import pytest

from turbuforge.metrics import MetricReport, psnr


def test_psnr_known_value():
    a = np.zeros((8, 8))
    b = np.full((8, 8), 0.1)  # mse = 0.01 -> psnr = 20 dB
    assert psnr(a, b) == pytest.approx(20.0, abs=1e-12)


def test_psnr_uniform_error():
    a = np.zeros((4, 4))
    b = np.full((4, 4), 0.5)  # mse = 0.25 -> 10 log10(4)
    assert psnr(a, b) == pytest.approx(10.0 * np.log10(4.0), abs=1e-12)


def test_psnr_caps_identical_images():
    x = np.random.default_rng(0).uniform(size=(6, 6))
    assert psnr(x, x) == 99.0
    assert psnr(x, x + 1e-8) == 99.0  # mse 1e-16 under the cap


def test_psnr_symmetry():
    rng = np.random.default_rng(1)
    a, b = rng.uniform(size=(5, 5)), rng.uniform(size=(5, 5))
    assert psnr(a, b) == pytest.approx(psnr(b, a), abs=1e-12)


def test_psnr_shape_mismatch():
    with pytest.raises(ValueError):
        psnr(np.zeros((3, 3)), np.zeros((4, 4)))


def test_metric_report_round_trip():
    rep = MetricReport(psnr_db=21.5, masked_magnitude_error=0.071,
                       wall_clock_s=12.25, config_hash="ab12cd34ef56ab78")
    back = MetricReport.from_json(rep.to_json())
    assert back == rep


def test_metric_report_optional_fields():
    rep = MetricReport(psnr_db=None, masked_magnitude_error=None,
                       wall_clock_s=0.5, config_hash="0" * 16)
    back = MetricReport.from_json(rep.to_json())
    assert back.psnr_db is None and back.masked_magnitude_error is None
