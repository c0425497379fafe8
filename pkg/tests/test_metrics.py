import json
import math

import numpy as np
import pytest

from radsmith.core.errors import ArgumentError
from radsmith.models.schemas import EvaluationReport, MetricsReport
from radsmith.services.imagecore import Image
from radsmith.services.metrics import C1, evaluate_set, format_table, per_image_frame, psnr, render_table, ssim


def _flat(value: float, size: int = 16) -> Image:
    return Image(np.full((1, size, size), value))


class TestPsnr:
    def test_identical_is_infinite(self, radiographs):
        assert psnr(radiographs[0], radiographs[0]) == math.inf

    def test_known_value(self):
        assert psnr(_flat(0.0), _flat(0.1)) == pytest.approx(20.0)

    def test_one_level_error_closed_form(self):
        assert psnr(_flat(0.5), _flat(0.5 + 1.0 / 255.0)) == pytest.approx(20.0 * math.log10(255.0), abs=1e-6)
        assert psnr(_flat(0.5), _flat(0.5 + 1.0 / 255.0)) == pytest.approx(48.1308, abs=1e-4)
        assert psnr(_flat(0.3), _flat(0.4)) == pytest.approx(20.0, abs=1e-6)

    def test_decreases_with_noise_amplitude(self, rng):
        base = rng.uniform(0.25, 0.75, size=(1, 24, 24))
        pattern = rng.uniform(-1.0, 1.0, size=base.shape)
        values = [psnr(Image(base), Image(base + amp * pattern)) for amp in (0.01, 0.02, 0.05, 0.1, 0.2)]
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_symmetric(self, radiographs):
        a, b = radiographs[:2]
        assert psnr(a, b) == pytest.approx(psnr(b, a))

    def test_crop_border_ignores_edges(self):
        a = np.full((1, 16, 16), 0.5)
        b = a.copy()
        b[:, 0, :] = 0.0
        assert psnr(Image(a), Image(b), crop_border=1) == math.inf
        assert math.isfinite(psnr(Image(a), Image(b)))

    def test_dimension_mismatch(self):
        with pytest.raises(ArgumentError):
            psnr(_flat(0.0, 16), _flat(0.0, 12))

    def test_crop_too_large(self):
        with pytest.raises(ArgumentError):
            psnr(_flat(0.0), _flat(0.0), crop_border=8)

    def test_rgb_space_uses_all_channels(self):
        a = Image(np.zeros((3, 12, 12)))
        b = Image(np.zeros((3, 12, 12)))
        assert psnr(a, b, space="rgb") == math.inf
        with pytest.raises(ArgumentError):
            psnr(a, b, space="lab")


class TestSsim:
    def test_identical_is_one(self, radiographs):
        assert ssim(radiographs[1], radiographs[1]) == pytest.approx(1.0)

    def test_bounded_and_symmetric(self, radiographs, rng):
        noisy = Image(np.clip(radiographs[0].data + 0.1 * rng.standard_normal((1, 32, 32)), 0.0, 1.0))
        value = ssim(radiographs[0], noisy)
        assert -1.0 <= value < 1.0
        assert value == pytest.approx(ssim(noisy, radiographs[0]))

    @pytest.mark.parametrize("c,d", [(0.2, 0.1), (0.5, -0.3), (0.05, 0.9)])
    def test_zero_variance_closed_form(self, c, d):
        expected = (2 * c * (c + d) + C1) / (c * c + (c + d) ** 2 + C1)
        assert ssim(_flat(c), _flat(c + d)) == pytest.approx(expected, abs=1e-9)

    def test_symmetric_to_round_off(self, radiographs):
        a, b = radiographs[2:]
        assert abs(ssim(a, b) - ssim(b, a)) < 1e-12

    def test_invariant_under_joint_translation(self, rng):
        a = rng.random((1, 40, 40))
        b = np.clip(a + 0.1 * rng.standard_normal(a.shape), 0.0, 1.0)
        shift = (3, 5)
        a2, b2 = np.roll(a, shift, axis=(1, 2)), np.roll(b, shift, axis=(1, 2))
        first = ssim(Image(a[:, :30, :30]), Image(b[:, :30, :30]))
        moved = ssim(Image(a2[:, 3:33, 5:35]), Image(b2[:, 3:33, 5:35]))
        assert moved == pytest.approx(first, abs=1e-12)

    def test_too_small_after_crop(self):
        with pytest.raises(ArgumentError):
            ssim(_flat(0.2, 16), _flat(0.3, 16), crop_border=3)


class TestReports:
    def test_infinite_psnr_excluded_from_mean(self):
        a, b = _flat(0.0), _flat(0.1)
        report = evaluate_set([(a, a), (a, b)], ids=["same", "diff"])
        assert report.infinite_psnr_count == 1
        assert report.mean_psnr_db == pytest.approx(20.0)
        assert report.per_image[0].psnr_db == math.inf

    def test_all_identical_mean_is_infinite(self):
        a = _flat(0.3)
        report = evaluate_set([(a, a)])
        assert report.mean_psnr_db == math.inf
        assert report.mean_ssim == pytest.approx(1.0)

    def test_json_uses_inf_sentinel(self):
        a = _flat(0.3)
        report = evaluate_set([(a, a)], ids=["x"])
        payload = json.loads(report.model_dump_json())
        assert payload["per_image"][0]["psnr_db"] == "inf"
        assert payload["mean_psnr_db"] == "inf"
        again = MetricsReport.model_validate_json(report.model_dump_json())
        assert again.per_image[0].psnr_db == math.inf

    def test_empty_and_mismatched_ids(self):
        a = _flat(0.3)
        with pytest.raises(ArgumentError):
            evaluate_set([])
        with pytest.raises(ArgumentError):
            evaluate_set([(a, a)], ids=["one", "two"])

    def test_per_image_frame(self):
        a, b = _flat(0.0), _flat(0.1)
        frame = per_image_frame(evaluate_set([(a, b)], ids=["img"]))
        assert list(frame.index) == ["img"]
        assert frame.loc["img", "psnr_db"] == pytest.approx(20.0)

    def test_table_layout(self):
        a, b, c = _flat(0.0), _flat(0.1), _flat(0.01)
        report = EvaluationReport(dataset="fixture", scale=2, method="Ours",
                                  model=evaluate_set([(c, a)]), baseline=evaluate_set([(b, a)]))
        table = format_table([report])
        assert set(table.columns) == {"Ours", "Bic"}
        assert table.loc[("x2", "fixture", "PSNR"), "Ours"] == pytest.approx(40.0)
        assert table.loc[("x2", "fixture", "PSNR"), "Bic"] == pytest.approx(20.0)
        text = render_table(table)
        assert "40.00" in text and "20.00" in text
        assert "SSIM" in text
