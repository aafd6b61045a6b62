import math

import pandas as pd
import pytest
import torch

from errors import InvalidArgumentError
from metrics import PSNR_CAP, MetricsReport, eval_metrics, geo_err, mse, psnr, ssim


def _image(seed=0, shape=(3, 16, 16)):
    return torch.rand(shape, generator=torch.Generator().manual_seed(seed))


class TestImageMetrics:
    def test_identical_inputs(self):
        image, depth = _image(), torch.rand(16, 16) + 1.0
        values = eval_metrics(image, image.clone(), depth, depth.clone())
        assert values["mse"] == 0.0
        assert values["psnr"] == PSNR_CAP
        assert values["ssim"] == pytest.approx(1.0, abs=1e-12)
        assert values["geo_err"] == pytest.approx(0.0, abs=1e-20)

    def test_hand_mse(self):
        pred = torch.zeros(1, 2, 2)
        gt = torch.tensor([[[1.0, 0.0], [1.0, 0.0]]])
        assert mse(pred, gt) == 0.5
        assert psnr(pred, gt) == pytest.approx(10 * math.log10(2.0))

    def test_psnr_is_capped(self):
        gt = torch.full((3, 4, 4), 0.5, dtype=torch.float64)
        assert psnr(gt + 1e-7, gt) == PSNR_CAP

    def test_ssim_drops_for_different_images(self):
        assert ssim(_image(0), _image(1)) < 0.5

    def test_ssim_accepts_batches(self):
        a = _image(shape=(2, 3, 16, 16))
        assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            mse(torch.zeros(3, 4, 4), torch.zeros(3, 4, 5))


class TestGeoErr:
    def test_affine_depth_is_free(self):
        gt = torch.rand(8, 8, dtype=torch.float64) + 2.0
        assert geo_err(3.0 * gt - 1.0, gt) == pytest.approx(0.0, abs=1e-20)

    def test_anticorrelated_depth_is_mean_squared(self):
        gt = torch.rand(8, 8, dtype=torch.float64)
        assert geo_err(-gt, gt) == pytest.approx(4.0, abs=1e-9)
        assert geo_err(-gt, gt) != pytest.approx(2.0)  # the root-mean-square value

    def test_mask_restricts_statistics(self):
        gt = torch.tensor([[1.0, 2.0], [3.0, 0.0]], dtype=torch.float64)
        pred = torch.tensor([[2.0, 4.0], [6.0, 50.0]], dtype=torch.float64)
        mask = gt > 0
        assert geo_err(pred, gt, mask) == pytest.approx(0.0, abs=1e-20)
        assert geo_err(pred, gt) > 0.1

    def test_empty_mask(self):
        assert geo_err(torch.rand(4, 4), torch.rand(4, 4), torch.zeros(4, 4, dtype=torch.bool)) == 0.0

    def test_mask_shape(self):
        with pytest.raises(InvalidArgumentError):
            geo_err(torch.rand(4, 4), torch.rand(4, 4), torch.ones(3, 3, dtype=torch.bool))


class TestMetricsReport:
    def _report(self):
        report = MetricsReport()
        for scene in range(2):
            for yaw in (-30.0, 0.0, 30.0):
                base = {"mse": 0.01 * (scene + 1), "psnr": 20.0 + scene, "ssim": 0.9, "geo_err": abs(yaw) / 30}
                report.add(scene, yaw, base, variant="wplus")
                report.add(scene, yaw, {**base, "mse": base["mse"] / 2}, variant="mix")
        return report

    def test_per_yaw(self):
        table = self._report().per_yaw()
        assert list(table.columns[:2]) == ["variant", "yaw"]
        assert len(table) == 6
        row = table[(table["variant"] == "wplus") & (table["yaw"] == 30.0)].iloc[0]
        assert row["mse"] == pytest.approx(0.015)
        assert row["geo_err"] == pytest.approx(1.0)

    def test_means_by_variant(self):
        report = self._report()
        assert report.means("wplus")["mse"] == pytest.approx(0.015)
        assert report.means("mix")["mse"] == pytest.approx(0.0075)
        assert "scene" not in report.means()

    def test_csv(self, tmp_path):
        path = self._report().to_csv(str(tmp_path / "metrics.csv"))
        df = pd.read_csv(path)
        assert list(df.columns) == ["scene", "yaw", "mse", "psnr", "ssim", "geo_err", "variant"]
        assert len(df) == 12
