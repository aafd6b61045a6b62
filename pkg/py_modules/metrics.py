"""Image and geometry metrics, and the per-(scene, yaw) report table."""
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import pandas as pd
import torch
import torch.nn.functional as F

from errors import InvalidArgumentError

PSNR_CAP = 99.0
METRIC_COLUMNS = ("mse", "psnr", "ssim", "geo_err")


def _check(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise InvalidArgumentError(f"{what} shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")


def mse(pred: torch.Tensor, gt: torch.Tensor) -> float:
    _check(pred, gt, "image")
    return float((pred.double() - gt.double()).square().mean())


def psnr(pred: torch.Tensor, gt: torch.Tensor) -> float:
    err = mse(pred, gt)
    if err == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / err))


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> torch.Tensor:
    coords = torch.arange(size, dtype=torch.float64) - (size - 1) / 2
    g = torch.exp(-coords.square() / (2 * sigma ** 2))
    g = g / g.sum()
    return torch.outer(g, g)


def ssim(pred: torch.Tensor, gt: torch.Tensor, k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM with an 11×11 Gaussian window (σ=1.5), data range 1, replicate-padded borders."""
    _check(pred, gt, "image")
    x, y = pred.double(), gt.double()
    if x.ndim == 3:
        x, y = x.unsqueeze(0), y.unsqueeze(0)
    ch = x.shape[1]
    window = _gaussian_window().expand(ch, 1, 11, 11).contiguous()

    def filt(img):
        return F.conv2d(F.pad(img, (5, 5, 5, 5), mode="replicate"), window, groups=ch)

    c1, c2 = k1 ** 2, k2 ** 2
    mu_x, mu_y = filt(x), filt(y)
    sxx = filt(x * x) - mu_x * mu_x
    syy = filt(y * y) - mu_y * mu_y
    sxy = filt(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (sxx + syy + c2)
    return float((num / den).mean())


def standardize(depth: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    d = depth.double()
    vals = d[mask] if mask is not None else d.reshape(-1)
    mean = vals.mean()
    std = vals.std(unbiased=False).clamp_min(1e-12)
    return (d - mean) / std


def geo_err(pred_depth: torch.Tensor, gt_depth: torch.Tensor, mask: Optional[torch.Tensor] = None) -> float:
    """Mean of squared differences (not an L2 norm) of depths standardized to zero mean / unit variance.

    Statistics and the mean run over mask when given.
    """
    _check(pred_depth, gt_depth, "depth")
    if mask is not None:
        mask = mask.to(torch.bool)
        if mask.shape != gt_depth.shape:
            raise InvalidArgumentError(f"mask shape {tuple(mask.shape)} does not match depth {tuple(gt_depth.shape)}")
        if not mask.any():
            return 0.0
    diff = standardize(pred_depth, mask) - standardize(gt_depth, mask)
    diff = diff[mask] if mask is not None else diff
    return float(diff.square().mean())


def eval_metrics(pred: torch.Tensor, gt: torch.Tensor, pred_depth: torch.Tensor, gt_depth: torch.Tensor,
                 mask: Optional[torch.Tensor] = None) -> Dict[str, float]:
    return {"mse": mse(pred, gt), "psnr": psnr(pred, gt), "ssim": ssim(pred, gt),
            "geo_err": geo_err(pred_depth, gt_depth, mask)}


@dataclass
class MetricsReport:
    rows: List[Dict] = field(default_factory=list)

    def add(self, scene: int, yaw: float, values: Dict[str, float], **extra) -> None:
        self.rows.append({"scene": scene, "yaw": float(yaw), **values, **extra})

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows)

    def _keys(self, df: pd.DataFrame) -> List[str]:
        return [k for k in ("variant", "yaw") if k in df.columns]

    def _value_columns(self, df: pd.DataFrame) -> List[str]:
        return [c for c in df.columns if c not in ("scene", "yaw") and pd.api.types.is_numeric_dtype(df[c])]

    def per_yaw(self) -> pd.DataFrame:
        """Mean metrics per yaw (and per variant, when rows carry one)."""
        df = self.frame()
        return df.groupby(self._keys(df), sort=True)[self._value_columns(df)].mean().reset_index()

    def means(self, variant: Optional[str] = None) -> Dict[str, float]:
        df = self.frame()
        if variant is not None and "variant" in df.columns:
            df = df[df["variant"] == variant]
        return {c: float(df[c].mean()) for c in self._value_columns(df)}

    def to_csv(self, path: str) -> str:
        self.frame().to_csv(path, index=False, float_format="%.6f")
        return path
