"""Y-channel PSNR/SSIM, the LoG high-frequency error metric, benchmark-folder
evaluation, and scatter-plot data emission."""
from __future__ import annotations

import csv
import math
import os
import warnings
from dataclasses import dataclass, field

import numpy as np
import torch
from scipy import ndimage, signal

from .complexity import genotype_complexity
from .data_pipeline import bicubic_downsample, imread_rgb, list_images
from .losses import LoGKernel

# ITU-R BT.601 studio-swing luma coefficients
_Y_COEFF = np.array([65.481, 128.553, 24.966])
_Y_OFFSET = 16.0


def rgb_to_y(img: np.ndarray) -> np.ndarray:
    """HxWx3 [0,1] image -> Y channel in [0,1] (studio swing: 16/255..235/255)."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("expected an HxWx3 image")
    return (img @ _Y_COEFF + _Y_OFFSET) / 255.0


def psnr(a: np.ndarray, b: np.ndarray, border_crop: int = 0) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if border_crop:
        if 2 * border_crop >= min(a.shape[:2]):
            raise ValueError("border crop larger than the image")
        a = a[border_crop:-border_crop, border_crop:-border_crop]
        b = b[border_crop:-border_crop, border_crop:-border_crop]
    mse = np.mean((a - b) ** 2)
    if mse == 0.0:
        return math.inf
    return float(10.0 * np.log10(1.0 / mse))


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = size // 2
    y, x = np.mgrid[-half:half + 1, -half:half + 1].astype(np.float64)
    win = np.exp(-(x * x + y * y) / (2.0 * sigma * sigma))
    return win / win.sum()


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Windowed SSIM on single-channel [0,1] images: 11x11 Gaussian sigma=1.5,
    K1=0.01, K2=0.03, dynamic range 1."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError("expected two single-channel images of equal shape")
    if min(a.shape) < 11:
        raise ValueError("image smaller than the 11x11 SSIM window")
    win = _gaussian_window()
    c1, c2 = 0.01 ** 2, 0.03 ** 2

    def filt(x):
        return signal.convolve2d(x, win, mode="valid")

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a * mu_a
    var_b = filt(b * b) - mu_b * mu_b
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def hfen(a: np.ndarray, b: np.ndarray, kernel: LoGKernel | None = None) -> float:
    """Mean absolute difference of LoG responses (mirrored borders), matching
    the training-loss definition."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if kernel is None:
        kernel = LoGKernel()
    if min(a.shape[:2]) < kernel.size:
        raise ValueError("image smaller than the LoG kernel")

    def filt(x):
        return ndimage.correlate(x, kernel.weights, mode="mirror")

    if a.ndim == 3:
        diff = np.stack([filt(a[:, :, c]) - filt(b[:, :, c])
                         for c in range(a.shape[2])])
    else:
        diff = filt(a) - filt(b)
    return float(np.abs(diff).mean())


def infer(net: torch.nn.Module, lr: np.ndarray) -> np.ndarray:
    """Run one HxWx3 [0,1] LR image through a network, clamped to [0,1]."""
    was_training = net.training
    net.eval()
    with torch.no_grad():
        x = torch.from_numpy(
            np.ascontiguousarray(lr.transpose(2, 0, 1), dtype=np.float32))
        sr = net(x[None]).clamp_(0.0, 1.0)[0]
    if was_training:
        net.train()
    return sr.numpy().transpose(1, 2, 0).astype(np.float64)


@dataclass
class EvalReport:
    scale: int
    per_image: list[dict] = field(default_factory=list)
    skipped: list[dict] = field(default_factory=list)
    complexity: dict | None = None

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([r["psnr"] for r in self.per_image]))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([r["ssim"] for r in self.per_image]))

    @property
    def mean_hfen(self) -> float:
        return float(np.mean([r["hfen"] for r in self.per_image]))

    def to_dict(self) -> dict:
        return {
            "scale": self.scale,
            "aggregate": {"psnr": self.mean_psnr, "ssim": self.mean_ssim,
                          "hfen": self.mean_hfen,
                          "num_images": len(self.per_image)},
            "per_image": self.per_image,
            "skipped": self.skipped,
            "complexity": self.complexity,
        }


def _complexity_summary(model, scale: int) -> dict | None:
    genotype = getattr(model, "genotype", None)
    cfg = getattr(model, "config", None)
    if genotype is None or cfg is None:
        return None
    h, w = 720 - 720 % scale, 1280 - 1280 % scale
    report = genotype_complexity(genotype, cfg, (h, w))
    return {"params": report.total_params,
            "multiadds": report.total_multiadds,
            "hr_dims": [h, w]}


def evaluate_model(model, hr_dir, scale: int, border_crop: int | None = None,
                   kernel: LoGKernel | None = None) -> EvalReport:
    """Evaluate a model (torch module or HWC->HWC callable) over a folder of HR
    images: degrade, infer, and compute Y-channel metrics per image."""
    if border_crop is None:
        border_crop = scale
    report = EvalReport(scale=scale, complexity=_complexity_summary(model, scale))
    paths = list_images(hr_dir)
    if not paths:
        raise ValueError(f"no images found under {hr_dir!r}")
    for path in paths:
        name = os.path.basename(path)
        try:
            hr = imread_rgb(path)
        except OSError as exc:
            warnings.warn(f"skipping unreadable image {name}: {exc}")
            report.skipped.append({"name": name, "reason": str(exc)})
            continue
        h, w = hr.shape[:2]
        hr = hr[:h - h % scale, :w - w % scale]
        lr = bicubic_downsample(hr, scale)
        if isinstance(model, torch.nn.Module):
            sr = infer(model, lr)
        else:
            sr = np.clip(model(lr), 0.0, 1.0)
        y_sr, y_hr = rgb_to_y(sr), rgb_to_y(hr)
        report.per_image.append({
            "name": name,
            "psnr": psnr(y_sr, y_hr, border_crop),
            "ssim": ssim(y_sr[border_crop:-border_crop, border_crop:-border_crop]
                         if border_crop else y_sr,
                         y_hr[border_crop:-border_crop, border_crop:-border_crop]
                         if border_crop else y_hr),
            "hfen": hfen(y_sr, y_hr, kernel),
        })
    if not report.per_image:
        raise ValueError("no image could be evaluated")
    return report


def emit_scatter_data(reports, path) -> None:
    """Write (name, params_K, multiadds_G, psnr_dB) rows as plot-ready CSV."""
    rows = list(reports)
    if not rows:
        raise ValueError("no scatter entries given")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["name", "params_K", "multiadds_G", "psnr_dB"])
        for name, params_k, multiadds_g, psnr_db in rows:
            writer.writerow([name, repr(float(params_k)), repr(float(multiadds_g)),
                             repr(float(psnr_db))])
