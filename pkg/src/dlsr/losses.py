"""Search/training loss: L1 distortion, Laplacian-of-Gaussian high-frequency
reconstruction (HFEN), and the parameter-count regularizer over alpha."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch.nn import functional as F

from .complexity import op_params
from .search_space import OPERATIONS, OperationSpec


@dataclass
class LossWeights:
    lambda_val: float = 1.0   # validation-loss weight in the arch update
    mu: float = 0.2           # HFEN weight
    gamma: float = 0.2        # parameter-regularizer weight (0 during retrain)

    def __post_init__(self):
        if min(self.lambda_val, self.mu, self.gamma) < 0:
            raise ValueError("loss weights must be non-negative")


def _log_weights(size: int, sigma: float) -> np.ndarray:
    half = size // 2
    y, x = np.mgrid[-half:half + 1, -half:half + 1].astype(np.float64)
    r2 = x * x + y * y
    gauss = np.exp(-r2 / (2.0 * sigma * sigma))
    gauss /= gauss.sum()
    log = gauss * (r2 - 2.0 * sigma * sigma) / sigma ** 4
    return log - log.mean()   # exact zero DC response


@dataclass
class LoGKernel:
    size: int = 15
    sigma: float = 1.5
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.size % 2 == 0 or self.size < 3:
            raise ValueError("kernel size must be odd and >= 3")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.weights is None:
            self.weights = _log_weights(self.size, self.sigma)


def l1_loss(sr: torch.Tensor, hr: torch.Tensor) -> torch.Tensor:
    if sr.shape != hr.shape:
        raise ValueError(f"shape mismatch: {tuple(sr.shape)} vs {tuple(hr.shape)}")
    return (sr - hr).abs().mean()


def log_filter(x: torch.Tensor, kernel: LoGKernel) -> torch.Tensor:
    """Per-channel LoG filtering with reflection padding."""
    c = x.shape[1]
    pad = kernel.size // 2
    if min(x.shape[-2:]) < kernel.size:
        raise ValueError("image smaller than the LoG kernel")
    weight = torch.as_tensor(kernel.weights, dtype=x.dtype, device=x.device)
    weight = weight.expand(c, 1, kernel.size, kernel.size)
    padded = F.pad(x, (pad, pad, pad, pad), mode="reflect")
    return F.conv2d(padded, weight, groups=c)


def hfen_loss(sr: torch.Tensor, hr: torch.Tensor,
              kernel: LoGKernel | None = None) -> torch.Tensor:
    if sr.shape != hr.shape:
        raise ValueError(f"shape mismatch: {tuple(sr.shape)} vs {tuple(hr.shape)}")
    if kernel is None:
        kernel = LoGKernel()
    return (log_filter(sr, kernel) - log_filter(hr, kernel)).abs().mean()


def param_regularizer(alpha: torch.Tensor, channels: int,
                      specs: tuple[OperationSpec, ...] = OPERATIONS) -> torch.Tensor:
    """Sum over mixed layers of the parameter-mass expectation under
    softmax(alpha): pushes alpha away from heavy operations."""
    if not torch.isfinite(alpha).all():
        raise ValueError("alpha must be finite")
    counts = torch.tensor([float(op_params(s, channels)) for s in specs],
                          dtype=alpha.dtype, device=alpha.device)
    normalized = counts / counts.sum()
    return (F.softmax(alpha, dim=-1) * normalized).sum()


def total_loss(sr: torch.Tensor, hr: torch.Tensor, weights: LossWeights,
               alpha: torch.Tensor | None = None, channels: int | None = None,
               kernel: LoGKernel | None = None,
               specs: tuple[OperationSpec, ...] = OPERATIONS) -> torch.Tensor:
    loss = l1_loss(sr, hr)
    if weights.mu:
        loss = loss + weights.mu * hfen_loss(sr, hr, kernel)
    if weights.gamma:
        if alpha is None or channels is None:
            raise ValueError("gamma > 0 requires alpha and channels")
        loss = loss + weights.gamma * param_regularizer(alpha, channels, specs)
    return loss


def loss_components(sr: torch.Tensor, hr: torch.Tensor, weights: LossWeights,
                    alpha: torch.Tensor | None = None, channels: int | None = None,
                    kernel: LoGKernel | None = None) -> dict[str, torch.Tensor]:
    """Total plus the raw parts, for step logs."""
    parts = {"l1": l1_loss(sr, hr), "hfen": hfen_loss(sr, hr, kernel)}
    if alpha is not None and channels is not None:
        parts["lp"] = param_regularizer(alpha, channels)
    total = parts["l1"] + weights.mu * parts["hfen"]
    if weights.gamma and "lp" in parts:
        total = total + weights.gamma * parts["lp"]
    parts["total"] = total
    return parts
