"""Candidate operations, mixed residual blocks, distillation cells, and the
densely connected super-network with continuous relaxation over alpha/beta."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F


@dataclass(frozen=True)
class OperationSpec:
    """Structural recipe of one candidate operation (C channels -> C channels)."""

    name: str
    kernel: int
    kind: str  # plain | separable | dilated
    dilation: int = 1


OPERATIONS: tuple[OperationSpec, ...] = (
    OperationSpec("conv1x1", 1, "plain"),
    OperationSpec("conv3x3", 3, "plain"),
    OperationSpec("conv5x5", 5, "plain"),
    OperationSpec("conv7x7", 7, "plain"),
    OperationSpec("sepconv3x3", 3, "separable"),
    OperationSpec("sepconv5x5", 5, "separable"),
    OperationSpec("sepconv7x7", 7, "separable"),
    OperationSpec("dilconv3x3", 3, "dilated", dilation=2),
    OperationSpec("dilconv5x5", 5, "dilated", dilation=2),
)

OP_NAMES: tuple[str, ...] = tuple(spec.name for spec in OPERATIONS)
NUM_OPS = len(OPERATIONS)

_SPEC_BY_NAME = {spec.name: spec for spec in OPERATIONS}


def get_operation_spec(name: str) -> OperationSpec:
    try:
        return _SPEC_BY_NAME[name]
    except KeyError:
        raise ValueError(f"unknown operation name: {name!r}") from None


def instantiate_operation(spec: OperationSpec, channels: int) -> nn.Module:
    """Build the learnable layer for one candidate operation.

    All candidates are bias-free and spatial-size preserving:
      plain     -> one kxk conv
      separable -> two (depthwise kxk + pointwise 1x1) pairs
      dilated   -> one (depthwise kxk, dilation 2 + pointwise 1x1) pair
    """
    if channels < 1:
        raise ValueError("channels must be >= 1")
    if spec.name not in _SPEC_BY_NAME:
        raise ValueError(f"unknown operation name: {spec.name!r}")
    c, k = channels, spec.kernel
    if spec.kind == "plain":
        return nn.Conv2d(c, c, k, padding=k // 2, bias=False)
    if spec.kind == "separable":
        return nn.Sequential(
            nn.Conv2d(c, c, k, padding=k // 2, groups=c, bias=False),
            nn.Conv2d(c, c, 1, bias=False),
            nn.Conv2d(c, c, k, padding=k // 2, groups=c, bias=False),
            nn.Conv2d(c, c, 1, bias=False),
        )
    if spec.kind == "dilated":
        d = spec.dilation
        return nn.Sequential(
            nn.Conv2d(c, c, k, padding=d * (k - 1) // 2, dilation=d, groups=c, bias=False),
            nn.Conv2d(c, c, 1, bias=False),
        )
    raise ValueError(f"unknown operation kind: {spec.kind!r}")


def mixed_layer_forward(ops, alpha_row: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
    """Softmax-weighted sum of all candidate op outputs."""
    if not torch.isfinite(alpha_row).all():
        raise ValueError("alpha_row must be finite")
    weights = F.softmax(alpha_row, dim=0)
    out = None
    for w, op in zip(weights, ops):
        y = w * op(x)
        out = y if out is None else out + y
    return out


class MixedLayer(nn.Module):
    """All candidate operations in parallel, blended by an external alpha row."""

    def __init__(self, channels: int, specs: tuple[OperationSpec, ...] = OPERATIONS):
        super().__init__()
        self.channels = channels
        self.specs = specs
        self.ops = nn.ModuleList(instantiate_operation(s, channels) for s in specs)

    def forward(self, x: torch.Tensor, alpha_row: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {x.shape[1]}")
        return mixed_layer_forward(self.ops, alpha_row, x)


def mrb_forward(mixed: MixedLayer, alpha_row: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
    return F.relu(x + mixed(x, alpha_row))


class MixedResidualBlock(nn.Module):
    """Mixed layer + residual skip, then ReLU."""

    def __init__(self, channels: int, specs: tuple[OperationSpec, ...] = OPERATIONS):
        super().__init__()
        self.mixed = MixedLayer(channels, specs)

    def forward(self, x: torch.Tensor, alpha_row: torch.Tensor) -> torch.Tensor:
        return mrb_forward(self.mixed, alpha_row, x)


class ESABlock(nn.Module):
    """Enhanced spatial attention gate (RFDN variant).

    Max-pool uses padding=3 so the block accepts any input of 8 px or more.
    """

    def __init__(self, channels: int, reduction: int = 4):
        super().__init__()
        if channels % reduction != 0:
            raise ValueError("channels must be divisible by esa reduction")
        f = channels // reduction
        self.conv1 = nn.Conv2d(channels, f, 1)
        self.conv_f = nn.Conv2d(f, f, 1)
        self.conv2 = nn.Conv2d(f, f, 3, stride=2, padding=0)
        self.conv_max = nn.Conv2d(f, f, 3, padding=1)
        self.conv3 = nn.Conv2d(f, f, 3, padding=1)
        self.conv3_ = nn.Conv2d(f, f, 3, padding=1)
        self.conv4 = nn.Conv2d(f, channels, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        c1_ = self.conv1(x)
        c1 = self.conv2(c1_)
        v_max = F.max_pool2d(c1, kernel_size=7, stride=3, padding=3)
        v_range = F.relu(self.conv_max(v_max))
        c3 = F.relu(self.conv3(v_range))
        c3 = self.conv3_(c3)
        c3 = F.interpolate(c3, size=x.shape[-2:], mode="bilinear", align_corners=False)
        c4 = self.conv4(c3 + self.conv_f(c1_))
        return x * torch.sigmoid(c4)


class Cell(nn.Module):
    """Three MRBs with information distillation branches, fused and gated by ESA,
    wrapped in a residual connection."""

    def __init__(self, channels: int, distill_ratio: float = 0.5,
                 esa_reduction: int = 4, stage4_kernel: int = 3,
                 specs: tuple[OperationSpec, ...] = OPERATIONS):
        super().__init__()
        dc = channels * distill_ratio
        if abs(dc - round(dc)) > 1e-9:
            raise ValueError("channels * distill_ratio must be an integer")
        dc = int(round(dc))
        self.channels = channels
        self.distilled_channels = dc
        self.mrb1 = MixedResidualBlock(channels, specs)
        self.mrb2 = MixedResidualBlock(channels, specs)
        self.mrb3 = MixedResidualBlock(channels, specs)
        self.distill1 = nn.Conv2d(channels, dc, 1)
        self.distill2 = nn.Conv2d(channels, dc, 1)
        self.distill3 = nn.Conv2d(channels, dc, 1)
        self.distill4 = nn.Conv2d(channels, dc, stage4_kernel, padding=stage4_kernel // 2)
        self.fuse = nn.Conv2d(4 * dc, channels, 1)
        self.esa = ESABlock(channels, esa_reduction)

    def forward(self, x: torch.Tensor, alpha_rows: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {x.shape[1]}")
        d1 = self.distill1(x)
        x1 = self.mrb1(x, alpha_rows[0])
        d2 = self.distill2(x1)
        x2 = self.mrb2(x1, alpha_rows[1])
        d3 = self.distill3(x2)
        x3 = self.mrb3(x2, alpha_rows[2])
        d4 = self.distill4(x3)
        fused = self.fuse(torch.cat([d1, d2, d3, d4], dim=1))
        return x + self.esa(fused)


def aggregate_cell_input(predecessor_feats, beta_j: torch.Tensor,
                         aggregator: nn.Module) -> torch.Tensor:
    """Concat predecessor features scaled by softmax(beta), then 1x1-project to C."""
    if len(predecessor_feats) != beta_j.shape[0]:
        raise ValueError(
            f"{len(predecessor_feats)} predecessor features but beta has "
            f"{beta_j.shape[0]} entries")
    weights = F.softmax(beta_j, dim=0)
    scaled = [w * f for w, f in zip(weights, predecessor_feats)]
    return aggregator(torch.cat(scaled, dim=1))


@dataclass
class ArchParams:
    """Continuous architecture parameters: alpha [num_mixed_layers x 9] and the
    ragged beta (beta[j] weights the j+1 predecessors of cell j; the stem is
    predecessor 0)."""

    alpha: np.ndarray
    beta: list[np.ndarray]

    def validate(self, num_cells: int | None = None) -> None:
        alpha = np.asarray(self.alpha)
        if alpha.ndim != 2 or alpha.shape[1] != NUM_OPS:
            raise ValueError(f"alpha must be [num_mixed_layers x {NUM_OPS}]")
        if num_cells is None:
            num_cells = len(self.beta)
        if alpha.shape[0] != 3 * num_cells:
            raise ValueError("alpha row count must equal cells * 3")
        if len(self.beta) != num_cells:
            raise ValueError("beta must have one group per cell")
        for j, b in enumerate(self.beta):
            if np.asarray(b).shape != (j + 1,):
                raise ValueError(f"beta[{j}] must have length {j + 1}")
        if not np.isfinite(alpha).all() or any(not np.isfinite(b).all() for b in self.beta):
            raise ValueError("architecture parameters must be finite")


@dataclass
class SupernetConfig:
    channels: int = 48
    num_cells: int = 6
    scale: int = 2
    distill_ratio: float = 0.5
    esa_reduction: int = 4
    stage4_kernel: int = 3

    def __post_init__(self):
        if self.channels < 1:
            raise ValueError("channels must be positive")
        if self.num_cells < 1:
            raise ValueError("num_cells must be positive")
        if self.scale not in (2, 3, 4):
            raise ValueError("scale must be one of 2, 3, 4")
        dc = self.channels * self.distill_ratio
        if abs(dc - round(dc)) > 1e-9:
            raise ValueError("channels * distill_ratio must be an integer")
        if self.channels % self.esa_reduction != 0:
            raise ValueError("channels must be divisible by esa_reduction")

    @property
    def distilled_channels(self) -> int:
        return int(round(self.channels * self.distill_ratio))

    @property
    def num_mixed_layers(self) -> int:
        return 3 * self.num_cells


class Supernet(nn.Module):
    """Densely connected search network: stem -> cells (each fed by a
    beta-weighted aggregation of the stem and all prior cell outputs) ->
    fusion over all cell outputs -> global residual -> pixel-shuffle tail."""

    def __init__(self, config: SupernetConfig,
                 specs: tuple[OperationSpec, ...] = OPERATIONS):
        super().__init__()
        self.config = config
        self.specs = specs
        c, n = config.channels, config.num_cells
        self.stem = nn.Conv2d(3, c, 3, padding=1)
        self.cells = nn.ModuleList(
            Cell(c, config.distill_ratio, config.esa_reduction,
                 config.stage4_kernel, specs)
            for _ in range(n))
        self.input_aggregators = nn.ModuleList(
            nn.Conv2d((j + 1) * c, c, 1) for j in range(n))
        self.fusion1 = nn.Conv2d(n * c, c, 1)
        self.fusion2 = nn.Conv2d(c, c, 3, padding=1)
        self.tail = nn.Conv2d(c, 3 * config.scale ** 2, 3, padding=1)
        self.shuffle = nn.PixelShuffle(config.scale)
        # uniform relaxation at init: every op 1/9, every connection 1/(j+1)
        self.alpha = nn.Parameter(torch.zeros(3 * n, len(specs)))
        self.beta = nn.ParameterList(nn.Parameter(torch.zeros(j + 1)) for j in range(n))

    def forward(self, lr: torch.Tensor) -> torch.Tensor:
        if lr.ndim != 4 or lr.shape[1] != 3:
            raise ValueError("input must be a (B, 3, H, W) batch")
        stem_out = self.stem(lr)
        feats = [stem_out]
        cell_outs = []
        for j, cell in enumerate(self.cells):
            inp = aggregate_cell_input(feats, self.beta[j], self.input_aggregators[j])
            out = cell(inp, self.alpha[3 * j:3 * j + 3])
            feats.append(out)
            cell_outs.append(out)
        body = self.fusion2(self.fusion1(torch.cat(cell_outs, dim=1))) + stem_out
        return self.shuffle(self.tail(body))

    def arch_parameters(self):
        """The A = [alpha, beta] parameter set (disjoint from theta)."""
        return [self.alpha, *self.beta]

    def weight_parameters(self):
        """The theta parameter set (disjoint from alpha/beta)."""
        arch = {id(p) for p in self.arch_parameters()}
        return [p for p in self.parameters() if id(p) not in arch]

    def arch_params(self) -> ArchParams:
        """Detached numpy snapshot of the current alpha/beta."""
        return ArchParams(
            alpha=self.alpha.detach().cpu().numpy().copy(),
            beta=[b.detach().cpu().numpy().copy() for b in self.beta],
        )
