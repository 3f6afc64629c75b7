"""Analytic parameter / Multi-Adds accounting and search-space cardinality.

Multi-Adds follow the convention of the candidate-op table: one
multiply-accumulate per weight per output pixel (no factor 2, biases excluded),
with every body layer evaluated on the low-resolution grid. Pooling, pixel
shuffle, and interpolation contribute nothing.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .search_space import OPERATIONS, OperationSpec, SupernetConfig, get_operation_spec


@dataclass
class LayerCost:
    name: str
    params: int
    multiadds: int


@dataclass
class ComplexityReport:
    total_params: int
    total_multiadds: int
    per_layer: list[LayerCost]
    hr_dims: tuple[int, int]
    scale: int

    def to_dict(self) -> dict:
        return {
            "total_params": self.total_params,
            "total_multiadds": self.total_multiadds,
            "hr_dims": list(self.hr_dims),
            "scale": self.scale,
            "per_layer": [
                {"name": l.name, "params": l.params, "multiadds": l.multiadds}
                for l in self.per_layer
            ],
        }


def op_params(spec: OperationSpec, channels: int) -> int:
    """Weight count of one candidate operation at C channels."""
    if channels < 1:
        raise ValueError("channels must be >= 1")
    c, k = channels, spec.kernel
    if spec.kind == "plain":
        return k * k * c * c
    if spec.kind == "separable":
        return 2 * (k * k * c + c * c)
    if spec.kind == "dilated":
        return k * k * c + c * c
    raise ValueError(f"unknown operation kind: {spec.kind!r}")


def op_multiadds(spec: OperationSpec, channels: int,
                 hr_dims: tuple[int, int], scale: int) -> int:
    """Multiply-accumulates of one candidate op producing a (H/scale, W/scale) map."""
    h, w = hr_dims
    if h % scale or w % scale:
        raise ValueError(f"hr dims {hr_dims} not divisible by scale {scale}")
    return op_params(spec, channels) * (h // scale) * (w // scale)


class _Tally:
    def __init__(self):
        self.layers: list[LayerCost] = []

    def conv(self, name: str, cin: int, cout: int, kernel: int,
             out_hw: tuple[int, int], bias: bool = True, groups: int = 1) -> None:
        weights = kernel * kernel * (cin // groups) * cout
        params = weights + (cout if bias else 0)
        self.layers.append(LayerCost(name, params, weights * out_hw[0] * out_hw[1]))

    def op(self, name: str, spec: OperationSpec, c: int, hw: tuple[int, int]) -> None:
        k = spec.kernel
        if spec.kind == "plain":
            self.conv(name, c, c, k, hw, bias=False)
        elif spec.kind == "separable":
            for i in (1, 2):
                self.conv(f"{name}.dw{i}", c, c, k, hw, bias=False, groups=c)
                self.conv(f"{name}.pw{i}", c, c, 1, hw, bias=False)
        elif spec.kind == "dilated":
            self.conv(f"{name}.dw", c, c, k, hw, bias=False, groups=c)
            self.conv(f"{name}.pw", c, c, 1, hw, bias=False)
        else:
            raise ValueError(f"unknown operation kind: {spec.kind!r}")

    def esa(self, prefix: str, c: int, reduction: int, hw: tuple[int, int]) -> None:
        f = c // reduction
        h, w = hw
        h2, w2 = (h - 3) // 2 + 1, (w - 3) // 2 + 1       # stride-2 3x3, no padding
        h3, w3 = (h2 - 1) // 3 + 1, (w2 - 1) // 3 + 1     # 7x7 max-pool, stride 3, pad 3
        self.conv(f"{prefix}.conv1", c, f, 1, hw)
        self.conv(f"{prefix}.conv_f", f, f, 1, hw)
        self.conv(f"{prefix}.conv2", f, f, 3, (h2, w2))
        self.conv(f"{prefix}.conv_max", f, f, 3, (h3, w3))
        self.conv(f"{prefix}.conv3", f, f, 3, (h3, w3))
        self.conv(f"{prefix}.conv3_", f, f, 3, (h3, w3))
        self.conv(f"{prefix}.conv4", f, c, 1, hw)

    def cell(self, prefix: str, stage_ops: list[list[OperationSpec]],
             cfg: SupernetConfig, hw: tuple[int, int]) -> None:
        c, dc = cfg.channels, cfg.distilled_channels
        for i in (1, 2, 3):
            self.conv(f"{prefix}.distill{i}", c, dc, 1, hw)
            for spec in stage_ops[i - 1]:
                self.op(f"{prefix}.mrb{i}.{spec.name}", spec, c, hw)
        self.conv(f"{prefix}.distill4", c, dc, cfg.stage4_kernel, hw)
        self.conv(f"{prefix}.fuse", 4 * dc, c, 1, hw)
        self.esa(f"{prefix}.esa", c, cfg.esa_reduction, hw)

    def report(self, hr_dims: tuple[int, int], scale: int) -> ComplexityReport:
        return ComplexityReport(
            total_params=sum(l.params for l in self.layers),
            total_multiadds=sum(l.multiadds for l in self.layers),
            per_layer=self.layers,
            hr_dims=tuple(hr_dims),
            scale=scale,
        )


def _network_tally(cfg: SupernetConfig, hr_dims: tuple[int, int],
                   agg_inputs: list[int], stage_ops_per_cell) -> ComplexityReport:
    h, w = hr_dims
    if h % cfg.scale or w % cfg.scale:
        raise ValueError(f"hr dims {hr_dims} not divisible by scale {cfg.scale}")
    hw = (h // cfg.scale, w // cfg.scale)
    c, n = cfg.channels, cfg.num_cells
    t = _Tally()
    t.conv("stem", 3, c, 3, hw)
    for j in range(n):
        t.conv(f"cells.{j}.input_agg", agg_inputs[j] * c, c, 1, hw)
        t.cell(f"cells.{j}", stage_ops_per_cell[j], cfg, hw)
    t.conv("fusion1", n * c, c, 1, hw)
    t.conv("fusion2", c, c, 3, hw)
    t.conv("tail", c, 3 * cfg.scale ** 2, 3, hw)
    return t.report(hr_dims, cfg.scale)


def genotype_complexity(genotype, cfg: SupernetConfig,
                        hr_dims: tuple[int, int]) -> ComplexityReport:
    """Per-layer cost of the derived network a genotype describes."""
    genotype.validate()
    if (genotype.channels, genotype.num_cells, genotype.scale) != \
            (cfg.channels, cfg.num_cells, cfg.scale):
        raise ValueError("genotype does not match the supernet config")
    stage_ops = [[[get_operation_spec(name)] for name in triple]
                 for triple in genotype.cells]
    agg_inputs = [len(conn) for conn in genotype.connections]
    return _network_tally(cfg, hr_dims, agg_inputs, stage_ops)


def supernet_complexity(cfg: SupernetConfig,
                        hr_dims: tuple[int, int]) -> ComplexityReport:
    """Cost of the continuous super-network (all candidate ops live in every
    mixed layer; every predecessor feeds every cell). Architecture parameters
    alpha/beta are not layer weights and are excluded."""
    stage_ops = [[list(OPERATIONS)] * 3 for _ in range(cfg.num_cells)]
    agg_inputs = [j + 1 for j in range(cfg.num_cells)]
    return _network_tally(cfg, hr_dims, agg_inputs, stage_ops)


def search_space_cardinality(cfg: SupernetConfig | int,
                             convention: str = "top2") -> int:
    """Number of discrete architectures.

    convention="paper": 9^3 x prod_{j=2}^{n-1} j  (one extra free connection per
    cell beyond the always-kept immediate predecessor; 87,480 for 6 cells).
    convention="top2": 9^3 x prod_j C(j+1, min(2, j+1)), the count implied by
    keeping the top-2 predecessors of every cell.
    """
    n = cfg.num_cells if isinstance(cfg, SupernetConfig) else int(cfg)
    if n < 1:
        raise ValueError("num_cells must be >= 1")
    base = len(OPERATIONS) ** 3
    if convention == "paper":
        factor = 1
        for j in range(2, n):
            factor *= j
        return base * factor
    if convention == "top2":
        factor = 1
        for j in range(n):
            factor *= math.comb(j + 1, min(2, j + 1))
        return base * factor
    raise ValueError(f"unknown cardinality convention: {convention!r}")
