"""Discrete architectures: extraction from continuous parameters, the canonical
JSON file format, and construction of the derived (search-free) network."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .search_space import (
    ArchParams,
    ESABlock,
    OP_NAMES,
    SupernetConfig,
    Supernet,
    get_operation_spec,
    instantiate_operation,
)


class GenotypeError(ValueError):
    pass


@dataclass
class Genotype:
    """One discrete architecture: an operation triple per cell, the kept input
    connections per cell (predecessor 0 is the stem), and the global config."""

    cells: list[tuple[str, str, str]]
    connections: list[list[int]]
    channels: int
    num_cells: int
    scale: int

    def validate(self) -> None:
        if len(self.cells) != self.num_cells:
            raise GenotypeError(
                f"expected {self.num_cells} cell triples, got {len(self.cells)}")
        if len(self.connections) != self.num_cells:
            raise GenotypeError(
                f"expected {self.num_cells} connection lists, got {len(self.connections)}")
        for triple in self.cells:
            if len(triple) != 3:
                raise GenotypeError(f"cell must list 3 operations, got {triple!r}")
            for name in triple:
                if name not in OP_NAMES:
                    raise GenotypeError(f"unknown operation name: {name!r}")
        for j, conn in enumerate(self.connections):
            expected = min(2, j + 1)
            if len(conn) != expected:
                raise GenotypeError(
                    f"cell {j} must keep {expected} connections, got {conn!r}")
            if sorted(set(conn)) != list(conn):
                raise GenotypeError(f"cell {j} connections must be sorted and unique")
            if any(i < 0 or i > j for i in conn):
                raise GenotypeError(
                    f"cell {j} connections must reference predecessors 0..{j}")
        if self.channels < 1 or self.scale not in (2, 3, 4):
            raise GenotypeError("invalid channels or scale")


def recent_connections(num_cells: int) -> list[list[int]]:
    """Keep the two most recent predecessors of every cell ({j-1, j}; just the
    stem for cell 0). Used for hand-built genotypes without a searched beta."""
    return [sorted({j, j - 1} if j >= 1 else {0}) for j in range(num_cells)]


def extract_genotype(arch: ArchParams, cfg: SupernetConfig) -> Genotype:
    """Argmax over alpha per mixed layer; top-2 predecessors per beta group
    (top-1 when only one exists). Ties break toward the lowest index."""
    arch.validate(cfg.num_cells)
    alpha = np.asarray(arch.alpha, dtype=np.float64)
    cells = []
    for j in range(cfg.num_cells):
        rows = alpha[3 * j:3 * j + 3]
        cells.append(tuple(OP_NAMES[int(np.argmax(row))] for row in rows))
    connections = []
    for j, beta_j in enumerate(arch.beta):
        k = min(2, j + 1)
        order = np.argsort(-np.asarray(beta_j, dtype=np.float64), kind="stable")
        connections.append(sorted(int(i) for i in order[:k]))
    return Genotype(cells=cells, connections=connections, channels=cfg.channels,
                    num_cells=cfg.num_cells, scale=cfg.scale)


def serialize(genotype: Genotype) -> str:
    """Canonical JSON text; parse(serialize(g)) round-trips byte-identically."""
    genotype.validate()
    doc = {
        "cells": [list(triple) for triple in genotype.cells],
        "connections": [list(conn) for conn in genotype.connections],
        "channels": genotype.channels,
        "num_cells": genotype.num_cells,
        "scale": genotype.scale,
    }
    return json.dumps(doc, indent=2) + "\n"


def parse(text: str) -> Genotype:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GenotypeError(f"malformed genotype JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise GenotypeError("genotype document must be a JSON object")
    missing = {"cells", "connections", "channels", "num_cells", "scale"} - doc.keys()
    if missing:
        raise GenotypeError(f"genotype document missing fields: {sorted(missing)}")
    try:
        genotype = Genotype(
            cells=[tuple(str(n) for n in triple) for triple in doc["cells"]],
            connections=[[int(i) for i in conn] for conn in doc["connections"]],
            channels=int(doc["channels"]),
            num_cells=int(doc["num_cells"]),
            scale=int(doc["scale"]),
        )
    except (TypeError, ValueError) as exc:
        raise GenotypeError(f"malformed genotype document: {exc}") from None
    genotype.validate()
    return genotype


def load_genotype(path) -> Genotype:
    with open(path, "r", encoding="utf-8") as fh:
        return parse(fh.read())


def save_genotype(genotype: Genotype, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(serialize(genotype))


class DerivedResidualBlock(nn.Module):
    """MRB with its searched operation fixed: ReLU(x + op(x))."""

    def __init__(self, op_name: str, channels: int):
        super().__init__()
        self.op = instantiate_operation(get_operation_spec(op_name), channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.relu(x + self.op(x))


class DerivedCell(nn.Module):
    def __init__(self, triple, cfg: SupernetConfig):
        super().__init__()
        c, dc = cfg.channels, cfg.distilled_channels
        self.blocks = nn.ModuleList(
            DerivedResidualBlock(name, c) for name in triple)
        self.distill1 = nn.Conv2d(c, dc, 1)
        self.distill2 = nn.Conv2d(c, dc, 1)
        self.distill3 = nn.Conv2d(c, dc, 1)
        self.distill4 = nn.Conv2d(c, dc, cfg.stage4_kernel,
                                  padding=cfg.stage4_kernel // 2)
        self.fuse = nn.Conv2d(4 * dc, c, 1)
        self.esa = ESABlock(c, cfg.esa_reduction)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        d1 = self.distill1(x)
        x1 = self.blocks[0](x)
        d2 = self.distill2(x1)
        x2 = self.blocks[1](x1)
        d3 = self.distill3(x2)
        x3 = self.blocks[2](x2)
        d4 = self.distill4(x3)
        fused = self.fuse(torch.cat([d1, d2, d3, d4], dim=1))
        return x + self.esa(fused)


class DerivedNetwork(nn.Module):
    """The search-free network a genotype describes. Identical to the supernet
    except each mixed layer is its single chosen op and each cell input is a
    plain (unweighted) concat of the kept predecessors."""

    def __init__(self, genotype: Genotype, cfg: SupernetConfig | None = None):
        super().__init__()
        genotype.validate()
        if cfg is None:
            cfg = SupernetConfig(channels=genotype.channels,
                                 num_cells=genotype.num_cells,
                                 scale=genotype.scale)
        elif (genotype.channels, genotype.num_cells, genotype.scale) != \
                (cfg.channels, cfg.num_cells, cfg.scale):
            raise GenotypeError("genotype does not match the supernet config")
        self.genotype = genotype
        self.config = cfg
        c, n = cfg.channels, cfg.num_cells
        self.stem = nn.Conv2d(3, c, 3, padding=1)
        self.cells = nn.ModuleList(DerivedCell(t, cfg) for t in genotype.cells)
        self.input_aggregators = nn.ModuleList(
            nn.Conv2d(len(genotype.connections[j]) * c, c, 1) for j in range(n))
        self.fusion1 = nn.Conv2d(n * c, c, 1)
        self.fusion2 = nn.Conv2d(c, c, 3, padding=1)
        self.tail = nn.Conv2d(c, 3 * cfg.scale ** 2, 3, padding=1)
        self.shuffle = nn.PixelShuffle(cfg.scale)

    def forward(self, lr: torch.Tensor) -> torch.Tensor:
        if lr.ndim != 4 or lr.shape[1] != 3:
            raise ValueError("input must be a (B, 3, H, W) batch")
        stem_out = self.stem(lr)
        feats = [stem_out]
        cell_outs = []
        for j, cell in enumerate(self.cells):
            kept = [feats[i] for i in self.genotype.connections[j]]
            inp = self.input_aggregators[j](torch.cat(kept, dim=1))
            out = cell(inp)
            feats.append(out)
            cell_outs.append(out)
        body = self.fusion2(self.fusion1(torch.cat(cell_outs, dim=1))) + stem_out
        return self.shuffle(self.tail(body))


def build_derived_network(genotype: Genotype,
                          cfg: SupernetConfig | None = None) -> DerivedNetwork:
    return DerivedNetwork(genotype, cfg)


@torch.no_grad()
def transfer_supernet_weights(supernet: Supernet, derived: DerivedNetwork) -> None:
    """Copy supernet weights into a derived network for the saturation check.

    Mixed layers copy their chosen op; cell aggregators copy the kept
    predecessors' 1x1 blocks scaled by the saturated softmax weight
    (1/len(kept)), which reproduces the supernet's weighted concat exactly.
    """
    g = derived.genotype
    derived.stem.load_state_dict(supernet.stem.state_dict())
    derived.fusion1.load_state_dict(supernet.fusion1.state_dict())
    derived.fusion2.load_state_dict(supernet.fusion2.state_dict())
    derived.tail.load_state_dict(supernet.tail.state_dict())
    for j, cell in enumerate(derived.cells):
        super_cell = supernet.cells[j]
        for i, block in enumerate(cell.blocks):
            op_idx = OP_NAMES.index(g.cells[j][i])
            mixed = getattr(super_cell, f"mrb{i + 1}").mixed
            block.op.load_state_dict(mixed.ops[op_idx].state_dict())
        for part in ("distill1", "distill2", "distill3", "distill4", "fuse", "esa"):
            getattr(cell, part).load_state_dict(getattr(super_cell, part).state_dict())
        src = supernet.input_aggregators[j]
        dst = derived.input_aggregators[j]
        c = g.channels
        kept = g.connections[j]
        scale = 1.0 / len(kept)
        for slot, pred in enumerate(kept):
            dst.weight[:, slot * c:(slot + 1) * c] = \
                src.weight[:, pred * c:(pred + 1) * c] * scale
        dst.bias.copy_(src.bias)


def saturate_arch_parameters(supernet: Supernet, genotype: Genotype,
                             logit: float = 40.0) -> None:
    """Drive alpha/beta so softmax puts (numerically) all mass on the genotype."""
    with torch.no_grad():
        supernet.alpha.fill_(-logit)
        for j, triple in enumerate(genotype.cells):
            for i, name in enumerate(triple):
                supernet.alpha[3 * j + i, OP_NAMES.index(name)] = logit
        for j, conn in enumerate(genotype.connections):
            supernet.beta[j].fill_(-logit)
            for pred in conn:
                supernet.beta[j][pred] = logit
