"""Bi-level differentiable search: data split, theta warm-up, alternating
theta/arch updates, and periodic genotype snapshots."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
import torch

from .data_pipeline import SRDataset, make_batches
from .genotype import Genotype, extract_genotype, save_genotype, serialize
from .losses import LoGKernel, LossWeights, loss_components
from .search_space import Supernet, SupernetConfig

CHECKPOINT_VERSION = 1


class SearchDivergenceError(RuntimeError):
    pass


def default_snapshot_steps(total_steps: int) -> list[int]:
    return [total_steps // 4, total_steps // 2, (3 * total_steps) // 4]


@dataclass
class SearchConfig:
    total_steps: int = 2000
    warmup_steps: int = 200
    batch_size: int = 64
    lr_theta: float = 3e-4
    lr_arch: float = 3e-4
    betas_theta: tuple[float, float] = (0.9, 0.999)
    betas_arch: tuple[float, float] = (0.5, 0.999)
    weight_decay: float = 1e-8
    snapshot_steps: list[int] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.warmup_steps >= self.total_steps:
            raise ValueError("warmup_steps must be smaller than total_steps")
        if self.snapshot_steps is None:
            self.snapshot_steps = default_snapshot_steps(self.total_steps)
        self.snapshot_steps = sorted(int(s) for s in self.snapshot_steps)
        for s in self.snapshot_steps:
            if not self.warmup_steps < s <= self.total_steps:
                raise ValueError(
                    f"snapshot step {s} outside (warmup, total_steps]")


@dataclass
class SearchState:
    step: int
    supernet: Supernet
    theta_optimizer: torch.optim.Optimizer
    arch_optimizer: torch.optim.Optimizer
    snapshots: list[tuple[int, Genotype]] = field(default_factory=list)
    loss_log: list[dict] = field(default_factory=list)


def split_dataset(dataset: SRDataset, train_fraction: float,
                  seed: int) -> tuple[SRDataset, SRDataset]:
    """Disjoint, exhaustive, seed-deterministic split."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be in (0, 1)")
    n = len(dataset)
    n_train = int(round(train_fraction * n))
    if n_train < 1 or n_train >= n:
        raise ValueError(f"split {n_train}/{n - n_train} leaves one side empty")
    perm = np.random.default_rng(np.random.SeedSequence((int(seed), 29))).permutation(n)
    return (dataset.subset(sorted(int(i) for i in perm[:n_train])),
            dataset.subset(sorted(int(i) for i in perm[n_train:])))


def _batch_tensors(batch):
    hr, lr = batch
    return torch.from_numpy(hr), torch.from_numpy(lr)


def _apply_grads(loss: torch.Tensor, params: list[torch.Tensor],
                 optimizer: torch.optim.Optimizer, what: str) -> None:
    grads = torch.autograd.grad(loss, params)
    for p, g in zip(params, grads):
        if not torch.isfinite(g).all():
            raise SearchDivergenceError(f"non-finite {what} gradient")
        p.grad = g
    optimizer.step()
    for p in params:
        p.grad = None


def theta_step(net: Supernet, batch_train, weights: LossWeights,
               optimizer: torch.optim.Optimizer,
               kernel: LoGKernel | None = None) -> dict[str, float]:
    """One descent step on the training loss w.r.t. theta only."""
    hr, lr = _batch_tensors(batch_train)
    parts = loss_components(net(lr), hr, weights, alpha=net.alpha,
                            channels=net.config.channels, kernel=kernel)
    loss = parts["total"]
    if not torch.isfinite(loss):
        raise SearchDivergenceError(f"non-finite training loss: {loss.item()!r}")
    _apply_grads(loss, net.weight_parameters(), optimizer, "theta")
    return {k: float(v.detach()) for k, v in parts.items()}


def arch_step(net: Supernet, batch_train, batch_valid, weights: LossWeights,
              optimizer: torch.optim.Optimizer,
              kernel: LoGKernel | None = None) -> dict[str, float]:
    """One descent step on grad_A(L_tr) + lambda * grad_A(L_val), w.r.t.
    alpha/beta only."""
    hr_t, lr_t = _batch_tensors(batch_train)
    hr_v, lr_v = _batch_tensors(batch_valid)
    c = net.config.channels
    parts_tr = loss_components(net(lr_t), hr_t, weights, alpha=net.alpha,
                               channels=c, kernel=kernel)
    parts_val = loss_components(net(lr_v), hr_v, weights, alpha=net.alpha,
                                channels=c, kernel=kernel)
    mixed = parts_tr["total"] + weights.lambda_val * parts_val["total"]
    if not torch.isfinite(mixed):
        raise SearchDivergenceError(f"non-finite mixed loss: {mixed.item()!r}")
    _apply_grads(mixed, net.arch_parameters(), optimizer, "arch")
    return {"l_tr": float(parts_tr["total"].detach()),
            "l_val": float(parts_val["total"].detach()),
            "lp": float(parts_tr["lp"].detach())}


def snapshot_entropy(alpha) -> np.ndarray:
    """Shannon entropy of softmax(alpha) per mixed layer (logging only)."""
    a = np.asarray(alpha.detach().cpu().numpy() if torch.is_tensor(alpha) else alpha,
                   dtype=np.float64)
    a = a - a.max(axis=-1, keepdims=True)
    p = np.exp(a)
    p /= p.sum(axis=-1, keepdims=True)
    return -(p * np.log(p)).sum(axis=-1)


def _entropy_summary(net: Supernet) -> dict[str, float]:
    ent = snapshot_entropy(net.alpha)
    return {"entropy_mean": float(ent.mean()), "entropy_min": float(ent.min()),
            "entropy_max": float(ent.max())}


def save_search_checkpoint(path, state: SearchState, cfg: SearchConfig,
                           train_pos: int, valid_pos: int) -> None:
    net = state.supernet
    torch.save({
        "version": CHECKPOINT_VERSION,
        "kind": "search",
        "step": state.step,
        "model_state": net.state_dict(),
        "theta_optimizer_state": state.theta_optimizer.state_dict(),
        "arch_optimizer_state": state.arch_optimizer.state_dict(),
        "supernet_config": vars(net.config),
        "search_config": {**vars(cfg)},
        "train_position": train_pos,
        "valid_position": valid_pos,
        "snapshots": [(s, serialize(g)) for s, g in state.snapshots],
        "torch_rng": torch.get_rng_state(),
    }, path)


def run_search(cfg: SearchConfig, supernet_cfg: SupernetConfig,
               dataset: SRDataset, weights: LossWeights | None = None,
               train_fraction: float = 0.8, out_dir=None,
               on_step=None) -> SearchState:
    """Algorithm: split -> warm-up (theta only) -> alternating theta/arch steps
    -> genotype snapshots. Fully deterministic under cfg.seed. `on_step`, when
    given, is called as on_step(net, step) after every completed step."""
    weights = weights or LossWeights()
    kernel = LoGKernel()
    torch.manual_seed(cfg.seed)
    net = Supernet(supernet_cfg)
    theta_opt = torch.optim.AdamW(net.weight_parameters(), lr=cfg.lr_theta,
                                  betas=cfg.betas_theta,
                                  weight_decay=cfg.weight_decay)
    arch_opt = torch.optim.AdamW(net.arch_parameters(), lr=cfg.lr_arch,
                                 betas=cfg.betas_arch,
                                 weight_decay=cfg.weight_decay)
    train_ds, valid_ds = split_dataset(dataset, train_fraction, cfg.seed)
    train_stream = make_batches(train_ds, cfg.batch_size, (cfg.seed, 1))
    valid_stream = make_batches(valid_ds, cfg.batch_size, (cfg.seed, 2))
    state = SearchState(step=0, supernet=net, theta_optimizer=theta_opt,
                        arch_optimizer=arch_opt)
    snapshot_at = set(cfg.snapshot_steps)
    log_fh = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        log_fh = open(os.path.join(out_dir, "search_log.jsonl"), "w",
                      encoding="utf-8")
    try:
        for t in range(1, cfg.total_steps + 1):
            record = {"step": t, "phase": "warmup" if t <= cfg.warmup_steps
                      else "search"}
            batch_train = next(train_stream)
            parts = theta_step(net, batch_train, weights, theta_opt, kernel)
            record.update(l_tr=parts["total"], l1=parts["l1"],
                          hfen=parts["hfen"], lp=parts["lp"])
            if t > cfg.warmup_steps:
                arch_parts = arch_step(net, batch_train, next(valid_stream),
                                       weights, arch_opt, kernel)
                record["l_val"] = arch_parts["l_val"]
            record.update(_entropy_summary(net))
            state.loss_log.append(record)
            state.step = t
            if on_step is not None:
                on_step(net, t)
            if log_fh is not None:
                log_fh.write(json.dumps(record) + "\n")
            if t in snapshot_at:
                genotype = extract_genotype(net.arch_params(), supernet_cfg)
                state.snapshots.append((t, genotype))
                if out_dir is not None:
                    save_genotype(genotype,
                                  os.path.join(out_dir, f"genotype_step{t:06d}.json"))
                    save_search_checkpoint(
                        os.path.join(out_dir, "checkpoint.pt"), state, cfg,
                        train_stream.position, valid_stream.position)
    except Exception:
        if out_dir is not None:
            save_search_checkpoint(os.path.join(out_dir, "checkpoint_abort.pt"),
                                   state, cfg, train_stream.position,
                                   valid_stream.position)
        raise
    finally:
        if log_fh is not None:
            log_fh.close()
    if out_dir is not None:
        save_search_checkpoint(os.path.join(out_dir, "checkpoint.pt"), state,
                               cfg, train_stream.position, valid_stream.position)
    return state
