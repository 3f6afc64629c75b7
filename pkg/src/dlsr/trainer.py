"""Retraining of derived networks (no architecture parameters, gamma = 0):
step-decay schedule, resumable checkpoints, and cross-scale warm starting."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import torch

from .data_pipeline import SRDataset, make_batches
from .genotype import DerivedNetwork, Genotype, parse, serialize
from .losses import LoGKernel, LossWeights, loss_components
from .search_engine import CHECKPOINT_VERSION, SearchDivergenceError


@dataclass
class TrainConfig:
    total_steps: int = 5000
    batch_size: int = 32
    lr_init: float = 3e-4
    lr_halve_every: int = 1000
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 1e-8
    mu: float = 0.2
    hr_patch_size: int | None = None
    init_from: str | None = None
    checkpoint_every: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.total_steps < 1:
            raise ValueError("total_steps must be positive")
        if self.lr_halve_every < 1:
            raise ValueError("lr_halve_every must be positive")


@dataclass
class TrainState:
    step: int
    network: DerivedNetwork
    optimizer: torch.optim.Optimizer
    loss_log: list[dict] = field(default_factory=list)
    checkpoint_path: str | None = None


def learning_rate_at(step: int, cfg: TrainConfig) -> float:
    """lr_init halved every lr_halve_every steps (steps are 1-based)."""
    return cfg.lr_init * 0.5 ** ((step - 1) // cfg.lr_halve_every)


def checkpoint_save(path, payload: dict) -> None:
    payload = {"version": CHECKPOINT_VERSION, **payload}
    torch.save(payload, path)


def checkpoint_load(path) -> dict:
    if not os.path.exists(path):
        raise FileNotFoundError(f"checkpoint not found: {path}")
    payload = torch.load(path, weights_only=False)
    version = payload.get("version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version: {version!r}")
    return payload


def load_body_weights(net: DerivedNetwork, ckpt_path) -> None:
    """Warm-start from a checkpoint trained at another scale: body weights are
    copied, the tail is reinitialized (kept as freshly built) when its shape
    differs."""
    payload = checkpoint_load(ckpt_path)
    source = payload["model_state"]
    target = net.state_dict()
    copied = {}
    for key, value in source.items():
        is_tail = key.startswith("tail.")
        if key not in target:
            raise ValueError(f"init checkpoint has unknown layer {key!r}")
        if target[key].shape != value.shape:
            if is_tail:
                continue   # cross-scale warm start: tail stays reinitialized
            raise ValueError(
                f"init checkpoint incompatible at layer {key!r}: "
                f"{tuple(value.shape)} vs {tuple(target[key].shape)}")
        copied[key] = value
    target.update(copied)
    net.load_state_dict(target)


def _train_payload(state: TrainState, cfg: TrainConfig, position: int) -> dict:
    return {
        "kind": "train",
        "step": state.step,
        "model_state": state.network.state_dict(),
        "optimizer_state": state.optimizer.state_dict(),
        "genotype": serialize(state.network.genotype),
        "train_config": {**vars(cfg)},
        "stream_position": position,
        "loss_log": list(state.loss_log),
        "torch_rng": torch.get_rng_state(),
    }


def train(genotype: Genotype, cfg: TrainConfig, dataset: SRDataset,
          out_dir=None, resume_from=None) -> TrainState:
    """Train the derived network from scratch with L1 + mu * HFEN (gamma = 0)."""
    if dataset.scale != genotype.scale:
        raise ValueError("dataset scale does not match the genotype")
    if cfg.hr_patch_size is not None and cfg.hr_patch_size != dataset.patch_size:
        dataset = SRDataset(dataset.sources, dataset.scale, cfg.hr_patch_size)
    torch.manual_seed(cfg.seed)
    net = DerivedNetwork(genotype)
    optimizer = torch.optim.AdamW(net.parameters(), lr=cfg.lr_init,
                                  betas=cfg.betas, weight_decay=cfg.weight_decay)
    stream = make_batches(dataset, cfg.batch_size, (cfg.seed, 3))
    state = TrainState(step=0, network=net, optimizer=optimizer)
    weights = LossWeights(mu=cfg.mu, gamma=0.0)
    kernel = LoGKernel()

    if resume_from is not None:
        payload = checkpoint_load(resume_from)
        if payload.get("kind") != "train":
            raise ValueError("not a training checkpoint")
        if payload["genotype"] != serialize(genotype):
            raise ValueError("checkpoint genotype does not match")
        net.load_state_dict(payload["model_state"])
        optimizer.load_state_dict(payload["optimizer_state"])
        stream.seek(payload["stream_position"])
        state.step = payload["step"]
        state.loss_log = list(payload["loss_log"])
    elif cfg.init_from is not None:
        load_body_weights(net, cfg.init_from)

    log_fh = None
    ckpt_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        ckpt_path = os.path.join(out_dir, "checkpoint.pt")
        mode = "a" if resume_from is not None else "w"
        log_fh = open(os.path.join(out_dir, "train_log.jsonl"), mode,
                      encoding="utf-8")
    try:
        for t in range(state.step + 1, cfg.total_steps + 1):
            lr_now = learning_rate_at(t, cfg)
            for group in optimizer.param_groups:
                group["lr"] = lr_now
            hr, lr = (torch.from_numpy(a) for a in next(stream))
            parts = loss_components(net(lr), hr, weights, kernel=kernel)
            loss = parts["total"]
            if not torch.isfinite(loss):
                raise SearchDivergenceError(
                    f"non-finite training loss: {loss.item()!r}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            record = {"step": t, "loss": float(loss.detach()),
                      "l1": float(parts["l1"].detach()),
                      "hfen": float(parts["hfen"].detach()), "lr": lr_now}
            state.loss_log.append(record)
            state.step = t
            if log_fh is not None:
                log_fh.write(json.dumps(record) + "\n")
            if (ckpt_path is not None and cfg.checkpoint_every
                    and t % cfg.checkpoint_every == 0):
                checkpoint_save(ckpt_path, _train_payload(state, cfg,
                                                          stream.position))
    except Exception:
        if ckpt_path is not None:
            checkpoint_save(ckpt_path, _train_payload(state, cfg, stream.position))
        raise
    finally:
        if log_fh is not None:
            log_fh.close()
    if ckpt_path is not None:
        checkpoint_save(ckpt_path, _train_payload(state, cfg, stream.position))
        state.checkpoint_path = ckpt_path
    return state


def load_network_from_checkpoint(path) -> DerivedNetwork:
    payload = checkpoint_load(path)
    if payload.get("kind") != "train":
        raise ValueError("not a training checkpoint")
    net = DerivedNetwork(parse(payload["genotype"]))
    net.load_state_dict(payload["model_state"])
    net.eval()
    return net
