"""Command-line entry point: search, export, train, eval, analyze."""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict

import torch

from .complexity import genotype_complexity, search_space_cardinality
from .data_pipeline import dataset_from_descriptor
from .evaluation import emit_scatter_data, evaluate_model
from .genotype import (DerivedNetwork, GenotypeError, load_genotype,
                       save_genotype, serialize)
from .losses import LossWeights
from .search_engine import SearchConfig, run_search
from .search_space import SupernetConfig
from .trainer import TrainConfig, load_network_from_checkpoint, train

_DEFAULT_DATASET = {"synthetic": {"num_images": 20, "size": 96, "seed": 0},
                    "scale": 2, "patch_size": 32, "train_fraction": 0.8}


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ValueError("config file must contain a JSON object")
    return doc


def _section(doc: dict, name: str) -> dict:
    section = doc.get(name, {})
    if not isinstance(section, dict):
        raise ValueError(f"config section {name!r} must be an object")
    return dict(section)


def _env_seed() -> int | None:
    raw = os.environ.get("DLSR_SEED")
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise ValueError(f"DLSR_SEED must be an integer, got {raw!r}") from None


def _tupled(section: dict, *keys) -> dict:
    for key in keys:
        if key in section and section[key] is not None:
            section[key] = tuple(section[key])
    return section


def resolve_run_config(config_path, overrides: dict) -> dict:
    """defaults < config file < CLI flags < DLSR_SEED, echoed to the run dir."""
    doc = _load_config_file(config_path)
    supernet = _section(doc, "supernet")
    search = _tupled(_section(doc, "search"), "betas_theta", "betas_arch")
    train_sec = _tupled(_section(doc, "train"), "betas")
    loss = _section(doc, "loss")
    dataset = {**_DEFAULT_DATASET, **_section(doc, "dataset")}
    for key, value in overrides.items():
        if value is None:
            continue
        section, field = key.split(".", 1)
        {"supernet": supernet, "search": search, "train": train_sec,
         "loss": loss, "dataset": dataset}[section][field] = value
    env_seed = _env_seed()
    if env_seed is not None:
        search["seed"] = env_seed
        train_sec["seed"] = env_seed
    if "scale" in supernet and "scale" not in _section(doc, "dataset"):
        dataset["scale"] = supernet["scale"]
    resolved = {
        "supernet": asdict(SupernetConfig(**supernet)),
        "search": {**vars(SearchConfig(**search))},
        "train": {**vars(TrainConfig(**train_sec))},
        "loss": asdict(LossWeights(**loss)),
        "dataset": dataset,
    }
    if resolved["supernet"]["scale"] != resolved["dataset"]["scale"]:
        raise ValueError("supernet scale and dataset scale disagree")
    return resolved


def _echo_config(resolved: dict, out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(resolved, fh, indent=2)
        fh.write("\n")


def _cmd_search(args) -> int:
    overrides = {"search.seed": args.seed, "loss.mu": args.mu,
                 "loss.gamma": args.gamma, "loss.lambda_val": args.lambda_val,
                 "search.total_steps": args.steps,
                 "search.warmup_steps": args.warmup}
    resolved = resolve_run_config(args.config, overrides)
    _echo_config(resolved, args.out)
    dataset = dataset_from_descriptor(resolved["dataset"])
    state = run_search(SearchConfig(**{**resolved["search"],
                                       "betas_theta": tuple(resolved["search"]["betas_theta"]),
                                       "betas_arch": tuple(resolved["search"]["betas_arch"])}),
                       SupernetConfig(**resolved["supernet"]),
                       dataset,
                       LossWeights(**resolved["loss"]),
                       train_fraction=float(resolved["dataset"].get("train_fraction", 0.8)),
                       out_dir=args.out)
    print(f"search finished at step {state.step}; "
          f"{len(state.snapshots)} genotype snapshots under {args.out}")
    return 0


def _cmd_export(args) -> int:
    payload = torch.load(args.checkpoint, weights_only=False)
    if payload.get("kind") != "search":
        raise ValueError("export needs a search checkpoint")
    from .search_space import Supernet
    from .genotype import extract_genotype
    cfg = SupernetConfig(**payload["supernet_config"])
    net = Supernet(cfg)
    net.load_state_dict(payload["model_state"])
    genotype = extract_genotype(net.arch_params(), cfg)
    save_genotype(genotype, args.out)
    print(f"genotype written to {args.out}")
    return 0


def _cmd_train(args) -> int:
    overrides = {"train.seed": args.seed, "train.mu": args.mu,
                 "train.total_steps": args.steps}
    resolved = resolve_run_config(args.config, overrides)
    genotype = load_genotype(args.genotype)
    resolved["dataset"]["scale"] = genotype.scale
    resolved["genotype"] = json.loads(serialize(genotype))
    _echo_config(resolved, args.out)
    dataset = dataset_from_descriptor(resolved["dataset"])
    cfg = TrainConfig(**{**resolved["train"],
                         "betas": tuple(resolved["train"]["betas"])})
    state = train(genotype, cfg, dataset, out_dir=args.out,
                  resume_from=args.resume)
    print(f"training finished at step {state.step}; "
          f"checkpoint at {state.checkpoint_path}")
    return 0


def _cmd_eval(args) -> int:
    if args.checkpoint is not None:
        net = load_network_from_checkpoint(args.checkpoint)
        if args.genotype is not None:
            wanted = load_genotype(args.genotype)
            if wanted != net.genotype:
                raise ValueError("checkpoint genotype does not match --genotype")
    elif args.genotype is not None:
        net = DerivedNetwork(load_genotype(args.genotype))
    else:
        raise ValueError("eval needs --checkpoint and/or --genotype")
    scale = args.scale if args.scale is not None else net.config.scale
    if scale != net.config.scale:
        raise ValueError(f"model was built for scale {net.config.scale}")
    report = evaluate_model(net, args.hr_dir, scale,
                            border_crop=args.border_crop)
    doc = report.to_dict()
    with open(args.report, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    agg = doc["aggregate"]
    print(f"evaluated {agg['num_images']} images: "
          f"PSNR {agg['psnr']:.3f} dB, SSIM {agg['ssim']:.4f}, "
          f"HFEN {agg['hfen']:.5f}")
    if args.scatter:
        comp = doc["complexity"] or {"params": 0, "multiadds": 0}
        emit_scatter_data([(args.name, comp["params"] / 1e3,
                            comp["multiadds"] / 1e9, agg["psnr"])], args.scatter)
        print(f"scatter row written to {args.scatter}")
    return 0


def _format_table(report) -> str:
    rows = [(l.name, f"{l.params:,}", f"{l.multiadds:,}") for l in report.per_layer]
    rows.append(("total", f"{report.total_params:,}", f"{report.total_multiadds:,}"))
    widths = [max(len(r[i]) for r in rows + [("layer", "params", "multi-adds")])
              for i in range(3)]
    lines = [f"{'layer':<{widths[0]}}  {'params':>{widths[1]}}  "
             f"{'multi-adds':>{widths[2]}}"]
    lines.append("-" * (widths[0] + widths[1] + widths[2] + 4))
    for name, p, m in rows:
        lines.append(f"{name:<{widths[0]}}  {p:>{widths[1]}}  {m:>{widths[2]}}")
    return "\n".join(lines)


def _cmd_analyze(args) -> int:
    genotype = load_genotype(args.genotype)
    if args.scale is not None and args.scale != genotype.scale:
        genotype.scale = args.scale
        genotype.validate()
    h, w = (int(v) for v in args.hr_dims.lower().split("x"))
    h -= h % genotype.scale
    w -= w % genotype.scale
    cfg = SupernetConfig(channels=genotype.channels,
                         num_cells=genotype.num_cells, scale=genotype.scale)
    report = genotype_complexity(genotype, cfg, (h, w))
    cardinality = {
        "paper_convention": search_space_cardinality(cfg, "paper"),
        "top2_convention": search_space_cardinality(cfg, "top2"),
    }
    print(_format_table(report))
    print(f"params: {report.total_params:,} ({report.total_params / 1e3:.1f}K)")
    print(f"multi-adds @ {h}x{w}: {report.total_multiadds:,} "
          f"({report.total_multiadds / 1e9:.3f}G)")
    print(f"search-space cardinality ({cfg.num_cells} cells): "
          f"{cardinality['paper_convention']:,} (paper convention), "
          f"{cardinality['top2_convention']:,} (top-2 convention)")
    if args.report:
        doc = {**report.to_dict(), "cardinality": cardinality}
        with open(args.report, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dlsr",
        description="Differentiable architecture search for extremely "
                    "lightweight image super-resolution.",
        epilog="The environment variable DLSR_SEED overrides the search/train "
               "seeds globally.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("search", help="run the bi-level architecture search")
    p.add_argument("--config", help="run config JSON")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int, help="total search steps")
    p.add_argument("--warmup", type=int, help="warm-up steps (theta only)")
    p.add_argument("--mu", type=float, help="HFEN loss weight")
    p.add_argument("--gamma", type=float, help="parameter-regularizer weight")
    p.add_argument("--lambda", dest="lambda_val", type=float,
                   help="validation-loss weight")
    p.set_defaults(func=_cmd_search)

    p = sub.add_parser("export", help="extract the genotype from a search checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="output genotype JSON path")
    p.set_defaults(func=_cmd_export)

    p = sub.add_parser("train", help="retrain a genotype from scratch")
    p.add_argument("--genotype", required=True)
    p.add_argument("--config", help="run config JSON")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int, help="total training steps")
    p.add_argument("--mu", type=float, help="HFEN loss weight")
    p.add_argument("--resume", help="resume from a training checkpoint")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a model over an HR folder")
    p.add_argument("--checkpoint", help="training checkpoint")
    p.add_argument("--genotype", help="genotype JSON (must match the checkpoint)")
    p.add_argument("--hr-dir", required=True)
    p.add_argument("--scale", type=int)
    p.add_argument("--report", required=True, help="output report JSON")
    p.add_argument("--scatter", help="also append a scatter CSV row here")
    p.add_argument("--name", default="model", help="name for the scatter row")
    p.add_argument("--border-crop", type=int)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("analyze", help="parameter / Multi-Adds report for a genotype")
    p.add_argument("--genotype", required=True)
    p.add_argument("--scale", type=int, help="override the genotype's scale")
    p.add_argument("--hr-dims", default="720x1280", help="HR dims as HxW")
    p.add_argument("--report", help="also write the report as JSON")
    p.set_defaults(func=_cmd_analyze)
    return parser


def dispatch(argv) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, GenotypeError, RuntimeError, KeyError,
            TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))
