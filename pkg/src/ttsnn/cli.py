"""Command-line entry point.

Subcommands: decompose, train, eval, count, simulate, compare. Every run
writes a self-contained output directory (config snapshot, per-epoch
logs, JSON + text reports, checkpoints) so that any reported number can
be traced back to its inputs. Exit codes: 0 success, 1 validation or
usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import accelsim, datasets, metrics, vbmf
from .models import ARCHITECTURES, build_arch
from .tensor import circular_permute_last, tt_reconstruct
from .train import (TrainConfig, evaluate, finalize_merge, init_ttsnn,
                    load_checkpoint, save_checkpoint, train)

MODES = ("baseline", "stt", "ptt", "htt")

REPORT_SCHEMAS = {
    "count": {"arch": str, "mode": str, "params": int, "flops": int},
    "train": {"arch": str, "mode": str, "epochs": list, "final_train_acc": float},
    "eval": {"checkpoint": str, "accuracy": float, "samples": int},
    "decompose": {"arch": str, "mode": str, "ranks": list,
                  "reconstruction_errors": list},
    "simulate": {"design": str, "mode": str, "total_energy_j": float,
                 "breakdown_j": dict, "total_cycles": int},
    "compare": {"workload": str, "relative": dict},
}


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so usage errors map to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


@dataclasses.dataclass
class ExperimentConfig:
    """One experiment: architecture, TT mode, rank policy, training
    hyper-parameters, dataset location, and output directory."""

    arch: str = "tiny6"
    mode: str = "ptt"
    t_steps: int = 4
    rank_source: str = "vbmf"  # vbmf | energy-threshold | fixed-list
    rank_list: list | None = None
    htt_placement: str = "early-full"
    htt_n_half: int = 2
    dataset: str = "mnist"  # mnist | cifar10 | synthetic
    data_dir: str | None = None
    limit: int | None = None
    out_dir: str = "runs/latest"
    seed: int = 0
    train: dict = dataclasses.field(default_factory=lambda: dataclasses.asdict(TrainConfig()))

    def __post_init__(self):
        if self.mode not in MODES:
            raise UsageError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.arch not in ARCHITECTURES:
            raise UsageError(f"unknown architecture {self.arch!r}")
        if self.t_steps < 1:
            raise UsageError("timesteps must be >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise UsageError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path: str, overrides: dict | None = None) -> "ExperimentConfig":
        p = Path(path)
        if not p.exists():
            raise UsageError(f"config file not found: {path}")
        data = json.loads(p.read_text())
        data.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_dict(data)


def validate_report(kind: str, report: dict) -> None:
    schema = REPORT_SCHEMAS[kind]
    for key, typ in schema.items():
        if key not in report:
            raise ValueError(f"{kind} report missing field {key!r}")
        if not isinstance(report[key], typ):
            raise ValueError(
                f"{kind} report field {key!r} must be {typ.__name__}, "
                f"got {type(report[key]).__name__}"
            )


def _write_report(out_dir: Path, kind: str, report: dict, text: str | None,
                  timestamp: bool) -> None:
    if timestamp:
        report = dict(report, generated_at=time.strftime("%Y-%m-%dT%H:%M:%S"))
    validate_report(kind, {k: v for k, v in report.items() if k != "generated_at"})
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{kind}.json").write_text(json.dumps(report, indent=2) + "\n")
    if text is not None:
        (out_dir / f"{kind}.txt").write_text(text + "\n")


def _resolve_ranks(args, spec) -> list[int] | None:
    if args.ranks is None:
        return None
    if args.ranks in vbmf.RANK_PRESETS:
        return list(vbmf.RANK_PRESETS[args.ranks])
    try:
        ranks = [int(r) for r in args.ranks.split(",")]
    except ValueError:
        raise UsageError(
            f"--ranks must be a preset ({', '.join(vbmf.RANK_PRESETS)}) "
            f"or a comma-separated integer list, got {args.ranks!r}"
        )
    n = len(spec.decomposable_layers())
    if len(ranks) != n:
        raise UsageError(f"{spec.name} needs {n} ranks, got {len(ranks)}")
    return ranks


def _load_dataset(cfg: ExperimentConfig) -> datasets.DatasetHandle:
    root = Path(cfg.data_dir) if cfg.data_dir else datasets.data_dir()
    if cfg.dataset == "synthetic":
        handle = datasets.synthetic_blobs(cfg.limit or 1000, seed=cfg.seed)
    elif cfg.dataset == "mnist":
        found = datasets.find_mnist(root)
        if found is None:
            raise UsageError(f"MNIST IDX files not found under {root}")
        handle = datasets.load_mnist_idx(found[0], found[1])
    elif cfg.dataset == "cifar10":
        candidates = sorted(Path(root).glob("**/data_batch_1.bin"))
        if not candidates:
            raise UsageError(f"CIFAR-10 .bin files not found under {root}")
        handle = datasets.load_cifar10_bin(candidates[0])
    else:
        raise UsageError(f"unknown dataset {cfg.dataset!r}")
    if cfg.limit:
        handle = handle.subset(cfg.limit)
    return handle


def _cmd_count(args) -> int:
    spec = build_arch(args.arch, mode=args.mode, t_steps=args.timesteps,
                      htt_n_half=args.htt_half, htt_placement=args.htt_placement)
    ranks = _resolve_ranks(args, spec)
    if spec.mode != "baseline" and ranks is None:
        raise UsageError("TT modes need --ranks (preset name or list)")
    report = metrics.count_report(spec, ranks)
    data = report.to_dict()
    data.update(arch=args.arch, mode=args.mode,
                params=report.total_params, flops=report.total_flops)
    _write_report(Path(args.out), "count", data, metrics.render_text(report),
                  timestamp=not args.no_timestamp)
    print(metrics.render_text(report))
    return 0


def _cmd_simulate(args) -> int:
    spec = build_arch(args.arch, mode=args.mode, t_steps=args.timesteps,
                      htt_n_half=args.htt_half, htt_placement=args.htt_placement)
    ranks = _resolve_ranks(args, spec)
    if spec.mode != "baseline" and ranks is None:
        raise UsageError("TT modes need --ranks (preset name or list)")
    workload = accelsim.build_workload(spec, ranks, spike_density=args.density)
    if args.design == "single-engine":
        report = accelsim.simulate_single_engine(workload)
    else:
        report = accelsim.simulate_multicluster(workload)
    data = report.to_dict()
    text = (f"{report.design} {report.mode}: {report.total_energy_j:.6e} J, "
            f"{report.total_cycles} cycles")
    _write_report(Path(args.out), "simulate", data, text,
                  timestamp=not args.no_timestamp)
    print(text)
    return 0


def _cmd_compare(args) -> int:
    spec = build_arch(args.arch, mode="ptt", t_steps=args.timesteps,
                      htt_n_half=args.htt_half, htt_placement=args.htt_placement)
    ranks = _resolve_ranks(args, spec)
    if ranks is None:
        raise UsageError("compare needs --ranks (preset name or list)")
    cmp = accelsim.compare_designs(spec, ranks, spike_density=args.density)
    text = accelsim.render_comparison(cmp)
    _write_report(Path(args.out), "compare", cmp, text,
                  timestamp=not args.no_timestamp)
    print(text)
    if args.golden:
        golden = Path(args.golden)
        rendered = json.dumps(cmp, indent=2, sort_keys=True) + "\n"
        if golden.exists():
            if golden.read_text() != rendered:
                print(f"golden mismatch against {golden}", file=sys.stderr)
                return 1
            print(f"golden match: {golden}")
        else:
            golden.parent.mkdir(parents=True, exist_ok=True)
            golden.write_text(rendered)
            print(f"golden written: {golden}")
    return 0


def _cmd_decompose(args) -> int:
    from .train import _kaiming_dense_weights

    spec = build_arch(args.arch, mode=args.mode or "stt", t_steps=args.timesteps)
    model, ranks = init_ttsnn(spec, rank_source=args.rank_source,
                              rank_list=_resolve_ranks(args, spec),
                              seed=args.seed)
    dense = _kaiming_dense_weights(spec, torch.Generator().manual_seed(args.seed))
    errors = []
    for name, layer in model.tt_layers().items():
        target = circular_permute_last(dense[name].numpy())
        approx = tt_reconstruct(layer.get_cores())
        rel = float(np.linalg.norm(approx - target) / np.linalg.norm(target))
        errors.append({"layer": name, "rank": int(ranks[name]),
                       "reconstruction_rel_err": rel})
    out = Path(args.out)
    save_checkpoint(model, out / "checkpoint",
                    extra={"arch": args.arch, "mode": spec.mode,
                           "t_steps": spec.t_steps,
                           "ranks": {k: int(v) for k, v in ranks.items()}})
    report = {"arch": args.arch, "mode": spec.mode,
              "ranks": [int(ranks[n]) for n in sorted(ranks)],
              "reconstruction_errors": errors}
    _write_report(out, "decompose", report, None,
                  timestamp=not args.no_timestamp)
    print(f"decomposed {len(errors)} layers -> {out / 'checkpoint'}")
    return 0


def _make_config(args) -> ExperimentConfig:
    overrides = {k: getattr(args, k) for k in
                 ("arch", "mode", "t_steps", "rank_source", "dataset",
                  "data_dir", "limit", "out_dir", "seed")}
    train_over = {k: getattr(args, k) for k in
                  ("epochs", "batch_size", "lr") if getattr(args, k) is not None}
    if args.config:
        cfg = ExperimentConfig.load(args.config, overrides)
    else:
        cfg = ExperimentConfig(**{k: v for k, v in overrides.items()
                                  if v is not None})
    cfg.train.update(train_over)
    cfg.train["seed"] = cfg.seed
    return cfg


def _cmd_train(args) -> int:
    cfg = _make_config(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
    data = _load_dataset(cfg)
    spec = build_arch(cfg.arch, mode=cfg.mode, t_steps=cfg.t_steps,
                      in_channels=data.images.shape[1],
                      num_classes=data.num_classes,
                      input_hw=data.images.shape[2],
                      htt_n_half=cfg.htt_n_half,
                      htt_placement=cfg.htt_placement)
    model, ranks = init_ttsnn(spec, rank_source=cfg.rank_source,
                              rank_list=cfg.rank_list, seed=cfg.seed)
    tcfg = TrainConfig(**cfg.train)
    images = torch.from_numpy(data.images)
    labels = torch.from_numpy(data.labels)
    history = train(model, (images, labels), tcfg)
    with (out / "epochs.jsonl").open("w") as f:
        for record in history:
            f.write(json.dumps(record) + "\n")
    if args.merge:
        finalize_merge(model)
    save_checkpoint(model, out / "checkpoint",
                    extra={"arch": cfg.arch, "mode": spec.mode,
                           "t_steps": spec.t_steps,
                           "num_classes": data.num_classes,
                           "in_channels": int(data.images.shape[1]),
                           "input_hw": int(data.images.shape[2]),
                           "merged": bool(args.merge),
                           "ranks": {k: int(v) for k, v in ranks.items()}})
    epochs = history
    if args.no_timestamp:
        # wall-clock seconds are the only nondeterministic field; drop them
        # so seeded runs produce byte-identical reports
        epochs = [{k: v for k, v in rec.items() if k != "seconds"}
                  for rec in history]
    report = {"arch": cfg.arch, "mode": cfg.mode, "epochs": epochs,
              "final_train_acc": history[-1]["train_acc"]}
    _write_report(out, "train", report, None, timestamp=not args.no_timestamp)
    print(f"final train accuracy: {history[-1]['train_acc']:.4f}")
    return 0


def _load_model(run_dir: Path):
    manifest_extra = json.loads((run_dir / "checkpoint" / "manifest.json").read_text())["extra"]
    spec = build_arch(manifest_extra["arch"],
                      mode="baseline" if manifest_extra.get("merged") else manifest_extra["mode"],
                      t_steps=manifest_extra["t_steps"],
                      in_channels=manifest_extra.get("in_channels", 1),
                      num_classes=manifest_extra.get("num_classes", 10),
                      input_hw=manifest_extra.get("input_hw", 28))
    ranks = manifest_extra.get("ranks", {})
    from .train import SpikingNet
    model = SpikingNet(spec, None if spec.mode == "baseline" else ranks)
    load_checkpoint(model, run_dir / "checkpoint")
    return model


def _cmd_eval(args) -> int:
    run_dir = Path(args.run)
    if not (run_dir / "checkpoint" / "manifest.json").exists():
        raise UsageError(f"no checkpoint under {run_dir}")
    cfg = ExperimentConfig.load(run_dir / "config.json",
                                {"dataset": args.dataset,
                                 "data_dir": args.data_dir,
                                 "limit": args.limit}) \
        if (run_dir / "config.json").exists() else _make_config(args)
    model = _load_model(run_dir)
    data = _load_dataset(cfg)
    acc = evaluate(model, (torch.from_numpy(data.images),
                           torch.from_numpy(data.labels)))
    report = {"checkpoint": str(run_dir / "checkpoint"), "accuracy": acc,
              "samples": int(data.images.shape[0])}
    _write_report(Path(args.out or run_dir), "eval", report,
                  f"accuracy {acc:.4f} on {report['samples']} samples",
                  timestamp=not args.no_timestamp)
    print(f"accuracy: {acc:.4f}")
    return 0


def _add_common(p, out_default="runs/latest"):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-timestamp", action="store_true",
                   help="omit timestamps for byte-identical reports")
    p.add_argument("--out", default=out_default, help="output directory")


def _add_arch_flags(p):
    p.add_argument("--arch", default="resnet18", choices=sorted(ARCHITECTURES))
    p.add_argument("--mode", default="ptt", choices=MODES)
    p.add_argument("--timesteps", type=int, default=4)
    p.add_argument("--ranks", help="rank preset name or comma-separated list")
    p.add_argument("--htt-half", type=int, default=2, dest="htt_half")
    p.add_argument("--htt-placement", default="early-full", dest="htt_placement")


def build_parser() -> _Parser:
    parser = _Parser(prog="ttsnn",
                     description="tensor-train spiking network training, "
                                 "counting, and accelerator simulation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("count", help="parameter/FLOP report (no dataset)")
    _add_arch_flags(p)
    _add_common(p)

    p = sub.add_parser("simulate", help="accelerator energy/latency model")
    _add_arch_flags(p)
    p.add_argument("--design", default="multicluster",
                   choices=("single-engine", "multicluster"))
    p.add_argument("--density", type=float, default=0.15,
                   help="assumed input spike density")
    _add_common(p)

    p = sub.add_parser("compare", help="cross-design relative energy table")
    _add_arch_flags(p)
    p.add_argument("--density", type=float, default=0.15)
    p.add_argument("--golden", help="write-or-compare golden JSON file")
    _add_common(p)

    p = sub.add_parser("decompose", help="rank selection + TT decomposition")
    _add_arch_flags(p)
    p.add_argument("--rank-source", default="fixed-list", dest="rank_source",
                   choices=("vbmf", "energy-threshold", "fixed-list"))
    _add_common(p)

    for name in ("train", "eval"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="experiment config JSON")
        p.add_argument("--arch", choices=sorted(ARCHITECTURES))
        p.add_argument("--mode", choices=MODES)
        p.add_argument("--t-steps", type=int, dest="t_steps")
        p.add_argument("--rank-source", dest="rank_source",
                       choices=("vbmf", "energy-threshold", "fixed-list"))
        p.add_argument("--dataset", choices=("mnist", "cifar10", "synthetic"))
        p.add_argument("--data-dir", dest="data_dir")
        p.add_argument("--limit", type=int, help="cap the sample count")
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", type=int, dest="batch_size")
        p.add_argument("--lr", type=float)
        p.add_argument("--out-dir", dest="out_dir")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--no-timestamp", action="store_true")
        if name == "train":
            p.add_argument("--merge", action="store_true",
                           help="merge TT cores back to dense kernels after training")
        else:
            p.add_argument("--run", required=True, help="training run directory")
            p.add_argument("--out", default=None)
    return parser


COMMANDS = {
    "count": _cmd_count,
    "simulate": _cmd_simulate,
    "compare": _cmd_compare,
    "decompose": _cmd_decompose,
    "train": _cmd_train,
    "eval": _cmd_eval,
}


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - runtime failures map to exit 2
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
