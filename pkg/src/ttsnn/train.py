"""End-to-end training orchestration.

Pipeline: Kaiming-initialize a dense base model, assign one TT-rank per
decomposable layer (analytic VB, energy threshold, or a fixed list),
replace those layers with TT layers initialized by TT-SVD of the dense
weights, train with BPTT over the unrolled timesteps (cross-entropy on
the timestep-summed logits, SGD + momentum, cosine-annealed learning
rate), and finally merge the trained cores back into dense kernels for
spike-based inference.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
import time
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import schedule as sched
from . import vbmf
from .models import ModelSpec
from .snn import LIFCell, direct_encode
from .tensor import load_tensor, save_tensor
from .ttlayers import TTConv2d


@dataclass
class TrainConfig:
    epochs: int = 5
    batch_size: int = 100
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    schedule: str = "cosine"  # "cosine" | "constant"
    seed: int = 0

    def __post_init__(self):
        if min(self.epochs, self.batch_size) < 1 or self.lr < 0:
            raise ValueError("epochs and batch_size must be positive, lr >= 0")


class SpikingNet(nn.Module):
    """Sequential spiking classifier following the per-timestep wiring:
    stem conv on the analog input, then BN(LIF(.)) -> conv for each
    middle layer, then LIF -> pooled classifier. Membrane state is
    carried across timesteps and reset per batch."""

    def __init__(self, spec: ModelSpec, ranks: dict[str, int] | None = None,
                 smooth_temp: float | None = None):
        super().__init__()
        if not spec.sequential:
            raise ValueError(f"{spec.name} is a counting-only architecture")
        self.spec = spec
        self.ranks = ranks or {}
        self.lif = LIFCell(spec.lif.tau_m, spec.lif.v_th, smooth_temp=smooth_temp)
        self.convs = nn.ModuleDict()
        self.bns = nn.ModuleDict()
        for layer in spec.conv_layers():
            if spec.mode != "baseline" and layer.decomposable:
                conv = TTConv2d(layer.in_ch, layer.out_ch, layer.kernel,
                                self.ranks[layer.name], stride=layer.stride,
                                mode=spec.mode)
            else:
                conv = nn.Conv2d(layer.in_ch, layer.out_ch, layer.kernel,
                                 stride=layer.stride, padding=layer.kernel // 2,
                                 bias=False)
            self.convs[layer.name] = conv
        # spikes are normalized on the way into the next conv, so the
        # final conv (feeding the pooled classifier) carries no BN
        for layer in spec.conv_layers()[:-1]:
            self.bns[layer.name] = nn.BatchNorm2d(layer.out_ch)
        head = spec.layers[-1]
        self.fc = nn.Linear(head.in_ch, head.out_ch)
        self.htt_schedule = (
            sched.build_htt_schedule(spec.t_steps, spec.htt_n_half,
                                     spec.htt_placement)
            if spec.mode == "htt" else [sched.FULL] * spec.t_steps
        )

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        """(B, C, H, W) analog images -> (T, B, classes) per-timestep logits."""
        conv_layers = self.spec.conv_layers()
        membranes: dict[str, torch.Tensor] = {}
        encoded = direct_encode(images, self.spec.t_steps)
        logits = []
        for t, x_t in enumerate(encoded):
            step_mode = self.htt_schedule[t]
            producer = conv_layers[0]
            y = self.convs[producer.name](x_t)
            for layer in conv_layers[1:]:
                u_prev = membranes.get(producer.name)
                if u_prev is None:
                    u_prev = torch.zeros_like(y)
                u_new, spikes = self.lif(u_prev, y)
                membranes[producer.name] = u_new
                x = self.bns[producer.name](spikes)
                conv = self.convs[layer.name]
                y = conv(x, step_mode) if isinstance(conv, TTConv2d) else conv(x)
                producer = layer
            u_prev = membranes.get(producer.name)
            if u_prev is None:
                u_prev = torch.zeros_like(y)
            u_new, spikes = self.lif(u_prev, y)
            membranes[producer.name] = u_new
            pooled = spikes.mean(dim=(2, 3))
            logits.append(self.fc(pooled))
        return torch.stack(logits)

    def tt_layers(self) -> dict[str, TTConv2d]:
        return {n: m for n, m in self.convs.items() if isinstance(m, TTConv2d)}


def _kaiming_dense_weights(spec: ModelSpec, generator: torch.Generator) -> dict[str, torch.Tensor]:
    weights = {}
    for layer in spec.conv_layers():
        fan_in = layer.in_ch * layer.kernel**2
        w = torch.randn(
            (layer.out_ch, layer.in_ch, layer.kernel, layer.kernel),
            generator=generator,
        ) * math.sqrt(2.0 / fan_in)
        weights[layer.name] = w.float()
    return weights


def init_ttsnn(spec: ModelSpec, rank_source: str = "vbmf",
               rank_list: list[int] | None = None,
               energy_threshold: float = 0.95,
               seed: int = 0,
               smooth_temp: float | None = None) -> tuple[SpikingNet, dict[str, int]]:
    """Build the network: dense Kaiming init, per-layer rank assignment,
    then TT-SVD initialization of every decomposable layer.

    rank_source: "vbmf" | "energy-threshold" | "fixed-list".
    Returns (model, ranks by layer name).
    """
    gen = torch.Generator().manual_seed(seed)
    dense = _kaiming_dense_weights(spec, gen)
    ranks: dict[str, int] = {}
    if spec.mode != "baseline":
        decomposable = spec.decomposable_layers()
        if rank_source == "fixed-list":
            if rank_list is None or len(rank_list) != len(decomposable):
                raise ValueError(
                    f"fixed-list needs {len(decomposable)} ranks, "
                    f"got {0 if rank_list is None else len(rank_list)}"
                )
            ranks = {l.name: int(r) for l, r in zip(decomposable, rank_list)}
        elif rank_source in ("vbmf", "energy-threshold"):
            policy = "vbmf" if rank_source == "vbmf" else "energy"
            for layer in decomposable:
                ranks[layer.name] = vbmf.estimate_layer_rank(
                    dense[layer.name].numpy(), policy,
                    threshold=energy_threshold,
                )
        else:
            raise ValueError(f"unknown rank source {rank_source!r}")
        # a rank above min(in, out) cannot survive TT-SVD uniformly, and
        # parallel/half pipelines need one shared rank across all cores
        for layer in decomposable:
            ranks[layer.name] = max(1, min(ranks[layer.name],
                                           layer.in_ch, layer.out_ch))

    model = SpikingNet(spec, ranks, smooth_temp=smooth_temp)
    with torch.no_grad():
        bound = 1.0 / math.sqrt(model.fc.in_features)
        model.fc.weight.uniform_(-bound, bound, generator=gen)
        model.fc.bias.uniform_(-bound, bound, generator=gen)
        for name, conv in model.convs.items():
            if isinstance(conv, TTConv2d):
                init = TTConv2d.from_dense(dense[name].numpy(), ranks[name],
                                           stride=conv.stride, mode=spec.mode)
                conv.set_cores(init.get_cores())
            else:
                conv.weight.copy_(dense[name])
    return model, ranks


def _batches(n: int, batch_size: int, generator: torch.Generator):
    order = torch.randperm(n, generator=generator)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def train(model: SpikingNet, data: tuple[torch.Tensor, torch.Tensor],
          cfg: TrainConfig) -> list[dict]:
    """SGD training loop; returns one log record per epoch.

    Raises on a NaN loss, naming the offending epoch/batch.
    """
    images, labels = data
    torch.manual_seed(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed + 1)
    opt = torch.optim.SGD(model.parameters(), lr=cfg.lr,
                          momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    if cfg.schedule == "cosine":
        lr_sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=cfg.epochs)
    elif cfg.schedule == "constant":
        lr_sched = None
    else:
        raise ValueError(f"unknown lr schedule {cfg.schedule!r}")

    log = []
    for epoch in range(cfg.epochs):
        model.train()
        t0 = time.perf_counter()
        losses, correct, seen = [], 0, 0
        for b, idx in enumerate(_batches(len(labels), cfg.batch_size, gen)):
            x, y = images[idx], labels[idx]
            logits = model(x).sum(dim=0)
            loss = F.cross_entropy(logits, y)
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch}, batch {b}; "
                    "check learning rate and input scaling"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
            correct += (logits.argmax(dim=1) == y).sum().item()
            seen += len(y)
        if lr_sched is not None:
            lr_sched.step()
        log.append({
            "epoch": epoch,
            "loss": float(np.mean(losses)),
            "train_acc": correct / seen,
            "lr": opt.param_groups[0]["lr"],
            "seconds": time.perf_counter() - t0,
        })
    return log


@torch.no_grad()
def evaluate(model: nn.Module, data: tuple[torch.Tensor, torch.Tensor],
             batch_size: int = 256) -> float:
    """Top-1 accuracy of the argmax over timestep-summed logits."""
    images, labels = data
    if len(labels) == 0:
        raise ValueError("empty dataset")
    model.eval()
    correct = 0
    for start in range(0, len(labels), batch_size):
        x = images[start : start + batch_size]
        y = labels[start : start + batch_size]
        pred = model(x).sum(dim=0).argmax(dim=1)
        correct += (pred == y).sum().item()
    return correct / len(labels)


def finalize_merge(model: SpikingNet) -> SpikingNet:
    """Replace every TT layer by its merged dense kernel (in place).

    A baseline model passes through untouched. Full-mode layers change
    logits only by float round-off; for half schedules the equivalence
    holds at the full timesteps.
    """
    for name, conv in list(model.convs.items()):
        if isinstance(conv, TTConv2d):
            model.convs[name] = conv.to_dense()
    return model


def save_checkpoint(model: SpikingNet, out_dir: str, *, epoch: int = 0,
                    metrics: dict | None = None, cfg: TrainConfig | None = None,
                    extra: dict | None = None) -> None:
    """Checkpoint = manifest.json + one flat-format tensor file per weight.
    The manifest write is atomic (temp file + rename)."""
    os.makedirs(out_dir, exist_ok=True)
    tensors = {}
    for name, p in model.state_dict().items():
        fname = name.replace("/", "_") + ".ttsn"
        save_tensor(os.path.join(out_dir, fname), p.detach().numpy())
        tensors[name] = fname
    manifest = {
        "mode": model.spec.mode,
        "arch": model.spec.name,
        "t_steps": model.spec.t_steps,
        "ranks": model.ranks,
        "htt_schedule": model.htt_schedule,
        "epoch": epoch,
        "metrics": metrics or {},
        "train_config": asdict(cfg) if cfg else None,
        "extra": extra or {},
        "tensors": tensors,
    }
    fd, tmp = tempfile.mkstemp(dir=out_dir, suffix=".json.tmp")
    with os.fdopen(fd, "w") as f:
        json.dump(manifest, f, indent=2)
    os.replace(tmp, os.path.join(out_dir, "manifest.json"))


def load_checkpoint(model: SpikingNet, ckpt_dir: str) -> dict:
    """Load weights saved by :func:`save_checkpoint`; returns the manifest."""
    with open(os.path.join(ckpt_dir, "manifest.json")) as f:
        manifest = json.load(f)
    state = {
        name: torch.from_numpy(load_tensor(os.path.join(ckpt_dir, fname)))
        for name, fname in manifest["tensors"].items()
    }
    target = model.state_dict()
    for name, t in state.items():
        state[name] = t.to(target[name].dtype).reshape(target[name].shape)
    model.load_state_dict(state)
    return manifest
