"""Parameter and FLOP accounting with Table-1-style comparison reports.

Convention (stated in every report): 1 MAC = 1 FLOP; conv and classifier
MACs are counted, batch-norm ops are not; each (sub-)convolution of a
layer is charged at the layer's output spatial resolution; totals are
summed over all timesteps. Spike sparsity is deliberately ignored, so
FLOP figures are dense upper bounds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from . import schedule as sched
from .models import LayerDesc, ModelSpec

CONVENTION = (
    "1 MAC = 1 FLOP; conv + classifier MACs at layer output resolution, "
    "summed over timesteps; BN excluded; no spike-sparsity discount"
)


@dataclass
class CountReport:
    arch: str
    mode: str
    t_steps: int
    convention: str
    layers: list[dict] = field(default_factory=list)
    total_params: int = 0
    total_flops: int = 0

    def to_dict(self) -> dict:
        return {
            "arch": self.arch,
            "mode": self.mode,
            "t_steps": self.t_steps,
            "convention": self.convention,
            "layers": self.layers,
            "totals": {"params": self.total_params, "flops": self.total_flops},
        }


def _out_hw(hw: int, stride: int) -> int:
    # Odd-kernel convs with same-padding: output size depends only on stride.
    return (hw - 1) // stride + 1


def layer_spatial_map(spec: ModelSpec) -> dict[str, tuple[int, int]]:
    """Input and output spatial side lengths for every layer.

    Shortcut ("downsample") convs read the spatial size at their block's
    entry, in parallel with the block's first conv.
    """
    out = {}
    hw = spec.input_hw
    block_in_hw = hw
    for layer in spec.layers:
        if layer.kind == "classifier":
            out[layer.name] = (1, 1)  # after global average pooling
            continue
        if layer.name.endswith(".conv1"):
            block_in_hw = hw
        in_hw = block_in_hw if layer.name.endswith(".downsample") else hw
        o = _out_hw(in_hw, layer.stride)
        out[layer.name] = (in_hw, o)
        if not layer.name.endswith(".downsample"):
            hw = o
    return out


def dense_layer_params(layer: LayerDesc) -> int:
    if layer.kind == "classifier":
        return layer.in_ch * layer.out_ch + layer.out_ch
    return layer.out_ch * layer.in_ch * layer.kernel**2 + 2 * layer.out_ch


def tt_layer_params(layer: LayerDesc, rank: int) -> int:
    k = layer.kernel
    cores = layer.in_ch * rank + 2 * (rank * k * rank) + rank * layer.out_ch
    return cores + 2 * layer.out_ch


def assign_ranks(spec: ModelSpec, ranks: list[int] | None) -> dict[str, int]:
    """Map decomposable layer names to their ranks (network order)."""
    dec = spec.decomposable_layers()
    if ranks is None:
        return {}
    if len(ranks) != len(dec):
        raise ValueError(
            f"{spec.name} has {len(dec)} decomposable layers "
            f"but the rank list holds {len(ranks)}"
        )
    return {layer.name: int(r) for layer, r in zip(dec, ranks)}


def count_params(spec: ModelSpec, ranks: list[int] | None = None,
                 mode: str | None = None) -> CountReport:
    """Trainable parameter count (conv + BN affine + classifier).

    TT modes share one weight copy across timesteps and across the
    STT/PTT/HTT execution styles, so the count depends only on the ranks.
    """
    mode = mode or spec.mode
    decomposed = mode != "baseline"
    rank_by_name = assign_ranks(spec, ranks) if decomposed else {}
    report = CountReport(spec.name, mode, spec.t_steps, CONVENTION)
    for layer in spec.layers:
        if decomposed and layer.decomposable:
            p = tt_layer_params(layer, rank_by_name[layer.name])
            rank = rank_by_name[layer.name]
        else:
            p = dense_layer_params(layer)
            rank = None
        report.layers.append({"name": layer.name, "params": p, "rank": rank})
        report.total_params += p
    return report


def _layer_flops(layer: LayerDesc, out_hw: int, rank: int | None,
                 step_mode: str) -> int:
    area = out_hw * out_hw
    if layer.kind == "classifier":
        return layer.in_ch * layer.out_ch
    if rank is None:
        return layer.out_ch * layer.in_ch * layer.kernel**2 * area
    k = layer.kernel
    macs = layer.in_ch * rank + rank * k * rank + rank * layer.out_ch
    if step_mode == sched.FULL:
        macs += rank * k * rank  # both middle branches run
    return macs * area


def count_flops(spec: ModelSpec, ranks: list[int] | None = None,
                mode: str | None = None, t_steps: int | None = None,
                htt_schedule: list[str] | None = None) -> CountReport:
    """Total MAC count over all timesteps.

    HTT timesteps marked half skip one middle-branch sub-convolution;
    all other modes execute the full layer every timestep.
    """
    mode = mode or spec.mode
    t_steps = t_steps or spec.t_steps
    decomposed = mode != "baseline"
    rank_by_name = assign_ranks(spec, ranks) if decomposed else {}
    if mode == "htt":
        if htt_schedule is None:
            htt_schedule = sched.build_htt_schedule(
                t_steps, spec.htt_n_half, spec.htt_placement
            )
        sched.validate_schedule(htt_schedule, t_steps)
    else:
        htt_schedule = [sched.FULL] * t_steps

    spatial = layer_spatial_map(spec)
    report = CountReport(spec.name, mode, t_steps, CONVENTION)
    for layer in spec.layers:
        rank = rank_by_name.get(layer.name) if decomposed else None
        out_hw = spatial[layer.name][1]
        flops = sum(
            _layer_flops(layer, out_hw, rank, step_mode)
            for step_mode in htt_schedule
        )
        report.layers.append({
            "name": layer.name,
            "flops": flops,
            "rank": rank,
        })
        report.total_flops += flops
    return report


def count_report(spec: ModelSpec, ranks: list[int] | None = None,
                 mode: str | None = None,
                 htt_schedule: list[str] | None = None) -> CountReport:
    """Combined params + FLOPs, one entry per layer."""
    p = count_params(spec, ranks, mode)
    f = count_flops(spec, ranks, mode, htt_schedule=htt_schedule)
    merged = CountReport(spec.name, p.mode, f.t_steps, CONVENTION)
    for lp, lf in zip(p.layers, f.layers):
        merged.layers.append({
            "name": lp["name"],
            "params": lp["params"],
            "flops": lf["flops"],
            "rank": lp["rank"],
        })
    merged.total_params = p.total_params
    merged.total_flops = f.total_flops
    return merged


def compression_report(baseline: CountReport, tt: CountReport,
                       wall_time_baseline: float | None = None,
                       wall_time_tt: float | None = None) -> dict:
    """Ratios of a TT run against its dense baseline (ratio = baseline/tt)."""
    if baseline.arch != tt.arch:
        raise ValueError(
            f"architecture mismatch: {baseline.arch} vs {tt.arch}"
        )
    out = {
        "arch": baseline.arch,
        "convention": CONVENTION,
        "baseline": baseline.to_dict()["totals"],
        "tt": tt.to_dict()["totals"],
        "ratios": {
            "params": baseline.total_params / tt.total_params,
            "flops": baseline.total_flops / tt.total_flops,
        },
    }
    if wall_time_baseline is not None and wall_time_tt is not None:
        out["wall_time_s"] = {
            "baseline": wall_time_baseline,
            "tt": wall_time_tt,
            "delta": wall_time_baseline - wall_time_tt,
        }
    return out


def render_text(report: CountReport) -> str:
    lines = [
        f"{report.arch}  mode={report.mode}  T={report.t_steps}",
        f"convention: {report.convention}",
        f"{'layer':<24}{'rank':>6}{'params':>12}{'flops':>16}",
    ]
    for l in report.layers:
        rank = l.get("rank")
        lines.append(
            f"{l['name']:<24}{rank if rank else '-':>6}"
            f"{l.get('params', 0):>12,}{l.get('flops', 0):>16,}"
        )
    lines.append(
        f"{'total':<30}{report.total_params:>12,}{report.total_flops:>16,}"
    )
    return "\n".join(lines)


def write_report(path, report: CountReport) -> None:
    with open(path, "w") as f:
        json.dump(report.to_dict(), f, indent=2)
        f.write("\n")
