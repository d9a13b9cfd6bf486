"""Analytical energy/latency simulator for SNN training accelerators.

Two designs are modeled over the same workload description:

- single engine: the prior-art layout — one PE array, every (sub-)conv
  layer processed strictly sequentially, all timesteps of a layer before
  the next. Sub-conv intermediates for all timesteps must be buffered
  between stages; whatever exceeds the global buffer spills to DRAM. In
  parallel mode the first branch's outputs always take a DRAM round
  trip, because the engine cannot interleave the two branches.
- multi-cluster: four clusters map the four sub-convolutions; the spike
  consuming first cluster uses simplified accumulate-only PEs, clusters
  two and three run in parallel on the shared first-stage output, adder
  arrays merge the branch results on chip, and the fourth cluster plus a
  LIF array finish the layer. Timesteps stream through the pipeline, so
  intermediates never persist and never touch DRAM; the backward pass
  recomputes them in the pipeline instead of refetching.

Accounting is tile-level and deterministic: MAC/accumulate counts, bytes
moved at each memory level, and PE-array occupancy cycles. Compute
energy includes a per-PE-cycle base (clock/leakage) term, which is what
makes serialized low-utilization mappings pay for their longer makespan.
All absolute Joule figures are model-relative.

Counting conventions (tests rely on these closed forms):
- every sub-conv is charged at its layer's output resolution, matching
  the FLOP report convention;
- weights are 1 byte, analog/intermediate activations 2 bytes, spikes
  1/8 byte, membrane potentials and gradients 2 bytes;
- spike-input convs execute density * MACs effective accumulates;
- backward compute is 2x forward MACs (weight-grad + input-grad convs)
  plus one surrogate MAC per neuron per timestep;
- weights move once per layer pass (not per timestep): DRAM read + GB
  write + GB read, and the same again in backward plus the gradient
  write-back to DRAM.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from . import schedule as sched
from .metrics import layer_spatial_map
from .models import ModelSpec

SPIKE_BYTES = 0.125
ACT_BYTES = 2.0
WEIGHT_BYTES = 1.0
GRAD_BYTES = 2.0
MEMBRANE_BYTES = 2.0


@dataclass
class HardwareConfig:
    n_clusters: int = 4
    pes_per_cluster: int = 32
    scratchpad_bytes_per_pe: int = 32
    global_buffer_kb: int = 272
    accumulator_bits: int = 16
    multiplier_bits: int = 8
    clock_mhz: int = 400

    def __post_init__(self):
        values = [self.n_clusters, self.pes_per_cluster,
                  self.scratchpad_bytes_per_pe, self.global_buffer_kb,
                  self.accumulator_bits, self.multiplier_bits, self.clock_mhz]
        if any(v <= 0 for v in values):
            raise ValueError("hardware parameters must be positive")

    @property
    def total_pes(self) -> int:
        return self.n_clusters * self.pes_per_cluster

    @property
    def global_buffer_bytes(self) -> int:
        return self.global_buffer_kb * 1024


@dataclass
class EnergyTable:
    """Per-action energies in picojoules (literature-style 28 nm class)."""

    mac8: float = 0.30
    acc16: float = 0.06
    spike_acc: float = 0.02
    sram_gb_byte: float = 1.5
    sram_spad_byte: float = 0.06
    dram_byte: float = 100.0
    lif_update: float = 0.30
    idle_pe_cycle: float = 0.35

    def __post_init__(self):
        if min(asdict(self).values()) < 0:
            raise ValueError("energies must be non-negative")
        if not self.dram_byte > self.sram_gb_byte > self.sram_spad_byte:
            raise ValueError(
                "memory hierarchy must satisfy DRAM > global buffer > scratchpad"
            )


@dataclass
class SubOp:
    name: str
    macs: int
    out_elems: int
    weight_params: int
    spike_input: bool
    stage: int  # multicluster stage 1..4; dense layers occupy stage 1


@dataclass
class LayerWork:
    name: str
    sub_ops: list[SubOp]
    in_elems: int
    in_is_spike: bool
    out_elems: int  # neurons seen by the LIF array
    is_classifier: bool = False

    @property
    def weight_params(self) -> int:
        return sum(op.weight_params for op in self.sub_ops)


@dataclass
class WorkloadSpec:
    name: str
    layers: list[LayerWork]
    t_steps: int
    mode: str  # baseline | stt | ptt | htt
    htt_schedule: list[str]
    spike_density: float = 0.15
    forward_only: bool = False

    def __post_init__(self):
        if not 0.0 <= self.spike_density <= 1.0:
            raise ValueError("spike density must lie in [0, 1]")
        if self.layers and self.mode != "htt" and sched.FULL not in self.htt_schedule:
            raise ValueError("schedule must cover all timesteps")


def build_workload(spec: ModelSpec, ranks: list[int] | None = None,
                   mode: str | None = None,
                   htt_schedule: list[str] | None = None,
                   spike_density: float = 0.15,
                   forward_only: bool = False) -> WorkloadSpec:
    """Derive per-layer op/traffic descriptors from a model spec.

    Batch is one image across all timesteps. TT layers expand into four
    sub-ops on their pipeline stages; dense layers stay single ops.
    """
    mode = mode or spec.mode
    decomposed = mode != "baseline"
    rank_iter = iter(ranks or [])
    spatial = layer_spatial_map(spec)
    if mode == "htt":
        if htt_schedule is None:
            htt_schedule = sched.build_htt_schedule(spec.t_steps, spec.htt_n_half,
                                                    spec.htt_placement)
        sched.validate_schedule(htt_schedule, spec.t_steps)
    else:
        htt_schedule = [sched.FULL] * spec.t_steps

    layers = []
    for layer in spec.layers:
        in_hw, out_hw = spatial[layer.name]
        area = out_hw * out_hw
        if layer.kind == "classifier":
            op = SubOp("fc", layer.in_ch * layer.out_ch, layer.out_ch,
                       layer.in_ch * layer.out_ch, True, 1)
            layers.append(LayerWork(layer.name, [op], layer.in_ch, True,
                                    layer.out_ch, is_classifier=True))
            continue
        if decomposed and layer.decomposable:
            r = int(next(rank_iter))
            k = layer.kernel
            ops = [
                SubOp("w1", layer.in_ch * r * area, r * area,
                      layer.in_ch * r, layer.spike_input, 1),
                SubOp("w2", r * k * r * area, r * area, r * k * r, False, 2),
                SubOp("w3", r * k * r * area, r * area, r * k * r, False, 3),
                SubOp("w4", r * layer.out_ch * area, layer.out_ch * area,
                      r * layer.out_ch, False, 4),
            ]
        else:
            ops = [SubOp("dense",
                         layer.out_ch * layer.in_ch * layer.kernel**2 * area,
                         layer.out_ch * area,
                         layer.out_ch * layer.in_ch * layer.kernel**2,
                         layer.spike_input, 1)]
        layers.append(LayerWork(layer.name, ops,
                                layer.in_ch * in_hw * in_hw, layer.spike_input,
                                layer.out_ch * area))
    if ranks is not None and next(rank_iter, None) is not None:
        raise ValueError("rank list longer than the decomposable layer count")
    return WorkloadSpec(spec.name, layers, spec.t_steps, mode, htt_schedule,
                        spike_density, forward_only)


@dataclass
class SimReport:
    design: str
    workload: str
    mode: str
    total_energy_j: float = 0.0
    breakdown_j: dict = field(default_factory=dict)
    total_cycles: int = 0
    runtime_s: float = 0.0
    cluster_utilization: list[float] = field(default_factory=list)
    layer_traces: list[dict] = field(default_factory=list)
    note: str = "energies are model-relative"

    def to_dict(self) -> dict:
        return asdict(self)


class _Tally:
    """Energy accumulator keyed by breakdown category (picojoules)."""

    CATEGORIES = ("compute", "global_buffer", "scratchpad", "dram", "lif")

    def __init__(self, et: EnergyTable):
        self.et = et
        self.pj = dict.fromkeys(self.CATEGORIES, 0.0)

    def add(self, category: str, pj: float):
        self.pj[category] += pj

    def gb(self, nbytes: float):
        self.add("global_buffer", nbytes * self.et.sram_gb_byte)

    def spad(self, nbytes: float):
        self.add("scratchpad", nbytes * self.et.sram_spad_byte)

    def dram(self, nbytes: float):
        self.add("dram", nbytes * self.et.dram_byte)

    def mixed(self, nbytes: float, dram_fraction: float):
        self.gb(nbytes * (1.0 - dram_fraction))
        self.dram(nbytes * dram_fraction)


def _effective_ops(op: SubOp, density: float) -> float:
    return op.macs * density if op.spike_input else float(op.macs)


def _op_compute_pj(op: SubOp, density: float, et: EnergyTable,
                   simplified_stage1: bool) -> float:
    if op.spike_input:
        per_op = et.spike_acc if simplified_stage1 else et.acc16
        return op.macs * density * per_op
    return op.macs * et.mac8


def _weight_traffic(tally: _Tally, layer: LayerWork, forward_only: bool):
    w = layer.weight_params * WEIGHT_BYTES
    tally.dram(w)          # fetch once per layer pass
    tally.gb(2 * w)        # buffer fill + drain into scratchpads
    if not forward_only:
        tally.dram(w)      # refetch for the gradient convs
        tally.gb(2 * w)
        tally.dram(layer.weight_params * GRAD_BYTES)  # gradient write-back


def _io_traffic(tally: _Tally, layer: LayerWork, t_active: int,
                forward_only: bool):
    in_bytes = layer.in_elems * (SPIKE_BYTES if layer.in_is_spike else ACT_BYTES)
    tally.gb(in_bytes * t_active)
    if layer.is_classifier:
        tally.gb(layer.out_elems * ACT_BYTES * t_active)
        if not forward_only:
            tally.gb(2 * layer.out_elems * GRAD_BYTES * t_active)
        return
    # LIF array per timestep: membrane read+write, spike map out.
    tally.gb((2 * MEMBRANE_BYTES + SPIKE_BYTES) * layer.out_elems * t_active)
    # BPTT activation store: spikes of every timestep to DRAM, read back
    # in the backward pass (membranes are recomputed from them).
    if not forward_only:
        tally.dram(2 * layer.out_elems * SPIKE_BYTES * t_active)
        # input-gradient maps between layers
        tally.gb(2 * layer.out_elems * GRAD_BYTES * t_active)


def _lif_energy(tally: _Tally, layer: LayerWork, t_active: int,
                et: EnergyTable, forward_only: bool):
    if layer.is_classifier:
        return
    tally.add("lif", layer.out_elems * t_active * et.lif_update)
    if not forward_only:
        # surrogate-gradient factor: one MAC per neuron per timestep
        tally.add("lif", layer.out_elems * t_active * et.mac8)


def _spill_fraction(bytes_required: float, hw: HardwareConfig) -> float:
    if bytes_required <= 0:
        return 0.0
    return max(0.0, 1.0 - hw.global_buffer_bytes / bytes_required)


def _active_ops(layer: LayerWork, step_mode: str) -> list[SubOp]:
    if step_mode == sched.FULL or len(layer.sub_ops) == 1:
        return layer.sub_ops
    skip = "w3" if step_mode == sched.HALF_VERTICAL else "w2"
    return [op for op in layer.sub_ops if op.name != skip]


def simulate_single_engine(w: WorkloadSpec, hw: HardwareConfig | None = None,
                           et: EnergyTable | None = None) -> SimReport:
    """Prior-art layer-sequential engine (all PEs on one (sub-)conv at a
    time, all timesteps of a layer before the next)."""
    hw = hw or HardwareConfig()
    et = et or EnergyTable()
    tally = _Tally(et)
    backward_factor = 1 if w.forward_only else 3  # fwd + 2x grad convs
    cycles = 0.0
    traces = []
    for layer in w.layers:
        layer_pj0 = sum(tally.pj.values())
        _weight_traffic(tally, layer, w.forward_only)
        _io_traffic(tally, layer, w.t_steps, w.forward_only)
        _lif_energy(tally, layer, w.t_steps, et, w.forward_only)

        boundary_bytes_t = 0.0
        layer_ops = 0.0
        for t in range(w.t_steps):
            active = _active_ops(layer, w.htt_schedule[t])
            for op in active:
                tally.add("compute",
                          backward_factor * _op_compute_pj(op, w.spike_density,
                                                           et, False))
                eff = backward_factor * _effective_ops(op, w.spike_density)
                layer_ops += eff
                tally.spad(2.0 * eff)
            # stage-boundary tensors (between consecutive sub-ops)
            boundary_bytes_t += sum(op.out_elems for op in active[:-1]) * ACT_BYTES

        if boundary_bytes_t:
            # all timesteps of a boundary are held before the next stage runs
            spill = _spill_fraction(boundary_bytes_t + layer.weight_params,
                                    hw)
            passes = 2 if w.forward_only else 3  # write+read (+bwd re-read)
            tally.mixed(passes * boundary_bytes_t, spill)
        if w.mode == "ptt" and len(layer.sub_ops) == 4:
            # first branch output always round-trips through DRAM; the
            # engine cannot interleave the two branches before merging
            branch = layer.sub_ops[1].out_elems * ACT_BYTES * w.t_steps
            tally.dram(2 * branch * (1 if w.forward_only else 2))
            tally.gb(layer.sub_ops[0].out_elems * ACT_BYTES * w.t_steps)

        layer_cycles = layer_ops / hw.total_pes
        cycles += layer_cycles
        traces.append({
            "layer": layer.name,
            "ops": layer_ops,
            "cycles": layer_cycles,
            "energy_j": (sum(tally.pj.values()) - layer_pj0) * 1e-12,
        })

    tally.add("compute", et.idle_pe_cycle * hw.total_pes * cycles)
    return _finish_report("single-engine", w, hw, tally, cycles, traces,
                          [1.0] * hw.n_clusters)


def simulate_multicluster(w: WorkloadSpec, hw: HardwareConfig | None = None,
                          et: EnergyTable | None = None) -> SimReport:
    """The four-cluster pipelined design (PTT/HTT), or the same hardware
    running the sequential chain layer-by-layer (STT reference mapping)."""
    if w.mode not in ("stt", "ptt", "htt"):
        raise ValueError("multicluster design runs TT workloads only")
    hw = hw or HardwareConfig()
    et = et or EnergyTable()
    tally = _Tally(et)
    pipelined = w.mode in ("ptt", "htt")
    backward_factor = 1 if w.forward_only else 3
    cycles = 0.0
    stage_busy = dict.fromkeys(range(1, hw.n_clusters + 1), 0.0)
    traces = []
    for layer in w.layers:
        layer_pj0 = sum(tally.pj.values())
        _weight_traffic(tally, layer, w.forward_only)
        _io_traffic(tally, layer, w.t_steps, w.forward_only)
        _lif_energy(tally, layer, w.t_steps, et, w.forward_only)

        layer_cycles = 0.0
        boundary_bytes_t = 0.0
        fill = 0.0
        # forward + 2 gradient convs; the pipelined mapping additionally
        # recomputes stage 1-3 intermediates for the weight-grad convs,
        # overlapped with gradient work on the other clusters (energy but
        # no added makespan); the sequential mapping stores them instead
        cycle_factor = 1 if w.forward_only else 3
        for t in range(w.t_steps):
            active = _active_ops(layer, w.htt_schedule[t])
            half_step = pipelined and 1 < len(active) < len(layer.sub_ops)
            stage_fwd = dict.fromkeys(range(1, hw.n_clusters + 1), 0.0)
            for op in active:
                recompute = (pipelined and not w.forward_only
                             and len(layer.sub_ops) > 1 and op.stage < 4)
                energy_passes = cycle_factor + (1 if recompute else 0)
                cpj = _op_compute_pj(op, w.spike_density, et,
                                     simplified_stage1=(op.stage == 1
                                                        and op.spike_input))
                tally.add("compute", energy_passes * cpj)
                eff = energy_passes * _effective_ops(op, w.spike_density)
                tally.spad(2.0 * eff)
                stage_fwd[op.stage] += (_effective_ops(op, w.spike_density)
                                        / hw.pes_per_cluster)

            if pipelined and len(active) > 1:
                # first-stage output through the global buffer, consumed
                # by each active middle branch
                n_branches = sum(1 for op in active if op.stage in (2, 3))
                o_bytes = active[0].out_elems * ACT_BYTES
                tally.gb((1 + n_branches) * o_bytes * (1 if w.forward_only else 2))
                # branch outputs merge in the adder arrays on chip
                branch_elems = [op.out_elems for op in active if op.stage in (2, 3)]
                if len(branch_elems) == 2:
                    tally.add("compute", branch_elems[0] * et.acc16
                              * (1 if w.forward_only else 2))
                tally.spad(sum(branch_elems) * ACT_BYTES)
                longest = max(stage_fwd.values())
                layer_cycles += cycle_factor * longest
                fill = max(fill, cycle_factor * (sum(stage_fwd.values()) - longest))
                for s, c in stage_fwd.items():
                    stage_busy[s] += cycle_factor * c
            else:
                boundary_bytes_t += sum(op.out_elems for op in active[:-1]) * ACT_BYTES
                layer_cycles += cycle_factor * sum(stage_fwd.values())
                for s, c in stage_fwd.items():
                    stage_busy[s] += cycle_factor * c

        if boundary_bytes_t:
            spill = _spill_fraction(boundary_bytes_t + layer.weight_params, hw)
            passes = 2 if w.forward_only else 3
            tally.mixed(passes * boundary_bytes_t, spill)
        layer_cycles += fill
        cycles += layer_cycles
        traces.append({
            "layer": layer.name,
            "cycles": layer_cycles,
            "energy_j": (sum(tally.pj.values()) - layer_pj0) * 1e-12,
        })

    tally.add("compute", et.idle_pe_cycle * hw.total_pes * cycles)
    utilization = [
        (stage_busy[s] / cycles if cycles else 0.0)
        for s in range(1, hw.n_clusters + 1)
    ]
    return _finish_report("multicluster", w, hw, tally, cycles, traces,
                          utilization)


def _finish_report(design: str, w: WorkloadSpec, hw: HardwareConfig,
                   tally: _Tally, cycles: float, traces: list[dict],
                   utilization: list[float]) -> SimReport:
    breakdown = {k: v * 1e-12 for k, v in tally.pj.items()}
    return SimReport(
        design=design,
        workload=w.name,
        mode=w.mode,
        total_energy_j=sum(breakdown.values()),
        breakdown_j=breakdown,
        total_cycles=int(round(cycles)),
        runtime_s=cycles / (hw.clock_mhz * 1e6),
        cluster_utilization=[round(u, 6) for u in utilization],
        layer_traces=traces,
    )


def compare_designs(spec: ModelSpec, ranks: list[int],
                    hw: HardwareConfig | None = None,
                    et: EnergyTable | None = None,
                    spike_density: float = 0.15,
                    htt_schedule: list[str] | None = None) -> dict:
    """Relative-energy comparison across modes and designs.

    Single-engine runs baseline/STT/PTT/HTT; the multicluster design runs
    PTT and HTT against the STT layer-sequential reference mapping.
    """
    hw = hw or HardwareConfig()
    et = et or EnergyTable()
    if htt_schedule is None:
        htt_schedule = sched.build_htt_schedule(spec.t_steps,
                                                max(spec.t_steps // 2, 1))

    def wl(mode):
        return build_workload(spec, ranks if mode != "baseline" else None,
                              mode=mode,
                              htt_schedule=htt_schedule if mode == "htt" else None,
                              spike_density=spike_density)

    single = {m: simulate_single_engine(wl(m), hw, et)
              for m in ("baseline", "stt", "ptt", "htt")}
    multi = {m: simulate_multicluster(wl(m), hw, et)
             for m in ("stt", "ptt", "htt")}

    e_single = {m: r.total_energy_j for m, r in single.items()}
    e_multi = {m: r.total_energy_j for m, r in multi.items()}
    return {
        "workload": spec.name,
        "spike_density": spike_density,
        "single_engine": {m: r.to_dict() for m, r in single.items()},
        "multicluster": {m: r.to_dict() for m, r in multi.items()},
        "relative": {
            "single_stt_vs_baseline": e_single["stt"] / e_single["baseline"],
            "single_ptt_vs_stt": e_single["ptt"] / e_single["stt"],
            "single_htt_vs_stt": e_single["htt"] / e_single["stt"],
            "multi_ptt_vs_stt_sequential": e_multi["ptt"] / e_multi["stt"],
            "multi_htt_vs_stt_sequential": e_multi["htt"] / e_multi["stt"],
            "multi_htt_vs_ptt": e_multi["htt"] / e_multi["ptt"],
        },
    }


def render_comparison(cmp: dict) -> str:
    rel = cmp["relative"]
    lines = [
        f"workload {cmp['workload']} (spike density {cmp['spike_density']})",
        "relative training energy (lower is better):",
        f"  single-engine STT / dense baseline : {rel['single_stt_vs_baseline']:.3f}",
        f"  single-engine PTT / STT            : {rel['single_ptt_vs_stt']:.3f}",
        f"  single-engine HTT / STT            : {rel['single_htt_vs_stt']:.3f}",
        f"  multicluster PTT / STT-sequential  : {rel['multi_ptt_vs_stt_sequential']:.3f}",
        f"  multicluster HTT / STT-sequential  : {rel['multi_htt_vs_stt_sequential']:.3f}",
    ]
    return "\n".join(lines)


def write_report(path, report: SimReport | dict) -> None:
    data = report.to_dict() if isinstance(report, SimReport) else report
    with open(path, "w") as f:
        json.dump(data, f, indent=2)
        f.write("\n")
