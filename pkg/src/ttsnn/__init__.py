"""Tensor-train decomposed spiking neural networks: decomposition,
surrogate-gradient training, cost counting, and accelerator simulation."""

from .accelsim import (EnergyTable, HardwareConfig, SimReport, WorkloadSpec,
                       build_workload, compare_designs,
                       simulate_multicluster, simulate_single_engine)
from .estimator import TTSNNClassifier
from .metrics import CountReport, compression_report, count_report
from .models import ARCHITECTURES, LIFConfig, ModelSpec, build_arch
from .schedule import FULL, HALF_HORIZONTAL, HALF_VERTICAL, build_htt_schedule
from .tensor import (TTConvCores, merge_ptt, tt_reconstruct, tt_svd)
from .train import (SpikingNet, TrainConfig, evaluate, finalize_merge,
                    init_ttsnn, load_checkpoint, save_checkpoint, train)
from .ttlayers import TTConv2d
from .vbmf import (RANK_PRESETS, energy_rank, estimate_layer_rank, evbmf_rank)

__version__ = "0.1.0"

__all__ = [
    "ARCHITECTURES", "CountReport", "EnergyTable", "FULL", "HALF_HORIZONTAL",
    "HALF_VERTICAL", "HardwareConfig", "LIFConfig", "ModelSpec",
    "RANK_PRESETS", "SimReport", "SpikingNet", "TTConv2d", "TTConvCores",
    "TTSNNClassifier", "TrainConfig", "WorkloadSpec", "build_arch",
    "build_htt_schedule", "build_workload", "compare_designs",
    "compression_report", "count_report", "energy_rank",
    "estimate_layer_rank", "evaluate", "evbmf_rank", "finalize_merge",
    "init_ttsnn", "load_checkpoint", "merge_ptt", "save_checkpoint",
    "simulate_multicluster", "simulate_single_engine", "train",
    "tt_reconstruct", "tt_svd",
]
