"""Architecture descriptors.

A model is described as a flat, ordered list of layer descriptors; this
single representation feeds parameter/FLOP counting, the accelerator
simulator, and (for sequential architectures) the torch network builder.
The first conv and the classifier are never decomposed; neither are 1x1
shortcut convs, whose kernels admit no vertical/horizontal split.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace


@dataclass(frozen=True)
class LayerDesc:
    name: str
    kind: str  # "conv" | "classifier"
    in_ch: int
    out_ch: int
    kernel: int = 3
    stride: int = 1
    decomposable: bool = False
    spike_input: bool = True  # False only for the analog stem conv


@dataclass
class LIFConfig:
    tau_m: float = 0.25
    v_th: float = 0.5

    def __post_init__(self):
        if not 0 < self.tau_m <= 1:
            raise ValueError("tau_m must lie in (0, 1]")
        if self.v_th <= 0:
            raise ValueError("v_th must be positive")


@dataclass
class ModelSpec:
    name: str
    layers: list[LayerDesc]
    in_channels: int
    num_classes: int
    input_hw: int
    t_steps: int = 4
    mode: str = "baseline"  # baseline | stt | ptt | htt
    lif: LIFConfig = field(default_factory=LIFConfig)
    htt_placement: str = "early-full"
    htt_n_half: int | None = None  # half-mode timesteps; default T // 2
    sequential: bool = True  # False for residual nets (counting only)

    def __post_init__(self):
        if self.t_steps < 1:
            raise ValueError("t_steps must be >= 1")
        if self.htt_n_half is None:
            # default schedule: full sub-convolutions on the early half of
            # the timesteps, half-kernel on the late half
            self.htt_n_half = self.t_steps // 2
        if not 0 <= self.htt_n_half < self.t_steps:
            raise ValueError("htt_n_half must leave at least one full timestep")
        if self.mode not in ("baseline", "stt", "ptt", "htt"):
            raise ValueError(f"unknown mode {self.mode!r}")
        first_conv = next(l for l in self.layers if l.kind == "conv")
        if first_conv.decomposable:
            raise ValueError("the stem conv must stay dense")
        if self.layers[-1].kind == "classifier" and self.layers[-1].decomposable:
            raise ValueError("the classifier must stay dense")

    def conv_layers(self) -> list[LayerDesc]:
        return [l for l in self.layers if l.kind == "conv"]

    def decomposable_layers(self) -> list[LayerDesc]:
        return [l for l in self.layers if l.decomposable]

    def with_mode(self, mode: str, **kw) -> "ModelSpec":
        return replace(self, mode=mode, **kw)


def tiny6(in_channels: int = 1, num_classes: int = 10, input_hw: int = 28,
          t_steps: int = 4, mode: str = "baseline") -> ModelSpec:
    """Desk-scale network: 5 convs (4 decomposable) plus a classifier."""
    layers = [
        LayerDesc("conv1", "conv", in_channels, 16, 3, 1, False, spike_input=False),
        LayerDesc("conv2", "conv", 16, 32, 3, 2, True),
        LayerDesc("conv3", "conv", 32, 32, 3, 1, True),
        LayerDesc("conv4", "conv", 32, 64, 3, 2, True),
        LayerDesc("conv5", "conv", 64, 64, 3, 1, True),
        LayerDesc("fc", "classifier", 64, num_classes, 1, 1, False),
    ]
    return ModelSpec("tiny6", layers, in_channels, num_classes, input_hw,
                     t_steps=t_steps, mode=mode)


def _basic_stage(layers: list[LayerDesc], stage: int, blocks: int,
                 in_ch: int, out_ch: int, stride: int) -> int:
    for b in range(blocks):
        s = stride if b == 0 else 1
        cin = in_ch if b == 0 else out_ch
        pre = f"layer{stage}.{b}"
        layers.append(LayerDesc(f"{pre}.conv1", "conv", cin, out_ch, 3, s, True))
        layers.append(LayerDesc(f"{pre}.conv2", "conv", out_ch, out_ch, 3, 1, True))
        if s != 1 or cin != out_ch:
            layers.append(
                LayerDesc(f"{pre}.downsample", "conv", cin, out_ch, 1, s, False)
            )
    return out_ch


def _resnet(name: str, blocks: tuple[int, int, int, int], in_channels: int,
            num_classes: int, input_hw: int, t_steps: int,
            mode: str) -> ModelSpec:
    layers = [
        LayerDesc("conv1", "conv", in_channels, 64, 3, 1, False, spike_input=False)
    ]
    ch = 64
    widths = (64, 128, 256, 512)
    for i, (b, w) in enumerate(zip(blocks, widths), start=1):
        ch = _basic_stage(layers, i, b, ch, w, 1 if i == 1 else 2)
    layers.append(LayerDesc("fc", "classifier", ch, num_classes, 1, 1, False))
    return ModelSpec(name, layers, in_channels, num_classes, input_hw,
                     t_steps=t_steps, mode=mode, sequential=False)


def resnet18(num_classes: int = 10, in_channels: int = 3, input_hw: int = 32,
             t_steps: int = 4, mode: str = "baseline") -> ModelSpec:
    """CIFAR-style ResNet18: 3x3 stem, stages [2,2,2,2], 16 decomposable convs."""
    return _resnet("resnet18", (2, 2, 2, 2), in_channels, num_classes,
                   input_hw, t_steps, mode)


def resnet34(num_classes: int = 101, in_channels: int = 2, input_hw: int = 48,
             t_steps: int = 6, mode: str = "baseline") -> ModelSpec:
    """Event-data-style ResNet34: stages [3,4,6,3], 32 decomposable convs."""
    return _resnet("resnet34", (3, 4, 6, 3), in_channels, num_classes,
                   input_hw, t_steps, mode)


ARCHITECTURES = {
    "tiny6": tiny6,
    "resnet18": resnet18,
    "resnet34": resnet34,
}


def build_arch(name: str, **kw) -> ModelSpec:
    try:
        factory = ARCHITECTURES[name]
    except KeyError:
        raise ValueError(
            f"unknown architecture {name!r}; choose from {sorted(ARCHITECTURES)}"
        ) from None
    htt = {k: kw.pop(k) for k in ("htt_placement", "htt_n_half") if k in kw}
    spec = factory(**kw)
    return replace(spec, **htt) if htt else spec
