"""TT convolution execution modes.

One decomposed layer holds four small kernels: a 1x1 input projection
(w1), a vertical Kx1 kernel (w2), a horizontal 1xK kernel (w3), and a
1x1 output projection (w4). Three execution styles share those weights:

- sequential: w1 -> w2 -> w3 -> w4 as a chain;
- parallel: the vertical and horizontal kernels both consume the w1
  output and their results are summed before w4;
- half: on designated timesteps only one middle branch runs.

Spatial stride lives in the middle kernels — (s,1)/(1,s) for the
sequential chain, (s,s) for each parallel branch — which keeps every
mode's output equal to a dense stride-s KxK convolution of the merged
kernel.

The numpy functions below define the semantics on single images; the
torch module mirrors them for batched training.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from . import schedule as sched
from .tensor import (
    TTConvCores,
    as_f32,
    conv2d,
    merge_ptt,
    permute_out_first,
    tt_reconstruct,
    tt_svd,
)


def _k1(w1: np.ndarray) -> np.ndarray:
    return as_f32(w1.T[:, :, None, None])  # (r1, I, 1, 1)


def _kv(w2: np.ndarray) -> np.ndarray:
    return as_f32(np.transpose(w2, (2, 0, 1))[:, :, :, None])  # (r2, r1, K, 1)


def _kh(w3: np.ndarray) -> np.ndarray:
    return as_f32(np.transpose(w3, (2, 0, 1))[:, :, None, :])  # (r3, r2, 1, K)


def _k4(w4: np.ndarray) -> np.ndarray:
    return as_f32(w4.T[:, :, None, None])  # (O, r3, 1, 1)


def stt_forward(x: np.ndarray, cores: TTConvCores, stride: int = 1) -> np.ndarray:
    """Sequential chain on a (C, H, W) image."""
    if x.shape[0] != cores.in_channels:
        raise ValueError(
            f"channel mismatch: input has {x.shape[0]}, cores expect {cores.in_channels}"
        )
    k1, k2 = cores.kernel_size
    y = conv2d(x, _k1(cores.w1))
    y = conv2d(y, _kv(cores.w2), stride=(stride, 1), pad_h=k1 // 2)
    y = conv2d(y, _kh(cores.w3), stride=(1, stride), pad_w=k2 // 2)
    return conv2d(y, _k4(cores.w4))


def ptt_forward(x: np.ndarray, cores: TTConvCores, stride: int = 1) -> np.ndarray:
    """Parallel branches on a (C, H, W) image."""
    if not cores.uniform_rank:
        raise ValueError("parallel mode requires a uniform rank")
    if x.shape[0] != cores.in_channels:
        raise ValueError(
            f"channel mismatch: input has {x.shape[0]}, cores expect {cores.in_channels}"
        )
    k1, k2 = cores.kernel_size
    o = conv2d(x, _k1(cores.w1))
    vert = conv2d(o, _kv(cores.w2), stride=stride, pad_h=k1 // 2)
    horiz = conv2d(o, _kh(cores.w3), stride=stride, pad_w=k2 // 2)
    return conv2d(vert + horiz, _k4(cores.w4))


def htt_forward(x: np.ndarray, cores: TTConvCores, mode_t: str,
                stride: int = 1) -> np.ndarray:
    """One timestep of the half schedule: full, or a single branch."""
    if mode_t == sched.FULL:
        return ptt_forward(x, cores, stride)
    if not cores.uniform_rank:
        raise ValueError("half mode requires a uniform rank")
    k1, k2 = cores.kernel_size
    o = conv2d(x, _k1(cores.w1))
    if mode_t == sched.HALF_VERTICAL:
        branch = conv2d(o, _kv(cores.w2), stride=stride, pad_h=k1 // 2)
    elif mode_t == sched.HALF_HORIZONTAL:
        branch = conv2d(o, _kh(cores.w3), stride=stride, pad_w=k2 // 2)
    else:
        raise ValueError(f"unknown step mode {mode_t!r}")
    return conv2d(branch, _k4(cores.w4))


class TTConv2d(nn.Module):
    """Torch module over the four shared kernels, batched (B, C, H, W).

    `mode` picks the execution style; half-mode steps additionally take
    the per-timestep entry of the layer's schedule.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3,
                 ranks: int | tuple[int, int, int] = 1, stride: int = 1,
                 mode: str = "ptt"):
        super().__init__()
        if mode not in ("stt", "ptt", "htt"):
            raise ValueError(f"unknown TT layer mode {mode!r}")
        if isinstance(ranks, int):
            ranks = (ranks, ranks, ranks)
        r1, r2, r3 = ranks
        if mode in ("ptt", "htt") and not r1 == r2 == r3:
            raise ValueError("parallel and half modes require a uniform rank")
        if kernel_size < 3 or kernel_size % 2 == 0:
            raise ValueError("kernel size must be an odd number >= 3")
        k = kernel_size
        self.mode = mode
        self.stride = stride
        parallel = mode in ("ptt", "htt")
        self.conv_in = nn.Conv2d(in_channels, r1, 1, bias=False)
        self.conv_v = nn.Conv2d(
            r1, r2, (k, 1),
            stride=(stride, stride) if parallel else (stride, 1),
            padding=(k // 2, 0), bias=False,
        )
        self.conv_h = nn.Conv2d(
            r1 if parallel else r2, r3, (1, k),
            stride=(stride, stride) if parallel else (1, stride),
            padding=(0, k // 2), bias=False,
        )
        self.conv_out = nn.Conv2d(r3, out_channels, 1, bias=False)

    @property
    def in_channels(self) -> int:
        return self.conv_in.in_channels

    @property
    def out_channels(self) -> int:
        return self.conv_out.out_channels

    @property
    def kernel_size(self) -> int:
        return self.conv_v.kernel_size[0]

    @property
    def ranks(self) -> tuple[int, int, int]:
        return (self.conv_in.out_channels, self.conv_v.out_channels,
                self.conv_h.out_channels)

    def forward(self, x: torch.Tensor, step_mode: str = sched.FULL) -> torch.Tensor:
        if self.mode == "stt":
            return self.conv_out(self.conv_h(self.conv_v(self.conv_in(x))))
        o = self.conv_in(x)
        if self.mode == "ptt" or step_mode == sched.FULL:
            return self.conv_out(self.conv_v(o) + self.conv_h(o))
        if step_mode == sched.HALF_VERTICAL:
            return self.conv_out(self.conv_v(o))
        if step_mode == sched.HALF_HORIZONTAL:
            return self.conv_out(self.conv_h(o))
        raise ValueError(f"unknown step mode {step_mode!r}")

    def get_cores(self) -> TTConvCores:
        w1 = self.conv_in.weight.detach().numpy()[:, :, 0, 0].T
        w2 = np.transpose(self.conv_v.weight.detach().numpy()[:, :, :, 0], (1, 2, 0))
        w3 = np.transpose(self.conv_h.weight.detach().numpy()[:, :, 0, :], (1, 2, 0))
        w4 = self.conv_out.weight.detach().numpy()[:, :, 0, 0].T
        return TTConvCores(w1, w2, w3, w4)

    @torch.no_grad()
    def set_cores(self, cores: TTConvCores) -> None:
        if cores.ranks != self.ranks:
            raise ValueError(f"core ranks {cores.ranks} do not match layer {self.ranks}")
        self.conv_in.weight.copy_(torch.from_numpy(cores.w1.T[:, :, None, None].copy()))
        self.conv_v.weight.copy_(
            torch.from_numpy(np.transpose(cores.w2, (2, 0, 1))[:, :, :, None].copy())
        )
        self.conv_h.weight.copy_(
            torch.from_numpy(np.transpose(cores.w3, (2, 0, 1))[:, :, None, :].copy())
        )
        self.conv_out.weight.copy_(torch.from_numpy(cores.w4.T[:, :, None, None].copy()))

    @classmethod
    def from_dense(cls, weight: np.ndarray, ranks: int | tuple[int, int, int],
                   stride: int = 1, mode: str = "ptt") -> "TTConv2d":
        """Initialize cores by TT-SVD of a dense (O, I, K, K) kernel."""
        from .tensor import circular_permute_last

        o_dim, i_dim, k, _ = weight.shape
        if isinstance(ranks, int):
            ranks = (ranks, ranks, ranks)
        cores = tt_svd(circular_permute_last(as_f32(weight)), ranks)
        layer = cls(i_dim, o_dim, k, cores.ranks, stride=stride, mode=mode)
        layer.set_cores(cores)
        return layer

    def dense_kernel(self) -> np.ndarray:
        """Merged (O, I, K, K) kernel equal to the full-mode forward."""
        cores = self.get_cores()
        if self.mode == "stt":
            return permute_out_first(tt_reconstruct(cores))
        return merge_ptt(cores)

    def to_dense(self) -> nn.Conv2d:
        k = self.kernel_size
        dense = nn.Conv2d(self.in_channels, self.out_channels, k,
                          stride=self.stride, padding=k // 2, bias=False)
        with torch.no_grad():
            dense.weight.copy_(torch.from_numpy(self.dense_kernel()))
        return dense


def to_dense_layer(layer: TTConv2d) -> nn.Conv2d:
    return layer.to_dense()


def tt_conv_backward(
    layer: TTConv2d,
    x: torch.Tensor,
    upstream_grad: torch.Tensor,
    step_mode: str = sched.FULL,
) -> tuple[dict[str, torch.Tensor], torch.Tensor]:
    """Exact reverse-mode gradients of one layer application.

    Returns ({"w1": ..., "w2": ..., "w3": ..., "w4": ...}, input_grad).
    On a half-mode step the skipped branch's kernel gets a zero gradient.
    """
    x = x.detach().requires_grad_(True)
    y = layer(x, step_mode)
    if y.shape != upstream_grad.shape:
        raise ValueError(
            f"upstream grad shape {tuple(upstream_grad.shape)} does not match "
            f"output {tuple(y.shape)}"
        )
    weights = [layer.conv_in.weight, layer.conv_v.weight,
               layer.conv_h.weight, layer.conv_out.weight]
    grads = torch.autograd.grad(y, weights + [x], grad_outputs=upstream_grad,
                                allow_unused=True)
    named = {
        name: (g if g is not None else torch.zeros_like(w))
        for name, w, g in zip(("w1", "w2", "w3", "w4"), weights, grads[:4])
    }
    return named, grads[4]
