"""Spiking primitives: iterative LIF dynamics with hard reset, a triangle
surrogate gradient for the spike nonlinearity, direct input coding, and
per-timestep batch normalization.

The backward engine is reverse-mode autodiff over the unrolled time
dimension; the only non-standard piece is the Heaviside derivative being
replaced by the surrogate. A smoothed sigmoid gate can be swapped in for
both forward and backward, which makes the whole network differentiable
in the classical sense — that twin model is what the finite-difference
gradient certification runs against.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn


@dataclass
class SurrogateSpec:
    kind: str = "triangle"
    alpha: float = 1.0

    def __post_init__(self):
        if self.kind != "triangle":
            raise ValueError(f"unsupported surrogate kind {self.kind!r}")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")


def surrogate_grad(u_pre: torch.Tensor, v_th: float, alpha: float = 1.0) -> torch.Tensor:
    """Triangle stand-in for dH/du: peak 1/alpha at threshold, support
    of width 2*alpha, unit integral."""
    return torch.clamp(1.0 - torch.abs(u_pre - v_th) / alpha, min=0.0) / alpha


class _TriangleSpike(torch.autograd.Function):
    @staticmethod
    def forward(ctx, u_pre, v_th, alpha):
        ctx.save_for_backward(u_pre)
        ctx.v_th = v_th
        ctx.alpha = alpha
        return (u_pre >= v_th).to(u_pre.dtype)

    @staticmethod
    def backward(ctx, grad_out):
        (u_pre,) = ctx.saved_tensors
        return grad_out * surrogate_grad(u_pre, ctx.v_th, ctx.alpha), None, None


def spike_fn(u_pre: torch.Tensor, v_th: float, alpha: float = 1.0) -> torch.Tensor:
    return _TriangleSpike.apply(u_pre, v_th, alpha)


def lif_step(
    u_prev: torch.Tensor,
    input_current: torch.Tensor,
    tau_m: float,
    v_th: float,
    alpha: float = 1.0,
    smooth_temp: float | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """One membrane update: leak, integrate, threshold, hard-reset.

    Returns (stored potential, spikes). With `smooth_temp` set, the
    binary gate becomes sigmoid((u - v_th)/temp) in both passes.
    """
    if u_prev.shape != input_current.shape:
        raise ValueError(
            f"shape mismatch: membrane {tuple(u_prev.shape)} vs "
            f"input {tuple(input_current.shape)}"
        )
    u_pre = tau_m * u_prev + input_current
    if smooth_temp is not None:
        spikes = torch.sigmoid((u_pre - v_th) / smooth_temp)
    else:
        spikes = spike_fn(u_pre, v_th, alpha)
    u_new = u_pre * (1.0 - spikes)
    return u_new, spikes


class LIFCell(nn.Module):
    """Stateless LIF step; the caller carries the membrane across time."""

    def __init__(self, tau_m: float = 0.25, v_th: float = 0.5,
                 alpha: float = 1.0, smooth_temp: float | None = None):
        super().__init__()
        if not 0 < tau_m <= 1:
            raise ValueError("tau_m must lie in (0, 1]")
        if v_th <= 0:
            raise ValueError("v_th must be positive")
        self.tau_m = tau_m
        self.v_th = v_th
        self.alpha = alpha
        self.smooth_temp = smooth_temp

    def forward(self, u_prev, input_current):
        return lif_step(u_prev, input_current, self.tau_m, self.v_th,
                        self.alpha, self.smooth_temp)

    def extra_repr(self):
        return f"tau_m={self.tau_m}, v_th={self.v_th}, alpha={self.alpha}"


def direct_encode(image: torch.Tensor, t_steps: int) -> torch.Tensor:
    """Replicate an analog image at every timestep (leading time axis).

    The analog values feed the undecomposed stem conv directly; spiking
    starts after that layer's LIF.
    """
    if t_steps < 1:
        raise ValueError("t_steps must be >= 1")
    return image.unsqueeze(0).expand(t_steps, *image.shape)


def batchnorm_t(x_t: torch.Tensor, bn: nn.BatchNorm2d) -> torch.Tensor:
    """Per-timestep batch normalization with timestep-shared affine.

    Calling the shared BN module once per timestep computes batch
    statistics independently per timestep while reusing one scale/shift
    (and one set of running stats) across time.
    """
    if x_t.shape[1] != bn.num_features:
        raise ValueError(
            f"channel mismatch: input has {x_t.shape[1]}, BN expects {bn.num_features}"
        )
    return bn(x_t)


def backprop_unrolled(model: nn.Module, images: torch.Tensor,
                      labels: torch.Tensor) -> dict[str, torch.Tensor]:
    """Gradients of the timestep-summed cross-entropy w.r.t. all weights.

    Runs the model's full temporal forward, differentiates in reverse
    over timesteps then layers (surrogate in place of the Heaviside
    derivative), and returns per-parameter gradients accumulated across
    the shared-weight timesteps.
    """
    params = dict(model.named_parameters())
    logits = model(images)  # (T, B, classes)
    loss = F.cross_entropy(logits.sum(dim=0), labels)
    grads = torch.autograd.grad(loss, list(params.values()), allow_unused=True)
    return {
        name: (g if g is not None else torch.zeros_like(p))
        for (name, p), g in zip(params.items(), grads)
    }
