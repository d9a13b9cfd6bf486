"""Rank selection for decomposable conv layers.

The primary policy is the global analytic solution of empirical
variational Bayesian matrix factorization (Nakajima et al.), which
thresholds singular values under an estimated noise variance. An
energy-threshold policy and fixed published rank lists are available as
alternatives; whichever policy ran is recorded in the estimate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .tensor import circular_permute_last

# Ranks published for the two reference networks (one rank per
# decomposable 3x3 conv, in network order).
RESNET18_RANKS = [24, 27, 25, 29, 37, 45, 43, 41, 65, 74, 70, 63, 104, 153, 186, 145]
RESNET34_RANKS = [
    24, 23, 22, 17, 16, 12, 22, 31, 25, 25, 24, 21, 20, 19, 48, 79,
    64, 69, 63, 69, 60, 65, 63, 63, 62, 58, 121, 170, 173, 147, 161, 108,
]
RANK_PRESETS = {
    "paper-resnet18": RESNET18_RANKS,
    "paper-resnet34": RESNET34_RANKS,
}


@dataclass
class RankEstimate:
    rank: int
    noise_variance: float
    singular_values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    policy: str = "vbmf"


def _evb_sigma2_objective(sigma2, length, width, s, residual, xubar):
    """Free-energy objective minimized to estimate the noise variance."""

    def tau(x, alpha):
        return 0.5 * (x - (1 + alpha) + np.sqrt((x - (1 + alpha)) ** 2 - 4 * alpha))

    alpha = length / width
    x = s**2 / (width * sigma2)
    z1 = x[x > xubar]
    z2 = x[x <= xubar]
    tau_z1 = tau(z1, alpha)

    term1 = np.sum(z2 - np.log(z2))
    term2 = np.sum(z1 - tau_z1)
    term3 = np.sum(np.log((tau_z1 + 1) / z1))
    term4 = alpha * np.sum(np.log(tau_z1 / alpha + 1))
    return (
        term1
        + term2
        + term3
        + term4
        + residual / (width * sigma2)
        + (length - len(s)) * np.log(sigma2)
    )


def evbmf_rank(m: np.ndarray) -> RankEstimate:
    """Analytic empirical-VB rank of a matrix.

    Estimates the observation noise variance by minimizing the VB free
    energy, then keeps the singular components whose singular value
    clears the analytically derived threshold. A zero matrix has rank 0.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError("expected a non-empty matrix")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix entries must be finite")
    if m.shape[0] > m.shape[1]:
        m = m.T
    length, width = m.shape  # length <= width

    s = np.linalg.svd(m, compute_uv=False)
    if not np.any(s > 0):
        return RankEstimate(rank=0, noise_variance=0.0)

    alpha = length / width
    tauubar = 2.5129 * np.sqrt(alpha)
    xubar = (1 + tauubar) * (1 + alpha / tauubar)

    # Noise variance by bounded scalar minimization of the free energy.
    eh_ub = int(min(np.ceil(length / (1 + alpha)) - 1, length)) - 1
    eh_ub = max(eh_ub, 0)
    upper = np.sum(s**2) / (length * width)
    lower = max(
        s[min(eh_ub + 1, length - 1)] ** 2 / (width * xubar),
        np.mean(s[eh_ub + 1 :] ** 2) / width if eh_ub + 1 < length else 0.0,
    )
    if lower >= upper or lower <= 0:
        sigma2 = upper
    else:
        res = optimize.minimize_scalar(
            _evb_sigma2_objective,
            args=(length, width, s, 0.0, xubar),
            bounds=(lower, upper),
            method="bounded",
        )
        sigma2 = float(res.x)

    threshold = np.sqrt(width * sigma2 * (1 + tauubar) * (1 + alpha / tauubar))
    pos = int(np.sum(s > threshold))
    return RankEstimate(
        rank=pos,
        noise_variance=sigma2,
        singular_values=s[:pos].copy(),
        policy="vbmf",
    )


def energy_rank(m: np.ndarray, threshold: float = 0.95) -> RankEstimate:
    """Smallest rank whose cumulative squared singular values reach
    `threshold` of the total energy."""
    m = np.asarray(m, dtype=np.float64)
    s = np.linalg.svd(m, compute_uv=False)
    total = np.sum(s**2)
    if total == 0:
        return RankEstimate(rank=0, noise_variance=0.0, policy="energy")
    frac = np.cumsum(s**2) / total
    rank = int(np.searchsorted(frac, threshold) + 1)
    rank = min(rank, len(s))
    return RankEstimate(
        rank=rank,
        noise_variance=0.0,
        singular_values=s[:rank].copy(),
        policy="energy",
    )


def middle_unfolding(w: np.ndarray) -> np.ndarray:
    """(O, I, K, K) conv weight -> the (I*K) x (K*O) matrix of the middle
    factorization cut of the permuted tensor."""
    p = circular_permute_last(np.asarray(w, dtype=np.float32))
    i_dim, k1, k2, o_dim = p.shape
    return p.reshape(i_dim * k1, k2 * o_dim)


def estimate_layer_rank(
    w: np.ndarray,
    policy: str = "vbmf",
    *,
    rank_list: list[int] | None = None,
    position: int = 0,
    threshold: float = 0.95,
) -> int:
    """Single TT-rank for one conv layer, applied uniformly to all cuts.

    policy: "vbmf" (analytic EVB on the middle unfolding), "energy"
    (cumulative-energy threshold), or "fixed-list" (`rank_list[position]`,
    0-based among decomposable layers). The result is clamped to
    [1, max unfolding rank]. VBMF falls back to the energy policy when
    its analytic solution degenerates to rank 0 on a nonzero input.
    """
    if policy == "fixed-list":
        if rank_list is None:
            raise ValueError("fixed-list policy needs a rank list")
        if not 0 <= position < len(rank_list):
            raise ValueError(
                f"layer position {position} outside rank list of length {len(rank_list)}"
            )
        rank = int(rank_list[position])
    else:
        unfolded = middle_unfolding(w)
        if policy == "vbmf":
            est = evbmf_rank(unfolded)
            if est.rank == 0 and np.any(unfolded):
                est = energy_rank(unfolded, threshold)
        elif policy == "energy":
            est = energy_rank(unfolded, threshold)
        else:
            raise ValueError(f"unknown rank policy {policy!r}")
        rank = est.rank

    max_rank = min(middle_unfolding(w).shape) if w.ndim == 4 else max(rank, 1)
    return int(np.clip(rank, 1, max_rank))


def save_rank_list(path, ranks: list[int]) -> None:
    with open(path, "w") as f:
        json.dump([int(r) for r in ranks], f)


def load_rank_list(path) -> list[int]:
    with open(path) as f:
        ranks = json.load(f)
    if not isinstance(ranks, list) or not all(isinstance(r, int) for r in ranks):
        raise ValueError(f"{path}: expected a JSON array of integer ranks")
    return ranks


def resolve_rank_list(name_or_path: str) -> list[int]:
    """A preset name ("paper-resnet18"/"paper-resnet34") or a JSON file path."""
    if name_or_path in RANK_PRESETS:
        return list(RANK_PRESETS[name_or_path])
    return load_rank_list(name_or_path)
