"""Dense tensor algebra, tensor-train factorization of conv kernels, and
the merge-back that folds trained cores into a single dense kernel.

Everything here is pure numpy on float32 arrays. Convolution weights use
the pytorch layout (O, I, K, K); the factorization operates on the
circularly permuted layout (I, K, K, O).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"TTSN"
FORMAT_VERSION = 1


def as_f32(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float32)


@dataclass
class TTConvCores:
    """The four factor tensors of one decomposed conv layer.

    w1: (I, r1), w2: (r1, K, r2), w3: (r2, K, r3), w4: (r3, O).
    `rank_clamped` is set when a requested rank exceeded the maximal
    rank of its unfolding and had to be reduced.
    """

    w1: np.ndarray
    w2: np.ndarray
    w3: np.ndarray
    w4: np.ndarray
    rank_clamped: bool = field(default=False)

    def __post_init__(self):
        self.w1 = as_f32(self.w1)
        self.w2 = as_f32(self.w2)
        self.w3 = as_f32(self.w3)
        self.w4 = as_f32(self.w4)
        if self.w1.ndim != 2 or self.w4.ndim != 2:
            raise ValueError("w1 and w4 must be matrices")
        if self.w2.ndim != 3 or self.w3.ndim != 3:
            raise ValueError("w2 and w3 must be 3-dimensional")
        if self.w1.shape[1] != self.w2.shape[0]:
            raise ValueError("rank mismatch between w1 and w2")
        if self.w2.shape[2] != self.w3.shape[0]:
            raise ValueError("rank mismatch between w2 and w3")
        if self.w3.shape[2] != self.w4.shape[0]:
            raise ValueError("rank mismatch between w3 and w4")

    @property
    def ranks(self) -> tuple[int, int, int]:
        return (self.w1.shape[1], self.w2.shape[2], self.w3.shape[2])

    @property
    def in_channels(self) -> int:
        return self.w1.shape[0]

    @property
    def out_channels(self) -> int:
        return self.w4.shape[1]

    @property
    def kernel_size(self) -> tuple[int, int]:
        return (self.w2.shape[1], self.w3.shape[1])

    @property
    def uniform_rank(self) -> bool:
        r1, r2, r3 = self.ranks
        return r1 == r2 == r3

    def num_params(self) -> int:
        return self.w1.size + self.w2.size + self.w3.size + self.w4.size


def circular_permute_last(w: np.ndarray) -> np.ndarray:
    """Roll the leading axis of a 4-D tensor to the back.

    Maps the (O, I, K, K) conv layout to (I, K, K, O); values are
    untouched, only the layout changes. Applying it four times is the
    identity.
    """
    if w.ndim != 4:
        raise ValueError(f"expected a 4-D tensor, got {w.ndim}-D")
    return as_f32(np.moveaxis(w, 0, -1))


def permute_out_first(w: np.ndarray) -> np.ndarray:
    """Inverse of :func:`circular_permute_last`: (I, K, K, O) -> (O, I, K, K)."""
    if w.ndim != 4:
        raise ValueError(f"expected a 4-D tensor, got {w.ndim}-D")
    return as_f32(np.moveaxis(w, -1, 0))


def contract_mode1(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Mode-1 contraction: sum over the last axis of `a` and first of `b`."""
    if a.shape[-1] != b.shape[0]:
        raise ValueError(
            f"contraction mismatch: last dim of a is {a.shape[-1]}, "
            f"first dim of b is {b.shape[0]}"
        )
    return as_f32(np.tensordot(a, b, axes=1))


def _fix_signs(u: np.ndarray, sv: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Deterministic sign convention: largest-magnitude entry of every
    # left-factor column is non-negative.
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return u * signs, sv * signs[:, None]


def _truncated_svd(m: np.ndarray, rank: int) -> tuple[np.ndarray, np.ndarray, bool, float]:
    """SVD of `m`, truncated to `rank`.

    Returns (U_r, S_r @ Vt_r, clamped, discarded) where `discarded` is the
    sum of squared singular values dropped by the truncation — the term
    that bounds the sweep's contribution to the reconstruction error.
    """
    max_rank = min(m.shape)
    clamped = rank > max_rank
    r = min(rank, max_rank)
    u, s, vt = np.linalg.svd(m.astype(np.float32), full_matrices=False)
    u, svt = _fix_signs(u[:, :r], (s[:r, None] * vt[:r]))
    return as_f32(u), as_f32(svt), clamped, float(np.sum(s[r:] ** 2))


def tt_svd(a: np.ndarray, ranks: tuple[int, int, int],
           return_discarded: bool = False):
    """Factorize an (I, K1, K2, O) tensor into four cores by sequential
    truncated SVD over the three unfolding cuts.

    Ranks beyond the maximal rank of an unfolding are clamped, with
    `rank_clamped` set on the result. With full ranks the four cores
    reconstruct `a` up to float32 round-off. With `return_discarded`,
    also returns the summed squared singular values dropped across the
    sweeps, which upper-bounds the squared reconstruction error.
    """
    a = as_f32(a)
    if a.ndim != 4:
        raise ValueError(f"expected a 4-D tensor, got {a.ndim}-D")
    i_dim, k1, k2, o_dim = a.shape
    r1, r2, r3 = (int(r) for r in ranks)
    if min(r1, r2, r3) < 1:
        raise ValueError("ranks must be >= 1")

    clamped = False
    discarded = 0.0
    c = a.reshape(i_dim, k1 * k2 * o_dim)
    w1, c, cl, d = _truncated_svd(c, r1)
    clamped |= cl
    discarded += d
    r1 = w1.shape[1]

    c = c.reshape(r1 * k1, k2 * o_dim)
    u, c, cl, d = _truncated_svd(c, r2)
    clamped |= cl
    discarded += d
    r2 = u.shape[1]
    w2 = u.reshape(r1, k1, r2)

    c = c.reshape(r2 * k2, o_dim)
    u, c, cl, d = _truncated_svd(c, r3)
    clamped |= cl
    discarded += d
    r3 = u.shape[1]
    w3 = u.reshape(r2, k2, r3)
    w4 = c.reshape(r3, o_dim)

    cores = TTConvCores(w1, w2, w3, w4, rank_clamped=clamped)
    return (cores, discarded) if return_discarded else cores


def tt_reconstruct(cores: TTConvCores) -> np.ndarray:
    """Contract the four cores back into the dense (I, K1, K2, O) tensor."""
    out = contract_mode1(cores.w1, cores.w2)
    out = contract_mode1(out, cores.w3)
    return contract_mode1(out, cores.w4)


def merge_ptt(cores: TTConvCores) -> np.ndarray:
    """Fold the parallel-branch cores into one dense (O, I, K, K) kernel.

    The vertical branch (w1, w2, w4) lands in the middle column, the
    horizontal branch (w1, w3, w4) in the middle row; the center tap is
    their sum and the corners stay zero, giving the cross-shaped kernel
    realized by the two-branch forward.
    """
    if not cores.uniform_rank:
        raise ValueError("merge requires a uniform rank across cores")
    k1, k2 = cores.kernel_size
    vert = contract_mode1(contract_mode1(cores.w1, cores.w2), cores.w4)  # (I, K1, O)
    horiz = contract_mode1(contract_mode1(cores.w1, cores.w3), cores.w4)  # (I, K2, O)
    kernel = np.zeros(
        (cores.in_channels, k1, k2, cores.out_channels), dtype=np.float32
    )
    kernel[:, :, k2 // 2, :] += vert
    kernel[:, k1 // 2, :, :] += horiz
    return permute_out_first(kernel)


def conv2d(
    x: np.ndarray,
    kernel: np.ndarray,
    stride: int | tuple[int, int] = 1,
    pad_h: int = 0,
    pad_w: int = 0,
) -> np.ndarray:
    """Cross-correlate (C, H, W) input with an (O, C, Kh, Kw) kernel under
    zero padding. Reference building block; clarity over speed."""
    x = as_f32(x)
    kernel = as_f32(kernel)
    if x.ndim != 3 or kernel.ndim != 4:
        raise ValueError("expected (C,H,W) input and (O,C,Kh,Kw) kernel")
    if x.shape[0] != kernel.shape[1]:
        raise ValueError(
            f"channel mismatch: input has {x.shape[0]}, kernel expects {kernel.shape[1]}"
        )
    sh, sw = (stride, stride) if isinstance(stride, int) else stride
    o_dim, c_dim, kh, kw = kernel.shape
    _, h, w = x.shape
    out_h = (h + 2 * pad_h - kh) // sh + 1
    out_w = (w + 2 * pad_w - kw) // sw + 1
    if out_h < 1 or out_w < 1:
        raise ValueError("kernel and padding leave no output positions")

    xp = np.pad(x, ((0, 0), (pad_h, pad_h), (pad_w, pad_w)))
    out = np.zeros((o_dim, out_h, out_w), dtype=np.float32)
    for i in range(kh):
        for j in range(kw):
            window = xp[:, i : i + sh * out_h : sh, j : j + sw * out_w : sw]
            out += np.einsum("oc,chw->ohw", kernel[:, :, i, j], window)
    return out


def save_tensor(path, a: np.ndarray) -> None:
    """Write one tensor in the flat checkpoint format: magic, version,
    ndim, u32 dims, then little-endian f32 payload."""
    a = as_f32(a)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", FORMAT_VERSION, a.ndim))
        f.write(struct.pack(f"<{a.ndim}I", *a.shape))
        f.write(a.astype("<f4").tobytes())


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        version, ndim = struct.unpack("<II", f.read(8))
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported format version {version}")
        shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
        count = int(np.prod(shape)) if shape else 1
        payload = f.read(4 * count)
        if len(payload) != 4 * count:
            raise ValueError(f"{path}: truncated payload")
        return np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
