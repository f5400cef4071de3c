"""Single-head attention, cross-attention and MLP with query-row subsets.

Sparse execution keeps keys and values for every token and only computes
the query rows named by a selection mask, so each produced row is the same
row the dense operator would produce.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError
from .numerics import Rng, matmul, note_buffer, softmax_rows_with_lse

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_K = 0.044715


@dataclass(frozen=True)
class AttentionWeights:
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray

    @property
    def dim(self) -> int:
        return self.w_q.shape[0]

    @classmethod
    def init(cls, d: int, rng: Rng) -> "AttentionWeights":
        scale = 1.0 / math.sqrt(d)
        return cls(*(rng.gauss_matrix(d, d, scale) for _ in range(4)))


@dataclass(frozen=True)
class MlpWeights:
    w1: np.ndarray  # d x 4d
    w2: np.ndarray  # 4d x d

    @property
    def dim(self) -> int:
        return self.w1.shape[0]

    @classmethod
    def init(cls, d: int, rng: Rng) -> "MlpWeights":
        scale = 1.0 / math.sqrt(d)
        return cls(rng.gauss_matrix(d, 4 * d, scale), rng.gauss_matrix(4 * d, d, scale))


def selection_mask(indices, n_tokens: int) -> np.ndarray:
    """Validate and normalise a selection mask to a strictly increasing int array."""
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= n_tokens):
        raise DomainError(f"mask indices must lie in [0, {n_tokens})")
    if idx.size > 1 and np.any(np.diff(idx) <= 0):
        raise DomainError("mask indices must be strictly increasing")
    return idx


def full_mask(n_tokens: int) -> np.ndarray:
    return np.arange(n_tokens, dtype=np.int64)


def gelu(x: np.ndarray) -> np.ndarray:
    """GELU, tanh approximation: ``0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))``."""
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + _GELU_K * (x * x * x))))


def attend(q: np.ndarray, k: np.ndarray, v: np.ndarray, tag: str = "") -> tuple[np.ndarray, np.ndarray]:
    """``softmax(q k^T / sqrt(d_k)) v`` and the per-row sum-exp scores of the scaled map."""
    if q.shape[1] != k.shape[1] or k.shape[0] != v.shape[0]:
        raise ShapeError(f"attend shapes q{q.shape} k{k.shape} v{v.shape}")
    scores = matmul(q, k.T, tag + "scores") / math.sqrt(k.shape[1])
    note_buffer(scores.shape)
    probs, sumexp = softmax_rows_with_lse(scores)
    return matmul(probs, v, tag + "attn_output"), sumexp


def _check_tokens(x: np.ndarray, d: int, name: str = "x") -> None:
    if x.ndim != 2 or x.shape[1] != d or x.shape[0] < 1:
        raise ShapeError(f"{name} must be N x {d} with N >= 1, got {x.shape}")


def self_attention_dense(x: np.ndarray, w: AttentionWeights) -> tuple[np.ndarray, np.ndarray]:
    """Dense self-attention over all tokens.

    Returns the projected output (N x d) and the sum-exp score of every row,
    which falls out of the softmax at no extra cost.
    """
    _check_tokens(x, w.dim)
    q = matmul(x, w.w_q, "q_proj")
    k = matmul(x, w.w_k, "k_proj")
    v = matmul(x, w.w_v, "v_proj")
    out, sumexp = attend(q, k, v)
    return matmul(out, w.w_o, "out_proj"), sumexp


def self_attention_sparse(
    x: np.ndarray, w: AttentionWeights, mask: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Self-attention for the query rows in ``mask`` only.

    Keys and values are projected from all N tokens, so row ``j`` of the
    result equals row ``mask[j]`` of :func:`self_attention_dense`. The scores
    buffer is ``len(mask) x N``.
    """
    _check_tokens(x, w.dim)
    mask = selection_mask(mask, x.shape[0])
    if mask.size == 0:
        raise DomainError("empty mask: serve every token from the cache instead")
    q = matmul(x[mask], w.w_q, "q_proj")
    k = matmul(x, w.w_k, "k_proj")
    v = matmul(x, w.w_v, "v_proj")
    out, sumexp = attend(q, k, v)
    return matmul(out, w.w_o, "out_proj"), sumexp


def cross_attention(
    x: np.ndarray, ctx: np.ndarray, w: AttentionWeights, mask: np.ndarray | None = None
) -> np.ndarray:
    """Cross-attention of the masked rows of ``x`` against every context token."""
    _check_tokens(x, w.dim)
    _check_tokens(ctx, w.dim, "ctx")
    rows = x if mask is None else x[selection_mask(mask, x.shape[0])]
    if rows.shape[0] == 0:
        return np.zeros((0, w.dim))
    q = matmul(rows, w.w_q, "cross_q_proj")
    k = matmul(ctx, w.w_k, "cross_k_proj")
    v = matmul(ctx, w.w_v, "cross_v_proj")
    out, _ = attend(q, k, v, "cross_")
    return matmul(out, w.w_o, "cross_out_proj")


def mlp(x: np.ndarray, w: MlpWeights, mask: np.ndarray | None = None) -> np.ndarray:
    """Token-wise ``gelu(x W1) W2`` on the masked rows."""
    _check_tokens(x, w.dim)
    rows = x if mask is None else x[selection_mask(mask, x.shape[0])]
    if rows.shape[0] == 0:
        return np.zeros((0, w.dim))
    return matmul(gelu(matmul(rows, w.w1, "mlp_up")), w.w2, "mlp_down")
