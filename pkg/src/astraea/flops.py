"""Analytic FLOP counts for self-attention, cross-attention and MLP layers.

Symbols: ``B`` batch, ``N`` tokens, ``H`` hidden size, ``N_head`` heads and
``d = H / N_head``. A ``[H x H]`` linear layer over ``N`` tokens costs
``2 B N H^2``. Softmax is reported on its own and never folded into
``total``. Counts are Python ints.

Selective execution only runs ``n`` query rows (``n = |mask|``) of a block
while keys and values stay dense, so one self-attention layer costs

    2 B n H^2 (Q) + 4 B N H^2 (K, V) + 4 B n N H (scores, A.V) + 2 B n H^2 (out)

and cross-attention and the MLP are the dense formulas with ``n`` tokens.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from .errors import ConfigError
from .selection import budget_count


@dataclass(frozen=True)
class FlopsConfig:
    B: int = 1
    N: int = 1
    H: int = 1
    N_head: int = 1
    N_q: int | None = None
    N_kv: int | None = None

    def __post_init__(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if v is not None and v < 1:
                raise ConfigError(f"{f.name} must be >= 1")
        if self.H % self.N_head:
            raise ConfigError("H must be divisible by N_head")

    @property
    def d(self) -> int:
        return self.H // self.N_head

    @property
    def n_q(self) -> int:
        return self.N if self.N_q is None else self.N_q

    @property
    def n_kv(self) -> int:
        return self.N if self.N_kv is None else self.N_kv


@dataclass(frozen=True)
class FlopsReport:
    qkv_proj: int = 0
    attn_scores: int = 0
    softmax: int = 0
    attn_output: int = 0
    out_proj: int = 0
    cross_attn: int = 0
    mlp: int = 0

    @property
    def self_attn(self) -> int:
        return self.qkv_proj + self.attn_scores + self.attn_output + self.out_proj

    @property
    def total(self) -> int:
        return self.self_attn + self.cross_attn + self.mlp

    def __add__(self, other: "FlopsReport") -> "FlopsReport":
        return FlopsReport(*(getattr(self, f.name) + getattr(other, f.name) for f in fields(self)))

    def to_dict(self) -> dict[str, int]:
        out = asdict(self)
        out["self_attn"] = self.self_attn
        out["total"] = self.total
        return out


def flops_self_attention(cfg: FlopsConfig) -> FlopsReport:
    B, N, H, h, d = cfg.B, cfg.N, cfg.H, cfg.N_head, cfg.d
    return FlopsReport(
        qkv_proj=6 * B * N * H * H,
        attn_scores=2 * B * h * N * N * d,
        softmax=B * h * N * N,
        attn_output=2 * B * h * N * N * d,
        out_proj=2 * B * N * H * H,
    )


def flops_cross_attention(cfg: FlopsConfig) -> int:
    B, H, nq, nkv = cfg.B, cfg.H, cfg.n_q, cfg.n_kv
    return 4 * B * nq * H * H + 4 * B * nkv * H * H + 4 * B * nq * nkv * H


def flops_mlp(cfg: FlopsConfig) -> int:
    return 16 * cfg.B * cfg.N * cfg.H * cfg.H


def flops_sparse_self_attention(n_selected: int, cfg: FlopsConfig) -> FlopsReport:
    """Self-attention cost when only ``n_selected`` query rows are computed."""
    if n_selected == 0:
        return FlopsReport()
    B, N, H, h, d, n = cfg.B, cfg.N, cfg.H, cfg.N_head, cfg.d, n_selected
    return FlopsReport(
        qkv_proj=2 * B * n * H * H + 4 * B * N * H * H,
        attn_scores=2 * B * h * n * N * d,
        softmax=B * h * n * N,
        attn_output=2 * B * h * n * N * d,
        out_proj=2 * B * n * H * H,
    )


def flops_block(n_selected: int, n_tokens: int, hidden: int, context_tokens: int,
                batch: int = 1, n_head: int = 1) -> FlopsReport:
    """One compute block (self-attn, cross-attn, MLP) with ``n_selected`` active tokens."""
    if n_selected == 0:
        return FlopsReport()
    cfg = FlopsConfig(B=batch, N=n_tokens, H=hidden, N_head=n_head)
    sa = flops_sparse_self_attention(n_selected, cfg)
    cross = flops_cross_attention(FlopsConfig(B=batch, N=n_tokens, H=hidden, N_head=n_head,
                                              N_q=n_selected, N_kv=context_tokens))
    mlp = flops_mlp(FlopsConfig(B=batch, N=n_selected, H=hidden, N_head=n_head))
    return FlopsReport(sa.qkv_proj, sa.attn_scores, sa.softmax, sa.attn_output, sa.out_proj, cross, mlp)


def flops_from_masks(model_cfg, mask_sizes, batch: int = 1, n_head: int = 1) -> FlopsReport:
    """Sum block costs over a ``[timestep][block]`` table of selected-token counts."""
    report = FlopsReport()
    for per_block in mask_sizes:
        for n_sel in per_block:
            report = report + flops_block(int(n_sel), model_cfg.n_tokens, model_cfg.channels,
                                          model_cfg.context_tokens, batch, n_head)
    return report


def planned_mask_sizes(model_cfg, schedule, mode: str) -> list[list[int]]:
    """Selected-token count per timestep and block that a run will use.

    The first timestep is always computed in full.
    """
    N, L = model_cfg.n_tokens, model_cfg.n_blocks
    sizes = []
    for t, tenths in enumerate(schedule.tenths):
        if mode == "full" or t == 0:
            k = N
        elif mode == "timestep_level":
            k = N if tenths >= 5 else 0
        elif mode in ("astraea", "fixed_token"):
            k = budget_count(tenths / 10, N)
        else:
            raise ConfigError(f"unknown run mode {mode!r}")
        sizes.append([k] * L)
    return sizes


def flops_sparse_run(model_cfg, schedule, mode: str, batch: int = 1, n_head: int = 1) -> FlopsReport:
    """Run-level FLOPs for ``schedule`` executed in ``mode``."""
    return flops_from_masks(model_cfg, planned_mask_sizes(model_cfg, schedule, mode), batch, n_head)
