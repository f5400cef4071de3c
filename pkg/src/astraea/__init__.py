"""Token-selective sparse inference for a toy diffusion transformer.

Per-block LSE-weighted token selection with output caching, query-row sparse
attention, an evolutionary search over per-step token budgets, and an
analytic FLOPs model.
"""

from .attention import (
    AttentionWeights,
    MlpWeights,
    cross_attention,
    mlp,
    self_attention_dense,
    self_attention_sparse,
)
from .diffusion import (
    ModelConfig,
    NoiseSchedule,
    RunMode,
    RunStats,
    Schedule,
    build_toy_model,
    denoise_step,
    run_inference,
    skip_one_sweep,
)
from .errors import CacheStateError, ConfigError, DomainError, ShapeError
from .flops import FlopsConfig, FlopsReport, flops_sparse_run
from .metrics import compute_mse, compute_psnr
from .numerics import Rng, matmul, softmax_rows_with_lse
from .search import SearchConfig, run_search
from .selection import BlockCache, SelectionConfig, score_tokens, select_top

__version__ = "0.1.0"

__all__ = [
    "AttentionWeights",
    "BlockCache",
    "CacheStateError",
    "ConfigError",
    "DomainError",
    "FlopsConfig",
    "FlopsReport",
    "MlpWeights",
    "ModelConfig",
    "NoiseSchedule",
    "Rng",
    "RunMode",
    "RunStats",
    "Schedule",
    "SearchConfig",
    "SelectionConfig",
    "ShapeError",
    "build_toy_model",
    "compute_mse",
    "compute_psnr",
    "cross_attention",
    "denoise_step",
    "flops_sparse_run",
    "matmul",
    "mlp",
    "run_inference",
    "run_search",
    "score_tokens",
    "select_top",
    "self_attention_dense",
    "self_attention_sparse",
    "skip_one_sweep",
    "softmax_rows_with_lse",
]
