"""Token importance scoring, top-k selection and the per-block output cache.

A token's score is ``w_alpha * lse * delta + w_beta * exp(n)`` where ``lse`` is
the sum-exp score of its attention row at the last time it was computed,
``delta`` measures how much its input changed between its last two computed
timesteps, and ``n`` counts how many rounds in a row it has been skipped.
Tokens computed fewer than twice have ``delta = inf`` and are always
preferred, which is how the cache warms up.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import CacheStateError, ConfigError, DomainError

DELTA_METRICS = ("abs", "squared")


@dataclass(frozen=True)
class SelectionConfig:
    w_alpha: float = 1.0
    w_beta: float = 1.0
    delta_metric: str = "abs"

    def __post_init__(self) -> None:
        if self.w_alpha < 0 or self.w_beta < 0:
            raise ConfigError("w_alpha and w_beta must be >= 0")
        if self.w_alpha == 0 and self.w_beta == 0:
            raise ConfigError("w_alpha and w_beta cannot both be 0")
        if self.delta_metric not in DELTA_METRICS:
            raise ConfigError(f"delta_metric must be one of {DELTA_METRICS}")


@dataclass
class BlockCache:
    """Last computed outputs of one compute block, plus selection bookkeeping.

    ``prev_value``/``curr_value`` hold the block-input rows from the last two
    timesteps at which each token was computed; ``n`` is the consecutive-skip
    counter and ``max_n`` its running maximum.
    """

    n_tokens: int = 0
    dim: int = 0
    last_output: np.ndarray | None = None
    prev_value: np.ndarray | None = None
    curr_value: np.ndarray | None = None
    last_lse: np.ndarray | None = None
    n: np.ndarray | None = None
    max_n: np.ndarray | None = None
    computed: np.ndarray | None = None
    valid: np.ndarray | None = None

    @classmethod
    def create(cls, n_tokens: int, dim: int) -> "BlockCache":
        return cls(
            n_tokens=n_tokens,
            dim=dim,
            last_output=np.zeros((n_tokens, dim)),
            prev_value=np.zeros((n_tokens, dim)),
            curr_value=np.zeros((n_tokens, dim)),
            last_lse=np.zeros(n_tokens),
            n=np.zeros(n_tokens, dtype=np.int64),
            max_n=np.zeros(n_tokens, dtype=np.int64),
            computed=np.zeros(n_tokens, dtype=np.int64),
            valid=np.zeros(n_tokens, dtype=bool),
        )

    @property
    def initialized(self) -> bool:
        return self.last_output is not None

    def _require_init(self) -> None:
        if not self.initialized:
            raise CacheStateError("block cache is not initialized")


class TokenScore(NamedTuple):
    s_sig: float
    s_penalty: float
    s_total: float


@dataclass(frozen=True)
class TokenScores:
    s_sig: np.ndarray
    s_penalty: np.ndarray
    s_total: np.ndarray

    def __len__(self) -> int:
        return len(self.s_total)

    def __getitem__(self, i: int) -> TokenScore:
        return TokenScore(float(self.s_sig[i]), float(self.s_penalty[i]), float(self.s_total[i]))


def _delta_rows(prev: np.ndarray, curr: np.ndarray, metric: str) -> np.ndarray:
    diff = curr - prev
    if metric == "squared":
        return np.mean(diff * diff, axis=-1)
    return np.mean(np.abs(diff), axis=-1)


def compute_delta(cache: BlockCache, token_index: int, metric: str = "abs") -> float:
    """Mean channel-wise change of a token between its last two computed timesteps.

    Returns ``inf`` when the token has been computed fewer than two times.
    """
    cache._require_init()
    if cache.computed[token_index] < 2:
        return math.inf
    return float(_delta_rows(cache.prev_value[token_index], cache.curr_value[token_index], metric))


def compute_deltas(cache: BlockCache, metric: str = "abs") -> np.ndarray:
    cache._require_init()
    delta = _delta_rows(cache.prev_value, cache.curr_value, metric)
    return np.where(cache.computed < 2, np.inf, delta)


def combine_scores(lse, delta, n, cfg: SelectionConfig) -> TokenScores:
    lse = np.asarray(lse, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    cold = np.isinf(delta) | np.isinf(lse)
    with np.errstate(invalid="ignore", over="ignore"):
        sig = np.where(cold, np.inf, lse * delta)
        penalty = np.exp(np.asarray(n, dtype=np.float64))
        total = np.where(cold, np.inf, cfg.w_alpha * sig + cfg.w_beta * penalty)
    return TokenScores(sig, penalty, total)


def score_tokens(cache: BlockCache, cfg: SelectionConfig) -> TokenScores:
    """Score every token of a block from its cached history."""
    return combine_scores(cache.last_lse, compute_deltas(cache, cfg.delta_metric), cache.n, cfg)


def budget_count(theta: float, n_tokens: int) -> int:
    """Number of tokens computed under budget ``theta``: 0 iff theta is 0, else at least 1."""
    if not 0.0 <= theta <= 1.0:
        raise DomainError(f"budget fraction {theta} outside [0, 1]")
    if theta == 0.0:
        return 0
    return max(1, min(n_tokens, int(math.floor(theta * n_tokens + 0.5))))


def select_top(scores, budget_fraction: float, n_tokens: int) -> np.ndarray:
    """Indices of the ``k`` highest scores, ties to the lower index, sorted ascending."""
    total = scores.s_total if isinstance(scores, TokenScores) else np.asarray(scores, dtype=np.float64)
    if total.shape != (n_tokens,):
        raise DomainError(f"expected {n_tokens} scores, got {total.shape}")
    k = budget_count(budget_fraction, n_tokens)
    order = np.lexsort((np.arange(n_tokens), -total))
    return np.sort(order[:k]).astype(np.int64)


def update_cache(
    cache: BlockCache,
    mask: np.ndarray,
    new_outputs: np.ndarray,
    new_lse: np.ndarray,
    new_token_values: np.ndarray,
) -> None:
    """Store computed rows for ``mask`` and advance the skip counters of everyone else."""
    cache._require_init()
    mask = np.asarray(mask, dtype=np.int64)
    if new_outputs.shape[0] != mask.size or new_token_values.shape[0] != mask.size or len(new_lse) != mask.size:
        raise DomainError("mask and new rows are misaligned")
    skipped = np.ones(cache.n_tokens, dtype=bool)
    skipped[mask] = False
    cache.n[skipped] += 1
    cache.n[mask] = 0
    np.maximum(cache.max_n, cache.n, out=cache.max_n)
    if mask.size:
        cache.last_output[mask] = new_outputs
        cache.last_lse[mask] = new_lse
        cache.prev_value[mask] = cache.curr_value[mask]
        cache.curr_value[mask] = new_token_values
        cache.computed[mask] += 1
        cache.valid[mask] = True


def read_cached(cache: BlockCache, indices) -> np.ndarray:
    cache._require_init()
    idx = np.asarray(indices, dtype=np.int64)
    if not np.all(cache.valid[idx]):
        bad = idx[~cache.valid[idx]].tolist()
        raise CacheStateError(f"tokens {bad[:8]} have never been computed in this block")
    return cache.last_output[idx].copy()


# -- textual dump/load -------------------------------------------------------

_ARRAY_FIELDS = ("last_output", "prev_value", "curr_value", "last_lse")
_INT_FIELDS = ("n", "max_n", "computed")


def cache_to_dict(cache: BlockCache) -> dict:
    cache._require_init()
    out: dict = {"n_tokens": cache.n_tokens, "dim": cache.dim}
    for name in _ARRAY_FIELDS:
        out[name] = getattr(cache, name).tolist()
    for name in _INT_FIELDS:
        out[name] = getattr(cache, name).tolist()
    out["valid"] = cache.valid.tolist()
    return out


def cache_from_dict(data: dict) -> BlockCache:
    cache = BlockCache.create(int(data["n_tokens"]), int(data["dim"]))
    for name in _ARRAY_FIELDS:
        arr = np.asarray(data[name], dtype=np.float64)
        if arr.shape != getattr(cache, name).shape:
            raise ConfigError(f"cache field {name} has shape {arr.shape}")
        setattr(cache, name, arr)
    for name in _INT_FIELDS:
        setattr(cache, name, np.asarray(data[name], dtype=np.int64))
    cache.valid = np.asarray(data["valid"], dtype=bool)
    if np.any(cache.n < 0):
        raise ConfigError("negative skip counter in cache dump")
    return cache


def dump_cache(cache: BlockCache, path: str | Path) -> None:
    Path(path).write_text(json.dumps(cache_to_dict(cache), indent=1))


def load_cache(path: str | Path) -> BlockCache:
    return cache_from_dict(json.loads(Path(path).read_text()))
