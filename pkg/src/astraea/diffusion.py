"""Toy diffusion transformer and the denoising loop with token-selective execution.

The denoiser is a stack of compute blocks. Each block is::

    h1 = x  + SelfAttn(rms(x))
    h2 = h1 + CrossAttn(rms(h1), context)
    y  = h2 + MLP(rms(h2))

``rms`` normalises each token on its own, so a block's output row depends
only on that token's row plus the shared keys and values.

and the predicted noise is the per-token RMS-normalised output of the last
block. Step ``k`` of a run (``k = 0 .. T-1``) denoises timestep ``t = T - k``:

    x <- alpha[k] * (x - beta[k] * z) + sigma[k] * noise

Run modes:

``full``
    every token of every block, the reference output.
``astraea``
    each block scores its tokens from its own cache and computes the top
    ``theta_k`` fraction; the rest are served from that block's cache.
``fixed_token``
    one mask per step, chosen from block 0's scores and shared by all blocks.
``timestep_level``
    ``theta_k`` is rounded to 0 or 1; a skipped step reuses the previous
    step's prediction.

Step 0 always runs in full so the caches hold a result for every token.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .attention import (
    AttentionWeights,
    MlpWeights,
    cross_attention,
    full_mask,
    mlp,
    self_attention_dense,
    self_attention_sparse,
)
from .errors import ConfigError, DomainError, ShapeError
from .flops import FlopsReport, flops_from_masks
from .metrics import compute_mse
from .numerics import Rng
from .selection import (
    BlockCache,
    SelectionConfig,
    read_cached,
    score_tokens,
    select_top,
    update_cache,
)

log = logging.getLogger(__name__)

# stream separators so weights, prompts and noise never share a SplitMix64 sequence
_PROMPT_STREAM = 0x5EED_C0DE_0000_0001
_NOISE_STREAM = 0x5EED_C0DE_0000_0002


class RunMode(str, Enum):
    FULL = "full"
    ASTRAEA = "astraea"
    TIMESTEP_LEVEL = "timestep_level"
    FIXED_TOKEN = "fixed_token"

    @classmethod
    def parse(cls, value: "str | RunMode") -> "RunMode":
        if isinstance(value, cls):
            return value
        aliases = {"timestep": "timestep_level", "fixed": "fixed_token"}
        try:
            return cls(aliases.get(str(value), str(value)))
        except ValueError:
            raise ConfigError(f"unknown run mode {value!r}") from None


@dataclass(frozen=True)
class ModelConfig:
    n_tokens: int = 64
    channels: int = 32
    context_tokens: int = 8
    n_blocks: int = 4
    timesteps: int = 20
    weight_seed: int = 0
    noise_seed: int = 0
    prompt_seed: int = 0

    def __post_init__(self) -> None:
        for name in ("n_tokens", "channels", "context_tokens", "n_blocks", "timesteps"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")


@dataclass(frozen=True)
class Schedule:
    """Per-step token budgets stored as integer tenths (``theta = tenths / 10``)."""

    tenths: tuple[int, ...]

    def __post_init__(self) -> None:
        tenths = tuple(int(v) for v in self.tenths)
        if any(v < 0 or v > 10 for v in tenths):
            raise DomainError("schedule entries must be tenths in 0..10")
        object.__setattr__(self, "tenths", tenths)

    @classmethod
    def uniform(cls, length: int, theta: float) -> "Schedule":
        return cls((theta_to_tenths(theta),) * length)

    @classmethod
    def from_thetas(cls, thetas) -> "Schedule":
        return cls(tuple(theta_to_tenths(v) for v in thetas))

    @property
    def theta(self) -> tuple[float, ...]:
        return tuple(v / 10 for v in self.tenths)

    @property
    def total_tenths(self) -> int:
        return sum(self.tenths)

    def __len__(self) -> int:
        return len(self.tenths)


def theta_to_tenths(theta: float) -> int:
    tenths = round(theta * 10)
    if abs(theta * 10 - tenths) > 1e-9 or not 0 <= tenths <= 10:
        raise DomainError(f"theta {theta} is not on the 0.0, 0.1, ..., 1.0 grid")
    return int(tenths)


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step ``alpha``, ``beta`` and ``sigma``; index 0 is the first step (t = T)."""

    alpha: np.ndarray
    beta: np.ndarray
    sigma: np.ndarray

    def __post_init__(self) -> None:
        arrays = [np.asarray(a, dtype=np.float64) for a in (self.alpha, self.beta, self.sigma)]
        if len({a.shape for a in arrays}) != 1 or arrays[0].ndim != 1:
            raise ShapeError("alpha, beta and sigma must be 1-D of equal length")
        if not all(np.all(np.isfinite(a)) for a in arrays) or np.any(arrays[2] < 0):
            raise DomainError("noise schedule must be finite with sigma >= 0")
        for name, a in zip(("alpha", "beta", "sigma"), arrays):
            object.__setattr__(self, name, a)

    def __len__(self) -> int:
        return len(self.alpha)

    @staticmethod
    def _cosine_abar(timesteps: int, s: float) -> np.ndarray:
        t = np.arange(timesteps + 1, dtype=np.float64)
        f = np.cos((t / timesteps + s) / (1 + s) * np.pi / 2) ** 2
        return f / f[0]

    @classmethod
    def cosine(cls, timesteps: int, sigma_scale: float = 0.0, s: float = 0.008) -> "NoiseSchedule":
        """Euler steps along a cosine signal curve ``abar``.

        ``alpha_t = 1`` and ``beta_t`` is the drop ``abar_{t-1} - abar_t``
        normalised so the betas sum to 1; ``sigma_t = sigma_scale * sqrt(beta_t)``.
        The state stays near unit scale for any predictor with unit-RMS output.
        """
        abar = cls._cosine_abar(timesteps, s)
        drop = abar[:-1] - abar[1:]
        beta = drop / drop.sum()
        sigma = sigma_scale * np.sqrt(beta)
        # reverse so index 0 is the first denoising step (t = T)
        return cls(np.ones(timesteps), beta[::-1].copy(), sigma[::-1].copy())

    @classmethod
    def ddpm_cosine(cls, timesteps: int, sigma_scale: float = 0.0, s: float = 0.008,
                    max_beta: float = 0.5) -> "NoiseSchedule":
        """DDPM ancestral coefficients from the same cosine curve.

        With per-step retention ``a_t`` (``1 - a_t`` capped at ``max_beta``):
        ``alpha_t = 1/sqrt(a_t)``, ``beta_t = (1 - a_t)/sqrt(1 - abar_t)``,
        ``sigma_t = sigma_scale * sqrt((1 - abar_{t-1})/(1 - abar_t) * (1 - a_t))``.
        An untrained predictor does not cancel the ``1/sqrt(a_t)`` growth, so
        the state grows several-fold over a run.
        """
        abar_raw = cls._cosine_abar(timesteps, s)
        betas = np.clip(1.0 - abar_raw[1:] / abar_raw[:-1], 1e-5, max_beta)
        a = 1.0 - betas
        abar = np.cumprod(a)
        abar_prev = np.concatenate([[1.0], abar[:-1]])
        alpha = 1.0 / np.sqrt(a)
        beta = betas / np.sqrt(1.0 - abar)
        sigma = sigma_scale * np.sqrt((1.0 - abar_prev) / (1.0 - abar) * betas)
        return cls(alpha[::-1].copy(), beta[::-1].copy(), sigma[::-1].copy())

    @classmethod
    def from_kind(cls, kind: str, timesteps: int, sigma_scale: float = 0.0) -> "NoiseSchedule":
        if kind == "cosine":
            return cls.cosine(timesteps, sigma_scale)
        if kind == "ddpm_cosine":
            return cls.ddpm_cosine(timesteps, sigma_scale)
        raise ConfigError(f"unknown noise schedule kind {kind!r}")

    @classmethod
    def constant(cls, timesteps: int, alpha: float, beta: float, sigma: float = 0.0) -> "NoiseSchedule":
        return cls(np.full(timesteps, alpha), np.full(timesteps, beta), np.full(timesteps, sigma))


@dataclass(frozen=True)
class Block:
    attn: AttentionWeights
    cross: AttentionWeights
    mlp: MlpWeights


@dataclass(frozen=True)
class ToyModel:
    cfg: ModelConfig
    blocks: tuple[Block, ...]

    def context(self, prompt_seed: int | None = None) -> np.ndarray:
        seed = self.cfg.prompt_seed if prompt_seed is None else prompt_seed
        rng = Rng(int(seed) ^ _PROMPT_STREAM)
        return rng.gauss_matrix(self.cfg.context_tokens, self.cfg.channels)

    def initial_noise(self, noise_seed: int | None = None) -> np.ndarray:
        seed = self.cfg.noise_seed if noise_seed is None else noise_seed
        return Rng(int(seed) ^ _NOISE_STREAM).gauss_matrix(self.cfg.n_tokens, self.cfg.channels)

    def noise_rng(self, noise_seed: int | None = None) -> Rng:
        seed = self.cfg.noise_seed if noise_seed is None else noise_seed
        return Rng(int(seed) ^ _NOISE_STREAM).spawn(1)


def build_toy_model(cfg: ModelConfig) -> ToyModel:
    """Seeded weights, each entry ``N(0, 1/d)``."""
    rng = Rng(cfg.weight_seed)
    d = cfg.channels
    blocks = tuple(
        Block(AttentionWeights.init(d, rng), AttentionWeights.init(d, rng), MlpWeights.init(d, rng))
        for _ in range(cfg.n_blocks)
    )
    return ToyModel(cfg, blocks)


def timestep_embedding(t: int, d: int) -> np.ndarray:
    half = (d + 1) // 2
    freqs = np.exp(-math.log(1000.0) * np.arange(half) / half)
    emb = np.concatenate([np.sin(t * freqs), np.cos(t * freqs)])[:d]
    return emb


def rms_norm(h: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    return h / np.sqrt(np.mean(h * h, axis=1, keepdims=True) + eps)


def block_rows(block: Block, x: np.ndarray, ctx: np.ndarray, mask: np.ndarray | None):
    """Block output rows for ``mask`` (all rows when ``None``) and their sum-exp scores."""
    xn = rms_norm(x)
    if mask is None:
        sa, lse = self_attention_dense(xn, block.attn)
        rows = x
    else:
        sa, lse = self_attention_sparse(xn, block.attn, mask)
        rows = x[mask]
    h1 = rows + sa
    h2 = h1 + cross_attention(rms_norm(h1), ctx, block.cross)
    return h2 + mlp(rms_norm(h2), block.mlp), lse


def denoise_step(x_t: np.ndarray, t: int, schedule: NoiseSchedule, z_t: np.ndarray,
                 rng: Rng | None = None) -> np.ndarray:
    """``alpha (x - beta z) + sigma n`` at step index ``t`` of ``schedule``."""
    if x_t.shape != z_t.shape:
        raise ShapeError(f"x {x_t.shape} and z {z_t.shape} differ")
    a, b, s = schedule.alpha[t], schedule.beta[t], schedule.sigma[t]
    out = a * (x_t - b * z_t)
    if s > 0:
        if rng is None:
            raise DomainError("sigma > 0 needs an rng")
        out = out + s * rng.gauss_matrix(*x_t.shape)
    return out


@dataclass
class RunStats:
    mode: str
    schedule: tuple[int, ...]
    mask_sizes: list[list[int]] = field(default_factory=list)
    max_skip: list[int] = field(default_factory=list)
    flops: FlopsReport = field(default_factory=FlopsReport)

    @property
    def selected_counts(self) -> list[int]:
        return [sum(row) for row in self.mask_sizes]

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "schedule_tenths": list(self.schedule),
            "selected_counts": self.selected_counts,
            "mask_sizes": self.mask_sizes,
            "max_skip": self.max_skip,
            "flops": self.flops.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def run_inference(
    model: ToyModel,
    schedule: Schedule,
    mode: RunMode | str = RunMode.ASTRAEA,
    noise: NoiseSchedule | None = None,
    prompt_seed: int | None = None,
    noise_seed: int | None = None,
    selection: SelectionConfig | None = None,
    skip_steps: frozenset[int] | set[int] = frozenset(),
) -> tuple[np.ndarray, RunStats]:
    """Run the full denoising loop and return ``x_0`` with per-step statistics.

    ``skip_steps`` forces whole-step reuse of the previous prediction at the
    given step indices (a zero prediction at step 0); it drives the skip-one
    sweep and is independent of ``mode``.
    """
    mode = RunMode.parse(mode)
    cfg = model.cfg
    T, N, d = cfg.timesteps, cfg.n_tokens, cfg.channels
    noise = NoiseSchedule.cosine(T) if noise is None else noise
    selection = SelectionConfig() if selection is None else selection
    if len(schedule) != T or len(noise) != T:
        raise ShapeError(f"schedule ({len(schedule)}) and noise ({len(noise)}) must have length T={T}")

    ctx = model.context(prompt_seed)
    x = model.initial_noise(noise_seed)
    rng = model.noise_rng(noise_seed)
    caches = [BlockCache.create(N, d) for _ in model.blocks]
    every = full_mask(N)
    stats = RunStats(mode.value, schedule.tenths)
    z_prev: np.ndarray | None = None

    for k in range(T):
        tenths = schedule.tenths[k]
        skip_whole = k in skip_steps or (
            mode is RunMode.TIMESTEP_LEVEL and k > 0 and tenths < 5
        )
        if skip_whole:
            z = np.zeros_like(x) if z_prev is None else z_prev
            stats.mask_sizes.append([0] * len(model.blocks))
        else:
            h = x + timestep_embedding(T - k, d)
            sizes = []
            shared_mask = None
            for b, block in enumerate(model.blocks):
                cache = caches[b]
                if mode in (RunMode.FULL, RunMode.TIMESTEP_LEVEL) or k == 0:
                    mask = None
                elif mode is RunMode.ASTRAEA:
                    mask = select_top(score_tokens(cache, selection), tenths / 10, N)
                else:
                    if shared_mask is None:
                        shared_mask = select_top(score_tokens(caches[0], selection), tenths / 10, N)
                    mask = shared_mask
                if mask is None:
                    out, lse = block_rows(block, h, ctx, None)
                    if mode in (RunMode.ASTRAEA, RunMode.FIXED_TOKEN):
                        update_cache(cache, every, out, lse, h)
                    h = out
                    sizes.append(N)
                    continue
                if mask.size:
                    out, lse = block_rows(block, h, ctx, mask)
                    update_cache(cache, mask, out, lse, h[mask])
                else:
                    update_cache(cache, mask, np.zeros((0, d)), np.zeros(0), np.zeros((0, d)))
                h = read_cached(cache, every)
                sizes.append(int(mask.size))
            stats.mask_sizes.append(sizes)
            z = rms_norm(h)
        z_prev = z
        x = denoise_step(x, k, noise, z, rng)

    stats.max_skip = np.max([c.max_n for c in caches], axis=0).tolist()
    stats.flops = flops_from_masks(cfg, stats.mask_sizes)
    log.debug("run mode=%s flops=%d selected=%s", mode.value, stats.flops.total, stats.selected_counts)
    return x, stats


def skip_one_sweep(
    model: ToyModel,
    noise: NoiseSchedule | None = None,
    prompt_seed: int | None = None,
    noise_seed: int | None = None,
) -> np.ndarray:
    """MSE against the full run when each single step reuses the previous prediction."""
    T = model.cfg.timesteps
    if T < 2:
        raise DomainError("skip-one sweep needs T >= 2")
    full = Schedule((10,) * T)
    ref, _ = run_inference(model, full, RunMode.FULL, noise, prompt_seed, noise_seed)
    out = np.empty(T)
    for k in range(T):
        x0, _ = run_inference(model, full, RunMode.FULL, noise, prompt_seed, noise_seed,
                              skip_steps=frozenset({k}))
        out[k] = compute_mse(ref, x0)
    return out
