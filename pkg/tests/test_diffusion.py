import math

import numpy as np
import pytest
from scipy.stats import spearmanr

from astraea.diffusion import (
    ModelConfig,
    NoiseSchedule,
    RunMode,
    Schedule,
    block_rows,
    build_toy_model,
    denoise_step,
    rms_norm,
    run_inference,
    skip_one_sweep,
    theta_to_tenths,
    timestep_embedding,
)
from astraea.errors import ConfigError, DomainError, ShapeError
from astraea.flops import flops_sparse_run
from astraea.metrics import compute_mse, compute_psnr, psnr_from_mse
from astraea.numerics import Rng


def test_model_is_deterministic_and_seed_sensitive(small_cfg):
    a, b = build_toy_model(small_cfg), build_toy_model(small_cfg)
    assert all(np.array_equal(x.attn.w_q, y.attn.w_q) for x, y in zip(a.blocks, b.blocks))
    c = build_toy_model(ModelConfig(**{**small_cfg.__dict__, "weight_seed": 1}))
    assert not np.array_equal(a.blocks[0].attn.w_q, c.blocks[0].attn.w_q)


def test_weight_std_monte_carlo(default_model):
    d = default_model.cfg.channels
    w = np.concatenate([b.mlp.w1.ravel() for b in default_model.blocks])[:10_000]
    assert abs(w.std() * math.sqrt(d) - 1.0) <= 0.2


def test_model_config_validation():
    with pytest.raises((ConfigError, DomainError)):
        ModelConfig(n_tokens=0)
    with pytest.raises((ConfigError, DomainError)):
        ModelConfig(timesteps=0)


def test_denoise_step_cases():
    ones = NoiseSchedule.constant(1, 1.0, 1.0)
    x = np.array([[1.5, -2.0]])
    assert np.array_equal(denoise_step(x, 0, ones, x), np.zeros_like(x))
    half = NoiseSchedule.constant(1, 0.5, 0.2)
    assert np.allclose(denoise_step(np.array([[2.0]]), 0, half, np.array([[1.0]])), [[0.9]], atol=1e-15)


def test_denoise_step_noise_is_seeded():
    s = NoiseSchedule.constant(1, 1.0, 0.1, 0.3)
    x = np.ones((3, 2))
    a = denoise_step(x, 0, s, x, Rng(5))
    b = denoise_step(x, 0, s, x, Rng(5))
    assert np.array_equal(a, b) and not np.array_equal(a, 0.9 * x)
    with pytest.raises(DomainError):
        denoise_step(x, 0, s, x)
    with pytest.raises(ShapeError):
        denoise_step(x, 0, s, np.ones((2, 2)), Rng(0))


def test_cosine_schedule_shape():
    s = NoiseSchedule.cosine(20, 0.5)
    assert len(s) == 20
    assert np.all(s.alpha == 1.0)
    assert math.isclose(s.beta.sum(), 1.0, rel_tol=1e-12)
    assert np.allclose(s.sigma, 0.5 * np.sqrt(s.beta))
    d = NoiseSchedule.ddpm_cosine(20)
    assert np.all(d.alpha >= 1.0) and np.all(d.beta > 0)
    with pytest.raises(ConfigError):
        NoiseSchedule.from_kind("linear", 5)


def test_schedule_grid():
    assert Schedule.uniform(3, 0.3).tenths == (3, 3, 3)
    assert Schedule.from_thetas([0.1, 1.0]).theta == (0.1, 1.0)
    assert theta_to_tenths(0.7) == 7
    with pytest.raises(DomainError):
        theta_to_tenths(0.25)
    with pytest.raises(DomainError):
        Schedule((11,))


def test_rms_norm_unit_rows(rng):
    h = rng.gauss_matrix(5, 8, 7.0)
    assert np.allclose(np.sqrt(np.mean(rms_norm(h) ** 2, axis=1)), 1.0, atol=1e-6)


@pytest.mark.parametrize("mode", ["astraea", "fixed_token", "timestep_level"])
def test_full_budget_identity(small_model, mode):
    full = Schedule((10,) * small_model.cfg.timesteps)
    ref, _ = run_inference(small_model, full, RunMode.FULL)
    x, _ = run_inference(small_model, full, mode)
    assert np.max(np.abs(x - ref)) <= 1e-12


def test_zero_budget_reuses_first_prediction(small_model):
    T = small_model.cfg.timesteps
    noise = NoiseSchedule.cosine(T)
    sched = Schedule((10,) + (0,) * (T - 1))
    x_run, stats = run_inference(small_model, sched, RunMode.ASTRAEA, noise)
    x = small_model.initial_noise()
    h = x + timestep_embedding(T, small_model.cfg.channels)
    ctx = small_model.context()
    for block in small_model.blocks:
        h, _ = block_rows(block, h, ctx, None)
    z0 = rms_norm(h)
    for k in range(T):
        x = noise.alpha[k] * (x - noise.beta[k] * z0)
    assert np.max(np.abs(x - x_run)) <= 1e-12
    assert stats.selected_counts[1:] == [0] * (T - 1)


def test_quality_improves_with_budget(default_model):
    T = default_model.cfg.timesteps
    ref, _ = run_inference(default_model, Schedule((10,) * T), RunMode.FULL)
    mse = {}
    for theta in (0.2, 0.5):
        x, _ = run_inference(default_model, Schedule((10,) + (int(theta * 10),) * (T - 1)), RunMode.ASTRAEA)
        mse[theta] = compute_mse(ref, x)
    assert mse[0.5] < mse[0.2]


@pytest.mark.parametrize("mode", list(RunMode))
def test_run_flops_match_plan(small_model, mode):
    sched = Schedule((10, 3, 7, 0, 5, 9, 1, 4))
    _, stats = run_inference(small_model, sched, mode)
    assert stats.flops == flops_sparse_run(small_model.cfg, sched, mode.value)


def test_first_step_always_full(small_model):
    _, stats = run_inference(small_model, Schedule((1,) * 8), RunMode.ASTRAEA)
    assert stats.mask_sizes[0] == [16, 16]
    assert stats.selected_counts[1] == 2 * 2


def test_fixed_token_shares_block_zero_mask(small_model):
    _, stats = run_inference(small_model, Schedule((10,) + (3,) * 7), RunMode.FIXED_TOKEN)
    assert all(len(set(row)) == 1 for row in stats.mask_sizes)


def test_timestep_level_skips_low_budget_steps(small_model):
    sched = Schedule((10, 4, 5, 0, 9, 10, 2, 6))
    _, stats = run_inference(small_model, sched, RunMode.TIMESTEP_LEVEL)
    assert stats.selected_counts == [32, 0, 32, 0, 32, 32, 0, 32]


def test_run_mode_parse():
    assert RunMode.parse("timestep") is RunMode.TIMESTEP_LEVEL
    assert RunMode.parse("fixed") is RunMode.FIXED_TOKEN
    assert RunMode.parse(RunMode.FULL) is RunMode.FULL
    with pytest.raises(ConfigError):
        RunMode.parse("dense")


def test_schedule_length_checked(small_model):
    with pytest.raises(ShapeError):
        run_inference(small_model, Schedule((10,) * 3), RunMode.FULL)


def test_runs_are_bitwise_reproducible(small_model):
    sched = Schedule((10, 2, 4, 6, 8, 2, 4, 6))
    noise = NoiseSchedule.cosine(8, 0.3)
    a, sa = run_inference(small_model, sched, RunMode.ASTRAEA, noise)
    b, sb = run_inference(small_model, sched, RunMode.ASTRAEA, noise)
    assert np.array_equal(a, b) and sa.to_json() == sb.to_json()
    c, _ = run_inference(small_model, sched, RunMode.ASTRAEA, noise, noise_seed=1)
    assert not np.array_equal(a, c)


def test_prompt_changes_output(small_model):
    full = Schedule((10,) * 8)
    a, _ = run_inference(small_model, full, RunMode.FULL, prompt_seed=0)
    b, _ = run_inference(small_model, full, RunMode.FULL, prompt_seed=1)
    assert not np.array_equal(a, b)


def test_skip_one_sweep_nonnegative(small_model):
    mse = skip_one_sweep(small_model)
    assert mse.shape == (8,) and np.all(mse >= 0)


def test_skip_one_pass_through_step_is_free(small_model):
    T = small_model.cfg.timesteps
    beta = NoiseSchedule.cosine(T).beta.copy()
    beta[3] = 0.0
    noise = NoiseSchedule(np.ones(T), beta, np.zeros(T))
    assert skip_one_sweep(small_model, noise)[3] == 0.0


def test_skip_one_needs_two_steps():
    model = build_toy_model(ModelConfig(n_tokens=4, channels=4, n_blocks=1, timesteps=1))
    with pytest.raises(DomainError):
        skip_one_sweep(model)


def test_sweeps_rank_correlate_across_prompts(default_model):
    a = skip_one_sweep(default_model, prompt_seed=0)
    b = skip_one_sweep(default_model, prompt_seed=1)
    assert spearmanr(a, b)[0] > 0


def test_metrics():
    z = np.zeros((1, 2))
    assert compute_mse(z, z) == 0.0
    assert compute_mse(z, np.ones((1, 2))) == 1.0
    assert math.isclose(psnr_from_mse(0.01, 1.0), 20.0, rel_tol=1e-12)
    assert math.isinf(compute_psnr(np.ones((2, 2)), np.ones((2, 2))))
    assert math.isclose(compute_psnr(np.full((1, 2), 2.0), np.full((1, 2), 1.0)), 10 * math.log10(4.0))
    with pytest.raises(ShapeError):
        compute_mse(z, np.zeros((2, 1)))
