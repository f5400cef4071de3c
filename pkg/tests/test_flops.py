import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from astraea.attention import AttentionWeights, MlpWeights, cross_attention, mlp, self_attention_dense, self_attention_sparse
from astraea.diffusion import ModelConfig, Schedule
from astraea.errors import ConfigError
from astraea.flops import (
    FlopsConfig,
    FlopsReport,
    flops_block,
    flops_cross_attention,
    flops_mlp,
    flops_self_attention,
    flops_sparse_run,
    flops_sparse_self_attention,
    planned_mask_sizes,
)
from astraea.numerics import Rng, count_flops

# Per-operator MLP shares from the published OpenSora breakdown.
PUBLISHED_MLP_FULL = 0.8508
PUBLISHED_MLP_HALF = 0.4254


def test_self_attention_hand_values():
    assert flops_self_attention(FlopsConfig(B=1, N=2, H=4)).total == 320
    assert flops_self_attention(FlopsConfig(B=1, N=1, H=1)).total == 12


def test_cross_attention_hand_value():
    assert flops_cross_attention(FlopsConfig(B=1, N=2, H=4, N_q=2, N_kv=3)) == 416


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.integers(1, 64), st.integers(1, 64))
def test_cross_equals_self_when_lengths_match(b, n, h):
    cfg = FlopsConfig(B=b, N=n, H=h, N_q=n, N_kv=n)
    assert flops_cross_attention(cfg) == flops_self_attention(cfg).total == 8 * b * n * h * h + 4 * b * n * n * h


def test_mlp_hand_value_and_linearity():
    assert flops_mlp(FlopsConfig(B=1, N=2, H=4)) == 512
    assert flops_mlp(FlopsConfig(N=20, H=7)) * 2 == flops_mlp(FlopsConfig(N=40, H=7))


def test_mlp_halving_matches_published_ratio():
    m = ModelConfig()
    full = flops_sparse_run(m, Schedule((10,) * m.timesteps), "astraea").mlp
    # Compare post-warm-up steps so the forced first step does not dilute the ratio.
    half = flops_sparse_run(m, Schedule((10,) + (5,) * (m.timesteps - 1)), "astraea").mlp
    per_step = full // m.timesteps
    assert half - per_step == (full - per_step) // 2
    assert (full - per_step) / 2 == half - per_step
    block_ratio = flops_block(32, 64, 32, 8).mlp / flops_block(64, 64, 32, 8).mlp
    assert block_ratio == PUBLISHED_MLP_HALF / PUBLISHED_MLP_FULL == 0.5


@pytest.mark.parametrize("seed", range(5))
def test_counter_matches_closed_forms(seed):
    r = Rng(seed)
    n, m, h = 1 + r.choice(40), 1 + r.choice(12), 1 + r.choice(24)
    x, ctx = r.gauss_matrix(n, h), r.gauss_matrix(m, h)
    w, mw = AttentionWeights.init(h, r), MlpWeights.init(h, r)
    with count_flops() as c:
        self_attention_dense(x, w)
    rep = flops_self_attention(FlopsConfig(N=n, H=h))
    assert c.total == rep.total
    tags = c.by_tag()
    assert tags["scores"] == rep.attn_scores and tags["attn_output"] == rep.attn_output
    with count_flops() as c:
        cross_attention(x, ctx, w)
    assert c.total == flops_cross_attention(FlopsConfig(N=n, H=h, N_q=n, N_kv=m))
    with count_flops() as c:
        mlp(x, mw)
    assert c.total == flops_mlp(FlopsConfig(N=n, H=h))


@pytest.mark.parametrize("seed", range(5))
def test_sparse_counter_matches_closed_form(seed):
    r = Rng(100 + seed)
    n, h = 2 + r.choice(30), 1 + r.choice(16)
    k = 1 + r.choice(n)
    x, w = r.gauss_matrix(n, h), AttentionWeights.init(h, r)
    with count_flops() as c:
        self_attention_sparse(x, w, np.arange(k))
    assert c.total == flops_sparse_self_attention(k, FlopsConfig(N=n, H=h)).total


def test_sparse_at_full_selection_equals_dense():
    cfg = FlopsConfig(B=2, N=16, H=8, N_head=2)
    assert flops_sparse_self_attention(16, cfg) == flops_self_attention(cfg)


def test_softmax_excluded_from_total():
    rep = flops_self_attention(FlopsConfig(N=4, H=2))
    assert rep.softmax > 0
    assert rep.total == rep.self_attn + rep.cross_attn + rep.mlp


def test_report_addition():
    a = FlopsReport(1, 2, 3, 4, 5, 6, 7)
    assert (a + a).to_dict()["total"] == 2 * a.total


def test_full_budget_equals_dense_totals():
    m = ModelConfig()
    per_block = flops_block(m.n_tokens, m.n_tokens, m.channels, m.context_tokens)
    dense = flops_self_attention(FlopsConfig(N=m.n_tokens, H=m.channels)).total \
        + flops_cross_attention(FlopsConfig(N=m.n_tokens, H=m.channels, N_kv=m.context_tokens)) \
        + flops_mlp(FlopsConfig(N=m.n_tokens, H=m.channels))
    assert per_block.total == dense
    run = flops_sparse_run(m, Schedule((10,) * m.timesteps), "astraea")
    assert run.total == dense * m.n_blocks * m.timesteps


def test_zero_budget_costs_only_warmup():
    m = ModelConfig()
    run = flops_sparse_run(m, Schedule((10,) + (0,) * (m.timesteps - 1)), "astraea")
    warm = flops_block(m.n_tokens, m.n_tokens, m.channels, m.context_tokens)
    assert run.total == warm.total * m.n_blocks


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 10), min_size=6, max_size=6), st.integers(0, 5),
       st.sampled_from(["astraea", "fixed_token", "timestep_level", "full"]))
def test_monotone_in_each_theta(tenths, i, mode):
    m = ModelConfig(n_tokens=20, channels=8, n_blocks=2, timesteps=6)
    base = flops_sparse_run(m, Schedule(tuple(tenths)), mode).total
    if tenths[i] < 10:
        bumped = list(tenths)
        bumped[i] += 1
        assert flops_sparse_run(m, Schedule(tuple(bumped)), mode).total >= base


def test_unknown_mode():
    with pytest.raises(ConfigError):
        planned_mask_sizes(ModelConfig(), Schedule((10,) * 20), "dense")


def test_config_validation():
    with pytest.raises(ConfigError):
        FlopsConfig(N=0)
    with pytest.raises(ConfigError):
        FlopsConfig(H=6, N_head=4)
