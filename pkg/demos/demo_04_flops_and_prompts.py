"""
Where the FLOPs go, and which steps matter
==========================================

The analytic cost model splits each block into attention projections, score
and output products, cross-attention and the MLP. Softmax is listed on its
own and left out of the total.
"""

from scipy.stats import spearmanr

from astraea.diffusion import ModelConfig, Schedule, build_toy_model, skip_one_sweep
from astraea.flops import flops_sparse_run

cfg = ModelConfig()
full = flops_sparse_run(cfg, Schedule((10,) * cfg.timesteps), "full").to_dict()
half = flops_sparse_run(cfg, Schedule.uniform(cfg.timesteps, 0.5), "astraea").to_dict()
for name in ("qkv_proj", "attn_scores", "attn_output", "out_proj", "cross_attn", "mlp", "total", "softmax"):
    print(f"{name:12s} {full[name]:11d} {half[name]:11d}  {half[name] / full[name]:.3f}")

###############################################################################
# Skip one step at a time and measure the damage. Two prompts give curves with
# a similar ordering of the steps: the middle of the run matters most.

model = build_toy_model(cfg)
a = skip_one_sweep(model, prompt_seed=0)
b = skip_one_sweep(model, prompt_seed=1)
for k in range(cfg.timesteps):
    print(f"step {k:2d}  {a[k]:.3e}  {b[k]:.3e}")
print("spearman:", round(float(spearmanr(a, b)[0]), 3))
