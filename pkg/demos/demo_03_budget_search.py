"""
Searching for a per-step budget schedule
========================================

Not every denoising step is equally sensitive. An elitist evolutionary search
spreads a fixed total budget over the steps to minimise the output error.
This demo uses a reduced population so it finishes in seconds.
"""

from astraea.diffusion import ModelConfig, RunMode, Schedule, build_toy_model, run_inference
from astraea.metrics import compute_mse
from astraea.search import FitnessEvaluator, SearchConfig, run_search, with_warmup

model = build_toy_model(ModelConfig(n_tokens=32, channels=16, timesteps=12))
steps = model.cfg.timesteps - 1
cfg = SearchConfig(population_size=16, elite_count=4, offspring_per_gen=16, max_generations=6,
                   budget=0.4 * steps, prompt_seeds=(0, 1))
evaluator = FitnessEvaluator(model, cfg.prompt_seeds)
result = run_search(cfg, evaluator=evaluator)

###############################################################################
# Elitism keeps the best fitness from ever getting worse.

for h in result.history:
    print(f"gen {h.generation:2d}  best {h.best_mse:.4g}  mean {h.mean_mse:.4g}  evals {h.evals}")

###############################################################################
# Compare the found schedule with a flat schedule of the same total.

best = with_warmup(result.best.schedule)
flat = with_warmup(Schedule.uniform(steps, 0.4))
reference, _ = run_inference(model, Schedule((10,) * model.cfg.timesteps), "full")
for name, sched in (("searched", best), ("uniform", flat)):
    x0, _ = run_inference(model, sched, RunMode.ASTRAEA)
    print(f"{name:9s} tenths={sched.tenths} sum={sched.total_tenths} mse={compute_mse(reference, x0):.4g}")
