"""Command line entry point: ``astraea generate|search|sweep|flops|verify``.

All artifacts go under ``--out``. Given the same config and seeds every
command writes byte-identical files; wall time is only recorded with
``--wall-time``. The ``ASTRAEA_LOG`` environment variable sets the log level.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from .checks import check_schedule_file, format_table, run_checks
from .config import RunConfig, load_config, with_search_budget
from .diffusion import RunMode, Schedule, build_toy_model, run_inference, skip_one_sweep
from .errors import ConfigError, DomainError
from .flops import FlopsConfig, flops_cross_attention, flops_mlp, flops_self_attention, flops_sparse_run
from .formats import fmt_float, write_csv, write_grid_csv, write_json, write_schedule
from .metrics import compute_mse, psnr_from_mse
from .search import run_search, with_warmup

log = logging.getLogger("astraea")

MODE_CHOICES = ["full", "astraea", "timestep", "fixed", "timestep_level", "fixed_token"]


def _setup_logging() -> None:
    level = os.environ.get("ASTRAEA_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"{text} is not an unsigned 64-bit integer")
    return value


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config)
    if getattr(args, "mode", None):
        cfg.mode = RunMode.parse(args.mode)
    if getattr(args, "seed", None) is not None:
        cfg.model = replace(cfg.model, noise_seed=args.seed)
        cfg.search = replace(cfg.search, seed=args.seed)
    if getattr(args, "out", None):
        cfg.out_dir = Path(args.out)
    return cfg


def cmd_generate(args) -> int:
    cfg = _resolve(args)
    if args.budget is not None:
        cfg.theta, cfg.schedule = args.budget, None
        try:
            Schedule.uniform(cfg.model.timesteps, args.budget)
        except DomainError as exc:
            raise ConfigError(f"--budget: {exc}") from None
    schedule = cfg.run_schedule()
    model = build_toy_model(cfg.model)
    noise = cfg.noise()
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)

    start = time.perf_counter()
    x0, stats = run_inference(model, schedule, cfg.mode, noise, selection=cfg.selection)
    log.info("generate: %s over %d steps, max skip %d", cfg.mode.value, len(schedule), stats.max_skip)
    wall = time.perf_counter() - start

    record: dict = {
        "mode": cfg.mode.value,
        "mse": "NA",
        "psnr_db": "NA",
        "psnr_peak": "NA",
        "flops_total": stats.flops.total,
        "selected_counts": stats.selected_counts,
    }
    if cfg.mode is not RunMode.FULL:
        full = Schedule((10,) * cfg.model.timesteps)
        ref, ref_stats = run_inference(model, full, RunMode.FULL, noise, selection=cfg.selection)
        mse = compute_mse(ref, x0)
        peak = float(np.max(np.abs(ref)))
        record.update(mse=mse, psnr_db=fmt_float(psnr_from_mse(mse, peak)), psnr_peak=peak,
                      flops_reference=ref_stats.flops.total)
        write_grid_csv(ref, out / "reference.csv")
    if args.wall_time:
        record["wall_time_s"] = wall
    write_grid_csv(x0, out / "grid.csv")
    write_json(out / "run_stats.json", stats.to_dict())
    write_json(out / "metrics.json", record)
    write_schedule(schedule, out / "schedule.txt")
    mse_text = record["mse"] if record["mse"] == "NA" else fmt_float(record["mse"])
    print(f"mode={cfg.mode.value} mse={mse_text} psnr={record['psnr_db']} flops={stats.flops.total}")
    return 0


def cmd_search(args) -> int:
    cfg = _resolve(args)
    if args.budget is not None:
        cfg = with_search_budget(cfg, args.budget)
    model = build_toy_model(cfg.model)
    out = cfg.out_dir
    log.info("search: budget %.3g over %d steps", cfg.search.budget, cfg.model.timesteps - 1)
    result = run_search(cfg.search, model, jobs=args.jobs, noise=cfg.noise(), selection=cfg.selection)
    out.mkdir(parents=True, exist_ok=True)
    rows = [[h.generation, h.best_mse, h.mean_mse, h.evals, " ".join(map(str, h.best_schedule.tenths))]
            for h in result.history]
    write_csv(out / "search_history.csv", ["generation", "best_mse", "mean_mse", "evals", "best_schedule"], rows)
    write_schedule(with_warmup(result.best.schedule), out / "best_schedule.txt")
    print(f"best_mse={fmt_float(result.best.fitness)} generations={len(result.history) - 1}")
    return 0


def _sweep_one(job):
    model_cfg, noise, prompt = job
    return skip_one_sweep(build_toy_model(model_cfg), noise, prompt_seed=prompt)


def cmd_sweep(args) -> int:
    cfg = _resolve(args)
    T = cfg.model.timesteps
    if T < 2:
        raise ConfigError("[model] timesteps: sweep needs at least 2")
    noise = cfg.noise()
    jobs = [(cfg.model, noise, p) for p in cfg.sweep_prompts]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            curves = list(pool.map(_sweep_one, jobs))
    else:
        curves = [_sweep_one(j) for j in jobs]
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    header = ["step", "timestep"] + [f"mse_prompt_{p}" for p in cfg.sweep_prompts]
    rows = [[k, T - k] + [float(c[k]) for c in curves] for k in range(T)]
    write_csv(out / "sweep.csv", header, rows)
    summary = {"prompts": list(cfg.sweep_prompts), "spearman": {}}
    for i in range(len(curves)):
        for j in range(i + 1, len(curves)):
            rho = float(spearmanr(curves[i], curves[j])[0])
            summary["spearman"][f"{cfg.sweep_prompts[i]}-{cfg.sweep_prompts[j]}"] = rho
    write_json(out / "sweep_summary.json", summary)
    print(f"rows={T} spearman={summary['spearman']}")
    return 0


def cmd_flops(args) -> int:
    cfg = _resolve(args)
    if args.budget is not None:
        cfg.theta, cfg.schedule = args.budget, None
    schedule = cfg.run_schedule()
    m = cfg.model
    dense = flops_sparse_run(m, Schedule((10,) * m.timesteps), "full")
    sparse = flops_sparse_run(m, schedule, cfg.mode.value)
    layer = flops_self_attention(FlopsConfig(N=m.n_tokens, H=m.channels))
    cross = flops_cross_attention(FlopsConfig(N=m.n_tokens, H=m.channels, N_kv=m.context_tokens))
    mlp = flops_mlp(FlopsConfig(N=m.n_tokens, H=m.channels))
    names = ["qkv_proj", "attn_scores", "attn_output", "out_proj", "self_attn", "cross_attn", "mlp",
             "total", "softmax"]
    dd, sd = dense.to_dict(), sparse.to_dict()
    rows = [[n, dd[n], sd[n], f"{sd[n] / dd[n]:.4f}" if dd[n] else "NA"] for n in names]
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "flops.csv", ["operator", "full", cfg.mode.value, "ratio"], rows)
    print(f"per layer (N={m.n_tokens}, H={m.channels}): self_attn={layer.total} cross_attn={cross} mlp={mlp}")
    print(f"{'operator':<12} {'full':>14} {cfg.mode.value:>14} {'ratio':>8}")
    for r in rows:
        print(f"{r[0]:<12} {r[1]:>14} {r[2]:>14} {r[3]:>8}")
    print("softmax is reported separately and excluded from total")
    return 0


def cmd_verify(args) -> int:
    extra = []
    if args.schedule:
        T = None
        fraction = args.budget
        if args.config:
            cfg = load_config(args.config)
            T = cfg.model.timesteps
        extra.append(check_schedule_file(args.schedule, T, fraction))
    results = run_checks(extra)
    print(format_table(results))
    failed = [r.name for r in results if not r.passed]
    if failed:
        print("FAILED: " + ", ".join(failed))
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="astraea", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, budget_help):
        p.add_argument("--config", help="INI config file")
        p.add_argument("--mode", choices=MODE_CHOICES)
        p.add_argument("--budget", type=float, help=budget_help)
        p.add_argument("--seed", type=_u64, help="overrides the noise seed and the search seed")
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("generate", help="run one denoising pass and write the grid and metrics")
    common(p, "uniform theta for every step")
    p.add_argument("--wall-time", action="store_true", help="record wall time in metrics.json")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("search", help="evolutionary search for a step budget schedule")
    common(p, "mean theta over the searchable steps")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("sweep", help="skip-one-step MSE sweep per prompt")
    common(p, "unused")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("flops", help="analytic FLOPs table")
    common(p, "uniform theta for every step")
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("verify", help="run the built-in self-checks")
    p.add_argument("--config", help="INI config file (sets T for --schedule)")
    p.add_argument("--schedule", help="schedule file to validate")
    p.add_argument("--budget", type=float, help="mean theta the schedule must respect")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
