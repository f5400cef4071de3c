"""Built-in self-checks run by ``astraea verify``."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import attention as att
from .diffusion import ModelConfig, RunMode, Schedule, build_toy_model, run_inference
from .errors import ConfigError
from .flops import FlopsConfig, flops_cross_attention, flops_mlp, flops_self_attention
from .formats import parse_schedule, read_schedule, render_schedule
from .numerics import Rng, count_flops, softmax_rows_with_lse
from .search import budget_band, in_band, mutation_probability, repair


class CheckFailed(AssertionError):
    pass


def _require(cond, detail="") -> None:
    if not cond:
        raise CheckFailed(str(detail))


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


def _sparse_dense() -> str:
    rng = Rng(101)
    worst = 0.0
    for _ in range(20):
        n, d = 1 + rng.choice(32), 1 + rng.choice(16)
        x = rng.gauss_matrix(n, d)
        w = att.AttentionWeights.init(d, rng)
        mask = np.flatnonzero(rng.uniform_array(n) < 0.5)
        if mask.size == 0:
            mask = np.array([rng.choice(n)])
        dense, lse_d = att.self_attention_dense(x, w)
        sparse, lse_s = att.self_attention_sparse(x, w, mask)
        worst = max(worst, float(np.max(np.abs(sparse - dense[mask]))))
    _require(worst <= 1e-12, f"max row deviation {worst:.3g}")
    return f"max deviation {worst:.2g}"


def _full_budget_identity() -> str:
    model = build_toy_model(ModelConfig(n_tokens=16, channels=8, n_blocks=2, timesteps=6))
    full = Schedule((10,) * 6)
    ref, _ = run_inference(model, full, RunMode.FULL)
    worst = 0.0
    for mode in (RunMode.ASTRAEA, RunMode.FIXED_TOKEN, RunMode.TIMESTEP_LEVEL):
        x, _ = run_inference(model, full, mode)
        worst = max(worst, float(np.max(np.abs(x - ref))))
    _require(worst <= 1e-12, f"max deviation {worst:.3g}")
    return f"max deviation {worst:.2g}"


def _flops_counter() -> str:
    rng = Rng(202)
    for _ in range(5):
        n, m, h = 1 + rng.choice(16), 1 + rng.choice(8), 1 + rng.choice(12)
        x, ctx = rng.gauss_matrix(n, h), rng.gauss_matrix(m, h)
        w = att.AttentionWeights.init(h, rng)
        mw = att.MlpWeights.init(h, rng)
        with count_flops() as c:
            att.self_attention_dense(x, w)
        _require(c.total == flops_self_attention(FlopsConfig(N=n, H=h)).total)
        with count_flops() as c:
            att.cross_attention(x, ctx, w)
        _require(c.total == flops_cross_attention(FlopsConfig(N=n, H=h, N_q=n, N_kv=m)))
        with count_flops() as c:
            att.mlp(x, mw)
        _require(c.total == flops_mlp(FlopsConfig(N=n, H=h)))
    half = flops_mlp(FlopsConfig(N=32, H=32))
    _require(2 * half == flops_mlp(FlopsConfig(N=64, H=32)))
    return "self/cross/mlp exact; mlp halves at theta=0.5"


def _repair_band() -> str:
    rng = Rng(303)
    for _ in range(200):
        n = 2 + rng.choice(20)
        budget = (1 + rng.choice(10 * n)) / 10
        try:
            band = budget_band(budget, n)
        except ConfigError:
            continue
        s = Schedule(tuple(rng.choice(11) for _ in range(n)))
        out = repair(s, band, rng)
        _require(in_band(out, band), f"{out.tenths} outside {band}")
    return "200 random repairs in band"


def _mutation_endpoints() -> str:
    p_start = mutation_probability(0, 30, 0.1, 0.01)
    p_end = mutation_probability(30, 30, 0.1, 0.01)
    _require(math.isclose(p_start, 0.1) and math.isclose(p_end, 0.01), (p_start, p_end))
    return f"{p_start:g} -> {p_end:g}"


def _softmax_lse() -> str:
    rng = Rng(404)
    a = rng.gauss_matrix(6, 9, 3.0)
    probs, sumexp = softmax_rows_with_lse(a)
    _require(np.all(np.abs(probs.sum(axis=1) - 1) <= 1e-9))
    brute = np.exp(a).sum(axis=1)
    _require(np.all(np.abs(sumexp / brute - 1) <= 1e-9))
    return "rows sum to 1; sum-exp matches brute force"


def _determinism() -> str:
    model = build_toy_model(ModelConfig(n_tokens=16, channels=8, n_blocks=2, timesteps=6))
    s = Schedule((10, 3, 5, 2, 7, 4))
    a, sa = run_inference(model, s, RunMode.ASTRAEA)
    b, sb = run_inference(model, s, RunMode.ASTRAEA)
    _require(np.array_equal(a, b) and sa.to_json() == sb.to_json())
    return "bitwise identical reruns"


def _schedule_roundtrip() -> str:
    rng = Rng(505)
    for _ in range(50):
        s = Schedule(tuple(rng.choice(11) for _ in range(1 + rng.choice(30))))
        _require(parse_schedule(render_schedule(s)) == s)
    return "50 schedules round-trip"


BUILTIN: list[tuple[str, Callable[[], str]]] = [
    ("softmax_lse", _softmax_lse),
    ("sparse_dense_equivalence", _sparse_dense),
    ("full_budget_identity", _full_budget_identity),
    ("flops_counter_closed_form", _flops_counter),
    ("repair_band", _repair_band),
    ("mutation_endpoints", _mutation_endpoints),
    ("determinism", _determinism),
    ("schedule_roundtrip", _schedule_roundtrip),
]


def check_schedule_file(path, timesteps: int | None = None, budget_fraction: float | None = None) -> CheckResult:
    """Validate a schedule file: grammar, grid, length and (optionally) the budget band."""
    name = f"schedule_file:{path}"
    try:
        s = read_schedule(path)
        if timesteps is not None and len(s) != timesteps:
            return CheckResult(name, False, f"length {len(s)} != timesteps {timesteps}")
        if budget_fraction is not None:
            genome = Schedule(s.tenths[1:])
            band = budget_band(budget_fraction * len(genome), len(genome))
            if not in_band(genome, band):
                return CheckResult(name, False, f"total {genome.total_tenths / 10:g} outside "
                                   f"[{band[0] / 10:g}, {band[1] / 10:g}]")
    except Exception as exc:  # noqa: BLE001 - every failure becomes a reported row
        return CheckResult(name, False, str(exc))
    return CheckResult(name, True, f"T={len(s)} sum={s.total_tenths / 10:g}")


def run_checks(extra: list[CheckResult] | None = None) -> list[CheckResult]:
    results = []
    for name, fn in BUILTIN:
        try:
            results.append(CheckResult(name, True, fn()))
        except Exception as exc:  # noqa: BLE001
            results.append(CheckResult(name, False, f"{type(exc).__name__}: {exc}"))
    return results + list(extra or [])


def format_table(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check':<{width}}  status  detail", "-" * (width + 30)]
    for r in results:
        lines.append(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL':<6}  {r.detail}")
    failed = sum(not r.passed for r in results)
    lines.append(f"{len(results) - failed}/{len(results)} checks passed")
    return "\n".join(lines)
