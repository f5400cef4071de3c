"""Evolutionary search for per-step token budgets.

The genome is a :class:`~astraea.diffusion.Schedule` over the searchable
steps (every step after the first, which always runs in full). A genome is
feasible when its total lies in ``[0.9 * budget, 1.1 * budget]``; all sums
are kept in integer tenths.

Each generation keeps the ``elite_count`` lowest-MSE candidates, breeds
``offspring_per_gen`` children from random elite pairs by crossover,
mutation and repair, and refills the population with the best of the
children and the previous non-elite survivors. Elites always survive, so the
best MSE per generation never increases.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .diffusion import ModelConfig, NoiseSchedule, RunMode, Schedule, ToyModel, run_inference
from .errors import ConfigError, DomainError
from .metrics import compute_mse
from .numerics import Rng
from .selection import SelectionConfig

log = logging.getLogger(__name__)

GRID_STEPS = 10


@dataclass(frozen=True)
class SearchConfig:
    population_size: int = 50
    elite_count: int = 10
    offspring_per_gen: int = 50
    max_generations: int = 10
    p0: float = 0.1
    p_final: float = 0.01
    budget: float = 9.5
    prompt_seeds: tuple[int, ...] = (0, 1, 2, 3)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.population_size < 1 or self.elite_count < 1:
            raise ConfigError("population_size and elite_count must be >= 1")
        if self.elite_count > self.population_size:
            raise ConfigError("elite_count must not exceed population_size")
        if self.offspring_per_gen < 1:
            raise ConfigError("offspring_per_gen must be >= 1")
        if self.max_generations < 0:
            raise ConfigError("max_generations must be >= 0")
        if not 0.0 <= self.p_final <= self.p0 <= 1.0:
            raise ConfigError("need 0 <= p_final <= p0 <= 1")
        if not self.prompt_seeds:
            raise ConfigError("at least one prompt seed is required")
        object.__setattr__(self, "prompt_seeds", tuple(int(s) for s in self.prompt_seeds))


@dataclass
class Candidate:
    schedule: Schedule
    fitness: float | None = None

    @property
    def key(self) -> tuple[int, ...]:
        return self.schedule.tenths


@dataclass(frozen=True)
class GenerationRecord:
    generation: int
    best_mse: float
    mean_mse: float
    evals: int
    best_schedule: Schedule


@dataclass
class SearchResult:
    best: Candidate
    history: list[GenerationRecord] = field(default_factory=list)


def budget_band(budget: float, n_steps: int) -> tuple[int, int]:
    """Feasible total in tenths, ``[ceil(9 * budget), floor(11 * budget)]``.

    Raises :class:`ConfigError` when the budget is outside ``(0, n_steps]`` or
    the band holds no grid total.
    """
    if not 0 < budget <= n_steps:
        raise ConfigError(f"budget {budget} must lie in (0, {n_steps}]")
    lo = math.ceil(9 * budget - 1e-9)
    hi = min(math.floor(11 * budget + 1e-9), GRID_STEPS * n_steps)
    if lo > hi:
        raise ConfigError(f"budget {budget} leaves no reachable total on the 0.1 grid")
    return lo, hi


def in_band(schedule: Schedule, band: tuple[int, int]) -> bool:
    return band[0] <= schedule.total_tenths <= band[1]


def mutation_probability(generation: int, max_generations: int, p0: float, p_final: float) -> float:
    """Linear decay from ``p0`` at generation 0 to ``p_final`` at ``max_generations``."""
    if max_generations == 0:
        return p0
    if not 0 <= generation <= max_generations:
        raise DomainError(f"generation {generation} outside [0, {max_generations}]")
    return p0 - (generation / max_generations) * (p0 - p_final)


def crossover(a: Schedule, b: Schedule, rng: Rng, method: str | None = None,
              window: tuple[int, int] | None = None) -> Schedule:
    """Uniform or block crossover, picked with equal probability unless ``method`` is given.

    Uniform takes each entry from ``a`` when its coin falls below 0.5, else
    from ``b``. Block copies a contiguous window ``[start, end)`` from ``a``
    and everything else from ``b``.
    """
    if len(a) != len(b):
        raise DomainError("parents must have equal length")
    n = len(a)
    if method is None:
        method = "uniform" if rng.uniform() < 0.5 else "block"
    if method == "uniform":
        coins = rng.uniform_array(n)
        return Schedule(tuple(x if c < 0.5 else y for x, y, c in zip(a.tenths, b.tenths, coins)))
    if method != "block":
        raise DomainError(f"unknown crossover method {method!r}")
    if window is None:
        start = rng.choice(n)
        end = start + 1 + rng.choice(n - start)
    else:
        start, end = window
        if not 0 <= start < end <= n:
            raise DomainError(f"window {window} not inside [0, {n})")
    return Schedule(b.tenths[:start] + a.tenths[start:end] + b.tenths[end:])


def mutate(s: Schedule, p: float, rng: Rng) -> Schedule:
    """Replace each entry with probability ``p`` by a different grid value drawn uniformly."""
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"mutation probability {p} outside [0, 1]")
    out = list(s.tenths)
    for i, cur in enumerate(out):
        if rng.uniform() < p:
            v = rng.choice(GRID_STEPS)
            out[i] = v + 1 if v >= cur else v
    return Schedule(tuple(out))


def repair(s: Schedule, band: tuple[int, int], rng: Rng) -> Schedule:
    """Move random entries one grid step at a time until the total is inside ``band``."""
    lo, hi = band
    out = list(s.tenths)
    total = sum(out)
    while total > hi:
        movable = [i for i, v in enumerate(out) if v > 0]
        out[movable[rng.choice(len(movable))]] -= 1
        total -= 1
    while total < lo:
        movable = [i for i, v in enumerate(out) if v < GRID_STEPS]
        out[movable[rng.choice(len(movable))]] += 1
        total += 1
    return Schedule(tuple(out))


def init_population(cfg: SearchConfig, n_steps: int, rng: Rng) -> list[Candidate]:
    """``population_size`` distinct, feasible random genomes."""
    band = budget_band(cfg.budget, n_steps)
    seen: set[tuple[int, ...]] = set()
    population: list[Candidate] = []
    attempts = 0
    while len(population) < cfg.population_size:
        attempts += 1
        if attempts > 1000 * cfg.population_size:
            raise ConfigError("could not draw enough distinct feasible schedules")
        draw = Schedule(tuple(rng.choice(GRID_STEPS + 1) for _ in range(n_steps)))
        child = repair(draw, band, rng)
        if child.tenths not in seen:
            seen.add(child.tenths)
            population.append(Candidate(child))
    return population


def with_warmup(genome: Schedule) -> Schedule:
    """Full-length run schedule: a forced full first step followed by ``genome``."""
    return Schedule((GRID_STEPS,) + genome.tenths)


class FitnessEvaluator:
    """Mean MSE over prompts between the full-compute output and a genome's output.

    Results are memoised by genome. Reference outputs are computed once per
    prompt seed at construction.
    """

    def __init__(self, model: ToyModel, prompt_seeds, noise: NoiseSchedule | None = None,
                 selection: SelectionConfig | None = None, mode: RunMode | str = RunMode.ASTRAEA):
        self.model = model
        self.prompt_seeds = tuple(prompt_seeds)
        self.noise = NoiseSchedule.cosine(model.cfg.timesteps) if noise is None else noise
        self.selection = SelectionConfig() if selection is None else selection
        self.mode = RunMode.parse(mode)
        full = Schedule((GRID_STEPS,) * model.cfg.timesteps)
        self.references = {
            p: run_inference(model, full, RunMode.FULL, self.noise, prompt_seed=p,
                             selection=self.selection)[0]
            for p in self.prompt_seeds
        }
        self.cache: dict[tuple[int, ...], float] = {}

    def per_prompt(self, genome: Schedule) -> list[float]:
        sched = with_warmup(genome)
        out = []
        for p in self.prompt_seeds:
            x0, _ = run_inference(self.model, sched, self.mode, self.noise, prompt_seed=p,
                                  selection=self.selection)
            out.append(compute_mse(self.references[p], x0))
        return out

    def compute(self, genome: Schedule) -> float:
        return float(np.mean(self.per_prompt(genome)))

    def __call__(self, genome: Schedule) -> float:
        key = genome.tenths
        if key not in self.cache:
            self.cache[key] = self.compute(genome)
        return self.cache[key]

    def evaluate(self, candidates: list[Candidate], jobs: int = 1) -> None:
        todo: list[Schedule] = []
        for c in candidates:
            if c.key not in self.cache and c.schedule not in todo:
                todo.append(c.schedule)
        if jobs > 1 and len(todo) > 1:
            with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker,
                                     initargs=(self,)) as pool:
                values = list(pool.map(_worker_fitness, todo, chunksize=max(1, len(todo) // (4 * jobs))))
            for s, v in zip(todo, values):
                self.cache[s.tenths] = v
        for c in candidates:
            c.fitness = self(c.schedule)


_worker_evaluator: FitnessEvaluator | None = None


def _init_worker(evaluator: FitnessEvaluator) -> None:
    global _worker_evaluator
    _worker_evaluator = evaluator


def _worker_fitness(genome: Schedule) -> float:
    return _worker_evaluator.compute(genome)


def evaluate_fitness(candidate: Candidate, evaluator: FitnessEvaluator) -> float:
    candidate.fitness = evaluator(candidate.schedule)
    return candidate.fitness


def _rank(cands: list[Candidate]) -> list[Candidate]:
    return sorted(cands, key=lambda c: (c.fitness, c.key))


def _record(generation: int, population: list[Candidate], evals: int) -> GenerationRecord:
    ranked = _rank(population)
    return GenerationRecord(
        generation=generation,
        best_mse=ranked[0].fitness,
        mean_mse=float(np.mean([c.fitness for c in population])),
        evals=evals,
        best_schedule=ranked[0].schedule,
    )


def run_search(cfg: SearchConfig, model: ToyModel | None = None,
               evaluator: FitnessEvaluator | None = None, jobs: int = 1,
               noise: NoiseSchedule | None = None,
               selection: SelectionConfig | None = None) -> SearchResult:
    """Elitist evolutionary search. History row ``g`` describes the population after ``g`` generations."""
    if evaluator is None:
        if model is None:
            raise ConfigError("run_search needs a model or an evaluator")
        evaluator = FitnessEvaluator(model, cfg.prompt_seeds, noise, selection)
    n_steps = evaluator.model.cfg.timesteps - 1
    if n_steps < 1:
        raise ConfigError("search needs at least two timesteps")
    band = budget_band(cfg.budget, n_steps)
    rng = Rng(cfg.seed)

    population = init_population(cfg, n_steps, rng)
    evaluator.evaluate(population, jobs)
    history = [_record(0, population, len(evaluator.cache))]
    log.info("gen 0 best=%.6g", history[-1].best_mse)

    for g in range(cfg.max_generations):
        ranked = _rank(population)
        elite, others = ranked[: cfg.elite_count], ranked[cfg.elite_count:]
        p_mut = mutation_probability(g, cfg.max_generations, cfg.p0, cfg.p_final)
        seen = {c.key for c in population}
        offspring: list[Candidate] = []
        attempts = 0
        while len(offspring) < cfg.offspring_per_gen and attempts < 100 * cfg.offspring_per_gen:
            attempts += 1
            i = rng.choice(len(elite))
            if len(elite) > 1:
                j = rng.choice(len(elite) - 1)
                j = j + 1 if j >= i else j
            else:
                j = i
            child = crossover(elite[i].schedule, elite[j].schedule, rng)
            child = repair(mutate(child, p_mut, rng), band, rng)
            if child.tenths not in seen:
                seen.add(child.tenths)
                offspring.append(Candidate(child))
        evaluator.evaluate(offspring, jobs)
        rest = _rank(offspring + others)[: cfg.population_size - len(elite)]
        population = elite + rest
        history.append(_record(g + 1, population, len(evaluator.cache)))
        log.info("gen %d best=%.6g mean=%.6g evals=%d", g + 1, history[-1].best_mse,
                 history[-1].mean_mse, history[-1].evals)

    best = _rank(population)[0]
    return SearchResult(best=Candidate(best.schedule, best.fitness), history=history)


def default_budget(model_cfg: ModelConfig, fraction: float = 0.5) -> float:
    return fraction * (model_cfg.timesteps - 1)
