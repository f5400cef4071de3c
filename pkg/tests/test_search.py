import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from astraea.diffusion import Schedule
from astraea.errors import ConfigError, DomainError
from astraea.numerics import Rng
from astraea.search import (
    Candidate,
    FitnessEvaluator,
    SearchConfig,
    budget_band,
    crossover,
    evaluate_fitness,
    in_band,
    init_population,
    mutate,
    mutation_probability,
    repair,
    run_search,
    with_warmup,
)


class CoinA:
    """Stand-in generator whose every coin favours parent ``a``."""

    def uniform(self, lo=0.0, hi=1.0):
        return lo

    def uniform_array(self, n, lo=0.0, hi=1.0):
        return np.full(n, lo)

    def choice(self, n):
        return 0


def test_budget_band_hand_value():
    assert budget_band(5.0, 10) == (45, 55)
    assert budget_band(9.5, 19) == (86, 104)
    for bad in (0.0, -1.0, 11.0):
        with pytest.raises(ConfigError):
            budget_band(bad, 10)


def test_budget_band_too_narrow():
    with pytest.raises(ConfigError):
        budget_band(0.05, 3)


def test_init_population_valid_and_seeded():
    cfg = SearchConfig(population_size=20, budget=5.0)
    pop = init_population(cfg, 10, Rng(1))
    assert len(pop) == 20 and len({c.key for c in pop}) == 20
    assert all(in_band(c.schedule, (45, 55)) for c in pop)
    assert [c.key for c in pop] == [c.key for c in init_population(cfg, 10, Rng(1))]
    single = init_population(SearchConfig(population_size=1, elite_count=1, budget=5.0), 10, Rng(2))
    assert len(single) == 1 and in_band(single[0].schedule, (45, 55))


def test_init_population_infeasible_budget():
    with pytest.raises(ConfigError):
        init_population(SearchConfig(budget=12.0), 10, Rng(0))


@pytest.mark.parametrize("method", ["uniform", "block", None])
def test_crossover_identical_parents(method):
    a = Schedule((1, 5, 9, 0, 3))
    assert crossover(a, a, Rng(3), method) == a


def test_crossover_forced_coin_returns_parent_a():
    a, b = Schedule((1, 2, 3, 4)), Schedule((9, 8, 7, 6))
    assert crossover(a, b, CoinA(), "uniform") == a
    assert crossover(a, b, CoinA()) == a


def test_crossover_block_window():
    a, b = Schedule(tuple(range(10))), Schedule((10,) * 10)
    child = crossover(a, b, Rng(0), "block", (3, 6))
    assert child.tenths == (10, 10, 10, 3, 4, 5, 10, 10, 10, 10)
    with pytest.raises(DomainError):
        crossover(a, b, Rng(0), "block", (6, 3))
    with pytest.raises(DomainError):
        crossover(a, Schedule((1,)), Rng(0))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32), st.lists(st.integers(0, 10), min_size=1, max_size=15))
def test_crossover_genes_come_from_parents(seed, genes):
    a = Schedule(tuple(genes))
    b = Schedule(tuple(10 - g for g in genes))
    child = crossover(a, b, Rng(seed))
    assert all(c in (x, y) for c, x, y in zip(child.tenths, a.tenths, b.tenths))


@pytest.mark.parametrize("g, expected", [(0, 0.1), (30, 0.01), (15, 0.055)])
def test_mutation_probability_points(g, expected):
    assert math.isclose(mutation_probability(g, 30, 0.1, 0.01), expected, rel_tol=1e-12)


def test_mutation_probability_edge_cases():
    assert mutation_probability(0, 0, 0.1, 0.01) == 0.1
    with pytest.raises(DomainError):
        mutation_probability(31, 30, 0.1, 0.01)


def test_mutate_extremes():
    s = Schedule((0, 3, 10, 7, 5))
    assert mutate(s, 0.0, Rng(1)) == s
    forced = mutate(s, 1.0, Rng(1))
    assert all(x != y for x, y in zip(s.tenths, forced.tenths))


def test_mutation_redraw_is_uniform_over_other_values():
    r = Rng(8)
    counts = np.zeros(11)
    for _ in range(5500):
        counts[mutate(Schedule((4,)), 1.0, r).tenths[0]] += 1
    assert counts[4] == 0
    others = np.delete(counts, 4)
    assert np.all(np.abs(others / 5500 - 0.1) < 0.02)


def test_mutation_rate_monte_carlo():
    r = Rng(9)
    s = Schedule((5,) * 10)
    changed = np.zeros(10)
    for _ in range(10_000):
        changed += np.array(mutate(s, 0.1, r).tenths) != 5
    assert np.all(np.abs(changed / 10_000 - 0.1) <= 0.02)


def test_repair_examples():
    band = budget_band(5.0, 10)
    fixed = repair(Schedule((6,) * 10), band, Rng(0))
    assert 45 <= fixed.total_tenths <= 55
    inside = Schedule((5, 5, 5, 5, 5, 5, 5, 5, 6, 6))
    assert inside.total_tenths == 52
    assert repair(inside, band, Rng(0)) == inside


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32), st.lists(st.integers(0, 10), min_size=2, max_size=25), st.floats(0.05, 1.0))
def test_repair_property(seed, genes, frac):
    n = len(genes)
    try:
        band = budget_band(frac * n, n)
    except ConfigError:
        return
    out = repair(Schedule(tuple(genes)), band, Rng(seed))
    assert in_band(out, band)
    assert all(0 <= v <= 10 for v in out.tenths) and len(out) == n


def test_search_config_validation():
    with pytest.raises(ConfigError):
        SearchConfig(elite_count=60)
    with pytest.raises(ConfigError):
        SearchConfig(p0=0.01, p_final=0.1)
    with pytest.raises(ConfigError):
        SearchConfig(prompt_seeds=())


def test_with_warmup():
    assert with_warmup(Schedule((3, 4))).tenths == (10, 3, 4)


@pytest.fixture(scope="module")
def evaluator(small_model):
    return FitnessEvaluator(small_model, (0, 1, 2, 3))


def test_full_genome_has_zero_fitness(evaluator):
    assert evaluate_fitness(Candidate(Schedule((10,) * 7)), evaluator) <= 1e-20


def test_fitness_is_mean_of_prompts(evaluator, small_model):
    g = Schedule((3, 5, 2, 8, 1, 6, 4))
    singles = [FitnessEvaluator(small_model, (p,))(g) for p in (0, 1, 2, 3)]
    assert math.isclose(evaluator(g), sum(singles) / 4, rel_tol=1e-12)
    assert evaluator.per_prompt(g) == singles


def test_fitness_cache_and_parallel_agree(evaluator, small_model):
    genomes = [Candidate(Schedule((v, 5, 5, 5, 5, 5, 10 - v))) for v in range(4)]
    fresh = FitnessEvaluator(small_model, (0, 1, 2, 3))
    fresh.evaluate(genomes, jobs=2)
    serial = [evaluator(c.schedule) for c in genomes]
    assert [c.fitness for c in genomes] == serial


def test_search_degenerate_generations(evaluator):
    cfg = SearchConfig(population_size=6, elite_count=2, offspring_per_gen=4, max_generations=0, budget=3.5)
    res = run_search(cfg, evaluator=evaluator)
    assert len(res.history) == 1
    assert res.best.fitness == res.history[0].best_mse


def test_search_is_elitist_and_reproducible(evaluator):
    cfg = SearchConfig(population_size=8, elite_count=2, offspring_per_gen=6, max_generations=4, budget=3.5, seed=5)
    a = run_search(cfg, evaluator=evaluator)
    b = run_search(cfg, evaluator=evaluator)
    best = [h.best_mse for h in a.history]
    assert all(x >= y for x, y in zip(best, best[1:]))
    assert [h.best_schedule for h in a.history] == [h.best_schedule for h in b.history]
    assert in_band(a.best.schedule, budget_band(3.5, 7))
    assert a.best.fitness == best[-1]


def test_search_needs_model_or_evaluator():
    with pytest.raises(ConfigError):
        run_search(SearchConfig())
