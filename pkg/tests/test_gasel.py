import itertools
import json
import random
from collections import Counter
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from depthcx.gasel import (GaConfig, crossover, initialize_population, make_genome, mutate,
                           repair_size_limit, run_ga, tournament_select)
from depthcx.models import FitnessEvaluator, FitnessHarness


def test_config_validation():
    with pytest.raises(ValueError):
        GaConfig(population_size=3, tournament_size=6)
    with pytest.raises(ValueError):
        GaConfig(mutation_rate=1.5)
    with pytest.raises(ValueError):
        GaConfig(size_limit=0)
    with pytest.raises(ValueError):
        GaConfig(generations=0)


def test_make_genome():
    assert make_genome([3, 1], 5, 2) == (1, 3)
    for bad in ([], [1, 1], [0, 1, 2], [7]):
        with pytest.raises(ValueError):
            make_genome(bad, 5, 2)


def test_init_singletons_and_cap():
    rng = random.Random(0)
    assert all(len(g) == 1 for g in initialize_population(20, GaConfig(size_limit=1), rng))
    pop = initialize_population(3, GaConfig(size_limit=10), rng)
    assert {len(g) for g in pop} <= {1, 2, 3}
    assert all(list(g) == sorted(set(g)) for g in pop)


def test_init_size_distribution_uniform():
    cfg = GaConfig(population_size=10_000, size_limit=5)
    pop = initialize_population(50, cfg, random.Random(1))
    counts = Counter(len(g) for g in pop)
    assert chisquare([counts[k] for k in range(1, 6)]).pvalue > 0.01


def test_tournament_full_returns_best():
    pop = [(i,) for i in range(10)]
    fits = [0.1 * i for i in range(10)]
    cfg = GaConfig(population_size=10, tournament_size=10)
    assert tournament_select(pop, fits, cfg, random.Random(0)) == (9,)


def test_tournament_tie_break_prefers_small_then_lexicographic():
    pop = [(0, 1), (2,), (1,)]
    cfg = GaConfig(population_size=3, tournament_size=3)
    assert tournament_select(pop, [0.5, 0.5, 0.5], cfg, random.Random(0)) == (1,)


def test_tournament_size_one_uniform():
    pop = [(i,) for i in range(5)]
    cfg = GaConfig(population_size=5, tournament_size=1)
    rng = random.Random(3)
    c = Counter(tournament_select(pop, [0.0, 1, 2, 3, 4], cfg, rng) for _ in range(5000))
    assert chisquare([c[g] for g in pop]).pvalue > 0.01


def test_tournament_frequency_matches_hypergeometric():
    pop = [(i,) for i in range(50)]
    fits = [0.9] + [0.5] * 49
    cfg = GaConfig(population_size=50, tournament_size=6)
    rng = random.Random(7)
    hits = sum(tournament_select(pop, fits, cfg, rng) == (0,) for _ in range(10_000))
    expected = 1 - comb(49, 6) / comb(50, 6)
    assert abs(hits / 10_000 - expected) <= 0.02


def test_crossover_identical_parents():
    assert crossover((1, 4), (1, 4), random.Random(0), 5, 10) == ((1, 4), (1, 4))


def test_crossover_disjoint_singletons_enumeration():
    seen = set()
    for s in range(400):
        c1, c2 = crossover((0,), (1,), random.Random(s), 5, 10)
        seen.add((c1, c2))
        assert set(c1) | set(c2) <= {0, 1}
    assert seen == {((0,), (1,)), ((1,), (0,)), ((0, 1), (0,)), ((0, 1), (1,)),
                    ((0,), (0, 1)), ((1,), (0, 1))}


def test_crossover_children_within_parent_union():
    rng = random.Random(9)
    for _ in range(1000):
        a = tuple(sorted(rng.sample(range(30), rng.randint(1, 6))))
        b = tuple(sorted(rng.sample(range(30), rng.randint(1, 6))))
        c1, c2 = crossover(a, b, rng, 4, 30)
        assert set(c1) | set(c2) <= set(a) | set(b)
        assert set(a) & set(b) <= set(c1) | set(c2) or max(len(c1), len(c2)) == 4
        assert 1 <= len(c1) <= 4 and 1 <= len(c2) <= 4


def test_mutation_rate_zero_identity():
    cfg = GaConfig(mutation_rate=0.0)
    assert all(mutate((2, 5), 10, cfg, random.Random(s)) == (2, 5) for s in range(100))


def test_mutation_change_fraction():
    cfg = GaConfig(mutation_rate=0.2, size_limit=10)
    rng = random.Random(4)
    changed = sum(mutate((2, 5, 7), 40, cfg, rng) != (2, 5, 7) for _ in range(10_000))
    assert abs(changed / 10_000 - 0.2) <= 0.02


def test_mutation_respects_limit_and_never_empties():
    cfg = GaConfig(mutation_rate=1.0, size_limit=3)
    rng = random.Random(2)
    for _ in range(2000):
        g = mutate((1, 2, 3), 6, cfg, rng)
        assert 1 <= len(g) <= 3
        assert len(mutate((4,), 6, cfg, rng)) >= 1


def test_repair_examples():
    rng = random.Random(0)
    assert repair_size_limit((1, 3), 3, rng, 10) == (1, 3)
    g = repair_size_limit(tuple(range(7)), 3, rng, 10)
    assert len(g) == 3 and set(g) <= set(range(7))
    g = repair_size_limit((), 3, rng, 10)
    assert len(g) == 1 and 0 <= g[0] < 10


@settings(max_examples=200, deadline=None)
@given(st.sets(st.integers(0, 49), max_size=20), st.integers(1, 10), st.integers(0, 10**6))
def test_repair_always_feasible(sel, limit, seed):
    g = repair_size_limit(sel, limit, random.Random(seed), 50)
    assert 1 <= len(g) <= limit
    assert list(g) == sorted(set(g))
    if sel:
        assert set(g) <= sel


def _table_fitness(d, rng):
    """Random fitness over subsets that is cheap and deterministic."""
    w = rng.uniform(size=d)
    pair = rng.uniform(size=(d, d))

    def f(g):
        s = sum(w[i] for i in g) + sum(pair[i, j] for i, j in itertools.combinations(g, 2))
        return float(s / (1 + len(g) ** 2))
    return f


class _Data:
    def __init__(self, d):
        self.d = d


def test_run_ga_trace_monotone_and_deterministic():
    f = _table_fitness(15, np.random.default_rng(0))
    cfg = GaConfig(population_size=40, generations=25, size_limit=4, seed=5)
    a = run_ga(_Data(15), [], cfg, None, fitness=f, keep_populations=True)
    b = run_ga(_Data(15), [], cfg, None, fitness=f)
    assert a.best_genome == b.best_genome and a.fitness_trace == b.fitness_trace
    assert all(x <= y for x, y in zip(a.fitness_trace, a.fitness_trace[1:]))
    assert len(a.fitness_trace) == 25
    assert all(1 <= len(g) <= 4 for pop in a.populations for g in pop)
    assert a.best_fitness == max(a.fitness_trace)


def test_memoization_transparent():
    f = _table_fitness(12, np.random.default_rng(1))
    cfg = GaConfig(population_size=30, generations=15, size_limit=3, seed=2)
    a = run_ga(_Data(12), [], cfg, None, fitness=f, memoize=True)
    b = run_ga(_Data(12), [], cfg, None, fitness=f, memoize=False)
    assert (a.best_genome, a.best_fitness, a.fitness_trace) == (b.best_genome, b.best_fitness,
                                                                b.fitness_trace)
    assert a.evaluations < b.evaluations


def test_leakage_attractor(leakage_data):
    cfg = GaConfig(population_size=30, generations=10, size_limit=1, seed=1)
    res = run_ga(leakage_data, range(leakage_data.n), cfg, FitnessHarness("nonlinear"))
    assert res.best_genome == (4,) and res.best_fitness == 1.0
    out = json.loads(res.to_json(leakage_data.feature_names))
    assert out["best_features"] == ["f4"] and out["seed"] == 1


def _exhaustive(f, d, limit):
    return max(f(g) for k in range(1, limit + 1) for g in itertools.combinations(range(d), k))


def test_ga_matches_exhaustive_on_small_d():
    hits = 0
    for s in range(20):
        f = _table_fitness(8, np.random.default_rng(100 + s))
        res = run_ga(_Data(8), [], GaConfig(population_size=100, generations=30, size_limit=2,
                                            seed=s), None, fitness=f)
        hits += abs(res.best_fitness - _exhaustive(f, 8, 2)) <= 0.01
    assert hits >= 18


def test_exhaustive_optimum_monotone_in_size_limit(xor_data):
    ev = FitnessEvaluator(xor_data, range(xor_data.n), FitnessHarness("nonlinear"))
    cache = {}

    def f(g):
        if g not in cache:
            cache[g] = ev(g)
        return cache[g]
    best = [_exhaustive(f, xor_data.d, s) for s in (1, 2, 3)]
    assert best[0] <= best[1] <= best[2]


def test_xor_pair_recovered(xor_data):
    found = 0
    for s in range(20):
        cfg = GaConfig(population_size=60, generations=15, size_limit=2, seed=s)
        res = run_ga(xor_data, range(xor_data.n), cfg, FitnessHarness("nonlinear", seed=s))
        found += res.best_genome == (3, 8)
    assert found >= 16
