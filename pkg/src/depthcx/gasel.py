"""Size-limited genetic algorithm over feature subsets.

Genomes are sorted tuples of selected column indices: the sparse form of
the length-d bit vector, which matters when d runs into the hundreds of
thousands. All random choices come from one ``random.Random`` stream per
run, so a run is reproducible from its seed alone.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .dataset import Dataset
from .models import FitnessEvaluator, FitnessHarness

SubsetGenome = tuple  # strictly increasing feature indices, 1 <= len <= size_limit


@dataclass(frozen=True)
class GaConfig:
    population_size: int = 500
    generations: int = 50
    mutation_rate: float = 0.2
    crossover_rate: float = 0.8
    tournament_size: int = 6
    size_limit: int = 10
    seed: int = 0
    elitism_count: int = 1

    def __post_init__(self):
        if not (self.population_size >= self.tournament_size >= 1):
            raise ValueError("need population_size >= tournament_size >= 1")
        if self.generations < 1:
            raise ValueError("generations must be >= 1")
        if self.size_limit < 1:
            raise ValueError("size_limit must be >= 1")
        for name in ("mutation_rate", "crossover_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if not 0 <= self.elitism_count <= self.population_size:
            raise ValueError("elitism_count must lie in [0, population_size]")


@dataclass
class GaRunResult:
    best_genome: SubsetGenome
    best_fitness: float
    fitness_trace: list[float]
    evaluations: int
    seed: int = 0
    populations: list[list[SubsetGenome]] = field(default_factory=list, repr=False)

    def to_json(self, feature_names: Sequence[str]) -> str:
        return json.dumps({
            "best_features": [feature_names[i] for i in self.best_genome],
            "best_fitness": self.best_fitness,
            "trace": self.fitness_trace,
            "evaluations": self.evaluations,
            "seed": self.seed,
        })


def make_genome(indices, d: int, size_limit: int) -> SubsetGenome:
    """Validate and normalise an index collection into a genome."""
    g = tuple(sorted(int(i) for i in indices))
    if len(set(g)) != len(g):
        raise ValueError(f"duplicate indices in {g}")
    if not 1 <= len(g) <= size_limit:
        raise ValueError(f"genome size {len(g)} outside 1..{size_limit}")
    if g[0] < 0 or g[-1] >= d:
        raise ValueError(f"indices out of range 0..{d - 1}")
    return g


def _rank_key(genome: SubsetGenome, fitness: float):
    # smaller key is better: fitter, then smaller, then lexicographically first
    return (-fitness, len(genome), genome)


def initialize_population(d: int, config: GaConfig, rng: random.Random) -> list[SubsetGenome]:
    top = min(config.size_limit, d)
    pop = []
    for _ in range(config.population_size):
        k = rng.randint(1, top)
        pop.append(tuple(sorted(rng.sample(range(d), k))))
    return pop


def tournament_select(population: Sequence[SubsetGenome], fitnesses: Sequence[float],
                      config: GaConfig, rng: random.Random) -> SubsetGenome:
    picks = rng.sample(range(len(population)), config.tournament_size)
    best = min(picks, key=lambda i: _rank_key(population[i], fitnesses[i]))
    return population[best]


def repair_size_limit(genome, size_limit: int, rng: random.Random, d: int | None = None,
                      pool: Sequence[int] | None = None) -> SubsetGenome:
    """Drop random indices above ``size_limit``; refill an empty genome.

    An empty genome gets one index drawn from ``pool`` when given, otherwise
    from ``range(d)``.
    """
    g = sorted(genome)
    while len(g) > size_limit:
        g.pop(rng.randrange(len(g)))
    if not g:
        if pool:
            g = [rng.choice(sorted(pool))]
        elif d:
            g = [rng.randrange(d)]
        else:
            raise ValueError("cannot repair an empty genome without d or a pool")
    return tuple(g)


def crossover(a: SubsetGenome, b: SubsetGenome, rng: random.Random, size_limit: int,
              d: int | None = None) -> tuple[SubsetGenome, SubsetGenome]:
    """Uniform crossover on the bit-vector view of two index sets."""
    sa, sb = set(a), set(b)
    shared = sa & sb
    c1, c2 = set(shared), set(shared)
    for i in sorted(sa ^ sb):
        (c1 if rng.random() < 0.5 else c2).add(i)
    pool = sa | sb
    return (repair_size_limit(c1, size_limit, rng, d, pool),
            repair_size_limit(c2, size_limit, rng, d, pool))


def mutate(genome: SubsetGenome, d: int, config: GaConfig, rng: random.Random) -> SubsetGenome:
    """With probability ``mutation_rate`` flip one uniformly chosen bit."""
    if rng.random() >= config.mutation_rate:
        return genome
    pos = rng.randrange(d)
    g = set(genome)
    if pos in g:
        if len(g) > 1:
            g.remove(pos)
        elif d > 1:
            # removal would empty the genome: redraw as an addition
            pos = rng.randrange(d - 1)
            if pos >= genome[0]:
                pos += 1
            g.add(pos)
    else:
        g.add(pos)
    return repair_size_limit(g, config.size_limit, rng, d)


def run_ga(data: Dataset, visible_idx: Sequence[int], config: GaConfig,
           harness: FitnessHarness, fitness: Callable[[SubsetGenome], float] | None = None,
           memoize: bool = True, keep_populations: bool = False,
           holdout: tuple[Sequence[int], Sequence[int]] | None = None) -> GaRunResult:
    """Generational GA: evaluate, keep elites, then tournament/crossover/mutation.

    ``fitness`` overrides the CV evaluator (used by tests). The best genome
    ever seen is returned.
    """
    d = data.d
    rng = random.Random(config.seed)
    if fitness is None:
        fitness = FitnessEvaluator(data, visible_idx, harness, holdout=holdout)
    cache: dict[SubsetGenome, float] = {}
    evaluations = 0

    def score(g):
        nonlocal evaluations
        if memoize and g in cache:
            return cache[g]
        evaluations += 1
        v = fitness(g)
        cache[g] = v
        return v

    population = initialize_population(d, config, rng)
    best_g, best_f = None, -1.0
    trace: list[float] = []
    history: list[list[SubsetGenome]] = []
    for gen in range(config.generations):
        for g in population:
            assert 1 <= len(g) <= config.size_limit
        if keep_populations:
            history.append(list(population))
        fits = [score(g) for g in population]
        ranked = sorted(range(len(population)), key=lambda i: _rank_key(population[i], fits[i]))
        top = ranked[0]
        if best_g is None or _rank_key(population[top], fits[top]) < _rank_key(best_g, best_f):
            best_g, best_f = population[top], fits[top]
        trace.append(fits[top])
        if gen == config.generations - 1:
            break
        nxt = [population[i] for i in ranked[: config.elitism_count]]
        while len(nxt) < config.population_size:
            p1 = tournament_select(population, fits, config, rng)
            p2 = tournament_select(population, fits, config, rng)
            if rng.random() < config.crossover_rate:
                c1, c2 = crossover(p1, p2, rng, config.size_limit, d)
            else:
                c1, c2 = p1, p2
            nxt.append(mutate(c1, d, config, rng))
            if len(nxt) < config.population_size:
                nxt.append(mutate(c2, d, config, rng))
        population = nxt
    return GaRunResult(best_g, best_f, trace, evaluations, config.seed, history)
