"""Case/control genotype simulation with purely epistatic penetrance models.

Genotypes count copies of the minor allele (0/1/2) under Hardy-Weinberg
proportions. A penetrance table maps each multi-locus genotype to a disease
probability; pure epistatic tables have every single-locus marginal equal to
the prevalence, so no locus shows a main effect on its own.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import Dataset, save_dataset


class SimulationError(ValueError):
    pass


def hw_probs(maf: float) -> np.ndarray:
    """Hardy-Weinberg genotype probabilities for 0, 1, 2 minor alleles."""
    q = float(maf)
    return np.array([(1 - q) ** 2, 2 * q * (1 - q), q * q])


def _joint_probs(mafs: Sequence[float]) -> np.ndarray:
    P = np.ones(())
    for q in mafs:
        P = np.multiply.outer(P, hw_probs(q))
    return P


@dataclass(frozen=True, eq=False)
class PenetranceModel:
    order: int
    maf: tuple[float, ...]
    table: np.ndarray

    def __post_init__(self):
        t = np.array(self.table, dtype=np.float64)
        if self.order not in (2, 3):
            raise SimulationError(f"order must be 2 or 3, got {self.order}")
        if len(self.maf) != self.order:
            raise SimulationError("need one MAF per locus")
        if any(not 0 < q <= 0.5 for q in self.maf):
            raise SimulationError(f"MAFs must lie in (0, 0.5], got {self.maf}")
        if t.shape != (3,) * self.order:
            raise SimulationError(f"table shape {t.shape} != {(3,) * self.order}")
        if np.any(t < 0) or np.any(t > 1):
            raise SimulationError("penetrances must lie in [0, 1]")
        t.setflags(write=False)
        object.__setattr__(self, "maf", tuple(float(q) for q in self.maf))
        object.__setattr__(self, "table", t)

    @property
    def genotype_probs(self) -> np.ndarray:
        return _joint_probs(self.maf)

    @property
    def prevalence(self) -> float:
        return float(np.sum(self.genotype_probs * self.table))

    @property
    def heritability(self) -> float:
        return heritability(self.table, self.maf)

    def marginal_penetrances(self) -> np.ndarray:
        """``out[j, g]`` = P(case | locus j has genotype g)."""
        P = self.genotype_probs
        out = np.empty((self.order, 3))
        for j in range(self.order):
            axes = tuple(a for a in range(self.order) if a != j)
            num = np.sum(P * self.table, axis=axes)
            den = np.sum(P, axis=axes)
            out[j] = num / den
        return out

    def to_dict(self) -> dict:
        return {"order": self.order, "maf": list(self.maf), "table": self.table.ravel().tolist(),
                "prevalence": self.prevalence, "heritability": self.heritability}

    @classmethod
    def from_dict(cls, obj: dict) -> "PenetranceModel":
        k = obj["order"]
        return cls(k, tuple(obj["maf"]), np.array(obj["table"]).reshape((3,) * k))


def heritability(table: np.ndarray, mafs: Sequence[float]) -> float:
    """Var_g(penetrance) / (K (1 - K)) with K the population prevalence."""
    P = _joint_probs(mafs)
    K = float(np.sum(P * table))
    if K <= 0 or K >= 1:
        return 0.0
    var = float(np.sum(P * (table - K) ** 2))
    return var / (K * (1 - K))


def _center_all_axes(pattern: np.ndarray, mafs: Sequence[float]) -> np.ndarray:
    # removes every lower-order component under the product genotype measure
    out = pattern.copy()
    for j, q in enumerate(mafs):
        w = hw_probs(q)
        shape = [1] * out.ndim
        shape[j] = 3
        mean = np.sum(out * w.reshape(shape), axis=j, keepdims=True)
        out = out - mean
    return out


def _scale_to_heritability(pattern: np.ndarray, mafs, target: float, tol: float = 1e-12):
    """Bisection on amplitude a for table = K(a) + a * pattern.

    K(a) centres the table inside [0, 1]; the amplitude ceiling is where the
    extreme cells touch 0 and 1. Returns None when the target is unreachable.
    """
    hi_v, lo_v = float(pattern.max()), float(pattern.min())
    spread = hi_v - lo_v
    if spread <= 1e-12:
        return None

    def table_for(a):
        K = 0.5 - a * (hi_v + lo_v) / 2
        return np.clip(K + a * pattern, 0.0, 1.0)

    a_max = 1.0 / spread
    if heritability(table_for(a_max), mafs) < target:
        return None
    lo, hi = 0.0, a_max
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        h = heritability(table_for(mid), mafs)
        if abs(h - target) < tol:
            lo = hi = mid
            break
        if h < target:
            lo = mid
        else:
            hi = mid
    return table_for(0.5 * (lo + hi))


def make_xor_model(order: int, maf: Sequence[float], target_heritability: float,
                   method: str = "parity", seed: int = 0,
                   max_attempts: int = 10_000) -> PenetranceModel:
    """Pure epistatic penetrance model with a given heritability.

    ``method="parity"`` starts from the heterozygote-parity pattern (high
    penetrance where an odd number of loci are heterozygous), centred per
    locus so the marginals cancel for any MAF. ``method="random"`` draws
    random tables, strips their lower-order components and rescales, giving
    up after ``max_attempts`` draws.
    """
    maf = tuple(float(q) for q in maf)
    if order not in (2, 3) or len(maf) != order:
        raise SimulationError(f"need order 2 or 3 with one MAF per locus, got {order}, {maf}")
    if any(not 0 < q <= 0.5 for q in maf):
        raise SimulationError(f"MAFs must lie in (0, 0.5], got {maf}")
    if not 0 < target_heritability < 1:
        raise SimulationError(f"target heritability must lie in (0, 1), got {target_heritability}")

    if method == "parity":
        het_sign = np.array([1.0, -1.0, 1.0])
        pattern = np.ones(())
        for q in maf:
            s = het_sign - np.dot(hw_probs(q), het_sign)
            pattern = np.multiply.outer(pattern, s)
        pattern = -pattern
        table = _scale_to_heritability(pattern, maf, target_heritability)
        if table is None:
            raise SimulationError(
                f"heritability {target_heritability} unreachable for order {order}, maf {maf}: "
                "penetrance bounds hit")
        return PenetranceModel(order, maf, table)

    if method == "random":
        rng = np.random.default_rng(seed)
        for _ in range(max_attempts):
            raw = rng.random((3,) * order)
            pattern = _center_all_axes(raw, maf)
            table = _scale_to_heritability(pattern, maf, target_heritability)
            if table is not None:
                return PenetranceModel(order, maf, table)
        raise SimulationError(f"no balanced table reached heritability {target_heritability} "
                              f"in {max_attempts} attempts")
    raise SimulationError(f"unknown method {method!r}")


def is_pure_epistatic(model: PenetranceModel, tol: float = 1e-9) -> bool:
    return bool(np.all(np.abs(model.marginal_penetrances() - model.prevalence) <= tol))


@dataclass(frozen=True)
class GenSpec:
    models: tuple[PenetranceModel, ...]
    n_cases: int
    n_controls: int
    total_features: int
    irrelevant_maf_range: tuple[float, float] = (0.05, 0.5)
    seed: int = 0

    def __post_init__(self):
        models = tuple(self.models)
        object.__setattr__(self, "models", models)
        if not 1 <= len(models) <= 2:
            raise SimulationError("one or two models supported")
        if self.n_cases < 1 or self.n_controls < 1:
            raise SimulationError("case and control counts must be >= 1")
        if self.total_features < self.n_functional:
            raise SimulationError(f"total_features {self.total_features} < functional loci "
                                  f"{self.n_functional}")
        lo, hi = self.irrelevant_maf_range
        if not 0 < lo <= hi <= 0.5:
            raise SimulationError(f"bad irrelevant MAF range {self.irrelevant_maf_range}")

    @property
    def n_functional(self) -> int:
        return sum(m.order for m in self.models)

    def to_dict(self) -> dict:
        return {"models": [m.to_dict() for m in self.models], "n_cases": self.n_cases,
                "n_controls": self.n_controls, "total_features": self.total_features,
                "irrelevant_maf_range": list(self.irrelevant_maf_range), "seed": self.seed}

    @classmethod
    def from_dict(cls, obj: dict) -> "GenSpec":
        return cls(tuple(PenetranceModel.from_dict(m) for m in obj["models"]), obj["n_cases"],
                   obj["n_controls"], obj["total_features"], tuple(obj["irrelevant_maf_range"]),
                   obj["seed"])


@dataclass
class Simulation:
    dataset: Dataset
    spec: GenSpec
    functional_positions: dict[str, int]
    irrelevant_mafs: np.ndarray = field(repr=False)

    def manifest(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "achieved": [{"heritability": m.heritability, "prevalence": m.prevalence}
                         for m in self.spec.models],
            "functional_positions": self.functional_positions,
            "seed": self.spec.seed,
            "n": self.dataset.n,
            "d": self.dataset.d,
        }


def _draw_genotypes(mafs, n, rng) -> np.ndarray:
    return rng.binomial(2, np.asarray(mafs), size=(n, len(mafs))).astype(np.int8)


def _sample_class(model: PenetranceModel, cls: int, count: int, rng, budget_factor=10_000):
    """Rejection-sample ``count`` genotype rows whose Bernoulli label equals ``cls``."""
    out = np.empty((count, model.order), np.int8)
    got = 0
    drawn = 0
    budget = budget_factor * max(count, 1)
    rate = model.prevalence if cls == 1 else 1 - model.prevalence
    while got < count:
        if drawn >= budget:
            raise SimulationError(f"rejection budget exhausted after {drawn} draws "
                                  f"({got}/{count} {'cases' if cls else 'controls'})")
        need = count - got
        batch = int(min(max(64, 1.5 * need / max(rate, 1e-6)), 1_000_000))
        G = _draw_genotypes(model.maf, batch, rng)
        f = model.table[tuple(G.T)]
        lab = rng.random(batch) < f
        keep = G[lab == bool(cls)][:need]
        out[got: got + len(keep)] = keep
        got += len(keep)
        drawn += batch
    return out


def sample_unconstrained(model: PenetranceModel, n: int, seed: int):
    """Genotypes and Bernoulli labels without case/control quotas."""
    rng = np.random.default_rng(seed)
    G = _draw_genotypes(model.maf, n, rng)
    y = (rng.random(n) < model.table[tuple(G.T)]).astype(np.int8)
    return G, y


def simulate(spec: GenSpec) -> Simulation:
    """Generate a dataset; functional rows depend only on the models and seed."""
    f_ss, n_ss, p_ss = np.random.SeedSequence(spec.seed).spawn(3)
    frng = np.random.default_rng(f_ss)
    models = spec.models
    n = spec.n_cases + spec.n_controls
    blocks = []
    labels = []
    for cls, total in ((1, spec.n_cases), (0, spec.n_controls)):
        if len(models) == 1:
            counts = [total]
        else:
            c0 = int(frng.binomial(total, 0.5))
            counts = [c0, total - c0]
        for m_idx, cnt in enumerate(counts):
            if cnt == 0:
                continue
            rows = []
            for j, m in enumerate(models):
                if j == m_idx:
                    rows.append(_sample_class(m, cls, cnt, frng))
                else:
                    rows.append(_draw_genotypes(m.maf, cnt, frng))
            blocks.append(np.hstack(rows))
            labels.append(np.full(cnt, cls, np.int8))
    F = np.vstack(blocks)
    y = np.concatenate(labels)
    perm = frng.permutation(n)
    F, y = F[perm], y[perm]

    nrng = np.random.default_rng(n_ss)
    n_noise = spec.total_features - spec.n_functional
    lo, hi = spec.irrelevant_maf_range
    mafs = nrng.uniform(lo, hi, n_noise)
    N = nrng.binomial(2, mafs, size=(n, n_noise)).astype(np.int8) if n_noise else np.zeros((n, 0), np.int8)

    prng = np.random.default_rng(p_ss)
    positions = np.sort(prng.choice(spec.total_features, spec.n_functional, replace=False))
    X = np.empty((n, spec.total_features), np.float64)
    is_fn = np.zeros(spec.total_features, bool)
    is_fn[positions] = True
    X[:, positions] = F
    X[:, ~is_fn] = N
    fn_names = [f"M{mi}P{j}_fn" for mi, m in enumerate(models) for j in range(m.order)]
    names = [""] * spec.total_features
    for name, pos in zip(fn_names, positions):
        names[pos] = name
    noise_cols = np.flatnonzero(~is_fn)
    for i, pos in enumerate(noise_cols):
        names[pos] = f"N{i}"
    data = Dataset(X, y, names)
    return Simulation(data, spec, {nm: int(p) for nm, p in zip(fn_names, positions)}, mafs)


def generate(spec: GenSpec) -> Dataset:
    return simulate(spec).dataset


def write_simulation(sim: Simulation, path: str | Path) -> Path:
    """Write the dataset TSV and a sibling ``.manifest.json``; returns the manifest path."""
    path = Path(path)
    save_dataset(sim.dataset, path)
    mpath = path.with_suffix(".manifest.json")
    mpath.write_text(json.dumps(sim.manifest(), indent=2, sort_keys=True) + "\n")
    return mpath


PADDING_LEVELS = {"low": None, "normal": 20, "median": 100, "high": 1000}


def suite_models(heritability_value: float = 0.4) -> dict[str, tuple[PenetranceModel, ...]]:
    m2 = make_xor_model(2, (0.5, 0.5), heritability_value)
    m3 = make_xor_model(3, (0.5, 0.5, 0.5), heritability_value)
    return {"xor2": (m2,), "xor3": (m3,), "het": (m2, m2)}


def padding_suite(seed: int, n_cases: int = 800, n_controls: int = 800,
                heritability_value: float = 0.4,
                levels: dict[str, int | None] | None = None) -> dict[str, Simulation]:
    """Functional families crossed with padding levels (Low/Normal/Median/High).

    Variants of one family share the seed, hence identical functional
    genotypes; only the irrelevant padding differs.
    """
    levels = PADDING_LEVELS if levels is None else levels
    out = {}
    for fi, (family, models) in enumerate(suite_models(heritability_value).items()):
        n_fn = sum(m.order for m in models)
        for level, total in levels.items():
            spec = GenSpec(models, n_cases, n_controls, total or n_fn, seed=seed + fi)
            out[f"{family}_{level}"] = simulate(spec)
    return out


def write_suite(suite: dict[str, Simulation], out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = {}
    for name, sim in suite.items():
        fname = f"{name}.tsv"
        save_dataset(sim.dataset, out_dir / fname)
        entries[name] = {"file": fname, **sim.manifest()}
    mpath = out_dir / "suite_manifest.json"
    mpath.write_text(json.dumps(entries, indent=2, sort_keys=True) + "\n")
    return mpath


def genotype_combination_table(data: Dataset, cols: Sequence[int]) -> np.ndarray:
    """Contingency counts of label by joint genotype of ``cols`` (rows: 3^k cells)."""
    cells = list(itertools.product(range(3), repeat=len(cols)))
    index = {c: i for i, c in enumerate(cells)}
    tab = np.zeros((len(cells), 2), np.int64)
    G = data.features[:, list(cols)].astype(int)
    for row, lab in zip(map(tuple, G), data.labels):
        tab[index[row], lab] += 1
    return tab
