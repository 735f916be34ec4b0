import itertools
import json

import numpy as np
import pytest
from scipy.stats import chi2_contingency

from depthcx.dataset import Dataset, load_dataset
from depthcx.models import FitnessEvaluator, FitnessHarness
from depthcx.synthgen import (GenSpec, PenetranceModel, SimulationError, generate,
                              genotype_combination_table, hw_probs, is_pure_epistatic,
                              make_xor_model, padding_suite, sample_unconstrained, simulate,
                              write_simulation, write_suite)


def loop_heritability(table, mafs):
    """Cell-by-cell Var(penetrance) / (K (1 - K))."""
    cells = list(itertools.product(range(3), repeat=len(mafs)))
    probs = [np.prod([hw_probs(q)[g] for q, g in zip(mafs, c)]) for c in cells]
    K = sum(p * table[c] for p, c in zip(probs, cells))
    var = sum(p * (table[c] - K) ** 2 for p, c in zip(probs, cells))
    return var / (K * (1 - K))


@pytest.mark.parametrize("order,maf,h2", [
    (2, (0.5, 0.5), 0.4), (3, (0.5, 0.5, 0.5), 0.4), (2, (0.2, 0.4), 0.1),
    (3, (0.3, 0.2, 0.5), 0.05), (2, (0.5, 0.5), 0.9),
])
def test_parity_model_hits_target(order, maf, h2):
    m = make_xor_model(order, maf, h2)
    assert abs(loop_heritability(m.table, maf) - h2) <= 1e-3
    assert is_pure_epistatic(m, 1e-12)
    assert np.all((m.table >= 0) & (m.table <= 1))


def test_two_way_table_values():
    m = make_xor_model(2, (0.5, 0.5), 0.4)
    assert m.prevalence == pytest.approx(0.5, abs=1e-12)
    assert set(np.round(m.table.ravel(), 4)) == {0.1838, 0.8162}
    # odd heterozygote count carries the high penetrance
    assert m.table[1, 0] > m.table[0, 0] and m.table[1, 1] < m.table[1, 0]


def test_random_method_pure():
    m = make_xor_model(2, (0.3, 0.4), 0.05, method="random", seed=4)
    assert is_pure_epistatic(m, 1e-12)
    assert abs(m.heritability - 0.05) <= 1e-3


def test_unreachable_heritability():
    with pytest.raises(SimulationError, match="unreachable"):
        make_xor_model(2, (0.1, 0.1), 0.99)
    with pytest.raises(SimulationError):
        make_xor_model(2, (0.5, 0.5), 1.5)
    with pytest.raises(SimulationError):
        make_xor_model(4, (0.5,) * 4, 0.1)


def test_model_dict_round_trip():
    m = make_xor_model(3, (0.5, 0.4, 0.3), 0.2)
    back = PenetranceModel.from_dict(json.loads(json.dumps(m.to_dict())))
    assert np.array_equal(back.table, m.table) and back.maf == m.maf


def test_spec_validation():
    m = make_xor_model(2, (0.5, 0.5), 0.4)
    with pytest.raises(SimulationError):
        GenSpec((m,), 10, 10, 1)
    with pytest.raises(SimulationError):
        GenSpec((m,), 0, 10, 5)
    with pytest.raises(SimulationError):
        GenSpec((m,), 10, 10, 5, irrelevant_maf_range=(0.3, 0.6))


def test_rejection_budget_exhausted():
    t = np.zeros((3, 3))
    t[0, 0] = 1e-9
    m = PenetranceModel(2, (0.5, 0.5), t)
    with pytest.raises(SimulationError, match="budget"):
        generate(GenSpec((m,), 5, 5, 4))


def test_generate_shape_names_and_balance():
    m = make_xor_model(2, (0.5, 0.5), 0.4)
    sim = simulate(GenSpec((m,), 400, 400, 20, seed=7))
    d = sim.dataset
    assert (d.n, d.d) == (800, 20)
    assert d.class_counts() == (400, 400)
    fn = [n for n in d.feature_names if n.endswith("_fn")]
    assert fn == ["M0P0_fn", "M0P1_fn"]
    assert [d.feature_names[p] for p in sim.functional_positions.values()] == fn
    assert set(np.unique(d.features)) <= {0.0, 1.0, 2.0}


def test_noise_maf_matches_draw():
    m = make_xor_model(2, (0.5, 0.5), 0.4)
    sim = simulate(GenSpec((m,), 400, 400, 20, seed=1))
    noise = [i for i, n in enumerate(sim.dataset.feature_names) if n.startswith("N")]
    emp = sim.dataset.features[:, noise].mean(0) / 2
    assert np.all(np.abs(emp - sim.irrelevant_mafs) <= 0.05)


def test_hardy_weinberg_frequencies():
    m = make_xor_model(2, (0.5, 0.5), 0.4)
    sim = simulate(GenSpec((m,), 5000, 5000, 12, irrelevant_maf_range=(0.2, 0.5), seed=2))
    X = sim.dataset.features
    for i, n in enumerate(sim.dataset.feature_names):
        if not n.startswith("N"):
            continue
        q = sim.irrelevant_mafs[int(n[1:])]
        p = hw_probs(q)
        for g in range(3):
            f = np.mean(X[:, i] == g)
            assert abs(f - p[g]) <= 3 * np.sqrt(p[g] * (1 - p[g]) / len(X))


def test_prevalence_unconstrained():
    for m in (make_xor_model(2, (0.3, 0.2), 0.1), make_xor_model(3, (0.5,) * 3, 0.4)):
        _, y = sample_unconstrained(m, 20_000, 3)
        assert abs(y.mean() - m.prevalence) <= 0.02


def test_single_locus_null_pair_significant():
    m = make_xor_model(2, (0.5, 0.5), 0.4)
    sim = simulate(GenSpec((m,), 1000, 1000, 10, seed=5))
    d = sim.dataset
    cols = list(sim.functional_positions.values())
    for c in cols:
        assert chi2_contingency(genotype_combination_table(d, [c]))[1] > 0.01
    assert chi2_contingency(genotype_combination_table(d, cols))[1] < 1e-6


def test_deterministic_bytes(tmp_path):
    m = make_xor_model(2, (0.5, 0.5), 0.4)
    spec = GenSpec((m,), 100, 100, 20, seed=9)
    write_simulation(simulate(spec), tmp_path / "a.tsv")
    write_simulation(simulate(spec), tmp_path / "b.tsv")
    assert (tmp_path / "a.tsv").read_bytes() == (tmp_path / "b.tsv").read_bytes()
    assert (tmp_path / "a.manifest.json").read_bytes() == (tmp_path / "b.manifest.json").read_bytes()
    man = json.loads((tmp_path / "a.manifest.json").read_text())
    assert GenSpec.from_dict(man["spec"]).seed == 9
    assert isinstance(load_dataset(tmp_path / "a.tsv"), Dataset)


def test_suite_shares_functional_rows(tmp_path):
    levels = {"low": None, "normal": 20, "high": 60}
    suite = padding_suite(3, 60, 60, levels=levels)
    assert set(suite) == {f"{f}_{lv}" for f in ("xor2", "xor3", "het") for lv in levels}
    for fam in ("xor2", "xor3", "het"):
        sims = [suite[f"{fam}_{lv}"] for lv in levels]
        assert [s.dataset.d for s in sims] == [sims[0].spec.n_functional, 20, 60]
        fn = [s.dataset.features[:, list(s.functional_positions.values())] for s in sims]
        assert all(np.array_equal(fn[0], f) for f in fn[1:])
        assert all(s.spec.models == sims[0].spec.models for s in sims)
        assert all(np.array_equal(s.dataset.labels, sims[0].dataset.labels) for s in sims)
    man = json.loads(write_suite(suite, tmp_path).read_text())
    assert man["xor2_high"]["spec"]["total_features"] == 60


def _exhaustive_best(ev, d, k):
    return max((ev(g), g) for g in itertools.combinations(range(d), k))


def test_heterogeneous_needs_four_loci():
    m = make_xor_model(2, (0.5, 0.5), 0.4)
    sim = simulate(GenSpec((m, m), 600, 600, 8, seed=4))
    d = sim.dataset
    ev = FitnessEvaluator(d, range(d.n), FitnessHarness("nonlinear"))
    best = {k: _exhaustive_best(ev, d.d, k) for k in (2, 3, 4)}
    assert best[4][1] == tuple(sorted(sim.functional_positions.values()))
    assert best[4][0] > best[3][0] > best[2][0]


def test_label_permutation_destroys_signal():
    m = make_xor_model(2, (0.5, 0.5), 0.4)
    d = generate(GenSpec((m,), 400, 400, 20, seed=6))
    y = np.random.default_rng(0).permutation(d.labels)
    shuffled = Dataset(d.features, y, d.feature_names)
    ev = FitnessEvaluator(shuffled, range(d.n), FitnessHarness("nonlinear"))
    assert _exhaustive_best(ev, d.d, 2)[0] <= 0.58
