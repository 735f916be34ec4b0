"""Depth sweeps: GA runs across size limits, depth curves, and complexity indices."""

from __future__ import annotations

import csv
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .dataset import Dataset, Partition
from .gasel import GaConfig, run_ga
from .models import EvaluatorKind, FitnessHarness, LinearConfig, TreeConfig, evaluate_final

FOLDS = ("train", "test", "validation")
THRESHOLDS = (0.90, 0.95, 0.99, 0.995, 1.00)


def derive_seed(base_seed: int, size_limit: int, replicate: int) -> int:
    """Stable 63-bit seed for one sweep cell."""
    ss = np.random.SeedSequence([base_seed & 0xFFFFFFFFFFFFFFFF, size_limit, replicate])
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def parse_sizes(text: str) -> list[int]:
    """Parse ``"1..10"``, ``"1..99:2"`` or ``"1,2,5"`` into a size-limit grid."""
    text = text.strip()
    if ".." in text:
        rng, _, stride = text.partition(":")
        a, _, b = rng.partition("..")
        step = int(stride) if stride else 1
        if step < 1:
            raise ValueError(f"stride must be >= 1 in {text!r}")
        sizes = list(range(int(a), int(b) + 1, step))
    else:
        sizes = [int(t) for t in text.split(",") if t.strip()]
    if not sizes or any(s < 1 for s in sizes) or any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ValueError(f"size grid {text!r} must be non-empty, >= 1 and strictly increasing")
    return sizes


@dataclass(frozen=True)
class SweepConfig:
    size_limits: tuple[int, ...]
    replicates: int = 50
    evaluator_kind: EvaluatorKind = "nonlinear"
    ga: GaConfig = field(default_factory=GaConfig)
    base_seed: int = 0
    k: int = 5
    fitness_mode: str = "union"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.size_limits)
        object.__setattr__(self, "size_limits", sizes)
        if not sizes or sizes[0] < 1 or any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ValueError("size_limits must be non-empty, >= 1 and strictly increasing")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")


@dataclass(frozen=True)
class Replicate:
    size_limit: int
    replicate: int
    train_auc: float
    test_auc: float
    validation_auc: float
    selected: tuple[int, ...]
    seed: int

    def auc(self, fold: str) -> float:
        return getattr(self, f"{fold}_auc")


@dataclass
class DepthCurve:
    size_limits: tuple[int, ...]
    cells: dict[int, list[Replicate]]
    feature_names: tuple[str, ...] = ()

    def __post_init__(self):
        for s in self.size_limits:
            for r in self.cells[s]:
                for f in FOLDS:
                    if not 0.0 <= r.auc(f) <= 1.0:
                        raise ValueError(f"AUC out of range at size {s}, replicate {r.replicate}")

    def means(self, fold: str) -> np.ndarray:
        if fold not in FOLDS:
            raise ValueError(f"unknown fold {fold!r}")
        return np.array([np.mean([r.auc(fold) for r in self.cells[s]]) for s in self.size_limits])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["size_limit", "replicate", "train_auc", "test_auc", "validation_auc",
                    "selected_features", "seed"])
        for s in self.size_limits:
            for r in self.cells[s]:
                names = [self.feature_names[i] if self.feature_names else str(i) for i in r.selected]
                w.writerow([s, r.replicate, repr(r.train_auc), repr(r.test_auc),
                            repr(r.validation_auc), ";".join(names), r.seed])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, feature_names: Sequence[str] = ()) -> "DepthCurve":
        """Parse :meth:`to_csv` output.

        Without ``feature_names`` the names are collected from the file in
        order of first appearance.
        """
        names = list(feature_names)
        lookup = {n: i for i, n in enumerate(names)}
        fixed = bool(names)
        cells: dict[int, list[Replicate]] = {}
        for row in csv.DictReader(io.StringIO(text)):
            s = int(row["size_limit"])
            toks = [t for t in row["selected_features"].split(";") if t]
            for t in toks:
                if t not in lookup:
                    if fixed:
                        raise ValueError(f"unknown feature {t!r} in curve CSV")
                    lookup[t] = len(names)
                    names.append(t)
            sel = tuple(sorted(lookup[t] for t in toks))
            cells.setdefault(s, []).append(Replicate(
                s, int(row["replicate"]), float(row["train_auc"]), float(row["test_auc"]),
                float(row["validation_auc"]), sel, int(row["seed"])))
        sizes = tuple(sorted(cells))
        for s in sizes:
            cells[s].sort(key=lambda r: r.replicate)
        return cls(sizes, cells, tuple(names))


# process-local state for sweep workers
_WORKER: dict = {}


def _init_worker(data, partition, config, tree, linear):
    _WORKER.update(data=data, partition=partition, config=config, tree=tree, linear=linear)


def _run_cell(cell: tuple[int, int]) -> Replicate:
    s, r = cell
    data, partition, config = _WORKER["data"], _WORKER["partition"], _WORKER["config"]
    seed = derive_seed(config.base_seed, s, r)
    ga = replace(config.ga, size_limit=s, seed=seed)
    harness = FitnessHarness(config.evaluator_kind, k=config.k, seed=seed, mode=config.fitness_mode,
                             tree=_WORKER["tree"], linear=_WORKER["linear"])
    try:
        res = run_ga(data, partition.visible_idx, ga, harness,
                     holdout=(partition.train_idx, partition.test_idx))
        tr, te, va = evaluate_final(data, partition, res.best_genome, config.evaluator_kind,
                                    _WORKER["tree"], _WORKER["linear"])
    except Exception as exc:
        raise RuntimeError(f"sweep cell failed at size_limit={s}, replicate={r}: {exc}") from exc
    return Replicate(s, r, tr, te, va, tuple(res.best_genome), seed)


def default_workers() -> int:
    env = os.environ.get("DEPTHCX_WORKERS")
    if env:
        return max(1, int(env))
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1)


def run_sweep(data: Dataset, partition: Partition, config: SweepConfig,
              progress: Callable[[int, int], None] | None = None, workers: int = 1,
              tree: TreeConfig | None = None, linear: LinearConfig | None = None) -> DepthCurve:
    """Run every (size_limit, replicate) cell and collect its final AUC triple.

    Each cell's GA sees only the train and test rows; the validation rows
    are used once, to score the returned subset. Results do not depend on
    ``workers``.
    """
    tree = tree or TreeConfig()
    linear = linear or LinearConfig()
    cells = [(s, r) for s in config.size_limits for r in range(config.replicates)]
    total = len(cells)
    results: dict[tuple[int, int], Replicate] = {}
    if workers <= 1:
        _init_worker(data, partition, config, tree, linear)
        for i, c in enumerate(cells):
            results[c] = _run_cell(c)
            if progress:
                progress(i + 1, total)
    else:
        with ProcessPoolExecutor(workers, initializer=_init_worker,
                                 initargs=(data, partition, config, tree, linear)) as ex:
            for i, rep in enumerate(ex.map(_run_cell, cells)):
                results[(rep.size_limit, rep.replicate)] = rep
                if progress:
                    progress(i + 1, total)
    grid = {s: [results[(s, r)] for r in range(config.replicates)] for s in config.size_limits}
    return DepthCurve(config.size_limits, grid, data.feature_names)


def threshold_depths(sizes: Sequence[int], means: Sequence[float],
                     thresholds: Iterable[float] = THRESHOLDS) -> dict[float, int]:
    """Smallest size limit whose mean reaches ``t * peak`` for each threshold ``t``."""
    means = [float(m) for m in means]
    if not means or len(means) != len(sizes):
        raise ValueError("need one mean per size limit")
    peak = max(means)
    out = {}
    for t in thresholds:
        cut = t * peak
        out[t] = next(s for s, m in zip(sizes, means) if m >= cut)
    return out


def elbow_point(sizes: Sequence[int], means: Sequence[float]) -> int:
    """Point furthest above the first-to-last chord; first size if none is above."""
    if len(sizes) < 2 or len(sizes) != len(means):
        raise ValueError("elbow needs at least two points")
    x = np.asarray(sizes, dtype=np.float64)
    y = np.asarray(means, dtype=np.float64)
    dx, dy = x[-1] - x[0], y[-1] - y[0]
    norm = np.hypot(dx, dy)
    # signed perpendicular distance, positive above the chord
    dist = (dx * (y - y[0]) - dy * (x - x[0])) / norm
    best = 0
    for i in range(1, len(x) - 1):
        if dist[i] > 1e-12 and dist[i] > dist[best] + 1e-12:
            best = i
    return int(sizes[best])


@dataclass
class FoldReport:
    depth_at: dict[float, int]
    elbow: int
    peak_mean: float
    peak_size_limit: int


@dataclass
class ComplexityReport:
    folds: dict[str, FoldReport]

    def to_dict(self) -> dict:
        return {
            f: {
                "depth_at": {f"{t:g}": s for t, s in r.depth_at.items()},
                "elbow": r.elbow,
                "peak_mean": r.peak_mean,
                "peak_size_limit": r.peak_size_limit,
            }
            for f, r in self.folds.items()
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def rows(self) -> list[tuple[str, str, int]]:
        """Flattened (fold, metric, size_limit) rows in the layout of a depth table."""
        out = []
        for f, r in self.folds.items():
            for t, s in r.depth_at.items():
                out.append((f, f"{t * 100:g}%", s))
            out.append((f, "elbow", r.elbow))
        return out


def fold_report(sizes: Sequence[int], means: Sequence[float]) -> FoldReport:
    depths = threshold_depths(sizes, means)
    elbow = elbow_point(sizes, means) if len(sizes) >= 2 else int(sizes[0])
    peak = max(float(m) for m in means)
    return FoldReport(depths, elbow, peak, depths[1.00])


def build_report(curve: DepthCurve) -> ComplexityReport:
    return ComplexityReport({f: fold_report(curve.size_limits, curve.means(f)) for f in FOLDS})


def plot_curve(curve: DepthCurve, path: str | Path, title: str | None = None) -> None:
    """Depth plot: replicate scatter plus mean lines for the three folds."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "depthcx"  # stable element ids

    colors = {"train": "tab:blue", "test": "tab:green", "validation": "tab:red"}
    fig, ax = plt.subplots(figsize=(5, 3.5))
    xs = np.asarray(curve.size_limits)
    for f in FOLDS:
        for s in curve.size_limits:
            vals = [r.auc(f) for r in curve.cells[s]]
            ax.scatter(np.full(len(vals), s), vals, s=6, alpha=0.25, color=colors[f], linewidths=0)
        ax.plot(xs, curve.means(f), color=colors[f], label=f)
    ax.set_xlabel("size limit")
    ax.set_ylabel("AUC-ROC")
    if title:
        ax.set_title(title)
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    # fixed metadata keeps the SVG byte-stable across runs
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
