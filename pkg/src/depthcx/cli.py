"""depthcx command line: generate, depth, classical, report.

Every flag may also come from a JSON file given with ``--config``; flags on
the command line win. A run manifest written next to the outputs can be fed
back through ``--config`` to repeat the run.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
import time
from pathlib import Path

from . import __version__
from .classical import full_report
from .dataset import load_dataset, save_dataset, split_partition
from .depth import (DepthCurve, SweepConfig, build_report, default_workers, parse_sizes,
                    plot_curve, run_sweep)
from .gasel import GaConfig
from .synthgen import (GenSpec, make_xor_model, padding_suite, simulate, write_suite)


class UsageError(ValueError):
    """Bad flag value; reported with exit status 2."""


DEFAULTS = {
    "generate": {
        "output": None, "model": "xor2", "maf": None, "h2": 0.4, "cases": 800, "controls": 800,
        "features": 20, "noise_maf": "0.05,0.5", "method": "parity", "seed": 0, "suite": None,
    },
    "depth": {
        "input": None, "label_column": "class", "sizes": "1..10", "replicates": 50,
        "fitness": "nonlinear", "pop": 500, "gens": 50, "mutation_rate": 0.2,
        "crossover_rate": 0.8, "tournament": 6, "folds": 5, "seed": 0, "workers": None,
        "out_dir": "depth_out", "plot": False,
    },
    "classical": {
        "input": None, "label_column": "class", "seed": 0, "eps": 0.15, "out_dir": "classical_out",
    },
    "report": {"input": None, "out_dir": None, "plot": False},
}


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_atomic(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class RunManifest:
    """Command, resolved configuration, input hashes and timings of one run."""

    def __init__(self, command: str, config: dict, path: Path):
        self.path = Path(path)
        self.data = {
            "command": command,
            "config": config,
            "inputs": {},
            "outputs": {},
            "seed": config.get("seed"),
            "version": __version__,
            "timings": {},
            "status": "running",
        }
        self._t0 = time.perf_counter()

    def add_input(self, path) -> None:
        self.data["inputs"][str(path)] = sha256_file(path)

    def time(self, label: str, since: float) -> None:
        self.data["timings"][label] = round(time.perf_counter() - since, 6)

    def write(self) -> None:
        write_atomic(self.path, json.dumps(self.data, indent=2, sort_keys=True) + "\n")

    def finish(self, outputs) -> None:
        for p in outputs:
            self.data["outputs"][Path(p).name] = sha256_file(p)
        self.data["timings"]["total"] = round(time.perf_counter() - self._t0, 6)
        self.data["status"] = "complete"
        self.write()


def _floats(text: str, flag: str) -> list[float]:
    try:
        return [float(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"{flag}: expected comma-separated numbers, got {text!r}") from None


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise UsageError(msg)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_generate(cfg: dict) -> int:
    h2 = float(cfg["h2"])
    _require(0 < h2 < 1, f"--h2 must lie in (0, 1), got {h2}")
    _require(int(cfg["cases"]) >= 1, "--cases must be >= 1")
    _require(int(cfg["controls"]) >= 1, "--controls must be >= 1")
    lo_hi = _floats(cfg["noise_maf"], "--noise-maf")
    _require(len(lo_hi) == 2, "--noise-maf needs two values lo,hi")
    _require(cfg["method"] in ("parity", "random"), "--method must be parity or random")

    if cfg["suite"]:
        out_dir = Path(cfg["suite"])
        manifest = RunManifest("generate", cfg, out_dir / "manifest.json")
        manifest.write()
        t = time.perf_counter()
        suite = padding_suite(int(cfg["seed"]), int(cfg["cases"]), int(cfg["controls"]), h2)
        mpath = write_suite(suite, out_dir)
        manifest.time("generate", t)
        manifest.finish([mpath] + [out_dir / f"{k}.tsv" for k in suite])
        return 0

    _require(cfg["output"] is not None, "-o/--output is required (or --suite DIR)")
    model = cfg["model"]
    _require(model in ("xor2", "xor3", "het"), f"--model must be xor2, xor3 or het, got {model!r}")
    order = 3 if model == "xor3" else 2
    maf = _floats(cfg["maf"], "--maf") if cfg["maf"] is not None else [0.5] * order
    _require(len(maf) == order, f"--maf needs {order} values for {model}, got {len(maf)}")
    _require(all(0 < m <= 0.5 for m in maf), "--maf values must lie in (0, 0.5]")
    try:
        base = make_xor_model(order, maf, h2, method=cfg["method"], seed=int(cfg["seed"]))
    except ValueError as exc:
        raise UsageError(f"--h2/--maf: {exc}") from None
    models = (base, base) if model == "het" else (base,)
    spec = GenSpec(models, int(cfg["cases"]), int(cfg["controls"]), int(cfg["features"]),
                   tuple(lo_hi), int(cfg["seed"]))

    out = Path(cfg["output"])
    manifest = RunManifest("generate", cfg, out.with_suffix(".manifest.json"))
    manifest.write()
    t = time.perf_counter()
    sim = simulate(spec)
    save_dataset(sim.dataset, out)
    manifest.time("generate", t)
    manifest.data["simulation"] = sim.manifest()
    manifest.finish([out])
    return 0


def cmd_depth(cfg: dict) -> int:
    _require(cfg["input"] is not None, "input dataset path is required")
    try:
        sizes = parse_sizes(str(cfg["sizes"]))
    except ValueError as exc:
        raise UsageError(f"--sizes: {exc}") from None
    _require(cfg["fitness"] in ("linear", "nonlinear"), "--fitness must be linear or nonlinear")
    _require(int(cfg["replicates"]) >= 1, "--replicates must be >= 1")
    workers = int(cfg["workers"]) if cfg["workers"] is not None else default_workers()
    _require(workers >= 1, "--workers must be >= 1")
    try:
        ga = GaConfig(population_size=int(cfg["pop"]), generations=int(cfg["gens"]),
                      mutation_rate=float(cfg["mutation_rate"]),
                      crossover_rate=float(cfg["crossover_rate"]),
                      tournament_size=int(cfg["tournament"]))
    except ValueError as exc:
        raise UsageError(f"--pop/--gens/--tournament: {exc}") from None
    seed = int(cfg["seed"])
    sweep = SweepConfig(tuple(sizes), int(cfg["replicates"]), cfg["fitness"], ga,
                        base_seed=seed, k=int(cfg["folds"]))

    out_dir = Path(cfg["out_dir"])
    manifest = RunManifest("depth", cfg, out_dir / "manifest.json")
    manifest.add_input(cfg["input"])
    manifest.data["workers"] = workers
    manifest.write()

    t = time.perf_counter()
    data = load_dataset(cfg["input"], label_column=cfg["label_column"])
    partition = split_partition(data, seed)
    manifest.time("load", t)

    def progress(done, total):
        if done == total or done % max(1, total // 10) == 0:
            print(f"{done}/{total} cells", file=sys.stderr, flush=True)

    t = time.perf_counter()
    curve = run_sweep(data, partition, sweep, progress=progress, workers=workers)
    manifest.time("sweep", t)

    report = build_report(curve)
    outputs = [out_dir / "curve.csv", out_dir / "report.json", out_dir / "partition.json"]
    write_atomic(outputs[0], curve.to_csv())
    write_atomic(outputs[1], report.to_json())
    write_atomic(outputs[2], partition.to_json() + "\n")
    if cfg["plot"]:
        outputs.append(out_dir / "depth.svg")
        plot_curve(curve, outputs[-1], title=Path(cfg["input"]).stem)
    _print_report(report)
    manifest.finish(outputs)
    return 0


def cmd_classical(cfg: dict) -> int:
    _require(cfg["input"] is not None, "input dataset path is required")
    _require(0 < float(cfg["eps"]) <= 1, "--eps must lie in (0, 1]")
    out_dir = Path(cfg["out_dir"])
    manifest = RunManifest("classical", cfg, out_dir / "manifest.json")
    manifest.add_input(cfg["input"])
    manifest.write()
    data = load_dataset(cfg["input"], label_column=cfg["label_column"])
    t = time.perf_counter()
    rep = full_report(data, seed=int(cfg["seed"]), eps=float(cfg["eps"]))
    manifest.time("measures", t)
    outputs = [out_dir / "classical.json", out_dir / "classical.csv"]
    write_atomic(outputs[0], rep.to_json())
    write_atomic(outputs[1], rep.to_csv())
    sys.stdout.write(rep.to_csv())
    manifest.finish(outputs)
    return 0


def cmd_report(cfg: dict) -> int:
    _require(cfg["input"] is not None, "curve CSV path is required")
    src = Path(cfg["input"])
    curve = DepthCurve.from_csv(src.read_text())
    _require(bool(curve.size_limits), f"{src}: curve CSV has no rows")
    out_dir = Path(cfg["out_dir"]) if cfg["out_dir"] else src.parent
    manifest = RunManifest("report", cfg, out_dir / "report_manifest.json")
    manifest.add_input(src)
    manifest.write()
    report = build_report(curve)
    outputs = [out_dir / "report.json"]
    write_atomic(outputs[0], report.to_json())
    if cfg["plot"]:
        outputs.append(out_dir / "depth.svg")
        plot_curve(curve, outputs[-1], title=src.stem)
    _print_report(report)
    manifest.finish(outputs)
    return 0


def _print_report(report) -> None:
    print("fold\tmetric\tsize_limit")
    for fold, metric, s in report.rows():
        print(f"{fold}\t{metric}\t{s}")


COMMANDS = {"generate": cmd_generate, "depth": cmd_depth, "classical": cmd_classical,
            "report": cmd_report}


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="depthcx", description="Prediction-depth complexity toolkit.")
    p.add_argument("--version", action="version", version=f"depthcx {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS  # absent flags stay absent so config files can supply them

    g = sub.add_parser("generate", help="simulate an epistatic case/control dataset")
    g.add_argument("-o", "--output", default=S)
    g.add_argument("--model", default=S, help="xor2, xor3 or het (two 2-way models)")
    g.add_argument("--maf", default=S, help="comma-separated minor-allele frequencies")
    g.add_argument("--h2", type=float, default=S, help="target heritability")
    g.add_argument("--cases", type=int, default=S)
    g.add_argument("--controls", type=int, default=S)
    g.add_argument("--features", type=int, default=S, help="total number of features")
    g.add_argument("--noise-maf", dest="noise_maf", default=S, help="lo,hi MAF range of noise loci")
    g.add_argument("--method", default=S, help="parity (default) or random penetrance tables")
    g.add_argument("--suite", default=S, metavar="DIR", help="write the whole padding suite to DIR")

    d = sub.add_parser("depth", help="size-limit sweep and depth report")
    d.add_argument("input", nargs="?", default=S)
    d.add_argument("--label-column", dest="label_column", default=S)
    d.add_argument("--sizes", default=S, help="a..b, a..b:stride or a,b,c")
    d.add_argument("--replicates", type=int, default=S)
    d.add_argument("--fitness", default=S, help="linear or nonlinear")
    d.add_argument("--pop", type=int, default=S)
    d.add_argument("--gens", type=int, default=S)
    d.add_argument("--mutation-rate", dest="mutation_rate", type=float, default=S)
    d.add_argument("--crossover-rate", dest="crossover_rate", type=float, default=S)
    d.add_argument("--tournament", type=int, default=S)
    d.add_argument("--folds", type=int, default=S)
    d.add_argument("--workers", type=int, default=S, help="default: $DEPTHCX_WORKERS or all CPUs")
    d.add_argument("--out-dir", dest="out_dir", default=S)
    d.add_argument("--plot", action="store_true", default=S)

    c = sub.add_parser("classical", help="classical complexity measures")
    c.add_argument("input", nargs="?", default=S)
    c.add_argument("--label-column", dest="label_column", default=S)
    c.add_argument("--eps", type=float, default=S, help="Gower graph threshold")
    c.add_argument("--out-dir", dest="out_dir", default=S)

    r = sub.add_parser("report", help="rebuild report and plot from a curve CSV")
    r.add_argument("input", nargs="?", default=S)
    r.add_argument("--out-dir", dest="out_dir", default=S)
    r.add_argument("--plot", action="store_true", default=S)

    for sp in (g, d, c):
        sp.add_argument("--seed", type=int, default=S)
    for sp in (g, d, c, r):
        sp.add_argument("--config", default=None, help="JSON file of flag values (or a run manifest)")
    return p


def resolve_config(command: str, args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS[command])
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"--config: cannot read {args.config}: {exc}") from None
        if "command" in loaded and "config" in loaded:
            if loaded["command"] != command:
                raise UsageError(f"--config: manifest is for {loaded['command']!r}, not {command!r}")
            loaded = loaded["config"]
        unknown = sorted(set(loaded) - set(cfg))
        if unknown:
            raise UsageError(f"--config: unknown keys {unknown}")
        cfg.update(loaded)
    cfg.update({k: v for k, v in vars(args).items() if k in cfg})
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args.command, args)
        return COMMANDS[args.command](cfg)
    except (ValueError, OSError) as exc:
        print(f"depthcx {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"depthcx {args.command}: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
