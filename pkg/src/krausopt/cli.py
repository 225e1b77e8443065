"""Command-line experiment runner.

Every experiment writes into ``--out``:

* ``manifest.json``: config snapshot, per-run seeds, status, timing, file index.
  It is written with status ``running`` before any work starts and finalized
  as ``complete``, ``failed`` or ``interrupted``.
* ``run_NNN/``: one directory per independent run (target or split) with
  ``report.json``, ``trace.csv`` (or ``grid.csv``) and ``model.json``.

Run ``i`` draws all its randomness from ``SeedSequence(seed, spawn_key=(i,))``
so results do not depend on the worker count or scheduling order.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .qml import DATASETS, DEFAULT_EPOCHS, DEFAULT_PCA, cross_entropy_cost, encode_kets, load_dataset, run_classification
from .quantum import choi_purity, effective_rank, sample_random_channel, save_channel
from .regularizers import Kind, RegularizerKind, r_choi, r_hs
from .stiefel import FunctionCost, NumericalError, OptimizationError, OptimizerConfig, grad_check
from .tomography import (
    APP_C_GRID,
    exact_statistics,
    grid_search_gamma,
    infidelity,
    kl_cost,
    run_tomography,
    simulate_shots,
    split_train_test,
)

log = logging.getLogger("krausopt")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
EXIT_INTERRUPTED = 130

SUBCOMMANDS = ("tomo", "grid-search", "classify", "grad-check")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    subcommand: str
    out: str | None = None
    seed: int = 0
    workers: int = 1
    epochs: int | None = None
    epsilon: float = 1.0
    record_every: int = 100
    model_kraus: int | None = None
    reg: str = "none"
    gamma: float = 0.0
    # tomography
    qubits: int = 2
    target_rank: int = 4
    shots: int = 0
    targets: int = 1
    grid_search: bool = False
    gammas: tuple[float, ...] = APP_C_GRID
    # classification
    dataset: str = "iris"
    splits: int = 1
    split: float = 0.8
    pca: int | None = None
    # gradient check
    points: int = 10

    @property
    def runs(self) -> int:
        if self.subcommand == "classify":
            return self.splits
        if self.subcommand == "grad-check":
            return 1
        return self.targets

    def optimizer(self) -> OptimizerConfig:
        return OptimizerConfig(epsilon=self.epsilon, epochs=self.epochs, record_every=self.record_every)

    def regularizer(self) -> RegularizerKind:
        return RegularizerKind.parse(self.reg, self.gamma)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gammas"] = list(self.gammas)
        return d


_FIELDS = {f.name for f in fields(ExperimentConfig)}


def _nonneg_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return v


def _pos_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _nonneg_float(text: str) -> float:
    v = float(text)
    if not v >= 0 or math.isinf(v):
        raise argparse.ArgumentTypeError(f"expected a finite non-negative number, got {text}")
    return v


def _gamma_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(_nonneg_float(t) for t in text.split(",") if t.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad gamma list {text!r}: {exc}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="krausopt", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p, epochs_help):
        # SUPPRESS keeps unset flags out of the namespace so --config values survive
        p.add_argument("--config", type=Path, default=argparse.SUPPRESS, help="JSON file with flag values")
        p.add_argument("--seed", type=_nonneg_int, default=argparse.SUPPRESS, help="master seed (default 0)")
        p.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
        p.add_argument("--workers", type=_pos_int, default=argparse.SUPPRESS, help="parallel worker processes")
        p.add_argument("--epochs", type=_nonneg_int, default=argparse.SUPPRESS, help=epochs_help)
        p.add_argument("--epsilon", type=float, default=argparse.SUPPRESS, help="Cayley step size (default 1)")
        p.add_argument("--record-every", type=_pos_int, default=argparse.SUPPRESS, help="trace cadence (default 100)")
        p.add_argument("--model-kraus", type=_pos_int, default=argparse.SUPPRESS, help="Kraus operators in the model (default d^2 for tomography, 16 for classify)")
        p.add_argument("--reg", choices=[k.value for k in Kind], default=argparse.SUPPRESS, help="regularizer")
        p.add_argument("--gamma", type=_nonneg_float, default=argparse.SUPPRESS, help="regularization strength")
        p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    def tomo_flags(p):
        p.add_argument("--qubits", type=_pos_int, default=argparse.SUPPRESS, help="qubit count n (default 2)")
        p.add_argument("--target-rank", type=_pos_int, default=argparse.SUPPRESS, help="Choi rank of sampled targets (default 4)")
        p.add_argument("--shots", type=_nonneg_int, default=argparse.SUPPRESS, help="shots per input; 0 means exact statistics")
        p.add_argument("--targets", type=_pos_int, default=argparse.SUPPRESS, help="number of sampled targets (default 1)")
        p.add_argument("--gammas", type=_gamma_list, default=argparse.SUPPRESS, help="comma-separated grid for --grid-search")

    tomo = sub.add_parser("tomo", help="process tomography on sampled targets")
    common(tomo, "training epochs (default 20000)")
    tomo_flags(tomo)
    tomo.add_argument("--grid-search", action="store_true", default=argparse.SUPPRESS, help="choose gamma on a train/test split")

    grid = sub.add_parser("grid-search", help="tomography with a train/test gamma search")
    common(grid, "training epochs per gamma (default 20000)")
    tomo_flags(grid)

    cls = sub.add_parser("classify", help="train classifying channels on Iris or Wine")
    common(cls, "training epochs (default 1500 for iris, 750 for wine)")
    cls.add_argument("--dataset", choices=DATASETS, default=argparse.SUPPRESS)
    cls.add_argument("--splits", type=_pos_int, default=argparse.SUPPRESS, help="random train/test splits (default 1)")
    cls.add_argument("--split", type=float, default=argparse.SUPPRESS, help="training fraction (default 0.8)")
    cls.add_argument("--pca", type=_nonneg_int, default=argparse.SUPPRESS, help="principal components; 0 disables PCA")

    gc = sub.add_parser("grad-check", help="finite-difference check of every analytic gradient")
    gc.add_argument("--qubits", type=_pos_int, default=argparse.SUPPRESS)
    gc.add_argument("--model-kraus", type=_pos_int, default=argparse.SUPPRESS)
    gc.add_argument("--points", type=_pos_int, default=argparse.SUPPRESS, help="random points per cost (default 10)")
    gc.add_argument("--seed", type=_nonneg_int, default=argparse.SUPPRESS)
    gc.add_argument("--out", default=argparse.SUPPRESS)
    gc.add_argument("--config", type=Path, default=argparse.SUPPRESS)
    gc.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    summ = sub.add_parser("summary", help="aggregate finished experiments under a directory")
    summ.add_argument("root", type=Path)
    summ.add_argument("-v", "--verbose", action="store_true", default=False)
    return parser


def _load_config_file(path: Path) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    values = {k.replace("-", "_"): v for k, v in raw.items()}
    unknown = set(values) - _FIELDS
    if unknown:
        raise ConfigError(f"unknown keys in {path}: {', '.join(sorted(unknown))}")
    return values


def make_config(subcommand: str, values: dict) -> ExperimentConfig:
    """Fill defaults, coerce types and reject invalid combinations."""
    values = dict(values)
    if subcommand == "grid-search":
        values["grid_search"] = True
        values.setdefault("shots", 10**5)
        values.setdefault("reg", "hs")
    if subcommand == "tomo" and values.get("grid_search"):
        values.setdefault("reg", "hs")
    if subcommand == "classify":
        ds = values.setdefault("dataset", "iris")
        if ds not in DATASETS:
            raise ConfigError(f"unknown dataset {ds!r}; choose from {', '.join(DATASETS)}")
        values.setdefault("epochs", DEFAULT_EPOCHS[ds])
        values.setdefault("pca", DEFAULT_PCA[ds])
        if values["pca"] == 0:
            values["pca"] = None
    values.setdefault("epochs", 20000)
    if subcommand == "classify":
        values.setdefault("model_kraus", 16)
    else:
        # full-rank model: d^2 Kraus operators (16 for two qubits)
        values.setdefault("model_kraus", 4 ** int(values.get("qubits", 2)))
    if "gammas" in values:
        values["gammas"] = tuple(float(g) for g in values["gammas"])
    try:
        cfg = ExperimentConfig(subcommand=subcommand, **values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    def need(cond, msg):
        if not cond:
            raise ConfigError(msg)

    need(0 <= cfg.seed < 2**64, "--seed must be a 64-bit unsigned integer")
    need(cfg.workers >= 1, "--workers must be at least 1")
    need(cfg.epochs >= 0, "--epochs must be non-negative")
    need(cfg.epsilon > 0 and math.isfinite(cfg.epsilon), "--epsilon must be positive")
    need(cfg.record_every >= 1, "--record-every must be at least 1")
    need(cfg.model_kraus >= 1, "--model-kraus must be at least 1")
    need(cfg.gamma >= 0, "--gamma must be non-negative")
    try:
        kind = Kind(cfg.reg)
    except ValueError:
        raise ConfigError(f"unknown regularizer {cfg.reg!r}; choose from none, hs, choi, l1") from None
    if cfg.subcommand in ("tomo", "grid-search"):
        d = 2**cfg.qubits
        need(cfg.qubits >= 1, "--qubits must be at least 1")
        need(1 <= cfg.target_rank <= d * d, f"--target-rank must lie in [1, {d * d}] for {cfg.qubits} qubit(s)")
        need(cfg.model_kraus <= d * d, f"--model-kraus above {d * d} adds nothing for {cfg.qubits} qubit(s)")
        need(cfg.shots >= 0, "--shots must be non-negative")
        need(cfg.targets >= 1, "--targets must be at least 1")
        if cfg.grid_search:
            need(cfg.shots > 0, "--grid-search needs finite shots (the train/test split draws from counts); drop --shots 0")
            need(cfg.shots >= 5, "--grid-search needs at least 5 shots to split 80/20")
            need(kind is not Kind.NONE, "--grid-search needs a regularizer: pass --reg hs, choi or l1")
            need(len(cfg.gammas) > 0, "--gammas is empty")
            need(all(g >= 0 for g in cfg.gammas), "--gammas must be non-negative")
        else:
            need(kind is not Kind.NONE or cfg.gamma == 0, "--gamma > 0 needs --reg hs, choi or l1")
    elif cfg.subcommand == "classify":
        need(0 < cfg.split < 1, "--split must lie strictly between 0 and 1")
        need(cfg.splits >= 1, "--splits must be at least 1")
        need(kind is not Kind.NONE or cfg.gamma == 0, "--gamma > 0 needs --reg hs, choi or l1")
        n_feat = 13 if cfg.dataset == "wine" else 4
        need(cfg.pca is None or 1 <= cfg.pca <= n_feat, f"--pca must lie in [1, {n_feat}] for {cfg.dataset}")
    elif cfg.subcommand == "grad-check":
        need(cfg.qubits >= 1, "--qubits must be at least 1")
        need(cfg.model_kraus <= 4**cfg.qubits, "--model-kraus exceeds d^2")
        need(cfg.points >= 1, "--points must be at least 1")


def parse_and_validate(argv: list[str] | None = None) -> ExperimentConfig:
    """Parse ``argv`` into a validated config; ``--config`` values sit under CLI flags."""
    ns = vars(build_parser().parse_args(argv))
    sub = ns.pop("subcommand")
    ns.pop("verbose", None)
    if sub == "summary":
        raise ConfigError("summary takes no experiment config")
    values = {}
    if "config" in ns:
        values.update(_load_config_file(ns.pop("config")))
        values.pop("subcommand", None)
    values.update(ns)
    return make_config(sub, values)


def run_seed(master: int, index: int) -> int:
    """Per-run seed derived from the master seed and run index only."""
    return int(np.random.SeedSequence(master, spawn_key=(index,)).generate_state(1, np.uint64)[0])


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _run_tomo(cfg: ExperimentConfig, rng: np.random.Generator, run_dir: Path) -> dict:
    n, d = cfg.qubits, 2**cfg.qubits
    target = sample_random_channel(d, cfg.target_rank, rng)
    save_channel(target, run_dir / "target.json")
    report = {"target_rank": cfg.target_rank}
    if cfg.grid_search:
        train, test = split_train_test(target, n, cfg.shots, rng)
        k0 = sample_random_channel(d, cfg.model_kraus, rng)
        grid, models = grid_search_gamma(
            train, test, cfg.model_kraus, cfg.reg, cfg.gammas, cfg.optimizer(), target=target, k0=k0
        )
        model = models[grid.chosen_gamma]
        with open(run_dir / "grid.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["gamma", "test_cost", "fidelity"])
            for g, c, f in zip(grid.gamma_values, grid.test_costs, grid.fidelities):
                w.writerow([format(g, ".17g"), format(c, ".17g"), format(f, ".17g")])
        report["grid"] = grid.to_dict()
        report["chosen_gamma"] = grid.chosen_gamma
        if 0.0 in grid.gamma_values:
            report["delta_fidelity"] = grid.delta_fidelity()
        files = ["target.json", "grid.csv", "model.json", "report.json"]
    else:
        data = exact_statistics(target, n) if cfg.shots == 0 else simulate_shots(target, n, cfg.shots, rng)
        model, trace = run_tomography(target, cfg.model_kraus, cfg.regularizer(), data, cfg.optimizer(), rng)
        trace.to_csv(run_dir / "trace.csv")
        report["chosen_gamma"] = cfg.gamma
        report["final_cost"] = trace.costs[-1] if len(trace) else None
        files = ["target.json", "trace.csv", "model.json", "report.json"]
    save_channel(model, run_dir / "model.json")
    report["final_infidelity"] = infidelity(model, target)
    report["stiefel_residual"] = model.residual()
    report["choi_purity"] = choi_purity(model)
    report["effective_rank"] = effective_rank(model)
    _write_json(run_dir / "report.json", report)
    return {"files": files}


def _run_classify(cfg: ExperimentConfig, rng: np.random.Generator, run_dir: Path) -> dict:
    ds = load_dataset(cfg.dataset)
    rep = run_classification(
        ds, cfg.model_kraus, cfg.regularizer(), cfg.epochs, rng,
        split=cfg.split, pca_components=cfg.pca, record_every=cfg.record_every,
    )
    rep.trace.to_csv(run_dir / "trace.csv")
    save_channel(rep.classifier.stack, run_dir / "model.json")
    out = rep.to_dict()
    out["stiefel_residual"] = rep.classifier.stack.residual()
    out["train_indices"] = rep.train_idx.tolist()
    _write_json(run_dir / "report.json", out)
    return {"files": ["trace.csv", "model.json", "report.json"]}


def _run_grad_check(cfg: ExperimentConfig, rng: np.random.Generator, run_dir: Path) -> dict:
    n, d, m = cfg.qubits, 2**cfg.qubits, cfg.model_kraus
    errors = {"kl": [], "cross_entropy": [], "hs": [], "choi": []}
    for _ in range(cfg.points):
        k = sample_random_channel(d, m, rng)
        target = sample_random_channel(d, int(rng.integers(1, d * d + 1)), rng)
        errors["kl"].append(grad_check(kl_cost(exact_statistics(target, n)), k))
        kets = encode_kets(rng.random((20, 2 * n)))
        labels = rng.integers(0, min(3, d), 20)
        errors["cross_entropy"].append(grad_check(cross_entropy_cost(kets, labels, min(3, d)), k))
        errors["hs"].append(grad_check(FunctionCost(r_hs), k))
        errors["choi"].append(grad_check(FunctionCost(r_choi), k))
    report = {name: {"max": max(v), "values": v} for name, v in errors.items()}
    report["passed"] = all(max(v) <= 1e-6 for v in errors.values())
    _write_json(run_dir / "report.json", report)
    if not report["passed"]:
        raise NumericalError("gradient check above 1e-6: " + ", ".join(f"{k}={max(v):.2e}" for k, v in errors.items()))
    return {"files": ["report.json"]}


_RUNNERS = {"tomo": _run_tomo, "grid-search": _run_tomo, "classify": _run_classify, "grad-check": _run_grad_check}


def execute_run(cfg_dict: dict, index: int, out: str) -> dict:
    """Run one independent job; used directly and inside worker processes."""
    cfg = make_config(cfg_dict["subcommand"], {k: v for k, v in cfg_dict.items() if k != "subcommand"})
    seed = run_seed(cfg.seed, index)
    run_dir = Path(out) / f"run_{index:03d}"
    run_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    entry = {"index": index, "seed": seed, "dir": run_dir.name}
    try:
        res = _RUNNERS[cfg.subcommand](cfg, np.random.default_rng(seed), run_dir)
        entry.update(status="complete", files=[f"{run_dir.name}/{f}" for f in res["files"]])
    except OSError as exc:
        entry.update(status="failed", error=f"{type(exc).__name__}: {exc}", code=EXIT_IO)
    except Exception as exc:  # noqa: BLE001 - recorded in the manifest
        cause = exc.cause if isinstance(exc, OptimizationError) else exc
        where = f" at epoch {exc.epoch}" if isinstance(exc, OptimizationError) else ""
        entry.update(status="failed", error=f"{type(cause).__name__}{where}: {cause}", code=EXIT_NUMERIC)
    entry["elapsed_seconds"] = time.perf_counter() - t0
    return entry


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _manifest(cfg: ExperimentConfig, status: str, runs: list, started: str, elapsed: float | None) -> dict:
    return {
        "status": status,
        "config": cfg.to_dict(),
        "version": __version__,
        "numpy_version": np.__version__,
        "started_at": started,
        "finished_at": None if status == "running" else _now(),
        "elapsed_seconds": elapsed,
        "runs": sorted(runs, key=lambda r: r["index"]),
        "files": sorted(f for r in runs for f in r.get("files", [])),
    }


def run(cfg: ExperimentConfig) -> int:
    """Execute every run of ``cfg``, keeping the manifest current; return an exit code."""
    out = Path(cfg.out or f"krausopt-{cfg.subcommand}")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        log.error("cannot create output directory %s: %s", out, exc)
        return EXIT_IO
    started, t0 = _now(), time.perf_counter()
    runs = [{"index": i, "seed": run_seed(cfg.seed, i), "status": "pending"} for i in range(cfg.runs)]
    path = out / "manifest.json"
    try:
        _write_json(path, _manifest(cfg, "running", runs, started, None))
    except OSError as exc:
        log.error("cannot write manifest: %s", exc)
        return EXIT_IO
    done: dict[int, dict] = {}
    status = "interrupted"
    try:
        cfg_dict = cfg.to_dict()
        if cfg.workers == 1 or cfg.runs == 1:
            results = (execute_run(cfg_dict, i, str(out)) for i in range(cfg.runs))
            for entry in results:
                done[entry["index"]] = entry
                _log_run(entry)
        else:
            with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
                futures = [pool.submit(execute_run, cfg_dict, i, str(out)) for i in range(cfg.runs)]
                for fut in futures:
                    entry = fut.result()
                    done[entry["index"]] = entry
                    _log_run(entry)
        status = "complete" if all(e["status"] == "complete" for e in done.values()) else "failed"
    except KeyboardInterrupt:
        log.error("interrupted; manifest marked incomplete")
    finally:
        merged = [done.get(r["index"], r) for r in runs]
        try:
            _write_json(path, _manifest(cfg, status, merged, started, time.perf_counter() - t0))
        except OSError as exc:
            log.error("cannot finalize manifest: %s", exc)
            return EXIT_IO
    if status == "interrupted":
        return EXIT_INTERRUPTED
    failed = [e for e in done.values() if e["status"] != "complete"]
    for e in failed:
        log.error("run %d failed: %s", e["index"], e["error"])
    if failed:
        return max(e["code"] for e in failed)
    log.info("%d run(s) complete in %s", len(done), out)
    return EXIT_OK


def _log_run(entry: dict) -> None:
    log.info("run %d %s (%.1fs)", entry["index"], entry["status"], entry["elapsed_seconds"])


# --- aggregation -----------------------------------------------------------

CONDITION_KEYS = (
    "subcommand", "dataset", "qubits", "target_rank", "model_kraus", "shots",
    "reg", "gamma", "grid_search", "epochs",
)


# cumulative eigenvalue sums kept in summary.csv; report.json keeps the full spectrum
SUMMARY_CUMULATIVE = 16


def _condition(config: dict) -> tuple:
    sub = config["subcommand"]
    tomo = sub in ("tomo", "grid-search")
    row = []
    for key in CONDITION_KEYS:
        if key == "dataset" and tomo or key in ("qubits", "target_rank", "shots", "grid_search") and not tomo:
            row.append("")
        elif key == "gamma" and config.get("grid_search"):
            row.append("grid")
        else:
            row.append(config.get(key, ""))
    return tuple(row)


def _metrics(report: dict) -> dict[str, float]:
    out = {}
    for key in ("final_infidelity", "delta_fidelity", "chosen_gamma", "choi_purity", "effective_rank", "train_acc", "test_acc"):
        if isinstance(report.get(key), (int, float)):
            out[key] = float(report[key])
    for i, c in enumerate(report.get("cumulative", [])[:SUMMARY_CUMULATIVE], start=1):
        out[f"cumulative_{i}"] = float(c)
    return out


def _mean_sem(values: list[float]) -> tuple[float, float]:
    a = np.asarray(values, dtype=float)
    sem = float(a.std(ddof=1) / np.sqrt(a.size)) if a.size > 1 else float("nan")
    return float(a.mean()), sem


def emit_summary(root) -> tuple[Path, list[str]]:
    """Aggregate every experiment under ``root`` into ``summary.csv``.

    Rows are conditions (experiments whose configs differ only in seed,
    output path or worker count); columns hold the mean and standard error
    of each metric over complete runs. Incomplete runs are excluded and
    returned (and written to ``incomplete.csv``).
    """
    root = Path(root)
    manifests = sorted(root.rglob("manifest.json"))
    if not manifests:
        raise FileNotFoundError(f"no experiments found under {root}")
    groups: dict[tuple, dict[str, list[float]]] = {}
    counts: dict[tuple, int] = {}
    incomplete = []
    for mpath in manifests:
        manifest = json.loads(mpath.read_text())
        key = _condition(manifest["config"])
        groups.setdefault(key, {})
        counts.setdefault(key, 0)
        for entry in manifest["runs"]:
            rpath = mpath.parent / f"run_{entry['index']:03d}" / "report.json"
            rel = rpath.parent.relative_to(root).as_posix()
            if entry.get("status") != "complete" or not rpath.exists():
                incomplete.append(f"{rel},{entry.get('status', 'missing')}")
                continue
            counts[key] += 1
            for name, v in _metrics(json.loads(rpath.read_text())).items():
                groups[key].setdefault(name, []).append(v)
    names = sorted({n for g in groups.values() for n in g}, key=_metric_order)
    out = root / "summary.csv"
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(CONDITION_KEYS) + ["runs"] + [f"{n}_{s}" for n in names for s in ("mean", "sem")])
        for key in sorted(groups, key=lambda k: tuple(str(x) for x in k)):
            row = list(key) + [counts[key]]
            for n in names:
                vals = groups[key].get(n)
                row += [format(x, ".17g") for x in _mean_sem(vals)] if vals else ["", ""]
            w.writerow(row)
    with open(root / "incomplete.csv", "w", newline="") as fh:
        fh.write("run,status\n" + "".join(line + "\n" for line in incomplete))
    return out, incomplete


def _metric_order(name: str):
    if name.startswith("cumulative_"):
        return (1, int(name.split("_")[1]))
    return (0, name)


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    verbose = "-v" in argv or "--verbose" in argv
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if argv and argv[0] == "summary":
        ns = build_parser().parse_args(argv)
        try:
            path, incomplete = emit_summary(ns.root)
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_IO
        print(path)
        for line in incomplete:
            print(f"incomplete: {line}", file=sys.stderr)
        return EXIT_OK
    try:
        cfg = parse_and_validate(argv)
    except ConfigError as exc:
        print(f"krausopt: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
