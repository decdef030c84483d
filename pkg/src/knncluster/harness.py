"""Experiment configuration, Monte Carlo trial execution, and CSV output.

A sweep runs ``trials`` independent trials for every cell of the
(n x k x flavor) grid described by a YAML config file, estimates the
per-cell identification probability with a Wilson 95% interval, and writes
plot-ready CSV files.  Output is a pure function of (config, base seed):
trial seeds are derived as SHA-256(base_seed | cell id | trial index), rows
are sorted by cell and trial index before writing, and wall-clock timings
go to a separate file that is excluded from the reproducibility contract.

Config schema (YAML, defaults in parentheses):

    model:
      dimension: 2
      components:            # list of balls
        - {center: [0.0, 0.0], radius: 0.5, mass: 0.5}
      background:            # optional
        box: [[-2.0, 2.0], [-2.0, 2.0]]   # per-dimension [lo, hi]
        mass: 0.2
    level: 0.5               # the density level t
    mode: noisefree          # noisefree | noisy
    flavors: [mutual]        # any of mutual, symmetric
    n: [500]                 # list of sample sizes
    k: "sweep:2:40:2"        # list | sweep:lo:hi:step | optimal | fraction:g1,g2
    delta: 0.02              # (0.02) small-component threshold, noisy mode
    eps: 0.05                # (0.1 * level) number, or {schedule: {eps0: ...}}
    h: 0.2                   # bandwidth, or {schedule: {h0: ...}}; noisy mode
    trials: 200              # (200) trials per cell
    seed: 0                  # (0) base seed
    out: results             # output directory for `sweep`

``k: optimal`` uses the all-clusters coefficient of the model geometry;
``fraction:g`` maps each g to round((n-1) * g + 1).
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .identify import AssessContext, assess, run_pipeline
from .kde import exact_id_schedule
from .model import DensityModel, geometry_quantities, ground_truth, make_ball_mixture, sample
from .theory import gamma_coefficient, optimal_k, wilson_interval

__all__ = [
    "ConfigError",
    "EmptyCell",
    "ExperimentConfig",
    "TrialCell",
    "TrialRecord",
    "RECORD_COLUMNS",
    "SUMMARY_COLUMNS",
    "load_config",
    "model_from_spec",
    "trial_seed",
    "run_trial",
    "sweep",
    "estimate_probability",
]

RECORD_VERSION = 1

RECORD_COLUMNS = [
    "record_version",
    "mode",
    "flavor",
    "n",
    "k",
    "delta",
    "eps",
    "h",
    "trial_index",
    "seed",
    "error",
    "m",
    "all_identified",
    "rough_identified",
    "survived",
    "connected",
    "pure",
    "event_a",
    "event_b",
    "event_e",
    "event_d",
    "event_i",
    "n_cluster",
    "n_background",
    "ratio",
    "r_min",
    "r_max_tilde",
    "bg_only_components",
]

SUMMARY_COLUMNS = [
    "mode",
    "flavor",
    "n",
    "k",
    "delta",
    "eps",
    "h",
    "trials",
    "errors",
    "successes",
    "p_hat",
    "wilson_lo",
    "wilson_hi",
    "per_cluster_successes",
]

BEST_COLUMNS = ["mode", "flavor", "n", "best_k", "p_hat"]


class ConfigError(Exception):
    """The experiment configuration is invalid."""


class EmptyCell(Exception):
    """Probability estimation needs at least one record."""


def model_from_spec(spec: dict) -> DensityModel:
    """Build a DensityModel from the config file's ``model`` section."""
    try:
        d = int(spec["dimension"])
        comps = [(c["center"], float(c["radius"]), float(c["mass"])) for c in spec["components"]]
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"bad model section: {exc}") from exc
    background = spec.get("background")
    if background is not None:
        if "box" not in background or "mass" not in background:
            raise ConfigError("background needs 'box' and 'mass'")
    try:
        return make_ball_mixture(d, comps, background=background)
    except Exception as exc:
        raise ConfigError(f"invalid model: {exc}") from exc


@dataclass(frozen=True)
class ExperimentConfig:
    model: DensityModel
    t: float
    mode: str
    flavors: tuple[str, ...]
    n_values: tuple[int, ...]
    k_spec: object  # list[int] | "sweep:lo:hi:step" | "optimal" | "fraction:..."
    delta: float
    eps_spec: object  # float | ("schedule", eps0)
    h_spec: object  # float | ("schedule", h0)
    trials: int
    seed: int
    out: str


def _scale_spec(value, key: str, default: float | None) -> object:
    if value is None:
        if default is None:
            raise ConfigError(f"noisy mode needs '{key}'")
        return float(default)
    if isinstance(value, dict):
        sched = value.get("schedule")
        if not isinstance(sched, dict) or f"{key}0" not in sched:
            raise ConfigError(f"'{key}' schedule needs {{schedule: {{{key}0: value}}}}")
        return ("schedule", float(sched[f"{key}0"]))
    return float(value)


def load_config(path: str | Path) -> ExperimentConfig:
    """Parse and validate a YAML experiment config."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")

    if "model" not in raw or "level" not in raw:
        raise ConfigError("config needs 'model' and 'level'")
    model = model_from_spec(raw["model"])
    t = float(raw["level"])
    if t <= 0.0:
        raise ConfigError("level must be positive")

    mode = raw.get("mode", "noisefree")
    if mode not in ("noisefree", "noisy"):
        raise ConfigError(f"unknown mode {mode!r}")

    flavors = raw.get("flavors", ["mutual"])
    if isinstance(flavors, str):
        flavors = [flavors]
    for f in flavors:
        if f not in ("mutual", "symmetric"):
            raise ConfigError(f"unknown flavor {f!r}")

    n_values = raw.get("n", [])
    if isinstance(n_values, int):
        n_values = [n_values]
    n_values = [int(v) for v in n_values]
    if not n_values or any(v < 2 for v in n_values):
        raise ConfigError("'n' must list sample sizes >= 2")

    k_spec = raw.get("k")
    if k_spec is None:
        raise ConfigError("config needs 'k'")
    if isinstance(k_spec, int):
        k_spec = [k_spec]
    if isinstance(k_spec, list):
        k_spec = [int(v) for v in k_spec]
    elif isinstance(k_spec, str):
        if not (k_spec.startswith(("sweep:", "fraction:")) or k_spec == "optimal"):
            raise ConfigError(f"bad k spec {k_spec!r}")
    else:
        raise ConfigError(f"bad k spec {k_spec!r}")

    delta = float(raw.get("delta", 0.02))
    if not 0.0 <= delta < 1.0:
        raise ConfigError("delta must lie in [0, 1)")

    if mode == "noisy":
        eps_spec = _scale_spec(raw.get("eps"), "eps", 0.1 * t)
        h_spec = _scale_spec(raw.get("h"), "h", None)
    else:
        eps_spec, h_spec = 0.0, 0.0

    trials = int(raw.get("trials", 200))
    if trials < 1:
        raise ConfigError("trials must be >= 1")

    return ExperimentConfig(
        model=model,
        t=t,
        mode=mode,
        flavors=tuple(flavors),
        n_values=tuple(n_values),
        k_spec=k_spec,
        delta=delta,
        eps_spec=eps_spec,
        h_spec=h_spec,
        trials=trials,
        seed=int(raw.get("seed", 0)),
        out=str(raw.get("out", "results")),
    )


def _resolve_eps_h(config: ExperimentConfig, n: int) -> tuple[float, float]:
    if config.mode != "noisy":
        return 0.0, 0.0
    d = config.model.dimension
    if isinstance(config.h_spec, tuple):
        h = exact_id_schedule(n, d, config.h_spec[1], 1.0)[0]
    else:
        h = config.h_spec
    if isinstance(config.eps_spec, tuple):
        eps = exact_id_schedule(n, d, 1.0, config.eps_spec[1])[1]
    else:
        eps = config.eps_spec
    return float(eps), float(h)


def resolve_k_values(config: ExperimentConfig, n: int) -> list[int]:
    """Expand the config's k specification for sample size n."""
    spec = config.k_spec
    if isinstance(spec, list):
        ks = spec
    elif spec == "optimal":
        geo = geometry_quantities(config.model, config.t)
        gamma = gamma_coefficient(geo.rho_min, geo.t, geo.p_max_global, geo.d)
        ks = [optimal_k(n, gamma).k]
    elif isinstance(spec, str) and spec.startswith("sweep:"):
        try:
            lo, hi, step = (int(v) for v in spec.split(":")[1:])
        except ValueError as exc:
            raise ConfigError(f"bad sweep spec {spec!r}") from exc
        if step < 1 or hi < lo:
            raise ConfigError(f"bad sweep spec {spec!r}")
        ks = list(range(lo, hi + 1, step))
    elif isinstance(spec, str) and spec.startswith("fraction:"):
        try:
            gammas = [float(v) for v in spec.split(":", 1)[1].split(",")]
        except ValueError as exc:
            raise ConfigError(f"bad fraction spec {spec!r}") from exc
        ks = [optimal_k(n, g).k for g in gammas]
    else:
        raise ConfigError(f"bad k spec {spec!r}")
    ks = sorted({k for k in ks if 1 <= k <= n - 1})
    if not ks:
        raise ConfigError(f"k spec {spec!r} yields no valid k for n = {n}")
    return ks


@dataclass(frozen=True)
class TrialCell:
    """One grid cell: everything a trial needs except its seed."""

    model: DensityModel
    t: float
    mode: str
    flavor: str
    n: int
    k: int
    delta: float
    eps: float
    h: float

    @property
    def cell_id(self) -> str:
        return (
            f"{self.mode}|{self.flavor}|n={self.n}|k={self.k}"
            f"|delta={self.delta!r}|eps={self.eps!r}|h={self.h!r}"
        )


def trial_seed(base_seed: int, cell_id: str, trial_index: int) -> int:
    """Derived 64-bit trial seed: SHA-256 of 'base|cell|index'."""
    digest = hashlib.sha256(f"{base_seed}|{cell_id}|{trial_index}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass
class TrialRecord:
    mode: str
    flavor: str
    n: int
    k: int
    delta: float
    eps: float
    h: float
    trial_index: int
    seed: int
    error: str = ""
    m: int = 0
    all_identified: bool = False
    rough_identified: tuple[int, ...] = ()
    survived: tuple[int, ...] = ()
    connected: tuple[int, ...] = ()
    pure: tuple[int, ...] = ()
    event_a: tuple[int, ...] = ()
    event_b: tuple[int, ...] = ()
    event_e: bool = False
    event_d: bool = False
    event_i: tuple[int, ...] = ()
    n_cluster: int = 0
    n_background: int = 0
    ratio: float = float("nan")
    r_min: tuple[float, ...] = ()
    r_max_tilde: tuple[float, ...] = ()
    bg_only_components: int = 0
    wall_ms: float = field(default=0.0, compare=False)

    def to_row(self) -> list[str]:
        def bools(vals) -> str:
            return ";".join(str(int(v)) for v in vals)

        def floats(vals) -> str:
            return ";".join(repr(float(v)) for v in vals)

        return [
            str(RECORD_VERSION),
            self.mode,
            self.flavor,
            str(self.n),
            str(self.k),
            repr(self.delta),
            repr(self.eps),
            repr(self.h),
            str(self.trial_index),
            str(self.seed),
            self.error,
            str(self.m),
            str(int(self.all_identified)),
            bools(self.rough_identified),
            bools(self.survived),
            bools(self.connected),
            bools(self.pure),
            bools(self.event_a),
            bools(self.event_b),
            str(int(self.event_e)),
            str(int(self.event_d)),
            bools(self.event_i),
            str(self.n_cluster),
            str(self.n_background),
            repr(self.ratio),
            floats(self.r_min),
            floats(self.r_max_tilde),
            str(self.bg_only_components),
        ]


def run_trial(cell: TrialCell, seed: int, trial_index: int = 0) -> TrialRecord:
    """One sample -> graph -> identify -> assess pass, deterministic for
    (cell, seed).  Stage errors become failed-trial rows with an error tag."""
    record = TrialRecord(
        mode=cell.mode,
        flavor=cell.flavor,
        n=cell.n,
        k=cell.k,
        delta=cell.delta,
        eps=cell.eps,
        h=cell.h,
        trial_index=trial_index,
        seed=seed,
    )
    start = time.perf_counter()
    try:
        if cell.mode == "noisy" and cell.t - cell.eps <= 0.0:
            record.error = "config: t - eps must be positive in noisy mode"
            return record
        cloud = sample(cell.model, cell.n, seed)
        artifacts = run_pipeline(
            cloud,
            cell.k,
            flavor=cell.flavor,
            mode=cell.mode,
            t=cell.t,
            eps=cell.eps,
            h=cell.h if cell.mode == "noisy" else None,
            delta=cell.delta if cell.mode == "noisy" else 0.0,
        )
        truth = ground_truth(cell.model, cloud, cell.t)
        report = assess(artifacts.result, truth, AssessContext(cell.model, artifacts))
        record.m = report.m
        record.all_identified = report.all_identified
        record.rough_identified = tuple(int(v) for v in report.rough_identified)
        record.survived = tuple(int(v) for v in report.all_points_survived)
        record.connected = tuple(int(v) for v in report.one_component)
        record.pure = tuple(int(v) for v in report.pure_component)
        record.event_a = tuple(int(v) for v in report.event_a)
        record.event_b = tuple(int(v) for v in report.event_b)
        record.event_e = report.event_e
        record.event_d = report.event_d
        record.event_i = tuple(int(v) for v in report.event_i)
        record.n_cluster = report.n_cluster_points
        record.n_background = report.n_background_points
        record.ratio = report.ratio
        record.r_min = tuple(float(v) for v in report.r_min)
        record.r_max_tilde = tuple(float(v) for v in report.r_max_tilde)
        record.bg_only_components = report.background_only_components
    except Exception as exc:  # recorded, not raised: one bad cell must not kill a sweep
        record.error = f"{type(exc).__name__}: {exc}"
    record.wall_ms = (time.perf_counter() - start) * 1000.0
    return record


def build_cells(config: ExperimentConfig) -> list[TrialCell]:
    """Expand the config grid into cells, in deterministic order."""
    cells = []
    for n in config.n_values:
        eps, h = _resolve_eps_h(config, n)
        for flavor in config.flavors:
            for k in resolve_k_values(config, n):
                cells.append(
                    TrialCell(
                        model=config.model,
                        t=config.t,
                        mode=config.mode,
                        flavor=flavor,
                        n=n,
                        k=k,
                        delta=config.delta if config.mode == "noisy" else 0.0,
                        eps=eps,
                        h=h,
                    )
                )
    return cells


def _run_chunk(args: tuple) -> tuple[int, int, list[TrialRecord]]:
    cell_index, cell, base_seed, start, count = args
    rows = []
    for idx in range(start, start + count):
        seed = trial_seed(base_seed, cell.cell_id, idx)
        rows.append(run_trial(cell, seed, trial_index=idx))
    return cell_index, start, rows


@dataclass
class SweepResult:
    cells: list[TrialCell]
    records: list[TrialRecord]  # sorted by (cell position, trial index)
    summary: list[dict]
    best: list[dict]


def sweep(config: ExperimentConfig, jobs: int = 1, chunk: int = 25) -> SweepResult:
    """Run the full grid; returns records sorted by cell and trial index,
    per-cell summaries, and the empirical-best k per (mode, flavor, n).

    Ties for best k break toward smaller k (cheaper graphs at equal
    success rate).
    """
    cells = build_cells(config)
    tasks = []
    for ci, cell in enumerate(cells):
        for start in range(0, config.trials, chunk):
            count = min(chunk, config.trials - start)
            tasks.append((ci, cell, config.seed, start, count))

    results: dict[tuple[int, int], list[TrialRecord]] = {}
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for ci, start, rows in pool.map(_run_chunk, tasks):
                results[(ci, start)] = rows
    else:
        for task in tasks:
            ci, start, rows = _run_chunk(task)
            results[(ci, start)] = rows

    records: list[TrialRecord] = []
    for ci in range(len(cells)):
        for start in range(0, config.trials, chunk):
            records.extend(results[(ci, start)])

    summary = []
    for ci, cell in enumerate(cells):
        cell_records = [
            r for r in records if (r.mode, r.flavor, r.n, r.k) == (cell.mode, cell.flavor, cell.n, cell.k)
        ]
        ok = [r for r in cell_records if not r.error]
        successes = sum(1 for r in ok if r.all_identified)
        p_hat, lo, hi = wilson_interval(successes, len(cell_records))
        m = max((r.m for r in ok), default=0)
        per_cluster = [
            sum(1 for r in ok if r.m == m and r.rough_identified[c]) for c in range(m)
        ]
        summary.append(
            {
                "mode": cell.mode,
                "flavor": cell.flavor,
                "n": cell.n,
                "k": cell.k,
                "delta": cell.delta,
                "eps": cell.eps,
                "h": cell.h,
                "trials": len(cell_records),
                "errors": len(cell_records) - len(ok),
                "successes": successes,
                "p_hat": p_hat,
                "wilson_lo": lo,
                "wilson_hi": hi,
                "per_cluster_successes": ";".join(str(v) for v in per_cluster),
            }
        )

    best = []
    for n in config.n_values:
        for flavor in config.flavors:
            rows = [s for s in summary if s["n"] == n and s["flavor"] == flavor]
            if not rows:
                continue
            top = max(rows, key=lambda s: (s["p_hat"], -s["k"]))
            best.append(
                {
                    "mode": config.mode,
                    "flavor": flavor,
                    "n": n,
                    "best_k": top["k"],
                    "p_hat": top["p_hat"],
                }
            )

    return SweepResult(cells=cells, records=records, summary=summary, best=best)


def _write_csv(path: Path, columns: list[str], rows: list[list[str]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        writer.writerows(rows)


def write_outputs(result: SweepResult, out_dir: str | Path) -> dict[str, Path]:
    """Write records.csv, summary.csv, best_k.csv, summary.json, and the
    (non-reproducible) timings.csv; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "records": out / "records.csv",
        "summary": out / "summary.csv",
        "best": out / "best_k.csv",
        "summary_json": out / "summary.json",
        "timings": out / "timings.csv",
    }
    _write_csv(paths["records"], RECORD_COLUMNS, [r.to_row() for r in result.records])
    _write_csv(
        paths["summary"],
        SUMMARY_COLUMNS,
        [
            [
                s["mode"], s["flavor"], str(s["n"]), str(s["k"]), repr(s["delta"]),
                repr(s["eps"]), repr(s["h"]), str(s["trials"]), str(s["errors"]),
                str(s["successes"]), repr(s["p_hat"]), repr(s["wilson_lo"]),
                repr(s["wilson_hi"]), s["per_cluster_successes"],
            ]
            for s in result.summary
        ],
    )
    _write_csv(
        paths["best"],
        BEST_COLUMNS,
        [[b["mode"], b["flavor"], str(b["n"]), str(b["best_k"]), repr(b["p_hat"])] for b in result.best],
    )
    with open(paths["summary_json"], "w", encoding="utf-8") as fh:
        json.dump({"summary": result.summary, "best": result.best}, fh, indent=2, sort_keys=True)
        fh.write("\n")

    timing_rows = []
    by_cell: dict[tuple, list[float]] = {}
    for r in result.records:
        by_cell.setdefault((r.mode, r.flavor, r.n, r.k), []).append(r.wall_ms)
    for (mode, flavor, n, k), times in sorted(by_cell.items()):
        timing_rows.append(
            [mode, flavor, str(n), str(k), str(len(times)),
             f"{sum(times):.3f}", f"{sum(times) / len(times):.3f}"]
        )
    _write_csv(
        paths["timings"],
        ["mode", "flavor", "n", "k", "trials", "total_ms", "mean_ms"],
        timing_rows,
    )
    return paths


def estimate_probability(successes: int, trials: int) -> tuple[float, tuple[float, float]]:
    """Empirical probability with its Wilson 95% confidence interval."""
    if trials < 1:
        raise EmptyCell("need at least one record")
    p_hat, lo, hi = wilson_interval(successes, trials)
    return p_hat, (lo, hi)
