"""Seeded multi-run experiment sweeps with CSV emission.

Four named experiments:
  a: sample-size grid over (n_so, n_ta) plus a no-pretraining baseline per
     n_ta value;
  b: shared-depth sweep K = 1..5 holding K + K_ta = 6, plus one baseline;
  c: source-output sweep p in {1, 2, 4} holding n_so * p = 4000 (the source
     head is row-orthonormal, so larger p means more diverse source tasks);
  d: source-head depth sweep K_so in {1, 2, 3} with an activation right
     before the source output, plus one baseline.

Every (cell, run) pair derives its own seed by hashing, so runs are isolated:
removing one never changes another.  Cells execute in a worker pool capped by
the DIVLAB_THREADS environment variable, and rows are assembled in a fixed
order so output bytes never depend on scheduling.

Reported MSE is measured against the known mean function on fresh inputs
(the irreducible noise floor is excluded by construction).
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, NumericError
from .seeding import derive_seed
from .synth import NetDims, make_ground_truth
from .transfer import (TwoPhaseConfig, estimate_excess_error, run_baseline,
                       train_source_phase, train_target_phase)

CSV_HEADER = ["experiment", "param", "value", "run", "seed", "mse", "baseline",
              "mean", "std", "runs", "failed_runs", "flags"]


@dataclass
class ExperimentConfig:
    which: str = "custom"
    d_in: int = 4
    n_u: int = 4
    p: int = 4
    K: int = 5
    K_so: int = 1
    K_ta: int = 1
    n_so: int = 1000
    n_ta: int = 100
    steps: int = 2000
    noise_sigma: float = 0.1
    runs: int = 20
    base_seed: int = 0
    n_eval: int = 10_000
    n_so_grid: tuple[int, ...] = (100, 1000)
    n_ta_grid: tuple[int, ...] = (10, 100)
    p_grid: tuple[int, ...] = (1, 2, 4)
    k_grid: tuple[int, ...] = (1, 2, 3, 4, 5)
    k_so_grid: tuple[int, ...] = (1, 2, 3)
    source_budget: int = 4000  # experiment c keeps n_so * p at this value
    out: str | None = None  # CSV path; the CLI flag wins over config files

    def validate(self) -> None:
        if self.runs < 1:
            raise ContractError("runs must be >= 1")
        if self.which not in ("a", "b", "c", "d", "custom"):
            raise ContractError(f"unknown experiment {self.which!r}")

    def two_phase(self, **overrides) -> TwoPhaseConfig:
        dims = NetDims(d_in=self.d_in, n_u=self.n_u,
                       K=overrides.pop("K", self.K),
                       K_so=overrides.pop("K_so", self.K_so),
                       K_ta=overrides.pop("K_ta", self.K_ta),
                       p=overrides.pop("p", self.p))
        return TwoPhaseConfig(dims=dims,
                              n_so=overrides.pop("n_so", self.n_so),
                              n_ta=overrides.pop("n_ta", self.n_ta),
                              steps_source=self.steps, steps_target=self.steps,
                              n_eval=self.n_eval, **overrides)


def config_from_file(path: str | Path, overrides: dict | None = None) -> ExperimentConfig:
    """Flat JSON document with ExperimentConfig field names; explicit
    `overrides` (CLI flags) win over file values."""
    path = Path(path)
    if not path.exists():
        raise ContractError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ContractError(f"config file is not valid JSON: {exc}") from exc
    known = set(ExperimentConfig.__dataclass_fields__)
    unknown = set(doc) - known
    if unknown:
        raise ContractError(f"unknown config fields: {sorted(unknown)}")
    merged = dict(doc)
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    for key in ("n_so_grid", "n_ta_grid", "p_grid", "k_grid", "k_so_grid"):
        if key in merged:
            merged[key] = tuple(merged[key])
    cfg = ExperimentConfig(**merged)
    cfg.validate()
    return cfg


@dataclass
class RunRecord:
    run: int
    seed: int
    mse: float | None  # None marks a numeric failure


@dataclass
class ResultRow:
    experiment: str
    param: str
    value: str
    baseline: bool
    per_run: list[RunRecord]
    flags: str = ""

    @property
    def mses(self) -> list[float]:
        return [r.mse for r in self.per_run if r.mse is not None]

    @property
    def failed_runs(self) -> int:
        return sum(1 for r in self.per_run if r.mse is None)

    @property
    def mean(self) -> float:
        vals = self.mses
        return float(np.mean(vals)) if vals else math.nan

    @property
    def std(self) -> float:
        vals = self.mses
        return float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0

    @property
    def stderr(self) -> float:
        vals = self.mses
        return self.std / math.sqrt(len(vals)) if vals else math.nan


@dataclass(frozen=True)
class _Cell:
    experiment: str
    param: str
    value: str
    kind: str                      # "transfer" or "baseline"
    overrides: tuple               # sorted (key, value) pairs for two_phase
    terminal_activation: bool = False


def _cell_seed(cfg: ExperimentConfig, cell: _Cell, run: int) -> int:
    return derive_seed(cfg.base_seed, cell.experiment, cell.param, cell.value,
                       cell.kind, run)


def _execute_cell_run(cfg: ExperimentConfig, cell: _Cell, run: int) -> RunRecord:
    seed = _cell_seed(cfg, cell, run)
    two = cfg.two_phase(**dict(cell.overrides))
    gt = make_ground_truth(two.dims, derive_seed(seed, "gt"),
                           noise_sigma=cfg.noise_sigma,
                           source_terminal_activation=cell.terminal_activation)
    try:
        if cell.kind == "baseline":
            mse = run_baseline(gt, two, seed)
        else:
            source = train_source_phase(gt, two, seed)
            target = train_target_phase(source.h_hat, gt, two, seed)
            mse = estimate_excess_error(target.f_hat, source.h_hat, gt,
                                        two.n_eval, derive_seed(seed, "eval-target"))
    except NumericError:
        return RunRecord(run=run, seed=seed, mse=None)
    return RunRecord(run=run, seed=seed, mse=mse)


def _worker(args) -> tuple[int, int, RunRecord]:
    cfg, cells, cell_idx, run = args
    return cell_idx, run, _execute_cell_run(cfg, cells[cell_idx], run)


def thread_count() -> int:
    env = os.environ.get("DIVLAB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ContractError(f"DIVLAB_THREADS must be an integer: {env!r}") from exc
    return max(1, os.cpu_count() or 1)


def _run_cells(cfg: ExperimentConfig, cells: list[_Cell]) -> list[ResultRow]:
    cfg.validate()
    work = [(cfg, cells, i, run) for i in range(len(cells))
            for run in range(cfg.runs)]
    records: dict[tuple[int, int], RunRecord] = {}
    workers = min(thread_count(), len(work))
    if workers <= 1:
        for item in work:
            i, run, rec = _worker(item)
            records[(i, run)] = rec
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for i, run, rec in pool.map(_worker, work, chunksize=1):
                records[(i, run)] = rec
    rows = []
    for i, cell in enumerate(cells):
        per_run = [records[(i, run)] for run in range(cfg.runs)]
        rows.append(ResultRow(experiment=cell.experiment, param=cell.param,
                              value=cell.value, baseline=cell.kind == "baseline",
                              per_run=per_run,
                              flags="terminal_activation" if cell.terminal_activation else ""))
    return rows


def run_experiment_a(cfg: ExperimentConfig) -> list[ResultRow]:
    """(n_so, n_ta) grid plus one scratch baseline per n_ta."""
    cells = [_Cell("a", "n_so/n_ta", f"{n_so}/{n_ta}", "transfer",
                   (("n_so", n_so), ("n_ta", n_ta)))
             for n_so in cfg.n_so_grid for n_ta in cfg.n_ta_grid]
    cells += [_Cell("a", "n_so/n_ta", f"baseline/{n_ta}", "baseline",
                    (("n_ta", n_ta),))
              for n_ta in cfg.n_ta_grid]
    return _run_cells(cfg, cells)


def run_experiment_b(cfg: ExperimentConfig) -> list[ResultRow]:
    """Shared-depth sweep holding the total depth K + K_ta at 6."""
    total = 6
    cells = [_Cell("b", "k_shared", str(k), "transfer",
                   (("K", k), ("K_ta", total - k)))
             for k in cfg.k_grid]
    cells.append(_Cell("b", "k_shared", "baseline", "baseline", ()))
    return _run_cells(cfg, cells)


def run_experiment_c(cfg: ExperimentConfig) -> list[ResultRow]:
    """Source-output sweep holding n_so * p at the source budget."""
    for p in cfg.p_grid:
        if p > cfg.n_u:
            raise ContractError(f"p={p} above the representation width {cfg.n_u}")
        if cfg.source_budget % p:
            raise ContractError(f"source budget {cfg.source_budget} not divisible by p={p}")
    cells = [_Cell("c", "p", str(p), "transfer",
                   (("p", p), ("n_so", cfg.source_budget // p)))
             for p in cfg.p_grid]
    return _run_cells(cfg, cells)


def run_experiment_d(cfg: ExperimentConfig) -> list[ResultRow]:
    """Source-head depth sweep with an activation right before the source
    output, so the source prediction function is nonlinear even at depth 1."""
    cells = [_Cell("d", "k_source", str(k), "transfer", (("K_so", k),),
                   terminal_activation=True)
             for k in cfg.k_so_grid]
    cells.append(_Cell("d", "k_source", "baseline", "baseline", ()))
    return _run_cells(cfg, cells)


EXPERIMENTS = {"a": run_experiment_a, "b": run_experiment_b,
               "c": run_experiment_c, "d": run_experiment_d}


def run_named_experiment(cfg: ExperimentConfig) -> list[ResultRow]:
    if cfg.which not in EXPERIMENTS:
        raise ContractError(f"no such experiment {cfg.which!r}")
    return EXPERIMENTS[cfg.which](cfg)


# ---------------------------------------------------------------------------
# CSV emission
# ---------------------------------------------------------------------------

def _fmt(x: float | None) -> str:
    if x is None:
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".12g")


def rows_to_csv(rows: list[ResultRow], cfg: ExperimentConfig) -> str:
    """Per-run rows followed by one AGG row per cell, in sweep order."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        flag = "1" if row.baseline else "0"
        for rec in row.per_run:
            writer.writerow([row.experiment, row.param, row.value, rec.run,
                             rec.seed, _fmt(rec.mse), flag,
                             "", "", "", "", row.flags])
        writer.writerow([row.experiment, row.param, row.value, "AGG",
                         cfg.base_seed, "", flag, _fmt(row.mean), _fmt(row.std),
                         len(row.mses), row.failed_runs, row.flags])
    return buf.getvalue()


def write_rows(rows: list[ResultRow], cfg: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(rows_to_csv(rows, cfg))


def find_row(rows: list[ResultRow], value: str, baseline: bool = False) -> ResultRow:
    for row in rows:
        if row.value == value and row.baseline == baseline:
            return row
    raise KeyError(f"no row with value {value!r} (baseline={baseline})")
