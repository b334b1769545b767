"""Sweeps over collocation and function counts, the heat rank study, and
CSV/JSON reporting.

A sweep has two arms, as in a scaling study: ``N`` varies with ``N_f`` held
at ``fixed_Nf``, and ``N_f`` varies with ``N`` held at ``fixed_N``. Each
distinct cell is trained once per repetition.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import tracemalloc
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import psutil

from . import griddump, nets, pde, refsolve, train
from .train import TrainConfig

log = logging.getLogger(__name__)

DEFAULT_BUDGET_BYTES = 8 * 1024**3

REPORT_COLUMNS = (
    "problem", "model", "N_f", "N", "N_c", "repetition", "status", "reason",
    "rel_l2_mean", "rel_l2_std", "rmse_mean", "rmse_std",
    "median_ms_per_iter", "total_hours", "peak_memory_bytes", "estimated_memory_bytes",
    "config_hash", "seed", "checkpoint",
)
PLOT_METRICS = ("rel_l2", "rmse", "ms_per_iter", "memory")
PLOT_AXES = ("N_c", "N_f")
STATUS_OK, STATUS_OOM, STATUS_FAILED = "ok", "skipped-oom", "failed"


class MemoryBudgetExceeded(MemoryError):
    pass


@dataclass
class SweepSpec:
    problem: str
    models: list = field(default_factory=lambda: ["seponet", "pideeponet"])
    N_values: list = field(default_factory=list)
    Nf_values: list = field(default_factory=list)
    fixed_N: int = 16
    fixed_Nf: int = 20
    repetitions: int = 1
    seed_base: int = 0
    base: dict = field(default_factory=dict)  # extra TrainConfig fields
    test_funcs: int = 100
    test_seed: int = 0
    reference: dict = field(default_factory=dict)  # solver keyword overrides

    def __post_init__(self):
        pde.get_problem(self.problem)
        if self.repetitions < 1:
            raise ValueError("repetitions must be at least 1")

    @classmethod
    def from_json(cls, path) -> "SweepSpec":
        return cls(**json.loads(Path(path).read_text()))

    def cells(self) -> list[tuple[str, int, int, int]]:
        """Distinct ``(model, N_f, N, repetition)`` cells in sweep order."""
        pairs = [(self.fixed_Nf, n) for n in self.N_values] + [(nf, self.fixed_N) for nf in self.Nf_values]
        seen = []
        for p in pairs:
            if p not in seen:
                seen.append(p)
        return [(m, nf, n, rep) for rep in range(self.repetitions) for m in self.models for nf, n in seen]

    def config(self, model: str, n_funcs: int, N: int, rep: int) -> TrainConfig:
        kw = dict(self.base)
        kw.update(problem=self.problem, model=model, n_funcs=n_funcs, N=N, seed=self.seed_base + rep)
        return TrainConfig(**kw)


@dataclass
class BenchReport:
    rows: list = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def append(self, row: dict) -> None:
        self.rows.append({c: row.get(c) for c in REPORT_COLUMNS})

    def to_csv(self, path) -> None:
        _write_rows(path, self.rows)

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.rows, indent=2))

    @classmethod
    def from_csv(cls, path) -> "BenchReport":
        with open(path, newline="") as fh:
            return cls(list(csv.DictReader(fh)))


def _write_rows(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({c: r.get(c) for c in REPORT_COLUMNS})


# ---------------------------------------------------------------------------
# memory


def estimate_memory_bytes(config: TrainConfig) -> int:
    """Rough peak tape size for one training iteration.

    Counts activations kept for the backward pass: per-axis trunk jets for
    SepONet, per-point trunk jets for PI-DeepONet, and the assembled fields
    with their derivative slots for both.
    """
    prob = config.pde
    d = prob.d
    N, nf, w, L, r = config.N, config.n_funcs, config.width, config.depth, config.r
    n_res = len(prob.residual_needs)
    n_fields = 1 + n_res
    grid = N**d
    layer_floats = 4 * w * (L + 1) + 2 * r  # pre- and post-activation, jets, output
    if config.model == "seponet":
        # one order-2 jet per axis over the residual, initial and face coordinates
        trunk = d * 3 * (3 * N) * layer_floats
    else:
        pts = grid * (nf if config.pairwise else 1)
        n_dirs = len({a for a, _ in prob.residual_needs})
        trunk = (1 + 2 * n_dirs) * pts * layer_floats
    fields = 6 * n_fields * nf * grid  # field slots, residual temporaries
    branch = nf * (config.sensors + layer_floats)
    return int(8 * (trunk + fields + branch) * 1.5)


def probe_memory(config: TrainConfig, iterations: int = 2) -> int:
    """Peak traced allocation (bytes) over a few training iterations."""
    cfg = dataclasses.replace(config, iterations=iterations)
    model = train.init_model(cfg)
    batch = train.training_batch(cfg, 0)
    problem = cfg.pde
    tracemalloc.start()
    try:
        base, _ = tracemalloc.get_traced_memory()
        tracemalloc.reset_peak()
        for _ in range(iterations):
            train.loss_and_grad(model, problem, batch, cfg.pairwise)
        _, peak = tracemalloc.get_traced_memory()
    finally:
        tracemalloc.stop()
    return max(0, peak - base)


def probe_timing(config: TrainConfig, iterations: int = 100, warmup: int = 20) -> float:
    """Median ms per iteration over ``iterations`` steps after ``warmup``."""
    cfg = dataclasses.replace(config, iterations=warmup + iterations, warmup_skip=warmup)
    return train.train(cfg, measure_rss=False).telemetry["median_ms_per_iter"]


# ---------------------------------------------------------------------------
# sweeps


def _budget_callback(budget: int):
    proc = psutil.Process()
    base = proc.memory_info().rss

    def cb(it, parts):
        used = proc.memory_info().rss - base
        if used > budget:
            raise MemoryBudgetExceeded(f"resident growth {used} B exceeded budget {budget} B at iteration {it}")

    return cb


def run_cell(config: TrainConfig, test_set, budget_bytes: int = DEFAULT_BUDGET_BYTES, out_dir=None,
             repetition: int = 0) -> dict:
    """Train and evaluate one cell; never raises for per-cell failures."""
    row = {
        "problem": config.problem, "model": config.model, "N_f": config.n_funcs, "N": config.N,
        "N_c": config.N_c, "repetition": repetition, "config_hash": config.hash(), "seed": config.seed,
    }
    est = estimate_memory_bytes(config)
    row["estimated_memory_bytes"] = est
    if est > budget_bytes:
        row.update(status=STATUS_OOM, reason=f"estimated {est} B exceeds budget {budget_bytes} B")
        return row
    try:
        result = train.train(config, callback=_budget_callback(budget_bytes))
        m = train.evaluate(result.model, test_set)
    except MemoryBudgetExceeded as exc:
        row.update(status=STATUS_OOM, reason=str(exc))
        return row
    except MemoryError as exc:
        row.update(status=STATUS_OOM, reason=f"MemoryError: {exc}")
        return row
    except Exception as exc:  # a broken cell must not end the sweep
        log.exception("cell %s failed", row)
        row.update(status=STATUS_FAILED, reason=f"{type(exc).__name__}: {exc}")
        return row
    tel = result.telemetry
    row.update(
        status=STATUS_OK, reason="",
        rel_l2_mean=m.rel_l2_mean, rel_l2_std=m.rel_l2_std, rmse_mean=m.rmse_mean, rmse_std=m.rmse_std,
        median_ms_per_iter=tel["median_ms_per_iter"], total_hours=tel["total_hours"],
        peak_memory_bytes=tel["peak_rss_bytes"],
    )
    if out_dir is not None:
        cell = Path(out_dir) / f"{config.model}_Nf{config.n_funcs}_N{config.N}_rep{repetition}"
        cell.mkdir(parents=True, exist_ok=True)
        train.save_checkpoint(cell / "checkpoint.sepm", result)
        train.write_history_csv(cell / "loss_history.csv", result.history)
        (cell / "config.json").write_text(json.dumps(config.to_dict(), indent=2))
        row["checkpoint"] = str(cell / "checkpoint.sepm")
    return row


def _cell_job(args):
    config, test_set, budget, out_dir, rep = args
    return run_cell(config, test_set, budget, out_dir, rep)


def run_sweep(spec: SweepSpec, out_dir=None, budget_bytes: int = DEFAULT_BUDGET_BYTES, parallel: int = 1,
              test_set=None) -> BenchReport:
    report = BenchReport()
    cells = spec.cells()
    if not cells:
        return report
    if test_set is None:
        test_set = train.make_test_set(spec.problem, spec.test_funcs, spec.test_seed, **spec.reference)
    jobs = [(spec.config(m, nf, n, rep), test_set, budget_bytes, out_dir, rep) for m, nf, n, rep in cells]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            rows = list(pool.map(_cell_job, jobs))
    else:
        rows = [_cell_job(j) for j in jobs]
    for row in rows:  # appended in cell order regardless of completion order
        report.append(row)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        report.to_csv(Path(out_dir) / "report.csv")
        report.to_json(Path(out_dir) / "report.json")
    return report


def emit_plot_data(report: BenchReport, out_dir) -> list[Path]:
    """One CSV per (metric, sweep axis), rows sorted along that axis.

    Every file carries all report columns and all rows; consumers select an
    arm of the sweep by the fixed counterpart column.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for metric in PLOT_METRICS:
        for axis in PLOT_AXES:
            rows = sorted(report.rows, key=lambda r: (str(r["model"]), _num(r[axis])))
            p = out / f"{metric}_vs_{axis}.csv"
            _write_rows(p, rows)
            paths.append(p)
    return paths


def _num(v):
    try:
        return float(v)
    except (TypeError, ValueError):
        return float("inf")


# ---------------------------------------------------------------------------
# rank study on the heat problem


def cosine_similarity(a, b) -> float:
    a = np.ravel(a)
    b = np.ravel(b)
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def learned_bases(model: nets.SepOnetModel, n: int = 201):
    """Spatial and temporal trunk outputs on ``n`` points of ``[0, 1]``."""
    g = np.linspace(0.0, 1.0, n)
    return g, nets.mlp_forward(model.trunks[0], g[:, None]), nets.mlp_forward(model.trunks[1], g[:, None])


def series_rmse(test_set: train.TestSet, K: int) -> float:
    sol = test_set.solution
    approx = refsolve.heat_analytic(test_set.inputs.values, K, tuple(sol.axes))
    return train.metrics(approx.values, sol.values).rmse_mean


@dataclass
class RankStudy:
    rows: list
    bases: dict

    def to_csv(self, path) -> None:
        cols = ("kind", "rank", "rmse_mean", "rmse_std", "rel_l2_mean")
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            for r in self.rows:
                w.writerow({c: r.get(c) for c in cols})


def rank_study(r_list=(1, 2, 4, 8, 16), K_list=(1, 2, 4, 8, 16), base: dict | None = None,
               test_set=None, out_dir=None, n_dense: int = 201) -> RankStudy:
    """Train SepONet on heat per rank and compare with truncated series."""
    base = dict(base or {})
    base.setdefault("problem", "heat")
    if test_set is None:
        test_set = train.make_test_set("heat", 100, 0)
    rows = []
    bases = {}
    for K in K_list:
        rows.append({"kind": "series", "rank": K, "rmse_mean": series_rmse(test_set, K)})
    for r in r_list:
        cfg = TrainConfig(**{**base, "model": "seponet", "r": r})
        result = train.train(cfg)
        m = train.evaluate(result.model, test_set)
        rows.append({"kind": "seponet", "rank": r, "rmse_mean": m.rmse_mean, "rmse_std": m.rmse_std,
                     "rel_l2_mean": m.rel_l2_mean})
        g, bx, bt = learned_bases(result.model, n_dense)
        bases[r] = {"grid": g, "x": bx, "t": bt, "model": result.model}
        if out_dir is not None:
            out = Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            griddump.write_grid(out / f"basis_x_r{r}.sepg", bx.T, [g], {"basis": "x", "rank": r})
            griddump.write_grid(out / f"basis_t_r{r}.sepg", bt.T, [g], {"basis": "t", "rank": r})
            train.save_checkpoint(out / f"seponet_r{r}.sepm", result)
    study = RankStudy(rows, bases)
    if out_dir is not None:
        study.to_csv(Path(out_dir) / "rank_study.csv")
    return study
