"""Adam training on the physics loss, evaluation metrics and checkpoints."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import statistics
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import psutil

from . import nets, pde, refsolve, sampling
from .autodiff import Tape
from .tensor import DimensionError

log = logging.getLogger(__name__)

MODEL_KINDS = ("seponet", "pideeponet")


class TrainingDiverged(RuntimeError):
    """Loss became non-finite. ``model`` holds the last parameters with a finite loss."""

    def __init__(self, msg, model=None, history=None, iteration=None):
        super().__init__(msg)
        self.model = model
        self.history = history
        self.iteration = iteration


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    problem: str = "diffusion-reaction"
    model: str = "seponet"
    n_funcs: int = 20
    N: int = 32
    r: int = 16
    width: int = 25
    depth: int = 5
    iterations: int = 1000
    base_lr: float = 1e-3
    decay: float = 0.9
    decay_every: int = 1000
    resample_every: int = 100
    lambda_I: float | None = None
    lambda_b: float | None = None
    n_sensors: int | None = None
    seed: int = 0
    precision: str = "float64"
    pairwise: bool = False
    warmup_skip: int = 50

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise ValueError(f"model must be one of {MODEL_KINDS}, got {self.model!r}")
        if self.precision != "float64":
            raise ValueError("only float64 precision is supported")
        for name in ("n_funcs", "N", "r", "width", "resample_every", "decay_every"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.depth < 0 or self.iterations < 0:
            raise ValueError("depth and iterations must be non-negative")
        pde.get_problem(self.problem)

    @property
    def pde(self) -> pde.PdeProblem:
        p = pde.get_problem(self.problem)
        changes = {}
        if self.lambda_I is not None:
            changes["lambda_I"] = self.lambda_I
        if self.lambda_b is not None:
            changes["lambda_b"] = self.lambda_b
        return dataclasses.replace(p, **changes) if changes else p

    @property
    def sensors(self) -> int:
        return self.n_sensors or pde.get_problem(self.problem).n_sensors

    @property
    def N_c(self) -> int:
        return self.N ** pde.get_problem(self.problem).d

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# optimiser


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n))


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState, lr: float, blocks=None):
    """One bias-corrected Adam update on flat arrays; returns ``(params, state)``.

    ``blocks`` is an optional list of ``(name, slice)`` used to name the
    offending parameter block when a gradient is not finite.
    """
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise DimensionError(f"params {params.shape}, grads {grads.shape}, moments {state.m.shape}")
    if not np.all(np.isfinite(grads)):
        where = "unknown block"
        bad = np.flatnonzero(~np.isfinite(grads))[0]
        for name, sl in blocks or ():
            if sl.start <= bad < sl.stop:
                where = name
                break
        raise NonFiniteGradientError(f"non-finite gradient in {where} (flat index {bad})")
    b1, b2 = state.beta1, state.beta2
    step = state.step + 1
    m = b1 * state.m + (1.0 - b1) * grads
    v = b2 * state.v + (1.0 - b2) * grads * grads
    m_hat = m / (1.0 - b1**step)
    v_hat = v / (1.0 - b2**step)
    new = params - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, AdamState(m, v, step, b1, b2, state.eps)


def lr_at(iteration: int, base: float = 1e-3, decay: float = 0.9, period: int = 1000) -> float:
    """Staircase schedule ``base * decay ** (iteration // period)``."""
    return base * decay ** (iteration // period)


def param_blocks(model) -> list[tuple[str, slice]]:
    out = []
    pos = 0
    names = ["branch"] + ([f"trunk{i}" for i in range(model.d)] if model.kind == "seponet" else ["trunk"])
    for net_name, net in zip(names, model.nets()):
        for li, (W, b) in enumerate(net.layers):
            for tag, a in (("W", W), ("b", b)):
                out.append((f"{net_name}.layer{li}.{tag}", slice(pos, pos + np.size(a))))
                pos += np.size(a)
    return out


# ---------------------------------------------------------------------------
# telemetry


class PeakRSS:
    """Samples resident set size on a background thread.

    ``peak_bytes`` is the maximum sampled RSS minus the RSS at entry.
    """

    method = "max process RSS sampled every 100 ms minus pre-training baseline"

    def __init__(self, interval: float = 0.1):
        self.interval = interval
        self.proc = psutil.Process()
        self.baseline = 0
        self.peak = 0
        self._stop = threading.Event()
        self._thread = None

    def _run(self):
        while not self._stop.wait(self.interval):
            self.sample()

    def sample(self):
        rss = self.proc.memory_info().rss
        if rss > self.peak:
            self.peak = rss

    def __enter__(self):
        self.baseline = self.proc.memory_info().rss
        self.peak = self.baseline
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()
        return self

    def __exit__(self, *exc):
        self._stop.set()
        self._thread.join()
        self.sample()

    @property
    def peak_bytes(self) -> int:
        return max(0, self.peak - self.baseline)


# ---------------------------------------------------------------------------
# training


def init_model(config: TrainConfig):
    prob = config.pde
    rng = sampling.make_rng(config.seed, sampling.STREAM_INIT)
    init = nets.init_seponet if config.model == "seponet" else nets.init_deeponet
    return init(rng, config.sensors, prob.d, config.r, config.width, config.depth)


def training_batch(config: TrainConfig, round: int) -> pde.TrainBatch:
    rng = sampling.make_rng(config.seed, sampling.STREAM_TRAIN, round)
    return pde.sample_batch(config.pde, rng, config.n_funcs, config.N, config.sensors)


def loss_and_grad(model, problem, batch, pairwise=False):
    """Loss parts (floats) and the flat parameter gradient."""
    tape = Tape()
    bound, leaves = nets.watch(model, tape)
    total, l_r, l_i, l_b = pde.model_loss(bound, problem, batch, pairwise=pairwise)
    grads = tape.backward(total)
    flat = np.concatenate([grads[leaf].ravel() for leaf in leaves])
    parts = tuple(float(x.value) for x in (total, l_r, l_i, l_b))
    return parts, flat


@dataclass
class TrainResult:
    model: object
    history: list
    telemetry: dict
    adam: AdamState | None = None
    config: TrainConfig | None = None

    def history_array(self) -> np.ndarray:
        return np.array(self.history, dtype=float).reshape(-1, 6)


HISTORY_COLUMNS = ("iteration", "total", "residual", "initial", "boundary", "lr")


def train(config: TrainConfig, model=None, callback=None, measure_rss: bool = True) -> TrainResult:
    """Run ``config.iterations`` Adam steps on the physics loss.

    Functions and collocation points are redrawn every ``resample_every``
    iterations; Adam moments carry across redraws.
    """
    problem = config.pde
    if model is None:
        model = init_model(config)
    flat = nets.flatten(model)
    state = AdamState.zeros(flat.size)
    blocks = param_blocks(model)
    history = []
    times = []
    batch = None
    last_good = model
    sampler = PeakRSS() if measure_rss else None
    t_start = time.perf_counter()
    if sampler:
        sampler.__enter__()
    try:
        for it in range(config.iterations):
            t0 = time.perf_counter()
            if it % config.resample_every == 0:
                batch = training_batch(config, it // config.resample_every)
            current = nets.unflatten(model, flat)
            parts, g = loss_and_grad(current, problem, batch, config.pairwise)
            if not np.isfinite(parts[0]):
                raise TrainingDiverged(f"non-finite loss at iteration {it}", last_good, history, it)
            last_good = current
            lr = lr_at(it, config.base_lr, config.decay, config.decay_every)
            flat, state = adam_step(flat, g, state, lr, blocks)
            times.append(time.perf_counter() - t0)
            history.append((it, *parts, lr))
            if callback is not None:
                callback(it, parts)
    finally:
        if sampler:
            sampler.__exit__(None, None, None)
    total_s = time.perf_counter() - t_start
    steady = times[config.warmup_skip :] if len(times) > config.warmup_skip else times
    telemetry = {
        "iterations": config.iterations,
        "median_ms_per_iter": 1e3 * statistics.median(steady) if steady else float("nan"),
        "total_seconds": total_s,
        "total_hours": total_s / 3600.0,
        "peak_rss_bytes": sampler.peak_bytes if sampler else None,
        "memory_method": PeakRSS.method if sampler else None,
        "timing_method": f"median wall time per iteration excluding the first {config.warmup_skip}",
    }
    return TrainResult(nets.unflatten(model, flat), history, telemetry, state, config)


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalMetrics:
    rel_l2: np.ndarray
    rmse: np.ndarray

    @property
    def rel_l2_mean(self) -> float:
        return float(np.mean(self.rel_l2))

    @property
    def rel_l2_std(self) -> float:
        return float(np.std(self.rel_l2))

    @property
    def rmse_mean(self) -> float:
        return float(np.mean(self.rmse))

    @property
    def rmse_std(self) -> float:
        return float(np.std(self.rmse))

    def summary(self) -> dict:
        return {
            "rel_l2_mean": self.rel_l2_mean,
            "rel_l2_std": self.rel_l2_std,
            "rmse_mean": self.rmse_mean,
            "rmse_std": self.rmse_std,
            "n_functions": int(self.rel_l2.size),
        }


def metrics(pred: np.ndarray, ref: np.ndarray) -> EvalMetrics:
    """Relative l2 error and RMSE per function over the whole grid."""
    pred = np.asarray(pred)
    ref = np.asarray(ref)
    if pred.shape != ref.shape:
        raise DimensionError(f"prediction {pred.shape} vs reference {ref.shape}")
    diff = (pred - ref).reshape(pred.shape[0], -1)
    ref2 = ref.reshape(ref.shape[0], -1)
    rel = np.linalg.norm(diff, axis=1) / np.linalg.norm(ref2, axis=1)
    rmse = np.sqrt(np.mean(diff**2, axis=1))
    return EvalMetrics(rel, rmse)


@dataclass
class TestSet:
    problem: str
    inputs: sampling.FunctionBatch
    solution: refsolve.GridSolution

    __test__ = False  # not a pytest class


def make_test_set(problem: str, n_funcs: int = 100, seed: int = 0, n_sensors: int | None = None,
                  **solver_kw) -> TestSet:
    """Fresh input functions from the test stream and their reference solutions."""
    prob = pde.get_problem(problem)
    rng = sampling.make_rng(seed, sampling.STREAM_TEST)
    u = prob.sample_inputs(rng, n_funcs, n_sensors)
    return TestSet(problem, u, refsolve.reference_solution(prob, u, **solver_kw))


def evaluate(model, test_set: TestSet, batch_size: int = 25) -> EvalMetrics:
    sol = test_set.solution
    if model.d != len(sol.axes):
        raise DimensionError(f"model has d={model.d}, reference grid has {len(sol.axes)} axes")
    preds = []
    for start in range(0, len(test_set.inputs), batch_size):
        u = test_set.inputs.values[start : start + batch_size]
        preds.append(nets.predict_grid(model, u, sol.axes))
    return metrics(np.concatenate(preds), sol.values)


# ---------------------------------------------------------------------------
# artifacts


def save_checkpoint(path, result: TrainResult) -> None:
    model = result.model
    st = result.adam or AdamState.zeros(nets.n_params(model))
    header = {
        "architecture": nets._architecture(model),
        "seed": result.config.seed if result.config else None,
        "n_params": nets.n_params(model),
        "adam": {"step": st.step, "beta1": st.beta1, "beta2": st.beta2, "eps": st.eps},
        "blocks": ["params", "adam_m", "adam_v"],
        "config": result.config.to_dict() if result.config else None,
    }
    nets.write_param_file(path, header, [nets.flatten(model), st.m, st.v])


def load_checkpoint(path):
    header, data = nets.read_param_file(path)
    model = nets._skeleton(header["architecture"])
    n = nets.n_params(model)
    model = nets.unflatten(model, data[:n].copy())
    a = header.get("adam")
    state = None
    if a is not None and data.size >= 3 * n:
        state = AdamState(data[n : 2 * n].copy(), data[2 * n : 3 * n].copy(), a["step"], a["beta1"], a["beta2"], a["eps"])
    return model, state, header


def write_history_csv(path, history) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_COLUMNS)
        for row in history:
            w.writerow([int(row[0]), *(repr(float(v)) for v in row[1:])])


def run_to_dir(config: TrainConfig, out_dir, test_set: TestSet | None = None) -> TrainResult:
    """Train and write checkpoint, loss history CSV and telemetry JSON."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = train(config)
    save_checkpoint(out / "checkpoint.sepm", result)
    write_history_csv(out / "loss_history.csv", result.history)
    telemetry = dict(result.telemetry)
    telemetry["config"] = config.to_dict()
    telemetry["config_hash"] = config.hash()
    if test_set is not None:
        telemetry["eval"] = evaluate(result.model, test_set).summary()
    (out / "telemetry.json").write_text(json.dumps(telemetry, indent=2))
    return result
