"""Input-function generators and collocation sampling.

Random streams are Philox generators keyed by ``(seed, stream, round)``, so
a batch depends only on those three integers and not on how many other draws
happened before it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .tensor import DTYPE

STREAM_INIT = 0
STREAM_TRAIN = 1
STREAM_TEST = 2
STREAM_COLLOCATION = 3


class NumericalError(ArithmeticError):
    pass


def make_rng(seed: int, stream: int = 0, round: int = 0) -> np.random.Generator:
    """Counter-based generator for ``(seed, stream, round)``."""
    key = np.array([seed, (stream << 32) | round], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def uniform_sensors(m: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, m)


@dataclass
class FunctionBatch:
    """Sensor values of ``N_f`` input functions plus what is needed to
    evaluate them anywhere.

    ``sensors`` is ``(m,)`` for functions of ``x`` and ``(side_x, side_y)``
    axes for functions of ``(x, y)``, in which case ``values`` holds the
    row-major flattening of the sensor grid.
    """

    values: np.ndarray
    sensors: object
    kind: str
    params: dict = field(default_factory=dict)
    coeffs: dict = field(default_factory=dict)

    def __len__(self):
        return self.values.shape[0]

    @property
    def descriptor(self) -> dict:
        return {"kind": self.kind, **self.params}

    def at(self, x, y=None) -> np.ndarray:
        """Values at coordinates ``x`` (``(N_f, len(x))``) or on the grid
        ``x`` by ``y`` for 2D inputs (``(N_f, len(x), len(y))``)."""
        x = np.asarray(x, dtype=DTYPE).ravel()
        c = self.coeffs
        if self.kind == "periodic_grf":
            w = 2.0 * np.pi * np.arange(1, c["a"].shape[1] + 1)
            ph = np.outer(x, w)
            return c["a"] @ np.cos(ph).T + c["b"] @ np.sin(ph).T
        if self.kind == "dirichlet_grf":
            w = np.pi * np.arange(1, c["c"].shape[1] + 1)
            return c["c"] @ np.sin(np.outer(x, w)).T
        if self.kind == "gaussian_sum":
            if y is None:
                raise ValueError("2D input functions need both x and y")
            y = np.asarray(y, dtype=DTYPE).ravel()
            return _gaussian_sum(c["A"], c["w"], c["centers"], x, y)
        if self.kind == "constant":
            return np.broadcast_to(self.values[:, :1], (len(self), x.size)).copy()
        spline = CubicSpline(np.asarray(self.sensors), self.values, axis=1)
        return spline(x)

    def subset(self, idx) -> "FunctionBatch":
        return FunctionBatch(
            self.values[idx],
            self.sensors,
            self.kind,
            dict(self.params),
            {k: v[idx] for k, v in self.coeffs.items()},
        )


def rbf_kernel(x: np.ndarray, length_scale: float = 0.2, variance: float = 1.0) -> np.ndarray:
    dx = x[:, None] - x[None, :]
    return variance * np.exp(-(dx**2) / (2.0 * length_scale**2))


def sample_grf_rbf(rng, n_funcs: int, sensors, length_scale: float = 0.2, variance: float = 1.0,
                   jitter: float = 1e-10) -> FunctionBatch:
    """Mean-zero squared-exponential GRF sampled by Cholesky factorisation."""
    x = np.asarray(sensors, dtype=DTYPE)
    if np.any(np.diff(x) < 0) or x.min() < 0 or x.max() > 1:
        raise ValueError("sensors must be sorted and lie in [0, 1]")
    K = rbf_kernel(x, length_scale, variance) + jitter * np.eye(x.size)
    try:
        L = np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        lam = np.linalg.eigvalsh(K).min()
        raise NumericalError(f"GRF covariance not positive definite (min eigenvalue {lam:.3e})") from None
    z = rng.standard_normal((n_funcs, x.size))
    return FunctionBatch(
        z @ L.T,
        x,
        "grf_rbf",
        {"length_scale": length_scale, "variance": variance, "kernel": "rbf"},
    )


def sample_advection_coeff(rng, n_funcs: int, sensors, length_scale: float = 0.2) -> FunctionBatch:
    """Strictly positive coefficients ``v - min(v) + 1`` from an RBF GRF."""
    v = sample_grf_rbf(rng, n_funcs, sensors, length_scale)
    u = v.values - v.values.min(axis=1, keepdims=True) + 1.0
    return FunctionBatch(u, v.sensors, "advection_coeff", {"length_scale": length_scale, "kernel": "rbf"})


def periodic_mode_std(j) -> np.ndarray:
    w2 = (2.0 * np.pi * np.asarray(j, dtype=DTYPE)) ** 2
    return 25.0 * (w2 + 25.0) ** -2


def sample_periodic_grf(rng, n_funcs: int, sensors, n_modes: int | None = None) -> FunctionBatch:
    """Periodic GRF with spectrum ``25^2 (-Laplacian + 25)^-4`` on ``[0, 1)``.

    Fourier coefficients of ``cos(2 pi j x)`` and ``sin(2 pi j x)`` are drawn
    independently with standard deviation ``25 (4 pi^2 j^2 + 25)^-2``.
    """
    x = np.asarray(sensors, dtype=DTYPE)
    if n_modes is None:
        n_modes = max(1, (x.size - 1) // 2)
    std = periodic_mode_std(np.arange(1, n_modes + 1))
    a = rng.standard_normal((n_funcs, n_modes)) * std
    b = rng.standard_normal((n_funcs, n_modes)) * std
    fb = FunctionBatch(np.empty((n_funcs, x.size)), x, "periodic_grf",
                       {"spectrum": "25^2(-lap+25)^-4", "n_modes": n_modes}, {"a": a, "b": b})
    fb.values = fb.at(x)
    return fb


def sample_dirichlet_grf(rng, n_funcs: int, sensors, n_modes: int = 64) -> FunctionBatch:
    """Sine-series GRF vanishing at ``x = 0`` and ``x = 1``.

    Coefficient ``j`` of ``sin(j pi x)`` has standard deviation
    ``25 ((j pi)^2 + 25)^-2``, the Dirichlet counterpart of
    :func:`sample_periodic_grf`.
    """
    x = np.asarray(sensors, dtype=DTYPE)
    w2 = (np.pi * np.arange(1, n_modes + 1)) ** 2
    c = rng.standard_normal((n_funcs, n_modes)) * (25.0 * (w2 + 25.0) ** -2)
    fb = FunctionBatch(np.empty((n_funcs, x.size)), x, "dirichlet_grf",
                       {"spectrum": "25^2(-lap_D+25)^-4", "n_modes": n_modes}, {"c": c})
    fb.values = fb.at(x)
    return fb


def _gaussian_sum(A, w, centers, x, y):
    dx = x[None, None, :, None] - centers[:, :, 0, None, None]
    dy = y[None, None, None, :] - centers[:, :, 1, None, None]
    g = A[:, :, None, None] * np.exp(-w[:, :, None, None] * (dx**2 + dy**2))
    return g.sum(axis=1)


def sample_gaussian_sum_2d(rng, n_funcs: int, grid, n_terms: int = 3) -> FunctionBatch:
    """``sum_i A_i exp(-w_i |x - c_i|^2)`` with ``A ~ U(0.2, 0.5)``,
    ``w ~ U(10, 20)`` and centres ``~ U(-0.5, 0.5)^2``, on the sensor grid."""
    gx, gy = (np.asarray(g, dtype=DTYPE) for g in grid)
    A = rng.uniform(0.2, 0.5, size=(n_funcs, n_terms))
    w = rng.uniform(10.0, 20.0, size=(n_funcs, n_terms))
    centers = rng.uniform(-0.5, 0.5, size=(n_funcs, n_terms, 2))
    vals = _gaussian_sum(A, w, centers, gx, gy).reshape(n_funcs, -1)
    return FunctionBatch(vals, (gx, gy), "gaussian_sum", {"n_terms": n_terms},
                         {"A": A, "w": w, "centers": centers})


def gaussian_sum_from_params(A, w, centers, grid) -> FunctionBatch:
    A, w, centers = (np.atleast_1d(np.asarray(a, dtype=DTYPE)) for a in (A, w, centers))
    A, w = A.reshape(1, -1), w.reshape(1, -1)
    centers = centers.reshape(1, -1, 2)
    gx, gy = (np.asarray(g, dtype=DTYPE) for g in grid)
    vals = _gaussian_sum(A, w, centers, gx, gy).reshape(1, -1)
    return FunctionBatch(vals, (gx, gy), "gaussian_sum", {"n_terms": A.shape[1]},
                         {"A": A, "w": w, "centers": centers})


# ---------------------------------------------------------------------------
# collocation


@dataclass
class CollocationSet:
    """Coordinate axes for the residual grid, the initial slice and each
    boundary face. Every entry of ``initial`` and ``boundary`` is a full list
    of per-axis coordinate vectors, so the sets are grids as well."""

    residual: list
    initial: list
    boundary: list

    def point_sets(self):
        from .nets import meshgrid_points

        return (
            meshgrid_points(self.residual),
            meshgrid_points(self.initial),
            [meshgrid_points(f) for f in self.boundary],
        )


def _axis_draw(rng, lo, hi, n):
    return np.sort(rng.uniform(lo, hi, size=n))


def collocation_axes(rng, problem, N: int) -> CollocationSet:
    """``N`` sorted uniform points per axis for the residual grid; the initial
    slice and each boundary face get their own ``N`` points per free axis and
    the face coordinates themselves on the fixed axis."""
    if N < 2:
        raise ValueError(f"need at least 2 points per axis, got N={N}")
    dom = problem.domain
    residual = [_axis_draw(rng, lo, hi, N) for lo, hi in dom]
    t_axis = problem.time_axis
    initial = [
        np.array([dom[a][0]]) if a == t_axis else _axis_draw(rng, *dom[a], N) for a in range(problem.d)
    ]
    boundary = []
    for face_axis, face_values in problem.boundary_faces:
        boundary.append([
            np.asarray(face_values, dtype=DTYPE) if a == face_axis else _axis_draw(rng, *dom[a], N)
            for a in range(problem.d)
        ])
    return CollocationSet(residual, initial, boundary)
