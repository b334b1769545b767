"""Reference solutions: the separable heat series and four numerical solvers.

Every solver takes a batch of input functions (a :class:`FunctionBatch`, or
raw sensor values on ``[0, 1]``) and returns a :class:`GridSolution` whose
``values`` have shape ``(n_funcs, *grid)`` with axes ordered space first,
time last.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson
from scipy.interpolate import CubicSpline
from scipy.linalg import solve_banded

from .sampling import FunctionBatch, NumericalError
from .tensor import DTYPE, DimensionError

BLOWUP = 1e6


class ConfigurationError(ValueError):
    pass


@dataclass
class GridSolution:
    axes: list
    values: np.ndarray
    descriptor: dict = field(default_factory=dict)

    def __post_init__(self):
        self.axes = [np.asarray(a, dtype=DTYPE) for a in self.axes]
        lens = tuple(a.size for a in self.axes)
        if self.values.shape[-len(lens):] != lens:
            raise DimensionError(f"values {self.values.shape} do not match axes lengths {lens}")

    def __len__(self):
        return self.values.shape[0] if self.values.ndim > len(self.axes) else 1

    def subset(self, idx) -> "GridSolution":
        return GridSolution(self.axes, self.values[idx], dict(self.descriptor))


def _values_on(u, x) -> np.ndarray:
    """Input functions evaluated at ``x`` as ``(n, len(x))``."""
    x = np.asarray(x, dtype=DTYPE)
    if isinstance(u, FunctionBatch):
        return u.at(x)
    u = np.atleast_2d(np.asarray(u, dtype=DTYPE))
    sensors = np.linspace(0.0, 1.0, u.shape[1])
    if sensors.size == x.size and np.allclose(sensors, x):
        return u.copy()
    return CubicSpline(sensors, u, axis=1)(x)


def _check_finite(s, where):
    if not np.all(np.isfinite(s)) or np.max(np.abs(s)) > BLOWUP:
        raise NumericalError(f"{where}: solution diverged (|s| > {BLOWUP:g} or non-finite)")


# ---------------------------------------------------------------------------
# heat equation s_t = s_xx / pi^2 with zero Dirichlet data


@dataclass
class HeatSeries:
    """Sine-series coefficients ``A_k``, ``k = 1..K``, shape ``(n, K)``."""

    coeffs: np.ndarray
    K: int

    def evaluate(self, x, t) -> np.ndarray:
        k = np.arange(1, self.K + 1)
        X = np.sin(np.pi * np.outer(np.asarray(x, dtype=DTYPE), k))  # (Nx, K)
        T = np.exp(-np.outer(np.asarray(t, dtype=DTYPE), k**2))  # (Nt, K)
        return np.einsum("fk,ik,jk->fij", self.coeffs, X, T)


def heat_series(u_sensors, K: int, quadrature: str = "trapezoid") -> HeatSeries:
    """``A_k = 2 int_0^1 sin(k pi x) u(x) dx`` on the equispaced sensor grid.

    The trapezoid rule is the discrete sine transform of the sensor values and
    is exact for sine modes up to ``m - 2``; ``quadrature="simpson"`` uses the
    composite Simpson rule instead.
    """
    u = np.atleast_2d(np.asarray(u_sensors, dtype=DTYPE))
    m = u.shape[1]
    if K < 1:
        raise ValueError("K must be at least 1")
    k_max = m - 2
    if K > k_max:
        warnings.warn(f"K={K} exceeds the {m}-sensor resolution; truncating to {k_max}", stacklevel=2)
        K = k_max
    x = np.linspace(0.0, 1.0, m)
    modes = np.sin(np.pi * np.outer(np.arange(1, K + 1), x))  # (K, m)
    if quadrature == "trapezoid":
        w = np.full(m, 1.0 / (m - 1))
        w[[0, -1]] *= 0.5
        A = 2.0 * (u * w) @ modes.T
    elif quadrature == "simpson":
        A = 2.0 * simpson(u[:, None, :] * modes[None], x=x, axis=-1)
    else:
        raise ValueError(f"unknown quadrature {quadrature!r}")
    return HeatSeries(A, K)


def heat_analytic(u_sensors, K: int = 64, grid=None, quadrature: str = "trapezoid") -> GridSolution:
    """Truncated series ``sum_k A_k exp(-k^2 t) sin(k pi x)`` on ``grid = (x, t)``."""
    if isinstance(u_sensors, FunctionBatch):
        u_sensors = u_sensors.values
    if grid is None:
        grid = (np.linspace(0.0, 1.0, 128), np.linspace(0.0, 1.0, 128))
    series = heat_series(u_sensors, K, quadrature)
    x, t = grid
    return GridSolution([x, t], series.evaluate(x, t),
                        {"scheme": "sine-series", "K": series.K, "quadrature": quadrature})


# ---------------------------------------------------------------------------
# diffusion-reaction s_t = D s_xx + k s^2 + u(x)


def _laplacian_banded(n_int: int, dx: float) -> np.ndarray:
    ab = np.zeros((3, n_int))
    ab[0, 1:] = 1.0 / dx**2
    ab[1, :] = -2.0 / dx**2
    ab[2, :-1] = 1.0 / dx**2
    return ab


def _lap_apply(s, dx):
    out = -2.0 * s
    out[1:] += s[:-1]
    out[:-1] += s[1:]
    return out / dx**2


def solve_diffusion_reaction(u, nx: int = 128, nt: int = 128, D: float = 0.01, k: float = 0.01,
                             ic=None, substeps: int = 1) -> GridSolution:
    """Crank-Nicolson with the reaction term linearised as ``k s_old s_new``.

    Each step solves ``(I - dt D/2 L - dt k diag(s_old)) s_new =
    (I + dt D/2 L) s_old + dt u`` on the interior nodes, with ``s = 0`` on
    both walls. ``ic`` overrides the zero initial state (a callable of ``x``
    or an array on the grid); it exists for verification.
    """
    x = np.linspace(0.0, 1.0, nx)
    t = np.linspace(0.0, 1.0, nt)
    dx = x[1] - x[0]
    dt = (t[1] - t[0]) / substeps
    forcing = _values_on(u, x)[:, 1:-1]
    n_funcs = forcing.shape[0]
    if ic is None:
        s0 = np.zeros(nx)
    else:
        s0 = np.asarray(ic(x) if callable(ic) else ic, dtype=DTYPE)
    out = np.empty((n_funcs, nx, nt))
    L = _laplacian_banded(nx - 2, dx)
    for f in range(n_funcs):
        s = s0[1:-1].copy()
        out[f, :, 0] = s0
        for j in range(1, nt):
            for _ in range(substeps):
                ab = -0.5 * dt * D * L
                ab[1] += 1.0 - dt * k * s
                rhs = s + 0.5 * dt * D * _lap_apply(s, dx) + dt * forcing[f]
                s = solve_banded((1, 1), ab, rhs)
            _check_finite(s, "diffusion-reaction")
            out[f, 1:-1, j] = s
            out[f, [0, -1], j] = 0.0
    return GridSolution([x, t], out, {"scheme": "crank-nicolson+lagged-reaction", "nx": nx, "nt": nt,
                                      "dt": dt, "dx": dx, "D": D, "k": k})


# ---------------------------------------------------------------------------
# advection s_t + u(x) s_x = 0


def solve_advection(u_coeff, nx: int = 128, nt: int = 128, ic=None, bc=None, cfl: float = 0.9,
                    max_substeps: int = 100_000) -> GridSolution:
    """Variable-coefficient Lax-Wendroff with ``s(x, 0) = sin(pi x)`` and inflow
    ``s(0, t) = sin(pi t / 2)``; one-sided second-order update at the outflow wall.

    Time steps are split so that ``max(u) dt / dx <= cfl``.
    """
    x = np.linspace(0.0, 1.0, nx)
    t = np.linspace(0.0, 1.0, nt)
    dx = x[1] - x[0]
    c = _values_on(u_coeff, x)
    c_half = _values_on(u_coeff, 0.5 * (x[1:] + x[:-1]))
    if np.any(c <= 0):
        raise ConfigurationError("advection speed must be positive for an inflow boundary at x=0")
    if not 0 < cfl <= 1:
        raise ConfigurationError(f"CFL target {cfl} must lie in (0, 1]")
    ic = ic or (lambda xx: np.sin(np.pi * xx))
    bc = bc or (lambda tt: np.sin(0.5 * np.pi * tt))
    dt_out = t[1] - t[0]
    n_sub = int(math.ceil(c.max() * dt_out / (cfl * dx) - 1e-12))
    if n_sub > max_substeps:
        raise ConfigurationError(f"CFL {cfl} needs {n_sub} substeps (> {max_substeps})")
    n_sub = max(n_sub, 1)
    dt = dt_out / n_sub
    r = dt / dx
    s = np.broadcast_to(np.asarray(ic(x), dtype=DTYPE), c.shape).copy()
    out = np.empty(c.shape + (nt,))
    out[..., 0] = s
    ci = c[:, 1:-1]
    cl, cr = c_half[:, :-1], c_half[:, 1:]
    cN = c[:, -1]
    cxN = (3.0 * c[:, -1] - 4.0 * c[:, -2] + c[:, -3]) / (2.0 * dx)
    time = 0.0
    for j in range(1, nt):
        for _ in range(n_sub):
            time += dt
            new = np.empty_like(s)
            sm, s0, sp = s[:, :-2], s[:, 1:-1], s[:, 2:]
            new[:, 1:-1] = (s0 - 0.5 * r * ci * (sp - sm)
                            + 0.5 * r * r * ci * (cr * (sp - s0) - cl * (s0 - sm)))
            # one-sided second-order (Beam-Warming) closure at the outflow wall
            sx = (3.0 * s[:, -1] - 4.0 * s[:, -2] + s[:, -3]) / (2.0 * dx)
            sxx = (s[:, -1] - 2.0 * s[:, -2] + s[:, -3]) / dx**2
            new[:, -1] = s[:, -1] - dt * cN * sx + 0.5 * dt**2 * (cN * cN * sxx + cN * cxN * sx)
            new[:, 0] = bc(time)
            s = new
        time = t[j]
        _check_finite(s, "advection")
        out[..., j] = s
    return GridSolution([x, t], out, {"scheme": "lax-wendroff", "nx": nx, "nt": nt, "dt": dt, "dx": dx,
                                      "cfl": float(c.max() * r), "outflow": "beam-warming"})


# ---------------------------------------------------------------------------
# viscous Burgers s_t + s s_x = nu s_xx, periodic on [0, 1)


def _periodic_initial(u, n: int) -> np.ndarray:
    """Initial data on ``n`` periodic nodes ``j / n``."""
    xs = np.arange(n) / n
    if isinstance(u, FunctionBatch) and u.kind in ("periodic_grf", "constant"):
        return u.at(xs)
    vals = u.values if isinstance(u, FunctionBatch) else np.atleast_2d(np.asarray(u, dtype=DTYPE))
    samples = vals[:, :-1]  # last sensor duplicates x = 0
    m = samples.shape[1]
    spec = np.fft.rfft(samples, axis=1)
    if m % 2 == 0:
        spec[:, -1] *= 0.5  # split the Nyquist coefficient symmetrically
    padded = np.zeros((vals.shape[0], n // 2 + 1), dtype=complex)
    keep = min(spec.shape[1], padded.shape[1])
    padded[:, :keep] = spec[:, :keep]
    return np.fft.irfft(padded, n=n, axis=1) * (n / m)


def solve_burgers(u_init, nx: int = 101, nt: int = 101, nu: float = 0.01, n_modes: int = 128,
                  substeps: int | None = None, cfl: float = 0.5) -> GridSolution:
    """Fourier pseudo-spectral Burgers with integrating-factor RK4.

    The nonlinear term is dealiased with the 2/3 rule. The state is carried on
    ``n_modes`` periodic nodes and output by exact Fourier evaluation on ``nx``
    nodes of ``[0, 1]`` and ``nt`` times in ``[0, 1]``.
    """
    x = np.linspace(0.0, 1.0, nx)
    t = np.linspace(0.0, 1.0, nt)
    v = np.fft.rfft(_periodic_initial(u_init, n_modes), axis=1)
    kk = np.arange(v.shape[1])
    wav = 2.0 * np.pi * kk
    mask = kk < n_modes / 3.0
    dt_out = t[1] - t[0]
    umax = max(float(np.max(np.abs(np.fft.irfft(v, n=n_modes, axis=1)))), 1e-12)
    if substeps is None:
        substeps = max(1, int(math.ceil(dt_out * umax * wav[mask].max() / cfl)))
    dt = dt_out / substeps
    E = np.exp(-nu * wav**2 * dt)
    E2 = np.exp(-nu * wav**2 * dt / 2.0)

    def N(vh):
        s = np.fft.irfft(vh * mask, n=n_modes, axis=1)
        return -0.5j * wav * np.fft.rfft(s * s, axis=1) * mask

    # exact evaluation of the Fourier series at arbitrary x
    wt = np.full(kk.size, 2.0)
    wt[0] = 1.0
    if n_modes % 2 == 0:
        wt[-1] = 1.0
    ph = np.exp(2j * np.pi * np.outer(kk, x)) * wt[:, None] / n_modes

    def to_grid(vh):
        return np.real(vh @ ph)

    out = np.empty((v.shape[0], nx, nt))
    out[..., 0] = to_grid(v)
    for j in range(1, nt):
        with np.errstate(over="ignore", invalid="ignore"):  # blow-up is reported below
            for _ in range(substeps):
                a = dt * N(v)
                b = dt * N(E2 * (v + a / 2.0))
                c = dt * N(E2 * v + b / 2.0)
                d = dt * N(E * v + E2 * c)
                v = E * v + (E * a + 2.0 * E2 * (b + c) + d) / 6.0
        s = to_grid(v)
        _check_finite(s, "burgers")
        out[..., j] = s
    return GridSolution([x, t], out, {"scheme": "fourier-if-rk4", "modes": n_modes, "dealias": "2/3",
                                      "dt": dt, "nu": nu, "nx": nx, "nt": nt})


# ---------------------------------------------------------------------------
# 2D nonlinear diffusion s_t = alpha div(s grad s) = alpha/2 lap(s^2)


def _lap2(q, dx):
    out = np.zeros_like(q)
    out[:, 1:-1, 1:-1] = (q[:, 2:, 1:-1] + q[:, :-2, 1:-1] + q[:, 1:-1, 2:] + q[:, 1:-1, :-2]
                          - 4.0 * q[:, 1:-1, 1:-1]) / dx**2
    return out


def solve_diffusion_2d(u_init, n_space: int = 101, nt: int = 101, alpha: float = 0.05,
                       dt_safety: float = 1.0) -> GridSolution:
    """Method of lines with central differences on ``alpha/2 lap(s^2)`` and
    two-step Adams-Bashforth in time, started by one RK4 step.

    ``dt <= dt_safety * dx^2 / (8 alpha max s0)``, adjusted down to divide the
    output spacing. Boundary nodes are held at zero for ``t > 0``.
    """
    g = np.linspace(0.0, 1.0, n_space)
    t = np.linspace(0.0, 1.0, nt)
    dx = g[1] - g[0]
    if isinstance(u_init, FunctionBatch):
        s = u_init.at(g, g) if u_init.kind == "gaussian_sum" else None
        if s is None:
            raise ValueError(f"cannot evaluate {u_init.kind} inputs on a 2D grid")
    else:
        s = np.asarray(u_init, dtype=DTYPE)
        if s.ndim == 2:
            s = s[None]
        if s.shape[1:] != (n_space, n_space):
            raise DimensionError(f"initial data {s.shape} does not match a {n_space}^2 grid")
    s = s.copy()
    smax = float(np.max(np.abs(s)))
    dt_out = t[1] - t[0]
    if smax == 0.0:
        n_sub = 1
    else:
        bound = dt_safety * dx**2 / (8.0 * alpha * smax)
        n_sub = int(math.ceil(dt_out / bound - 1e-12))
    dt = dt_out / n_sub

    def rhs(q):
        return 0.5 * alpha * _lap2(q * q, dx)

    def fix(q):
        q[:, 0, :] = q[:, -1, :] = q[:, :, 0] = q[:, :, -1] = 0.0
        return q

    out = np.empty(s.shape + (nt,))
    out[..., 0] = s
    s = fix(s)
    f_prev = None
    for j in range(1, nt):
        for _ in range(n_sub):
            f_now = rhs(s)
            if f_prev is None:
                k1 = f_now
                k2 = rhs(fix(s + 0.5 * dt * k1))
                k3 = rhs(fix(s + 0.5 * dt * k2))
                k4 = rhs(fix(s + dt * k3))
                s = fix(s + dt * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0)
            else:
                s = fix(s + dt * (1.5 * f_now - 0.5 * f_prev))
            f_prev = f_now
        _check_finite(s, "diffusion-2d")
        if np.max(np.abs(s)) > 2.0 * smax:
            raise NumericalError(f"diffusion-2d: max |s| grew from {smax:.3g} to {np.max(np.abs(s)):.3g}; "
                                 "the scheme is unstable at this step size")
        out[..., j] = s
    return GridSolution([g, g, t], out, {"scheme": "adams-bashforth-2+rk4-start", "n_space": n_space,
                                         "nt": nt, "dt": dt, "dx": dx, "alpha": alpha,
                                         "internal_steps": n_sub * (nt - 1)})


# ---------------------------------------------------------------------------


REFERENCE_GRIDS = {
    "diffusion-reaction": {"nx": 128, "nt": 128},
    "advection": {"nx": 128, "nt": 128},
    "burgers": {"nx": 101, "nt": 101},
    "diffusion-2d": {"n_space": 101, "nt": 101},
    "heat": {"nx": 128, "nt": 128},
}


def reference_solution(problem, u, **kw) -> GridSolution:
    """Reference solution of ``problem`` (object or name) for each input in ``u``."""
    name = problem if isinstance(problem, str) else problem.name
    if name == "diffusion-reaction":
        return solve_diffusion_reaction(u, **kw)
    if name == "advection":
        return solve_advection(u, **kw)
    if name == "burgers":
        return solve_burgers(u, **kw)
    if name == "diffusion-2d":
        return solve_diffusion_2d(u, **kw)
    if name == "heat":
        nx = kw.pop("nx", 128)
        nt = kw.pop("nt", 128)
        grid = (np.linspace(0.0, 1.0, nx), np.linspace(0.0, 1.0, nt))
        return heat_analytic(u, kw.pop("K", 64), grid, **kw)
    raise ValueError(f"no reference solver for {name!r}")
