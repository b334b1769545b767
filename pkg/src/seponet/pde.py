"""Benchmark problems and physics-loss assembly.

Residual functions are written with ordinary arithmetic, so they accept
either tape variables (training) or plain arrays (tests, validation).
Coordinates are ordered spatial axes first, time last.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from . import sampling
from .autodiff import value_of
from .nets import FieldWithDerivs, model_fields
from .sampling import CollocationSet, FunctionBatch

X, T = 0, 1  # axis indices for the (x, t) problems
X2, Y2, T2 = 0, 1, 2  # and for (x, y, t)


# ---------------------------------------------------------------------------
# residual operators


def residual_diffusion_reaction(u_on_grid, s: FieldWithDerivs, D: float = 0.01, k: float = 0.01):
    """``s_t - D s_xx - k s^2 - u(x)``."""
    return s.d(T, 1) - D * s.d(X, 2) - k * (s.value * s.value) - u_on_grid


def residual_heat(s: FieldWithDerivs, diffusivity: float = 1.0 / np.pi**2):
    """``s_t - s_xx / pi^2``."""
    return s.d(T, 1) - diffusivity * s.d(X, 2)


def residual_advection(u_coeff_on_grid, s: FieldWithDerivs):
    """``s_t + u(x) s_x``."""
    return s.d(T, 1) + u_coeff_on_grid * s.d(X, 1)


def residual_burgers(s: FieldWithDerivs, nu: float = 0.01):
    """``s_t + s s_x - nu s_xx``."""
    return s.d(T, 1) + s.value * s.d(X, 1) - nu * s.d(X, 2)


def residual_nonlinear_diffusion_2d(s: FieldWithDerivs, alpha: float = 0.05):
    """``s_t - alpha (s (s_xx + s_yy) + s_x^2 + s_y^2)``, the expanded form of
    ``s_t - alpha div(s grad s)``."""
    sx = s.d(X2, 1)
    sy = s.d(Y2, 1)
    lap = s.d(X2, 2) + s.d(Y2, 2)
    return s.d(T2, 1) - alpha * (s.value * lap + sx * sx + sy * sy)


# ---------------------------------------------------------------------------
# problem definitions


@dataclass(frozen=True)
class PdeProblem:
    """One parametric benchmark.

    ``residual(u_ctx, s)``, ``initial(u_ctx, s)`` and ``boundary(u_ctx, faces)``
    return residual tensors; ``u_ctx`` is a :class:`InputContext` with the
    input function evaluated at the relevant coordinates.
    """

    name: str
    axis_names: tuple
    domain: tuple
    lambda_I: float
    lambda_b: float
    residual_needs: tuple
    boundary_faces: tuple
    boundary_needs: tuple
    residual: Callable
    initial: Callable
    boundary: Callable
    sampler: Callable
    n_sensors: int
    constants: dict = field(default_factory=dict)
    input_kind: str = "field"

    def __post_init__(self):
        if self.lambda_I <= 0 or self.lambda_b <= 0:
            raise ValueError("loss weights must be positive")
        for _, order in self.residual_needs:
            if order > 2:
                raise ValueError("residuals may use derivatives up to order 2")

    @property
    def d(self) -> int:
        return len(self.axis_names)

    @property
    def time_axis(self) -> int:
        return self.axis_names.index("t")

    @property
    def spatial_dim(self) -> int:
        return self.d - 1

    def sensors(self, n_sensors: int | None = None):
        m = n_sensors or self.n_sensors
        if self.spatial_dim == 1:
            return sampling.uniform_sensors(m)
        side = int(round(np.sqrt(m)))
        if side * side != m:
            raise ValueError(f"2D sensor count {m} is not a square")
        g = np.linspace(0.0, 1.0, side)
        return (g, g)

    def sample_inputs(self, rng, n_funcs: int, n_sensors: int | None = None) -> FunctionBatch:
        return self.sampler(rng, n_funcs, self.sensors(n_sensors))


@dataclass
class InputContext:
    """Input function values aligned with the residual, initial and boundary grids."""

    residual: object = None
    initial: object = None


def _input_context(problem: PdeProblem, u: FunctionBatch, colloc: CollocationSet) -> InputContext:
    if problem.spatial_dim == 1:
        res = u.at(colloc.residual[X])[:, :, None]
        ini = u.at(colloc.initial[X])[:, :, None]
    else:
        res = None
        ini = u.at(colloc.initial[X2], colloc.initial[Y2])[..., None]
    return InputContext(res, ini)


def _dr_residual(ctx, s):
    return residual_diffusion_reaction(ctx.residual, s)


def _adv_residual(ctx, s):
    return residual_advection(ctx.residual, s)


def _burgers_residual(ctx, s):
    return residual_burgers(s)


def _diff2d_residual(ctx, s):
    return residual_nonlinear_diffusion_2d(s)


def _heat_residual(ctx, s):
    return residual_heat(s)


def _zero_initial(ctx, s, axes):
    return s.value


def _input_initial(ctx, s, axes):
    return s.value - ctx.initial


def _adv_initial(ctx, s, axes):
    x = np.asarray(axes[X]).reshape(1, -1, 1)
    return s.value - np.sin(np.pi * x)


def _zero_boundary(ctx, faces, face_axes):
    return [f.value for f in faces]


def _adv_boundary(ctx, faces, face_axes):
    t = np.asarray(face_axes[0][T]).reshape(1, 1, -1)
    return [faces[0].value - np.sin(0.5 * np.pi * t)]


def _periodic_boundary(ctx, faces, face_axes):
    s = faces[0]
    v = s.value
    sx = s.d(X, 1)
    return [ad.getitem(v, (slice(None), 0)) - ad.getitem(v, (slice(None), 1)),
            ad.getitem(sx, (slice(None), 0)) - ad.getitem(sx, (slice(None), 1))]


def _with_sensors(fn, **kw):
    def sampler(rng, n, sensors):
        return fn(rng, n, sensors, **kw)

    return sampler


UNIT2 = ((0.0, 1.0), (0.0, 1.0))
UNIT3 = ((0.0, 1.0), (0.0, 1.0), (0.0, 1.0))

DIFFUSION_REACTION = PdeProblem(
    name="diffusion-reaction",
    axis_names=("x", "t"),
    domain=UNIT2,
    lambda_I=1.0,
    lambda_b=1.0,
    residual_needs=((T, 1), (X, 2)),
    boundary_faces=((X, (0.0, 1.0)),),
    boundary_needs=(),
    residual=_dr_residual,
    initial=_zero_initial,
    boundary=_zero_boundary,
    sampler=_with_sensors(sampling.sample_grf_rbf, length_scale=0.2),
    n_sensors=128,
    constants={"D": 0.01, "k": 0.01},
)

ADVECTION = PdeProblem(
    name="advection",
    axis_names=("x", "t"),
    domain=UNIT2,
    lambda_I=100.0,
    lambda_b=100.0,
    residual_needs=((T, 1), (X, 1)),
    boundary_faces=((X, (0.0,)),),
    boundary_needs=(),
    residual=_adv_residual,
    initial=_adv_initial,
    boundary=_adv_boundary,
    sampler=_with_sensors(sampling.sample_advection_coeff, length_scale=0.2),
    n_sensors=128,
)

BURGERS = PdeProblem(
    name="burgers",
    axis_names=("x", "t"),
    domain=UNIT2,
    lambda_I=20.0,
    lambda_b=1.0,
    residual_needs=((T, 1), (X, 1), (X, 2)),
    boundary_faces=((X, (0.0, 1.0)),),
    boundary_needs=((X, 1),),
    residual=_burgers_residual,
    initial=_input_initial,
    boundary=_periodic_boundary,
    sampler=sampling.sample_periodic_grf,
    n_sensors=101,
    constants={"nu": 0.01},
)

DIFFUSION_2D = PdeProblem(
    name="diffusion-2d",
    axis_names=("x", "y", "t"),
    domain=UNIT3,
    lambda_I=20.0,
    lambda_b=1.0,
    residual_needs=((T2, 1), (X2, 1), (X2, 2), (Y2, 1), (Y2, 2)),
    boundary_faces=((X2, (0.0, 1.0)), (Y2, (0.0, 1.0))),
    boundary_needs=(),
    residual=_diff2d_residual,
    initial=_input_initial,
    boundary=_zero_boundary,
    sampler=sampling.sample_gaussian_sum_2d,
    n_sensors=101 * 101,
    constants={"alpha": 0.05},
)

HEAT = PdeProblem(
    name="heat",
    axis_names=("x", "t"),
    domain=UNIT2,
    lambda_I=20.0,
    lambda_b=1.0,
    residual_needs=((T, 1), (X, 2)),
    boundary_faces=((X, (0.0, 1.0)),),
    boundary_needs=(),
    residual=_heat_residual,
    initial=_input_initial,
    boundary=_zero_boundary,
    sampler=sampling.sample_dirichlet_grf,
    n_sensors=128,
    constants={"diffusivity": 1.0 / np.pi**2},
)

PROBLEMS = {p.name: p for p in (DIFFUSION_REACTION, ADVECTION, BURGERS, DIFFUSION_2D, HEAT)}


def get_problem(name: str) -> PdeProblem:
    try:
        return PROBLEMS[name]
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None


# ---------------------------------------------------------------------------
# loss


def _msq(x):
    if isinstance(x, ad.Var):
        return ad.mean_square(x)
    return float(np.mean(np.square(x)))


def _check_nonempty(t, what):
    if np.size(value_of(t)) == 0:
        raise ValueError(f"{what} point set is empty")


def assemble_loss(problem: PdeProblem, residual, initial, boundary: Sequence):
    """Mean-square each term and combine with the problem's weights."""
    _check_nonempty(residual, "residual")
    _check_nonempty(initial, "initial")
    if len(boundary) == 0:
        raise ValueError("boundary point set is empty")
    for b in boundary:
        _check_nonempty(b, "boundary")
    l_r = _msq(residual)
    l_i = _msq(initial)
    l_b = _msq(boundary[0])
    for b in boundary[1:]:
        l_b = l_b + _msq(b)
    total = l_r + problem.lambda_I * l_i + problem.lambda_b * l_b
    return total, l_r, l_i, l_b


def physics_loss(problem: PdeProblem, u_batch, s_interior: FieldWithDerivs, s_initial: FieldWithDerivs,
                 s_boundary: Sequence[FieldWithDerivs], colloc: CollocationSet, ctx: InputContext | None = None):
    """``(total, residual, initial, boundary)`` for one batch of fields."""
    if ctx is None:
        ctx = _input_context(problem, u_batch, colloc)
    r = problem.residual(ctx, s_interior)
    i = problem.initial(ctx, s_initial, colloc.initial)
    b = problem.boundary(ctx, list(s_boundary), colloc.boundary)
    return assemble_loss(problem, r, i, b)


@dataclass
class TrainBatch:
    u: FunctionBatch
    colloc: CollocationSet
    ctx: InputContext

    @property
    def sensors(self) -> np.ndarray:
        return self.u.values


def make_batch(problem: PdeProblem, u: FunctionBatch, colloc: CollocationSet) -> TrainBatch:
    return TrainBatch(u, colloc, _input_context(problem, u, colloc))


def sample_batch(problem: PdeProblem, rng, n_funcs: int, N: int, n_sensors: int | None = None) -> TrainBatch:
    u = problem.sample_inputs(rng, n_funcs, n_sensors)
    colloc = sampling.collocation_axes(rng, problem, N)
    return make_batch(problem, u, colloc)


def grids_for(problem: PdeProblem, colloc: CollocationSet):
    grids = [(colloc.residual, problem.residual_needs), (colloc.initial, ())]
    grids += [(axes, problem.boundary_needs) for axes in colloc.boundary]
    return grids


def model_loss(model, problem: PdeProblem, batch: TrainBatch, pairwise: bool = False):
    """Physics loss of ``model`` (possibly tape-bound) on ``batch``."""
    fields = model_fields(model, batch.sensors, grids_for(problem, batch.colloc), pairwise=pairwise)
    return physics_loss(problem, batch.u, fields[0], fields[1], fields[2:], batch.colloc, batch.ctx)
