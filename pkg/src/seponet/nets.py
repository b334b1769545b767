"""Branch/trunk networks, the separable grid forward pass and the DeepONet baseline.

A SepONet prediction on a coordinate grid is

    s[f, i_1, ..., i_d] = sum_k beta[f, k] * tau_1[i_1, k] * ... * tau_d[i_d, k]

where ``beta`` is the branch output for function ``f`` and ``tau_n`` the output
of the ``n``-th scalar-input trunk. A derivative along axis ``m`` swaps
``tau_m`` for its jet component, so every derivative field costs one more
contraction and nothing per grid point in the trunks.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Jet2, Tape, Var, value_of
from .tensor import DTYPE, DimensionError

_LETTERS = "abcdeghijlmnopq"  # grid axis labels for einsum ("f" and "k" are reserved)


class MissingDerivativeError(LookupError):
    """A residual asked for a derivative field that was not computed."""


class UnsupportedOrderError(ValueError):
    """Derivative order above two was requested."""


# ---------------------------------------------------------------------------
# MLPs


@dataclass(frozen=True)
class MlpParams:
    """Weights ``(out x in)`` and biases per layer; the last layer is linear."""

    layers: tuple
    activation: str

    def __post_init__(self):
        if self.activation not in ("tanh", "sine"):
            raise ValueError(f"unsupported activation {self.activation!r}")
        prev = None
        for W, b in self.layers:
            out, inp = np.shape(value_of(W))
            if np.shape(value_of(b)) != (out,):
                raise DimensionError(f"bias shape {np.shape(value_of(b))} for weight {(out, inp)}")
            if prev is not None and inp != prev:
                raise DimensionError(f"layer input {inp} does not chain with previous output {prev}")
            prev = out

    @property
    def in_dim(self) -> int:
        return np.shape(value_of(self.layers[0][0]))[1]

    @property
    def out_dim(self) -> int:
        return np.shape(value_of(self.layers[-1][0]))[0]

    @property
    def depth(self) -> int:
        """Number of hidden (activated) layers."""
        return len(self.layers) - 1

    def arrays(self) -> list:
        return [a for W, b in self.layers for a in (W, b)]

    def with_arrays(self, arrays: Sequence) -> "MlpParams":
        it = iter(arrays)
        return MlpParams(tuple((next(it), next(it)) for _ in self.layers), self.activation)


def init_mlp(rng: np.random.Generator, sizes: Sequence[int], activation: str) -> MlpParams:
    """Random MLP with layer widths ``sizes`` (input first, output last).

    Tanh layers use Glorot-uniform weights and zero biases. Sine layers use
    ``U(-1/in, 1/in)`` for the first layer and ``U(-sqrt(6/in), sqrt(6/in))``
    afterwards, with biases ``U(-1/sqrt(in), 1/sqrt(in))``.
    """
    layers = []
    for li, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        if activation == "tanh":
            lim = np.sqrt(6.0 / (n_in + n_out))
            W = rng.uniform(-lim, lim, size=(n_out, n_in))
            b = np.zeros(n_out)
        elif activation == "sine":
            lim = 1.0 / n_in if li == 0 else np.sqrt(6.0 / n_in)
            W = rng.uniform(-lim, lim, size=(n_out, n_in))
            blim = 1.0 / np.sqrt(n_in)
            b = rng.uniform(-blim, blim, size=n_out)
        else:
            raise ValueError(f"unsupported activation {activation!r}")
        layers.append((W.astype(DTYPE), b.astype(DTYPE)))
    return MlpParams(tuple(layers), activation)


def mlp_forward(params: MlpParams, x):
    """Affine/activation stack with a linear output layer. ``x`` is ``(batch, in)``."""
    if np.ndim(value_of(x)) != 2 or np.shape(value_of(x))[1] != params.in_dim:
        raise DimensionError(f"input shape {np.shape(value_of(x))} for in_dim {params.in_dim}")
    h = x
    for W, b in params.layers[:-1]:
        h = ad.activate(ad.affine(h, W, b), params.activation)
    W, b = params.layers[-1]
    return ad.affine(h, W, b)


# ---------------------------------------------------------------------------
# models


@dataclass(frozen=True)
class SepOnetModel:
    branch: MlpParams
    trunks: tuple

    def __post_init__(self):
        if len(self.trunks) < 1:
            raise ValueError("SepONet needs at least one trunk")
        r = self.branch.out_dim
        for t in self.trunks:
            if t.in_dim != 1 or t.out_dim != r:
                raise DimensionError(f"trunk must map 1 -> {r}, got {t.in_dim} -> {t.out_dim}")

    kind = "seponet"

    @property
    def r(self) -> int:
        return self.branch.out_dim

    @property
    def d(self) -> int:
        return len(self.trunks)

    @property
    def m(self) -> int:
        return self.branch.in_dim

    def nets(self) -> list[MlpParams]:
        return [self.branch, *self.trunks]

    def with_nets(self, nets) -> "SepOnetModel":
        return SepOnetModel(nets[0], tuple(nets[1:]))


@dataclass(frozen=True)
class DeepOnetModel:
    branch: MlpParams
    trunk: MlpParams

    def __post_init__(self):
        if self.branch.out_dim != self.trunk.out_dim:
            raise DimensionError("branch and trunk output widths differ")

    kind = "pideeponet"

    @property
    def r(self) -> int:
        return self.branch.out_dim

    @property
    def d(self) -> int:
        return self.trunk.in_dim

    @property
    def m(self) -> int:
        return self.branch.in_dim

    def nets(self) -> list[MlpParams]:
        return [self.branch, self.trunk]

    def with_nets(self, nets) -> "DeepOnetModel":
        return DeepOnetModel(nets[0], nets[1])


Model = SepOnetModel | DeepOnetModel


def init_seponet(rng, m: int, d: int, r: int, width: int, depth: int) -> SepOnetModel:
    hidden = [width] * depth
    branch = init_mlp(rng, [m, *hidden, r], "tanh")
    trunks = tuple(init_mlp(rng, [1, *hidden, r], "sine") for _ in range(d))
    return SepOnetModel(branch, trunks)


def init_deeponet(rng, m: int, d: int, r: int, width: int, depth: int) -> DeepOnetModel:
    hidden = [width] * depth
    return DeepOnetModel(
        init_mlp(rng, [m, *hidden, r], "tanh"), init_mlp(rng, [d, *hidden, r], "sine")
    )


def param_arrays(model) -> list:
    return [a for net in model.nets() for a in net.arrays()]


def with_param_arrays(model, arrays: Sequence):
    nets = []
    pos = 0
    for net in model.nets():
        n = 2 * len(net.layers)
        nets.append(net.with_arrays(arrays[pos : pos + n]))
        pos += n
    return model.with_nets(nets)


def flatten(model) -> np.ndarray:
    return np.concatenate([np.ravel(a) for a in param_arrays(model)])


def unflatten(model, flat: np.ndarray):
    arrays = []
    pos = 0
    for a in param_arrays(model):
        n = np.size(a)
        arrays.append(flat[pos : pos + n].reshape(np.shape(a)))
        pos += n
    if pos != flat.size:
        raise DimensionError(f"flat parameter vector has {flat.size} entries, model needs {pos}")
    return with_param_arrays(model, arrays)


def n_params(model) -> int:
    return sum(np.size(a) for a in param_arrays(model))


def watch(model, tape: Tape):
    """Copy of ``model`` whose parameters are tape leaves, plus the leaves."""
    leaves = [tape.leaf(a) for a in param_arrays(model)]
    return with_param_arrays(model, leaves), leaves


# ---------------------------------------------------------------------------
# field containers


@dataclass
class FieldWithDerivs:
    """Prediction field and derivative fields keyed by ``(axis, order)``."""

    value: object
    derivs: dict = field(default_factory=dict)

    def d(self, axis: int, order: int = 1):
        try:
            return self.derivs[(axis, order)]
        except KeyError:
            raise MissingDerivativeError(
                f"derivative of order {order} along axis {axis} was not computed"
            ) from None

    @property
    def shape(self):
        return np.shape(value_of(self.value))


def _check_needed(needed: Iterable, d: int) -> list[tuple[int, int]]:
    out = []
    for axis, order in needed:
        if order > 2 or order < 1:
            raise UnsupportedOrderError(f"derivative order {order} is not supported (max 2)")
        if not 0 <= axis < d:
            raise ValueError(f"axis {axis} outside 0..{d - 1}")
        if (axis, order) not in out:
            out.append((axis, order))
    return out


def _grid_spec(d: int) -> str:
    labels = _LETTERS[:d]
    return "fk," + ",".join(f"{c}k" for c in labels) + "->f" + labels


# ---------------------------------------------------------------------------
# SepONet


def branch_forward(model, u_sensors):
    u = u_sensors if isinstance(u_sensors, Var) else np.asarray(u_sensors, dtype=DTYPE)
    if np.ndim(value_of(u)) != 2 or np.shape(value_of(u))[1] != model.m:
        raise DimensionError(f"sensor array {np.shape(value_of(u))} for m={model.m}")
    return mlp_forward(model.branch, u)


def seponet_forward(model: SepOnetModel, u_sensors, axes: Sequence) -> np.ndarray:
    """Prediction on the grid ``axes[0] x ... x axes[d-1]``, shape ``(N_f, N_1, ..., N_d)``."""
    if len(axes) != model.d:
        raise ValueError(f"{len(axes)} coordinate axes for a model with d={model.d}")
    beta = branch_forward(model, u_sensors)
    taus = [
        mlp_forward(t, np.asarray(y, dtype=DTYPE).reshape(-1, 1)) for t, y in zip(model.trunks, axes)
    ]
    return ad.einsum(_grid_spec(model.d), beta, *taus)


def seponet_pointwise(model: SepOnetModel, u_sensors, point) -> np.ndarray:
    """Direct evaluation at a single point ``(y_1, ..., y_d)``; returns ``(N_f,)``."""
    beta = np.asarray(branch_forward(model, u_sensors))
    prod = np.ones(model.r)
    for t, y in zip(model.trunks, point):
        prod = prod * np.asarray(mlp_forward(t, np.array([[float(y)]])))[0]
    return beta @ prod


def seponet_fields(model: SepOnetModel, u_sensors, grids: Sequence, beta=None) -> list[FieldWithDerivs]:
    """Fields on several grids sharing one branch pass and one trunk pass per axis.

    Each grid is ``(axes, needed)`` with ``needed`` a list of ``(axis, order)``.
    """
    d = model.d
    grids = [(list(axes), _check_needed(needed, d)) for axes, needed in grids]
    for axes, _ in grids:
        if len(axes) != d:
            raise ValueError(f"{len(axes)} coordinate axes for a model with d={d}")
    if beta is None:
        beta = branch_forward(model, u_sensors)

    # one trunk evaluation per axis over the concatenated coordinates of all grids
    per_axis = []
    for n in range(d):
        coords = [np.asarray(axes[n], dtype=DTYPE).ravel() for axes, _ in grids]
        offsets = np.concatenate([[0], np.cumsum([c.size for c in coords])])
        y = np.concatenate(coords)
        needs_jet = any(axis == n for _, needed in grids for axis, _ in needed)
        if needs_jet:
            out = ad.jet_through_layers(model.trunks[n].layers, model.trunks[n].activation, Jet2.seed(y)).stack
        else:
            out = mlp_forward(model.trunks[n], y.reshape(-1, 1))
        per_axis.append((out, offsets, needs_jet))

    def component(n, g, order):
        out, offsets, is_jet = per_axis[n]
        rows = slice(int(offsets[g]), int(offsets[g + 1]))
        if is_jet:
            return ad.getitem(out, (order, rows))
        if len(grids) == 1:
            return out
        return ad.getitem(out, rows)

    spec = _grid_spec(d)
    results = []
    for g, (axes, needed) in enumerate(grids):
        base = [component(n, g, 0) for n in range(d)]
        value = ad.einsum(spec, beta, *base)
        derivs = {}
        for axis, order in needed:
            ops = list(base)
            ops[axis] = component(axis, g, order)
            derivs[(axis, order)] = ad.einsum(spec, beta, *ops)
        results.append(FieldWithDerivs(value, derivs))
    return results


def seponet_field_with_derivs(model: SepOnetModel, u_sensors, axes, needed) -> FieldWithDerivs:
    return seponet_fields(model, u_sensors, [(axes, needed)])[0]


# ---------------------------------------------------------------------------
# DeepONet


def meshgrid_points(axes: Sequence) -> np.ndarray:
    """All grid points in row-major (``ij``) order, shape ``(prod N_n, d)``."""
    mesh = np.meshgrid(*[np.asarray(a, dtype=DTYPE).ravel() for a in axes], indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def deeponet_forward(model: DeepOnetModel, u_sensors, points) -> np.ndarray:
    """``(N_f, N_c)`` predictions, one dot product per (function, point) pair."""
    points = np.asarray(points, dtype=DTYPE)
    if points.ndim != 2 or points.shape[1] != model.d:
        raise DimensionError(f"points of shape {points.shape} for d={model.d}")
    beta = branch_forward(model, u_sensors)
    tau = mlp_forward(model.trunk, points)
    return ad.einsum("fk,pk->fp", beta, tau)


def _deeponet_point_fields(model: DeepOnetModel, u_sensors, point_sets, needed_sets, pairwise=False, beta=None):
    d = model.d
    needed_sets = [_check_needed(n, d) for n in needed_sets]
    for p in point_sets:
        if np.ndim(p) != 2 or np.shape(p)[1] != d:
            raise DimensionError(f"points of shape {np.shape(p)} for d={d}")
    if beta is None:
        beta = branch_forward(model, u_sensors)
    n_f = np.shape(value_of(beta))[0]
    directions = sorted({axis for needed in needed_sets for axis, _ in needed})
    pts = np.concatenate([np.asarray(p, dtype=DTYPE) for p in point_sets])
    offsets = np.concatenate([[0], np.cumsum([len(p) for p in point_sets])])
    n_pts = pts.shape[0]
    if pairwise:
        # every (function, point) pair gets its own trunk evaluation
        pts = np.tile(pts, (n_f, 1))
    if directions:
        stack = ad.jet_through_layers(model.trunk.layers, model.trunk.activation, Jet2.seed(pts, directions)).stack
    else:
        stack = ad.reshape(mlp_forward(model.trunk, pts), (1, pts.shape[0], model.r))
    A = len(directions)
    if pairwise:
        stack = ad.reshape(stack, (1 + 2 * A, n_f, n_pts, model.r))

    def comp(idx, g):
        rows = slice(int(offsets[g]), int(offsets[g + 1]))
        if pairwise:
            t = ad.getitem(stack, (idx, slice(None), rows))
            return ad.einsum("fk,fpk->fp", beta, t)
        return ad.einsum("fk,pk->fp", beta, ad.getitem(stack, (idx, rows)))

    results = []
    for g, needed in enumerate(needed_sets):
        derivs = {}
        for axis, order in needed:
            a = directions.index(axis)
            derivs[(axis, order)] = comp(1 + a if order == 1 else 1 + A + a, g)
        results.append(FieldWithDerivs(comp(0, g), derivs))
    return results


def deeponet_field_with_derivs(model: DeepOnetModel, u_sensors, points, needed, pairwise=False) -> FieldWithDerivs:
    """Per-point values and coordinate derivatives, fields shaped ``(N_f, N_c)``."""
    return _deeponet_point_fields(model, u_sensors, [np.asarray(points, dtype=DTYPE)], [list(needed)], pairwise)[0]


def deeponet_fields(model: DeepOnetModel, u_sensors, grids: Sequence, pairwise=False, beta=None) -> list[FieldWithDerivs]:
    """Grid-shaped fields from materialised meshgrid points (``N_1 * ... * N_d`` each)."""
    grids = [(list(axes), list(needed)) for axes, needed in grids]
    point_sets = [meshgrid_points(axes) for axes, _ in grids]
    flat = _deeponet_point_fields(model, u_sensors, point_sets, [n for _, n in grids], pairwise, beta)
    out = []
    for (axes, _), fw in zip(grids, flat):
        shape = (-1, *[np.size(a) for a in axes])
        out.append(
            FieldWithDerivs(ad.reshape(fw.value, shape), {k: ad.reshape(v, shape) for k, v in fw.derivs.items()})
        )
    return out


def model_fields(model, u_sensors, grids, pairwise=False) -> list[FieldWithDerivs]:
    if isinstance(model, SepOnetModel):
        return seponet_fields(model, u_sensors, grids)
    return deeponet_fields(model, u_sensors, grids, pairwise=pairwise)


def predict_grid(model, u_sensors, axes) -> np.ndarray:
    """Plain-array prediction on a grid for either model kind."""
    if isinstance(model, SepOnetModel):
        return np.asarray(seponet_forward(model, u_sensors, axes))
    pred = np.asarray(deeponet_forward(model, u_sensors, meshgrid_points(axes)))
    return pred.reshape(pred.shape[0], *[np.size(a) for a in axes])


# ---------------------------------------------------------------------------
# serialisation: b"SEPM" | u64 header length | JSON header | float64 LE blocks

MODEL_MAGIC = b"SEPM"


def _architecture(model) -> dict:
    def net(p: MlpParams):
        return {
            "activation": p.activation,
            "sizes": [p.in_dim] + [np.shape(value_of(W))[0] for W, _ in p.layers],
        }

    arch = {"kind": model.kind, "r": model.r, "d": model.d, "m": model.m, "branch": net(model.branch)}
    if isinstance(model, SepOnetModel):
        arch["trunks"] = [net(t) for t in model.trunks]
    else:
        arch["trunk"] = net(model.trunk)
    return arch


def _skeleton(arch: dict):
    def net(spec):
        sizes = spec["sizes"]
        layers = tuple(
            (np.zeros((o, i)), np.zeros(o)) for i, o in zip(sizes[:-1], sizes[1:])
        )
        return MlpParams(layers, spec["activation"])

    if arch["kind"] == "seponet":
        return SepOnetModel(net(arch["branch"]), tuple(net(t) for t in arch["trunks"]))
    return DeepOnetModel(net(arch["branch"]), net(arch["trunk"]))


def write_param_file(path, header: dict, blocks: Sequence[np.ndarray]) -> None:
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for blk in blocks:
            fh.write(np.ascontiguousarray(blk, dtype="<f8").tobytes())


def read_param_file(path) -> tuple[dict, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != MODEL_MAGIC:
        raise ValueError(f"{path} is not a parameter file")
    (n,) = struct.unpack("<Q", raw[4:12])
    header = json.loads(raw[12 : 12 + n].decode("utf-8"))
    data = np.frombuffer(raw[12 + n :], dtype="<f8").astype(DTYPE)
    return header, data


def save_model(path, model, seed: int | None = None, extra: dict | None = None) -> None:
    header = {"architecture": _architecture(model), "seed": seed, "n_params": n_params(model)}
    if extra:
        header.update(extra)
    write_param_file(path, header, [flatten(model)])


def load_model(path):
    header, data = read_param_file(path)
    model = _skeleton(header["architecture"])
    n = n_params(model)
    return unflatten(model, data[:n].copy()), header
