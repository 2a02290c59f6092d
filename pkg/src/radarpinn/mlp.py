"""Fully-connected tanh networks with exact second derivatives in their inputs.

Second derivatives with respect to the two inputs ``(x, t)`` are carried
forward through the network as truncated Taylor coefficients ("jets"). The
jets are built from :mod:`radarpinn.autodiff` operations, so a loss that uses
them can be differentiated in reverse mode with respect to every weight.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

OUTPUT_ACTIVATIONS = ("identity", "exponential")
DEFAULT_HIDDEN = (64, 64)


class NonFiniteLoss(FloatingPointError):
    pass


@dataclass(frozen=True)
class MlpParams:
    """Weights are stored as ``(fan_in, fan_out)`` matrices, applied as ``h @ W + b``."""

    layer_sizes: tuple[int, ...]
    weights: tuple = field(repr=False)
    biases: tuple = field(repr=False)
    hidden_activation: str = "tanh"
    output_activation: str = "identity"
    # Fixed input normalisation u = (inputs - input_shift) * input_scale.
    input_shift: tuple[float, ...] | None = None
    input_scale: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(n) for n in self.layer_sizes))
        n_in = self.layer_sizes[0] if self.layer_sizes else 0
        shift = (0.0,) * n_in if self.input_shift is None else tuple(float(v) for v in self.input_shift)
        scale = (1.0,) * n_in if self.input_scale is None else tuple(float(v) for v in self.input_scale)
        if len(shift) != n_in or len(scale) != n_in:
            raise ValueError("input normalisation needs one shift and one scale per input")
        object.__setattr__(self, "input_shift", shift)
        object.__setattr__(self, "input_scale", scale)
        object.__setattr__(self, "weights", tuple(self.weights))
        object.__setattr__(self, "biases", tuple(self.biases))
        _check_sizes(self.layer_sizes)
        if self.hidden_activation != "tanh":
            raise ValueError(f"unsupported hidden activation {self.hidden_activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unsupported output activation {self.output_activation!r}")
        pairs = list(zip(self.layer_sizes, self.layer_sizes[1:]))
        if len(self.weights) != len(pairs) or len(self.biases) != len(pairs):
            raise ValueError("one weight matrix and bias vector needed per layer transition")
        for (n_in, n_out), w, b in zip(pairs, self.weights, self.biases):
            if ad.value_of(w).shape != (n_in, n_out) or ad.value_of(b).shape != (n_out,):
                raise ValueError(
                    f"layer {n_in}->{n_out} has weight {ad.value_of(w).shape}, "
                    f"bias {ad.value_of(b).shape}"
                )

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_params(self) -> int:
        return sum(ad.value_of(w).size + ad.value_of(b).size for w, b in zip(self.weights, self.biases))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(ad.value_of(a))) for a in (*self.weights, *self.biases))


def _check_sizes(sizes: Sequence[int]):
    if len(sizes) < 2 or any(n < 1 for n in sizes):
        raise ValueError(f"layer sizes must list at least input and output widths >= 1, got {sizes}")


def init_params(
    seed: int,
    layer_sizes: Sequence[int] = (2, *DEFAULT_HIDDEN, 1),
    output_activation: str = "identity",
    *,
    first_layer_gain: float = 1.0,
    input_range: Sequence[tuple[float, float]] | None = None,
) -> MlpParams:
    """Glorot-uniform weights and zero biases, reproducible from ``seed``.

    ``input_range`` installs a fixed map of each input interval onto [-1, 1];
    ``first_layer_gain`` widens the first weight matrix's uniform range.
    """
    _check_sizes(layer_sizes)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for i, (n_in, n_out) in enumerate(zip(layer_sizes, layer_sizes[1:])):
        limit = np.sqrt(6.0 / (n_in + n_out)) * (first_layer_gain if i == 0 else 1.0)
        weights.append(rng.uniform(-limit, limit, size=(n_in, n_out)))
        biases.append(np.zeros(n_out))
    shift = scale = None
    if input_range is not None:
        if len(input_range) != layer_sizes[0]:
            raise ValueError("one (lo, hi) input range per network input required")
        shift = tuple(0.5 * (lo + hi) for lo, hi in input_range)
        scale = tuple(2.0 / (hi - lo) for lo, hi in input_range)
    return MlpParams(
        tuple(layer_sizes), tuple(weights), tuple(biases), "tanh", output_activation, shift, scale
    )


# -- pytrees -------------------------------------------------------------------
# Parameters travel as nested dicts/lists/tuples/dataclasses of arrays; these
# helpers let the optimizer and the gradient driver treat them uniformly.


def tree_leaves(tree) -> list:
    if isinstance(tree, dict):
        return [leaf for k in sorted(tree) for leaf in tree_leaves(tree[k])]
    if isinstance(tree, (list, tuple)):
        return [leaf for item in tree for leaf in tree_leaves(item)]
    if isinstance(tree, MlpParams):
        return tree_leaves(tree.weights) + tree_leaves(tree.biases)
    return [tree]


def tree_map(fn: Callable, tree, *rest):
    if isinstance(tree, dict):
        return {k: tree_map(fn, tree[k], *(r[k] for r in rest)) for k in tree}
    if isinstance(tree, (list, tuple)):
        out = [tree_map(fn, t, *(r[i] for r in rest)) for i, t in enumerate(tree)]
        return type(tree)(out)
    if isinstance(tree, MlpParams):
        return replace(
            tree,
            weights=tree_map(fn, tree.weights, *(r.weights for r in rest)),
            biases=tree_map(fn, tree.biases, *(r.biases for r in rest)),
        )
    return fn(tree, *rest)


# -- evaluation ----------------------------------------------------------------


@dataclass
class Jet:
    """Value plus first and pure second partials along the two inputs.

    ``None`` stands for an identically-zero coefficient.
    """

    value: Any
    d_dx: Any = None
    d_dt: Any = None
    d2_dx2: Any = None
    d2_dt2: Any = None


@dataclass(frozen=True)
class SecondOrderEval:
    value: np.ndarray
    d_dx: np.ndarray
    d_dt: np.ndarray
    d2_dx2: np.ndarray
    d2_dt2: np.ndarray


def _traced(params: MlpParams) -> bool:
    return any(isinstance(a, Tensor) for a in (*params.weights, *params.biases))


def _as_batch(inputs, n_inputs: int) -> np.ndarray:
    arr = np.asarray(inputs, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :] if arr.shape[0] == n_inputs and n_inputs > 1 else arr[:, None]
    if arr.ndim != 2 or arr.shape[1] != n_inputs:
        raise ValueError(f"network expects {n_inputs} inputs, got array of shape {np.shape(inputs)}")
    return arr


def forward_batch(params: MlpParams, inputs, pre_activation: bool = False):
    """Network output for a batch of shape ``(N, n_inputs)``; returns shape ``(N,)``.

    ``pre_activation`` skips the output activation.
    """
    u = (_as_batch(inputs, params.n_inputs) - np.asarray(params.input_shift)) * np.asarray(params.input_scale)
    h = ad.as_tensor(u) if _traced(params) else u
    n = len(params.weights)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        h = ad.tanh(z) if i < n - 1 else z
    out = h[:, 0]
    if params.output_activation == "exponential" and not pre_activation:
        out = ad.exp(out)
    return out


def forward(params: MlpParams, inputs):
    """Scalar output for one input vector (or ``(N,)`` outputs for a batch)."""
    single = np.ndim(inputs) == 1 and np.shape(inputs)[0] == params.n_inputs
    out = forward_batch(params, inputs)
    if single and not isinstance(out, Tensor):
        return float(out[0])
    return out


def _mul(a, b):
    if a is None or b is None:
        return None
    return a * b


def _add(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a + b


def _square(a):
    if a is None:
        return None
    return a.square() if isinstance(a, Tensor) else a * a


def _matmul(a, w):
    return None if a is None else a @ w


def jet_forward(params: MlpParams, x, t) -> Jet:
    """Propagate the second-order jet through a 2-input network.

    Works on plain arrays or traced parameters; in the latter case every
    coefficient of the returned jet is a :class:`Tensor`.
    """
    if params.n_inputs != 2:
        raise ValueError(f"second-order evaluation needs a (x, t) network, got {params.n_inputs} inputs")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    t = np.atleast_1d(np.asarray(t, dtype=float))
    x, t = np.broadcast_arrays(x, t)
    (sx, st), (kx, kt) = params.input_shift, params.input_scale
    inputs = np.stack([(x.ravel() - sx) * kx, (t.ravel() - st) * kt], axis=1)
    traced = _traced(params)
    w0, b0 = params.weights[0], params.biases[0]

    z_val = (ad.as_tensor(inputs) if traced else inputs) @ w0 + b0
    # d(inputs)/dx = (kx, 0), d(inputs)/dt = (0, kt): first-layer slopes are scaled rows of W.
    z = Jet(z_val, w0[0:1, :] * kx, w0[1:2, :] * kt, None, None)

    n = len(params.weights)
    for i in range(1, n):
        s = ad.tanh(z.value)
        ds = 1.0 - _square(s)
        dds = (-2.0) * (s * ds)
        a = Jet(
            s,
            _mul(ds, z.d_dx),
            _mul(ds, z.d_dt),
            _add(_mul(dds, _square(z.d_dx)), _mul(ds, z.d2_dx2)),
            _add(_mul(dds, _square(z.d_dt)), _mul(ds, z.d2_dt2)),
        )
        w, b = params.weights[i], params.biases[i]
        z = Jet(
            a.value @ w + b,
            _matmul(a.d_dx, w),
            _matmul(a.d_dt, w),
            _matmul(a.d2_dx2, w),
            _matmul(a.d2_dt2, w),
        )

    out = Jet(*(None if c is None else c[:, 0] for c in
                (z.value, z.d_dx, z.d_dt, z.d2_dx2, z.d2_dt2)))
    if params.output_activation == "exponential":
        e = ad.exp(out.value)
        out = Jet(
            e,
            _mul(e, out.d_dx),
            _mul(e, out.d_dt),
            _mul(e, _add(_square(out.d_dx), out.d2_dx2)),
            _mul(e, _add(_square(out.d_dt), out.d2_dt2)),
        )
    return out


def eval_second_order(params: MlpParams, x, t) -> SecondOrderEval:
    """Value, gradient and pure second partials of a 2-input network at ``(x, t)``.

    Scalars in give scalars out; arrays broadcast.
    """
    if _traced(params):
        raise TypeError("eval_second_order is the numeric API; use jet_forward inside losses")
    shape = np.broadcast(np.asarray(x), np.asarray(t)).shape
    jet = jet_forward(params, x, t)
    n = int(np.prod(shape)) if shape else 1
    parts = []
    for c in (jet.value, jet.d_dx, jet.d_dt, jet.d2_dx2, jet.d2_dt2):
        arr = np.zeros(n) if c is None else np.broadcast_to(np.asarray(c, dtype=float), (n,)).copy()
        parts.append(float(arr[0]) if not shape else arr.reshape(shape))
    return SecondOrderEval(*parts)


# -- reverse-mode driver ---------------------------------------------------------


def loss_gradient(loss: Callable[[Any], Tensor], params):
    """Evaluate ``loss(params)`` and its gradient with respect to every array leaf.

    ``params`` is any nesting of dicts, lists, tuples and :class:`MlpParams`
    holding arrays. The loss receives the same structure with traced leaves and
    must return a scalar :class:`Tensor` (or a constant). The gradient comes
    back with the structure of ``params``.
    """
    traced = tree_map(ad.leaf, params)
    out = loss(traced)
    if not isinstance(out, Tensor):
        value = float(np.asarray(out))
        if not np.isfinite(value):
            raise NonFiniteLoss(f"loss evaluated to {value}")
        return value, tree_map(lambda a: np.zeros_like(np.asarray(a, dtype=float)), params)
    value = float(out.value)
    if not np.isfinite(value):
        raise NonFiniteLoss(f"loss evaluated to {value}")
    if out.requires_grad:
        out.backward()
    grads = tree_map(lambda t: np.zeros_like(t.value) if t.grad is None else t.grad, traced)
    return value, grads


# -- checkpoints -----------------------------------------------------------------


def _hex(a) -> list[str]:
    return [float(v).hex() for v in np.asarray(a, dtype=float).ravel()]


def params_to_dict(params: MlpParams) -> dict:
    return {
        "layer_sizes": list(params.layer_sizes),
        "hidden_activation": params.hidden_activation,
        "output_activation": params.output_activation,
        "input_shift": _hex(params.input_shift),
        "input_scale": _hex(params.input_scale),
        "weights": [_hex(w) for w in params.weights],
        "biases": [_hex(b) for b in params.biases],
    }


def params_from_dict(data: dict) -> MlpParams:
    sizes = tuple(data["layer_sizes"])
    weights, biases = [], []
    for (n_in, n_out), w, b in zip(zip(sizes, sizes[1:]), data["weights"], data["biases"]):
        weights.append(np.array([float.fromhex(v) for v in w]).reshape(n_in, n_out))
        biases.append(np.array([float.fromhex(v) for v in b]))
    shift = [float.fromhex(v) for v in data["input_shift"]] if "input_shift" in data else None
    scale = [float.fromhex(v) for v in data["input_scale"]] if "input_scale" in data else None
    return MlpParams(
        sizes,
        tuple(weights),
        tuple(biases),
        data["hidden_activation"],
        data["output_activation"],
        shift,
        scale,
    )


def dump_params(params: MlpParams) -> str:
    return json.dumps(params_to_dict(params))


def load_params(text: str) -> MlpParams:
    return params_from_dict(json.loads(text))
