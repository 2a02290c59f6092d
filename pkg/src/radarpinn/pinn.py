"""Permittivity inversion with physics-informed networks.

Two model families share one training loop:

* model 1 learns one log-permittivity per known layer alongside a field network;
* model 2 learns a separate permittivity network ``eps_r(x)`` with an
  exponential output, so the layer structure need not be known.

Both minimise ``lambda_data * L_data + lambda_pde * L_pde`` where the physics
term is the mean squared residual of the time-scaled 1-D wave equation
``E_tt - C / (mu0 * eps) * E_xx`` at random collocation points.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Sequence

import numpy as np

from . import autodiff as ad
from .domain import EPS0, MU0, LayeredProfile, SampledProfile
from .fdtd import WaveRecordSet
from .mlp import (
    MlpParams,
    NonFiniteLoss,
    forward_batch,
    init_params,
    jet_forward,
    loss_gradient,
    params_from_dict,
    params_to_dict,
    tree_leaves,
    tree_map,
)

log = logging.getLogger(__name__)


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss twice; ``state`` is the last finite one."""

    def __init__(self, message: str, state=None, history=None):
        super().__init__(message)
        self.state = state
        self.history = history


@dataclass(frozen=True)
class LossWeights:
    lambda_data: float = 1.0
    lambda_pde: float = 1.0

    def __post_init__(self):
        if self.lambda_data < 0 or self.lambda_pde < 0:
            raise ValueError("loss weights must be non-negative")
        if self.lambda_data == 0 and self.lambda_pde == 0:
            raise ValueError("at least one loss weight must be positive")


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 0.01
    decay_factor: float = 0.1
    decay_every: int = 1000
    epochs: int = 5000
    n_collocation: int = 10_000
    loss_weights: LossWeights = LossWeights()
    seed: int = 0
    scale_c: float = 1e-18
    time_scale: float = 1e9
    hidden: tuple[int, ...] = (64, 64)
    max_samples_per_trace: int = 512
    early_stop_window: int = 200
    early_stop_tol: float = 1e-6
    init_eps_r: float = 4.0
    normalize_traces: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    profile_points: int = 201
    normalize_inputs: bool = True
    first_layer_gain: float = 20.0  # spreads first-layer tanh knees across the normalized box

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ValueError("lr0 must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.n_collocation < 1:
            raise ValueError("n_collocation must be at least 1")
        if self.decay_every < 1:
            raise ValueError("decay_every must be at least 1")
        if isinstance(self.loss_weights, dict):
            object.__setattr__(self, "loss_weights", LossWeights(**self.loss_weights))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        if "loss_weights" in data and isinstance(data["loss_weights"], dict):
            data["loss_weights"] = LossWeights(**data["loss_weights"])
        if "hidden" in data:
            data["hidden"] = tuple(data["hidden"])
        return cls(**data)

    @property
    def wave_coeff(self) -> float:
        """``C / (mu0 * eps0)``: squared vacuum speed in scaled (m per time-unit) units."""
        return self.scale_c / (MU0 * EPS0)


@dataclass
class Model1State:
    field_net: MlpParams
    log_eps: np.ndarray
    boundaries: tuple[float, ...]

    @property
    def eps_r(self) -> np.ndarray:
        return np.exp(ad.value_of(self.log_eps))


@dataclass
class Model2State:
    field_net: MlpParams
    perm_net: MlpParams


# -- elementary operations -------------------------------------------------------


def scale_inputs(x, t, time_scale: float = 1e9):
    return x, np.asarray(t) * time_scale if np.ndim(t) else t * time_scale


def descale_time(t_scaled, time_scale: float = 1e9):
    return np.asarray(t_scaled) / time_scale if np.ndim(t_scaled) else t_scaled / time_scale


def data_loss(predicted, observed):
    """Mean squared misfit; works on arrays or traced tensors."""
    observed = np.asarray(observed, dtype=float)
    n = observed.size
    if n == 0:
        raise ValueError("data loss needs at least one observation")
    if np.shape(ad.value_of(predicted)) != observed.shape:
        raise ValueError(
            f"predicted shape {np.shape(ad.value_of(predicted))} != observed {observed.shape}"
        )
    diff = predicted - observed
    if isinstance(diff, ad.Tensor):
        return diff.square().mean()
    return float(np.mean(diff * diff))


def _residual(jet, inv_mu_eps_c):
    """``E_tt - (C / (mu eps)) * E_xx`` from a jet; zero-valued partials may be ``None``."""
    e_tt = 0.0 if jet.d2_dt2 is None else jet.d2_dt2
    e_xx = 0.0 if jet.d2_dx2 is None else jet.d2_dx2
    return e_tt - inv_mu_eps_c * e_xx


def wave_residual(derivs, eps_abs, C: float = 1e-18):
    """Wave-equation residual from any bundle with ``d2_dt2``/``d2_dx2`` (e.g. a closed form)."""
    eps_abs = np.asarray(eps_abs, dtype=float)
    if np.any(~(eps_abs > 0)):
        raise ValueError("absolute permittivity must be positive")
    res = np.asarray(ad.value_of(_residual(derivs, C / (MU0 * eps_abs))), dtype=float)
    if not np.all(np.isfinite(res)):
        raise NonFiniteLoss("non-finite wave-equation residual")
    return res


def pde_residual(field_net: MlpParams, eps_abs, x_scaled, t_scaled, C: float = 1e-18):
    """Residual of the time-scaled wave equation; ``eps_abs`` is absolute permittivity in F/m."""
    jet = jet_forward(field_net, x_scaled, t_scaled)
    res = np.broadcast_to(wave_residual(jet, eps_abs, C), np.shape(jet.value)).copy()
    if np.ndim(x_scaled) == 0 and np.ndim(t_scaled) == 0:
        return float(res[0])
    return res


def sample_collocation(n: int, x_range, t_range, seed) -> np.ndarray:
    """``n`` uniform points over ``x_range x t_range``; returns shape ``(n, 2)``."""
    if n < 1:
        raise ValueError("need at least one collocation point")
    (x0, x1), (t0, t1) = x_range, t_range
    if not (x1 > x0 and t1 > t0):
        raise ValueError(f"empty collocation box {x_range} x {t_range}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    u = rng.random((n, 2))
    return np.column_stack([x0 + (x1 - x0) * u[:, 0], t0 + (t1 - t0) * u[:, 1]])


def learning_rate(step: int, config: TrainConfig) -> float:
    return config.lr0 * config.decay_factor ** (step // config.decay_every)


@dataclass
class AdamState:
    m: Any
    v: Any
    count: int = 0


def adam_init(params) -> AdamState:
    zeros = tree_map(lambda a: np.zeros_like(np.asarray(a, dtype=float)), params)
    return AdamState(zeros, tree_map(np.copy, zeros), 0)


def adam_step(params, grads, step: int, config: TrainConfig, state: AdamState | None = None):
    """One Adam update at the staircase learning rate for ``step``.

    Returns ``(new_params, new_state)``; inputs are left untouched.
    """
    state = adam_init(params) if state is None else state
    lr = learning_rate(step, config)
    b1, b2, eps = config.beta1, config.beta2, config.adam_eps
    count = state.count + 1

    def check(p, g):
        if np.shape(p) != np.shape(g):
            raise ValueError(f"gradient shape {np.shape(g)} does not match parameter {np.shape(p)}")
        return g

    tree_map(check, params, grads)
    m = tree_map(lambda m_, g: b1 * m_ + (1 - b1) * g, state.m, grads)
    v = tree_map(lambda v_, g: b2 * v_ + (1 - b2) * g * g, state.v, grads)
    c1, c2 = 1 - b1**count, 1 - b2**count
    new = tree_map(
        lambda p, m_, v_: p - lr * (m_ / c1) / (np.sqrt(v_ / c2) + eps), params, m, v
    )
    return new, AdamState(m, v, count)


# -- observations ------------------------------------------------------------------


@dataclass(frozen=True)
class Observations:
    x: np.ndarray
    t: np.ndarray
    e: np.ndarray
    x_range: tuple[float, float]
    t_range: tuple[float, float]
    norm: float


def build_observations(records: WaveRecordSet, config: TrainConfig) -> Observations:
    """Flatten every (receiver, time sample) pair into scaled PINN inputs."""
    if len(records.rx_positions) < 1:
        raise ValueError("need at least one receiver trace")
    nt = records.nt
    stride = max(1, math.ceil(nt / config.max_samples_per_trace))
    idx = np.arange(0, nt, stride)
    traces = np.asarray(records.traces, dtype=float)
    norm = float(np.max(np.abs(traces))) if config.normalize_traces else 1.0
    if not norm > 0:
        raise ValueError("records are identically zero")
    t_scaled = records.times[idx] * config.time_scale
    xs = np.asarray(records.rx_positions, dtype=float)
    x_grid, t_grid = np.meshgrid(xs, t_scaled, indexing="ij")
    e = traces[:, idx] / norm
    x_lo, x_hi = float(xs.min()), float(xs.max())
    if x_hi - x_lo <= 0:
        # A single receiver still needs a spatial extent for collocation.
        x_lo, x_hi = x_lo - 0.05, x_hi + 0.05
    t_hi = float(records.times[-1] * config.time_scale)
    return Observations(x_grid.ravel(), t_grid.ravel(), e.ravel(), (x_lo, x_hi), (0.0, t_hi), norm)


# -- losses ----------------------------------------------------------------------------


def _layer_onehot(x: np.ndarray, boundaries: Sequence[float], n_layers: int) -> np.ndarray:
    idx = np.searchsorted(np.asarray(boundaries, dtype=float), x, side="right")
    return np.eye(n_layers)[idx]


def _inv_eps_r(state, x: np.ndarray):
    """``1 / eps_r`` at positions ``x`` expressed as ``exp(-log eps_r)``."""
    if isinstance(state, Model1State):
        n_layers = len(state.boundaries) + 1
        log_eps = _layer_onehot(x, state.boundaries, n_layers) @ state.log_eps
    else:
        log_eps = forward_batch(state.perm_net, x[:, None], pre_activation=True)
    return ad.exp(-log_eps)


def physics_loss(state, collocation_points, C: float = 1e-18):
    pts = np.asarray(collocation_points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 1:
        raise ValueError("need at least one (x, t) collocation point")
    jet = jet_forward(state.field_net, pts[:, 0], pts[:, 1])
    coeff = (C / (MU0 * EPS0)) * _inv_eps_r(state, pts[:, 0])
    res = _residual(jet, coeff)
    if isinstance(res, ad.Tensor):
        return res.square().mean()
    res = np.broadcast_to(np.asarray(res, dtype=float), (pts.shape[0],))
    return float(np.mean(res * res))


@dataclass(frozen=True)
class LossParts:
    total: float
    data: float
    pde: float


def total_loss(state, obs: Observations, collocation, config: TrainConfig):
    """Weighted data + physics loss. Returns ``(total, data, pde)`` as tensors or floats."""
    w = config.loss_weights
    pred = forward_batch(state.field_net, np.column_stack([obs.x, obs.t]))
    l_data = data_loss(pred, obs.e)
    l_pde = physics_loss(state, collocation, config.scale_c)
    return w.lambda_data * l_data + w.lambda_pde * l_pde, l_data, l_pde


# -- training ----------------------------------------------------------------------------


@dataclass
class TrainReport:
    model: int
    loss_history: np.ndarray
    final_state: Any
    recovered: LayeredProfile | SampledProfile
    seed: int
    config: TrainConfig
    epochs_run: int
    stopped_early: bool = False
    lr_restarts: int = 0
    preprocessing: tuple[str, ...] = ()
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        if isinstance(self.final_state, Model1State):
            state = {
                "field_net": params_to_dict(self.final_state.field_net),
                "log_eps": [float(v).hex() for v in self.final_state.log_eps],
                "boundaries": list(self.final_state.boundaries),
            }
        else:
            state = {
                "field_net": params_to_dict(self.final_state.field_net),
                "perm_net": params_to_dict(self.final_state.perm_net),
            }
        return {
            "model": self.model,
            "seed": self.seed,
            "epochs_run": self.epochs_run,
            "stopped_early": self.stopped_early,
            "lr_restarts": self.lr_restarts,
            "preprocessing": list(self.preprocessing),
            "config": self.config.to_dict(),
            "loss_history": {
                "total": self.loss_history[:, 0].tolist(),
                "data": self.loss_history[:, 1].tolist(),
                "pde": self.loss_history[:, 2].tolist(),
            },
            "recovered": self.recovered.to_dict(),
            "state": state,
            "extra": self.extra,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainReport":
        from .domain import profile_from_dict

        st = data["state"]
        if data["model"] == 1:
            state = Model1State(
                params_from_dict(st["field_net"]),
                np.array([float.fromhex(v) for v in st["log_eps"]]),
                tuple(st["boundaries"]),
            )
        else:
            state = Model2State(params_from_dict(st["field_net"]), params_from_dict(st["perm_net"]))
        hist = data["loss_history"]
        return cls(
            model=data["model"],
            loss_history=np.column_stack([hist["total"], hist["data"], hist["pde"]]).reshape(-1, 3),
            final_state=state,
            recovered=profile_from_dict(data["recovered"]),
            seed=data["seed"],
            config=TrainConfig.from_dict(data["config"]),
            epochs_run=data["epochs_run"],
            stopped_early=data["stopped_early"],
            lr_restarts=data["lr_restarts"],
            preprocessing=tuple(data["preprocessing"]),
            extra=data.get("extra", {}),
        )

    def history_csv(self) -> str:
        lines = ["epoch,total,data,pde"]
        for i, (tot, dat, pde) in enumerate(self.loss_history, start=1):
            lines.append(f"{i},{float(tot)!r},{float(dat)!r},{float(pde)!r}")
        return "\n".join(lines) + "\n"


def _state_from(params: dict, model: int, boundaries):
    if model == 1:
        return Model1State(params["field"], params["log_eps"], tuple(boundaries))
    return Model2State(params["field"], params["perm"])


def _fit(model: int, records: WaveRecordSet, config: TrainConfig, boundaries=()) -> TrainReport:
    obs = build_observations(records, config)
    sizes = (2, *config.hidden, 1)
    box = [obs.x_range, obs.t_range] if config.normalize_inputs else None
    params: dict[str, Any] = {
        "field": init_params(
            config.seed, sizes, "identity", first_layer_gain=config.first_layer_gain, input_range=box
        )
    }
    if model == 1:
        params["log_eps"] = np.full(len(boundaries) + 1, math.log(config.init_eps_r))
    else:
        perm = init_params(
            config.seed + 1,
            (1, *config.hidden, 1),
            "exponential",
            input_range=[obs.x_range] if config.normalize_inputs else None,
        )
        # Start the permittivity network near the model-1 initial guess.
        biases = list(perm.biases)
        biases[-1] = biases[-1] + math.log(config.init_eps_r)
        params["perm"] = replace(perm, biases=tuple(biases))

    rng = np.random.default_rng([config.seed, 0x5EED])
    adam = adam_init(params)
    history: list[tuple[float, float, float]] = []
    checkpoint = (params, adam)
    lr_restarts = 0
    lr_scale = 1.0
    stopped_early = False
    parts: dict[str, float] = {}

    def loss(p):
        total, l_data, l_pde = total_loss(_state_from(p, model, boundaries), obs, colloc, config)
        parts["data"] = float(ad.value_of(l_data))
        parts["pde"] = float(ad.value_of(l_pde))
        return total

    step_config = config
    for epoch in range(config.epochs):
        colloc = sample_collocation(config.n_collocation, obs.x_range, obs.t_range, rng)
        try:
            value, grads = loss_gradient(loss, params)
            finite = all(np.all(np.isfinite(g)) for g in tree_leaves(grads))
            if not finite:
                raise NonFiniteLoss("non-finite gradient")
        except NonFiniteLoss as exc:
            if lr_restarts >= 1:
                raise DivergenceError(
                    f"loss diverged twice (epoch {epoch + 1}): {exc}",
                    _state_from(checkpoint[0], model, boundaries),
                    np.array(history),
                ) from None
            log.warning("non-finite loss at epoch %d; restoring checkpoint, lr x0.1", epoch + 1)
            lr_restarts += 1
            lr_scale *= 0.1
            step_config = replace(config, lr0=config.lr0 * lr_scale)
            params, adam = checkpoint
            continue
        history.append((float(value), parts["data"], parts["pde"]))
        checkpoint = (params, adam)
        params, adam = adam_step(params, grads, epoch, step_config, adam)
        if _plateaued(history, config):
            stopped_early = True
            break

    state = _state_from(params, model, boundaries)
    if model == 1:
        recovered = LayeredProfile(
            tuple(boundaries), tuple(state.eps_r), obs.x_range[0], obs.x_range[1], floor=0.0
        )
    else:
        xs = np.linspace(obs.x_range[0], obs.x_range[1], config.profile_points)
        recovered = predict_profile(state, xs)
    return TrainReport(
        model=model,
        loss_history=np.array(history, dtype=float).reshape(-1, 3),
        final_state=state,
        recovered=recovered,
        seed=config.seed,
        config=config,
        epochs_run=len(history),
        stopped_early=stopped_early,
        lr_restarts=lr_restarts,
        preprocessing=tuple(records.meta.get("processing_tags", ())),
    )


def _plateaued(history, config: TrainConfig) -> bool:
    w = config.early_stop_window
    if w <= 0 or len(history) <= w:
        return False
    totals = [h[0] for h in history]
    before = min(totals[:-w])
    recent = min(totals[-w:])
    return (before - recent) <= config.early_stop_tol * abs(before)


def predict_profile(state: Model2State, xs) -> SampledProfile:
    """Evaluate the permittivity network on ``xs`` (no time dependence by construction)."""
    xs = np.asarray(xs, dtype=float).ravel()
    eps = forward_batch(state.perm_net, xs[:, None])
    return SampledProfile(xs, np.asarray(eps, dtype=float))


def train_model1(records: WaveRecordSet, boundaries: Sequence[float], config: TrainConfig = TrainConfig()) -> TrainReport:
    """Known layer edges: learn one permittivity per layer together with the field network."""
    boundaries = tuple(float(b) for b in boundaries)
    xs = records.rx_positions
    if any(b <= min(xs) or b >= max(xs) for b in boundaries):
        raise ValueError(f"boundaries {boundaries} must lie strictly inside the receiver span")
    if any(b2 <= b1 for b1, b2 in zip(boundaries, boundaries[1:])):
        raise ValueError("boundaries must increase strictly")
    return _fit(1, records, config, boundaries)


def train_model2(records: WaveRecordSet, config: TrainConfig = TrainConfig()) -> TrainReport:
    """Unknown layering: learn a continuous permittivity network alongside the field network."""
    return _fit(2, records, config)
