"""Training targets and single-update functions for every objective.

All update functions share one shape: they take the network, a
:class:`TrainState`, one batch of ``(x0, x1, labels)`` and a numpy
``Generator``, and return ``(losses, new_state)`` where ``losses`` is a dict
of python floats.  Bootstrap targets are always computed with the EMA
weights through the no-grad path and are constants in the loss.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autograd as ag
from .errors import ConfigError, ContractError, ShapeError
from .net import NetConfig, Params, StepGrid, VelocityNet
from .optim import TrainState, swap_in_ema
from .sampler import integrate

Batch = tuple  # (x0, x1, labels-or-None)


@dataclass(frozen=True)
class BatchPlan:
    batch_size: int = 256
    k: float = 0.25

    def __post_init__(self):
        if not 0.0 <= self.k <= 1.0:
            raise ConfigError(f"k must lie in [0, 1], got {self.k}")
        if self.batch_size <= 0:
            raise ConfigError("batch_size must be positive")

    @property
    def n_bootstrap(self) -> int:
        return int(round(self.k * self.batch_size))

    @property
    def n_flow(self) -> int:
        return self.batch_size - self.n_bootstrap


def interpolate(x0, x1, t):
    """x_t = (1 - t) x0 + t x1 and the straight-line velocity x1 - x0."""
    x0, x1 = np.asarray(x0), np.asarray(x1)
    if x0.shape != x1.shape:
        raise ShapeError(f"interpolate: shape mismatch {x0.shape} vs {x1.shape}")
    t = np.asarray(t, dtype=x0.dtype)
    if t.ndim == 1:
        t = t[:, None]
    return (1 - t) * x0 + t * x1, x1 - x0


def sample_d_t(grid: StepGrid, rng: np.random.Generator, n: int):
    """Draw per-row (query bucket, trained bucket, t, d_half) for bootstrap rows.

    d_half is uniform over {1/M, 2/M, ..., 1/2}; the trained step is 2*d_half
    and t is uniform over the multiples of 2*d_half in [0, 1 - 2*d_half].
    """
    if grid.M < 2:
        raise ConfigError("self-consistency needs M >= 2")
    j = rng.integers(0, grid.log2_m, size=n)  # d_half = 2**j / M
    d_half = np.ldexp(1.0, j) / grid.M
    slots = grid.M >> (j + 1)  # multiples of 2d that fit below 1
    t = np.floor(rng.random(n) * slots) * (2 * d_half)
    return j.astype(np.intp), (j + 1).astype(np.intp), t, d_half


def make_shortcut_targets(
    net: VelocityNet,
    ema_params: Params,
    xt,
    t,
    d_half,
    labels=None,
    cfg_scale: float | None = None,
):
    """Self-consistency targets: the average of two chained half steps.

    Half-step queries at d = 1/M use the d = 0 embedding, and only those get
    classifier-free guidance.  Returns ``(s_target, trained_bucket)``.
    """
    xt = np.asarray(xt, dtype=np.float32)
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (len(xt),))
    d_half = np.broadcast_to(np.asarray(d_half, dtype=np.float64), (len(xt),))
    if np.any(d_half < 1.0 / net.grid.M - 1e-12):
        raise ContractError("d_half must be at least 1/M")
    if np.any(t + 2 * d_half > 1 + 1e-9):
        raise ContractError("t + 2*d_half exceeds 1")
    q_bucket = np.array([net.grid.bucket_for_d(d) for d in d_half], dtype=np.intp)
    dcol = d_half[:, None].astype(np.float32)
    s_t = net.predict(ema_params, xt, t, q_bucket, labels, cfg_scale)
    x_mid = xt + s_t * dcol
    s_mid = net.predict(ema_params, x_mid, np.minimum(t + d_half, 1.0), q_bucket, labels, cfg_scale)
    target = ag.stopgrad((s_t + s_mid) / 2).data
    return target, q_bucket + 1


def _labels_for(net: VelocityNet, labels):
    return labels if net.config.num_classes > 0 else None


@dataclass
class RegressionBatch:
    """Frozen inputs and targets for one mse regression step."""

    xt: np.ndarray
    t: np.ndarray
    buckets: np.ndarray
    target: np.ndarray
    labels: np.ndarray | None
    groups: dict[str, slice]

    def __len__(self) -> int:
        return len(self.xt)


def regression_loss(net: VelocityNet, params, rb: RegressionBatch, dropout_rng=None):
    """mse(s_theta(xt, t, bucket), target); a Tensor when params are tape-tracked."""
    pred = net.forward(params, rb.xt, rb.t, rb.buckets, rb.labels, dropout_rng=dropout_rng)
    return ag.mse(pred, ag.Tensor(rb.target)), pred


def fit(net: VelocityNet, state: TrainState, rb: RegressionBatch, rng: np.random.Generator):
    """One AdamW + EMA step on the regression batch; returns (losses, new_state)."""
    if len(rb) == 0:
        raise ContractError("empty batch")
    P = {k: ag.Tensor(v) for k, v in state.params.items()}
    with ag.Tape() as tape:
        tape.watch(P.values())
        loss, pred = regression_loss(net, P, rb, dropout_rng=rng)
    grads = tape.gradient(loss, P)
    err = np.sum((pred.data - rb.target) ** 2, axis=1, dtype=np.float64)
    dim = rb.target.shape[1]
    losses = {"loss": float(loss.data)}
    for name, sl in rb.groups.items():
        rows = err[sl]
        losses[name] = float(rows.mean() / dim) if rows.size else 0.0
    return losses, state.apply_gradients(grads)


def shortcut_batch(
    net: VelocityNet,
    ema_params: Params,
    batch: Batch,
    plan: BatchPlan,
    rng: np.random.Generator,
    cfg_scale: float | None = None,
) -> RegressionBatch:
    """One mixed batch for the shortcut objective.

    The first rows regress onto x1 - x0 at bucket 0 with t ~ U(0, 1); the
    last round(k * B) rows regress onto bootstrap targets at step size 2d.
    """
    x0, x1, labels = batch
    B = len(x0)
    if B == 0:
        raise ContractError("empty batch")
    labels = _labels_for(net, labels)
    n_sc = int(round(plan.k * B))
    n_fm = B - n_sc
    t_fm = rng.random(n_fm)
    xt_fm, v_fm = interpolate(x0[:n_fm], x1[:n_fm], t_fm)
    xt_parts, t_parts, b_parts, tgt_parts = [xt_fm], [t_fm], [np.zeros(n_fm, np.intp)], [v_fm]
    if n_sc:
        _, tb, t_sc, d_half = sample_d_t(net.grid, rng, n_sc)
        xt_sc, _ = interpolate(x0[n_fm:], x1[n_fm:], t_sc)
        lab_sc = None if labels is None else labels[n_fm:]
        s_target, trained = make_shortcut_targets(
            net, ema_params, xt_sc, t_sc, d_half, lab_sc, cfg_scale
        )
        xt_parts.append(xt_sc)
        t_parts.append(t_sc)
        b_parts.append(trained)
        tgt_parts.append(s_target)
    xt = np.concatenate(xt_parts).astype(np.float32)
    t = np.concatenate(t_parts)
    buckets = np.concatenate(b_parts)
    target = np.concatenate(tgt_parts).astype(np.float32)
    groups = {"flow": slice(0, n_fm), "consistency": slice(n_fm, B)}
    return RegressionBatch(xt, t, buckets, target, labels, groups)


def shortcut_update(
    net: VelocityNet,
    state: TrainState,
    batch: Batch,
    plan: BatchPlan,
    rng: np.random.Generator,
    cfg_scale: float | None = None,
):
    """Joint flow-matching + self-consistency update (targets from EMA weights)."""
    rb = shortcut_batch(net, swap_in_ema(state), batch, plan, rng, cfg_scale)
    return fit(net, state, rb, rng)


def flow_matching_batch(net: VelocityNet, batch: Batch, rng: np.random.Generator) -> RegressionBatch:
    x0, x1, labels = batch
    if len(x0) == 0:
        raise ContractError("empty batch")
    labels = _labels_for(net, labels)
    t = rng.random(len(x0))
    xt, v = interpolate(x0, x1, t)
    B = len(x0)
    return RegressionBatch(xt.astype(np.float32), t, np.zeros(B, np.intp), v.astype(np.float32),
                           labels, {"flow": slice(0, B)})


def flow_matching_update(net: VelocityNet, state: TrainState, batch: Batch, rng: np.random.Generator):
    """Plain flow matching: regress s(x_t, t, 0) onto x1 - x0 with t ~ U(0, 1)."""
    return fit(net, state, flow_matching_batch(net, batch, rng), rng)


# Consistency models (velocity space) ---------------------------------------


def ct_num_intervals(step: int, total_steps: int, num_phases: int, max_intervals: int) -> int:
    """Binary-time schedule: 1, 2, 4, ... intervals over equal training phases."""
    if total_steps <= 0 or num_phases <= 0:
        raise ConfigError("total_steps and num_phases must be positive")
    phase = min(num_phases - 1, (step * num_phases) // total_steps)
    return min(max_intervals, 2**phase)


def ct_time_grid(n_intervals: int, M: int) -> np.ndarray:
    """Discretization points spanning [0, 1 - 1/M]; t = 1 is never a pair member."""
    return np.arange(n_intervals + 1) * ((1.0 - 1.0 / M) / n_intervals)


def consistency_velocity_target(net, ema_params, x_t, t, x_next, t_next, labels=None):
    """(x1_hat - x_t) / (1 - t) where x1_hat is the EMA model's endpoint estimate from x_next."""
    t = np.asarray(t, dtype=np.float64)
    t_next = np.asarray(t_next, dtype=np.float64)
    v_next = net.predict(ema_params, x_next, t_next, 0, labels)
    x1_hat = x_next + v_next * (1 - t_next)[:, None].astype(np.float32)
    return ((x1_hat - x_t) / (1 - t)[:, None].astype(np.float32)).astype(np.float32)


def consistency_training_batch(net, ema_params, batch: Batch, rng, n_intervals: int) -> RegressionBatch:
    """Consistency between empirical points at adjacent discretization times."""
    x0, x1, labels = batch
    labels = _labels_for(net, labels)
    grid_t = ct_time_grid(n_intervals, net.grid.M)
    i = rng.integers(0, n_intervals, size=len(x0))
    t, t_next = grid_t[i], grid_t[i + 1]
    x_t, _ = interpolate(x0, x1, t)
    x_next, _ = interpolate(x0, x1, t_next)
    target = consistency_velocity_target(net, ema_params, x_t, t, x_next, t_next, labels)
    B = len(x0)
    return RegressionBatch(x_t.astype(np.float32), t, np.zeros(B, np.intp), target, labels,
                           {"consistency": slice(0, B)})


def consistency_training_update(net, state: TrainState, batch: Batch, rng, n_intervals: int):
    rb = consistency_training_batch(net, swap_in_ema(state), batch, rng, n_intervals)
    return fit(net, state, rb, rng)


def consistency_distillation_batch(
    net: VelocityNet,
    ema_params: Params,
    teacher: "tuple[VelocityNet, Params] | None",
    batch: Batch,
    rng: np.random.Generator,
    cfg_scale: float | None = None,
) -> RegressionBatch:
    """Consistency along one d = 1/M step of a frozen teacher flow."""
    if teacher is None or teacher[1] is None:
        raise ContractError("consistency distillation needs a teacher")
    t_net, t_params = teacher
    x0, x1, labels = batch
    labels = _labels_for(net, labels)
    M = net.grid.M
    d = 1.0 / M
    t = rng.integers(0, M, size=len(x0)) * d
    x_t, _ = interpolate(x0, x1, t)
    x_t = x_t.astype(np.float32)
    v_teacher = t_net.predict(t_params, x_t, t, 0, labels, cfg_scale)
    x_next = x_t + v_teacher * np.float32(d)
    target = consistency_velocity_target(net, ema_params, x_t, t, x_next, t + d, labels)
    B = len(x0)
    return RegressionBatch(x_t, t, np.zeros(B, np.intp), target, labels, {"consistency": slice(0, B)})


def consistency_distillation_update(net, state: TrainState, teacher, batch: Batch, rng,
                                    cfg_scale: float | None = None):
    rb = consistency_distillation_batch(net, swap_in_ema(state), teacher, batch, rng, cfg_scale)
    return fit(net, state, rb, rng)


# Progressive distillation -----------------------------------------------------


def two_step_target(t_net, t_params, x_t, t, d: float, labels=None, cfg_scale=None):
    """Normalized direction covered by two teacher steps of size d: (x'' - x_t) / (2d)."""
    bucket = t_net.grid.bucket_for_d(d)
    x_t = np.asarray(x_t, dtype=np.float32)
    df = np.float32(d)
    x_mid = x_t + t_net.predict(t_params, x_t, t, bucket, labels, cfg_scale) * df
    x_end = x_mid + t_net.predict(t_params, x_mid, np.asarray(t) + d, bucket, labels, cfg_scale) * df
    return (x_end - x_t) / np.float32(2 * d)


def progressive_distillation_batch(
    net: VelocityNet,
    teacher: tuple[VelocityNet, Params],
    batch: Batch,
    rng: np.random.Generator,
    phase: int,
    cfg_scale: float | None = None,
) -> RegressionBatch:
    """Student step of size 2d regresses onto two teacher steps of size d = 2**phase / M.

    Guidance, when given, is used only in phase 0.
    """
    t_net, t_params = teacher
    x0, x1, labels = batch
    labels = _labels_for(net, labels)
    M = net.grid.M
    d = 2.0**phase / M
    slots = M >> (phase + 1)
    t = rng.integers(0, slots, size=len(x0)) * (2 * d)
    x_t, _ = interpolate(x0, x1, t)
    x_t = x_t.astype(np.float32)
    target = two_step_target(t_net, t_params, x_t, t, d, labels, cfg_scale if phase == 0 else None)
    B = len(x0)
    bucket = np.full(B, net.grid.bucket_for_d(2 * d), np.intp)
    return RegressionBatch(x_t, t, bucket, target, labels, {"distill": slice(0, B)})


def progressive_distillation_update(net, state: TrainState, teacher, batch: Batch, rng,
                                    phase: int, cfg_scale: float | None = None):
    rb = progressive_distillation_batch(net, teacher, batch, rng, phase, cfg_scale)
    return fit(net, state, rb, rng)


def student_params_from(teacher_params: Params, teacher_cfg: NetConfig) -> Params:
    """Initialize a d-conditioned student from a teacher.

    A flow teacher only ever used embedding row 0, so every step-size row
    starts from that row and the student reproduces the teacher exactly.
    """
    p = {k: v.copy() for k, v in teacher_params.items()}
    if not teacher_cfg.d_conditioned:
        p["d_embed"][:] = p["d_embed"][0]
    return p


def progressive_distillation_run(
    teacher_net: VelocityNet,
    teacher_params: Params,
    phases: int,
    steps_per_phase: int,
    batch_fn: Callable[[np.random.Generator], Batch],
    rng: np.random.Generator,
    make_state: Callable[[Params], TrainState],
    cfg_scale: float | None = None,
    on_step: Callable | None = None,
):
    """Distill log2(M) phases; each phase's EMA student becomes the next teacher.

    Returns ``(student_net, final_state)``.
    """
    grid = teacher_net.grid
    if phases != grid.log2_m:
        raise ConfigError(f"progressive distillation needs log2(M)={grid.log2_m} phases, got {phases}")
    s_cfg = NetConfig(**{**teacher_net.config.to_dict(), "d_conditioned": True})
    student = VelocityNet(s_cfg, grid)
    t_net, t_params = teacher_net, teacher_params
    state = None
    for phase in range(phases):
        state = make_state(student_params_from(t_params, t_net.config))
        for _ in range(steps_per_phase):
            losses, state = progressive_distillation_update(
                student, state, (t_net, t_params), batch_fn(rng), rng, phase, cfg_scale
            )
            if on_step is not None:
                on_step(phase, state, losses)
        t_net, t_params = student, {k: v.copy() for k, v in swap_in_ema(state).items()}
    return student, state


# Reflow ---------------------------------------------------------------------


def reflow_generate(
    t_net: VelocityNet,
    t_params: Params,
    count: int,
    M: int,
    rng: np.random.Generator,
    labels=None,
    cfg_scale: float | None = None,
    chunk: int = 8192,
):
    """Synthetic (x0, x1_hat) pairs from an M-step Euler solve of the teacher."""
    dim = t_net.config.input_dim
    x0 = rng.standard_normal((count, dim)).astype(np.float32)
    grid = StepGrid(M)
    if labels is not None:
        labels = np.broadcast_to(np.asarray(labels, dtype=np.intp), (count,))
    out = np.empty_like(x0)
    for s in range(0, count, chunk):
        lab = None if labels is None else labels[s:s + chunk]

        def field(x, t, _bucket, lab=lab):
            # Flow teacher: always the d = 0 conditioning.
            return t_net.predict(t_params, x.astype(np.float32), t, 0, lab, cfg_scale)

        x1, _ = integrate(field, x0[s:s + chunk], M, grid)
        out[s:s + chunk] = x1
    return x0, out, labels


# Live reflow -------------------------------------------------------------------


def denoise_at_flow_level(net, params, z, steps: int, labels=None, cfg_scale=None):
    """``steps`` Euler steps using the d = 0 conditioning throughout."""

    def field(x, t, _bucket):
        return net.predict(params, x.astype(np.float32), t, 0, labels, cfg_scale)

    x, _ = integrate(field, z, steps, StepGrid(max(net.grid.M, steps)))
    return x.astype(np.float32)


def live_reflow_batch(
    net: VelocityNet,
    ema_params: Params,
    batch: Batch,
    plan: BatchPlan,
    rng: np.random.Generator,
    denoise_steps: int = 8,
    cfg_scale: float | None = None,
) -> RegressionBatch:
    """Flow rows at d = 0 plus rows distilled from a fresh short EMA denoise.

    Bootstrap rows are trained at the d > 0 buckets, which act as the flag
    separating reflow targets from flow-matching targets.
    """
    x0, x1, labels = batch
    B = len(x0)
    if B == 0:
        raise ContractError("empty batch")
    labels = _labels_for(net, labels)
    n_b = int(round(plan.k * B))
    n_fm = B - n_b
    t_fm = rng.random(n_fm)
    xt_fm, v_fm = interpolate(x0[:n_fm], x1[:n_fm], t_fm)
    xt_parts, t_parts, b_parts, tgt_parts = [xt_fm], [t_fm], [np.zeros(n_fm, np.intp)], [v_fm]
    if n_b:
        z = rng.standard_normal((n_b, net.config.input_dim)).astype(np.float32)
        lab_b = None if labels is None else labels[n_fm:]
        x1_hat = denoise_at_flow_level(net, ema_params, z, denoise_steps, lab_b, cfg_scale)
        j = rng.integers(1, net.grid.log2_m + 1, size=n_b)  # d = 2**j / M
        d = np.ldexp(1.0, j) / net.grid.M
        slots = net.grid.M >> j
        t_b = np.floor(rng.random(n_b) * slots) * d
        xt_b, v_b = interpolate(z, x1_hat, t_b)
        xt_parts.append(xt_b)
        t_parts.append(t_b)
        b_parts.append(j.astype(np.intp))
        tgt_parts.append(v_b)
    xt = np.concatenate(xt_parts).astype(np.float32)
    t = np.concatenate(t_parts)
    buckets = np.concatenate(b_parts)
    target = np.concatenate(tgt_parts).astype(np.float32)
    groups = {"flow": slice(0, n_fm), "reflow": slice(n_fm, B)}
    return RegressionBatch(xt, t, buckets, target, labels, groups)


def live_reflow_update(net, state: TrainState, batch: Batch, plan: BatchPlan, rng,
                       denoise_steps: int = 8, cfg_scale: float | None = None):
    rb = live_reflow_batch(net, swap_in_ema(state), batch, plan, rng, denoise_steps, cfg_scale)
    return fit(net, state, rb, rng)


def flow_update_on_pairs(net, state, pairs, batch_size, rng):
    """Reflow student step: flow matching on synthetic (x0, x1_hat) pairs."""
    x0s, x1s, labels = pairs
    idx = rng.integers(0, len(x0s), size=batch_size)
    batch = (x0s[idx], x1s[idx], None if labels is None else labels[idx])
    return flow_matching_update(net, state, batch, rng)


def cost_ratio(k: float, backward_weight: float = 2.0) -> float:
    """Weighted compute of a shortcut update relative to a flow update.

    Both pay forward + backward on the batch; bootstrap rows add two
    forward passes each.
    """
    base = 1.0 + backward_weight
    return (base + 2.0 * k) / base

