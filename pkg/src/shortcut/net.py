"""Step-size conditioned MLP velocity network.

The network predicts a shortcut ``s(x_t, t, d)``: the direction that, scaled
by the step size ``d``, moves ``x_t`` to the point the flow reaches at
``t + d``.  Step sizes live on a binary grid {0, 1/M, 2/M, 4/M, ..., 1} and
are embedded through a learned lookup table.  Embedding row 0 serves both
d = 0 and d = 1/M; row ``i >= 1`` serves d = 2**i / M.
"""
from __future__ import annotations

import functools
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping

import numpy as np

from . import autograd as ag
from .errors import ConfigError, DomainError, ShapeError

Params = dict[str, np.ndarray]


def is_power_of_two(n: int) -> bool:
    return isinstance(n, (int, np.integer)) and n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class StepGrid:
    """Binary lattice of step sizes for a given number of base steps ``M``."""

    M: int = 128

    def __post_init__(self):
        if not is_power_of_two(self.M):
            raise ConfigError(f"M must be a positive power of two, got {self.M}")

    @property
    def log2_m(self) -> int:
        return int(self.M).bit_length() - 1

    @property
    def num_buckets(self) -> int:
        return self.log2_m + 1

    @property
    def buckets(self) -> list[float]:
        """All representable step sizes: [0, 1/M, 2/M, 4/M, ..., 1]."""
        return [0.0] + [2.0**i / self.M for i in range(self.log2_m + 1)]

    def bucket_for_d(self, d: float) -> int:
        """Embedding row for step size ``d`` (d = 0 and d = 1/M share row 0)."""
        if d == 0:
            return 0
        units = d * self.M
        i = int(round(math.log2(units))) if units > 0 else -1
        if i < 0 or i > self.log2_m or not math.isclose(units, 2.0**i, rel_tol=1e-9):
            raise DomainError(f"step size {d} is not on the grid for M={self.M}")
        return i

    def d_for_bucket(self, bucket: int) -> float:
        """Step size a bucket is trained for; bucket 0 maps to the smallest step 1/M."""
        if not 0 <= bucket < self.num_buckets:
            raise DomainError(f"bucket {bucket} outside [0, {self.num_buckets})")
        return 2.0**bucket / self.M if bucket > 0 else 1.0 / self.M

    def bucket_for_steps(self, num_steps: int) -> int:
        if not is_power_of_two(num_steps) or num_steps > self.M:
            raise DomainError(f"{num_steps} steps is not a power-of-two divisor of M={self.M}")
        return self.bucket_for_d(1.0 / num_steps)


@dataclass(frozen=True)
class NetConfig:
    input_dim: int = 2
    hidden_dim: int = 128
    num_layers: int = 4
    time_embed_dim: int = 32
    num_d_buckets: int = 8
    num_classes: int = 0
    class_dropout_prob: float = 0.1
    # False for plain flow / consistency models: every query uses row 0.
    d_conditioned: bool = True

    def validate(self, grid: StepGrid | None = None) -> None:
        for name in ("input_dim", "hidden_dim", "num_layers", "time_embed_dim", "num_d_buckets"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v <= 0:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.time_embed_dim % 2:
            raise ConfigError("time_embed_dim must be even (sin/cos pairs)")
        if self.num_classes < 0:
            raise ConfigError("num_classes must be nonnegative")
        if not 0.0 <= self.class_dropout_prob <= 1.0:
            raise ConfigError("class_dropout_prob must lie in [0, 1]")
        if grid is not None and self.num_d_buckets != grid.num_buckets:
            raise ConfigError(
                f"num_d_buckets={self.num_d_buckets} but M={grid.M} needs {grid.num_buckets}"
            )

    def to_dict(self) -> dict:
        return asdict(self)


@functools.lru_cache(maxsize=None)
def _frequencies(half: int) -> np.ndarray:
    f = np.geomspace(1.0, 1000.0, half) if half > 1 else np.ones(1)
    f.flags.writeable = False
    return f


def embed_time(t, dim: int) -> np.ndarray:
    """Sinusoidal features of t in [0, 1]; frequencies geometric from 1 to 1000.

    Accepts a scalar (returns shape ``(dim,)``) or a vector of per-row times
    (returns ``(n, dim)``).
    """
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0) or np.any(t_arr > 1) or np.any(np.isnan(t_arr)):
        raise DomainError("time must lie in [0, 1]")
    half = dim // 2
    freqs = _frequencies(half)
    ang = t_arr[..., None] * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1).astype(np.float32)


def cfg_combine(v_cond, v_uncond, w: float):
    """Classifier-free guidance: v_uncond + w * (v_cond - v_uncond)."""
    v_cond, v_uncond = np.asarray(v_cond), np.asarray(v_uncond)
    if v_cond.shape != v_uncond.shape:
        raise ShapeError(f"cfg_combine: shape mismatch {v_cond.shape} vs {v_uncond.shape}")
    return v_uncond + w * (v_cond - v_uncond)


def init_params(config: NetConfig, seed: int) -> Params:
    """Deterministic init: 1/sqrt(fan_in) hidden weights, zero output layer."""
    config.validate()
    rng = np.random.default_rng(seed)
    h = config.hidden_dim

    def dense(fan_in, fan_out):
        return (rng.standard_normal((fan_in, fan_out)) / math.sqrt(fan_in)).astype(np.float32)

    p: Params = {
        "in.w": dense(config.input_dim, h),
        "in.wt": dense(config.time_embed_dim, h),
        "in.b": np.zeros(h, np.float32),
        "d_embed": rng.standard_normal((config.num_d_buckets, h)).astype(np.float32),
    }
    if config.num_classes > 0:
        # Last row is the null class used for unconditional / dropped rows.
        p["class_embed"] = rng.standard_normal((config.num_classes + 1, h)).astype(np.float32)
    for i in range(config.num_layers - 1):
        p[f"h{i}.w"] = dense(h, h)
        p[f"h{i}.b"] = np.zeros(h, np.float32)
    p["out.w"] = np.zeros((h, config.input_dim), np.float32)
    p["out.b"] = np.zeros(config.input_dim, np.float32)
    return p


class ForwardCounter:
    """Counts network row evaluations, split by whether a tape recorded them."""

    def __init__(self):
        self.reset()

    def reset(self) -> None:
        self.rows_no_grad = 0
        self.rows_grad = 0
        self.calls = 0

    @property
    def forward_rows(self) -> int:
        return self.rows_no_grad + self.rows_grad

    def weighted_cost(self, backward_weight: float = 2.0) -> float:
        """Forward rows cost 1 each; recorded rows additionally pay for backward."""
        return self.forward_rows + backward_weight * self.rows_grad


@dataclass
class VelocityNet:
    """Stateless wrapper: the architecture plus bookkeeping.

    Parameters are always passed explicitly so the same net can be evaluated
    with live or EMA weights.
    """

    config: NetConfig
    grid: StepGrid = field(default_factory=StepGrid)
    counter: ForwardCounter = field(default_factory=ForwardCounter)
    # Optional hook called with the params mapping on each forward (used to
    # audit which parameter set a code path reads).
    observer: object = None

    def __post_init__(self):
        self.config.validate(self.grid)

    @property
    def null_class(self) -> int:
        return self.config.num_classes

    def init(self, seed: int) -> Params:
        return init_params(self.config, seed)

    def forward(
        self,
        params: Mapping[str, "np.ndarray | ag.Tensor"],
        x,
        t,
        d_bucket,
        labels=None,
        dropout_rng: np.random.Generator | None = None,
    ):
        """Shortcut velocities for a batch.

        Returns a :class:`Tensor` when any parameter is tracked by the active
        tape, otherwise a plain float32 array.  ``labels`` of ``None`` (or the
        null class id) means unconditional; with ``dropout_rng`` each row's
        label is replaced by the null class with ``class_dropout_prob``.
        """
        cfg = self.config
        x_arr = x.data if isinstance(x, ag.Tensor) else np.asarray(x, dtype=np.float32)
        if x_arr.ndim != 2 or x_arr.shape[1] != cfg.input_dim:
            raise ShapeError(f"expected x of shape (n, {cfg.input_dim}), got {x_arr.shape}")
        n = x_arr.shape[0]
        t_arr = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))
        buckets = np.broadcast_to(np.asarray(d_bucket, dtype=np.intp), (n,))
        if n and (buckets.min() < 0 or buckets.max() >= cfg.num_d_buckets):
            raise DomainError(f"d bucket outside [0, {cfg.num_d_buckets})")
        if not cfg.d_conditioned:
            buckets = np.zeros(n, np.intp)
        cls = self._class_ids(labels, n, dropout_rng)

        if self.observer is not None:
            self.observer(params)
        P = {k: (v if isinstance(v, ag.Tensor) else ag.Tensor(v)) for k, v in params.items()}
        tracked = bool(ag.Tape._stack) and any(ag.Tape._stack[-1].is_tracked(v) for v in P.values())
        if tracked:
            self.counter.rows_grad += n
        else:
            self.counter.rows_no_grad += n
        self.counter.calls += 1

        temb = ag.Tensor(embed_time(t_arr, cfg.time_embed_dim))
        pre = ag.add(ag.matmul(x if isinstance(x, ag.Tensor) else ag.Tensor(x_arr), P["in.w"]),
                     ag.matmul(temb, P["in.wt"]))
        pre = ag.add(pre, ag.gather_rows(P["d_embed"], buckets))
        if cls is not None:
            pre = ag.add(pre, ag.gather_rows(P["class_embed"], cls))
        h = ag.silu(ag.add_bias(pre, P["in.b"]))
        for i in range(cfg.num_layers - 1):
            h = ag.silu(ag.add_bias(ag.matmul(h, P[f"h{i}.w"]), P[f"h{i}.b"]))
        out = ag.add_bias(ag.matmul(h, P["out.w"]), P["out.b"])
        return out if tracked else out.data

    def predict(self, params, x, t, d_bucket, labels=None, cfg_scale: float | None = None):
        """No-grad evaluation with optional classifier-free guidance.

        Guidance is applied only to rows queried at bucket 0 (the flow level);
        larger step sizes use the plain conditional prediction.
        """
        x = np.asarray(x, dtype=np.float32)
        n = x.shape[0]
        buckets = np.broadcast_to(np.asarray(d_bucket, dtype=np.intp), (n,))
        if not self.config.d_conditioned:
            buckets = np.zeros(n, np.intp)
        use_cfg = (
            cfg_scale is not None
            and labels is not None
            and self.config.num_classes > 0
            and np.any(buckets == 0)
        )
        v = self.forward(params, x, t, buckets, labels)
        if not use_cfg:
            return v
        rows = np.flatnonzero(buckets == 0)
        t_arr = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))
        v_u = self.forward(params, x[rows], t_arr[rows], 0, None)
        v = v.copy()
        v[rows] = cfg_combine(v[rows], v_u, cfg_scale).astype(np.float32)
        return v

    def _class_ids(self, labels, n, dropout_rng):
        cfg = self.config
        if cfg.num_classes == 0:
            if labels is not None:
                raise DomainError("model is unconditional but labels were given")
            return None
        if labels is None:
            return np.full(n, self.null_class, np.intp)
        cls = np.broadcast_to(np.asarray(labels, dtype=np.intp), (n,)).copy()
        if n and (cls.min() < 0 or cls.max() > self.null_class):
            raise DomainError(f"class id outside [0, {cfg.num_classes})")
        if dropout_rng is not None and cfg.class_dropout_prob > 0:
            drop = dropout_rng.random(n) < cfg.class_dropout_prob
            cls[drop] = self.null_class
        return cls
