"""Euler integration of a learned shortcut field for power-of-two step budgets."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, RequestError
from .net import StepGrid, VelocityNet, is_power_of_two

# field(x, t, bucket) -> velocity with x's shape
Field = Callable[[np.ndarray, float, int], np.ndarray]


@dataclass
class SampleRequest:
    num_steps: int
    count: int
    seed: int = 0
    labels: "int | Sequence[int] | None" = None
    record_trajectory: bool = False
    cfg_scale: float | None = None

    def validate(self, grid: StepGrid) -> None:
        if not is_power_of_two(self.num_steps) or self.num_steps > grid.M:
            raise RequestError(
                f"num_steps={self.num_steps} must be a power of two dividing M={grid.M}"
            )
        if self.count < 0:
            raise RequestError("count must be nonnegative")


@dataclass
class SampleResult:
    x0: np.ndarray
    samples: np.ndarray
    trajectory: np.ndarray | None = None


def initial_noise(seed: int, count: int, dim: int) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal((count, dim)).astype(np.float32)


def integrate(field: Field, x0, num_steps: int, grid: StepGrid, record: bool = False):
    """Run ``num_steps`` Euler steps of size 1/num_steps from t = 0 to t = 1.

    The state is carried in float64; time is computed as n / num_steps so it
    never drifts.  Returns the endpoint and, if ``record``, the stacked
    trajectory of shape (num_steps + 1, n, D).
    """
    if not is_power_of_two(num_steps) or num_steps > grid.M:
        raise RequestError(f"num_steps={num_steps} must be a power of two dividing M={grid.M}")
    bucket = grid.bucket_for_steps(num_steps)
    d = 1.0 / num_steps
    x = np.array(x0, dtype=np.float64)
    traj = [x.copy()] if record else None
    for n in range(num_steps):
        t = n / num_steps
        v = field(x, t, bucket)
        x = x + np.asarray(v, dtype=np.float64) * d
        if record:
            traj.append(x.copy())
    return x, (np.stack(traj) if record else None)


def net_field(net: VelocityNet, params, labels=None, cfg_scale: float | None = None) -> Field:
    def field(x, t, bucket):
        return net.predict(params, x.astype(np.float32), t, bucket, labels, cfg_scale)

    return field


def euler_sample(net: VelocityNet, params, request: SampleRequest, x0=None) -> SampleResult:
    """Sample with the network; guidance only touches bucket-0 queries."""
    request.validate(net.grid)
    if x0 is None:
        x0 = initial_noise(request.seed, request.count, net.config.input_dim)
    labels = request.labels
    if labels is not None:
        labels = np.broadcast_to(np.asarray(labels, dtype=np.intp), (len(x0),))
    if len(x0) == 0:
        empty = np.zeros((0, net.config.input_dim))
        return SampleResult(x0, empty, None)
    field = net_field(net, params, labels, request.cfg_scale)
    x1, traj = integrate(field, x0, request.num_steps, net.grid, request.record_trajectory)
    return SampleResult(x0, x1, traj)


def step_sweep(
    net: VelocityNet,
    params,
    budgets: Sequence[int],
    eval_hook: Callable[[int, np.ndarray], object] | None = None,
    count: int = 2000,
    seed: int = 0,
    labels=None,
    cfg_scale: float | None = None,
) -> dict[int, object]:
    """Sample every budget from the same initial noise; apply ``eval_hook`` per budget.

    Without a hook the raw samples are returned per budget.
    """
    for b in budgets:
        if not is_power_of_two(b) or b > net.grid.M:
            raise RequestError(f"budget {b} is not a power-of-two divisor of M={net.grid.M}")
    x0 = initial_noise(seed, count, net.config.input_dim)
    out = {}
    for b in budgets:
        req = SampleRequest(b, count, seed, labels, cfg_scale=cfg_scale)
        res = euler_sample(net, params, req, x0=x0)
        out[b] = eval_hook(b, res.samples) if eval_hook is not None else res.samples
    return out


def vp_blend(x0_a, x0_b, n: float) -> np.ndarray:
    """Variance-preserving blend n * a + sqrt(1 - n^2) * b."""
    if not 0.0 <= n <= 1.0:
        raise DomainError(f"interpolation weight {n} outside [0, 1]")
    a = np.asarray(x0_a, dtype=np.float64)
    b = np.asarray(x0_b, dtype=np.float64)
    if n == 1.0:
        return a.copy()
    if n == 0.0:
        return b.copy()
    return n * a + math.sqrt(1.0 - n * n) * b


def interpolation_sweep(
    net: VelocityNet,
    params,
    seed_pair: tuple[int, int],
    n_values: Sequence[float],
    num_steps: int = 1,
    count: int = 1,
    labels=None,
    cfg_scale: float | None = None,
):
    """Denoise VP blends of two fixed noise draws; returns [(n, x0_n, sample_n), ...]."""
    for n in n_values:
        if not 0.0 <= n <= 1.0:
            raise DomainError(f"interpolation weight {n} outside [0, 1]")
    dim = net.config.input_dim
    a = initial_noise(seed_pair[0], count, dim)
    b = initial_noise(seed_pair[1], count, dim)
    out = []
    for n in n_values:
        x0 = vp_blend(a, b, n)
        req = SampleRequest(num_steps, count, labels=labels, cfg_scale=cfg_scale)
        res = euler_sample(net, params, req, x0=x0)
        out.append((float(n), x0, res.samples))
    return out
