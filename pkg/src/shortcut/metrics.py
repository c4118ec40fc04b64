"""Two-sample and model-diagnostic metrics, accumulated in float64."""
from __future__ import annotations

import csv
import os
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .data import Dataset, draw_pairs
from .errors import ContractError
from .net import VelocityNet
from .objectives import interpolate, sample_d_t
from .sampler import initial_noise, integrate, net_field

CSV_HEADER = ["step", "budget", "mmd2", "coverage", "mean_collapse", "sc_residual", "sliced_w2"]


@dataclass
class MetricsRecord:
    step: int
    budget: int
    mmd2: float
    coverage: float
    mean_collapse: float
    sc_residual: float
    sliced_w2: float
    # Not written to CSV: mean per-sample distance to the data mean.
    mean_radius: float = field(default=float("nan"), compare=False)

    def csv_row(self) -> list[str]:
        return [str(self.step), str(self.budget)] + [
            repr(float(getattr(self, k))) for k in CSV_HEADER[2:]
        ]


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * (a @ b.T)
    return np.maximum(d, 0.0)


def median_bandwidth(a, b, max_points: int = 2000) -> float:
    """Median pairwise distance over the pooled sample.

    Rows are sorted lexicographically before any subsampling so the result
    is invariant to row order and to swapping ``a`` and ``b``.
    """
    pooled = np.concatenate([np.asarray(a, np.float64), np.asarray(b, np.float64)])
    pooled = pooled[np.lexsort(pooled.T[::-1])]
    if len(pooled) > max_points:
        pooled = pooled[np.linspace(0, len(pooled) - 1, max_points).astype(int)]
    d2 = _sq_dists(pooled, pooled)
    iu = np.triu_indices(len(pooled), k=1)
    med = float(np.sqrt(np.median(d2[iu]))) if iu[0].size else 1.0
    return med if med > 0 else 1.0


def mmd2_rbf(A, B, bandwidth: float | None = None) -> float:
    """Biased (V-statistic) squared MMD with kernel exp(-|x-y|^2 / (2 sigma^2))."""
    A = np.asarray(A, np.float64)
    B = np.asarray(B, np.float64)
    if len(A) == 0 or len(B) == 0:
        raise ContractError("mmd2 needs nonempty sets")
    sigma = median_bandwidth(A, B) if bandwidth is None else float(bandwidth)
    if sigma <= 0:
        raise ContractError("bandwidth must be positive")
    g = 1.0 / (2.0 * sigma * sigma)
    kaa, kbb, kab = _kernel_mean(A, A, g), _kernel_mean(B, B, g), _kernel_mean(A, B, g)
    return float(max(kaa + kbb - 2.0 * kab, 0.0))


def _kernel_mean(a: np.ndarray, b: np.ndarray, g: float, block: int = 1024) -> float:
    # row blocks keep memory at block * len(b) for large sample counts
    total = sum(np.exp(-g * _sq_dists(a[i:i + block], b)).sum() for i in range(0, len(a), block))
    return float(total / (len(a) * len(b)))


def mode_coverage(samples, mode_centers, radius: float, min_frac: float = 0.01):
    """Fraction of modes with at least max(1, min_frac * n) samples within ``radius``."""
    centers = np.asarray(mode_centers, np.float64)
    if len(centers) == 0:
        raise ContractError("mode_coverage needs at least one mode")
    if radius <= 0:
        raise ContractError("radius must be positive")
    s = np.asarray(samples, np.float64).reshape(-1, centers.shape[1])
    counts = (_sq_dists(s, centers) <= radius * radius).sum(axis=0)
    need = max(1, int(np.ceil(min_frac * len(s))))
    return float(np.mean(counts >= need)), counts


def mean_collapse(samples, data) -> tuple[float, float]:
    """(|mean(samples) - mean(data)|, mean per-sample distance to mean(data))."""
    s = np.asarray(samples, np.float64)
    if len(s) == 0:
        raise ContractError("mean_collapse needs samples")
    mu = np.asarray(data, np.float64).mean(axis=0)
    return float(np.linalg.norm(s.mean(axis=0) - mu)), float(np.linalg.norm(s - mu, axis=1).mean())


def _w2_1d(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.sort(a), np.sort(b)
    if len(a) != len(b):
        q = (np.arange(max(len(a), len(b))) + 0.5) / max(len(a), len(b))
        a, b = np.quantile(a, q), np.quantile(b, q)
    return float(np.mean((a - b) ** 2))


def sliced_w2(A, B, n_projections: int = 128, rng: np.random.Generator | int = 0) -> float:
    """Mean over random unit directions of the 1-D squared W2 between projections."""
    A = np.asarray(A, np.float64)
    B = np.asarray(B, np.float64)
    if len(A) == 0 or len(B) == 0:
        raise ContractError("sliced_w2 needs nonempty sets")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    dirs = rng.standard_normal((n_projections, A.shape[1]))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pa, pb = A @ dirs.T, B @ dirs.T
    return float(np.mean([_w2_1d(pa[:, i], pb[:, i]) for i in range(n_projections)]))


def self_consistency_residual(
    net: VelocityNet,
    params,
    dataset: Dataset,
    n_probes: int,
    rng: np.random.Generator,
    cfg_scale: float | None = None,
    return_norm: bool = False,
):
    """Mean |s(x,t,2d) - (s(x,t,d) + s(x',t+d,d)) / 2| over on-grid probes.

    With ``return_norm`` also returns the mean |s(x,t,2d)| for scale.
    """
    x0, x1, labels = draw_pairs(dataset, n_probes, rng)
    if net.config.num_classes == 0:
        labels = None
    q, tb, t, d_half = sample_d_t(net.grid, rng, n_probes)
    xt, _ = interpolate(x0, x1, t)
    xt = xt.astype(np.float32)
    s_big = net.predict(params, xt, t, tb, labels)
    s1 = net.predict(params, xt, t, q, labels, cfg_scale)
    x_mid = xt + s1 * d_half[:, None].astype(np.float32)
    s2 = net.predict(params, x_mid, t + d_half, q, labels, cfg_scale)
    diff = np.asarray(s_big, np.float64) - (np.asarray(s1, np.float64) + s2) / 2
    residual = float(np.linalg.norm(diff, axis=1).mean())
    if return_norm:
        return residual, float(np.linalg.norm(np.asarray(s_big, np.float64), axis=1).mean())
    return residual


def straightness_of_paths(traj) -> float:
    """Mean of 1 - chord / arc over trajectories shaped (steps + 1, n, D)."""
    traj = np.asarray(traj, np.float64)
    chord = np.linalg.norm(traj[-1] - traj[0], axis=-1)
    arc = np.linalg.norm(np.diff(traj, axis=0), axis=-1).sum(axis=0)
    safe = np.where(arc > 0, arc, 1.0)
    deficit = np.where(arc > 0, 1.0 - chord / safe, 0.0)
    return float(np.mean(deficit))


def path_straightness(net: VelocityNet, params, n_probes: int, rng, num_steps: int = 128,
                      labels=None, cfg_scale=None) -> float:
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    x0 = rng.standard_normal((n_probes, net.config.input_dim)).astype(np.float32)
    _, traj = integrate(net_field(net, params, labels, cfg_scale), x0, num_steps, net.grid, record=True)
    return straightness_of_paths(traj)


def evaluate_budgets(
    net: VelocityNet,
    params,
    dataset: Dataset,
    budgets: Sequence[int] = (128, 4, 1),
    count: int = 2000,
    seed: int = 0,
    step: int = 0,
    n_probes: int = 1000,
    n_projections: int = 128,
    reference_size: int = 2000,
    labels=None,
    cfg_scale: float | None = None,
    coverage_radius: float | None = None,
) -> list[MetricsRecord]:
    """Full metric suite per budget, all budgets sampled from the same noise."""
    ref_rng = np.random.default_rng(seed + 1)
    ref_idx = ref_rng.choice(len(dataset), size=min(reference_size, len(dataset)), replace=False)
    ref = dataset.points[ref_idx]
    radius = coverage_radius if coverage_radius is not None else 3.0 * dataset.mode_sigma
    sc = self_consistency_residual(net, params, dataset, n_probes, np.random.default_rng(seed + 2),
                                   cfg_scale)
    x0 = initial_noise(seed, count, net.config.input_dim)
    if labels is not None:
        labels = np.broadcast_to(np.asarray(labels, dtype=np.intp), (count,))
    records = []
    for b in budgets:
        samples, _ = integrate(net_field(net, params, labels, cfg_scale), x0, b, net.grid)
        mc, mr = mean_collapse(samples, dataset.points)
        cov = mode_coverage(samples, dataset.mode_centers, radius)[0] if len(dataset.mode_centers) else float("nan")
        records.append(MetricsRecord(
            step=step,
            budget=b,
            mmd2=mmd2_rbf(samples, ref),
            coverage=cov,
            mean_collapse=mc,
            sc_residual=sc,
            sliced_w2=sliced_w2(samples, ref, n_projections, np.random.default_rng(seed + 3)),
            mean_radius=mr,
        ))
    return records


def append_metrics_csv(path, records: Sequence[MetricsRecord]) -> None:
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as f:
        w = csv.writer(f)
        if new:
            w.writerow(CSV_HEADER)
        for r in records:
            w.writerow(r.csv_row())


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    out = []
    for r in rows:
        d = {k: float(v) for k, v in r.items()}
        d["step"], d["budget"] = int(d["step"]), int(d["budget"])
        out.append(d)
    return out


def record_dict(r: MetricsRecord) -> dict:
    return asdict(r)
