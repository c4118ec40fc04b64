"""Toy 2-D datasets and per-dimension normalization."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ContractError, DegenerateDataError


@dataclass(frozen=True)
class Dataset:
    """Points in the current coordinate frame.

    ``raw = points * scale + shift`` recovers generator coordinates; both are
    identity until :func:`normalize` is applied.  ``mode_sigma`` is the
    per-mode standard deviation expressed in the current frame.
    """

    name: str
    points: np.ndarray
    labels: np.ndarray | None
    mode_centers: np.ndarray
    mode_sigma: float
    shift: np.ndarray
    scale: np.ndarray

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def num_classes(self) -> int:
        return 0 if self.labels is None else int(self.labels.max()) + 1


def _make(name, points, labels, centers, sigma) -> Dataset:
    dim = points.shape[1]
    return Dataset(name, points, labels, np.asarray(centers, dtype=np.float64).reshape(-1, dim),
                   float(sigma), np.zeros(dim), np.ones(dim))


def gen_eight_gaussians(n: int, seed: int, radius: float = 4.0, sigma: float = 0.3) -> Dataset:
    if n <= 0:
        raise ContractError("n must be positive")
    rng = np.random.default_rng(seed)
    angles = np.arange(8) * (math.pi / 4)
    centers = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    labels = rng.integers(0, 8, size=n)
    points = centers[labels] + sigma * rng.standard_normal((n, 2))
    return _make("eight_gaussians", points, labels.astype(np.int64), centers, sigma)


def gen_checkerboard(n: int, seed: int) -> Dataset:
    """Uniform over the 8 black cells of a 4x4 board on [-2, 2]^2."""
    if n <= 0:
        raise ContractError("n must be positive")
    rng = np.random.default_rng(seed)
    cells = np.array([(i, j) for i in range(-2, 2) for j in range(-2, 2) if (i + j) % 2 == 0],
                     dtype=np.float64)
    pick = rng.integers(0, len(cells), size=n)
    points = cells[pick] + rng.random((n, 2))
    # A uniform unit cell has std 1/sqrt(12); use that as the mode width.
    return _make("checkerboard", points, None, cells + 0.5, 1 / math.sqrt(12))


def gen_two_spirals(n: int, seed: int, noise: float = 0.1) -> Dataset:
    if n <= 0:
        raise ContractError("n must be positive")
    rng = np.random.default_rng(seed)
    half = n // 2
    labels = np.concatenate([np.zeros(half, np.int64), np.ones(n - half, np.int64)])
    theta = np.sqrt(rng.random(n)) * 3 * math.pi
    r = theta / math.pi * 1.2
    arm = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
    arm[labels == 1] *= -1
    points = arm + noise * rng.standard_normal((n, 2))
    return _make("two_spirals", points, labels, np.zeros((0, 2)), noise)


GENERATORS = {
    "eight_gaussians": gen_eight_gaussians,
    "checkerboard": gen_checkerboard,
    "two_spirals": gen_two_spirals,
}


def make_dataset(name: str, n: int, seed: int, normalized: bool = True) -> Dataset:
    try:
        gen = GENERATORS[name]
    except KeyError:
        raise ValueError(f"unknown dataset {name!r}; choose from {sorted(GENERATORS)}") from None
    ds = gen(n, seed)
    return normalize(ds) if normalized else ds


def normalize(ds: Dataset) -> Dataset:
    """Standardize each dimension to zero mean and unit variance."""
    if len(ds) == 0:
        raise ContractError("cannot normalize an empty dataset")
    mean = ds.points.mean(axis=0)
    std = ds.points.std(axis=0)
    if np.any(std <= 1e-12):
        raise DegenerateDataError(f"zero-variance dimension(s): {np.flatnonzero(std <= 1e-12)}")
    return replace(
        ds,
        points=(ds.points - mean) / std,
        mode_centers=(ds.mode_centers - mean) / std,
        mode_sigma=ds.mode_sigma / float(np.prod(std) ** (1 / ds.dim)),
        shift=ds.shift + ds.scale * mean,
        scale=ds.scale * std,
    )


def denormalize(points, ds: Dataset) -> np.ndarray:
    """Map points from ``ds``'s frame back to generator coordinates."""
    return np.asarray(points, dtype=np.float64) * ds.scale + ds.shift


def draw_pairs(ds: Dataset, batch_size: int, rng: np.random.Generator):
    """Independent random pairing of fresh noise with dataset rows (with replacement)."""
    if len(ds) == 0:
        raise ContractError("cannot draw from an empty dataset")
    x0 = rng.standard_normal((batch_size, ds.dim)).astype(np.float32)
    idx = rng.integers(0, len(ds), size=batch_size)
    x1 = ds.points[idx].astype(np.float32)
    labels = None if ds.labels is None else ds.labels[idx]
    return x0, x1, labels


def write_points_csv(path, points, labels=None) -> None:
    points = np.asarray(points)
    dim = points.shape[1] if points.ndim == 2 else 2
    cols = ["x", "y"] if dim == 2 else [f"x{i}" for i in range(dim)]
    if labels is not None:
        cols.append("label")
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(cols)
        for i, row in enumerate(points.reshape(-1, dim)):
            vals = [repr(float(v)) for v in row]
            if labels is not None:
                vals.append(str(int(labels[i])))
            w.writerow(vals)


def read_points_csv(path) -> tuple[np.ndarray, np.ndarray | None]:
    path = Path(path)
    with open(path, newline="") as f:
        r = csv.reader(f)
        header = next(r)
        rows = list(r)
    has_label = header[-1] == "label"
    dim = len(header) - int(has_label)
    pts = np.array([[float(v) for v in row[:dim]] for row in rows], dtype=np.float64).reshape(-1, dim)
    labels = np.array([int(row[-1]) for row in rows], dtype=np.int64) if has_label else None
    return pts, labels
