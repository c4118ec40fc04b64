"""Independent numerical oracles shared by the unit and acceptance tests."""
from __future__ import annotations

import numpy as np

from shortcut import autograd as ag
from shortcut.net import NetConfig, StepGrid, VelocityNet, init_params


def central_diff(f, params: dict, h: float = 1e-3) -> dict:
    """Central differences of scalar f(params) w.r.t. every entry (float64)."""
    out = {}
    for k, v in params.items():
        g = np.zeros_like(v)
        flat, gflat = v.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fp = f(params)
            flat[i] = old - h
            fm = f(params)
            flat[i] = old
            gflat[i] = (fp - fm) / (2 * h)
        out[k] = g
    return out


def tape_grad(f, params: dict) -> dict:
    P = {k: ag.Tensor(v) for k, v in params.items()}
    with ag.Tape() as tape:
        tape.watch(P.values())
        loss = f(P)
    return tape.gradient(loss, P)


def rel_err(a: dict, b: dict) -> float:
    va = np.concatenate([np.ravel(a[k]) for k in sorted(a)])
    vb = np.concatenate([np.ravel(b[k]) for k in sorted(a)])
    denom = max(np.linalg.norm(va), np.linalg.norm(vb), 1e-12)
    return float(np.linalg.norm(va - vb) / denom)


def small_net(seed: int, M: int = 8, num_classes: int = 0, d_conditioned: bool = True,
              hidden: int = 8):
    """A tiny float64 net with every parameter randomized (no zero output layer)."""
    grid = StepGrid(M)
    cfg = NetConfig(hidden_dim=hidden, num_layers=2, time_embed_dim=4, num_d_buckets=grid.num_buckets,
                    num_classes=num_classes, d_conditioned=d_conditioned)
    net = VelocityNet(cfg, grid)
    rng = np.random.default_rng(seed)
    params = {k: rng.normal(0.0, 0.5, v.shape) for k, v in init_params(cfg, seed).items()}
    return net, params


def scalar(loss) -> float:
    return float(np.asarray(loss.data if isinstance(loss, ag.Tensor) else loss))


def euler_contracting(x0, lam: float, steps: int):
    """Closed form of Euler on dx/dt = -lam x: x0 (1 - lam/steps)^steps."""
    return np.asarray(x0) * (1.0 - lam / steps) ** steps


# criterion id -> (passed, detail); printed by the terminal summary hook in conftest
ACCEPTANCE: dict[int, tuple[bool, str]] = {}
