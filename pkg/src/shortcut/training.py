"""Training loops for every objective, driven by a :class:`RunConfig`."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import objectives as ob
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig
from .data import Dataset, draw_pairs, make_dataset
from .errors import ConfigError
from .metrics import MetricsRecord, append_metrics_csv, evaluate_budgets
from .net import VelocityNet
from .optim import TrainState, swap_in_ema

log = logging.getLogger(__name__)


@dataclass
class RunResult:
    config: RunConfig
    net: VelocityNet
    state: TrainState
    dataset: Dataset
    metrics: list[MetricsRecord] = field(default_factory=list)
    forward_rows: int = 0
    weighted_cost: float = 0.0
    updates: int = 0
    seconds: float = 0.0

    @property
    def rows_per_update(self) -> float:
        return self.forward_rows / max(self.updates, 1)

    @property
    def eval_params(self):
        return swap_in_ema(self.state)


def load_dataset(cfg: RunConfig) -> Dataset:
    return make_dataset(cfg.dataset, cfg.dataset_size, cfg.data_seed)


def load_teacher(teacher) -> Checkpoint:
    if isinstance(teacher, Checkpoint):
        return teacher
    return load_checkpoint(teacher)


def make_state(cfg: RunConfig, params) -> TrainState:
    return TrainState.create(
        params,
        lr=cfg.lr,
        weight_decay=cfg.weight_decay,
        betas=(cfg.beta1, cfg.beta2),
        eps=cfg.eps,
        ema_ratio=cfg.ema_ratio,
    )


def eval_labels(cfg: RunConfig, count: int):
    """Balanced class labels for conditional evaluation, None otherwise."""
    if not cfg.class_conditional:
        return None
    return np.arange(count) % cfg.num_classes


def _teacher_parts(cfg: RunConfig, teacher) -> tuple[VelocityNet, dict]:
    ck = load_teacher(teacher)
    if ck.config.M != cfg.M:
        raise ConfigError(f"teacher was trained with M={ck.config.M}, run uses M={cfg.M}")
    if ck.config.class_conditional != cfg.class_conditional:
        raise ConfigError("teacher and student disagree on class conditioning")
    t_cfg = ck.config.net_config()
    return VelocityNet(t_cfg, ck.config.grid), swap_in_ema(ck.state)


def train(cfg: RunConfig, out_dir=None, teacher=None) -> RunResult:
    """Run ``cfg.objective`` to completion.

    ``teacher`` may be a checkpoint path or a loaded :class:`Checkpoint`; when
    omitted, ``cfg.teacher`` is used for objectives that need one.  With
    ``out_dir`` the run writes ``metrics.csv``, periodic checkpoints and
    ``final.ckpt`` there.
    """
    cfg.validate()
    if cfg.objective in ("consistency_distillation", "progressive_distillation", "reflow"):
        teacher = teacher if teacher is not None else cfg.teacher
        t_net, t_params = _teacher_parts(cfg, teacher)
    else:
        t_net = t_params = None
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(cfg.to_text())
        csv_path = out / "metrics.csv"
        if csv_path.exists():
            csv_path.unlink()

    ds = load_dataset(cfg)
    grid = cfg.grid
    net = VelocityNet(cfg.net_config(), grid)
    eval_net = VelocityNet(cfg.net_config(), grid)
    seq = np.random.SeedSequence(cfg.seed)
    data_rng, upd_rng, aux_rng = (np.random.default_rng(s) for s in seq.spawn(3))
    plan = ob.BatchPlan(cfg.batch_size, cfg.k)
    guidance = cfg.guidance
    result = RunResult(cfg, net, None, ds)
    started = time.perf_counter()

    def batch_fn(rng=None):
        return draw_pairs(ds, cfg.batch_size, data_rng)

    evaluated = set()

    def maybe_eval(step: int, state: TrainState, eval_with: VelocityNet, force=False) -> None:
        if (step % cfg.eval_interval and step != cfg.steps and not force) or step in evaluated:
            return
        evaluated.add(step)
        recs = evaluate_budgets(
            eval_with, swap_in_ema(state), ds, cfg.eval_budgets, count=cfg.eval_count,
            seed=cfg.seed, step=step, labels=eval_labels(cfg, cfg.eval_count), cfg_scale=guidance,
        )
        result.metrics.extend(recs)
        if out is not None:
            append_metrics_csv(out / "metrics.csv", recs)
        by_b = ", ".join(f"{r.budget}-step mmd2={r.mmd2:.4g} cov={r.coverage:.3g}" for r in recs)
        log.info("step %d: %s", step, by_b)

    def maybe_checkpoint(step: int, state: TrainState) -> None:
        if out is not None and cfg.checkpoint_interval and step % cfg.checkpoint_interval == 0:
            save_checkpoint(cfg, state, out / f"step_{step:07d}.ckpt")

    if cfg.objective == "progressive_distillation":
        phases = grid.log2_m
        per_phase = max(1, cfg.steps // phases)
        counter = {"n": 0}

        def on_step(phase, state, losses):
            counter["n"] += 1
            maybe_eval(counter["n"], state, eval_net)
            maybe_checkpoint(counter["n"], state)

        student, state = ob.progressive_distillation_run(
            t_net, t_params, phases, per_phase, batch_fn, upd_rng,
            lambda p: make_state(cfg, p), guidance, on_step,
        )
        result.net = net = student
        result.updates = counter["n"]
        # log2(M) phases need not divide cfg.steps; always report the final student
        maybe_eval(counter["n"], state, eval_net, force=True)
    else:
        if cfg.objective == "reflow":
            labels = eval_labels(cfg, cfg.reflow_pairs)
            pairs = ob.reflow_generate(t_net, t_params, cfg.reflow_pairs, cfg.M, aux_rng,
                                       labels, guidance)
            log.info("generated %d reflow pairs (%d teacher rows)", cfg.reflow_pairs,
                     t_net.counter.forward_rows)
            # Distilled student starts from the teacher; no CFG afterwards.
            state = make_state(cfg, {k: v.copy() for k, v in t_params.items()})
            guidance = None
        else:
            state = make_state(cfg, net.init(cfg.seed))
        for i in range(cfg.steps):
            step = i + 1
            if cfg.objective == "flow_matching":
                _, state = ob.flow_matching_update(net, state, batch_fn(), upd_rng)
            elif cfg.objective == "shortcut":
                _, state = ob.shortcut_update(net, state, batch_fn(), plan, upd_rng, guidance)
            elif cfg.objective == "consistency_training":
                n_int = ob.ct_num_intervals(i, cfg.steps, grid.log2_m + 1, grid.M)
                _, state = ob.consistency_training_update(net, state, batch_fn(), upd_rng, n_int)
            elif cfg.objective == "consistency_distillation":
                _, state = ob.consistency_distillation_update(
                    net, state, (t_net, t_params), batch_fn(), upd_rng, guidance)
            elif cfg.objective == "reflow":
                _, state = ob.flow_update_on_pairs(net, state, pairs, cfg.batch_size, upd_rng)
            elif cfg.objective == "live_reflow":
                _, state = ob.live_reflow_update(net, state, batch_fn(), plan, upd_rng,
                                                 cfg.live_reflow_steps, guidance)
            maybe_eval(step, state, eval_net)
            maybe_checkpoint(step, state)
        result.updates = cfg.steps

    result.state = state
    result.forward_rows = net.counter.forward_rows
    result.weighted_cost = net.counter.weighted_cost()
    result.seconds = time.perf_counter() - started
    log.info("forward rows per update: %.4g (batch %d, k=%g)",
             result.rows_per_update, cfg.batch_size, cfg.k)
    if out is not None:
        save_checkpoint(cfg, state, out / "final.ckpt")
    return result
