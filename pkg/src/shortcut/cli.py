"""Command-line entry point: ``shortcut {train,distill,sample,eval,figure}``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint
from .config import RunConfig, TEACHER_OBJECTIVES
from .data import make_dataset, read_points_csv, write_points_csv
from .errors import ConfigError, DomainError, RequestError
from .figures import (interpolation_svg, metric_vs_budget_svg, scatter_svg, trajectories_svg,
                      write_svg)
from .metrics import append_metrics_csv, evaluate_budgets, read_metrics_csv
from .net import VelocityNet
from .optim import swap_in_ema
from .sampler import SampleRequest, euler_sample, interpolation_sweep
from .training import train

log = logging.getLogger("shortcut")


def _budgets(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.split(",") if x.strip())


def _run_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    for flag, key in (("seed", "seed"), ("steps", "steps"), ("teacher", "teacher"),
                      ("objective", "objective"), ("budgets", "eval_budgets")):
        v = getattr(args, flag, None)
        if v is not None:
            overrides[key] = str(v)
    return cfg.with_overrides(overrides).validate()


def _load_model(path):
    ck = load_checkpoint(path)
    net = VelocityNet(ck.config.net_config(), ck.config.grid)
    return ck, net, swap_in_ema(ck.state)


def cmd_train(args) -> int:
    cfg = _run_config(args)
    out = Path(args.out or "runs/" + cfg.objective)
    res = train(cfg, out_dir=out)
    print(f"wrote {out / 'final.ckpt'} and {out / 'metrics.csv'} "
          f"({res.updates} updates, {res.rows_per_update:.4g} forward rows/update, "
          f"{res.seconds:.1f}s)")
    return 0


def cmd_distill(args) -> int:
    if args.objective not in TEACHER_OBJECTIVES:
        raise ConfigError(f"distill runs one of {TEACHER_OBJECTIVES}, got {args.objective!r}")
    return cmd_train(args)


def cmd_sample(args) -> int:
    ck, net, params = _load_model(args.checkpoint)
    if args.steps & (args.steps - 1) or not 0 < args.steps <= ck.config.M:
        raise RequestError(f"--steps {args.steps} is not a trained budget for M={ck.config.M}")
    labels = args.label
    if labels is None and ck.config.class_conditional:
        labels = np.arange(args.count) % ck.config.num_classes
    req = SampleRequest(args.steps, args.count, args.seed, labels,
                        record_trajectory=bool(args.trajectory), cfg_scale=ck.config.guidance)
    res = euler_sample(net, params, req)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    lab = None if labels is None else np.broadcast_to(labels, (args.count,))
    write_points_csv(out, res.samples, lab)
    if args.trajectory and res.trajectory is not None:
        np.save(args.trajectory, res.trajectory)
    print(f"wrote {args.count} samples to {out}")
    return 0


def cmd_eval(args) -> int:
    ck, net, params = _load_model(args.checkpoint)
    cfg = ck.config
    name = args.dataset or cfg.dataset
    ds = make_dataset(name, cfg.dataset_size, cfg.data_seed)
    if ds.dim != net.config.input_dim:
        raise ConfigError(f"dataset {name} has dimension {ds.dim}, model expects "
                          f"{net.config.input_dim}")
    labels = np.arange(args.count) % cfg.num_classes if cfg.class_conditional else None
    recs = evaluate_budgets(net, params, ds, _budgets(args.budgets), count=args.count,
                            seed=args.seed, step=ck.state.step, labels=labels,
                            cfg_scale=cfg.guidance)
    out = Path(args.out)
    if out.exists():
        out.unlink()
    out.parent.mkdir(parents=True, exist_ok=True)
    append_metrics_csv(out, recs)
    for r in recs:
        print(f"budget {r.budget:4d}: mmd2={r.mmd2:.5f} coverage={r.coverage:.3f} "
              f"sliced_w2={r.sliced_w2:.5f} sc_residual={r.sc_residual:.5f}")
    return 0


def _require(paths):
    for p in paths:
        if not Path(p).exists():
            raise FileNotFoundError(f"figure input not found: {p}")


def cmd_figure(args) -> int:
    kind = args.kind
    _require(args.inputs)
    if kind == "scatter":
        # inputs: samples CSVs; optional --data dataset name for the background cloud
        ds = make_dataset(args.data, 20000, 0) if args.data else None
        samples = {Path(p).stem: read_points_csv(p)[0] for p in args.inputs}
        data = ds.points[:2000] if ds is not None else np.zeros((0, 2))
        svg = scatter_svg(data, samples)
    elif kind == "trajectories":
        # input: a checkpoint; paths recorded with --steps Euler steps
        ck, net, params = _load_model(args.inputs[0])
        req = SampleRequest(args.steps, args.count, args.seed, record_trajectory=True,
                            cfg_scale=ck.config.guidance)
        res = euler_sample(net, params, req)
        svg = trajectories_svg(res.trajectory, title=f"{args.steps}-step trajectories")
    elif kind == "metrics":
        # inputs: metrics CSVs; the last evaluated step of each is plotted
        series = {}
        for p in args.inputs:
            rows = read_metrics_csv(p)
            if not rows:
                continue
            last = max(r["step"] for r in rows)
            series[Path(p).parent.name or Path(p).stem] = {
                r["budget"]: r[args.metric] for r in rows if r["step"] == last}
        svg = metric_vs_budget_svg(series, args.metric)
    elif kind == "interpolation":
        ck, net, params = _load_model(args.inputs[0])
        ns = np.linspace(0.0, 1.0, args.n_values)
        rows = interpolation_sweep(net, params, (args.seed, args.seed + 1), ns,
                                   num_steps=args.steps, count=args.count)
        ds = make_dataset(ck.config.dataset, ck.config.dataset_size, ck.config.data_seed)
        svg = interpolation_svg(rows, data=ds.points[:2000])
    else:  # pragma: no cover - argparse restricts choices
        raise ValueError(kind)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_svg(out, svg)
    print(f"wrote {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="shortcut", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def run_flags(p):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--steps", type=int, help="training updates")
        p.add_argument("--out", help="output directory")
        p.add_argument("--teacher", help="teacher checkpoint (distillation objectives)")
        p.add_argument("--budgets", help="comma-separated eval step budgets")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override any config key (repeatable)")

    p = sub.add_parser("train", help="train a model")
    run_flags(p)
    p.add_argument("--objective")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("distill", help="two-stage objective from a teacher checkpoint")
    run_flags(p)
    p.add_argument("--objective", default="progressive_distillation", choices=TEACHER_OBJECTIVES)
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("sample", help="write samples to CSV")
    p.add_argument("checkpoint")
    p.add_argument("--steps", type=int, default=1)
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--label", type=int, help="class id for conditional models")
    p.add_argument("--trajectory", help="also save the trajectory as .npy")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="metrics per step budget (EMA weights)")
    p.add_argument("checkpoint")
    p.add_argument("--budgets", default="128,4,1")
    p.add_argument("--count", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dataset")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("figure", help="emit SVG figures")
    p.add_argument("kind", choices=["scatter", "trajectories", "metrics", "interpolation"])
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--data", help="dataset name drawn behind scatter plots")
    p.add_argument("--metric", default="sliced_w2")
    p.add_argument("--steps", type=int, default=1)
    p.add_argument("--count", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-values", dest="n_values", type=int, default=9)
    p.set_defaults(func=cmd_figure)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DomainError, RequestError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
