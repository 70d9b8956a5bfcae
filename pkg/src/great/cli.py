"""Command-line entry points.

Subcommands: gen-data, train, eval, gradcheck, bench, params. Exit code 0 on
success, 1 on validation errors, 2 on numerical failures.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import bench as bench_mod
from .checkpoint import load_dataset, load_into_model, save_checkpoint, save_dataset
from .complexity import param_count, registered_scalar_count
from .data import gen_synthetic
from .encoder import init_model
from .gradcheck import run_gradcheck
from .tensor import NumericalError
from .train import RunConfig, evaluate_model, train


def _load_run_config(path) -> RunConfig:
    with open(path) as fh:
        return RunConfig.from_dict(json.load(fh))


def _cmd_gen_data(args) -> int:
    ds = gen_synthetic(args.seed, args.count, args.size, args.classes)
    save_dataset(args.out, ds)
    print(f"wrote {len(ds)} scenes of {args.size}x{args.size} with {args.classes} classes to {args.out}")
    return 0


def _cmd_train(args) -> int:
    cfg = _load_run_config(args.config)
    ds = load_dataset(args.data)
    result = train(cfg, ds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "checkpoint.grt", result.weights, {"lr": cfg.lr, "steps": cfg.steps, "batch_size": cfg.batch_size})
    with open(out / "metrics.jsonl", "w") as fh:
        for rec in result.records:
            fh.write(json.dumps(rec.to_dict()) + "\n")
    print(
        f"trained {cfg.steps} steps: final loss "
        f"{result.records[-1].loss if result.records else float('nan'):.4f}, "
        f"mIoU {result.final_miou:.4f}, PixAcc {result.final_pixacc:.4f}"
    )
    print(f"checkpoint and metrics written to {out}")
    return 0


def _cmd_eval(args) -> int:
    from .checkpoint import load_container

    config, _ = load_container(args.checkpoint)
    run = RunConfig.from_dict(config)
    mw = load_into_model(args.checkpoint, init_model(run.model))
    ds = load_dataset(args.data)
    miou, pixacc = evaluate_model(mw, ds)
    print(json.dumps({"miou": miou, "pixacc": pixacc}))
    return 0


def _cmd_gradcheck(args) -> int:
    cfg = _load_run_config(args.config).model
    report = run_gradcheck(cfg, seed=args.seed, eps=args.eps)
    print(report.render())
    return 0 if report.passed else 2


def _parse_sweep(spec: str) -> dict:
    out = {}
    for part in spec.split(";"):
        if not part.strip():
            continue
        key, _, values = part.partition("=")
        out[key.strip().lower()] = [int(v) for v in values.split(",") if v.strip()]
    return out


def _cmd_bench(args) -> int:
    sweep = _parse_sweep(args.sweep)
    report = bench_mod.run_bench(
        m_values=tuple(sweep.get("m", (8, 16, 32, 64))),
        sizes=tuple(sweep.get("size", (16, 32, 64))),
        patch_side=sweep.get("l", [4])[0],
        channels=sweep.get("c", [32])[0],
    )
    print(report.render())
    if args.json:
        with open(args.json, "w") as fh:
            for row in report.rows:
                fh.write(json.dumps(row) + "\n")
        print(f"records written to {args.json}")
    return 0


def _cmd_params(args) -> int:
    cfg = _load_run_config(args.config).model
    report = param_count(cfg)
    print(report.render())
    registered = registered_scalar_count(init_model(cfg))
    print(f"registered scalars: {registered:,}")
    if registered != report.total_params:
        print("MISMATCH between closed form and registered scalars", file=sys.stderr)
        return 2
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="great", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset container")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--count", type=int, default=64)
    g.add_argument("--size", type=int, default=32)
    g.add_argument("--classes", type=int, default=3)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=_cmd_gen_data)

    t = sub.add_parser("train", help="train on a dataset container")
    t.add_argument("--config", required=True, help="JSON run config")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="output directory")
    t.set_defaults(fn=_cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.set_defaults(fn=_cmd_eval)

    c = sub.add_parser("gradcheck", help="verify analytic gradients against finite differences")
    c.add_argument("--config", required=True)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--eps", type=float, default=1e-5)
    c.set_defaults(fn=_cmd_gradcheck)

    b = sub.add_parser("bench", help="interaction cost sweep")
    b.add_argument("--sweep", default="M=8,16,32,64;size=16,32,64")
    b.add_argument("--json", help="also write one JSON record per row to this path")
    b.set_defaults(fn=_cmd_bench)

    pa = sub.add_parser("params", help="closed-form parameter accounting")
    pa.add_argument("--config", required=True)
    pa.set_defaults(fn=_cmd_params)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
