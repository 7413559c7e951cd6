"""Command-line entry point: ``horncore <subcommand> [flags]``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import flops as F
from .hornet import PRESETS, get_preset
from .interaction import REFERENCE_KINDS, build_reference_op, classify_all, polynomial_degree


def _run_config(args):
    """Config file (or defaults), then environment, then command-line flags."""
    from .harness.config import RunConfig, load_config
    from .harness.train import THREADS_ENV, resolve_threads

    cfg = load_config(args.config) if args.config else RunConfig()
    changes = {}
    if args.preset:
        changes.update(model=get_preset(args.preset), preset=args.preset)
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.steps is not None:
        changes["steps"] = args.steps
    if args.threads is not None or os.environ.get(THREADS_ENV, "").strip():
        changes["threads"] = resolve_threads(args.threads)
    return dataclasses.replace(cfg, **changes) if changes else cfg


def cmd_train(args) -> int:
    from .harness.train import train

    cfg = _run_config(args)
    out = args.out or "run"
    result = train(cfg, out=out, log=sys.stdout)
    print(f"checkpoint: {result.checkpoint_path}", file=sys.stderr)
    return 0


def _eval_data(args, spec):
    from .harness.config import DataConfig, RunConfig
    from .harness.train import load_dataset

    if args.config:
        from .harness.config import load_config
        data = load_config(args.config).data
    else:
        data = DataConfig(seed=args.seed if args.seed is not None else 0)
    return load_dataset(RunConfig(model=spec, data=data))


def cmd_eval(args) -> int:
    from .harness.train import evaluate, load_model

    model = load_model(args.checkpoint)
    x, y = _eval_data(args, model.spec)
    acc, loss = evaluate(model, x, y)
    print(f"samples: {len(x)}")
    print(f"accuracy: {acc:.6f}")
    print(f"loss: {loss:.6f}")
    return 0


def cmd_flops(args) -> int:
    if args.op == "gnconv":
        size = args.input or 14
        r = F.flops_gnconv_total(size, size, args.channels, args.kernel, args.n, empirical=True)
        print("op: gnconv")
        print(f"input: {size}x{size}x{args.channels}")
        print(f"order: {args.n}")
        print(f"kernel: {args.kernel}")
        for key, value in r.as_dict().items():
            print(f"{key}: {value}")
        for part in ("projection", "dwconv", "recursive_gating"):
            print("record " + json.dumps({"part": part, "macs": getattr(r, part)}))
        return 0
    spec = get_preset(args.preset)
    size = args.input or spec.image_size
    parts = F.model_breakdown(spec, size)
    total = sum(parts.values())
    params = F.model_params(spec)
    print(f"preset: {args.preset}")
    print(f"input: {size}")
    print(f"params: {params}")
    print(f"params_m: {params / 1e6:.2f}")
    print(f"flops: {total}")
    print(f"gflops: {total / 1e9:.2f}")
    for name, value in parts.items():
        print(f"{name}: {value}")
    for name, value in parts.items():
        print("record " + json.dumps({"part": name, "macs": value, "share": value / total}))
    return 0


def cmd_probe_order(args) -> int:
    if args.op == "all":
        for r in classify_all(seed=args.seed or 0):
            print(f"{r.op_name}: degree={r.measured_degree} order={r.claimed_order} "
                  f"ie={r.ie_magnitude:.3e} consistent={r.consistent}")
        return 0
    channels = max(4, 2 ** (args.n - 1)) if args.op == "gnconv" else 4
    op = build_reference_op(args.op, channels, seed=args.seed or 0, linearized=True, order=args.n)
    rng = np.random.default_rng(args.seed or 0)
    x = rng.standard_normal((1, channels, args.size, args.size))
    degree = polynomial_degree(op, x, rng.standard_normal(x.shape), seed=args.seed or 0)
    print(f"op: {op.name}")
    print(f"measured degree: {degree if degree is not None else 'inconclusive'}")
    if degree is not None:
        print(f"interaction order: {degree - 1}")
    return 0 if degree is not None else 1


def _parse_locations(text: str) -> list[tuple[int, int]]:
    out = []
    for item in text.split(";"):
        item = item.strip()
        if not item:
            continue
        try:
            i, j = (int(v) for v in item.split(","))
        except ValueError:
            raise ValueError(f"bad location {item!r}; use 'row,col;row,col'") from None
        out.append((i, j))
    if not out:
        raise ValueError("no locations given")
    return out


def cmd_dump_weights(args) -> int:
    from .harness.data import synthetic_shapes
    from .harness.reports import dump_weights
    from .harness.train import load_model

    model = load_model(args.checkpoint)
    spec = model.spec
    if args.image:
        if not os.path.exists(args.image):
            raise FileNotFoundError(f"image not found: {args.image}")
        image = np.load(args.image)
    else:
        x, _ = synthetic_shapes(args.sample + 1, spec.image_size, spec.num_classes, spec.in_chans,
                                seed=args.seed or 0)
        image = x[args.sample]
    paths = dump_weights(model, image, args.layer, _parse_locations(args.locations), args.out or "weights")
    for p in paths:
        print(p)
    return 0


def cmd_bench(args) -> int:
    from .harness.reports import bench

    spec = get_preset(args.preset or "micro-iso")
    r = bench(spec, batch=args.batch, repeats=args.repeats, seed=args.seed or 0, image_size=args.input)
    print(f"preset: {args.preset or 'micro-iso'}")
    print(f"batch: {r.batch}")
    print(f"repeats: {r.repeats}")
    print(f"seconds: {r.seconds:.4f}")
    print(f"images_per_second: {r.images_per_second:.2f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="horncore", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="run configuration file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        return p

    p = common(sub.add_parser("train", help="train a model on a toy dataset"))
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--steps", type=int)
    p.add_argument("--threads", type=int, help="worker threads (default: $HORNCORE_THREADS or 1)")
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("eval", help="evaluate a checkpoint"))
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("flops", help="analytic FLOPs and parameter report")
    p.add_argument("--preset", choices=sorted(PRESETS), default="hornet-t-7x7")
    p.add_argument("--input", type=int, help="input resolution")
    p.add_argument("--op", choices=("model", "gnconv"), default="model")
    p.add_argument("--channels", type=int, default=64)
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--kernel", type=int, default=7)
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("probe-order", help="measure the polynomial degree of a reference operator")
    p.add_argument("--op", choices=REFERENCE_KINDS + ("all",), required=True)
    p.add_argument("--n", type=int, default=2, help="gnconv order")
    p.add_argument("--size", type=int, default=6)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_probe_order)

    p = common(sub.add_parser("dump-weights", help="write input-adaptive mixing-weight maps"),
               config=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--layer", type=int, default=0)
    p.add_argument("--locations", default="0,0")
    p.add_argument("--image", help=".npy file with one (C, H, W) image")
    p.add_argument("--sample", type=int, default=0, help="synthetic sample index when no image")
    p.set_defaults(func=cmd_dump_weights)

    p = sub.add_parser("bench", help="time forward passes")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--input", type=int)
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError, ArithmeticError) as exc:
        print(f"horncore {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
