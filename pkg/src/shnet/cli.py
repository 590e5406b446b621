"""Command-line surface: gen-data, train, eval, predict, gradcheck, ablate.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure during training, 5 gradient-check failure.
"""

from __future__ import annotations

import argparse
import sys

from .ablate import run_ablation, write_ablation_report
from .config import build_config
from .errors import ConfigError, DataError, NumericsError, ShapeError


def _add_run_flags(p):
    p.add_argument("--config", help="key=value config file; CLI flags override it")
    p.add_argument("--variant", help="model variant")
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--resolution", type=int)
    p.add_argument("--channels", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--embed-dim", type=int, dest="embed_dim")
    p.add_argument("--feature-size", type=int, dest="feature_size")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr0", type=float)
    p.add_argument("--weight-decay", type=float, dest="weight_decay")
    p.add_argument("--poly-power", type=float, dest="poly_power")
    p.add_argument("--data", help="manifest path (train/eval) or dataset dir (ablate)")
    p.add_argument("--embeddings", help="word-embedding text file")
    p.add_argument("--out", help="output directory")


_CFG_KEYS = ("variant", "seed", "steps", "resolution", "channels", "heads",
             "embed_dim", "feature_size", "batch_size", "lr0", "weight_decay",
             "poly_power", "data", "embeddings", "out")


def _config_from(args):
    overrides = {k: getattr(args, k, None) for k in _CFG_KEYS}
    return build_config(getattr(args, "config", None), overrides)


def cmd_gen_data(args):
    from .data import generate_split

    if not args.out:
        raise ConfigError("gen-data: --out directory is required")
    manifests = generate_split(args.out, seed=args.seed or 0,
                               n_train=args.n_train, n_test=args.n_test,
                               resolution=args.resolution or 64,
                               embed_dim=args.embed_dim or 48)
    for split, path in manifests.items():
        print(f"{split}: {path}")
    return 0


def cmd_train(args):
    from .train import train

    cfg = _config_from(args)
    if not cfg.data:
        raise ConfigError("train: --data manifest is required")
    result = train(cfg, echo=print)
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"log: {result.log_path}")
    return 0


def cmd_eval(args):
    from .train import evaluate

    cfg = _config_from(args)
    if not cfg.data:
        raise ConfigError("eval: --data manifest is required")
    acc = evaluate(cfg, args.checkpoint)
    print("\n".join(acc.report_lines()))
    return 0


def cmd_predict(args):
    from .train import predict

    cfg = _config_from(args)
    predict(cfg, args.checkpoint, args.image, args.expression, args.out_prefix)
    print(f"wrote {args.out_prefix}.pgm and {args.out_prefix}.probs")
    return 0


def cmd_gradcheck(args):
    from .gradcheck import format_table, run_suite

    results = run_suite(n_configs=args.configs, seed=args.seed or 0)
    print(format_table(results))
    if any(not r.passed for r in results):
        return 5
    return 0


def cmd_ablate(args):
    cfg = _config_from(args)
    if not cfg.data:
        raise ConfigError("ablate: --data dataset directory is required")
    results = run_ablation(cfg, cfg.data, echo=print)
    table = write_ablation_report(results, cfg.out)
    print(table)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="shnet",
        description="Referring image segmentation: synchronous fusion + "
                    "hierarchical cross-modal aggregation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-test", type=int, default=200)
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--embed-dim", type=int, dest="embed_dim", default=48)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one variant")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    _add_run_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="segment one image for one expression")
    _add_run_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--expression", required=True)
    p.add_argument("--out-prefix", dest="out_prefix", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", help="finite-difference the whole op/module suite")
    p.add_argument("--configs", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="train and evaluate all variants")
    _add_run_flags(p)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ShapeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericsError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
