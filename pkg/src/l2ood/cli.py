"""Command-line entry point: ``l2ood {train,eval,analyze,compare,run}``.

Exit status is 0 on success, 2 for usage/config problems and 1 for any
other library error; failures print a one-line JSON object to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import ExperimentConfig, load_config
from .errors import ConfigError, L2OODError
from .experiment import cmd_analyze, cmd_compare, cmd_eval, cmd_train, run_all


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "on", "yes"):
        return True
    if t in ("0", "false", "off", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected on/off, got {text!r}")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file or run manifest")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="run directory")
    p.add_argument("--normalize", type=_bool, metavar="on|off")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="l2ood", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write checkpoints + trainlog.csv")
    _common(p)

    p = sub.add_parser("eval", help="score ID vs OoD test sets and write eval.csv")
    _common(p)
    p.add_argument("--checkpoint", help="checkpoint file (default: <out>/checkpoints/final.ckpt)")

    p = sub.add_parser("analyze", help="write the analysis CSVs")
    _common(p)
    p.add_argument("--checkpoint-dir")
    p.add_argument("--bins", type=int)
    p.add_argument("--groups", help='norm group edges "0,10,20,30" or "quantile:4"')

    p = sub.add_parser("run", help="train, eval and analyze in one go")
    _common(p)
    p.add_argument("--bins", type=int)
    p.add_argument("--groups")

    p = sub.add_parser("compare", help="paired deltas between two evaluated runs")
    p.add_argument("run_a")
    p.add_argument("run_b")
    p.add_argument("--out", help="output JSON (default: <run_a>/compare.json)")
    return ap


def _resolve(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    return cfg.with_overrides(seed=args.seed, normalize=args.normalize, output_dir=args.out,
                              bins=getattr(args, "bins", None),
                              groups=getattr(args, "groups", None))


def _fail(code: int, kind: str, exc: BaseException) -> int:
    print(json.dumps({"error": kind, "type": type(exc).__name__, "message": str(exc)}),
          file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "compare":
            res = cmd_compare(args.run_a, args.run_b, args.out)
            print(json.dumps(res["accuracy"]))
            return 0
        cfg = _resolve(args)
        if args.command == "train":
            result = cmd_train(cfg)
            print(f"trained {len(result.checkpoints)} checkpoints into {cfg.output_dir}")
        elif args.command == "eval":
            rows, summary = cmd_eval(cfg, args.checkpoint)
            for r in rows:
                print(f"{r[0]:<18} {r[1]:<15} auroc={r[2]:.4f} fpr95={r[3]:.4f}")
            print(f"id_test_accuracy={summary['id_test_accuracy']:.4f}")
        elif args.command == "analyze":
            res = cmd_analyze(cfg, args.checkpoint_dir)
            print("wrote " + ", ".join(sorted(k for k in res if not k.endswith("_scale"))))
        else:
            run_all(cfg)
            print(f"run complete in {cfg.output_dir}")
    except ConfigError as exc:
        return _fail(2, "invalid input", exc)
    except (L2OODError, OSError) as exc:
        return _fail(1, "failed", exc)
    except ValueError as exc:
        return _fail(2, "invalid input", exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
