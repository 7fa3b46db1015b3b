"""Command-line entry point: ``bidense <command> [flags]``.

Exit codes: 0 success, 1 failed check, 2 invalid config or model file,
3 training divergence.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import modelfile
from .cfb import plan_fusion
from .config import ConfigError, load_config
from .data import gen_synthetic_dense
from .modelfile import ModelFileError
from .network import BiDenseModel, count_costs, layer_entropies
from .train import (VAL_SEED_OFFSET, DivergenceError, TrainConfig, evaluate, gradcheck_model,
                    print_record, train_loop)

EXIT_FAILED, EXIT_INVALID, EXIT_DIVERGED = 1, 2, 3


def _config(path) -> TrainConfig:
    return load_config(path) if path else TrainConfig()


def cmd_train(args) -> int:
    config = _config(args.config)
    if args.seed is not None:
        config.seed = args.seed
    out = Path(args.out)
    history_path = out.with_name(out.name + ".history.jsonl")
    with history_path.open("w") as fh:
        def log(record):
            print_record(record)
            fh.write(json.dumps(record, sort_keys=True) + "\n")

        model, _ = train_loop(config, log)
    modelfile.save(model, out)
    print(f"wrote {out}", file=sys.stderr)
    return 0


def _synthetic(model: BiDenseModel, seed: int, samples: int, size: int):
    return gen_synthetic_dense(seed + VAL_SEED_OFFSET, model.config.task, samples, size,
                               model.config.in_channels)


def cmd_eval(args) -> int:
    model = modelfile.load(args.model)
    data = _synthetic(model, args.seed, args.samples, args.input_size)
    scores = evaluate(model, data)
    width = max(map(len, scores))
    for key, value in scores.items():
        print(f"{key:<{width}}  {value:.6f}")
    return 0


def cmd_diagnose_entropy(args) -> int:
    model = modelfile.load(args.model)
    data = _synthetic(model, args.seed, args.samples, args.input_size)
    rows = layer_entropies(model, data.images)
    width = max(len("layer"), *(len(r[0]) for r in rows))
    print(f"{'layer':<{width}}  {'channels':>8}  {'entropy':>8}")
    for name, channels, ent in rows:
        print(f"{name:<{width}}  {channels:>8d}  {ent:>8.5f}")
    return 0


def cmd_count(args) -> int:
    config = _config(args.config)
    size = args.input_size or config.image_size
    model = BiDenseModel(config.model)
    print(count_costs(model, (1, config.model.in_channels, size, size)).describe())
    return 0


def cmd_plan(args) -> int:
    try:
        plan = plan_fusion(args.c_in, args.c_out)
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID
    print(f"{plan.direction} {plan.describe()}")
    return 0


def cmd_gradcheck(args) -> int:
    config = _config(args.config)
    err = gradcheck_model(config.model, seed=args.seed or 0)
    ok = err <= args.tolerance
    print(f"max relative error {err:.3e} (tolerance {args.tolerance:.1e}): "
          f"{'PASS' if ok else 'FAIL'}")
    return 0 if ok else EXIT_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bidense", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on synthetic data")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    for name, func, samples in (("eval", cmd_eval, 64),
                                ("diagnose-entropy", cmd_diagnose_entropy, 16)):
        p = sub.add_parser(name)
        p.add_argument("--model", required=True)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--samples", type=int, default=samples)
        p.add_argument("--input-size", type=int, default=32)
        p.set_defaults(func=func)

    p = sub.add_parser("count", help="parameter and operation counts")
    p.add_argument("--config")
    p.add_argument("--input-size", type=int)
    p.set_defaults(func=cmd_count)

    p = sub.add_parser("plan", help="print the channel fusion plan")
    p.add_argument("c_in", type=int)
    p.add_argument("c_out", type=int)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("gradcheck", help="autodiff against finite differences")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ModelFileError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID
    except DivergenceError as err:
        print(f"diverged: {err}", file=sys.stderr)
        return EXIT_DIVERGED


def run():
    sys.exit(main())


if __name__ == "__main__":
    run()
