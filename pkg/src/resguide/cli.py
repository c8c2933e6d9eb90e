"""Command-line entry point: ``resguide <command> ...``.

Exit codes: 0 success, 2 config or usage error, 3 data error, 4 numeric
failure, 5 gradient-check failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import checks
from .autograd import ContractError, Tape, Variable
from .config import ConfigError, RunConfig, load_config
from .data import DataError, ImageFormatError, load_corpus, read_image, synth_corpus, write_image
from .model import ModelFormatError, forward, load, param_count, param_count_analytic, block_count_analytic
from .model import merge_count_analytic
from .train import NumericError, evaluate, run_training

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_GRADCHECK = 2, 3, 4, 5

# published counts for the reference architecture and the closest baseline
PUBLISHED_FULL, PUBLISHED_B3, DDN_PARAMS = 37065, 19404, 57369


def cmd_synth(args) -> int:
    entries = synth_corpus(args.out, args.count, args.mode, args.seed, args.size, args.noise_sigma)
    print(f"wrote {len(entries)} pairs to {args.out}")
    return 0


def cmd_train(args) -> int:
    overrides = {}
    if args.iterations is not None:
        overrides["iterations"] = args.iterations
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.data is not None:
        overrides["data"] = args.data
    cfg = load_config(args.config, overrides) if args.config else RunConfig(**overrides)
    if not cfg.data:
        raise ConfigError("no corpus given: pass --data or set 'data' in the config")
    result = run_training(cfg, cfg.data, args.out)
    print(result.report.to_csv(), end="")
    return 0


def cmd_derain(args) -> int:
    model = load(args.model)
    m = model.config.blocks
    k = m if args.blocks is None else args.blocks
    if not 1 <= k <= m:
        raise ContractError(f"--blocks must lie in [1, {m}], got {k}")
    image = read_image(args.inp)
    with Tape() as tape:
        res = forward(Variable(image), model, k)
    if args.emit_intermediate:
        d = Path(args.emit_intermediate)
        d.mkdir(parents=True, exist_ok=True)
        for b, y in enumerate(res.reconstructions, 1):
            write_image(y.value.clip(0, 1), d / f"block{b}.ppm")
    final = res.merged if (args.blocks is None and res.merged is not None) else res.reconstructions[-1]
    write_image(final.value.clip(0, 1), args.out)
    print(f"blocks run: {k} of {m}; conv2d evaluations: {tape.count('conv2d')}")
    return 0


def cmd_eval(args) -> int:
    model = load(args.model)
    pairs, names, missing = load_corpus(args.data)
    for name in missing:
        print(f"missing pair {name}: skipped", file=sys.stderr)
    report = evaluate(model, pairs, names, per_block=args.per_block, k_max=args.blocks)
    Path(args.report).write_text(report.to_csv())
    for line in report.to_csv().splitlines():
        if line.startswith("#"):
            print(line[2:])
    return 0


def params_lines(cfg: RunConfig) -> list[str]:
    from .model import ResGuideModel

    mc = cfg.model_config()
    model = ResGuideModel.zeros(mc)
    lines = []
    for k, blk in enumerate(model.blocks, 1):
        enum, ana = blk.count, block_count_analytic(mc, k)
        if enum != ana:
            raise RuntimeError(f"block {k}: enumerated {enum} != analytic {ana}")
        lines.append(f"block {k}: {enum}")
    enum_m, ana_m = model.merge.count, merge_count_analytic(mc)
    if enum_m != ana_m:
        raise RuntimeError(f"merge: enumerated {enum_m} != analytic {ana_m}")
    lines.append(f"merge: {enum_m}")
    total, total_a = param_count(model), param_count_analytic(mc)
    if total != total_a:
        raise RuntimeError(f"total: enumerated {total} != analytic {total_a}")
    lines.append(f"total: {total} (enumerated) == {total_a} (analytic)")
    k3 = min(3, mc.blocks)
    lines.append(f"truncated to {k3} blocks, no merge: {param_count(model, k3, merge=False)}")
    lines.append(f"caveat: published counts are {PUBLISHED_FULL:,} (full) and {PUBLISHED_B3:,} (3 blocks); "
                 "the gap comes from block internals the published description leaves unspecified")
    smaller = "smaller" if total < DDN_PARAMS else "NOT smaller"
    lines.append(f"comparison: {total:,} is {smaller} than the DDN baseline's {DDN_PARAMS:,}")
    return lines


def cmd_params(args) -> int:
    cfg = load_config(args.config) if args.config else RunConfig()
    for line in params_lines(cfg):
        print(line)
    return 0


def cmd_gradcheck(args) -> int:
    results = checks.run_level(args.level, seed=args.seed)
    print(checks.format_table(results))
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_GRADCHECK if failed else 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="resguide", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic rainy/clean corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=64)
    p.add_argument("--mode", choices=("heavy", "light"), default="heavy")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=96)
    p.add_argument("--noise-sigma", type=float, default=0.0,
                   help="degrade with Gaussian noise of this std instead of rain")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train on a corpus with deep supervision")
    p.add_argument("--config")
    p.add_argument("--data", help="corpus directory written by 'synth' (overrides the config)")
    p.add_argument("--out", required=True)
    p.add_argument("--iterations", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("derain", help="derain one PPM image")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--blocks", type=int, help="run only the first K blocks")
    p.add_argument("--emit-intermediate", metavar="DIR", help="write every block output to DIR")
    p.set_defaults(func=cmd_derain)

    p = sub.add_parser("eval", help="score a model on a corpus")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--per-block", action="store_true")
    p.add_argument("--blocks", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("params", help="parameter accounting")
    p.add_argument("--config")
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suites")
    p.add_argument("--level", choices=checks.LEVELS, default="ops")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ImageFormatError, ModelFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
