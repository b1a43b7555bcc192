"""``sanet`` command-line entry point.

Exit codes: 0 ok, 1 check failed, 2 file/format error, 3 shape/config error.
With ``--json`` a single JSON document goes to stdout; diagnostics go to stderr.
"""

import argparse
import hashlib
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .accounting import ModelDescriptor, report
from .attention import SaConfig, SaParams, sa_forward
from .exceptions import ConfigError, FormatError, NonFiniteError, ShapeError
from .grad import DEFAULT_STEP, gradcheck_sa, random_sa_problem
from .io import load_sa_params, read_satk, write_satk

EXIT_OK, EXIT_CHECK, EXIT_IO, EXIT_CONFIG = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _emit(args, payload, text):
    if args.json:
        print(json.dumps(payload, indent=2))
    else:
        print(text)


def _checksum(x):
    return hashlib.sha256(np.ascontiguousarray(x, dtype="<f4").tobytes()).hexdigest()[:16]


def _tensor_summary(x):
    return {"shape": list(x.shape), "sha256_16": _checksum(x), "sum": float(np.sum(x, dtype=np.float64))}


def _sa_config(args):
    if args.no_fc and args.fc_conv:
        raise ConfigError("--no-fc and --fc-conv are mutually exclusive")
    return SaConfig(
        groups=args.groups, shuffle_groups=args.shuffle_groups, gn_epsilon=args.eps,
        enable_gn=not args.no_gn, enable_shuffle=not args.no_shuffle, enable_fc=not args.no_fc,
        fc_variant="conv" if args.fc_conv else "affine",
    )


def cmd_forward(args):
    x = read_satk(args.input)
    cfg = _sa_config(args)
    if args.params:
        params = load_sa_params(args.params)
        if params.fc_variant != cfg.fc_variant:
            cfg = SaConfig(**{**asdict(cfg), "fc_variant": params.fc_variant})
    else:
        cfg.validate(x.shape[1])
        params = SaParams.init(x.shape[1], cfg.groups, cfg.fc_variant)
    out = sa_forward(x, params, cfg)
    write_satk(args.output, out)
    info = _tensor_summary(out)
    _emit(args, info, f"wrote {args.output}: shape {tuple(out.shape)} sha256 {info['sha256_16']} sum {info['sum']:.6g}")
    return EXIT_OK


def cmd_shuffle(args):
    from .tensor import channel_shuffle

    x = read_satk(args.input)
    out = channel_shuffle(x, args.g)
    write_satk(args.output, out)
    info = _tensor_summary(out)
    _emit(args, info, f"wrote {args.output}: shape {tuple(out.shape)} sha256 {info['sha256_16']}")
    return EXIT_OK


def _parse_shape(text):
    try:
        dims = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"--shape must be n,c,h,w integers, got {text!r}") from None
    if len(dims) != 4 or min(dims) <= 0:
        raise ConfigError(f"--shape must be four positive integers, got {text!r}")
    return dims


def cmd_gradcheck(args):
    shape = _parse_shape(args.shape)
    cfg = _sa_config(args)
    cfg.validate(shape[1])
    x, params, cfg = random_sa_problem(shape, args.groups, args.seed, cfg)
    rep = gradcheck_sa(x, params, cfg, seed=args.seed, h=args.h, tol=args.tol)
    _emit(args, rep.to_dict(), rep.to_table())
    return EXIT_OK if rep.passed else EXIT_CHECK


def cmd_cost(args):
    rep = report(ModelDescriptor.load(args.model), args.attention)
    _emit(args, rep.to_dict(), rep.to_table())
    return EXIT_OK


def _train_configs(doc, seed):
    from .toy import SyntheticDataset, ToyNetConfig, TrainConfig

    unknown = set(doc) - {"model", "train", "data"}
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")
    try:
        train_doc = dict(doc.get("train", {}))
        if seed is not None:
            train_doc["seed"] = seed
        tc = TrainConfig(**train_doc)
        net = ToyNetConfig(**doc.get("model", {}))
        data_doc = {"seed": tc.seed, "classes": net.classes, "size": net.input_size, **doc.get("data", {})}
        if seed is not None:
            data_doc["seed"] = seed
        data = SyntheticDataset(**data_doc)
    except TypeError as exc:
        raise ConfigError(f"bad training config: {exc}") from exc
    return net, tc, data


def cmd_train(args):
    from .tensor import Rng
    from .toy import build, save_checkpoint, train

    try:
        doc = json.loads(Path(args.config).read_text()) if args.config else {}
    except json.JSONDecodeError as exc:
        raise FormatError(f"{args.config}: not valid JSON ({exc})") from exc
    net, tc, data = _train_configs(doc, args.seed)
    model = build(net, Rng(tc.seed))
    history = train(model, data, tc)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "history.csv").write_text(history.to_csv())
    (out / "history.json").write_text(history.to_json())
    save_checkpoint(model, out / "checkpoint")
    final = history.rows[-1]
    _emit(
        args,
        {"history": history.rows, "output_dir": str(out)},
        f"trained {tc.epochs} epochs: loss {final['loss']:.4f} train_acc {final['train_acc']:.3f} "
        f"val_acc {final['val_acc']:.3f}; wrote {out}/history.csv, history.json, checkpoint/",
    )
    return EXIT_OK


def cmd_selftest(args):
    from .selftest import run

    results = run(args.seed or 0)
    ok = all(passed for _, passed, _ in results)
    lines = [f"{'PASS' if p else 'FAIL'}  {name}{'  ' + msg if msg else ''}" for name, p, msg in results]
    payload = {"passed": ok, "checks": [{"name": n, "passed": p, "message": m} for n, p, m in results]}
    _emit(args, payload, "\n".join(lines))
    return EXIT_OK if ok else EXIT_CHECK


def build_parser():
    def global_flags(parser, top):
        # accepted before or after the subcommand; the subcommand copy only overrides when given
        seed_default, json_default = (None, False) if top else (argparse.SUPPRESS, argparse.SUPPRESS)
        parser.add_argument("--seed", type=int, default=seed_default, help="seed for randomized fixtures and training")
        parser.add_argument("--json", action="store_true", default=json_default, help="emit one JSON document on stdout")

    common = _Parser(add_help=False)
    global_flags(common, top=False)

    variants = _Parser(add_help=False)
    variants.add_argument("--groups", type=int, required=True, help="number of feature groups G")
    variants.add_argument("--shuffle-groups", type=int, default=2)
    variants.add_argument("--eps", type=float, default=1e-5, help="group-norm epsilon")
    variants.add_argument("--no-gn", action="store_true", help="drop group norm in the spatial branch")
    variants.add_argument("--no-shuffle", action="store_true", help="skip the final channel shuffle")
    variants.add_argument("--no-fc", action="store_true", help="gate on raw statistics (no scale/shift)")
    variants.add_argument("--fc-conv", action="store_true", help="use a 1x1-conv gate instead of scale/shift")

    parser = _Parser(prog="sanet", description="Shuffle Attention toolkit")
    global_flags(parser, top=True)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("forward", parents=[common, variants], help="run SA on a SATK tensor")
    p.add_argument("--input", required=True)
    p.add_argument("--params", help="SaParams JSON; default is the zero-weight/unit-bias init")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_forward)

    p = sub.add_parser("gradcheck", parents=[common, variants], help="analytic vs finite-difference gradients")
    p.add_argument("--shape", required=True, help="n,c,h,w")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--h", type=float, default=DEFAULT_STEP, help="central-difference step")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("cost", parents=[common], help="parameter/FLOP accounting on a backbone")
    p.add_argument("--model", default="resnet50", help="resnet50, resnet101 or a descriptor JSON path")
    p.add_argument("--attention", default="none", help="none, sa:G or se:r")
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("shuffle", parents=[common], help="channel-shuffle a SATK tensor")
    p.add_argument("--input", required=True)
    p.add_argument("--g", type=int, required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_shuffle)

    p = sub.add_parser("train", parents=[common], help="train the toy network")
    p.add_argument("--config", help="JSON with optional 'model', 'train', 'data' sections")
    p.add_argument("--output-dir", default=".")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("selftest", parents=[common], help="run the built-in property suite")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "gradcheck" and args.seed is None:
        args.seed = 0
    try:
        return args.func(args)
    except (FormatError, OSError) as exc:
        print(f"sanet {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ShapeError, ConfigError, NonFiniteError) as exc:
        print(f"sanet {args.command}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
