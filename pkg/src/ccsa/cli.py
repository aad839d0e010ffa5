"""Command-line entry point: ``ccsa <subcommand> ...``.

Subcommands
  train-sda / train-dg   run a JSON experiment config (sweep over n and seeds)
  gen-data               write synthetic domains as CSV files
  eval                   accuracy of a checkpoint on CSV datasets
  gradcheck              finite-difference check of every primitive and loss
  project                2-D PCA projection of embeddings for plotting

The default output root is ``$CCSA_OUT`` (falling back to ``./runs``).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import gradcheck
from .data import gen_gaussian_domains, gen_rotated_gaussian_domains, load_csv, write_csv
from .eval import accuracy, per_class_accuracy
from .experiment import ConfigError, default_out_root, export_projection, load_config, parse_config, run
from .nn import load_params

EXIT_CONFIG = 2


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text}")
    return value


def _train(args, task: str) -> int:
    try:
        exp = load_config(args.config)
        if exp.task != task:
            raise ConfigError("task", f"config is for {exp.task!r}, subcommand expects {task!r}")
        if args.seed is not None:
            exp = parse_config({**exp.raw, "seeds": [args.seed]})
    except (ConfigError, OSError) as exc:
        print(f"error: {args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    csv_path, rows, failures = run(config=exp, out_root=args.out or default_out_root(), jobs=args.jobs)
    print(f"{len(rows)} rows -> {csv_path}")
    for f in failures:
        print(f"failed cell variant={f['variant']} n={f['n']} seed={f['seed']}: {f['error']}", file=sys.stderr)
    return 1 if failures else 0


def gradcheck_cmd(seed: int = 0, trials: int = 3, out=None) -> int:
    """Print the worst relative error per item; 0 iff every item is below tolerance."""
    out = out or sys.stdout
    report = gradcheck.run_suite(seed, trials)
    width = max(map(len, report))
    for name, err in report.items():
        flag = "ok" if err < gradcheck.TOLERANCE else "FAIL"
        print(f"{name:<{width}}  {err:.3e}  {flag}", file=out)
    bad = [n for n, e in report.items() if not e < gradcheck.TOLERANCE]
    if bad:
        print(f"gradcheck failed (tolerance {gradcheck.TOLERANCE:g}): {', '.join(bad)}", file=out)
        return 1
    return 0


def _gen_data(args) -> int:
    out = Path(args.out or default_out_root())
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "gaussian":
        domains = gen_gaussian_domains(args.classes, args.dim, args.per_class, args.shift,
                                       args.rotation, args.seed)
    else:
        domains = gen_rotated_gaussian_domains(args.classes, args.dim, args.per_class, args.angles, args.seed)
    for d in domains:
        path = out / f"{d.domain}.csv"
        write_csv(path, d)
        print(f"{len(d)} samples -> {path}")
    return 0


def _eval(args) -> int:
    params, g_spec, h_spec, _ = load_params(args.params)
    result = {}
    for path in args.data:
        ds = load_csv(path, Path(path).stem, h_spec.output_shape[0])
        result[path] = {"accuracy": accuracy(params, (g_spec, h_spec), ds, args.stream),
                        "per_class_accuracy": per_class_accuracy(params, (g_spec, h_spec), ds, args.stream),
                        "samples": len(ds)}
    print(json.dumps(result, indent=2))
    return 0


def _project(args) -> int:
    out = args.out or str(default_out_root() / "projection.csv")
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    n = export_projection(args.params, args.data, out, args.stream)
    print(f"{n} rows -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ccsa", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    for name in ("train-sda", "train-dg"):
        p = sub.add_parser(name, help=f"run a {name[6:]} experiment config")
        p.add_argument("--config", required=True)
        p.add_argument("--out", help="output root (default $CCSA_OUT or ./runs)")
        p.add_argument("--seed", type=_seed, help="run only this seed instead of the config's list")
        p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")

    p = sub.add_parser("gen-data", help="write synthetic domains as CSV")
    p.add_argument("--kind", choices=("gaussian", "rotated_gaussian"), default="gaussian")
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--per-class", type=int, default=50)
    p.add_argument("--shift", type=float, default=2.0)
    p.add_argument("--rotation", type=float, default=60.0)
    p.add_argument("--angles", type=float, nargs="+", default=[0, 20, 40, 60])
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--out")

    p = sub.add_parser("eval", help="accuracy of a checkpoint on CSV datasets")
    p.add_argument("--params", required=True)
    p.add_argument("--data", nargs="+", required=True)
    p.add_argument("--stream", choices=("source", "target"), default="target")

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--trials", type=int, default=3)

    p = sub.add_parser("project", help="2-D PCA projection of embeddings")
    p.add_argument("--params", required=True)
    p.add_argument("--data", nargs="+", required=True)
    p.add_argument("--stream", choices=("source", "target"), default="source")
    p.add_argument("--out", help="CSV path (default <output root>/projection.csv)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command in ("train-sda", "train-dg"):
        return _train(args, args.command[6:])
    if args.command == "gradcheck":
        return gradcheck_cmd(args.seed, args.trials)
    handler = {"gen-data": _gen_data, "eval": _eval, "project": _project}[args.command]
    try:
        return handler(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
