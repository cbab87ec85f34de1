"""Command-line entry point: ``metn fit|fit-time|simulate|evaluate|report|run|synth``.

Exit codes: 0 ok, 1 usage, 2 infeasible constraints, 3 data error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

from . import pipeline, timing
from .events import DataError, SplitSpec, load_events, split, write_events
from .marks import InfeasibleError, write_blocks

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_DATA = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _data_flags(p):
    p.add_argument("--input", help="event log CSV (t,src,dst)")
    p.add_argument("--time-unit", type=float, help="rescale t -> (t - t_min) / unit")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--split-count", type=int, metavar="N", help="train on the first N events")
    g.add_argument("--split-time", type=float, metavar="T", help="train on events before T")
    p.add_argument("--self-loops", choices=("drop", "error"))


def _split_override(args):
    if args.split_count is not None:
        return {"mode": "by_count", "boundary": args.split_count}
    if args.split_time is not None:
        return {"mode": "by_time", "boundary": args.split_time}
    return None


def _config(args) -> pipeline.RunConfig:
    over = {
        "input": str(Path(args.input).resolve()) if getattr(args, "input", None) else None,
        "time_unit": getattr(args, "time_unit", None),
        "self_loops": getattr(args, "self_loops", None),
        "split": _split_override(args) if hasattr(args, "split_count") else None,
        "blocks": str(Path(args.blocks).resolve()) if getattr(args, "blocks", None) else None,
        "out": args.out,
        "seed": args.seed,
        "motif_window": getattr(args, "motif_window", None),
    }
    if args.config:
        return pipeline.RunConfig.from_file(args.config, **over)
    return pipeline.RunConfig(**{k: v for k, v in over.items() if v is not None})


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="metn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name, help_ in (("fit", "fit every configured model case"),
                        ("report", "write the CSV report suite"),
                        ("run", "fit, simulate, evaluate and report")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config")
        p.add_argument("--out")
        p.add_argument("--seed", type=int)
        _data_flags(p)
        p.add_argument("--blocks", help="node,block CSV")
        p.add_argument("--motif-window", type=float)

    p = sub.add_parser("fit-time", help="fit one time layer to an event log")
    _data_flags(p)
    p.add_argument("--kind", required=True, choices=timing.KINDS)
    p.add_argument("--use-split", choices=("train", "test"), default="train")
    p.add_argument("--bins", type=int, default=50)
    p.add_argument("--restarts", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output JSON path")

    p = sub.add_parser("simulate", help="sample event logs from a model bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--T", type=float, dest="horizon")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", help="likelihood table of bundles on a log")
    p.add_argument("--bundle", action="append", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--horizon", type=float)
    p.add_argument("--split", default="eval", help="label for the split column")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("synth", help="write the synthetic demo dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--nodes", type=int, default=100)
    p.add_argument("--events", type=int, default=5000)
    return parser


def _cmd(args):
    cmd = args.command
    if cmd in ("fit", "report", "run"):
        cfg = _config(args)
        if cmd == "fit":
            out = pipeline.run_fit(cfg)
        elif cmd == "report":
            out = pipeline.run_report(cfg)
        else:
            out = pipeline.run_all(cfg)
        print(out)
    elif cmd == "fit-time":
        if not args.input:
            raise DataError("--input is required")
        lg = load_events(args.input, time_unit=args.time_unit, self_loops=args.self_loops or "drop")
        sp = _split_override(args)
        if sp:
            train, test = split(lg, SplitSpec(sp["mode"], sp["boundary"]))
            lg = train if args.use_split == "train" else test
        res = timing.fit(args.kind, lg.times, lg.horizon, bins=args.bins, restarts=args.restarts,
                         seed=args.seed)
        if not res.converged:
            warnings.warn("time-layer fit did not converge")
        timing.save_time_model(args.out, res.model, lg.horizon, res.loglik,
                               iterations=res.iterations, converged=res.converged)
        print(args.out)
    elif cmd == "simulate":
        for p in pipeline.simulate_bundle(args.bundle, args.out, args.seed, args.reps, args.horizon):
            print(p)
    elif cmd == "evaluate":
        lg = load_events(args.input, horizon=args.horizon)
        table = pipeline.evaluate_bundles(args.bundle, {args.split: lg})
        print(table.write(args.out))
    elif cmd == "synth":
        from . import synthetic
        lg, blocks = synthetic.generate(n=args.nodes, K=args.events, seed=args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_events(lg, out / "events.csv")
        write_blocks(out / "blocks.csv", blocks, lg.labels)
        print(out)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _cmd(args)
    except InfeasibleError as exc:
        print(f"metn: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (DataError, FileNotFoundError) as exc:
        print(f"metn: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"metn: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
