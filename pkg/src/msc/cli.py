"""Command line interface: ``msc run|par|gen|eval|bench``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import core
from .bench import (GammaSweepConfig, ScalingConfig, run_experiment_gamma_sweep,
                    run_experiment_scaling)
from .comm import launched_by_mpi, world_from_env
from .core import ModeResult
from .evaluate import recovery_per_mode
from .parallel import FileSource, parallel_msc, run_parallel
from .synth import CLUSTER_FRACTION, GroundTruth, synthetic
from .tensor import load_tensor, save_tensor

log = logging.getLogger("msc")


def _add_source_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", help="MSC3 tensor file")
    p.add_argument("--dims", type=int, nargs=3, metavar=("M1", "M2", "M3"),
                   help="generate a synthetic tensor of these dims instead of reading --input")
    p.add_argument("--cluster-frac", type=float, default=CLUSTER_FRACTION)
    p.add_argument("--gamma", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=None,
                   help="threshold parameter; default (1/(m - floor(0.1 m)))^2 per mode")


def _synthetic_from(args):
    l = tuple(max(1, int(args.cluster_frac * m)) for m in args.dims)
    return synthetic(args.dims, args.gamma, args.seed, l)


def _check_source(args) -> None:
    if (args.input is None) == (args.dims is None):
        raise SystemExit("give exactly one of --input or --dims")


def _write_json(obj, path) -> None:
    text = json.dumps(obj, indent=2)
    if path is None or path == "-":
        print(text)
    else:
        Path(path).write_text(text + "\n")


def cmd_gen(args) -> int:
    src = _synthetic_from(args)
    save_tensor(src.tensor(), args.out)
    if args.ground_truth:
        src.truth().save(args.ground_truth)
    log.info("wrote %s", args.out)
    return 0


def cmd_run(args) -> int:
    _check_source(args)
    t = load_tensor(args.input) if args.input else _synthetic_from(args).tensor()
    modes = core.msc_modes(t, args.eps)
    _write_json({f"J{r.mode}": r.to_json() for r in modes}, args.out)
    return 0


def cmd_par(args) -> int:
    _check_source(args)
    source = FileSource(args.input) if args.input else _synthetic_from(args)
    kwargs = dict(eps=args.eps, timings_file=args.timings, result_file=None)
    if launched_by_mpi():
        world = world_from_env()
        result = parallel_msc(world, source, **kwargs)
        if result is None:
            return 0
    else:
        result = run_parallel(source, args.procs, **kwargs)
    _write_json(result.to_json(), args.out)
    return 0


def cmd_eval(args) -> int:
    truth = GroundTruth.load(args.truth)
    obj = json.loads(Path(args.result).read_text())
    modes = [ModeResult.from_json(obj[f"J{k}"]) for k in (1, 2, 3)]
    rec_modes = recovery_per_mode(truth.clusters, [r.cluster for r in modes])
    sim_modes = [r.within for r in modes]
    _write_json({"rec": float(np.mean(rec_modes)), "sim": float(np.mean(sim_modes)),
                 "rec_per_mode": list(rec_modes), "sim_per_mode": sim_modes}, None)
    return 0


def cmd_bench(args) -> int:
    if args.kind == "gamma":
        gammas = np.geomspace(args.gamma_min, args.gamma_max, args.steps)
        cfg = GammaSweepConfig(dims=tuple(args.dims), gammas=tuple(gammas), repeats=args.repeats,
                               seed=args.seed, eps=args.eps, procs=args.procs)
        run_experiment_gamma_sweep(cfg, out=args.out)
    else:
        cfg = ScalingConfig(dims_list=[tuple(args.dims)], procs=tuple(args.procs_list),
                            repeats=args.repeats, seed=args.seed, eps=args.eps)
        run_experiment_scaling(cfg, out=args.out)
    log.info("wrote %s", args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="msc", description="Multi-slice clustering of 3rd-order tensors")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a synthetic tensor")
    p.add_argument("--dims", type=int, nargs=3, required=True, metavar=("M1", "M2", "M3"))
    p.add_argument("--cluster-frac", type=float, default=CLUSTER_FRACTION)
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--ground-truth")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("run", help="sequential clustering")
    _add_source_args(p)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("par", help="distributed clustering (under mpirun, or --procs local workers)")
    _add_source_args(p)
    p.add_argument("--procs", type=int, default=3, help="local worker count when not under an MPI launcher")
    p.add_argument("--timings", help="per-phase CSV written by the global root")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_par)

    p = sub.add_parser("eval", help="recovery rate and similarity index of a result")
    p.add_argument("--truth", required=True)
    p.add_argument("--result", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="experiment drivers writing CSV")
    p.add_argument("kind", choices=("gamma", "scaling"))
    p.add_argument("--out", required=True)
    p.add_argument("--dims", type=int, nargs=3, default=[100, 100, 100], metavar=("M1", "M2", "M3"))
    p.add_argument("--gamma-min", type=float, default=30.0)
    p.add_argument("--gamma-max", type=float, default=1000.0)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--procs", type=int, default=0, help="gamma sweep: 0 for sequential")
    p.add_argument("--procs-list", type=int, nargs="+", default=[3, 6, 12], help="scaling: process counts")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
