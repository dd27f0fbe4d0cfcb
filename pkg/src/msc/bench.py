"""Experiment drivers: quality versus signal strength, and run time versus process count."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import core
from .comm import LocalCluster
from .evaluate import quality
from .parallel import run_parallel
from .synth import synthetic

GAMMA_FIELDS = ("gamma", "rec_mean", "rec_std", "sim_mean", "sim_std")
SCALING_FIELDS = ("dims", "p", "seconds_mean", "seconds_std", "speedup_vs_sequential")


@dataclass
class BenchRecord:
    dims: tuple
    p: int
    gamma: float
    eps: Optional[float]
    seed: int
    seconds: float
    phases: dict = field(default_factory=dict)
    rec: float = float("nan")
    sim: float = float("nan")


@dataclass
class GammaSweepConfig:
    dims: tuple = (100, 100, 100)
    gammas: Sequence[float] = tuple(np.geomspace(30.0, 1000.0, 10))
    repeats: int = 10
    seed: int = 0
    eps: Optional[float] = None
    l: Optional[int] = None
    procs: int = 0  # 0 runs the sequential pipeline


@dataclass
class ScalingConfig:
    dims_list: Sequence[tuple] = ((60, 60, 60),)
    procs: Sequence[int] = (3, 6, 12)
    repeats: int = 3
    gamma: Optional[float] = None  # None: gamma equals the first dimension
    seed: int = 0
    eps: Optional[float] = None


def format_dims(dims) -> str:
    return "x".join(str(int(m)) for m in dims)


def parse_dims(text: str) -> tuple:
    return tuple(int(x) for x in text.split("x"))


def _run_modes(src, eps, procs: int, cluster: Optional[LocalCluster]):
    if procs == 0:
        return core.msc_modes(src.tensor(), eps)
    return run_parallel(src, procs, cluster=cluster, eps=eps).modes


def gamma_sweep_records(config: GammaSweepConfig, cluster: Optional[LocalCluster] = None) -> list:
    records = []
    for gamma in config.gammas:
        for r in range(config.repeats):
            seed = config.seed + r
            src = synthetic(config.dims, float(gamma), seed, config.l)
            t0 = time.perf_counter()
            modes = _run_modes(src, config.eps, config.procs, cluster)
            seconds = time.perf_counter() - t0
            q = quality(src.truth().clusters, modes)
            records.append(BenchRecord(tuple(config.dims), config.procs, float(gamma), config.eps,
                                       seed, seconds, rec=q.rec, sim=q.sim))
    return records


def summarize_gamma(records: Sequence[BenchRecord]) -> list:
    rows = []
    for gamma in dict.fromkeys(r.gamma for r in records):
        rec = np.array([r.rec for r in records if r.gamma == gamma])
        sim = np.array([r.sim for r in records if r.gamma == gamma])
        rows.append({"gamma": gamma, "rec_mean": rec.mean(), "rec_std": rec.std(),
                     "sim_mean": sim.mean(), "sim_std": sim.std()})
    return rows


def run_experiment_gamma_sweep(config: GammaSweepConfig, out=None,
                               cluster: Optional[LocalCluster] = None) -> list:
    """Quality over a range of signal strengths, noise resampled by bumping the seed.

    Writes ``gamma,rec_mean,rec_std,sim_mean,sim_std`` rows to ``out`` if given.
    """
    rows = summarize_gamma(gamma_sweep_records(config, cluster))
    if out is not None:
        write_csv(out, GAMMA_FIELDS, rows)
    return rows


def _timed_sequential(src, eps) -> float:
    t = src.tensor()
    t0 = time.perf_counter()
    core.msc_modes(t, eps)
    return time.perf_counter() - t0


def run_experiment_scaling(config: ScalingConfig, out=None) -> list:
    """Mean run time per process count, plus speedup over the sequential pipeline.

    Timings cover the clustering only: the sequential run starts from a tensor
    in memory and the parallel one from slices already held by each process.
    A row with ``p = 1`` holds the sequential baseline.
    """
    rows = []
    for dims in config.dims_list:
        gamma = float(dims[0]) if config.gamma is None else config.gamma
        seeds = [config.seed + r for r in range(config.repeats)]
        seq = np.array([_timed_sequential(synthetic(dims, gamma, s), config.eps) for s in seeds])
        rows.append({"dims": format_dims(dims), "p": 1, "seconds_mean": seq.mean(),
                     "seconds_std": seq.std(), "speedup_vs_sequential": 1.0})
        for p in config.procs:
            with LocalCluster(p) as cluster:
                times = np.array([
                    run_parallel(synthetic(dims, gamma, s), p, cluster=cluster, eps=config.eps).elapsed
                    for s in seeds
                ])
            rows.append({"dims": format_dims(dims), "p": p, "seconds_mean": times.mean(),
                         "seconds_std": times.std(), "speedup_vs_sequential": seq.mean() / times.mean()})
    if out is not None:
        write_csv(out, SCALING_FIELDS, rows)
    return rows


def write_csv(path, fields, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(fields))
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                        for k, v in row.items()})


def read_csv(path) -> list:
    """Parse a bench CSV back, converting numeric columns."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            parsed = {}
            for k, v in row.items():
                if k == "dims":
                    parsed[k] = v
                elif k == "p":
                    parsed[k] = int(v)
                else:
                    parsed[k] = float(v)
            out.append(parsed)
    return out
