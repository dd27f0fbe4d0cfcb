"""Distributed multi-slice clustering over three process groups.

The ``p`` processes split into three groups of ``p/3``; group ``g`` clusters
mode ``g+1``. Inside a group the slices of that mode are block-distributed,
each process computes its eigen columns, the group all-gathers them and the
largest eigenvalue, computes its rows of the similarity matrix, and gathers the
marginals on the group root, which selects the cluster. The three group roots
finally send their clusters to world rank 0.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from typing import Optional, Protocol

import numpy as np

from . import core
from .comm import Communicator, LocalCluster
from .spectral import DEFAULT_MAX_ITER, DEFAULT_SEED, DEFAULT_TOL
from .tensor import BlockRange, Tensor3, block_range, mode_slice, open_tensor, slice_shape

PHASES = ("distribute", "eigen", "assemble", "similarity", "gather", "select")


class StartupError(ValueError):
    pass


class SliceSource(Protocol):
    dims: tuple[int, int, int]

    def slice(self, mode: int, index: int) -> np.ndarray: ...


@dataclass(frozen=True)
class FileSource:
    """Slices read straight from an MSC3 file through a memory map."""

    path: str

    @property
    def dims(self) -> tuple[int, int, int]:
        from .tensor import read_header

        return read_header(self.path)

    def slice(self, mode: int, index: int) -> np.ndarray:
        return mode_slice(open_tensor(self.path), mode, index)


@dataclass(frozen=True)
class ArraySource:
    """In-memory tensor; every process receives a full copy. Meant for tests."""

    tensor: Tensor3

    @property
    def dims(self):
        return self.tensor.dims

    def slice(self, mode: int, index: int) -> np.ndarray:
        return self.tensor.slice(mode, index)


@dataclass
class GroupAssignment:
    mode: int
    group_comm: Communicator
    roots_comm: Optional[Communicator]
    global_rank: int
    world_size: int

    @property
    def group_rank(self) -> int:
        return self.group_comm.rank

    @property
    def group_size(self) -> int:
        return self.group_comm.size

    @property
    def is_group_root(self) -> bool:
        return self.group_comm.rank == 0

    @property
    def is_global_root(self) -> bool:
        return self.global_rank == 0


@dataclass
class LocalBlock:
    mode: int
    range: BlockRange
    slices: list
    n_cols: int
    columns: Optional[np.ndarray] = None
    values: Optional[np.ndarray] = None
    local_lambda_max: float = 0.0

    @property
    def slice_bytes(self) -> int:
        return sum(s.nbytes for s in self.slices)


@dataclass
class RankStats:
    rank: int
    group: int
    timings: dict = field(default_factory=dict)
    slices_held: int = 0
    slice_bytes: int = 0
    calls: dict = field(default_factory=dict)


@dataclass
class ParallelResult:
    modes: tuple
    timings: list
    elapsed: float
    timings_file: Optional[str] = None

    @property
    def clusters(self):
        return tuple(r.cluster for r in self.modes)

    def to_json(self) -> dict:
        out = {f"J{r.mode}": r.to_json() for r in self.modes}
        out["timings_file"] = self.timings_file
        return out


def split_groups(world: Communicator) -> GroupAssignment:
    p = world.size
    if p < 3 or p % 3:
        raise StartupError(f"process count must be a positive multiple of 3, got {p}")
    per_group = p // 3
    group = world.rank // per_group
    group_comm = world.split(group, world.rank)
    roots_comm = world.split(0 if group_comm.rank == 0 else None, world.rank)
    return GroupAssignment(group + 1, group_comm, roots_comm, world.rank, p)


def distribute(source: SliceSource, assignment: GroupAssignment) -> LocalBlock:
    mode = assignment.mode
    m = source.dims[mode - 1]
    rng = block_range(m, assignment.group_size, assignment.group_rank)
    n = slice_shape(source.dims, mode)[1]
    try:
        slices = [source.slice(mode, i) for i in rng.indices()]
    except OSError as exc:
        raise OSError(f"rank {assignment.global_rank}: cannot read slices: {exc}") from exc
    return LocalBlock(mode, rng, slices, n)


def local_eigen(block: LocalBlock, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
                seed=DEFAULT_SEED, rank: Optional[int] = None) -> LocalBlock:
    cols, vals = core.eigen_columns(block.slices, block.n_cols, tol, max_iter, seed,
                                    mode=block.mode, first_index=block.range.start, rank=rank)
    block.columns = cols
    block.values = vals
    block.local_lambda_max = float(vals.max()) if vals.size else 0.0
    return block


def assemble_V(block: LocalBlock, group_comm: Communicator) -> core.EigenMatrix:
    # one all-gather of M; each row carries its eigenvalue in front
    rows = np.column_stack([block.values, block.columns]) if block.values.size else np.empty((0, 1 + block.n_cols))
    flat = group_comm.allgatherv(rows).reshape(-1, 1 + block.n_cols)
    lam = group_comm.allreduce_max(block.local_lambda_max)
    em = core.EigenMatrix(np.ascontiguousarray(flat[:, 1:]), flat[:, 0].copy(), lam)
    # every member sees the same lam, so all of them raise together
    return core.normalize(em)


def local_similarity(block: LocalBlock, v: core.EigenMatrix) -> tuple[np.ndarray, np.ndarray]:
    rows = core.similarity_rows(v, block.range.start, block.range.stop)
    return rows, core.marginals(rows)


def gather_and_select(d_local: np.ndarray, assignment: GroupAssignment, eps: Optional[float],
                      v: core.EigenMatrix, timings: Optional[dict] = None) -> Optional[core.ModeResult]:
    t0 = time.perf_counter()
    d = assignment.group_comm.gatherv(d_local, root=0)
    if timings is not None:
        timings["gather"] = time.perf_counter() - t0
    if not assignment.is_group_root:
        return None
    t0 = time.perf_counter()
    mode = assignment.mode
    if eps is None:
        eps = core.default_eps(d.size)
    cluster, iterations, ok = core.select_cluster(d, mode, eps)
    # the root holds the full V, so the cluster block of C is cheap to form here
    within = core.cluster_within(v, cluster)
    result = core.ModeResult(mode, cluster, d, iterations, eps, ok, within)
    if timings is not None:
        timings["select"] = time.perf_counter() - t0
    return result


def _encode(r: core.ModeResult) -> np.ndarray:
    head = [r.mode, r.eps, r.iterations, float(r.hypothesis_ok), r.within, len(r.cluster), r.d.size]
    return np.concatenate([head, r.cluster.as_array(), r.d]).astype(np.float64)


def _decode_all(buf: np.ndarray) -> list:
    out, pos = [], 0
    while pos < buf.size:
        mode, eps, its, ok, within, nj, nd = buf[pos : pos + 7]
        pos += 7
        nj, nd, mode = int(nj), int(nd), int(mode)
        J = buf[pos : pos + nj].astype(int)
        pos += nj
        d = buf[pos : pos + nd].copy()
        pos += nd
        out.append(core.ModeResult(mode, core.ClusterSet(mode, J), d, int(its), float(eps), bool(ok), float(within)))
    return out


def gather_result(assignment: GroupAssignment, result: Optional[core.ModeResult]):
    """Collect the three group results on world rank 0, ordered by their mode tag."""
    if assignment.roots_comm is None:
        return None
    got = assignment.roots_comm.gatherv(_encode(result), root=0)
    if got is None:
        return None
    modes = sorted(_decode_all(got), key=lambda r: r.mode)
    if [r.mode for r in modes] != [1, 2, 3]:
        raise RuntimeError(f"expected one result per mode, got modes {[r.mode for r in modes]}")
    return tuple(modes)


def write_timings(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rank", "group", "phase", "seconds"])
        for rank, group, phase, seconds in rows:
            w.writerow([rank, group, phase, repr(float(seconds))])


def parallel_msc(world: Communicator, source: SliceSource, eps: Optional[float] = None,
                 tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, seed=DEFAULT_SEED,
                 timings_file: Optional[str] = None, result_file: Optional[str] = None,
                 with_stats: bool = False):
    """SPMD entry point: call on every rank of ``world``.

    Returns a :class:`ParallelResult` on world rank 0 and ``None`` elsewhere
    (or ``(result, RankStats)`` when ``with_stats``). ``eps=None`` uses the
    per-mode default.
    """
    a = split_groups(world)
    timings = dict.fromkeys(PHASES, 0.0)
    stats = RankStats(world.rank, a.mode - 1, timings)

    t0 = time.perf_counter()
    block = distribute(source, a)
    timings["distribute"] = time.perf_counter() - t0
    stats.slices_held = len(block.slices)
    stats.slice_bytes = block.slice_bytes
    world.barrier()

    start = time.perf_counter()
    t0 = start
    local_eigen(block, tol, max_iter, seed, rank=world.rank)
    block.slices = []  # columns are all that is needed from here on
    timings["eigen"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    v = assemble_V(block, a.group_comm)
    timings["assemble"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    _, d_local = local_similarity(block, v)
    timings["similarity"] = time.perf_counter() - t0

    mode_result = gather_and_select(d_local, a, eps, v, timings)
    modes = gather_result(a, mode_result)
    elapsed = time.perf_counter() - start

    row = [float(a.mode - 1)] + [timings[p] for p in PHASES]
    table = world.gatherv(row, root=0)
    stats.calls = {
        "world": dict(world.calls),
        "group": dict(a.group_comm.calls),
        "roots": dict(a.roots_comm.calls) if a.roots_comm is not None else {},
    }

    result = None
    if world.rank == 0:
        table = table.reshape(world.size, 1 + len(PHASES))
        rows = [
            (rank, int(r[0]), phase, r[1 + k])
            for rank, r in enumerate(table)
            for k, phase in enumerate(PHASES)
        ]
        if timings_file is not None:
            write_timings(timings_file, rows)
        result = ParallelResult(modes, rows, elapsed, timings_file)
        if result_file is not None:
            with open(result_file, "w") as fh:
                json.dump(result.to_json(), fh, indent=2)
    return (result, stats) if with_stats else result


def run_parallel(source: SliceSource, procs: int, cluster: Optional[LocalCluster] = None,
                 timeout: Optional[float] = None, **kwargs) -> ParallelResult:
    """Run :func:`parallel_msc` on ``procs`` local worker processes and return the root result."""
    if procs < 3 or procs % 3:
        raise StartupError(f"process count must be a positive multiple of 3, got {procs}")
    if cluster is not None:
        if cluster.size != procs:
            raise ValueError(f"cluster has {cluster.size} workers, asked for {procs}")
        return cluster.run(parallel_msc, source, timeout=timeout, **kwargs)[0]
    with LocalCluster(procs) as owned:
        return owned.run(parallel_msc, source, timeout=timeout, **kwargs)[0]


def max_slices_per_process(m: int, group_size: int) -> int:
    return math.ceil(m / group_size)
