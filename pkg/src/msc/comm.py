"""SPMD process groups with five collectives.

``Communicator`` is the only channel between processes. Three backends:

* ``SelfComm``: a single process.
* ``PipeComm``: processes started by :class:`LocalCluster`, wired by a full mesh
  of pipes. Collectives are routed through the lowest member of the group.
* ``MPIComm``: a thin wrapper around an ``mpi4py`` communicator.
"""

from __future__ import annotations

import os
import traceback
from abc import ABC, abstractmethod
from collections import Counter
from typing import Any, Callable, Optional

import numpy as np

PRIMITIVES = ("barrier", "allreduce_max", "allgatherv", "gatherv", "bcast")


class CollectiveError(RuntimeError):
    """Members of a group disagreed about which collective they were in."""


class ParallelJobError(RuntimeError):
    """A rank failed; the job was aborted on every rank."""

    def __init__(self, message: str, rank: Optional[int] = None):
        super().__init__(message)
        self.rank = rank


def _as_array(x) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(x, dtype=np.float64).ravel())


class Communicator(ABC):
    """Process group handle. Every member must make the same collective calls in the same order."""

    rank: int
    size: int

    def __init__(self):
        self.calls: Counter = Counter()

    @property
    def is_root(self) -> bool:
        return self.rank == 0

    def barrier(self) -> None:
        self.calls["barrier"] += 1
        self._barrier()

    def allreduce_max(self, x: float) -> float:
        self.calls["allreduce_max"] += 1
        return float(self._allreduce_max(float(x)))

    def allgatherv(self, arr) -> np.ndarray:
        """Concatenate every member's 1-d array in rank order, on every member."""
        self.calls["allgatherv"] += 1
        return self._allgatherv(_as_array(arr))

    def gatherv(self, arr, root: int = 0) -> Optional[np.ndarray]:
        """Concatenation in rank order on ``root``; ``None`` elsewhere."""
        self.calls["gatherv"] += 1
        return self._gatherv(_as_array(arr), root)

    def bcast(self, arr, root: int = 0) -> np.ndarray:
        self.calls["bcast"] += 1
        return self._bcast(None if arr is None else _as_array(arr), root)

    @abstractmethod
    def split(self, color: Optional[int], key: int) -> Optional["Communicator"]:
        """Partition by ``color`` (``None`` opts out), ordering members by ``(key, rank)``."""

    @abstractmethod
    def _barrier(self): ...

    @abstractmethod
    def _allreduce_max(self, x: float) -> float: ...

    @abstractmethod
    def _allgatherv(self, arr: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def _gatherv(self, arr: np.ndarray, root: int) -> Optional[np.ndarray]: ...

    @abstractmethod
    def _bcast(self, arr: Optional[np.ndarray], root: int) -> np.ndarray: ...


class SelfComm(Communicator):
    rank = 0
    size = 1

    def split(self, color, key):
        return None if color is None else SelfComm()

    def _barrier(self):
        pass

    def _allreduce_max(self, x):
        return x

    def _allgatherv(self, arr):
        return arr.copy()

    def _gatherv(self, arr, root):
        if root != 0:
            raise ValueError("root out of range")
        return arr.copy()

    def _bcast(self, arr, root):
        if root != 0:
            raise ValueError("root out of range")
        return arr.copy()


class _Mesh:
    """Point-to-point links from one process to all others, with tag matching."""

    def __init__(self, world_rank: int, world_size: int, peers: dict):
        self.world_rank = world_rank
        self.world_size = world_size
        self.peers = peers
        self.pending: dict = {}

    def send(self, dst: int, tag, payload) -> None:
        self.peers[dst].send((tag, payload))

    def recv(self, src: int, tag):
        key = (src, tag)
        if key in self.pending:
            return self.pending.pop(key)
        while True:
            got_tag, payload = self.peers[src].recv()
            if got_tag == tag:
                return payload
            if (src, got_tag) in self.pending:
                raise CollectiveError(f"duplicate message {got_tag} from rank {src}")
            self.pending[(src, got_tag)] = payload


class PipeComm(Communicator):
    def __init__(self, mesh: _Mesh, members: tuple, comm_id: str):
        super().__init__()
        self.mesh = mesh
        self.members = tuple(members)
        self.comm_id = comm_id
        self.rank = self.members.index(mesh.world_rank)
        self.size = len(self.members)
        self._seq = 0
        self._splits = 0

    def _tag(self, kind: str):
        self._seq += 1
        return (self.comm_id, self._seq, kind)

    def _gather_obj(self, obj, root: int, tag) -> Optional[list]:
        if not 0 <= root < self.size:
            raise ValueError("root out of range")
        if self.rank != root:
            self.mesh.send(self.members[root], tag, obj)
            return None
        out = []
        for r, peer in enumerate(self.members):
            out.append(obj if r == root else self.mesh.recv(peer, tag))
        return out

    def _bcast_obj(self, obj, root: int, tag):
        if self.rank == root:
            for r, peer in enumerate(self.members):
                if r != root:
                    self.mesh.send(peer, tag, obj)
            return obj
        return self.mesh.recv(self.members[root], tag)

    def _allgather_obj(self, obj, kind: str) -> list:
        parts = self._gather_obj(obj, 0, self._tag(kind + ":up"))
        return self._bcast_obj(parts, 0, self._tag(kind + ":down"))

    def split(self, color, key):
        self._splits += 1
        entries = self._allgather_obj((color, key, self.mesh.world_rank), "split")
        if color is None:
            return None
        mine = sorted((k, r, wr) for (c, k, wr), r in zip(entries, range(self.size)) if c == color)
        members = tuple(wr for _, _, wr in mine)
        return PipeComm(self.mesh, members, f"{self.comm_id}/{self._splits}:{color}")

    def _barrier(self):
        self._allgather_obj(None, "barrier")

    def _allreduce_max(self, x):
        return max(self._allgather_obj(x, "allreduce_max"))

    def _allgatherv(self, arr):
        return np.concatenate(self._allgather_obj(arr, "allgatherv"))

    def _gatherv(self, arr, root):
        parts = self._gather_obj(arr, root, self._tag("gatherv"))
        return None if parts is None else np.concatenate(parts)

    def _bcast(self, arr, root):
        if not 0 <= root < self.size:
            raise ValueError("root out of range")
        return self._bcast_obj(arr, root, self._tag("bcast"))


class MPIComm(Communicator):
    def __init__(self, comm=None):
        super().__init__()
        from mpi4py import MPI

        self._MPI = MPI
        self.comm = MPI.COMM_WORLD if comm is None else comm
        self.rank = self.comm.Get_rank()
        self.size = self.comm.Get_size()

    def split(self, color, key):
        MPI = self._MPI
        sub = self.comm.Split(MPI.UNDEFINED if color is None else int(color), int(key))
        return None if sub == MPI.COMM_NULL else MPIComm(sub)

    def _barrier(self):
        self.comm.Barrier()

    def _allreduce_max(self, x):
        return self.comm.allreduce(x, op=self._MPI.MAX)

    def _allgatherv(self, arr):
        counts = self.comm.allgather(arr.size)
        out = np.empty(sum(counts))
        self.comm.Allgatherv(arr, [out, counts])
        return out

    def _gatherv(self, arr, root):
        counts = self.comm.gather(arr.size, root=root)
        if self.rank == root:
            out = np.empty(sum(counts))
            self.comm.Gatherv(arr, [out, counts], root=root)
            return out
        self.comm.Gatherv(arr, None, root=root)
        return None

    def _bcast(self, arr, root):
        n = self.comm.bcast(None if arr is None else arr.size, root=root)
        buf = arr if self.rank == root else np.empty(n)
        self.comm.Bcast(buf, root=root)
        return buf


MPI_ENV_VARS = ("OMPI_COMM_WORLD_SIZE", "PMI_SIZE", "PMIX_RANK", "MPI_LOCALNRANKS")


def launched_by_mpi() -> bool:
    return any(v in os.environ for v in MPI_ENV_VARS)


def world_from_env() -> Communicator:
    """World communicator from the launcher, or a single-process one."""
    if launched_by_mpi():
        return MPIComm()
    return SelfComm()


# -- local multi-process harness -------------------------------------------

def _worker_main(rank: int, size: int, peers: dict, ctrl) -> None:
    mesh = _Mesh(rank, size, peers)
    job = 0
    while True:
        try:
            task = ctrl.recv()
        except EOFError:
            return
        if task is None:
            return
        fn, args, kwargs = task
        job += 1
        world = PipeComm(mesh, tuple(range(size)), f"job{job}")
        try:
            result = fn(world, *args, **kwargs)
        except BaseException as exc:  # report and let the parent tear the job down
            ctrl.send(("err", f"rank {rank}: {type(exc).__name__}: {exc}", traceback.format_exc()))
            return
        ctrl.send(("ok", result, None))


class LocalCluster:
    """``p`` persistent worker processes that run SPMD jobs.

    >>> with LocalCluster(3) as cluster:               # doctest: +SKIP
    ...     per_rank = cluster.run(job_fn, arg)

    ``job_fn(world, *args)`` must be importable (it is pickled to the workers).
    A failing rank aborts the job on all ranks and the cluster becomes unusable.
    """

    def __init__(self, size: int, start_method: str = "spawn", blas_threads: Optional[int] = 1):
        if size < 1:
            raise ValueError("size must be >= 1")
        self.size = size
        self.start_method = start_method
        self.blas_threads = blas_threads
        self._procs: list = []
        self._ctrl: list = []
        self._alive = False

    def start(self) -> "LocalCluster":
        import multiprocessing as mp

        ctx = mp.get_context(self.start_method)
        p = self.size
        ends: list[dict] = [dict() for _ in range(p)]
        for i in range(p):
            for j in range(i + 1, p):
                a, b = ctx.Pipe(duplex=True)
                ends[i][j] = a
                ends[j][i] = b
        saved = {}
        if self.blas_threads is not None:
            for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
                saved[var] = os.environ.get(var)
                os.environ[var] = str(self.blas_threads)
        try:
            for rank in range(p):
                parent_end, child_end = ctx.Pipe(duplex=True)
                proc = ctx.Process(
                    target=_worker_main, args=(rank, p, ends[rank], child_end), daemon=True
                )
                proc.start()
                child_end.close()
                self._procs.append(proc)
                self._ctrl.append(parent_end)
        finally:
            for var, old in saved.items():
                if old is None:
                    os.environ.pop(var, None)
                else:
                    os.environ[var] = old
        for conns in ends:
            for c in conns.values():
                c.close()
        self._alive = True
        return self

    def run(self, fn: Callable, *args, timeout: Optional[float] = None, **kwargs) -> list:
        """Run ``fn(world, *args, **kwargs)`` on every rank; return per-rank results."""
        from multiprocessing.connection import wait

        if not self._alive:
            raise ParallelJobError("cluster is not running")
        for c in self._ctrl:
            c.send((fn, args, kwargs))
        results: list[Any] = [None] * self.size
        waiting = {c: r for r, c in enumerate(self._ctrl)}
        while waiting:
            ready = wait(list(waiting), timeout=timeout)
            if not ready:
                self.terminate()
                raise ParallelJobError(f"job timed out after {timeout} s")
            for c in ready:
                rank = waiting.pop(c)
                try:
                    status, payload, tb = c.recv()
                except (EOFError, OSError):
                    self.terminate()
                    raise ParallelJobError(f"rank {rank}: process exited unexpectedly", rank)
                if status == "err":
                    self.terminate()
                    raise ParallelJobError(f"{payload}\n{tb}", rank)
                results[rank] = payload
        return results

    def terminate(self) -> None:
        for proc in self._procs:
            if proc.is_alive():
                proc.terminate()
        for proc in self._procs:
            proc.join(timeout=5)
        self._alive = False

    def close(self) -> None:
        if self._alive:
            for c in self._ctrl:
                try:
                    c.send(None)
                except (BrokenPipeError, OSError):
                    pass
            for proc in self._procs:
                proc.join(timeout=10)
        self.terminate()
        for c in self._ctrl:
            c.close()

    def __enter__(self) -> "LocalCluster":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.close()


def run_local(size: int, fn: Callable, *args, timeout: Optional[float] = None, **kwargs) -> list:
    """Start a throwaway :class:`LocalCluster`, run one job, shut it down."""
    with LocalCluster(size) as cluster:
        return cluster.run(fn, *args, timeout=timeout, **kwargs)
