"""Sequential multi-slice clustering of a 3rd-order tensor."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .spectral import (
    DEFAULT_MAX_ITER,
    DEFAULT_SEED,
    DEFAULT_TOL,
    ConvergenceError,
    covariance,
    top_eigenpair,
)
from .tensor import Tensor3, mode_slice, slice_shape

CLUSTER_FRACTION = 0.1


class DegenerateInputError(ValueError):
    """All slice covariances vanish, so the eigen matrix cannot be normalized."""


class SliceConvergenceError(ConvergenceError):
    def __init__(self, cause: ConvergenceError, mode: int, index: int, rank: Optional[int] = None):
        where = f"mode {mode} slice {index}" + ("" if rank is None else f" on rank {rank}")
        super().__init__(
            f"{where}: {cause}", cause.value, cause.vector, cause.residual, cause.iterations
        )
        self.mode = mode
        self.index = index
        self.rank = rank


@dataclass(frozen=True)
class ClusterSet:
    mode: int
    indices: tuple[int, ...]

    def __post_init__(self):
        idx = tuple(sorted(int(i) for i in self.indices))
        if len(set(idx)) != len(idx):
            raise ValueError("duplicate cluster indices")
        object.__setattr__(self, "indices", idx)

    def __len__(self):
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    def __contains__(self, i):
        return i in self.indices

    def as_array(self) -> np.ndarray:
        return np.asarray(self.indices, dtype=np.intp)


@dataclass
class EigenMatrix:
    """Per-slice columns ``lambda_i * v_i``, stored one slice per row.

    ``columns[i]`` is column ``i`` of M (or of V once ``normalized``).
    """

    columns: np.ndarray
    values: np.ndarray
    lambda_max: float
    normalized: bool = False

    @property
    def m(self) -> int:
        return self.columns.shape[0]

    def scaled_values(self) -> np.ndarray:
        """Normalized eigenvalues, in [0, 1] once the matrix is normalized."""
        return self.values / self.lambda_max if self.normalized else self.values


@dataclass
class ModeResult:
    mode: int
    cluster: ClusterSet
    d: np.ndarray
    iterations: int
    eps: float
    hypothesis_ok: bool
    within: float
    sim: Optional[np.ndarray] = field(default=None, repr=False)

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "J": list(self.cluster.indices),
            "d": [float(x) for x in self.d],
            "iterations": int(self.iterations),
            "eps": float(self.eps),
            "hypothesis_ok": bool(self.hypothesis_ok),
            "sim": float(self.within),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ModeResult":
        mode = int(obj["mode"])
        return cls(
            mode=mode,
            cluster=ClusterSet(mode, obj["J"]),
            d=np.asarray(obj["d"], dtype=np.float64),
            iterations=int(obj["iterations"]),
            eps=float(obj["eps"]),
            hypothesis_ok=bool(obj["hypothesis_ok"]),
            within=float(obj.get("sim", math.nan)),
        )


def theorem_threshold(l: int, eps: float, m: int) -> float:
    """Largest allowed spread of marginals inside a cluster of size ``l``: ``l*eps/2 + sqrt(ln(m - l))``."""
    if not 1 <= l < m:
        raise ValueError(f"need 1 <= l < m, got l={l}, m={m}")
    return l * eps / 2.0 + math.sqrt(math.log(m - l))


def check_epsilon_hypothesis(eps: float, m: int, l: int) -> bool:
    if l >= m:
        return True
    return math.sqrt(eps) <= 1.0 / (m - l)


def default_eps(m: int, fraction: float = CLUSTER_FRACTION) -> float:
    """Largest eps meeting the hypothesis at the expected cluster size ``floor(fraction*m)``."""
    l0 = int(math.floor(fraction * m))
    return (1.0 / (m - l0)) ** 2


def eigen_columns(slices: Iterable[np.ndarray], n: int, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
                  seed=DEFAULT_SEED, mode: int = 0, first_index: int = 0, rank=None):
    """Columns ``lambda_i * v_i`` and eigenvalues for consecutive slices.

    Shared by the sequential and distributed paths so both produce identical bits.
    """
    cols, vals = [], []
    for offset, s in enumerate(slices):
        try:
            pair = top_eigenpair(covariance(s), tol=tol, max_iter=max_iter, seed=seed)
        except ConvergenceError as exc:
            raise SliceConvergenceError(exc, mode, first_index + offset, rank) from exc
        cols.append(pair.value * pair.vector)
        vals.append(pair.value)
    columns = np.array(cols, dtype=np.float64).reshape(len(cols), n)
    return columns, np.array(vals, dtype=np.float64)


def build_eigen_matrix(t: Tensor3, mode: int, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
                       seed=DEFAULT_SEED) -> EigenMatrix:
    m = t.mode_size(mode)
    n = slice_shape(t.dims, mode)[1]
    slices = (mode_slice(t, mode, i) for i in range(m))
    columns, values = eigen_columns(slices, n, tol, max_iter, seed, mode=mode)
    return EigenMatrix(columns, values, float(values.max()))


def normalize(em: EigenMatrix) -> EigenMatrix:
    if em.lambda_max == 0.0:
        raise DegenerateInputError("all top eigenvalues are zero; nothing to normalize")
    return EigenMatrix(em.columns / em.lambda_max, em.values, em.lambda_max, normalized=True)


def similarity_rows(v: EigenMatrix, start: int = 0, stop: Optional[int] = None) -> np.ndarray:
    """Rows ``start:stop`` of ``|V' V|``, one matrix-vector product per row."""
    cols = v.columns
    stop = cols.shape[0] if stop is None else stop
    out = np.empty((stop - start, cols.shape[0]))
    for r, i in enumerate(range(start, stop)):
        out[r] = np.abs(cols @ cols[i])
    return out


def similarity(v: EigenMatrix) -> np.ndarray:
    return similarity_rows(v)


def marginals(c: np.ndarray) -> np.ndarray:
    """Row sums of (a block of rows of) the similarity matrix, diagonal included."""
    return np.asarray(c, dtype=np.float64).sum(axis=1)


def max_gap_init(d: np.ndarray, mode: int = 1) -> ClusterSet:
    """Indices whose marginal lies above the largest gap in the sorted marginals."""
    d = np.asarray(d, dtype=np.float64)
    if d.size < 2:
        raise ValueError("need at least two marginals")
    order = np.argsort(-d, kind="stable")
    ranked = d[order]
    gaps = ranked[:-1] - ranked[1:]
    k = int(np.argmax(gaps))
    if gaps[k] <= 0.0:
        warnings.warn("all marginals are equal; no gap to split on", RuntimeWarning, stacklevel=2)
        return ClusterSet(mode, range(d.size))
    return ClusterSet(mode, order[: k + 1])


def refine(d: np.ndarray, j0: ClusterSet, eps: float) -> tuple[ClusterSet, int]:
    """Drop the weakest member until the marginal spread fits the threshold.

    The weakest member is the one with the smallest marginal; ties remove the
    largest index. ``d`` is fixed throughout.
    """
    d = np.asarray(d, dtype=np.float64)
    m = d.size
    members = list(j0.indices)
    removed = 0
    while len(members) > 1:
        vals = d[members]
        spread = float(vals.max() - vals.min())
        if spread == 0.0 or spread <= theorem_threshold(len(members), eps, m):
            break
        low = vals.min()
        drop = max(i for i in members if d[i] == low)
        members.remove(drop)
        removed += 1
    return ClusterSet(j0.mode, members), removed


def select_cluster(d: np.ndarray, mode: int, eps: float) -> tuple[ClusterSet, int, bool]:
    j0 = max_gap_init(d, mode)
    cluster, iterations = refine(d, j0, eps)
    ok = check_epsilon_hypothesis(eps, d.size, len(cluster))
    if not ok:
        warnings.warn(
            f"mode {mode}: eps={eps:g} violates sqrt(eps) <= 1/(m - l) for m={d.size}, l={len(cluster)}",
            RuntimeWarning,
            stacklevel=2,
        )
    return cluster, iterations, ok


def cluster_similarity(c_block: np.ndarray) -> float:
    """Mean of the similarity entries over the cluster grid, diagonal included."""
    c_block = np.asarray(c_block)
    return float(c_block.sum() / c_block.size)


def cluster_within(v: EigenMatrix, cluster: ClusterSet) -> float:
    """Average similarity over the cluster grid, from the rows of V it selects."""
    sub = EigenMatrix(v.columns[cluster.as_array()], v.values, v.lambda_max, v.normalized)
    return cluster_similarity(similarity(sub))


def msc_mode(t: Tensor3, mode: int, eps: Optional[float] = None, tol=DEFAULT_TOL,
             max_iter=DEFAULT_MAX_ITER, seed=DEFAULT_SEED) -> ModeResult:
    m = t.mode_size(mode)
    if eps is None:
        eps = default_eps(m)
    v = normalize(build_eigen_matrix(t, mode, tol, max_iter, seed))
    c = similarity(v)
    d = marginals(c)
    cluster, iterations, ok = select_cluster(d, mode, eps)
    within = cluster_within(v, cluster)
    return ModeResult(mode, cluster, d, iterations, eps, ok, within, sim=c)


def msc_modes(t: Tensor3, eps: Optional[float] = None, **kwargs) -> tuple[ModeResult, ModeResult, ModeResult]:
    return tuple(msc_mode(t, mode, eps, **kwargs) for mode in (1, 2, 3))  # type: ignore[return-value]


def msc(t: Tensor3, eps: Optional[float] = None, **kwargs) -> tuple[ClusterSet, ClusterSet, ClusterSet]:
    """Clusters ``(J1, J2, J3)`` of the three modes of ``t``.

    ``eps=None`` picks :func:`default_eps` separately for each mode.
    """
    return tuple(r.cluster for r in msc_modes(t, eps, **kwargs))  # type: ignore[return-value]
