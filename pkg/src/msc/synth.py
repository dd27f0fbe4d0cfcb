"""Planted rank-one tricluster plus i.i.d. Gaussian noise.

Noise entries are addressed by their linear tensor offset: a SplitMix64
stream keyed by the seed yields two uniforms per entry, and Box-Muller turns
them into one standard normal. Any slice can therefore be produced on its own,
bit-for-bit equal to the same slice cut from the full tensor.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .core import CLUSTER_FRACTION, ClusterSet
from .tensor import Tensor3, slice_shape

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_TWO_POW_M53 = 2.0**-53


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _stream_key(seed: int) -> np.uint64:
    with np.errstate(over="ignore"):
        return _mix64(np.array([seed % 2**64], dtype=np.uint64) + _GOLDEN)[0]


def counter_uniform(seed: int, counters: np.ndarray) -> np.ndarray:
    """Uniform doubles in [0, 1) at the given positions of the seed's stream."""
    key = _stream_key(seed)
    c = np.asarray(counters, dtype=np.uint64)
    with np.errstate(over="ignore"):
        x = _mix64(key + (c + np.uint64(1)) * _GOLDEN)
    return (x >> np.uint64(11)).astype(np.float64) * _TWO_POW_M53


def gaussian_at(seed: int, offsets: np.ndarray) -> np.ndarray:
    """Standard normal noise for the given linear tensor offsets."""
    q = np.asarray(offsets, dtype=np.uint64) * np.uint64(2)
    u1 = 1.0 - counter_uniform(seed, q)  # (0, 1]
    u2 = counter_uniform(seed, q + np.uint64(1))
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * math.pi * u2)


def indicator_vector(m: int, J) -> np.ndarray:
    idx = sorted(set(int(i) for i in J))
    if not idx:
        raise ValueError("cluster index set must be non-empty")
    if idx[0] < 0 or idx[-1] >= m:
        raise ValueError(f"cluster indices must lie in [0, {m})")
    v = np.zeros(m)
    v[idx] = 1.0 / math.sqrt(len(idx))
    return v


def default_cluster_size(m: int, fraction: float = CLUSTER_FRACTION) -> int:
    return max(1, int(math.floor(fraction * m)))


@dataclass(frozen=True)
class GroundTruth:
    J1: ClusterSet
    J2: ClusterSet
    J3: ClusterSet
    gamma: float
    l: tuple[int, int, int]
    seed: int

    @property
    def clusters(self) -> tuple[ClusterSet, ClusterSet, ClusterSet]:
        return self.J1, self.J2, self.J3

    def to_json(self) -> dict:
        return {
            "J1": list(self.J1.indices),
            "J2": list(self.J2.indices),
            "J3": list(self.J3.indices),
            "gamma": self.gamma,
            "l": list(self.l),
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "GroundTruth":
        return cls(
            ClusterSet(1, obj["J1"]),
            ClusterSet(2, obj["J2"]),
            ClusterSet(3, obj["J3"]),
            float(obj["gamma"]),
            tuple(obj["l"]),
            int(obj["seed"]),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2)

    @classmethod
    def load(cls, path) -> "GroundTruth":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


@dataclass(frozen=True)
class SyntheticTensor:
    """Lazily generated ``gamma * w (x) u (x) v + Z``.

    ``w``, ``u``, ``v`` are unit indicators of the first ``l_i`` indices of
    modes 1, 2 and 3.
    """

    dims: tuple[int, int, int]
    l: tuple[int, int, int]
    gamma: float
    seed: int

    def __post_init__(self):
        dims = tuple(int(m) for m in self.dims)
        l = tuple(int(x) for x in self.l)
        if len(dims) != 3 or min(dims) < 1:
            raise ValueError(f"dims must be three positive integers, got {self.dims}")
        if len(l) != 3 or any(not 1 <= li <= mi for li, mi in zip(l, dims)):
            raise ValueError(f"cluster sizes {self.l} must satisfy 1 <= l_i <= m_i for dims {dims}")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "l", l)
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def factors(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return tuple(indicator_vector(m, range(li)) for m, li in zip(self.dims, self.l))  # type: ignore[return-value]

    def truth(self) -> GroundTruth:
        sets = [ClusterSet(mode, range(li)) for mode, li in zip((1, 2, 3), self.l)]
        return GroundTruth(*sets, gamma=self.gamma, l=self.l, seed=self.seed)

    def _offsets(self, mode: int, index: int) -> np.ndarray:
        m1, m2, m3 = self.dims
        if not 0 <= index < self.dims[mode - 1]:
            raise IndexError(f"slice index {index} out of range for mode {mode}")
        i = np.arange(m1, dtype=np.uint64)
        j = np.arange(m2, dtype=np.uint64)
        k = np.arange(m3, dtype=np.uint64)
        s = np.uint64(index)
        if mode == 1:
            return (s * np.uint64(m2) + j[:, None]) * np.uint64(m3) + k[None, :]
        if mode == 2:
            return (i[:, None] * np.uint64(m2) + s) * np.uint64(m3) + k[None, :]
        return (i[:, None] * np.uint64(m2) + j[None, :]) * np.uint64(m3) + s

    def _signal(self, mode: int, index: int) -> np.ndarray:
        w, u, v = self.factors
        g = self.gamma
        # same association order as the full tensor: ((g*w_i)*u_j)*v_k
        if mode == 1:
            return ((g * w[index]) * u)[:, None] * v[None, :]
        if mode == 2:
            return ((g * w)[:, None] * u[index]) * v[None, :]
        return ((g * w)[:, None] * u[None, :]) * v[index]

    def slice(self, mode: int, index: int) -> np.ndarray:
        """Slice ``index`` of ``mode`` without materializing the tensor."""
        if mode not in (1, 2, 3):
            raise ValueError(f"mode must be 1, 2 or 3, got {mode!r}")
        noise = gaussian_at(self.seed, self._offsets(mode, index))
        out = self._signal(mode, index) + noise
        assert out.shape == slice_shape(self.dims, mode)
        return out

    def signal(self) -> np.ndarray:
        w, u, v = self.factors
        return ((self.gamma * w)[:, None, None] * u[None, :, None]) * v[None, None, :]

    def tensor(self) -> Tensor3:
        data = np.stack([self.slice(1, i) for i in range(self.dims[0])])
        return Tensor3(data)


def synthetic(dims: Sequence[int], gamma: float, seed: int,
              l: Union[int, Sequence[int], None] = None,
              cluster_frac: float = CLUSTER_FRACTION) -> SyntheticTensor:
    """Build a lazy synthetic tensor; ``l=None`` uses ``floor(cluster_frac * m_i)`` per mode."""
    dims = tuple(int(m) for m in dims)
    if l is None:
        sizes = tuple(default_cluster_size(m, cluster_frac) for m in dims)
    elif isinstance(l, (int, np.integer)):
        sizes = (int(l),) * 3
    else:
        sizes = tuple(int(x) for x in l)
    return SyntheticTensor(dims, sizes, gamma, seed)  # type: ignore[arg-type]


def generate(m1: int, m2: int, m3: int, l=None, gamma: float = 0.0, seed: int = 0,
             cluster_frac: float = CLUSTER_FRACTION) -> tuple[Tensor3, GroundTruth]:
    src = synthetic((m1, m2, m3), gamma, seed, l, cluster_frac)
    return src.tensor(), src.truth()
