"""Cluster quality metrics and white-Wishart top-eigenvalue diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class QualityReport:
    rec: float
    sim: float
    rec_per_mode: tuple
    sim_per_mode: tuple

    def to_json(self) -> dict:
        return {
            "rec": self.rec,
            "sim": self.sim,
            "rec_per_mode": list(self.rec_per_mode),
            "sim_per_mode": list(self.sim_per_mode),
        }


def _as_set(J) -> set:
    return set(int(i) for i in J)


def recovery_per_mode(truth: Sequence, found: Sequence) -> tuple:
    out = []
    for J, Jhat in zip(truth, found):
        J = _as_set(J)
        if not J:
            raise ValueError("ground-truth cluster must be non-empty")
        out.append(len(J & _as_set(Jhat)) / len(J))
    return tuple(out)


def recovery_rate(truth: Sequence, found: Sequence) -> float:
    """Mean over the three modes of the fraction of each true cluster that was found."""
    return float(np.mean(recovery_per_mode(truth, found)))


def within_similarity(c: np.ndarray, J) -> float:
    idx = np.asarray(sorted(_as_set(J)), dtype=np.intp)
    if idx.size == 0:
        raise ValueError("found cluster must be non-empty")
    block = np.asarray(c)[np.ix_(idx, idx)]
    return float(block.sum() / idx.size**2)


def similarity_index(sims: Sequence[np.ndarray], found: Sequence) -> float:
    """Mean over modes of the average similarity over all pairs (diagonal included) of a found cluster."""
    return float(np.mean([within_similarity(c, J) for c, J in zip(sims, found)]))


def quality(truth: Sequence, results: Sequence) -> QualityReport:
    """Both metrics from per-mode results carrying ``cluster`` and ``within``."""
    found = [r.cluster for r in results]
    rec_modes = recovery_per_mode(truth, found)
    sim_modes = tuple(float(r.within) for r in results)
    return QualityReport(float(np.mean(rec_modes)), float(np.mean(sim_modes)), rec_modes, sim_modes)


def tw_center_scale(m2: int, m3: int) -> tuple[float, float]:
    """Centering and scaling of the top eigenvalue of ``Z'Z`` for ``Z`` of shape ``(m2, m3)``."""
    if m2 < 2 or m3 < 1:
        raise ValueError(f"need m2 >= 2 and m3 >= 1, got ({m2}, {m3})")
    a = math.sqrt(m2 - 1)
    b = math.sqrt(m3)
    mu = (a + b) ** 2
    sigma = math.sqrt(mu) * (1.0 / a + 1.0 / b) ** (1.0 / 3.0)
    return mu, sigma


@dataclass(frozen=True)
class WishartSummary:
    m2: int
    m3: int
    n_samples: int
    mean: float
    median: float
    std: float
    q25: float
    q75: float
    values: np.ndarray

    @property
    def spread(self) -> float:
        return self.std


def wishart_diagnostic(m2: int, m3: int, n_samples: int, seed: int = 0) -> WishartSummary:
    """Standardized top eigenvalues of ``Z'Z`` over Gaussian samples.

    Top eigenvalues come from a dense symmetric eigensolver, independently of
    the power-iteration code.
    """
    if m2 < 10 or m3 < 10:
        raise ValueError("the centering is only meaningful for m2, m3 >= 10")
    mu, sigma = tw_center_scale(m2, m3)
    rng = np.random.default_rng(seed)
    tops = np.empty(n_samples)
    for s in range(n_samples):
        z = rng.standard_normal((m2, m3))
        tops[s] = np.linalg.eigvalsh(z.T @ z)[-1]
    x = (tops - mu) / sigma
    q25, med, q75 = np.percentile(x, [25, 50, 75])
    return WishartSummary(m2, m3, n_samples, float(x.mean()), float(med), float(x.std(ddof=1)),
                          float(q25), float(q75), x)
