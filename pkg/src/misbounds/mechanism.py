"""Scheduling primitives for two unrelated machines.

Time matrices are 2 x n arrays; allocations are integer vectors with 0 for
machine 1 and 1 for machine 2.  Threshold algorithms send task ``j`` to
machine 1 iff ``T[0, j] / T[1, j] < z[j]`` (ties go to machine 2).
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

MACHINE_1 = 0
MACHINE_2 = 1

BRUTE_FORCE_CAP = 20


class DimensionError(ValueError):
    pass


class BruteForceCapExceeded(ValueError):
    pass


def time_matrix(entries) -> np.ndarray:
    """Validate and return a 2 x n float array of processing times."""
    T = np.array(entries, dtype=float)
    if T.ndim != 2 or T.shape[0] != 2 or T.shape[1] < 1:
        raise DimensionError(f"time matrix must be 2 x n with n >= 1, got shape {T.shape}")
    if not np.all(np.isfinite(T)) or np.any(T <= 0):
        raise ValueError("processing times must be finite and strictly positive")
    return T


def ratios(T: np.ndarray) -> np.ndarray:
    """Per-task processing time ratios T[0, j] / T[1, j]."""
    return T[0] / T[1]


def makespan(X: Sequence[int], T: np.ndarray) -> float:
    X = np.asarray(X)
    if X.shape != (T.shape[1],):
        raise DimensionError(f"allocation of length {X.size} for {T.shape[1]} tasks")
    on_first = X == MACHINE_1
    return float(max(T[0, on_first].sum(), T[1, ~on_first].sum()))


def optimal_makespan(T: np.ndarray, cap: int = BRUTE_FORCE_CAP) -> float:
    """Minimum makespan by enumerating all 2^n allocations."""
    n = T.shape[1]
    if n > cap:
        raise BruteForceCapExceeded(f"n={n} exceeds brute-force cap {cap}")
    # rows of `masks` are allocations; 1 marks machine 2
    masks = np.array(list(itertools.product((0, 1), repeat=n)), dtype=bool)
    load1 = (~masks * T[0]).sum(axis=1)
    load2 = (masks * T[1]).sum(axis=1)
    return float(np.maximum(load1, load2).min())


def allocate(z: Sequence[float], T: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.shape != (T.shape[1],):
        raise DimensionError(f"threshold vector of length {z.size} for {T.shape[1]} tasks")
    if np.any(z <= 0):
        raise ValueError("thresholds must be strictly positive")
    return np.where(ratios(T) < z, MACHINE_1, MACHINE_2)


def _makespans(Z: np.ndarray, T: np.ndarray) -> np.ndarray:
    """Makespan of the threshold rule for every row of ``Z``."""
    first = ratios(T)[None, :] < Z
    load1 = (first * T[0]).sum(axis=1)
    load2 = (~first * T[1]).sum(axis=1)
    out = np.maximum(load1, load2)
    if not np.all(np.isfinite(out)):
        raise ArithmeticError("non-finite makespan")
    return out


@dataclass(frozen=True)
class DiscreteThresholdDistribution:
    """Finite-support distribution of threshold vectors.

    ``atoms`` is an (m, n) array of threshold vectors, ``weights`` the
    matching probabilities.
    """

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = np.atleast_2d(np.asarray(self.atoms, dtype=float))
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if atoms.shape[0] != weights.size:
            raise DimensionError("one weight per atom required")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")
        if np.any(atoms <= 0):
            raise ValueError("threshold coordinates must be strictly positive")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    @property
    def n(self) -> int:
        return self.atoms.shape[1]

    @classmethod
    def point_mass(cls, z: Sequence[float]) -> "DiscreteThresholdDistribution":
        return cls(np.asarray([z], dtype=float), np.ones(1))

    def symmetrized(self) -> "DiscreteThresholdDistribution":
        """Average over all coordinate permutations of the atoms."""
        perms = list(itertools.permutations(range(self.n)))
        atoms = np.concatenate([self.atoms[:, p] for p in perms])
        weights = np.tile(self.weights, len(perms)) / len(perms)
        return DiscreteThresholdDistribution(atoms, weights)

    def is_symmetric(self, tol: float = 1e-12) -> bool:
        base = _collapse(self.atoms, self.weights)
        for p in itertools.permutations(range(self.n)):
            other = _collapse(self.atoms[:, p], self.weights)
            if base.keys() != other.keys():
                return False
            if any(abs(base[key] - other[key]) > tol for key in base):
                return False
        return True

    def margins(self) -> "MarginPair":
        """Univariate and bivariate CDFs of the first two coordinates."""
        z1 = self.atoms[:, 0]
        z2 = self.atoms[:, 1] if self.n > 1 else self.atoms[:, 0]
        w = self.weights

        def F(x):
            return float(w[z1 <= x].sum())

        def H(x, y):
            return float(w[(z1 <= x) & (z2 <= y)].sum())

        return MarginPair(F, H)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        idx = rng.choice(self.weights.size, size=size, p=self.weights)
        return self.atoms[idx]

    def to_json(self) -> dict:
        return {"atoms": [{"z": list(map(float, z)), "w": float(w)} for z, w in zip(self.atoms, self.weights)]}

    @classmethod
    def from_json(cls, data: dict) -> "DiscreteThresholdDistribution":
        atoms = [a["z"] for a in data["atoms"]]
        weights = [a["w"] for a in data["atoms"]]
        return cls(np.asarray(atoms, dtype=float), np.asarray(weights, dtype=float))


def _collapse(atoms: np.ndarray, weights: np.ndarray) -> dict:
    out: dict = {}
    for z, w in zip(map(tuple, atoms), weights):
        out[z] = out.get(z, 0.0) + w
    return {key: w for key, w in out.items() if w > 0}


@dataclass(frozen=True)
class MarginPair:
    """Univariate CDF ``F`` and bivariate CDF ``H`` of a symmetric threshold law."""

    F: Callable[[float], float]
    H: Callable[[float, float], float]


def expected_ratio(P: DiscreteThresholdDistribution, T: np.ndarray, cap: int = BRUTE_FORCE_CAP) -> float:
    """Expected makespan of the threshold algorithm over the optimum."""
    if P.n != T.shape[1]:
        raise DimensionError(f"distribution has n={P.n}, instance has n={T.shape[1]}")
    opt = optimal_makespan(T, cap)
    return float(P.weights @ _makespans(P.atoms, T)) / opt


def phi(margins: MarginPair, x: float, y: float) -> float:
    """Expected makespan of the two-task instance with ratios (x, y)."""
    if x <= 0 or y <= 0:
        raise ValueError("phi is defined for x, y > 0")
    F, H = margins.F, margins.H
    return (
        1.0
        + y
        - min(1.0, 1.0 - 1.0 / x + y) * F(x)
        - y * F(y)
        + min(1.0 + 1.0 / x, 1.0 + y) * H(x, y)
    )


def worst_case_instance(x: float, y: float, n: int = 2, eps: float = 0.0) -> np.ndarray:
    """Adversarial instance with task ratios x and y, padded by n - 2 tiny tasks."""
    if n < 2:
        raise DimensionError("worst-case instance needs n >= 2")
    if x <= 0 or y <= 0:
        raise ValueError("x and y must be positive")
    if n > 2 and eps <= 0:
        raise ValueError("eps > 0 required for padding tasks")
    T = np.full((2, n), float(eps))
    T[:, 0] = (1.0, 1.0 / x)
    T[:, 1] = (y, 1.0)
    return T


def monte_carlo_ratio(
    sampler: Callable[[np.random.Generator, int], np.ndarray],
    T: np.ndarray,
    trials: int,
    seed: int | Sequence[int],
    cap: int = BRUTE_FORCE_CAP,
    workers: int = 1,
) -> tuple[float, float]:
    """Monte-Carlo estimate of the expected ratio and its standard error.

    ``sampler(rng, size)`` returns a (size, n) array of thresholds.  Trials
    are split over ``workers`` Philox substreams derived from ``seed``, so
    the result depends only on (seed, trials, workers).
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    opt = optimal_makespan(T, cap)
    sizes = [trials // workers + (1 if i < trials % workers else 0) for i in range(workers)]
    root = np.random.SeedSequence(seed)
    chunks = []
    for size, child in zip(sizes, root.spawn(workers)):
        if size == 0:
            continue
        rng = np.random.Generator(np.random.Philox(child))
        Z = np.asarray(sampler(rng, size), dtype=float).reshape(size, -1)
        chunks.append(_makespans(Z, T) / opt)
    values = np.concatenate(chunks)
    mean = float(values.mean())
    stderr = float(values.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    return mean, stderr


def load_time_matrix(path: str | Path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [[float(v) for v in row] for row in csv.reader(fh) if row]
    return time_matrix(rows)


def save_time_matrix(T: np.ndarray, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in T:
            writer.writerow([repr(float(v)) for v in row])


def load_distribution(path: str | Path) -> DiscreteThresholdDistribution:
    return DiscreteThresholdDistribution.from_json(json.loads(Path(path).read_text()))
