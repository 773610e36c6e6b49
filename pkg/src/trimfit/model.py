"""Synthetic mixed-linear-regression data with adversarial response corruption.

A generated instance consists of n feature/response pairs. Every sample index
belongs to exactly one mixture component; its response is the exact inner
product of the feature row with that component's parameter vector. An
adversary may then overwrite a fixed number of responses by adding an
arbitrary offset r_i on a chosen index subset. Corrupted samples keep their
component label; the corruption offset is additive on top of the clean
measurement, so y_i = <x_i, theta_star[:, partition[i]]> + r_i holds for
every index with r_i = 0 off the corrupted set.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .util import as_readonly, check_finite, floor_count, fmt17

ADVERSARIES = ("none", "oblivious-random", "residual-targeted", "component-targeted")

# The phantom component used by the residual-targeted adversary points along
# the first coordinate axis; only its magnitude is configurable.
_PHANTOM_AXIS = 0

_GENERATOR_NAME = "numpy.random.Generator(PCG64)"


def _generator_version() -> str:
    return f"numpy=={np.__version__}"


@dataclass(frozen=True)
class MixtureSpec:
    """Ground-truth mixture description.

    components holds one length-d parameter vector per component. weights are
    the exact per-component sample fractions and must sum to 1 so that every
    index receives a label. covariance is either None (identity features for
    all components) or a length-m sequence whose entries are None or an SPD
    d x d matrix.
    """

    d: int
    m: int
    components: tuple
    weights: tuple
    covariance: tuple | None = None

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be a positive integer")
        if self.m < 1:
            raise ValueError("m must be a positive integer")
        comps = tuple(as_readonly(np.asarray(c, dtype=float)) for c in self.components)
        if len(comps) != self.m:
            raise ValueError(f"expected {self.m} components, got {len(comps)}")
        for j, c in enumerate(comps):
            if c.shape != (self.d,):
                raise ValueError(f"component {j} must be a length-{self.d} vector")
            check_finite(c, f"component {j}")
        w = tuple(float(x) for x in self.weights)
        if len(w) != self.m:
            raise ValueError(f"expected {self.m} weights, got {len(w)}")
        if any(x <= 0 for x in w):
            raise ValueError("weights must be strictly positive")
        if abs(sum(w) - 1.0) > 1e-9:
            raise ValueError("weights must sum to 1 so every sample index is assigned")
        cov = self.covariance
        if cov is not None:
            cov = tuple(None if c is None else as_readonly(np.asarray(c, dtype=float)) for c in cov)
            if len(cov) != self.m:
                raise ValueError(f"expected {self.m} covariance entries, got {len(cov)}")
            for j, c in enumerate(cov):
                if c is None:
                    continue
                if c.shape != (self.d, self.d):
                    raise ValueError(f"covariance {j} must be {self.d} x {self.d}")
                if not np.allclose(c, c.T, atol=1e-10):
                    raise ValueError(f"covariance {j} is not symmetric")
                try:
                    np.linalg.cholesky(c)
                except np.linalg.LinAlgError:
                    raise ValueError(f"covariance {j} is not positive definite") from None
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "covariance", cov)

    @property
    def theta_star(self) -> np.ndarray:
        """Parameters as a d x m column matrix."""
        return np.column_stack(self.components)


@dataclass(frozen=True)
class CorruptionSpec:
    """Adversary description.

    gamma_star scales the corrupted count: exactly
    floor(gamma_star * tau_min * n) responses are overwritten, where tau_min
    is the smallest per-component fraction of the instance being corrupted.
    """

    gamma_star: float = 0.0
    adversary: str = "none"
    magnitude: float = 1.0

    def __post_init__(self):
        if self.adversary not in ADVERSARIES:
            raise ValueError(f"unknown adversary {self.adversary!r}; expected one of {ADVERSARIES}")
        if self.gamma_star < 0:
            raise ValueError("gamma_star must be nonnegative")
        if self.adversary == "none" and self.gamma_star != 0:
            raise ValueError("adversary 'none' requires gamma_star = 0")
        if self.magnitude <= 0:
            raise ValueError("magnitude must be positive")


@dataclass(frozen=True)
class Dataset:
    """Feature matrix X (n x d) and response vector y (n)."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = as_readonly(np.asarray(self.X, dtype=float))
        y = as_readonly(np.asarray(self.y, dtype=float))
        if X.ndim != 2:
            raise ValueError("X must be a 2-d array")
        if y.ndim != 1 or y.shape[0] != X.shape[0]:
            raise ValueError("y must be 1-d with one entry per row of X")
        check_finite(X, "X")
        check_finite(y, "y")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class GroundTruth:
    """Generator-side truth for a dataset.

    tau_star[j] is the realized fraction of uncorrupted samples carrying
    label j, so it shrinks when corruption lands on component j. seed and
    generator record how the instance was produced.
    """

    theta_star: np.ndarray
    partition: np.ndarray
    corrupted: np.ndarray
    r: np.ndarray
    tau_star: tuple
    seed: int | None = None
    generator: str = field(default=_GENERATOR_NAME)
    generator_version: str = field(default_factory=_generator_version)

    def __post_init__(self):
        theta = as_readonly(np.asarray(self.theta_star, dtype=float))
        part = as_readonly(np.asarray(self.partition, dtype=np.int64))
        corr = as_readonly(np.asarray(self.corrupted, dtype=bool))
        r = as_readonly(np.asarray(self.r, dtype=float))
        if theta.ndim != 2:
            raise ValueError("theta_star must be d x m")
        n = part.shape[0]
        if corr.shape != (n,) or r.shape != (n,):
            raise ValueError("partition, corrupted and r must share length n")
        m = theta.shape[1]
        if part.size and (part.min() < 0 or part.max() >= m):
            raise ValueError("partition labels must lie in [0, m)")
        tau = tuple(float(t) for t in self.tau_star)
        if len(tau) != m:
            raise ValueError("tau_star must have one entry per component")
        object.__setattr__(self, "theta_star", theta)
        object.__setattr__(self, "partition", part)
        object.__setattr__(self, "corrupted", corr)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "tau_star", tau)

    @property
    def n(self) -> int:
        return self.partition.shape[0]

    @property
    def m(self) -> int:
        return self.theta_star.shape[1]


def _realized_tau(partition: np.ndarray, corrupted: np.ndarray, m: int) -> tuple:
    n = partition.shape[0]
    clean = ~corrupted
    return tuple(float(np.count_nonzero((partition == j) & clean)) / n for j in range(m))


def realized_gamma_star(truth: GroundTruth) -> float:
    """Corrupted count divided by n * min_j tau_star[j]."""
    n_bad = int(np.count_nonzero(truth.corrupted))
    if n_bad == 0:
        return 0.0
    tau_min = min(truth.tau_star)
    if tau_min <= 0:
        raise ValueError("smallest component has no uncorrupted samples")
    return n_bad / (truth.n * tau_min)


def reconstruction_error(dataset: Dataset, truth: GroundTruth) -> float:
    """Largest violation of y_i = <x_i, theta_star[:, label_i]> + r_i.

    Returned value is normalized by 1 + |y_i| per sample.
    """
    pred = np.sum(dataset.X * truth.theta_star.T[truth.partition], axis=1) + truth.r
    return float(np.max(np.abs(dataset.y - pred) / (1.0 + np.abs(dataset.y))))


def _allocate_counts(weights: Sequence[float], n: int) -> np.ndarray:
    """Exact per-component counts: floors plus largest-remainder top-up."""
    raw = np.asarray(weights, dtype=float) * n
    base = np.array([floor_count(x) for x in raw], dtype=np.int64)
    leftover = n - int(base.sum())
    if leftover < 0:
        raise ValueError("weights allocate more samples than n")
    if leftover > 0:
        rem = raw - base
        order = np.argsort(-rem, kind="stable")
        base[order[:leftover]] += 1
    return base


def _corrupt_count(gamma_star: float, tau_min: float, n: int) -> int:
    return floor_count(gamma_star * tau_min * n)


def _generate_clean(spec: MixtureSpec, n: int, rng: np.random.Generator):
    counts = _allocate_counts(spec.weights, n)
    labels = np.repeat(np.arange(spec.m, dtype=np.int64), counts)
    labels = labels[rng.permutation(n)]

    X = rng.standard_normal((n, spec.d))
    if spec.covariance is not None:
        for j, cov in enumerate(spec.covariance):
            if cov is None:
                continue
            mask = labels == j
            # X rows become draws from N(0, cov) via the Cholesky factor.
            X[mask] = X[mask] @ np.linalg.cholesky(cov).T

    theta = spec.theta_star
    y = np.sum(X * theta.T[labels], axis=1)
    dataset = Dataset(X=X, y=y)
    truth = GroundTruth(
        theta_star=theta,
        partition=labels,
        corrupted=np.zeros(n, dtype=bool),
        r=np.zeros(n),
        tau_star=_realized_tau(labels, np.zeros(n, dtype=bool), spec.m),
    )
    return dataset, truth


def _inject(dataset: Dataset, truth: GroundTruth, corruption: CorruptionSpec,
            rng: np.random.Generator):
    n = dataset.n
    tau_min = min(truth.tau_star)
    n_bad = _corrupt_count(corruption.gamma_star, tau_min, n)
    if corruption.adversary == "none" or n_bad == 0:
        return dataset, truth
    if n_bad > n:
        raise ValueError(f"corrupted count {n_bad} exceeds n = {n}")

    if corruption.adversary == "oblivious-random":
        idx = rng.choice(n, size=n_bad, replace=False)
        values = rng.normal(0.0, corruption.magnitude, size=n_bad)
    elif corruption.adversary == "residual-targeted":
        # Overwrite the responses nearest zero so they mimic a phantom
        # component of the configured magnitude along a fixed axis.
        order = np.argsort(np.abs(dataset.y), kind="stable")
        idx = order[:n_bad]
        phantom = np.zeros(dataset.d)
        phantom[_PHANTOM_AXIS] = corruption.magnitude
        values = dataset.X[idx] @ phantom - dataset.y[idx]
    else:  # component-targeted
        sizes = [np.count_nonzero(truth.partition == j) for j in range(truth.m)]
        smallest = int(np.argmin(sizes))
        pool = np.flatnonzero(truth.partition == smallest)
        if n_bad > pool.size:
            raise ValueError(
                f"corrupted count {n_bad} exceeds smallest component size {pool.size}")
        idx = pool[rng.choice(pool.size, size=n_bad, replace=False)]
        values = rng.normal(0.0, corruption.magnitude, size=n_bad)

    y = dataset.y.copy()
    y[idx] += values
    r = truth.r.copy()
    r[idx] = values
    corrupted = truth.corrupted.copy()
    corrupted[idx] = True

    new_dataset = Dataset(X=dataset.X, y=y)
    new_truth = GroundTruth(
        theta_star=truth.theta_star,
        partition=truth.partition,
        corrupted=corrupted,
        r=r,
        tau_star=_realized_tau(truth.partition, corrupted, truth.m),
        seed=truth.seed,
        generator=truth.generator,
        generator_version=truth.generator_version,
    )
    return new_dataset, new_truth


def inject_corruptions(dataset: Dataset, truth: GroundTruth,
                       corruption: CorruptionSpec, seed: int):
    """Corrupt exactly floor(gamma_star * tau_min * n) responses.

    tau_min is taken from the incoming truth, which must be uncorrupted.
    Rows off the corrupted set are returned bit-identical.
    """
    if np.any(truth.corrupted):
        raise ValueError("input truth already carries corruptions")
    rng = np.random.default_rng(seed)
    new_dataset, new_truth = _inject(dataset, truth, corruption, rng)
    if new_truth is truth:
        return new_dataset, new_truth
    object.__setattr__(new_truth, "seed", seed)
    return new_dataset, new_truth


def generate_mlrc(spec: MixtureSpec, corruption: CorruptionSpec, n: int, seed: int):
    """Generate a corrupted mixture instance.

    Labels are assigned by exact per-component counts and a seeded shuffle,
    features are Gaussian with the component's covariance, responses are
    exact inner products, and the adversary then overwrites its quota of
    responses. Equal arguments produce bit-identical output.
    """
    if n < spec.d:
        raise ValueError(f"n = {n} must be at least d = {spec.d}")
    if n < spec.m:
        raise ValueError(f"n = {n} must be at least m = {spec.m}")
    counts = _allocate_counts(spec.weights, n)
    if np.any(counts == 0):
        raise ValueError("some component receives zero samples at this n")
    root = np.random.SeedSequence(seed)
    clean_ss, corrupt_ss = root.spawn(2)
    dataset, truth = _generate_clean(spec, n, np.random.default_rng(clean_ss))
    object.__setattr__(truth, "seed", seed)
    dataset, truth = _inject(dataset, truth, corruption, np.random.default_rng(corrupt_ss))
    object.__setattr__(truth, "seed", seed)
    return dataset, truth


# ---------------------------------------------------------------------------
# Serialization. Datasets travel as CSV with a y,x1,...,xd header and 17
# significant digits per value; truths travel as a JSON sidecar.

def save_dataset(dataset: Dataset, path: str) -> None:
    cols = ["y"] + [f"x{i}" for i in range(1, dataset.d + 1)]
    lines = [",".join(cols)]
    for i in range(dataset.n):
        row = [fmt17(dataset.y[i])] + [fmt17(v) for v in dataset.X[i]]
        lines.append(",".join(row))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_dataset(path: str) -> Dataset:
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip().split(",")
        if not header or header[0] != "y" or len(header) < 2:
            raise ValueError(f"{path}: expected header y,x1,...,xd")
        d = len(header) - 1
        if header[1:] != [f"x{i}" for i in range(1, d + 1)]:
            raise ValueError(f"{path}: malformed feature column names")
        ys, rows = [], []
        for line in fh:
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != d + 1:
                raise ValueError(f"{path}: row with {len(parts)} fields, expected {d + 1}")
            ys.append(float(parts[0]))
            rows.append([float(p) for p in parts[1:]])
    return Dataset(X=np.array(rows, dtype=float), y=np.array(ys, dtype=float))


def truth_to_dict(truth: GroundTruth) -> dict:
    return {
        "format": "trimfit-truth",
        "format_version": 1,
        "generator": truth.generator,
        "generator_version": truth.generator_version,
        "seed": truth.seed,
        "theta_star": [truth.theta_star[:, j].tolist() for j in range(truth.m)],
        "partition": truth.partition.tolist(),
        "corrupted": truth.corrupted.tolist(),
        "r": truth.r.tolist(),
        "tau_star": list(truth.tau_star),
    }


def save_truth(truth: GroundTruth, path: str) -> None:
    with open(path, "w", encoding="ascii") as fh:
        json.dump(truth_to_dict(truth), fh, indent=1)
        fh.write("\n")


def load_truth(path: str) -> GroundTruth:
    with open(path, "r", encoding="ascii") as fh:
        doc = json.load(fh)
    if doc.get("format") != "trimfit-truth":
        raise ValueError(f"{path}: not a truth sidecar")
    theta = np.column_stack([np.asarray(c, dtype=float) for c in doc["theta_star"]])
    return GroundTruth(
        theta_star=theta,
        partition=np.asarray(doc["partition"], dtype=np.int64),
        corrupted=np.asarray(doc["corrupted"], dtype=bool),
        r=np.asarray(doc["r"], dtype=float),
        tau_star=tuple(doc["tau_star"]),
        seed=doc.get("seed"),
        generator=doc.get("generator", _GENERATOR_NAME),
        generator_version=doc.get("generator_version", _generator_version()),
    )
