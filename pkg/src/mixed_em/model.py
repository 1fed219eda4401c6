"""Model data, variance components and the one-way simulator.

The model is ``y = X beta + Z eta + eps`` with ``eta ~ N(0, tau2 I_q)`` and
``eps ~ N(0, sigma2 I_n)``. Everything here is immutable once constructed.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyInput,
    InvalidSpec,
    MixedModelError,
    NonFiniteInput,
    RankDeficientX,
)


class Criterion(enum.Enum):
    ML = "ML"
    REML = "REML"

    @classmethod
    def parse(cls, value: "str | Criterion") -> "Criterion":
        if isinstance(value, Criterion):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise MixedModelError(f"unknown criterion {value!r}; expected ML or REML") from None


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ModelData:
    """Validated response and design matrices.

    Use :func:`validate_model` rather than constructing directly; the
    constructor trusts its arguments.
    """

    y: np.ndarray
    X: np.ndarray
    Z: np.ndarray

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def q(self) -> int:
        return self.Z.shape[1]

    # Cross-products reused by every Henderson assembly.
    @cached_property
    def XtX(self) -> np.ndarray:
        return _frozen(self.X.T @ self.X)

    @cached_property
    def XtZ(self) -> np.ndarray:
        return _frozen(self.X.T @ self.Z)

    @cached_property
    def ZtZ(self) -> np.ndarray:
        return _frozen(self.Z.T @ self.Z)

    @cached_property
    def Xty(self) -> np.ndarray:
        return _frozen(self.X.T @ self.y)

    @cached_property
    def Zty(self) -> np.ndarray:
        return _frozen(self.Z.T @ self.y)

    @cached_property
    def WtW(self) -> np.ndarray:
        """Gram matrix of the stacked design ``[X Z]``."""
        W = np.hstack([self.X, self.Z])
        return _frozen(W.T @ W)


def _rank(X: np.ndarray) -> int:
    import scipy.linalg

    n, p = X.shape
    if n == 0 or p == 0:
        return 0
    _, R, _ = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    col_norm = np.max(np.linalg.norm(X, axis=0))
    tol = max(n, p) * np.finfo(np.float64).eps * col_norm
    return int(np.sum(diag > tol))


def validate_model(y, X, Z=None) -> ModelData:
    """Check dimensions, finiteness and the rank of ``X``; return a ModelData.

    ``Z`` may be omitted (or have zero columns) only for the no-random-effect
    path used by :func:`mixed_em.em.ols_fixed_point`. Inputs are copied, never
    modified.
    """
    y = np.asarray(y, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    if y.ndim == 2 and y.shape[1] == 1:
        y = y[:, 0]
    if y.ndim != 1:
        raise DimensionMismatch(f"y must be a vector, got shape {y.shape}")
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise DimensionMismatch(f"X must be a matrix, got shape {X.shape}")
    n = y.shape[0]
    if Z is None:
        Z = np.zeros((n, 0))
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim == 1:
        Z = Z[:, None]
    if Z.ndim != 2:
        raise DimensionMismatch(f"Z must be a matrix, got shape {Z.shape}")

    if n == 0:
        raise EmptyInput("no observations")
    if X.shape[0] != n or Z.shape[0] != n:
        raise DimensionMismatch(
            f"row counts disagree: len(y)={n}, rows(X)={X.shape[0]}, rows(Z)={Z.shape[0]}"
        )
    if X.shape[1] < 1:
        raise DimensionMismatch("X needs at least one column")
    for name, a in (("y", y), ("X", X), ("Z", Z)):
        if not np.all(np.isfinite(a)):
            raise NonFiniteInput(f"{name} contains NaN or infinite entries")
    if _rank(X) < X.shape[1]:
        raise RankDeficientX("X must be full rank.")
    return ModelData(_frozen(y), _frozen(X), _frozen(Z))


def z_from_groups(labels: Sequence[Any]) -> np.ndarray:
    """0/1 indicator matrix with one column per distinct label.

    Columns follow the order in which labels first appear.

    >>> z_from_groups(["a", "b", "a"]).tolist()
    [[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]]
    """
    labels = list(labels)
    if not labels:
        raise EmptyInput("no group labels")
    index: dict[Any, int] = {}
    for lab in labels:
        index.setdefault(lab, len(index))
    Z = np.zeros((len(labels), len(index)))
    Z[np.arange(len(labels)), [index[lab] for lab in labels]] = 1.0
    return Z


def group_order(labels: Sequence[Any]) -> list:
    """Distinct labels in first-appearance order (the column order of z_from_groups)."""
    return list(dict.fromkeys(labels))


@dataclass(frozen=True)
class VarianceComponents:
    tau2: float
    sigma2: float

    def __post_init__(self):
        for name in ("tau2", "sigma2"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise MixedModelError(f"{name} must be finite and > 0, got {v!r}")
        object.__setattr__(self, "tau2", float(self.tau2))
        object.__setattr__(self, "sigma2", float(self.sigma2))


COVARIATES_NORMAL = "intercept+normal"


@dataclass(frozen=True)
class SimulationSpec:
    """Parameters of a one-way random-intercept simulation.

    ``group_sizes`` may be given as a single int, meaning every group has
    that size. ``n``, when present, must equal ``sum(group_sizes)``.
    """

    n_groups: int
    group_sizes: tuple[int, ...]
    beta_true: tuple[float, ...]
    tau2_true: float
    sigma2_true: float
    seed: int
    covariates: str = COVARIATES_NORMAL
    n: int | None = None

    def __post_init__(self):
        sizes = self.group_sizes
        if isinstance(sizes, (int, np.integer)):
            sizes = (int(sizes),) * int(self.n_groups)
        object.__setattr__(self, "group_sizes", tuple(int(s) for s in sizes))
        object.__setattr__(self, "beta_true", tuple(float(b) for b in self.beta_true))

        if int(self.n_groups) < 1:
            raise InvalidSpec("n_groups must be positive")
        if len(self.group_sizes) != self.n_groups:
            raise InvalidSpec(
                f"group_sizes has {len(self.group_sizes)} entries for {self.n_groups} groups"
            )
        if any(s < 1 for s in self.group_sizes):
            raise InvalidSpec("group sizes must be positive")
        if self.n is not None and int(self.n) != sum(self.group_sizes):
            raise InvalidSpec(f"sum(group_sizes)={sum(self.group_sizes)} but n={self.n}")
        if len(self.beta_true) < 1:
            raise InvalidSpec("beta_true needs at least the intercept")
        for name in ("tau2_true", "sigma2_true"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise InvalidSpec(f"{name} must be > 0")
        if not (0 <= int(self.seed) < 2**64):
            raise InvalidSpec("seed must be an unsigned 64-bit integer")
        if self.covariates != COVARIATES_NORMAL:
            raise InvalidSpec(f"unsupported covariates {self.covariates!r}")

    @property
    def n_obs(self) -> int:
        return sum(self.group_sizes)

    @property
    def p(self) -> int:
        return len(self.beta_true)

    @classmethod
    def from_dict(cls, d: dict) -> "SimulationSpec":
        known = {"n_groups", "group_sizes", "beta_true", "tau2_true", "sigma2_true",
                 "seed", "covariates", "n"}
        unknown = set(d) - known
        if unknown:
            raise InvalidSpec(f"unknown spec fields: {sorted(unknown)}")
        missing = {"n_groups", "group_sizes", "beta_true", "tau2_true",
                   "sigma2_true", "seed"} - set(d)
        if missing:
            raise InvalidSpec(f"missing spec fields: {sorted(missing)}")
        try:
            return cls(**d)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, InvalidSpec):
                raise
            raise InvalidSpec(str(exc)) from exc

    def to_dict(self) -> dict:
        d = {
            "n_groups": self.n_groups,
            "group_sizes": list(self.group_sizes),
            "beta_true": list(self.beta_true),
            "tau2_true": self.tau2_true,
            "sigma2_true": self.sigma2_true,
            "seed": int(self.seed),
            "covariates": self.covariates,
        }
        if self.n is not None:
            d["n"] = self.n
        return d


@dataclass(frozen=True, eq=False)
class SimulationTruth:
    spec: SimulationSpec
    groups: tuple[str, ...]
    eta: np.ndarray
    eps: np.ndarray = field(repr=False)


def simulate(spec: SimulationSpec) -> tuple[ModelData, SimulationTruth]:
    """Draw one data set from the one-way random-intercept model.

    A PCG64 generator seeded with ``spec.seed`` produces, in order, the
    covariate matrix (row-major), the group effects and the residuals.
    """
    rng = np.random.Generator(np.random.PCG64(int(spec.seed)))
    n, p, q = spec.n_obs, spec.p, spec.n_groups

    X = np.ones((n, p))
    if p > 1:
        X[:, 1:] = rng.standard_normal((n, p - 1))
    eta = np.sqrt(spec.tau2_true) * rng.standard_normal(q)
    eps = np.sqrt(spec.sigma2_true) * rng.standard_normal(n)

    groups = tuple(f"g{j + 1}" for j, size in enumerate(spec.group_sizes) for _ in range(size))
    Z = z_from_groups(groups)
    y = X @ np.asarray(spec.beta_true) + Z @ eta + eps

    truth = SimulationTruth(spec=spec, groups=groups, eta=_frozen(eta), eps=_frozen(eps))
    return validate_model(y, X, Z), truth
