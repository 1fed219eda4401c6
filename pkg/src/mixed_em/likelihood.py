"""Marginal ML and REML log-likelihoods of the linear mixed model.

Under the model ``y ~ N(X beta, V)`` with ``V = tau2 Z Z' + sigma2 I``.
Everything goes through one dense Cholesky factor of V per variance-component
pair, which is fine for n up to a few thousand. The REML projection matrix
is not formed; ``y'Py`` equals the GLS residual quadratic form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import CriterionMismatch, MixedModelError, NumericalFailure
from .model import Criterion, ModelData, VarianceComponents

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class MarginalModel:
    V: np.ndarray
    chol: np.ndarray  # lower-triangular factor, V = L L'
    log_det_V: float

    def solve(self, b: np.ndarray) -> np.ndarray:
        return scipy.linalg.cho_solve((self.chol, True), b)

    def whiten(self, b: np.ndarray) -> np.ndarray:
        """``L^-1 b``, so that ``(L^-1 b)'(L^-1 b) = b' V^-1 b``."""
        return scipy.linalg.solve_triangular(self.chol, b, lower=True)


@dataclass(frozen=True)
class LogLik:
    """A log-likelihood value that remembers which criterion produced it.

    Subtraction and ordering only work between values of the same criterion.
    """

    value: float
    criterion: Criterion

    def _check(self, other: "LogLik") -> None:
        if not isinstance(other, LogLik):
            raise TypeError(f"cannot combine LogLik with {type(other).__name__}")
        if other.criterion is not self.criterion:
            raise CriterionMismatch(
                f"{self.criterion.value} and {other.criterion.value} log-likelihoods are on "
                "different scales and cannot be compared"
            )

    def __sub__(self, other: "LogLik") -> float:
        self._check(other)
        return self.value - other.value

    def __lt__(self, other: "LogLik") -> bool:
        self._check(other)
        return self.value < other.value

    def __le__(self, other: "LogLik") -> bool:
        self._check(other)
        return self.value <= other.value

    def __float__(self) -> float:
        return float(self.value)


def _cholesky_lower(A: np.ndarray, what: str) -> np.ndarray:
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"{what} is not numerically positive definite") from exc


def marginal(model: ModelData, vc: VarianceComponents) -> MarginalModel:
    V = vc.tau2 * (model.Z @ model.Z.T)
    V[np.diag_indices_from(V)] += vc.sigma2
    L = _cholesky_lower(V, "V")
    log_det = 2.0 * float(np.sum(np.log(np.diag(L))))
    return MarginalModel(V=V, chol=L, log_det_V=log_det)


def _gls(model: ModelData, mm: MarginalModel):
    WX = mm.whiten(model.X)
    Wy = mm.whiten(model.y)
    XtViX = WX.T @ WX
    L = _cholesky_lower(0.5 * (XtViX + XtViX.T), "X'V^-1X")
    beta = scipy.linalg.cho_solve((L, True), WX.T @ Wy)
    return beta, L


def gls_beta(model: ModelData, mm: MarginalModel) -> np.ndarray:
    """Generalized least squares ``(X'V^-1X)^-1 X'V^-1 y``."""
    return _gls(model, mm)[0]


def loglik_ml(model: ModelData, beta, vc: VarianceComponents, mm: MarginalModel | None = None) -> float:
    mm = mm if mm is not None else marginal(model, vc)
    e = mm.whiten(model.y - model.X @ np.asarray(beta, dtype=np.float64))
    return -0.5 * (mm.log_det_V + float(e @ e) + model.n * LOG_2PI)


def loglik_reml(model: ModelData, vc: VarianceComponents, mm: MarginalModel | None = None) -> float:
    if model.n <= model.p:
        raise MixedModelError(f"REML needs n > p (n={model.n}, p={model.p})")
    mm = mm if mm is not None else marginal(model, vc)
    beta, L = _gls(model, mm)
    e = mm.whiten(model.y - model.X @ beta)
    log_det_xvx = 2.0 * float(np.sum(np.log(np.diag(L))))
    return -0.5 * (mm.log_det_V + log_det_xvx + float(e @ e) + (model.n - model.p) * LOG_2PI)


def profiled_loglik_ml(model: ModelData, vc: VarianceComponents) -> float:
    """ML log-likelihood with beta replaced by its GLS estimate at ``vc``."""
    mm = marginal(model, vc)
    return loglik_ml(model, gls_beta(model, mm), vc, mm)


def objective(model: ModelData, vc: VarianceComponents, criterion: Criterion) -> float:
    """The quantity each criterion maximizes over (tau2, sigma2)."""
    if Criterion.parse(criterion) is Criterion.ML:
        return profiled_loglik_ml(model, vc)
    return loglik_reml(model, vc)


def projection_matrix(model: ModelData, vc: VarianceComponents) -> np.ndarray:
    """Dense ``P = V^-1 - V^-1 X (X'V^-1X)^-1 X'V^-1``. Debugging aid, O(n^2) memory."""
    mm = marginal(model, vc)
    Vi = mm.solve(np.eye(model.n))
    ViX = Vi @ model.X
    return Vi - ViX @ np.linalg.solve(model.X.T @ ViX, ViX.T)


def fd_score(
    model: ModelData,
    vc: VarianceComponents,
    criterion: Criterion,
    rel_step: float = 1e-5,
) -> np.ndarray:
    """Central-difference gradient of the criterion objective in (tau2, sigma2).

    Each coordinate uses the step ``rel_step * value``.
    """
    if not (0.0 < rel_step <= 1e-2):
        raise MixedModelError(f"rel_step must lie in (0, 1e-2], got {rel_step!r}")
    criterion = Criterion.parse(criterion)
    t, s = vc.tau2, vc.sigma2
    ht, hs = rel_step * t, rel_step * s

    def f(tau2, sigma2):
        return objective(model, VarianceComponents(tau2, sigma2), criterion)

    return np.array([
        (f(t + ht, s) - f(t - ht, s)) / (2.0 * ht),
        (f(t, s + hs) - f(t, s - hs)) / (2.0 * hs),
    ])
