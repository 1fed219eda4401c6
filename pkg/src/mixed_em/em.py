"""EM (strictly, ECM) iteration for the variance components.

Every iteration solves the same Henderson system for ML and REML. The two
criteria differ only in the trace adjustments added in the M step:

    criterion   tau2 adjustment       sigma2 adjustment
    ML          tr{(M_ee)^-1}         tr{Z (M_ee)^-1 Z'}
    REML        tr{C_ee}              tr{[X Z] C [X Z]'}
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import henderson, likelihood
from .errors import MixedModelError
from .henderson import MIN_VARIANCE, HendersonSolution
from .likelihood import LogLik
from .model import Criterion, ModelData, VarianceComponents

# Guard added to the denominators of the relative-change criterion.
DELTA_GUARD = 1e-8


@dataclass(frozen=True)
class EmConfig:
    criterion: Criterion = Criterion.ML
    maxit: int = 100
    tol: float = 1e-7
    tau2_init: float = 1.0
    sigma2_init: float = 1.0
    trace_loglik: bool = False
    # Form the n x n trace matrices literally instead of using Gram-matrix identities.
    dense_traces: bool = False

    def __post_init__(self):
        object.__setattr__(self, "criterion", Criterion.parse(self.criterion))
        if int(self.maxit) < 1 or int(self.maxit) != self.maxit:
            raise MixedModelError(f"maxit must be a positive integer, got {self.maxit!r}")
        for name in ("tol", "tau2_init", "sigma2_init"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise MixedModelError(f"{name} must be > 0, got {v!r}")


@dataclass(frozen=True)
class EmStepDiagnostics:
    trace_T_tau: float
    trace_T_sigma: float
    rss: float
    eta_ss: float


@dataclass(frozen=True)
class IterationRecord:
    """Variance components produced by one update, with the diagnostics that produced them."""

    vc: VarianceComponents
    diagnostics: EmStepDiagnostics


@dataclass(frozen=True, eq=False)
class FitResult:
    beta_hat: np.ndarray
    eta_hat: np.ndarray
    vc: VarianceComponents
    criterion: Criterion
    iterations: int
    converged: bool
    loglik: LogLik
    history: tuple[IterationRecord, ...]
    solution: HendersonSolution
    config: EmConfig
    delta: float
    boundary: bool = False
    # Objective at the start value and after every update; only with trace_loglik.
    loglik_path: tuple[float, ...] | None = field(default=None, repr=False)

    def vc_at(self, k: int) -> VarianceComponents:
        """Variance components after ``k`` updates (``k = 0`` is the start value)."""
        if not 0 <= k <= self.iterations:
            raise IndexError(f"iteration {k} outside 0..{self.iterations}")
        if k == 0:
            return VarianceComponents(self.config.tau2_init, self.config.sigma2_init)
        return self.history[k - 1].vc


def _trace_product(A: np.ndarray, B: np.ndarray) -> float:
    """``tr(A B)`` without forming the product."""
    return float(np.sum(A * B.T))


def trace_adjustments(
    criterion: Criterion,
    sol: HendersonSolution,
    model: ModelData,
    dense: bool = False,
) -> tuple[float, float]:
    """Traces of the tau2 and sigma2 adjustment matrices for one criterion.

    ``tr(Z A Z')`` is evaluated as ``tr(Z'Z A)``. With ``dense=True`` the
    n x n matrices are built explicitly instead.
    """
    criterion = Criterion.parse(criterion)
    if criterion is Criterion.ML:
        T_tau = sol.M_etaeta_inv
        if dense:
            t_sigma = float(np.trace(model.Z @ T_tau @ model.Z.T))
        else:
            t_sigma = _trace_product(model.ZtZ, T_tau)
    else:
        T_tau = sol.C_ee
        if dense:
            W = np.hstack([model.X, model.Z])
            t_sigma = float(np.trace(W @ sol.C @ W.T))
        else:
            t_sigma = _trace_product(model.WtW, sol.C)
    return float(np.trace(T_tau)), t_sigma


def em_step(
    model: ModelData,
    vc: VarianceComponents,
    criterion: Criterion,
    dense: bool = False,
) -> tuple[VarianceComponents, HendersonSolution, EmStepDiagnostics]:
    """One E step (Henderson solve) and one M step for (tau2, sigma2)."""
    sol = henderson.fit_at(model, vc)
    t_tau, t_sigma = trace_adjustments(criterion, sol, model, dense=dense)
    rss = float(sol.r_hat @ sol.r_hat)
    eta_ss = float(sol.eta_hat @ sol.eta_hat)
    new_vc = VarianceComponents(
        tau2=(eta_ss + t_tau) / model.q,
        sigma2=(rss + t_sigma) / model.n,
    )
    return new_vc, sol, EmStepDiagnostics(t_tau, t_sigma, rss, eta_ss)


def relative_change(old: VarianceComponents, new: VarianceComponents) -> float:
    return max(
        abs(new.sigma2 - old.sigma2) / (old.sigma2 + DELTA_GUARD),
        abs(new.tau2 - old.tau2) / (old.tau2 + DELTA_GUARD),
    )


def fit(model: ModelData, config: EmConfig | None = None) -> FitResult:
    """Iterate :func:`em_step` until the relative change drops below ``config.tol``.

    Running out of iterations is not an error: ``converged`` is False and
    the full history is returned. If either variance component falls below
    the assembly floor the loop stops with ``boundary`` set.

    The reported ``beta_hat``, ``eta_hat`` and ``solution`` come from a final
    Henderson solve at the returned variance components.
    """
    config = config if config is not None else EmConfig()
    crit = config.criterion
    if model.q < 1:
        raise MixedModelError("fit needs a random-effect design; use ols_fixed_point when q = 0")

    vc = VarianceComponents(config.tau2_init, config.sigma2_init)
    history: list[IterationRecord] = []
    path = [likelihood.objective(model, vc, crit)] if config.trace_loglik else None
    sol = None
    delta = float("inf")
    converged = boundary = False

    for _ in range(int(config.maxit)):
        new_vc, sol, diag = em_step(model, vc, crit, dense=config.dense_traces)
        delta = relative_change(vc, new_vc)
        history.append(IterationRecord(new_vc, diag))
        vc = new_vc
        if path is not None:
            path.append(likelihood.objective(model, vc, crit))
        if vc.tau2 < MIN_VARIANCE or vc.sigma2 < MIN_VARIANCE:
            boundary = True
            break
        if delta < config.tol:
            converged = True
            break

    if not boundary:
        sol = henderson.fit_at(model, vc)

    return FitResult(
        beta_hat=sol.beta_hat,
        eta_hat=sol.eta_hat,
        vc=vc,
        criterion=crit,
        iterations=len(history),
        converged=converged,
        loglik=LogLik(likelihood.objective(model, vc, crit), crit),
        history=tuple(history),
        solution=sol,
        config=config,
        delta=delta,
        boundary=boundary,
        loglik_path=tuple(path) if path is not None else None,
    )


def _ols_residuals(model: ModelData) -> tuple[np.ndarray, np.ndarray]:
    factor = scipy.linalg.cho_factor(model.XtX, lower=True)
    beta = scipy.linalg.cho_solve(factor, model.Xty)
    return beta, model.y - model.X @ beta


def ols_fixed_point(model: ModelData) -> float:
    """``r'r / (n - p)`` for a model without random effects.

    This is where the REML sigma2 update lands when Z = 0.
    """
    if model.q != 0:
        raise MixedModelError("ols_fixed_point applies only to models without random effects")
    if model.n <= model.p:
        raise MixedModelError(f"need n > p (n={model.n}, p={model.p})")
    _, r = _ols_residuals(model)
    return float(r @ r) / (model.n - model.p)


def ols_reml_iteration(
    model: ModelData,
    sigma2_init: float = 1.0,
    tol: float = 1e-13,
    maxit: int = 100_000,
) -> tuple[float, int, bool]:
    """Run the REML sigma2 update with Z = 0 until it stops moving.

    With no random effects ``C = sigma2 (X'X)^-1``, the trace adjustment is
    ``tr(X'X C) = p sigma2`` and the update is the contraction
    ``sigma2 <- r'r/n + (p/n) sigma2``. Returns (sigma2, iterations, converged).
    """
    if model.q != 0:
        raise MixedModelError("ols_reml_iteration applies only to models without random effects")
    if model.n <= model.p:
        raise MixedModelError(f"need n > p (n={model.n}, p={model.p})")
    _, r = _ols_residuals(model)
    rss = float(r @ r)
    XtX_inv = henderson.spd_inverse(np.asarray(model.XtX), "X'X")
    sigma2 = float(sigma2_init)
    for it in range(1, int(maxit) + 1):
        t_sigma = _trace_product(model.XtX, sigma2 * XtX_inv)
        new = (rss + t_sigma) / model.n
        delta = abs(new - sigma2) / (sigma2 + DELTA_GUARD)
        sigma2 = new
        if delta < tol:
            return sigma2, it, True
    return sigma2, int(maxit), False
