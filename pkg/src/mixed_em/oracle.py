"""Brute-force maximizer of the ML/REML objectives, used as ground truth.

Grid-and-refine search over log10(tau2) x log10(sigma2). It shares no code
with the EM path: only the likelihood module is used, so agreement between
the two is evidence that both are right.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import likelihood
from .errors import BoundaryHit, CriterionMismatch, MixedModelError
from .likelihood import LogLik
from .model import Criterion, ModelData, VarianceComponents

DEFAULT_BOUNDS = ((1e-4, 1e4), (1e-4, 1e4))
GRID_POINTS = 41
SHRINK = 10.0


@dataclass(frozen=True, eq=False)
class OracleResult:
    vc_star: VarianceComponents
    loglik_star: float
    criterion: Criterion
    evaluations: int
    # log10 boxes ((tau2_lo, tau2_hi), (sigma2_lo, sigma2_hi)), one per level
    grid_trace: tuple[tuple[tuple[float, float], tuple[float, float]], ...]
    beta_star: np.ndarray
    on_boundary: bool = False

    @property
    def loglik(self) -> LogLik:
        return LogLik(self.loglik_star, self.criterion)


def _safe_objective(model, criterion, tau2, sigma2) -> float:
    try:
        return likelihood.objective(model, VarianceComponents(tau2, sigma2), criterion)
    except MixedModelError:
        return -np.inf


def _recenter(center: float, half: float, lo: float, hi: float) -> tuple[float, float]:
    a, b = center - half, center + half
    if a < lo:
        a, b = lo, min(hi, lo + 2 * half)
    elif b > hi:
        a, b = max(lo, hi - 2 * half), hi
    return a, b


def maximize(
    model: ModelData,
    criterion: Criterion,
    bounds=DEFAULT_BOUNDS,
    levels: int = 6,
    grid_points: int = GRID_POINTS,
    raise_on_boundary: bool = True,
) -> OracleResult:
    """Maximize the criterion objective over a box of (tau2, sigma2).

    Each level evaluates a ``grid_points`` x ``grid_points`` log-spaced grid,
    then re-centres a box ten times narrower (per side, in log10 units) on
    the best point seen so far. The best point is never forgotten, so adding
    levels cannot lower ``loglik_star``.

    Raises :class:`BoundaryHit` (carrying the result) if the final best point
    lies on the outer box, unless ``raise_on_boundary`` is False.
    """
    criterion = Criterion.parse(criterion)
    (t_lo, t_hi), (s_lo, s_hi) = bounds
    if not (0 < t_lo < t_hi and 0 < s_lo < s_hi):
        raise MixedModelError(f"bounds must be positive and increasing, got {bounds!r}")
    if levels < 1:
        raise MixedModelError("levels must be >= 1")
    outer = np.log10([[t_lo, t_hi], [s_lo, s_hi]])
    box = outer.copy()

    best_val = -np.inf
    best = (outer[0].mean(), outer[1].mean())
    evaluations = 0
    trace = []
    for _ in range(levels):
        trace.append(tuple(map(tuple, box.tolist())))
        log_t = np.linspace(box[0, 0], box[0, 1], grid_points)
        log_s = np.linspace(box[1, 0], box[1, 1], grid_points)
        for lt in log_t:
            for ls in log_s:
                val = _safe_objective(model, criterion, 10.0**lt, 10.0**ls)
                evaluations += 1
                if val > best_val:
                    best_val, best = val, (lt, ls)
        widths = (box[:, 1] - box[:, 0]) / SHRINK
        box = np.array([
            _recenter(best[0], widths[0] / 2, *outer[0]),
            _recenter(best[1], widths[1] / 2, *outer[1]),
        ])

    if not np.isfinite(best_val):
        raise MixedModelError("objective could not be evaluated anywhere in the search box")

    vc_star = VarianceComponents(10.0 ** best[0], 10.0 ** best[1])
    beta_star = likelihood.gls_beta(model, likelihood.marginal(model, vc_star))
    edge_tol = 1e-12
    on_boundary = bool(
        np.any(np.abs(np.array(best) - outer[:, 0]) < edge_tol)
        or np.any(np.abs(np.array(best) - outer[:, 1]) < edge_tol)
    )
    result = OracleResult(
        vc_star=vc_star,
        loglik_star=float(best_val),
        criterion=criterion,
        evaluations=evaluations,
        grid_trace=tuple(trace),
        beta_star=beta_star,
        on_boundary=on_boundary,
    )
    if on_boundary and raise_on_boundary:
        raise BoundaryHit(
            f"oracle optimum tau2={vc_star.tau2:.6g}, sigma2={vc_star.sigma2:.6g} "
            "lies on the edge of the search box",
            result=result,
        )
    return result


@dataclass(frozen=True)
class ValidationReport:
    criterion: Criterion
    # quantity name -> relative discrepancy between the EM fit and the oracle
    discrepancies: dict
    loglik_fit: LogLik
    loglik_oracle: LogLik
    loglik_deficit: float
    max_discrepancy: float
    passed: bool
    rtol: float
    loglik_slack: float
    fit_row: tuple
    oracle_row: tuple


def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(abs(b), np.finfo(float).tiny)


def compare(fit, oracle: OracleResult, rtol: float = 1e-3, loglik_slack: float = 1e-6) -> ValidationReport:
    """Relative discrepancies between an EM fit and the oracle of the same criterion.

    PASS needs every discrepancy below ``rtol`` and the fit's objective no
    more than ``loglik_slack`` below the oracle's.
    """
    if fit.criterion is not oracle.criterion:
        raise CriterionMismatch(
            f"cannot compare a {fit.criterion.value} fit with a {oracle.criterion.value} oracle: "
            "the log-likelihoods are on different scales"
        )
    beta_fit = np.asarray(fit.beta_hat)
    beta_or = np.asarray(oracle.beta_star)
    disc = {"tau2": _rel(fit.vc.tau2, oracle.vc_star.tau2),
            "sigma2": _rel(fit.vc.sigma2, oracle.vc_star.sigma2)}
    for j, (a, b) in enumerate(zip(beta_fit, beta_or)):
        disc[f"beta{j}"] = _rel(a, b)
    disc["loglik"] = _rel(fit.loglik.value, oracle.loglik_star)

    deficit = oracle.loglik - fit.loglik
    max_disc = max(disc.values())
    passed = bool(max_disc < rtol and deficit <= loglik_slack)
    return ValidationReport(
        criterion=fit.criterion,
        discrepancies=disc,
        loglik_fit=fit.loglik,
        loglik_oracle=oracle.loglik,
        loglik_deficit=float(deficit),
        max_discrepancy=float(max_disc),
        passed=passed,
        rtol=rtol,
        loglik_slack=loglik_slack,
        fit_row=("em", fit.criterion.value, *map(float, beta_fit), fit.vc.tau2, fit.vc.sigma2,
                 fit.loglik.value),
        oracle_row=("oracle", oracle.criterion.value, *map(float, beta_or), oracle.vc_star.tau2,
                    oracle.vc_star.sigma2, oracle.loglik_star),
    )
