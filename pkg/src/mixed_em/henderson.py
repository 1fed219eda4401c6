"""Henderson's mixed-model equations for ``G = tau2 I`` and ``R = sigma2 I``.

The coefficient matrix is

    M = [[X'X / s2,  X'Z / s2          ],
         [Z'X / s2,  Z'Z / s2 + I / t2 ]]

and ``C = M^-1``. R^-1 and G^-1 are applied as scalar factors on cached
cross-products, so nothing of size n x n is ever built.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import MixedModelError, NumericalFailure
from .model import ModelData, VarianceComponents

# Smallest variance component accepted at assembly; below this G^-1 or R^-1
# scaling makes M numerically singular.
MIN_VARIANCE = 1e-12


def _cholesky(A: np.ndarray, what: str):
    try:
        return scipy.linalg.cho_factor(A, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalFailure(f"{what} is not numerically positive definite: {exc}") from exc


def spd_inverse(A: np.ndarray, what: str = "matrix") -> np.ndarray:
    """Inverse of a symmetric positive-definite matrix through its Cholesky factor."""
    factor = _cholesky(A, what)
    inv = scipy.linalg.cho_solve(factor, np.eye(A.shape[0]))
    return 0.5 * (inv + inv.T)


@dataclass(frozen=True, eq=False)
class HendersonSystem:
    M: np.ndarray
    rhs: np.ndarray
    p: int
    q: int
    vc: VarianceComponents

    @property
    def M_bb(self) -> np.ndarray:
        return self.M[: self.p, : self.p]

    @property
    def M_be(self) -> np.ndarray:
        return self.M[: self.p, self.p :]

    @property
    def M_eb(self) -> np.ndarray:
        return self.M[self.p :, : self.p]

    @property
    def M_ee(self) -> np.ndarray:
        return self.M[self.p :, self.p :]


@dataclass(frozen=True, eq=False)
class HendersonSolution:
    """BLUE, BLUP, conditional residuals and covariance blocks from one solve."""

    beta_hat: np.ndarray
    eta_hat: np.ndarray
    r_hat: np.ndarray
    C: np.ndarray
    M_etaeta_inv: np.ndarray
    p: int
    q: int

    @property
    def C_bb(self) -> np.ndarray:
        return self.C[: self.p, : self.p]

    @property
    def C_be(self) -> np.ndarray:
        return self.C[: self.p, self.p :]

    @property
    def C_eb(self) -> np.ndarray:
        return self.C[self.p :, : self.p]

    @property
    def C_ee(self) -> np.ndarray:
        """Prediction-error covariance Var(eta_hat - eta)."""
        return self.C[self.p :, self.p :]


def assemble(model: ModelData, vc: VarianceComponents) -> HendersonSystem:
    if model.q < 1:
        raise MixedModelError("Henderson assembly needs at least one random effect (q >= 1)")
    if vc.tau2 < MIN_VARIANCE or vc.sigma2 < MIN_VARIANCE:
        raise NumericalFailure(
            f"variance components below {MIN_VARIANCE:g}: tau2={vc.tau2!r}, sigma2={vc.sigma2!r}"
        )
    p, q = model.p, model.q
    r_inv = 1.0 / vc.sigma2
    M = np.empty((p + q, p + q))
    M[:p, :p] = model.XtX * r_inv
    M[:p, p:] = model.XtZ * r_inv
    M[p:, :p] = M[:p, p:].T
    M[p:, p:] = model.ZtZ * r_inv
    M[np.arange(p, p + q), np.arange(p, p + q)] += 1.0 / vc.tau2
    rhs = np.concatenate([model.Xty, model.Zty]) * r_inv
    M.setflags(write=False)
    rhs.setflags(write=False)
    _cholesky(M, "Henderson matrix M")
    return HendersonSystem(M=M, rhs=rhs, p=p, q=q, vc=vc)


def conditional_covariance(model: ModelData, vc: VarianceComponents) -> np.ndarray:
    """``Var(eta | y) = (Z'Z / sigma2 + I / tau2)^-1``; depends on Z and vc only."""
    M_ee = model.ZtZ / vc.sigma2
    M_ee[np.diag_indices_from(M_ee)] += 1.0 / vc.tau2
    return spd_inverse(M_ee, "M_etaeta")


def solve(system: HendersonSystem, model: ModelData) -> HendersonSolution:
    p, q = system.p, system.q
    factor = _cholesky(system.M, "Henderson matrix M")
    C = scipy.linalg.cho_solve(factor, np.eye(p + q))
    C = 0.5 * (C + C.T)
    sol = scipy.linalg.cho_solve(factor, system.rhs)
    beta_hat, eta_hat = sol[:p], sol[p:]
    r_hat = model.y - model.X @ beta_hat - model.Z @ eta_hat
    M_etaeta_inv = conditional_covariance(model, system.vc)
    for a in (beta_hat, eta_hat, r_hat, C, M_etaeta_inv):
        a.setflags(write=False)
    return HendersonSolution(
        beta_hat=beta_hat,
        eta_hat=eta_hat,
        r_hat=r_hat,
        C=C,
        M_etaeta_inv=M_etaeta_inv,
        p=p,
        q=q,
    )


def fit_at(model: ModelData, vc: VarianceComponents) -> HendersonSolution:
    """Assemble and solve in one call."""
    return solve(assemble(model, vc), model)


def schur_c_etaeta(system: HendersonSystem) -> np.ndarray:
    """C_etaeta computed as the inverse Schur complement of the M_betabeta block.

    Independent of the full inversion in :func:`solve`, so the two can be
    cross-checked.
    """
    bb = _cholesky(system.M_bb, "M_betabeta")
    S = system.M_ee - system.M_eb @ scipy.linalg.cho_solve(bb, system.M_be)
    return spd_inverse(0.5 * (S + S.T), "Schur complement of M_betabeta")
