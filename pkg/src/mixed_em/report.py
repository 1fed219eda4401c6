"""Fit reports (JSON) and the validation table.

Floating-point values are written as 17-significant-digit decimal strings,
which round-trip to the identical double.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .em import FitResult, trace_adjustments
from .henderson import assemble, schur_c_etaeta, solve
from .likelihood import LogLik
from .model import Criterion, ModelData, VarianceComponents

FORMAT = "mixed_em.fit_report/1"


def enc(x) -> str:
    return format(float(x), ".17g")


def dec(s) -> float:
    return float(s)


def enc_array(a) -> list:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 0:
        return enc(a)
    return [enc_array(v) for v in a]


def dec_array(v) -> np.ndarray:
    return np.array(v, dtype=object).astype(np.float64)


@dataclass(frozen=True, eq=False)
class InspectionDump:
    """Matrices from one Henderson solve, with both criteria's trace adjustments."""

    vc: VarianceComponents
    M: np.ndarray
    C: np.ndarray
    C_etaeta: np.ndarray
    M_etaeta_inv: np.ndarray
    schur_C_etaeta: np.ndarray
    traces: dict  # criterion value -> (trace_T_tau, trace_T_sigma)

    @property
    def schur_residual(self) -> float:
        return float(np.max(np.abs(self.schur_C_etaeta - self.C_etaeta)))

    @classmethod
    def at(cls, model: ModelData, vc: VarianceComponents) -> "InspectionDump":
        system = assemble(model, vc)
        sol = solve(system, model)
        return cls(
            vc=vc,
            M=np.array(system.M),
            C=np.array(sol.C),
            C_etaeta=np.array(sol.C_ee),
            M_etaeta_inv=np.array(sol.M_etaeta_inv),
            schur_C_etaeta=schur_c_etaeta(system),
            traces={c.value: trace_adjustments(c, sol, model) for c in Criterion},
        )

    def to_dict(self) -> dict:
        return {
            "tau2": enc(self.vc.tau2),
            "sigma2": enc(self.vc.sigma2),
            "M": enc_array(self.M),
            "C": enc_array(self.C),
            "C_etaeta": enc_array(self.C_etaeta),
            "M_etaeta_inv": enc_array(self.M_etaeta_inv),
            "schur_C_etaeta": enc_array(self.schur_C_etaeta),
            "traces": {k: {"trace_T_tau": enc(t), "trace_T_sigma": enc(s)}
                       for k, (t, s) in self.traces.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InspectionDump":
        return cls(
            vc=VarianceComponents(dec(d["tau2"]), dec(d["sigma2"])),
            M=dec_array(d["M"]),
            C=dec_array(d["C"]),
            C_etaeta=dec_array(d["C_etaeta"]),
            M_etaeta_inv=dec_array(d["M_etaeta_inv"]),
            schur_C_etaeta=dec_array(d["schur_C_etaeta"]),
            traces={k: (dec(v["trace_T_tau"]), dec(v["trace_T_sigma"]))
                    for k, v in d["traces"].items()},
        )


HISTORY_FIELDS = ("tau2", "sigma2", "trace_T_tau", "trace_T_sigma", "rss", "eta_ss")


@dataclass(frozen=True, eq=False)
class FitReport:
    input: dict
    config: dict
    criterion: Criterion
    beta: np.ndarray
    eta: np.ndarray
    tau2: float
    sigma2: float
    loglik: LogLik
    iterations: int
    converged: bool
    boundary: bool
    delta: float
    history: np.ndarray  # iterations x len(HISTORY_FIELDS)
    loglik_path: np.ndarray | None = None
    matrices: InspectionDump | None = field(default=None, repr=False)

    @classmethod
    def from_fit(cls, fit: FitResult, model: ModelData, input_digest: dict,
                 inspect: bool = False) -> "FitReport":
        cfg = fit.config
        history = np.array(
            [[r.vc.tau2, r.vc.sigma2, r.diagnostics.trace_T_tau, r.diagnostics.trace_T_sigma,
              r.diagnostics.rss, r.diagnostics.eta_ss] for r in fit.history]
        ).reshape(-1, len(HISTORY_FIELDS))
        matrices = None
        if inspect:
            # at a boundary stop the final iterate is below the assembly floor
            at = fit.vc_at(fit.iterations - 1) if fit.boundary else fit.vc
            matrices = InspectionDump.at(model, at)
        return cls(
            input=dict(input_digest),
            config={"criterion": cfg.criterion.value, "maxit": int(cfg.maxit), "tol": cfg.tol,
                    "tau2_init": cfg.tau2_init, "sigma2_init": cfg.sigma2_init,
                    "trace_loglik": cfg.trace_loglik},
            criterion=fit.criterion,
            beta=np.array(fit.beta_hat),
            eta=np.array(fit.eta_hat),
            tau2=fit.vc.tau2,
            sigma2=fit.vc.sigma2,
            loglik=fit.loglik,
            iterations=fit.iterations,
            converged=fit.converged,
            boundary=fit.boundary,
            delta=fit.delta,
            history=history,
            loglik_path=None if fit.loglik_path is None else np.array(fit.loglik_path),
            matrices=matrices,
        )

    def to_dict(self) -> dict:
        cfg = dict(self.config)
        for k in ("tol", "tau2_init", "sigma2_init"):
            cfg[k] = enc(cfg[k])
        d: dict[str, Any] = {
            "format": FORMAT,
            "input": self.input,
            "config": cfg,
            "criterion": self.criterion.value,
            "estimates": {
                "beta": enc_array(self.beta),
                "eta": enc_array(self.eta),
                "tau2": enc(self.tau2),
                "sigma2": enc(self.sigma2),
            },
            "loglik": {"criterion": self.loglik.criterion.value, "value": enc(self.loglik.value)},
            "iterations": self.iterations,
            "converged": self.converged,
            "boundary": self.boundary,
            "delta": enc(self.delta),
            "history": [
                {"iteration": i + 1, **{k: enc(v) for k, v in zip(HISTORY_FIELDS, row)}}
                for i, row in enumerate(self.history)
            ],
        }
        if self.loglik_path is not None:
            d["loglik_path"] = enc_array(self.loglik_path)
        if self.matrices is not None:
            d["matrices"] = self.matrices.to_dict()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "FitReport":
        if d.get("format") != FORMAT:
            raise ValueError(f"not a fit report (format={d.get('format')!r})")
        cfg = dict(d["config"])
        for k in ("tol", "tau2_init", "sigma2_init"):
            cfg[k] = dec(cfg[k])
        est = d["estimates"]
        history = np.array(
            [[dec(h[k]) for k in HISTORY_FIELDS] for h in d["history"]]
        ).reshape(-1, len(HISTORY_FIELDS))
        return cls(
            input=d["input"],
            config=cfg,
            criterion=Criterion.parse(d["criterion"]),
            beta=dec_array(est["beta"]),
            eta=dec_array(est["eta"]),
            tau2=dec(est["tau2"]),
            sigma2=dec(est["sigma2"]),
            loglik=LogLik(dec(d["loglik"]["value"]), Criterion.parse(d["loglik"]["criterion"])),
            iterations=int(d["iterations"]),
            converged=bool(d["converged"]),
            boundary=bool(d["boundary"]),
            delta=dec(d["delta"]),
            history=history,
            loglik_path=dec_array(d["loglik_path"]) if "loglik_path" in d else None,
            matrices=InspectionDump.from_dict(d["matrices"]) if "matrices" in d else None,
        )

    @classmethod
    def from_json(cls, text: str) -> "FitReport":
        return cls.from_dict(json.loads(text))


def format_validation_table(reports) -> str:
    """Table with columns method, likelihood, beta..., tau2, sigma2, logLik.

    Rows come in (em, oracle) pairs per criterion. Log-likelihoods are only
    ever compared within a pair.
    """
    reports = list(reports)
    p = max(len(r.fit_row) - 5 for r in reports)
    header = ["method", "likelihood", *[f"beta{j}" for j in range(p)], "tau2", "sigma2", "logLik"]
    lines = []
    for r in reports:
        for row in (r.fit_row, r.oracle_row):
            lines.append([row[0], row[1], *[f"{v:.6f}" for v in row[2:-1]], f"{row[-1]:.8f}"])
    widths = [max(len(h), *(len(l[i]) for l in lines)) for i, h in enumerate(header)]
    out = ["  ".join(h.ljust(w) if i < 2 else h.rjust(w) for i, (h, w) in enumerate(zip(header, widths)))]
    for l in lines:
        out.append("  ".join(c.ljust(w) if i < 2 else c.rjust(w)
                             for i, (c, w) in enumerate(zip(l, widths))))
    out.append("")
    for r in reports:
        worst = max(r.discrepancies, key=r.discrepancies.get)
        verdict = "PASS" if r.passed else "FAIL"
        out.append(
            f"{r.criterion.value}: {verdict}  max relative discrepancy {r.max_discrepancy:.3e} "
            f"({worst}), logLik deficit {r.loglik_deficit:.3e} "
            f"[gates: rtol {r.rtol:g}, slack {r.loglik_slack:g}]"
        )
    return "\n".join(out)
