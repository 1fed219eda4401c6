"""Command-line interface: ``mixed-em {simulate,fit,validate,inspect}``.

Exit codes: 0 success/PASS, 2 input error, 3 non-convergence, 4 validation FAIL.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import em, oracle
from .dataio import InputError, read_csv, write_design_csv, write_simulation_csv
from .errors import CriterionMismatch, MixedModelError
from .model import Criterion, SimulationSpec, simulate
from .report import FitReport, InspectionDump, enc, enc_array, format_validation_table

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NONCONVERGED = 3
EXIT_FAIL = 4

SEED_ENV = "MIXED_EM_SEED"


def _err(msg: str) -> None:
    print(f"mixed-em: {msg}", file=sys.stderr)


def _split(value: str | None):
    return None if value is None else [c.strip() for c in value.split(",") if c.strip()]


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("data", help="CSV file with columns y, x1.., grp")
    p.add_argument("--design-cols", help="comma-separated X columns (overrides x1..xk)")
    p.add_argument("--z-cols", help="comma-separated Z columns (instead of grp)")
    p.add_argument("--no-intercept", action="store_true", help="do not prepend an intercept to X")


def _add_em_args(p: argparse.ArgumentParser, criterion_default: str, choices) -> None:
    p.add_argument("--criterion", type=str.lower, choices=choices, default=criterion_default)
    p.add_argument("--tol", type=float, default=1e-7)
    p.add_argument("--maxit", type=int, default=100)
    p.add_argument("--tau2-init", type=float, default=1.0)
    p.add_argument("--sigma2-init", type=float, default=1.0)


def _load(args):
    return read_csv(
        args.data,
        design_cols=_split(args.design_cols),
        z_cols=_split(args.z_cols),
        intercept=not args.no_intercept,
    )


def _config(args, criterion, trace_loglik=False) -> em.EmConfig:
    return em.EmConfig(
        criterion=Criterion.parse(criterion),
        maxit=args.maxit,
        tol=args.tol,
        tau2_init=args.tau2_init,
        sigma2_init=args.sigma2_init,
        trace_loglik=trace_loglik,
    )


def cmd_simulate(args) -> int:
    try:
        spec_dict = json.loads(Path(args.spec).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        _err(f"cannot read spec: {exc}")
        return EXIT_INPUT
    if not isinstance(spec_dict, dict):
        _err("spec must be a JSON object")
        return EXIT_INPUT
    # precedence: --seed > MIXED_EM_SEED > file
    if args.seed is not None:
        spec_dict["seed"] = args.seed
    elif os.environ.get(SEED_ENV):
        try:
            spec_dict["seed"] = int(os.environ[SEED_ENV])
        except ValueError:
            _err(f"{SEED_ENV} must be an integer")
            return EXIT_INPUT
    try:
        spec = SimulationSpec.from_dict(spec_dict)
    except MixedModelError as exc:
        _err(f"invalid spec: {exc}")
        return EXIT_INPUT

    model, truth = simulate(spec)
    out = Path(args.out)
    write_simulation_csv(out, model, truth)
    truth_path = Path(args.truth) if args.truth else out.with_suffix(".truth.json")
    truth_path.write_text(json.dumps({
        "spec": spec.to_dict(),
        "beta_true": enc_array(spec.beta_true),
        "tau2_true": enc(spec.tau2_true),
        "sigma2_true": enc(spec.sigma2_true),
        "groups": list(dict.fromkeys(truth.groups)),
        "eta": enc_array(truth.eta),
        "eps": enc_array(truth.eps),
    }, indent=2) + "\n")
    print(f"wrote {model.n} rows to {out} and truth to {truth_path}", file=sys.stderr)
    return EXIT_OK


def cmd_fit(args) -> int:
    try:
        data = _load(args)
        config = _config(args, args.criterion, trace_loglik=args.trace_loglik)
    except MixedModelError as exc:
        _err(str(exc))
        return EXIT_INPUT
    if args.dump_design:
        write_design_csv(args.dump_design, data)
    try:
        result = em.fit(data.model, config)
    except MixedModelError as exc:
        _err(f"fit failed: {exc}")
        return EXIT_INPUT

    report = FitReport.from_fit(result, data.model, data.digest(), inspect=args.inspect)
    text = report.to_json() + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if not result.converged:
        why = "variance component reached the boundary" if result.boundary else "maxit reached"
        _err(f"did not converge after {result.iterations} iterations ({why}); "
             f"last relative change {result.delta:.3e}")
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        data = _load(args)
        criteria = list(Criterion) if args.criterion == "both" else [Criterion.parse(args.criterion)]
        configs = [_config(args, c) for c in criteria]
    except MixedModelError as exc:
        _err(str(exc))
        return EXIT_INPUT

    bounds = (tuple(args.tau2_bounds), tuple(args.sigma2_bounds))
    reports, notes = [], []
    try:
        for config in configs:
            fit = em.fit(data.model, config)
            ocrit = Criterion.parse(args.oracle_criterion) if args.oracle_criterion else config.criterion
            res = oracle.maximize(data.model, ocrit, bounds=bounds, levels=args.levels,
                                  raise_on_boundary=False)
            rep = oracle.compare(fit, res, rtol=args.rtol)
            if res.on_boundary:
                notes.append(f"{config.criterion.value}: oracle optimum on the search-box edge; "
                             "treating as FAIL")
                rep = type(rep)(**{**rep.__dict__, "passed": False})
            if not fit.converged:
                notes.append(f"{config.criterion.value}: EM stopped without converging "
                             f"after {fit.iterations} iterations")
            reports.append(rep)
    except CriterionMismatch as exc:
        _err(f"CriterionMismatch: {exc}")
        return EXIT_INPUT
    except MixedModelError as exc:
        _err(str(exc))
        return EXIT_INPUT

    print(format_validation_table(reports))
    for note in notes:
        _err(note)
    if args.out:
        Path(args.out).write_text(json.dumps([
            {
                "criterion": r.criterion.value,
                "passed": r.passed,
                "discrepancies": {k: enc(v) for k, v in r.discrepancies.items()},
                "loglik_deficit": enc(r.loglik_deficit),
                "rows": [[v if isinstance(v, str) else enc(v) for v in row]
                         for row in (r.fit_row, r.oracle_row)],
            }
            for r in reports
        ], indent=2) + "\n")
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAIL


def _fmt_matrix(name: str, a: np.ndarray) -> str:
    body = np.array2string(np.atleast_2d(a), precision=10, suppress_small=False, max_line_width=120)
    return f"{name} =\n{body}"


def cmd_inspect(args) -> int:
    try:
        data = _load(args)
        config = _config(args, args.criterion)
        result = em.fit(data.model, config)
    except MixedModelError as exc:
        _err(str(exc))
        return EXIT_INPUT
    k = result.iterations if args.iteration is None else args.iteration
    if not 0 <= k <= result.iterations:
        _err(f"--iteration {k} out of range 0..{result.iterations}")
        return EXIT_INPUT
    try:
        dump = InspectionDump.at(data.model, result.vc_at(k))
    except MixedModelError as exc:
        _err(f"cannot inspect iteration {k}: {exc}")
        return EXIT_INPUT

    p = data.model.p
    print(f"iteration {k} of {result.iterations} ({config.criterion.value} run): "
          f"tau2 = {dump.vc.tau2:.12g}, sigma2 = {dump.vc.sigma2:.12g}")
    print()
    print(_fmt_matrix("M_betabeta", dump.M[:p, :p]))
    print(_fmt_matrix("M_betaeta", dump.M[:p, p:]))
    print(_fmt_matrix("M_etaeta", dump.M[p:, p:]))
    print(_fmt_matrix("C", dump.C))
    print(_fmt_matrix("C_etaeta  [Var(eta_hat - eta)]", dump.C_etaeta))
    print(_fmt_matrix("(M_etaeta)^-1  [Var(eta | y)]", dump.M_etaeta_inv))
    print()
    ml, reml = dump.traces["ML"], dump.traces["REML"]
    print(f"{'trace adjustment':<18}{'ML':>22}{'REML':>22}")
    print(f"{'tr(T_tau)':<18}{ml[0]:>22.12g}{reml[0]:>22.12g}")
    print(f"{'tr(T_sigma)':<18}{ml[1]:>22.12g}{reml[1]:>22.12g}")
    print()
    print(f"schur residual max|schur_C_etaeta - C_etaeta| = {dump.schur_residual:.3e}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mixed-em",
        description="EM fitting of one-way linear mixed models under ML or REML.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a one-way random-intercept data set")
    p.add_argument("spec", help="simulation spec JSON")
    p.add_argument("out", help="output CSV path")
    p.add_argument("--truth", help="truth JSON path (default: <out>.truth.json)")
    p.add_argument("--seed", type=int, help=f"override the spec seed (beats ${SEED_ENV})")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit by EM and write a JSON report")
    _add_data_args(p)
    _add_em_args(p, "ml", ["ml", "reml"])
    p.add_argument("--inspect", action="store_true", help="include M, C and covariance blocks")
    p.add_argument("--trace-loglik", action="store_true",
                   help="evaluate the objective after every iteration")
    p.add_argument("--out", help="report path (default: stdout)")
    p.add_argument("--dump-design", help="write the ingested y, X, Z to this CSV")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("validate", help="compare EM fits with the grid-search oracle")
    _add_data_args(p)
    _add_em_args(p, "both", ["ml", "reml", "both"])
    p.add_argument("--oracle-criterion", type=str.lower, choices=["ml", "reml"],
                   help="criterion for the oracle (default: same as the fit)")
    p.add_argument("--levels", type=int, default=6, help="oracle refinement levels")
    p.add_argument("--tau2-bounds", type=float, nargs=2, default=oracle.DEFAULT_BOUNDS[0],
                   metavar=("LO", "HI"))
    p.add_argument("--sigma2-bounds", type=float, nargs=2, default=oracle.DEFAULT_BOUNDS[1],
                   metavar=("LO", "HI"))
    p.add_argument("--rtol", type=float, default=1e-3, help="relative discrepancy gate")
    p.add_argument("--out", help="write the comparison as JSON")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("inspect", help="print Henderson matrices and trace adjustments")
    _add_data_args(p)
    _add_em_args(p, "ml", ["ml", "reml"])
    p.add_argument("--iteration", type=int,
                   help="number of EM updates before inspecting (default: final)")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        return args.func(args)
    except InputError as exc:
        _err(str(exc))
        return EXIT_INPUT


if __name__ == "__main__":
    raise SystemExit(main())
