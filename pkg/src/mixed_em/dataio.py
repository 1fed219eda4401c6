"""CSV ingestion and emission.

Default layout is ``y,x1,...,xk,grp``: response, covariates, group label.
An intercept column is prepended to X unless ``intercept=False``. Explicit
design columns (``design_cols`` / ``z_cols``) bypass the naming convention,
e.g. for a multiple-membership Z.
"""

from __future__ import annotations

import csv
import hashlib
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import MixedModelError
from .model import ModelData, SimulationTruth, group_order, validate_model, z_from_groups

INTERCEPT = "intercept"
_COVARIATE = re.compile(r"^x(\d+)$")


class InputError(MixedModelError):
    """The input file cannot be turned into a model."""


@dataclass(frozen=True, eq=False)
class LoadedData:
    model: ModelData
    x_names: tuple[str, ...]
    z_names: tuple[str, ...]
    path: str
    sha256: str

    def digest(self) -> dict:
        return {
            "path": self.path,
            "sha256": self.sha256,
            "n": self.model.n,
            "p": self.model.p,
            "q": self.model.q,
            "x_columns": list(self.x_names),
            "z_columns": list(self.z_names),
        }


def _parse_float(value: str, column: str, row: int) -> float:
    try:
        return float(value)
    except (TypeError, ValueError):
        raise InputError(f"row {row}: column {column!r} has non-numeric value {value!r}") from None


def read_csv(
    path,
    design_cols: Sequence[str] | None = None,
    z_cols: Sequence[str] | None = None,
    intercept: bool = True,
    response: str = "y",
    group_col: str = "grp",
) -> LoadedData:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    text = raw.decode("utf-8-sig")
    reader = csv.DictReader(text.splitlines())
    header = reader.fieldnames
    if not header:
        raise InputError(f"{path}: missing header row")
    rows = list(reader)
    if not rows:
        raise InputError(f"{path}: no data rows")
    if response not in header:
        raise InputError(f"{path}: no response column {response!r}")

    if design_cols is None:
        covs = sorted((c for c in header if _COVARIATE.match(c)),
                      key=lambda c: int(_COVARIATE.match(c).group(1)))
    else:
        covs = list(design_cols)
    for c in list(covs) + list(z_cols or []):
        if c not in header:
            raise InputError(f"{path}: no column {c!r}")

    def column(name: str) -> np.ndarray:
        return np.array([_parse_float(r[name], name, i + 2) for i, r in enumerate(rows)])

    y = column(response)
    x_names = ([INTERCEPT] if intercept else []) + covs
    cols = ([np.ones(len(rows))] if intercept else []) + [column(c) for c in covs]
    if not cols:
        raise InputError("X would have no columns (no covariates and --no-intercept)")
    X = np.column_stack(cols)

    if z_cols:
        Z = np.column_stack([column(c) for c in z_cols])
        z_names = list(z_cols)
    elif group_col in header:
        labels = [r[group_col] for r in rows]
        if any(lab is None or lab == "" for lab in labels):
            raise InputError(f"{path}: empty group label")
        Z = z_from_groups(labels)
        z_names = [f"{group_col}={lab}" for lab in group_order(labels)]
    else:
        raise InputError(
            f"{path}: no {group_col!r} column; name the random-effect design with --z-cols"
        )

    try:
        model = validate_model(y, X, Z)
    except MixedModelError as exc:
        raise InputError(f"{path}: {exc}") from exc
    return LoadedData(
        model=model,
        x_names=tuple(x_names),
        z_names=tuple(z_names),
        path=str(path),
        sha256=hashlib.sha256(raw).hexdigest(),
    )


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_simulation_csv(path, model: ModelData, truth: SimulationTruth) -> None:
    """Write ``y,x1..x{p-1},grp``; the intercept column is left implicit."""
    p = model.p
    header = ["y"] + [f"x{j}" for j in range(1, p)] + ["grp"]
    rows = (
        [repr(float(model.y[i]))] + [repr(float(v)) for v in model.X[i, 1:]] + [truth.groups[i]]
        for i in range(model.n)
    )
    _write_rows(path, header, rows)


def write_design_csv(path, data: LoadedData) -> None:
    """Dump y, X and Z with the column names they were built under.

    Reading the file back with ``design_cols=x_names``, ``z_cols=z_names``
    and ``intercept=False`` reproduces X and Z exactly.
    """
    m = data.model
    header = ["y", *data.x_names, *data.z_names]
    rows = (
        [repr(float(m.y[i]))] + [repr(float(v)) for v in m.X[i]] + [repr(float(v)) for v in m.Z[i]]
        for i in range(m.n)
    )
    _write_rows(path, header, rows)
