import numpy as np
import pytest

from mixed_em.model import SimulationSpec, VarianceComponents, simulate, validate_model, z_from_groups

PINNED_SPEC = dict(
    n_groups=6, group_sizes=5, beta_true=(2.0, 1.0, -0.5),
    tau2_true=1.0, sigma2_true=1.0, seed=20240131,
)


def random_instance(rng, n=None, p=None, q=None, grouped=None):
    """Random (model, vc) pair; Z is a group indicator or a dense normal matrix."""
    n = n if n is not None else int(rng.integers(12, 51))
    p = p if p is not None else int(rng.integers(1, 5))
    q = q if q is not None else int(rng.integers(1, 9))
    grouped = bool(rng.integers(2)) if grouped is None else grouped
    # one group duplicates the intercept and makes eta_hat exactly zero
    grouped = grouped and q > 1
    X = np.column_stack([np.ones(n), rng.standard_normal((n, p - 1))])
    if grouped:
        labels = np.concatenate([np.arange(q), rng.integers(0, q, n - q)])
        Z = z_from_groups(rng.permutation(labels))
    else:
        Z = rng.standard_normal((n, q))
    y = X @ rng.standard_normal(p) + Z @ rng.standard_normal(q) + rng.standard_normal(n)
    vc = VarianceComponents(*10.0 ** rng.uniform(-1, 1, 2))
    return validate_model(y, X, Z), vc


@pytest.fixture
def tiny():
    return validate_model([1.0, 2.0], [[1.0], [1.0]], [[1.0], [0.0]])


@pytest.fixture(scope="session")
def pinned():
    return simulate(SimulationSpec(**PINNED_SPEC))[0]


@pytest.fixture(scope="session")
def standard60():
    """n = 60 in 6 groups of 10."""
    spec = SimulationSpec(n_groups=6, group_sizes=10, beta_true=(2.0, 1.0, -0.5),
                          tau2_true=1.0, sigma2_true=1.0, seed=7)
    return simulate(spec)[0]


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
