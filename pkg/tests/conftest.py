import numpy as np
import pytest

from heavybrw.branching import BranchingModel, OffspringLaw
from heavybrw.displacement import (DependentRay, DisplacementModel, IidAxes, light_pareto,
                                   two_sided_pareto, zero_law)

ACCEPTANCE_LINES: list[str] = []


def record(criterion: int, name: str, ok: bool, detail: str):
    line = f"criterion {criterion:>2} [{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def one_three() -> BranchingModel:
    """Single type, 1 or 3 children with probability 1/2; rho = 2."""
    return BranchingModel(OffspringLaw.independent({1: 0.5, 3: 0.5}))


def binary() -> BranchingModel:
    return BranchingModel(OffspringLaw.deterministic([2]))


def two_type_symmetric() -> BranchingModel:
    rows = [[((2, 1), 0.5), ((1, 1), 0.5)],
            [((1, 2), 0.5), ((1, 1), 0.5)]]
    return BranchingModel(OffspringLaw.table(rows))


def two_type_asymmetric() -> BranchingModel:
    rows = [[((1, 1), 1.0)],
            [((1, 2), 0.5), ((2, 3), 0.5)]]
    return BranchingModel(OffspringLaw.table(rows))


def two_type_sparse() -> BranchingModel:
    """One child of each type plus a second heavy child w.p. 0.1; rho = 2.1."""
    row = [((1, 1), 0.9), ((1, 2), 0.1)]
    return BranchingModel(OffspringLaw.table([row, row]))


def pareto_axes(alpha=1.0, beta=1.0, Q=1, gamma=1.0) -> DisplacementModel:
    dom = tuple(light_pareto(alpha + gamma) for _ in range(Q - 1))
    return DisplacementModel(dom, IidAxes(two_sided_pareto(alpha, beta)), gamma)


def pareto_ray(coef=(1.0, 0.5, 0.25), alpha=1.0, beta=1.0) -> DisplacementModel:
    return DisplacementModel((), DependentRay(two_sided_pareto(alpha, beta), tuple(coef)))


def zero_model(Q=1) -> DisplacementModel:
    return DisplacementModel(tuple(zero_law() for _ in range(Q - 1)), IidAxes(zero_law()))


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(12345))
