"""Shared fixtures: canonical problems, references, graphs.

Reference solves are the expensive shared computation, so they are
session-scoped and reused across test modules.
"""

from __future__ import annotations

import numpy as np
import pytest

from pdnet import graphs, problems


def make_custom_problem(objectives, constraints, lipschitz, radius,
                        dim, box=None):
    """Assemble a ProblemSpec from bare oracles (loop evaluation paths)."""
    return problems.ProblemSpec(
        dim=dim, n_constraints=len(constraints), n_agents=len(objectives),
        objectives=tuple(objectives), constraints=tuple(constraints),
        lipschitz=lipschitz, radius=radius, box=box, family="custom",
    )


def toy_problem():
    """d=1, one agent, f(x) = x, g(x) = x - 1/2, L = 1, R = 1."""
    f = lambda x: (float(x[0]), np.ones(1))
    g = lambda x: (float(x[0] - 0.5), np.ones(1))
    return make_custom_problem([f], [g], lipschitz=1.0, radius=1.0, dim=1)


@pytest.fixture(scope="session")
def paper_dataset():
    return problems.generate_dataset(100, 5, seed=1)


@pytest.fixture(scope="session")
def paper_logistic(paper_dataset):
    """The default experiment instance: logistic, l = u = 0.1."""
    return problems.build_logistic_problem(paper_dataset, 0.1, 0.1)


@pytest.fixture(scope="session")
def paper_hinge(paper_dataset):
    return problems.build_hinge_problem(paper_dataset, 0.1, 0.1)


@pytest.fixture(scope="session")
def paper_reference(paper_logistic):
    return problems.reference_optimum(paper_logistic, iterations=200_000,
                                      residual_tol=1e-4)


@pytest.fixture(scope="session")
def ws_graph():
    return graphs.generate_watts_strogatz(100, 20, 0.02, seed=7)


@pytest.fixture(scope="session")
def ws_matrix(ws_graph):
    return graphs.lazy_metropolis(ws_graph)
