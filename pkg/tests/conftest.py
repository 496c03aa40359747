import numpy as np
import pytest

from thermovisco import ElasticityTensor, FlowRule, build_mesh, build_spaces
from thermovisco.solver import SolverConfig, run


def make_smooth_problem(cells=100, dt=1e-3, t_end=0.5, kappa0=1.0, with_forcing=True):
    """The shipped smooth coupled 1D scenario (C = λ + 2μ = 1)."""
    mesh = build_mesh(1, [1.0], [cells])
    sys = build_spaces(mesh, mesh.interior_nodes.size, mesh.n_cells)
    cfg = SolverConfig(
        dt=dt,
        t_end=t_end,
        elasticity=ElasticityTensor(0.0, 0.5),
        flow_rule=FlowRule.mroz_saturating(kappa0),
        u0=lambda pts: (0.1 * np.sin(np.pi * pts[:, 0]))[:, None],
        stress0=lambda pts: (0.3 * np.cos(np.pi * pts[:, 0]))[:, None, None],
        theta0=lambda pts: 1.0 + 0.2 * np.cos(np.pi * pts[:, 0]),
        forcing=(lambda t, pts: (0.05 * np.cos(2 * t) * np.sin(np.pi * pts[:, 0]))[:, None])
        if with_forcing else None,
    )
    return sys, cfg


def make_zero_problem(cells=16, dt=1e-3, t_end=0.1):
    mesh = build_mesh(1, [1.0], [cells])
    sys = build_spaces(mesh, mesh.interior_nodes.size, mesh.n_cells)
    cfg = SolverConfig(dt=dt, t_end=t_end,
                       elasticity=ElasticityTensor(0.0, 0.5),
                       flow_rule=FlowRule.linear(0.5),
                       theta0=lambda pts: np.ones(pts.shape[0]))
    return sys, cfg


@pytest.fixture(scope="session")
def smooth_run():
    sys, cfg = make_smooth_problem()
    return sys, cfg, run(sys, cfg)


@pytest.fixture(scope="session")
def smooth_run_half_dt():
    sys, cfg = make_smooth_problem(dt=5e-4)
    return sys, cfg, run(sys, cfg)


@pytest.fixture(scope="session")
def zero_run():
    sys, cfg = make_zero_problem()
    return sys, cfg, run(sys, cfg)
