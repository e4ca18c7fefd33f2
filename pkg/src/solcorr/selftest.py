"""Small-grid consistency checks of the quantum machinery (run by ``solcorr selftest``)."""

from __future__ import annotations

import numpy as np

from .cgle import PAPER_PARAMS, CgleParams, StepScheme, Stepper, propagate
from .grid import Field, TimeGrid, make_grid
from .quantum import (
    DoubledFunctional,
    LinearizedStepper,
    forward_covariance_oracle,
    measure_covariance,
)

ORACLE_TOLERANCE = 1e-8
ADJOINT_TOLERANCE = 1e-12
JACOBIAN_TOLERANCE = 1e-5


def small_pair(grid: TimeGrid, separation: float = 2.4, amplitude: float = 6.2,
               width: float = 1 / 3) -> Field:
    """Two in-phase sech pulses; a cheap stand-in for a relaxed pair on coarse grids."""
    t = grid.t
    return Field(grid, amplitude / np.cosh((t - separation / 2) / width)
                 + amplitude / np.cosh((t + separation / 2) / width))


def half_window_functionals(u: Field, z: float) -> list:
    n = u.grid.n_points
    out = []
    for lo, hi in [(0, n // 2), (n // 2, n)]:
        chi = np.zeros(n)
        chi[lo:hi] = 1.0
        out.append(DoubledFunctional(u.values.conj() * chi, u.values * chi, z))
    return out


def oracle_equivalence(n_points: int = 64, steps: int = 200, params: CgleParams = PAPER_PARAMS,
                       dz: float = 1e-3, t_window: float = 10.0) -> dict:
    grid = make_grid(n_points, t_window)
    scheme = StepScheme(dz)
    _, traj = propagate(small_pair(grid), params, steps * dz, scheme, record=True)
    fs = half_window_functionals(traj.node_field(traj.n_steps), traj.distance)
    adj = measure_covariance(fs, traj)
    ref = forward_covariance_oracle(traj, params, fs)
    err = float(np.linalg.norm(adj.raw - ref.raw) / np.linalg.norm(ref.raw))
    return {"name": "oracle_equivalence", "value": err, "tolerance": ORACLE_TOLERANCE,
            "passed": err < ORACLE_TOLERANCE}


def adjoint_identity(n_points: int = 64, params: CgleParams = PAPER_PARAMS, seed: int = 0) -> dict:
    """<f, L w> == <L^T f, w> for one linearized step, with the bilinear pairing."""
    grid = make_grid(n_points, 10.0)
    rng = np.random.default_rng(seed)
    lin = LinearizedStepper(grid, params, StepScheme(1e-3))
    x, y, a, b = (rng.normal(size=n_points) + 1j * rng.normal(size=n_points) for _ in range(4))
    mid = small_pair(grid).values
    fx, fy = lin.forward(x, y, mid)
    ba, bb = lin.backward(a, b, mid)
    lhs = np.sum(a * fx + b * fy)
    rhs = np.sum(ba * x + bb * y)
    err = float(abs(lhs - rhs) / abs(lhs))
    return {"name": "adjoint_identity", "value": err, "tolerance": ADJOINT_TOLERANCE,
            "passed": err < ADJOINT_TOLERANCE}


def jacobian_check(n_points: int = 64, params: CgleParams = PAPER_PARAMS, h: float = 1e-6,
                   seed: int = 0) -> dict:
    """Linearized step vs a finite difference of the classical step."""
    grid = make_grid(n_points, 10.0)
    rng = np.random.default_rng(seed)
    scheme = StepScheme(1e-3)
    stepper = Stepper(grid, params, scheme)
    lin = LinearizedStepper(grid, params, scheme)
    u0 = small_pair(grid).values
    du = rng.normal(size=n_points) + 1j * rng.normal(size=n_points)
    fd = (stepper.step(u0 + h * du)[0] - stepper.step(u0 - h * du)[0]) / (2 * h)
    lx, ly = lin.forward(du, du.conj(), stepper.half_linear(u0))
    err = float(np.linalg.norm(fd - lx) / np.linalg.norm(lx))
    conj_err = float(np.linalg.norm(ly - lx.conj()) / np.linalg.norm(lx))
    value = max(err, conj_err)
    return {"name": "jacobian_finite_difference", "value": value,
            "tolerance": JACOBIAN_TOLERANCE, "passed": value < JACOBIAN_TOLERANCE}


def run_all() -> list[dict]:
    return [adjoint_identity(), jacobian_check(), oracle_equivalence()]
