"""Classical split-step propagation of the cubic-quintic Ginzburg-Landau equation.

Evolution form::

    U_z = i(D/2) U_tt + i|U|^2 U + delta U + eps |U|^2 U + beta U_tt
          + mu |U|^4 U + i nu |U|^4 U

One Strang step is a half linear step in frequency, a pointwise RK4 solve of
the local nonlinear ODE, and a second half linear step.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, ContractError, DivergenceError
from .grid import Field, TimeGrid

BLOWUP_AMPLITUDE = 1e6


@dataclass(frozen=True)
class CgleParams:
    D: float = 1.0
    delta: float = 0.0
    epsilon: float = 0.0
    beta: float = 0.0
    mu: float = 0.0
    nu: float = 0.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not math.isfinite(value):
                raise ConfigError(f"parameter {name} must be finite, got {value!r}")
        if self.beta < 0:
            raise ConfigError(f"beta must be >= 0 (dissipative filtering), got {self.beta}")

    def is_conservative(self) -> bool:
        return self.delta == 0 and self.epsilon == 0 and self.beta == 0 and self.mu == 0

    def as_dict(self) -> dict:
        return asdict(self)


# Parameter set used for the bound pairs and trains (D, delta, eps, beta, mu, nu).
PAPER_PARAMS = CgleParams(D=1.0, delta=-0.01, epsilon=1.8, beta=0.5, mu=-0.05, nu=0.0)
NLSE_PARAMS = CgleParams(D=1.0)


@dataclass(frozen=True)
class StepScheme:
    dz: float = 1e-3
    substeps: int = 1

    def __post_init__(self):
        if not (math.isfinite(self.dz) and self.dz > 0):
            raise ConfigError(f"dz must be positive, got {self.dz!r}")
        if int(self.substeps) != self.substeps or self.substeps < 1:
            raise ConfigError(f"substeps must be a positive integer, got {self.substeps!r}")

    def n_steps(self, distance: float) -> int:
        """Integer step count for ``distance`` (rounded to nearest)."""
        if distance < 0 or not math.isfinite(distance):
            raise ConfigError(f"distance must be non-negative, got {distance!r}")
        return int(round(distance / self.dz))


def linear_multiplier(params: CgleParams, grid: TimeGrid, h: float) -> np.ndarray:
    """Per-frequency factor exp[(-i D w^2/2 + delta - beta w^2) h]."""
    w2 = grid.omega**2
    return np.exp((-0.5j * params.D * w2 + params.delta - params.beta * w2) * h)


def nonlinear_rhs(u: np.ndarray, params: CgleParams) -> np.ndarray:
    intensity = (u * u.conj()).real
    c3 = 1j + params.epsilon
    c5 = params.mu + 1j * params.nu
    return (c3 * intensity + c5 * intensity**2) * u


def rk4_stages(u: np.ndarray, params: CgleParams, h: float):
    """Stage points and slopes of one classical RK4 step of the local ODE."""
    v1 = u
    k1 = nonlinear_rhs(v1, params)
    v2 = u + 0.5 * h * k1
    k2 = nonlinear_rhs(v2, params)
    v3 = u + 0.5 * h * k2
    k3 = nonlinear_rhs(v3, params)
    v4 = u + h * k3
    k4 = nonlinear_rhs(v4, params)
    u_next = u + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return (v1, v2, v3, v4), u_next


def nonlinear_step(u: np.ndarray, params: CgleParams, dz: float, substeps: int = 1) -> np.ndarray:
    h = dz / substeps
    for _ in range(substeps):
        _, u = rk4_stages(u, params, h)
    return u


class Stepper:
    """Precomputed factors for repeated Strang steps at a fixed dz."""

    def __init__(self, grid: TimeGrid, params: CgleParams, scheme: StepScheme):
        self.grid = grid
        self.params = params
        self.scheme = scheme
        self.half = linear_multiplier(params, grid, 0.5 * scheme.dz)

    def half_linear(self, u: np.ndarray) -> np.ndarray:
        g = self.grid
        return g.to_time(g.to_frequency(u) * self.half)

    def nonlinear(self, u: np.ndarray) -> np.ndarray:
        return nonlinear_step(u, self.params, self.scheme.dz, self.scheme.substeps)

    def step(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Advance one step; returns (field after step, field entering the nonlinear stage)."""
        mid = self.half_linear(u)
        return self.half_linear(self.nonlinear(mid)), mid


class TrajectoryStore:
    """Classical field recorded along z for the quantum backward pass.

    ``midpoints[k]`` is the field entering the nonlinear stage of step ``k``
    (i.e. after the first half linear step).  Node fields ``U(z_k)`` are
    recomputed from it on demand.
    """

    def __init__(self, grid: TimeGrid, params: CgleParams, scheme: StepScheme,
                 initial: np.ndarray, midpoints: np.ndarray):
        if midpoints.ndim != 2 or midpoints.shape[1] != grid.n_points:
            raise ContractError("trajectory frames do not match the grid")
        self.grid = grid
        self.params = params
        self.scheme = scheme
        self.initial = np.asarray(initial, dtype=np.complex128)
        self.midpoints = midpoints
        self._stepper = Stepper(grid, params, scheme)

    @property
    def dz(self) -> float:
        return self.scheme.dz

    @property
    def n_steps(self) -> int:
        return self.midpoints.shape[0]

    @property
    def distance(self) -> float:
        return self.n_steps * self.dz

    def step_index(self, z: float) -> int:
        """Index of the step boundary at ``z`` (must lie on the recorded range)."""
        k = int(round(z / self.dz))
        if k < 0 or k > self.n_steps:
            raise ContractError(f"z = {z} is outside the recorded trajectory [0, {self.distance}]")
        return k

    def nonlinear_end(self, k: int) -> np.ndarray:
        return self._stepper.nonlinear(self.midpoints[k])

    def node(self, k: int) -> np.ndarray:
        if k < 0 or k > self.n_steps:
            raise ContractError(f"step index {k} outside trajectory with {self.n_steps} steps")
        if k == 0:
            return self.initial
        return self._stepper.half_linear(self.nonlinear_end(k - 1))

    def node_field(self, k: int) -> Field:
        return Field(self.grid, self.node(k))

    def truncated(self, k: int) -> "TrajectoryStore":
        return TrajectoryStore(self.grid, self.params, self.scheme, self.initial,
                               self.midpoints[:k])


def energy(field: Field) -> float:
    return field.energy()


def propagate(field: Field, params: CgleParams, distance: float,
              scheme: StepScheme | None = None, record: bool = False):
    """Propagate ``field`` over ``distance``.

    Returns ``(final_field, trajectory)``; ``trajectory`` is None unless
    ``record`` is set.  The propagated distance is ``n_steps * dz`` with the
    step count rounded to nearest.
    """
    scheme = scheme or StepScheme()
    grid = field.grid
    n_steps = scheme.n_steps(distance)
    stepper = Stepper(grid, params, scheme)
    u = np.array(field.values, dtype=np.complex128)
    mids = np.empty((n_steps, grid.n_points), dtype=np.complex128) if record else None
    # overflow inside a blowing-up step is expected; the peak check below reports it
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n_steps):
            u, mid = stepper.step(u)
            if mids is not None:
                mids[k] = mid
            peak = np.max(np.abs(u))
            if not peak <= BLOWUP_AMPLITUDE:  # also catches NaN
                raise DivergenceError(f"field diverged at step {k} (max|U| = {peak:.3g})",
                                      step=k)
    traj = TrajectoryStore(grid, params, scheme, field.values, mids) if record else None
    return Field(grid, u), traj
