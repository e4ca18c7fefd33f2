"""Linearized quantum fluctuations around a recorded classical trajectory.

A perturbation is carried in the doubled representation ``(x, y)`` standing
for ``(u, u^dagger)``; a measurement functional ``(a, b)`` stands for

    O = sum_t dt [a(t) u(t) + b(t) u^dagger(t)]

and pairs with perturbations through the bilinear form ``sum dt (a x + b y)``.
The backward step is the transpose of the forward step under that pairing.

Discrete modes obey ``[u_j, u_k^dagger] = delta_jk / dt``.  Noise is injected
channel by channel (gain reservoirs fully inverted, loss reservoirs in the
ground state) and is normalised so that every step preserves the bosonic
commutators exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cgle import CgleParams, StepScheme, Stepper, TrajectoryStore, linear_multiplier, rk4_stages
from .errors import ConfigError, ContractError
from .grid import Field, TimeGrid

NOISE_CHANNELS = ("linear", "filter", "gain", "quintic")


@dataclass(frozen=True)
class LinearizedGenerator:
    p1_local: np.ndarray
    p1_spectral: np.ndarray
    p2_local: np.ndarray


def linearized_generator(u0: np.ndarray, params: CgleParams, grid: TimeGrid) -> LinearizedGenerator:
    """Local and spectral parts of the operators acting on u and u^dagger.

    ``p1_local`` includes the constant linear gain/loss.
    """
    u0 = np.asarray(u0)
    intensity = np.abs(u0) ** 2
    p1 = (params.delta + (2j + 2 * params.epsilon) * intensity
          + (3 * params.mu + 3j * params.nu) * intensity**2)
    p2 = (1j + params.epsilon) * u0**2 + (2 * params.mu + 2j * params.nu) * u0**3 * u0.conj()
    w2 = grid.omega**2
    return LinearizedGenerator(p1, -0.5j * params.D * w2 - params.beta * w2, p2)


@dataclass(frozen=True)
class NoiseDensities:
    gain: np.ndarray
    loss_local: np.ndarray
    loss_spectral: np.ndarray


def noise_densities(u0: Field | np.ndarray, params: CgleParams, grid: TimeGrid | None = None,
                    channels=NOISE_CHANNELS) -> NoiseDensities:
    """Continuum noise densities from the real part of the u-u^dagger generator.

    A term whose real contribution is negative is a loss (ground-state
    reservoir, <n n^dagger> = -2 Re P1); a positive one is a gain (fully
    inverted reservoir, <n^dagger n> = 2 Re P1).
    """
    if isinstance(u0, Field):
        grid = u0.grid
        u0 = u0.values
    intensity = np.abs(np.asarray(u0)) ** 2
    gain = np.zeros_like(intensity)
    loss = np.zeros_like(intensity)
    terms = {
        "linear": 2 * params.delta * np.ones_like(intensity),
        "gain": 4 * params.epsilon * intensity,
        "quintic": 6 * params.mu * intensity**2,
    }
    for name, rate in terms.items():
        if name not in channels:
            continue
        gain += np.maximum(rate, 0.0)
        loss += np.maximum(-rate, 0.0)
    spectral = np.zeros(intensity.shape)
    if grid is not None and "filter" in channels:
        spectral = 2 * params.beta * grid.omega**2
    return NoiseDensities(gain, loss, spectral)


def _check_channels(channels):
    channels = tuple(channels)
    unknown = set(channels) - set(NOISE_CHANNELS)
    if unknown:
        raise ConfigError(f"unknown noise channels: {sorted(unknown)}")
    return channels


def nonlinear_jacobian(u: np.ndarray, params: CgleParams, dz: float, substeps: int = 1) -> np.ndarray:
    """Exact tangent map of the RK4 nonlinear stage, one 2x2 block per grid point.

    Returns an array of shape (n, 2, 2) acting on (x, y) = (du, du*).
    """
    h = dz / substeps
    n = u.shape[-1]
    eye = np.broadcast_to(np.eye(2, dtype=np.complex128), (n, 2, 2))
    total = np.array(eye)
    for _ in range(substeps):
        stages, u_next = rk4_stages(u, params, h)
        ks = [_stage_matrix(v, params) for v in stages]
        dk1 = ks[0]
        dk2 = ks[1] @ (eye + 0.5 * h * dk1)
        dk3 = ks[2] @ (eye + 0.5 * h * dk2)
        dk4 = ks[3] @ (eye + h * dk3)
        step = eye + (h / 6.0) * (dk1 + 2 * dk2 + 2 * dk3 + dk4)
        total = step @ total
        u = u_next
    return total


def _stage_matrix(v: np.ndarray, params: CgleParams) -> np.ndarray:
    intensity = np.abs(v) ** 2
    c3 = 1j + params.epsilon
    c5 = params.mu + 1j * params.nu
    d_u = 2 * c3 * intensity + 3 * c5 * intensity**2
    d_uc = c3 * v**2 + 2 * c5 * v**3 * v.conj()
    out = np.empty(v.shape + (2, 2), dtype=np.complex128)
    out[..., 0, 0] = d_u
    out[..., 0, 1] = d_uc
    out[..., 1, 0] = d_uc.conj()
    out[..., 1, 1] = d_u.conj()
    return out


class LinearizedStepper:
    """Forward/backward doubled-space maps and per-step noise for one trajectory."""

    def __init__(self, grid: TimeGrid, params: CgleParams, scheme: StepScheme,
                 channels=NOISE_CHANNELS):
        self.grid = grid
        self.params = params
        self.scheme = scheme
        self.channels = _check_channels(channels)
        self.classical = Stepper(grid, params, scheme)
        half = linear_multiplier(params, grid, 0.5 * scheme.dz)
        neg = grid.neg_index()
        # x-channel uses m(w); y-channel uses the conjugate operator, m*(-w).
        self.mult_x = half
        self.mult_y = half[neg].conj()
        # transposes (circulant kernel reversed)
        self.mult_x_t = half[neg]
        self.mult_y_t = half.conj()
        self.spectral_loss, self.spectral_gain = self._linear_noise_symbols()
        self._local_dissipative = params.epsilon != 0 or params.mu != 0
        self._local_exact = all(c in self.channels for c in ("gain", "quintic"))

    def _linear_noise_symbols(self):
        h = 0.5 * self.scheme.dz
        delta = self.params.delta if "linear" in self.channels else 0.0
        beta = self.params.beta if "filter" in self.channels else 0.0
        g = np.exp(2 * delta * h)
        f = np.exp(-2 * beta * self.grid.omega**2 * h)
        if delta <= 0:
            return 1.0 - g * f, np.zeros_like(f)
        # gain then filter: commutator 1 - g f is split as (1 - f) - f (g - 1)
        return 1.0 - f, f * (g - 1.0)

    # --- deterministic maps -------------------------------------------------

    def _spectral(self, values, mult):
        g = self.grid
        return g.to_time(g.to_frequency(values) * mult)

    def half_linear(self, x, y):
        return self._spectral(x, self.mult_x), self._spectral(y, self.mult_y)

    def half_linear_t(self, a, b):
        return self._spectral(a, self.mult_x_t), self._spectral(b, self.mult_y_t)

    def jacobian(self, mid: np.ndarray) -> np.ndarray:
        return nonlinear_jacobian(mid, self.params, self.scheme.dz, self.scheme.substeps)

    @staticmethod
    def apply_local(jac, x, y):
        return jac[:, 0, 0] * x + jac[:, 0, 1] * y, jac[:, 1, 0] * x + jac[:, 1, 1] * y

    @staticmethod
    def apply_local_t(jac, a, b):
        return jac[:, 0, 0] * a + jac[:, 1, 0] * b, jac[:, 0, 1] * a + jac[:, 1, 1] * b

    def forward(self, x, y, mid):
        x, y = self.half_linear(x, y)
        x, y = self.apply_local(self.jacobian(mid), x, y)
        return self.half_linear(x, y)

    def backward(self, a, b, mid):
        a, b = self.half_linear_t(a, b)
        a, b = self.apply_local_t(self.jacobian(mid), a, b)
        return self.half_linear_t(a, b)

    # --- noise ---------------------------------------------------------------

    def local_noise(self, mid: np.ndarray, jac: np.ndarray):
        """Per-point (loss, gain) noise weights for each half of the nonlinear stage.

        Weights are dimensionless per-mode second moments: <xi xi^dagger> = loss/dt,
        <xi^dagger xi> = gain/dt, injected once before and once after the stage.
        """
        n = mid.shape[-1]
        if not self._local_dissipative:
            return np.zeros(n), np.zeros(n)
        end = self.classical.nonlinear(mid)
        dz = self.scheme.dz
        # the constant linear term is carried by the spectral channel
        local = [c for c in self.channels if c in ("gain", "quintic")]
        d0 = noise_densities(mid, self.params, channels=local)
        d1 = noise_densities(end, self.params, channels=local)
        loss = 0.5 * dz * (d0.loss_local + d1.loss_local)
        gain = 0.5 * dz * (d0.gain + d1.gain)
        if self._local_exact:
            kappa = np.abs(jac[:, 0, 0]) ** 2 - np.abs(jac[:, 0, 1]) ** 2
            target = 2.0 * (1.0 - kappa) / (1.0 + kappa)
            defect = target - (loss - gain)
            loss = loss + np.maximum(defect, 0.0)
            gain = gain + np.maximum(-defect, 0.0)
        return 0.5 * loss, 0.5 * gain


class _GroupAccumulator:
    """Second moments for groups of functionals back-propagated as one batch.

    Only pairs inside a group (functionals sharing an anchor) are accumulated.
    """

    def __init__(self, grid: TimeGrid, slices):
        self.grid = grid
        self.slices = slices
        self.cov = [np.zeros((sl.stop - sl.start,) * 2, dtype=np.complex128) for sl in slices]
        self.active = 0  # groups [0, active) are currently in the batch

    def _add(self, left, right):
        dt = self.grid.dt
        for g in range(self.active):
            sl = self.slices[g]
            self.cov[g] += dt * (left[sl] @ right[sl].T)

    def local(self, a, b, loss, gain):
        if self.active == 0:
            return
        if np.any(loss):
            self._add(a * loss, b)
        if np.any(gain):
            self._add(b * gain, a)

    def spectral(self, a, b, loss_sym, gain_sym):
        if self.active == 0:
            return
        g = self.grid
        if np.any(loss_sym):
            self._add(a, g.to_time(g.to_frequency(b) * loss_sym))
        if np.any(gain_sym):
            self._add(b, g.to_time(g.to_frequency(a) * gain_sym))


@dataclass
class CovarianceResult:
    """Symmetrised second moments <{O_i, O_j}>/2 of zero-mean fluctuation operators."""

    covariance: np.ndarray
    raw: np.ndarray
    antisymmetric_residual: float
    z_anchor: float
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True)
class DoubledFunctional:
    a: np.ndarray
    b: np.ndarray
    z_anchor: float

    def is_hermitian(self, tol: float = 0.0) -> bool:
        return bool(np.max(np.abs(self.b - self.a.conj()), initial=0.0) <= tol)


def _stack(functionals):
    if not functionals:
        raise ContractError("no functionals given")
    z = functionals[0].z_anchor
    for f in functionals:
        if abs(f.z_anchor - z) > 1e-12 * max(1.0, abs(z)):
            raise ContractError("functionals are anchored at different z")
    a = np.array([f.a for f in functionals], dtype=np.complex128)
    b = np.array([f.b for f in functionals], dtype=np.complex128)
    return a, b, z


def _finish(raw: np.ndarray, z_anchor: float, **diagnostics) -> CovarianceResult:
    sym = 0.5 * (raw + raw.T)
    anti = 0.5 * (raw - raw.T)
    scale = max(np.linalg.norm(sym), np.finfo(float).tiny)
    residual = float(np.linalg.norm(anti) / scale)
    return CovarianceResult(sym.real if np.allclose(sym.imag, 0, atol=1e-12 * scale) else sym,
                            raw, residual, z_anchor, diagnostics)


def linearized_forward_step(x, y, mid, params: CgleParams, grid: TimeGrid, dz: float,
                            substeps: int = 1):
    """Deterministic doubled-space step around the stored field ``mid``."""
    return LinearizedStepper(grid, params, StepScheme(dz, substeps)).forward(x, y, mid)


def backward_step(f: DoubledFunctional, mid, params: CgleParams, grid: TimeGrid, dz: float,
                  substeps: int = 1) -> DoubledFunctional:
    a, b = LinearizedStepper(grid, params, StepScheme(dz, substeps)).backward(f.a, f.b, mid)
    return DoubledFunctional(a, b, f.z_anchor - dz)


def measure_covariance(functionals, trajectory: TrajectoryStore, params: CgleParams | None = None,
                       channels=NOISE_CHANNELS) -> CovarianceResult:
    """<O_i O_j> at the common anchor by back-propagating every functional to z = 0.

    Noise contributions are collected step by step against the functional
    evaluated just above each injection point; the coherent initial state adds
    ``sum dt a_i b_j``.
    """
    return measure_covariance_groups([functionals], trajectory, params, channels)[0]


def measure_covariance_groups(groups, trajectory: TrajectoryStore, params: CgleParams | None = None,
                              channels=NOISE_CHANNELS) -> list:
    """``measure_covariance`` for several anchors in a single backward sweep.

    Each group is a list of functionals sharing one anchor; the result list
    follows the input order.
    """
    params = params or trajectory.params
    if params != trajectory.params:
        raise ContractError("parameters differ from those used to record the trajectory")
    grid = trajectory.grid
    stacked = []
    for functionals in groups:
        a, b, z = _stack(functionals)
        if a.shape[1] != grid.n_points:
            raise ContractError("functional length does not match the trajectory grid")
        stacked.append((trajectory.step_index(z), z, a, b))
    order = sorted(range(len(stacked)), key=lambda i: -stacked[i][0])
    sizes = [stacked[i][2].shape[0] for i in order]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    slices = [slice(int(offsets[g]), int(offsets[g + 1])) for g in range(len(order))]
    a_all = np.concatenate([stacked[i][2] for i in order])
    b_all = np.concatenate([stacked[i][3] for i in order])

    lin = LinearizedStepper(grid, params, trajectory.scheme, channels)
    acc = _GroupAccumulator(grid, slices)
    k_top = stacked[order[0]][0]
    # functionals join the batch once the sweep reaches their anchor
    a = np.zeros_like(a_all)
    b = np.zeros_like(b_all)

    def admit(k):
        while acc.active < len(order) and stacked[order[acc.active]][0] == k:
            sl = slices[acc.active]
            a[sl], b[sl] = a_all[sl], b_all[sl]
            acc.active += 1

    for k in range(k_top, 0, -1):
        admit(k)
        n_live = slices[acc.active - 1].stop
        la, lb = a[:n_live], b[:n_live]
        mid = trajectory.midpoints[k - 1]
        acc.spectral(la, lb, lin.spectral_loss, lin.spectral_gain)
        la, lb = lin.half_linear_t(la, lb)
        jac = lin.jacobian(mid)
        loss, gain = lin.local_noise(mid, jac)
        acc.local(la, lb, loss, gain)
        la, lb = lin.apply_local_t(jac, la, lb)
        acc.local(la, lb, loss, gain)
        acc.spectral(la, lb, lin.spectral_loss, lin.spectral_gain)
        a[:n_live], b[:n_live] = lin.half_linear_t(la, lb)
    admit(0)
    for g, sl in enumerate(slices):
        acc.cov[g] += grid.dt * (a[sl] @ b[sl].T)

    results = [None] * len(groups)
    for g, i in enumerate(order):
        k, z, _, _ = stacked[i]
        results[i] = _finish(acc.cov[g], z, steps=k)
    return results


def forward_covariance_oracle(trajectory: TrajectoryStore, params: CgleParams | None,
                              functionals, channels=NOISE_CHANNELS, max_points: int = 256,
                              return_moments: bool = False):
    """Dense forward propagation of the full doubled-space second-moment matrix.

    ``S = <w w^dagger>`` with ``w = (u, u^dagger)`` is stepped as
    ``S -> T S T^dagger + noise`` using dense sub-step matrices built from an
    explicit DFT matrix, then contracted with the functionals at the anchor.
    """
    params = params or trajectory.params
    grid = trajectory.grid
    n = grid.n_points
    if n > max_points:
        raise ConfigError(f"oracle limited to {max_points} points (got {n}); raise max_points")
    a, b, z_anchor = _stack(functionals)
    k_anchor = trajectory.step_index(z_anchor)
    lin = LinearizedStepper(grid, params, trajectory.scheme, channels)
    dt = grid.dt

    # explicit DFT: F[k, j] = exp(-i w_k t_j) dt, inverse via its exact inverse
    dft = np.exp(-1j * np.outer(grid.omega, grid.t)) * dt
    idft = np.linalg.inv(dft)

    def circulant(symbol):
        return idft @ (symbol[:, None] * dft)

    zero = np.zeros((n, n), dtype=np.complex128)
    lin_dense = np.block([[circulant(lin.mult_x), zero], [zero, circulant(lin.mult_y)]])
    spec_noise = np.block([[circulant(lin.spectral_loss), zero],
                           [zero, circulant(lin.spectral_gain).T]]) / dt

    s = np.block([[np.eye(n) / dt, zero], [zero, zero]]).astype(np.complex128)
    for k in range(k_anchor):
        mid = trajectory.midpoints[k]
        jac = lin.jacobian(mid)
        loss, gain = lin.local_noise(mid, jac)
        local_noise = np.diag(np.concatenate([loss, gain]) / dt)
        jac_dense = np.block([[np.diag(jac[:, 0, 0]), np.diag(jac[:, 0, 1])],
                              [np.diag(jac[:, 1, 0]), np.diag(jac[:, 1, 1])]])
        s = lin_dense @ s @ lin_dense.conj().T + spec_noise
        s = s + local_noise
        s = jac_dense @ s @ jac_dense.conj().T + local_noise
        s = lin_dense @ s @ lin_dense.conj().T + spec_noise
    left = np.concatenate([a, b], axis=1)
    right = np.concatenate([b, a], axis=1)
    raw = dt * dt * (left @ s @ right.T)
    result = _finish(raw, z_anchor, steps=k_anchor)
    if return_moments:
        return result, s
    return result
