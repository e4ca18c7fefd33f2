"""Uniform periodic time grid and the spectral transform convention.

The forward transform carries the time step so that it approximates the
continuous Fourier integral::

    F(w_k) = sum_j U(t_j) exp(-i w_k t_j) dt

with ``t_j = -T/2 + j dt``.  Spectra are stored in FFT order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError


@dataclass(frozen=True)
class TimeGrid:
    n_points: int
    t_window: float
    dt: float = field(init=False)
    t: np.ndarray = field(init=False, repr=False, compare=False)
    omega: np.ndarray = field(init=False, repr=False, compare=False)
    _phase: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        n, window = self.n_points, self.t_window
        dt = window / n
        t = -0.5 * window + dt * np.arange(n)
        k = np.fft.fftfreq(n, d=1.0 / n)  # signed integers in transform order
        omega = 2.0 * np.pi * k / window
        # exp(-i w_k t_0) = (-1)^k for t_0 = -T/2
        phase = np.where(k.astype(np.int64) % 2 == 0, 1.0, -1.0)
        for name, value in (("dt", dt), ("t", t), ("omega", omega), ("_phase", phase)):
            if isinstance(value, np.ndarray):
                value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def d_omega(self) -> float:
        return 2.0 * np.pi / self.t_window

    @property
    def center_index(self) -> int:
        return self.n_points // 2

    def neg_index(self) -> np.ndarray:
        """Index map k -> -k (mod n) in transform order."""
        return (-np.arange(self.n_points)) % self.n_points

    def to_frequency(self, values: np.ndarray) -> np.ndarray:
        values = self._check(values)
        return np.fft.fft(values, axis=-1) * (self._phase * self.dt)

    def to_time(self, spectrum: np.ndarray) -> np.ndarray:
        spectrum = self._check(spectrum)
        return np.fft.ifft(spectrum * self._phase, axis=-1) / self.dt

    def second_derivative(self, values: np.ndarray) -> np.ndarray:
        """Spectral d^2/dt^2, exact for band-limited periodic fields."""
        return self.to_time(-(self.omega**2) * self.to_frequency(values))

    def shift(self, values: np.ndarray, tau: float) -> np.ndarray:
        """Return ``U(t - tau)`` via a spectral phase ramp."""
        return self.to_time(self.to_frequency(values) * np.exp(-1j * self.omega * tau))

    def integrate(self, values: np.ndarray) -> complex:
        return np.sum(values, axis=-1) * self.dt

    def _check(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values)
        if values.shape[-1] != self.n_points:
            raise ContractError(
                f"array length {values.shape[-1]} does not match grid size {self.n_points}"
            )
        return values


def make_grid(n_points: int, t_window: float) -> TimeGrid:
    """Build a grid; ``n_points`` must be a power of two no smaller than 16."""
    if isinstance(n_points, bool) or int(n_points) != n_points:
        raise ConfigError(f"n_points must be an integer, got {n_points!r}")
    n_points = int(n_points)
    if n_points < 16 or n_points & (n_points - 1):
        raise ConfigError(f"n_points must be a power of two >= 16, got {n_points}")
    if not np.isfinite(t_window) or t_window <= 0:
        raise ConfigError(f"t_window must be positive, got {t_window!r}")
    return TimeGrid(n_points, float(t_window))


@dataclass(frozen=True)
class Field:
    """Complex envelope samples on a grid."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.complex128)
        if values.shape != (self.grid.n_points,):
            raise ContractError(
                f"field has shape {values.shape}, expected ({self.grid.n_points},)"
            )
        if not np.all(np.isfinite(values)):
            raise ContractError("field contains non-finite samples")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def abs(self) -> np.ndarray:
        return np.abs(self.values)

    def energy(self) -> float:
        return float(np.sum(np.abs(self.values) ** 2) * self.grid.dt)

    def with_values(self, values: np.ndarray) -> "Field":
        return Field(self.grid, values)


def to_frequency(field_: Field) -> np.ndarray:
    return field_.grid.to_frequency(field_.values)


def to_time(grid: TimeGrid, spectrum: np.ndarray) -> Field:
    return Field(grid, grid.to_time(spectrum))
