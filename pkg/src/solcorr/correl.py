"""Photon-number correlation maps and per-soliton correlation parameters."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .cgle import TrajectoryStore
from .errors import BoundStateInstability, ConfigError, ContractError, OrderingAmbiguity
from .grid import Field, TimeGrid
from .quantum import NOISE_CHANNELS, DoubledFunctional, measure_covariance_groups
from .states import SolitonSegmentation, detect_solitons

DENOMINATOR_MODES = ("full", "normal")
MASK_LEVEL = 1e-12
NORMAL_VARIANCE_FLOOR = 1e-9


@dataclass(frozen=True)
class SlotPartition:
    boundaries: tuple

    def __post_init__(self):
        b = tuple(int(x) for x in self.boundaries)
        if len(b) < 2 or any(hi <= lo for lo, hi in zip(b, b[1:])):
            raise ContractError(f"slot boundaries must be strictly increasing, got {b}")
        object.__setattr__(self, "boundaries", b)

    @classmethod
    def equal(cls, grid: TimeGrid, n_slots: int = 64, span=None) -> "SlotPartition":
        """``n_slots`` equal slots over the window, or over ``span = (t0, t1)``."""
        if span is None:
            lo, hi = 0, grid.n_points
        else:
            t0, t1 = span
            if not t0 < t1:
                raise ConfigError(f"slot span must be increasing, got {span}")
            lo = int(np.searchsorted(grid.t, t0 - 0.5 * grid.dt))
            hi = int(np.searchsorted(grid.t, t1 + 0.5 * grid.dt))
        if not 1 <= n_slots <= hi - lo:
            raise ConfigError(f"n_slots must lie in [1, {hi - lo}] for this span, got {n_slots}")
        edges = np.round(np.linspace(lo, hi, n_slots + 1)).astype(int)
        return cls(tuple(edges))

    @property
    def n_slots(self) -> int:
        return len(self.boundaries) - 1

    def slots(self) -> list:
        return list(zip(self.boundaries[:-1], self.boundaries[1:]))

    def centers(self, grid: TimeGrid) -> np.ndarray:
        return np.array([0.5 * (grid.t[lo] + grid.t[hi - 1]) for lo, hi in self.slots()])


def photon_number_functional(u0: Field, slot, z_anchor: float = 0.0):
    """Functional for the photon-number fluctuation of one time slot.

    Returns ``(functional, mean)`` with ``a = conj(U0) chi``, ``b = U0 chi``
    and ``mean = sum_slot |U0|^2 dt``.
    """
    lo, hi = slot
    n = u0.grid.n_points
    if not 0 <= lo < hi <= n:
        raise ContractError(f"slot {slot} is empty or outside the grid of {n} points")
    chi = np.zeros(n)
    chi[lo:hi] = 1.0
    a = u0.values.conj() * chi
    b = u0.values * chi
    mean = float(np.sum(np.abs(u0.values[lo:hi]) ** 2) * u0.grid.dt)
    return DoubledFunctional(a, b, z_anchor), mean


def slot_functionals(u0: Field, slots, z_anchor: float = 0.0):
    pairs = [photon_number_functional(u0, s, z_anchor) for s in slots]
    return [p[0] for p in pairs], np.array([p[1] for p in pairs])


@dataclass
class EtaResult:
    eta: np.ndarray
    numerator: np.ndarray
    masked: np.ndarray
    mode: str


def _normal_ordered(cov: np.ndarray, means: np.ndarray) -> np.ndarray:
    return np.asarray(cov, dtype=float) - np.diag(means)


def eta_matrix(cov: np.ndarray, means, mode: str = "full", mask_level: float = MASK_LEVEL) -> EtaResult:
    """Normally-ordered correlation coefficients between photon-number slots.

    The numerator removes shot noise (the slot mean) from the diagonal of the
    symmetrised covariance.  ``full`` divides by the shot-inclusive
    variances; ``normal`` by the normally-ordered ones (a negative one is ambiguous).
    """
    if mode not in DENOMINATOR_MODES:
        raise ConfigError(f"denominator mode must be one of {DENOMINATOR_MODES}, got {mode!r}")
    cov = np.asarray(cov)
    if np.iscomplexobj(cov):
        cov = cov.real
    means = np.asarray(means, dtype=float)
    if cov.shape != (means.size, means.size):
        raise ContractError("covariance and slot means disagree in size")
    numerator = _normal_ordered(cov, means)
    masked = means < mask_level * max(means.max(), 0.0) if means.size else np.zeros(0, bool)
    masked |= means <= 0
    live = ~masked
    if mode == "full":
        var = np.diag(cov).copy()
    else:
        var = np.diag(numerator).copy()
        # a coherent slot has zero normally-ordered variance: coefficient undefined, reported as 0
        vanishing = live & (np.abs(var) <= NORMAL_VARIANCE_FLOOR * np.maximum(means, 1e-300))
        bad = np.flatnonzero(live & ~vanishing & (var < 0))
        if bad.size:
            raise OrderingAmbiguity(
                f"normally-ordered variance is negative in slots {bad.tolist()}")
        masked = masked | vanishing
    var[masked] = 1.0
    eta = numerator / np.sqrt(np.outer(var, var))
    eta[masked, :] = 0.0
    eta[:, masked] = 0.0
    eta = 0.5 * (eta + eta.T)
    return EtaResult(eta, numerator, masked, mode)


def soliton_correlation(segmentation: SolitonSegmentation, cov: np.ndarray, means,
                        mode: str = "full") -> dict:
    """C_ij for every pair of solitons, numbered from 1 left to right."""
    means = np.asarray(means, dtype=float)
    if segmentation.n != means.size or np.shape(cov) != (means.size, means.size):
        raise ContractError(
            f"segmentation has {segmentation.n} solitons but covariance is {np.shape(cov)}")
    eta = eta_matrix(cov, means, mode, mask_level=0.0).eta
    return {(i + 1, j + 1): float(eta[i, j])
            for i, j in itertools.combinations(range(means.size), 2)}


def soliton_functionals(u0: Field, segmentation: SolitonSegmentation, z_anchor: float):
    return slot_functionals(u0, segmentation.segments(), z_anchor)


@dataclass
class CorrelationReport:
    """Covariances at each checkpoint and the C_ij traces derived from them."""

    z_values: np.ndarray
    segmentations: list
    soliton_cov: list
    soliton_means: list
    mode: str = "full"
    slot_cov: list = field(default_factory=list)
    slot_means: list = field(default_factory=list)
    slot_centers: np.ndarray | None = None
    residuals: list = field(default_factory=list)

    @property
    def n_solitons(self) -> int:
        return self.segmentations[0].n

    def traces_for(self, mode: str) -> dict:
        pairs = list(itertools.combinations(range(1, self.n_solitons + 1), 2))
        out = {p: np.zeros(len(self.z_values)) for p in pairs}
        for c, (seg, cov, means) in enumerate(zip(self.segmentations, self.soliton_cov,
                                                  self.soliton_means)):
            for p, v in soliton_correlation(seg, cov, means, mode).items():
                out[p][c] = v
        return out

    @property
    def traces(self) -> dict:
        return self.traces_for(self.mode)

    @property
    def C(self) -> dict:
        return {p: float(v[-1]) for p, v in self.traces.items()}

    def eta_at(self, index: int, mode: str | None = None) -> EtaResult:
        if not self.slot_cov:
            raise ContractError("no slot partition was measured")
        return eta_matrix(self.slot_cov[index], self.slot_means[index], mode or self.mode)


def correlation_trace(trajectory: TrajectoryStore, checkpoints, *, threshold: float = 0.3,
                      mode: str = "full", channels=NOISE_CHANNELS,
                      slots: SlotPartition | None = None) -> CorrelationReport:
    """Per-soliton (and optionally per-slot) covariances at each checkpoint.

    Solitons are re-detected at every anchor; a change in their number is an
    instability.  All anchors share one backward sweep.
    """
    if mode not in DENOMINATOR_MODES:
        raise ConfigError(f"denominator mode must be one of {DENOMINATOR_MODES}, got {mode!r}")
    grid = trajectory.grid
    ks = []
    for z in checkpoints:
        if z < -1e-12 or z > trajectory.distance + 0.5 * trajectory.dz:
            raise ContractError(f"checkpoint z = {z} lies outside [0, {trajectory.distance}]")
        ks.append(trajectory.step_index(z))
    if not ks:
        raise ContractError("no checkpoints given")
    zs = np.array([k * trajectory.dz for k in ks])

    groups, seg_list, soliton_means, slot_means = [], [], [], []
    n_solitons = None
    for k, z in zip(ks, zs):
        u = trajectory.node_field(k)
        seg = detect_solitons(u, threshold)
        if n_solitons is None:
            n_solitons = seg.n
        elif seg.n != n_solitons:
            raise BoundStateInstability(
                f"soliton count changed from {n_solitons} to {seg.n} at z = {z:g}")
        fs, means = soliton_functionals(u, seg, z)
        seg_list.append(seg)
        soliton_means.append(means)
        groups.append(fs)
        if slots is not None:
            sfs, smeans = slot_functionals(u, slots.slots(), z)
            groups.append(sfs)
            slot_means.append(smeans)
    results = measure_covariance_groups(groups, trajectory, channels=channels)

    step = 2 if slots is not None else 1
    sol = [results[step * c] for c in range(len(ks))]
    report = CorrelationReport(zs, seg_list, [r.covariance.real for r in sol], soliton_means,
                               mode=mode, residuals=[r.antisymmetric_residual for r in sol])
    if slots is not None:
        sl = [results[step * c + 1] for c in range(len(ks))]
        report.slot_cov = [r.covariance.real for r in sl]
        report.slot_means = slot_means
        report.slot_centers = slots.centers(grid)
        report.residuals = [max(a, r.antisymmetric_residual)
                            for a, r in zip(report.residuals, sl)]
    return report


def classify_slot_pairs(slots: SlotPartition, grid: TimeGrid, segmentation: SolitonSegmentation,
                        masked=None):
    """Boolean (intra, inter) masks over slot pairs i != j.

    A slot belongs to the soliton whose segment contains its centre; masked
    slots are excluded from both sets.
    """
    owner = np.empty(slots.n_slots, dtype=int)
    bounds = np.asarray(segmentation.boundaries)
    for s, (lo, hi) in enumerate(slots.slots()):
        mid = (lo + hi - 1) // 2
        owner[s] = int(np.searchsorted(bounds, mid, side="right")) - 1
    owner = np.clip(owner, 0, segmentation.n - 1)
    live = np.ones(slots.n_slots, bool) if masked is None else ~np.asarray(masked)
    both = np.outer(live, live) & ~np.eye(slots.n_slots, dtype=bool)
    same = owner[:, None] == owner[None, :]
    return both & same, both & ~same


def slot_covariance(u_anchor: Field, trajectory: TrajectoryStore, slots: SlotPartition,
                    z_anchor: float, channels=NOISE_CHANNELS):
    """Covariance and means of photon-number fluctuations over a slot partition."""
    fs, means = slot_functionals(u_anchor, slots.slots(), z_anchor)
    res = measure_covariance_groups([fs], trajectory, channels=channels)[0]
    return res, means
