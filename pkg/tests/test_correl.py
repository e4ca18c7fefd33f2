import numpy as np
import pytest

from solcorr.cgle import NLSE_PARAMS, PAPER_PARAMS, StepScheme, propagate
from solcorr.correl import (
    SlotPartition,
    classify_slot_pairs,
    correlation_trace,
    eta_matrix,
    photon_number_functional,
    slot_covariance,
    slot_functionals,
    soliton_correlation,
)
from solcorr.errors import BoundStateInstability, ConfigError, ContractError, OrderingAmbiguity
from solcorr.grid import Field, make_grid
from solcorr.quantum import measure_covariance
from solcorr.states import detect_solitons, sech_pulse

DISTANCE = 0.3


def mirror(u):
    """U(-t) on the grid t_j = -T/2 + j dt."""
    return np.roll(u[::-1], 1)


@pytest.fixture(scope="module")
def pair_traj(cgle_pair):
    # the relaxed pair, resampled onto a coarser grid to keep the covariance sweeps cheap
    g = make_grid(256, 20.0)
    u0 = Field(g, cgle_pair[0].values[::2])
    _, traj = propagate(u0, PAPER_PARAMS, DISTANCE, StepScheme(1e-3), record=True)
    return traj


@pytest.fixture(scope="module")
def pair_report(pair_traj):
    slots = SlotPartition.equal(pair_traj.grid, 16)
    return correlation_trace(pair_traj, [0.0, 0.1, DISTANCE], slots=slots), slots


def test_partition_covers_window():
    g = make_grid(256, 20.0)
    p = SlotPartition.equal(g, 64)
    assert p.boundaries[0] == 0 and p.boundaries[-1] == 256 and p.n_slots == 64
    assert all(hi - lo == 4 for lo, hi in p.slots())
    span = SlotPartition.equal(g, 8, span=(-4.0, 4.0))
    assert abs(g.t[span.boundaries[0]] + 4.0) <= g.dt / 2
    assert abs(g.t[span.boundaries[-1] - 1] - 4.0) <= g.dt / 2
    with pytest.raises(ConfigError):
        SlotPartition.equal(g, 300)
    with pytest.raises(ContractError):
        SlotPartition((0, 5, 5, 10))


def test_whole_window_mean_and_zero_functional():
    g = make_grid(1024, 60.0)
    u = sech_pulse(g, 1.0, 1.0)
    f, mean = photon_number_functional(u, (0, g.n_points))
    assert mean == pytest.approx(2.0, abs=1e-6)
    assert np.array_equal(f.b, np.conj(f.a))
    zero, m0 = photon_number_functional(Field(g, np.zeros(g.n_points)), (0, 10))
    assert m0 == 0.0 and not np.any(zero.a) and not np.any(zero.b)
    with pytest.raises(ContractError):
        photon_number_functional(u, (10, 10))


def test_eta_vanishes_at_anchor_zero(pair_report):
    report, _ = pair_report
    assert np.max(np.abs(report.eta_at(0).eta)) < 1e-10
    assert abs(report.traces[(1, 2)][0]) < 1e-10


def test_eta_symmetric_and_bounded(pair_report):
    report, _ = pair_report
    for c in range(len(report.z_values)):
        eta = report.eta_at(c).eta
        assert np.array_equal(eta, eta.T)
        assert np.max(np.abs(eta)) <= 1 + 1e-9
    assert np.max(np.abs(report.eta_at(2).eta)) > 1e-3


def test_global_phase_invariance(pair_traj):
    g = pair_traj.grid
    slots = SlotPartition.equal(g, 16)
    base = correlation_trace(pair_traj, [DISTANCE], slots=slots)
    u0 = Field(g, pair_traj.initial * np.exp(1.234j))
    _, rotated_traj = propagate(u0, PAPER_PARAMS, DISTANCE, StepScheme(1e-3), record=True)
    rotated = correlation_trace(rotated_traj, [DISTANCE], slots=slots)
    assert np.max(np.abs(base.eta_at(0).eta - rotated.eta_at(0).eta)) < 1e-10
    assert base.C[(1, 2)] == pytest.approx(rotated.C[(1, 2)], abs=1e-10)


def test_slot_refinement_is_bilinear(pair_traj):
    g = pair_traj.grid
    u = pair_traj.node_field(pair_traj.n_steps)
    fine = SlotPartition((0, 40, 128, 180, 256))
    coarse = SlotPartition((0, 128, 256))
    res_f, means_f = slot_covariance(u, pair_traj, fine, DISTANCE)
    res_c, means_c = slot_covariance(u, pair_traj, coarse, DISTANCE)
    cf = res_f.covariance
    summed = np.array([[cf[:2, :2].sum(), cf[:2, 2:].sum()], [cf[2:, :2].sum(), cf[2:, 2:].sum()]])
    assert np.max(np.abs(summed - res_c.covariance)) < 1e-10 * np.max(np.abs(res_c.covariance))
    assert np.allclose(means_c, [means_f[:2].sum(), means_f[2:].sum()], rtol=1e-14)


def test_mirror_symmetry(pair_traj):
    g = pair_traj.grid
    n = g.n_points
    bounds = np.array([1, 17, 60, 100, 128, 140, 200, 256])
    slots = SlotPartition(tuple(bounds))
    mirrored_slots = SlotPartition(tuple(sorted(n + 1 - bounds)))
    base = correlation_trace(pair_traj, [DISTANCE], slots=slots)
    _, mtraj = propagate(Field(g, mirror(pair_traj.initial)), PAPER_PARAMS, DISTANCE,
                         StepScheme(1e-3), record=True)
    flipped = correlation_trace(mtraj, [DISTANCE], slots=mirrored_slots)
    a = base.eta_at(0).eta
    b = flipped.eta_at(0).eta[::-1, ::-1]
    assert np.max(np.abs(a - b)) < 1e-8
    assert base.C[(1, 2)] == pytest.approx(flipped.C[(1, 2)], abs=1e-8)


def test_denominator_modes():
    cov = np.array([[2.0, 0.3], [0.3, 1.5]])
    means = np.array([1.0, 1.0])
    full = eta_matrix(cov, means, "full").eta
    normal = eta_matrix(cov, means, "normal").eta
    assert full[0, 1] == pytest.approx(0.3 / np.sqrt(3.0))
    assert normal[0, 1] == pytest.approx(0.3 / np.sqrt(0.5))
    assert full[0, 0] == pytest.approx(0.5)
    with pytest.raises(ConfigError):
        eta_matrix(cov, means, "other")


def test_normal_ordering_ambiguity():
    with pytest.raises(OrderingAmbiguity):
        eta_matrix(np.array([[0.5, 0.0], [0.0, 2.0]]), [1.0, 1.0], "normal")
    coherent = eta_matrix(np.diag([1.0, 2.0]), [1.0, 2.0], "normal")
    assert coherent.masked.all() and not np.any(coherent.eta)


def test_empty_slots_are_masked():
    res = eta_matrix(np.diag([1.0, 0.0, 3.0]), [1.0, 0.0, 3.0])
    assert res.masked.tolist() == [False, True, False]
    assert not np.any(res.eta[1]) and not np.any(res.eta[:, 1])


def test_segmentation_mismatch(pair_traj):
    seg = detect_solitons(pair_traj.node_field(0))
    with pytest.raises(ContractError):
        soliton_correlation(seg, np.eye(3), np.ones(3))


def test_checkpoint_validation(pair_traj):
    with pytest.raises(ContractError):
        correlation_trace(pair_traj, [DISTANCE + 1.0])
    with pytest.raises(ContractError):
        correlation_trace(pair_traj, [])
    with pytest.raises(ConfigError):
        correlation_trace(pair_traj, [0.1], mode="bogus")


def test_soliton_count_change_is_instability():
    g = make_grid(128, 20.0)
    # a narrow weak pulse disperses below the detection threshold
    u = sech_pulse(g, 1.0, 1.0, -4.0).values + sech_pulse(g, 0.5, 0.25, 4.0).values
    _, traj = propagate(Field(g, u), NLSE_PARAMS, 0.5, StepScheme(1e-3), record=True)
    assert detect_solitons(traj.node_field(0)).n == 2
    with pytest.raises(BoundStateInstability):
        correlation_trace(traj, [0.0, 0.5])


def test_soliton_trace_matches_direct_measurement(pair_traj, pair_report):
    report, _ = pair_report
    u = pair_traj.node_field(pair_traj.n_steps)
    seg = detect_solitons(u)
    fs, means = slot_functionals(u, seg.segments(), DISTANCE)
    cov = measure_covariance(fs, pair_traj).covariance.real
    assert report.C[(1, 2)] == pytest.approx(soliton_correlation(seg, cov, means)[(1, 2)], abs=1e-14)
    assert report.n_solitons == 2 and max(report.residuals) < 1e-8


def test_classify_slot_pairs():
    g = make_grid(64, 16.0)
    u = sech_pulse(g, 1.0, 0.7, -3.0).values + sech_pulse(g, 1.0, 0.7, 3.0).values
    seg = detect_solitons(Field(g, u))
    slots = SlotPartition.equal(g, 8)
    intra, inter = classify_slot_pairs(slots, g, seg)
    assert not np.any(intra & inter) and not np.any(np.diag(intra | inter))
    assert intra[0, 3] and inter[0, 4] and inter[3, 4] and intra[4, 7]
    assert intra.sum() == 2 * 4 * 3 and inter.sum() == 2 * 4 * 4
    masked = np.zeros(8, bool)
    masked[0] = True
    intra_m, inter_m = classify_slot_pairs(slots, g, seg, masked)
    assert not intra_m[0].any() and not inter_m[:, 0].any()
