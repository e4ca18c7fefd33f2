"""Pipelines: relax -> propagate -> correlate, the figure recipes and parameter sweeps."""

from __future__ import annotations

import functools
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .cgle import NLSE_PARAMS, PAPER_PARAMS, CgleParams, StepScheme, propagate
from .config import GridConfig, MeasurementConfig, RunConfig, StateConfig, validate
from .correl import DENOMINATOR_MODES, CorrelationReport, SlotPartition, correlation_trace
from .errors import BoundStateInstability, ConfigError, ContractError, OrderingAmbiguity, SolcorrError
from .grid import Field, TimeGrid
from .states import (
    BoundStateSpec,
    compose_bound_state,
    detect_solitons,
    relax_bound_state,
    relax_single_soliton,
    sech_pulse,
)

log = logging.getLogger(__name__)

PLATEAU_TOLERANCE = 0.02
FIGURES = ("fig1a", "fig1b", "fig2", "fig3")


class Timer:
    def __init__(self):
        self.phases: dict[str, float] = {}

    def phase(self, name: str):
        timer = self

        class _Ctx:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                timer.phases[name] = timer.phases.get(name, 0.0) + time.perf_counter() - self.t0

        return _Ctx()


# --- state preparation ------------------------------------------------------------------


@functools.lru_cache(maxsize=8)
def _single_soliton(params: CgleParams, grid: TimeGrid, scheme: StepScheme, amplitude: float,
                    width: float, max_distance: float, tolerance: float, transient: float):
    return relax_single_soliton(params, grid, amplitude, width, scheme, max_distance,
                                tolerance=tolerance, transient=transient)


def single_soliton(cfg: RunConfig) -> tuple[Field, dict]:
    grid = cfg.make_grid()
    st = cfg.state
    if st.exact_sech:
        return sech_pulse(grid, 1.0, 1.0), {"single": "exact sech(t)"}
    u0, report = _single_soliton(cfg.params, grid, cfg.make_scheme(), st.guess_amplitude,
                                 st.guess_width, st.max_distance, st.tolerance, st.transient)
    return u0, {"single": report.as_dict()}


def _spec(cfg: RunConfig) -> BoundStateSpec:
    st = cfg.state
    n = 2 if st.mode == "pair" else st.n_solitons
    phases = list(st.phases) if st.phases is not None else [0.0] * n
    if st.offsets is not None:
        return BoundStateSpec(list(st.offsets), phases)
    spacing = st.separation if st.separation is not None else st.spacing
    return BoundStateSpec.equally_spaced(n, spacing, phases)


def prepare_state(cfg: RunConfig) -> tuple[Field, dict]:
    """Stationary field requested by ``cfg.state`` plus a JSON-ready report."""
    u0, info = single_soliton(cfg)
    st = cfg.state
    if st.mode == "single":
        seg = detect_solitons(u0, st.threshold)
        info.update(n_solitons=1, converged=True, segmentation=seg.as_dict())
        return u0, info
    spec = _spec(cfg)
    u = compose_bound_state(u0, spec)
    info["composed"] = {"offsets": list(spec.offsets), "phases": list(spec.phases)}
    if st.separation is not None or st.offsets is not None:
        # fixed geometry: use the composed complex as is
        seg = detect_solitons(u, st.threshold)
        info.update(n_solitons=seg.n, converged=False, relaxed=False,
                    fixed_separation=True, separations=seg.separations(),
                    phase_differences=seg.phase_differences(), segmentation=seg.as_dict())
        if seg.n != spec.n:
            raise BoundStateInstability(f"composed state shows {seg.n} peaks, expected {spec.n}")
        return u, info
    u, report = relax_bound_state(cfg.params, u, cfg.make_scheme(), st.max_distance,
                                  template=u0 if st.search_spacing else None,
                                  tolerance=st.tolerance, transient=st.transient,
                                  threshold=st.threshold,
                                  accept_quasi_stationary=st.quasi_stationary)
    d = report.as_dict()
    info.update(n_solitons=len(report.separations) + 1, relaxed=True,
                converged=report.convergence.converged, **d)
    return u, info


# --- correlation ----------------------------------------------------------------------------


def slot_partition(cfg: RunConfig, grid: TimeGrid) -> SlotPartition:
    m = cfg.measurement
    return SlotPartition.equal(grid, m.n_slots, m.slot_span)


def run_correlation(cfg: RunConfig, state: Field, timer: Timer | None = None,
                    with_slots: bool | None = None):
    """Propagate ``state`` to the last checkpoint and measure the correlations."""
    timer = timer or Timer()
    m = cfg.measurement
    check_checkpoints(cfg)
    with timer.phase("propagate"):
        _, traj = propagate(state, cfg.params, cfg.distance, cfg.make_scheme(), record=True)
    slots = slot_partition(cfg, state.grid) if (m.eta_maps if with_slots is None else with_slots) else None
    with timer.phase("quantum"):
        report = correlation_trace(traj, m.checkpoints, threshold=cfg.state.threshold,
                                   mode=m.denominator, channels=m.channels, slots=slots)
    return report, traj


def check_checkpoints(cfg: RunConfig) -> None:
    steps = cfg.make_scheme().n_steps(cfg.distance)
    reach = steps * cfg.scheme.dz
    beyond = [z for z in cfg.measurement.checkpoints if z > reach + 0.5 * cfg.scheme.dz]
    if beyond:
        raise ContractError(f"checkpoints {beyond} lie beyond the propagated distance {reach:g}")


def _z_label(z: float) -> str:
    return format(round(z, 10), "g")


def stability_frames(traj, samples: int = 50, threshold: float = 0.3):
    """|U(z, t)| snapshots from a recorded trajectory; raises if the peak count changes."""
    ks = np.unique(np.round(np.linspace(0, traj.n_steps, samples + 1)).astype(int))
    n0 = None
    frames, counts = [], []
    for k in ks:
        u = traj.node_field(int(k))
        n = detect_solitons(u, threshold).n
        n0 = n if n0 is None else n0
        counts.append(n)
        if n != n0:
            raise BoundStateInstability(f"peak count changed from {n0} to {n} at z = {k * traj.dz:g}")
        frames.append(np.abs(u.values))
    return ks * traj.dz, np.array(frames), counts


def _mode_summary(report: CorrelationReport) -> dict:
    out = {}
    for mode in DENOMINATOR_MODES:
        try:
            traces = report.traces_for(mode)
        except OrderingAmbiguity as exc:
            out[mode] = {"error": str(exc)}
            continue
        out[mode] = {f"C_{i}{j}": v.tolist() for (i, j), v in traces.items()}
    return out


def plateau(trace: np.ndarray, zs: np.ndarray) -> dict:
    z_end = zs[-1]
    k = int(np.argmin(np.abs(zs - 0.8 * z_end)))
    delta = float(abs(trace[-1] - trace[k]))
    return {"z_end": float(z_end), "z_compare": float(zs[k]), "difference": delta,
            "reached": delta < PLATEAU_TOLERANCE}


def write_correlation_outputs(outdir: Path, cfg: RunConfig, report: CorrelationReport,
                              grid: TimeGrid) -> list[Path]:
    outdir.mkdir(parents=True, exist_ok=True)
    files = []
    zs = report.z_values
    primary = report.traces
    labels = [f"C_{i}{j}" for i, j in primary]
    rows = [[z] + [primary[p][c] for p in primary] for c, z in enumerate(zs)]
    files.append(io.write_csv(outdir / "c_trace.csv", ["z"] + labels, rows))
    other = [m for m in DENOMINATOR_MODES if m != report.mode][0]
    try:
        alt = report.traces_for(other)
        rows = [[z] + [alt[p][c] for p in alt] for c, z in enumerate(zs)]
        files.append(io.write_csv(outdir / f"c_trace_{other}.csv", ["z"] + labels, rows))
    except OrderingAmbiguity as exc:
        log.warning("no %s-denominator trace: %s", other, exc)
    if report.slot_cov:
        for c, z in enumerate(zs):
            eta = report.eta_at(c).eta
            files.append(io.write_matrix_csv(outdir / f"eta_{_z_label(z)}.csv", eta,
                                             report.slot_centers))
    if cfg.output.plot_scripts:
        files += write_plot_scripts(outdir, bool(report.slot_cov))
    return files


def correlation_metadata(report: CorrelationReport, traj) -> dict:
    zs = report.z_values
    meta = {"propagated_distance": traj.distance, "steps": traj.n_steps,
            "checkpoints": zs.tolist(), "denominator": report.mode,
            "traces_by_denominator": _mode_summary(report),
            "final": {f"C_{i}{j}": v for (i, j), v in report.C.items()},
            "antisymmetric_residual_max": float(max(report.residuals)),
            "segmentations": [s.as_dict() for s in report.segmentations]}
    if len(zs) > 1 and report.n_solitons > 1:
        meta["plateau_C_12"] = plateau(report.traces[(1, 2)], zs)
    if report.slot_cov:
        meta["slot_centers"] = report.slot_centers.tolist()
    return meta


PLOT_ETA = '''"""Heatmaps of the eta maps in this directory (requires matplotlib)."""
import glob
import numpy as np
import matplotlib.pyplot as plt

for path in sorted(glob.glob("eta_*.csv")):
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    t = data[:, 0]
    eta = data[:, 1:]
    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.pcolormesh(t, t, eta, cmap="RdBu_r", vmin=-1, vmax=1, shading="nearest")
    ax.set_xlabel("t")
    ax.set_ylabel("t")
    ax.set_title(path[:-4])
    fig.colorbar(im, ax=ax)
    fig.savefig(path[:-4] + ".png", dpi=150, bbox_inches="tight")
    plt.close(fig)
'''

PLOT_TRACE = '''"""Line plot of the soliton correlation traces (requires matplotlib)."""
import numpy as np
import matplotlib.pyplot as plt

with open("c_trace.csv") as fh:
    labels = fh.readline().strip().split(",")[1:]
data = np.loadtxt("c_trace.csv", delimiter=",", skiprows=1, ndmin=2)
fig, ax = plt.subplots(figsize=(5, 3.5))
for k, label in enumerate(labels):
    ax.plot(data[:, 0], data[:, k + 1], marker="o", ms=3, label=label)
ax.set_xlabel("z")
ax.set_ylabel("C")
ax.legend()
fig.savefig("c_trace.png", dpi=150, bbox_inches="tight")
'''

PLOT_STABILITY = '''"""Contour plot of |U(z, t)| from stability.csv (requires matplotlib)."""
import numpy as np
import matplotlib.pyplot as plt

with open("stability.csv") as fh:
    t = np.array([float(v) for v in fh.readline().strip().split(",")[1:]])
data = np.loadtxt("stability.csv", delimiter=",", skiprows=1, ndmin=2)
fig, ax = plt.subplots(figsize=(5, 3.5))
ax.contourf(t, data[:, 0], data[:, 1:], levels=30)
ax.set_xlabel("t")
ax.set_ylabel("z")
fig.savefig("stability.png", dpi=150, bbox_inches="tight")
'''


def write_plot_scripts(outdir: Path, eta: bool, stability: bool = False) -> list[Path]:
    files = []
    scripts = {"plot_trace.py": PLOT_TRACE}
    if eta:
        scripts["plot_eta.py"] = PLOT_ETA
    if stability:
        scripts["plot_stability.py"] = PLOT_STABILITY
    for name, text in scripts.items():
        path = outdir / name
        io._write_atomic(path, text.encode())
        files.append(path)
    return files


# --- figure recipes -----------------------------------------------------------------------


def _steps(stop: float, step: float) -> tuple:
    return tuple(round(k * step, 10) for k in range(int(round(stop / step)) + 1))


def figure_config(which: str, directory: str = "out") -> RunConfig:
    """Default configuration of each figure recipe; all omitted choices are explicit here."""
    base = RunConfig()
    out = replace(base.output, directory=directory)
    if which == "fig1a":
        state = StateConfig(mode="pair", exact_sech=True, separation=8.0, phases=(0.0, math.pi))
        meas = MeasurementConfig(checkpoints=(0.0, 6.0), n_slots=64, slot_span=(-8.0, 8.0))
        cfg = RunConfig(grid=GridConfig(1024, 64.0), params=NLSE_PARAMS, state=state,
                        measurement=meas, output=out)
    elif which == "fig1b":
        meas = MeasurementConfig(checkpoints=(0.0, 0.1, 0.2, 0.3, 0.4, 0.5), n_slots=64,
                                 slot_span=(-4.0, 4.0))
        cfg = RunConfig(params=PAPER_PARAMS, state=StateConfig(mode="pair"), measurement=meas,
                        output=out)
    elif which == "fig2":
        meas = MeasurementConfig(checkpoints=_steps(10.0, 0.5), eta_maps=False)
        cfg = RunConfig(params=PAPER_PARAMS, state=StateConfig(mode="pair"), measurement=meas,
                        output=out)
    elif which == "fig3":
        state = StateConfig(mode="train", n_solitons=4, quasi_stationary=True)
        meas = MeasurementConfig(checkpoints=_steps(10.0, 1.0), eta_maps=False)
        cfg = RunConfig(params=PAPER_PARAMS, state=state, measurement=meas, output=out)
    else:
        raise ConfigError(f"unknown figure {which!r}; choose from {FIGURES}")
    return validate(cfg)


def run_pipeline(cfg: RunConfig, outdir: Path, *, stability: bool = False,
                 state: Field | None = None, state_info: dict | None = None,
                 extra_meta: dict | None = None) -> dict:
    """relax (unless ``state`` is given) -> propagate -> correlate, writing all outputs."""
    timer = Timer()
    outdir.mkdir(parents=True, exist_ok=True)
    files = []
    if state is None:
        with timer.phase("relax"):
            state, state_info = prepare_state(cfg)
        files += io.save_state(outdir / "state.bin", state, state_info)
    report, traj = run_correlation(cfg, state, timer)
    with timer.phase("write"):
        files += write_correlation_outputs(outdir, cfg, report, state.grid)
        if stability:
            zs, frames, counts = stability_frames(traj, threshold=cfg.state.threshold)
            keep = np.abs(state.grid.t) <= 0.25 * state.grid.t_window
            t = state.grid.t[keep]
            rows = [[z] + list(f[keep]) for z, f in zip(zs, frames)]
            files.append(io.write_csv(outdir / "stability.csv",
                                      ["z\\t"] + [io.format_number(x) for x in t], rows))
            if cfg.output.plot_scripts:
                files += write_plot_scripts(outdir, False, stability=True)
        if cfg.output.save_trajectory:
            files.append(io.save_trajectory(outdir / "trajectory.bin", traj))
    meta = {"config": cfg.as_dict(), "state": state_info or {},
            "correlation": correlation_metadata(report, traj),
            "deterministic": "no random numbers are used anywhere in the pipeline"}
    if stability:
        meta["stability"] = {"samples": len(zs), "peak_counts": counts}
    meta.update(extra_meta or {})
    meta["wall_clock_seconds"] = timer.phases
    io.write_metadata(outdir / "metadata.json", meta, files)
    meta["_report"] = report
    return meta


def run_figure(which: str, outdir: Path, *, separation: float | None = None,
               denominator: str | None = None) -> dict:
    cfg = figure_config(which, str(outdir))
    if separation is not None:
        cfg = validate(replace(cfg, state=replace(cfg.state, separation=separation)))
    if denominator is not None:
        cfg = validate(replace(cfg, measurement=replace(cfg.measurement, denominator=denominator)))
    return run_pipeline(cfg, outdir, stability=which in ("fig2", "fig3"),
                        extra_meta={"figure": which})


# --- sweeps -------------------------------------------------------------------------------


def sweep_point(cfg: RunConfig, point: dict, index: int) -> dict:
    """One sweep point; failures are returned as a flagged row, never raised."""
    row = {"index": index, **point, "ok": False}
    try:
        pcfg = cfg.with_point(point)
        pcfg = replace(pcfg, measurement=replace(pcfg.measurement, eta_maps=False))
        state, info = prepare_state(pcfg)
        report, _ = run_correlation(pcfg, state)
        zs = report.z_values
        trace = report.traces[(1, 2)] if report.n_solitons > 1 else np.zeros(len(zs))
        row.update(ok=True, C_12=float(trace[-1]), converged=bool(info.get("converged", False)),
                   plateau=plateau(trace, zs)["reached"] if len(zs) > 1 else False,
                   separation_measured=float(info["separations"][0]) if info.get("separations") else math.nan)
    except SolcorrError as exc:
        row.update(error=f"{type(exc).__name__}: {exc}", exit_code=exc.exit_code)
    return row


def run_sweep(cfg: RunConfig, outdir: Path, workers: int | None = None) -> tuple[list[dict], dict]:
    points = cfg.sweep.points(cfg)
    workers = workers or cfg.sweep.workers
    t0 = time.perf_counter()
    if workers == 1 or len(points) == 1:
        rows = [sweep_point(cfg, p, i) for i, p in enumerate(points)]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(sweep_point, cfg, p, i) for i, p in enumerate(points)]
            rows = [f.result() for f in futures]
    keys = [k for k in ("epsilon", "beta", "mu", "separation") if any(k in r for r in rows)]
    header = ["index"] + keys + ["ok", "C_12", "plateau", "converged", "separation_measured",
                                 "error"]
    table = []
    for r in rows:
        table.append([str(r["index"])] + [r.get(k, math.nan) for k in keys]
                     + [str(r["ok"]).lower(), r.get("C_12", math.nan),
                        str(r.get("plateau", False)).lower(),
                        str(r.get("converged", False)).lower(),
                        r.get("separation_measured", math.nan),
                        '"' + r.get("error", "").replace('"', "'") + '"'])
    outdir.mkdir(parents=True, exist_ok=True)
    files = [io.write_csv(outdir / "sweep.csv", header, table)]
    meta = {"config": cfg.as_dict(), "workers": workers, "points": rows,
            "wall_clock_seconds": {"sweep": time.perf_counter() - t0}}
    io.write_metadata(outdir / "metadata.json", meta, files)
    return rows, meta
