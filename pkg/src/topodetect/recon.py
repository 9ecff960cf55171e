"""One-shot detection: single measurement, several sources, and partial boundary data."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fem, solver, topo
from .fem import SourceTerm
from .mesh import BoundaryPartition, Mesh, build_partition
from .solver import ForwardSolution, NewtonConfig
from .topo import GradientField, PolarizationTensor

log = logging.getLogger(__name__)


class ReconstructionError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True, eq=False)
class Measurement:
    """Boundary data on the reconstruction mesh, in boundary-cycle order."""

    source: SourceTerm
    boundary_data: np.ndarray
    mask: BoundaryPartition | None = None
    weight_override: float | None = None

    def __post_init__(self):
        data = np.asarray(self.boundary_data, dtype=float)
        if data.ndim != 1 or not np.all(np.isfinite(data)):
            raise ValueError("boundary data must be a finite 1-D array")
        object.__setattr__(self, "boundary_data", data)


@dataclass
class ReconConfig:
    k_in: float = fem.DEFAULT_K_IN
    margin: float = fem.DEFAULT_MARGIN
    tensor: PolarizationTensor | None = None
    newton: NewtonConfig = field(default_factory=NewtonConfig)
    weights: str = "misfit"
    incremental: bool = False
    stop_tol: float = 0.02

    def __post_init__(self):
        if self.weights not in ("misfit", "uniform"):
            raise ValueError("weights must be 'misfit' or 'uniform'")

    @property
    def polarization(self) -> PolarizationTensor:
        return self.tensor if self.tensor is not None else topo.circle_tensor(self.k_in)


@dataclass
class MeasurementSummary:
    source: str
    misfit: float
    min_value: float
    weight: float
    dropped: bool = False
    arc: tuple[float, float] | None = None


@dataclass
class ReconstructionResult:
    detected_center: tuple[float, float]
    detected_node: int
    aggregated_field: GradientField
    per_measurement_fields: list[GradientField]
    weights: list[float]
    misfits: list[float]
    summaries: list[MeasurementSummary]
    boundary_violation_flag: bool
    flat_field: bool
    algorithm: str
    timings: dict[str, float] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    rounds: list[tuple[float, float]] = field(default_factory=list)

    def error_to(self, center) -> float:
        return float(np.hypot(self.detected_center[0] - center[0], self.detected_center[1] - center[1]))


class BackgroundCache:
    """Unperturbed solutions keyed by source term, reused across reconstructions on one mesh."""

    def __init__(self, mesh: Mesh, newton: NewtonConfig | None = None):
        self.mesh = mesh
        self.newton = newton or NewtonConfig()
        self._store: dict[str, tuple[ForwardSolution, np.ndarray, object]] = {}

    def get(self, f: SourceTerm):
        key = str(f)
        if key not in self._store:
            sol = solver.solve_unperturbed(self.mesh, f, self.newton)
            grad = topo.recover_nodal_gradient(self.mesh, sol.u)
            op = solver.adjoint_operator(self.mesh, sol.u)
            self._store[key] = (sol, grad, op)
        return self._store[key]


def misfit(mesh: Mesh, U_trace, m: Measurement) -> float:
    """Boundary integral of (U - data)^2 over the measurement's mask (exact for P1 traces)."""
    d = np.asarray(U_trace, dtype=float) - m.boundary_data
    if d.shape != (len(mesh.boundary_edges),):
        raise ValueError("trace and data must live on the mesh boundary")
    return boundary_l2_squared(mesh, d, m.mask)


def boundary_l2_squared(mesh: Mesh, d, mask=None) -> float:
    da, db = d, np.roll(d, -1)
    L = mesh.boundary_edge_lengths
    if mask is not None:
        L = np.where(mask.edge_mask(mesh), L, 0.0)
    return float(np.sum(L * (da * da + da * db + db * db)) / 3.0)


def _check_measurement(mesh: Mesh, m: Measurement) -> None:
    if m.boundary_data.shape != (len(mesh.boundary_edges),):
        raise ValueError(
            f"measurement has {len(m.boundary_data)} values, mesh has {len(mesh.boundary_edges)} boundary nodes"
        )


def _field_for(mesh, m: Measurement, background, cfg: ReconConfig, t: dict):
    sol, grad_U, op = background
    t0 = time.perf_counter()
    trace = solver.boundary_trace(mesh, sol.u)
    res = trace - m.boundary_data
    try:
        W = solver.solve_adjoint(mesh, sol.u, res, m.mask, operator=op)
    except Exception as exc:
        raise ReconstructionError(f"adjoint solve ({m.source})", exc) from exc
    t["adjoint"] = t.get("adjoint", 0.0) + time.perf_counter() - t0
    t0 = time.perf_counter()
    fld = topo.topological_gradient(mesh, sol.u, W, cfg.k_in, cfg.polarization, cfg.margin, grad_U=grad_U)
    t["field"] = t.get("field", 0.0) + time.perf_counter() - t0
    return fld, misfit(mesh, trace, m)


def compute_weights(misfits, minima, mode: str = "misfit", overrides=None):
    """Weights proportional to misfit/|min G|; entries that cannot get a positive weight are dropped.

    Returns (weights, dropped) with weights summing to one over kept entries.
    """
    n = len(misfits)
    if overrides is not None and all(o is not None for o in overrides):
        raw = np.array(overrides, dtype=float)
    elif mode == "uniform":
        raw = np.ones(n)
    else:
        raw = np.array(
            [j / abs(g) if g != 0.0 and j > 0.0 else 0.0 for j, g in zip(misfits, minima)], dtype=float
        )
    dropped = [not (r > 0.0 and np.isfinite(r)) for r in raw]
    if all(dropped):
        return [1.0 / n] * n, [False] * n
    raw = np.where(dropped, 0.0, raw)
    return list(raw / raw.sum()), dropped


def _aggregate(mesh, fields, misfits, measurements, cfg, labels, t, algorithm, arcs=None):
    warnings_ = []
    minima = [f.min_value for f in fields]
    weights, dropped = compute_weights(
        misfits, minima, cfg.weights, [m.weight_override for m in measurements]
    )
    for lab, d in zip(labels, dropped):
        if d:
            warnings_.append(f"measurement {lab} dropped: min G = 0 or zero misfit")
            log.warning("measurement %s dropped from aggregation", lab)
    g = np.zeros(mesh.n_nodes)
    for w, f in zip(weights, fields):
        if w > 0.0:
            g = g + w * f.g
    scale = sum(w * f.scale for w, f in zip(weights, fields))
    agg = topo.make_field(mesh, g, cfg.margin, scale)
    det = topo.argmin_interior(agg, mesh, cfg.margin)
    flat = det.flat or all(f.flat for f in fields)
    if flat:
        warnings_.append("flat field: the data carry no detectable inclusion signal")
    summaries = [
        MeasurementSummary(lab, j, mn, w, d, arc)
        for lab, j, mn, w, d, arc in zip(labels, misfits, minima, weights, dropped, arcs or [None] * len(labels))
    ]
    return ReconstructionResult(
        det.point, det.node, agg, fields, list(weights), list(misfits), summaries,
        det.boundary_violation, flat, algorithm, t, warnings_,
    )


def run_algorithm1(mesh: Mesh, m: Measurement, cfg: ReconConfig | None = None, cache: BackgroundCache | None = None):
    """One unperturbed solve, one adjoint solve, detection at the minimum of G."""
    cfg = cfg or ReconConfig()
    _check_measurement(mesh, m)
    cache = cache or BackgroundCache(mesh, cfg.newton)
    t = {}
    t0 = time.perf_counter()
    try:
        bg = cache.get(m.source)
    except Exception as exc:
        raise ReconstructionError(f"unperturbed solve ({m.source})", exc) from exc
    t["unperturbed"] = time.perf_counter() - t0
    fld, j = _field_for(mesh, m, bg, cfg, t)
    one = Measurement(m.source, m.boundary_data, m.mask, None)
    res = _aggregate(mesh, [fld], [j], [one], cfg, [str(m.source)], t, "alg1")
    res.weights = [1.0]
    res.summaries[0].weight = 1.0
    res.summaries[0].dropped = False
    return res


def run_algorithm2(
    mesh: Mesh, measurements: list[Measurement], cfg: ReconConfig | None = None, cache: BackgroundCache | None = None
) -> ReconstructionResult:
    """Weighted sum of the fields of several full-boundary measurements with distinct sources."""
    cfg = cfg or ReconConfig()
    if not measurements:
        raise ValueError("at least one measurement is required")
    names = [str(m.source) for m in measurements]
    if len(set(names)) != len(names):
        log.info("algorithm 2 called with repeated sources %s", names)
    cache = cache or BackgroundCache(mesh, cfg.newton)
    t: dict[str, float] = {}
    fields, misfits = [], []
    for m in measurements:
        _check_measurement(mesh, m)
        t0 = time.perf_counter()
        try:
            bg = cache.get(m.source)
        except Exception as exc:
            raise ReconstructionError(f"unperturbed solve ({m.source})", exc) from exc
        t["unperturbed"] = t.get("unperturbed", 0.0) + time.perf_counter() - t0
        fld, j = _field_for(mesh, m, bg, cfg, t)
        fields.append(fld)
        misfits.append(j)
    if not cfg.incremental:
        return _aggregate(mesh, fields, misfits, measurements, cfg, names, t, "alg2")
    # add sources one at a time; stop once the detected centre settles
    rounds = []
    result = None
    for n in range(1, len(measurements) + 1):
        result = _aggregate(mesh, fields[:n], misfits[:n], measurements[:n], cfg, names[:n], t, "alg2")
        rounds.append(result.detected_center)
        if n > 1 and np.hypot(*(np.subtract(rounds[-1], rounds[-2]))) < cfg.stop_tol:
            break
    result.rounds = rounds
    return result


def run_algorithm3(
    mesh: Mesh,
    f: SourceTerm,
    partial: list[Measurement],
    cfg: ReconConfig | None = None,
    cache: BackgroundCache | None = None,
) -> ReconstructionResult:
    """Single source, one adjoint solve per boundary arc, weighted aggregation."""
    cfg = cfg or ReconConfig()
    if not partial:
        raise ValueError("at least one partial measurement is required")
    arcs = []
    for m in partial:
        _check_measurement(mesh, m)
        if m.mask is None:
            arcs.append((0.0, 2.0 * np.pi))
        else:
            arcs.extend(m.mask.arcs)
        if str(m.source) != str(f):
            raise ValueError("all partial measurements must use the same source term")
    if len(partial) > 1:
        # pairwise disjointness is checked by the partition constructor
        BoundaryPartition(tuple(arcs))
    cache = cache or BackgroundCache(mesh, cfg.newton)
    t: dict[str, float] = {}
    t0 = time.perf_counter()
    try:
        bg = cache.get(f)
    except Exception as exc:
        raise ReconstructionError(f"unperturbed solve ({f})", exc) from exc
    t["unperturbed"] = time.perf_counter() - t0
    fields, misfits = [], []
    for m in partial:
        fld, j = _field_for(mesh, m, bg, cfg, t)
        fields.append(fld)
        misfits.append(j)
    labels = [f"{f}@arc{i}" for i in range(len(partial))]
    arc_list = [m.mask.arcs[0] if m.mask is not None and len(m.mask.arcs) == 1 else None for m in partial]
    return _aggregate(mesh, fields, misfits, partial, cfg, labels, t, "alg3", arc_list)


def split_by_arcs(m: Measurement, partition: BoundaryPartition) -> list[Measurement]:
    """One masked measurement per arc of ``partition``."""
    return [Measurement(m.source, m.boundary_data, partition.single(i), m.weight_override) for i in range(len(partition.arcs))]


def partial_measurements(source, data, n_arcs: int, ell: float, offset: float = 0.0) -> list[Measurement]:
    part = build_partition(n_arcs, ell, offset)
    return split_by_arcs(Measurement(source, data), part)


# ---------------------------------------------------------------------------
# reports


def result_to_dict(result: ReconstructionResult, config: dict | None = None, truth=None) -> dict:
    out = {
        "algorithm": result.algorithm,
        "detected_center": list(result.detected_center),
        "detected_node": result.detected_node,
        "min_value": result.aggregated_field.min_value,
        "boundary_violation": result.boundary_violation_flag,
        "flat_field": result.flat_field,
        "measurements": [
            {
                "source": s.source,
                "misfit": s.misfit,
                "min_G": s.min_value,
                "alpha": s.weight,
                "dropped": s.dropped,
                **({"arc": list(s.arc)} if s.arc is not None else {}),
            }
            for s in result.summaries
        ],
        "warnings": list(result.warnings),
        "timings": {k: round(v, 6) for k, v in result.timings.items()},
    }
    if result.rounds:
        out["rounds"] = [list(r) for r in result.rounds]
    if truth is not None:
        out["true_center"] = list(truth)
        out["error"] = result.error_to(truth)
    if config is not None:
        out["config"] = config
    return out


def write_report(path, result: ReconstructionResult, config: dict | None = None, truth=None) -> dict:
    payload = result_to_dict(result, config, truth)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return payload


def write_field_csv(path, mesh: Mesh, result: ReconstructionResult, config: dict | None = None) -> None:
    """Nodal fields as CSV: ``x,y,G,G_1..G_n`` (config echoed in a leading comment line)."""
    per = result.per_measurement_fields if len(result.per_measurement_fields) > 1 else []
    with open(path, "w", newline="") as fh:
        if config is not None:
            fh.write("# config: " + json.dumps(config, sort_keys=True) + "\n")
        w = csv.writer(fh)
        w.writerow(["x", "y", "G"] + [f"G_{i + 1}" for i in range(len(per))])
        cols = [mesh.nodes[:, 0], mesh.nodes[:, 1], result.aggregated_field.g] + [f.g for f in per]
        for row in zip(*cols):
            w.writerow([repr(float(v)) for v in row])


def write_gnuplot_stub(path, csv_name: str) -> None:
    Path(path).write_text(
        "set datafile separator ','\n"
        "set size ratio -1\n"
        "set palette rgb 33,13,10\n"
        f"plot '{csv_name}' every ::1 using 1:2:3 with points pt 7 ps 0.3 palette notitle\n"
    )
