"""Synthetic measurements, the multiplicative noise model, brute-force oracle and noise campaigns."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fem, recon, solver, topo
from .fem import InclusionSpec, SourceTerm
from .mesh import TWO_PI, BoundaryPartition, Mesh
from .recon import BackgroundCache, Measurement, ReconConfig
from .solver import NewtonConfig

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NoiseSpec:
    """Multiplicative noise ``v * (1 - p/2 + p * rand)`` with rand ~ U[0, 1] per boundary node."""

    p: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.p < 1.0:
            raise ValueError("noise fraction p must lie in [0, 1)")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


def apply_noise(values, noise: NoiseSpec | None) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if noise is None or noise.p == 0.0:
        return values.copy()
    rand = np.random.default_rng(int(noise.seed)).random(len(values))
    return values * (1.0 - noise.p / 2.0 + rand * noise.p)


def source_noise(noise: NoiseSpec | None, index: int) -> NoiseSpec | None:
    """Independent noise stream for the ``index``-th source of one run."""
    if noise is None:
        return None
    return NoiseSpec(noise.p, (int(noise.seed) * 7919 + index) % 2**64)


def transfer_trace(src_mesh: Mesh, trace, dst_mesh: Mesh) -> np.ndarray:
    """Periodic linear interpolation in polar angle from one boundary to another."""
    trace = np.asarray(trace, dtype=float)
    if src_mesh.same_as(dst_mesh):
        return trace.copy()
    ang = src_mesh.boundary_node_angles
    order = np.argsort(ang, kind="stable")
    return np.interp(dst_mesh.boundary_node_angles, ang[order], trace[order], period=TWO_PI)


def clean_trace(
    inclusion: InclusionSpec | None, f: SourceTerm, gen_mesh: Mesh, newton: NewtonConfig | None = None,
    margin: float = fem.DEFAULT_MARGIN,
) -> np.ndarray:
    coeff = fem.classify_elements(gen_mesh, inclusion, margin)
    sol = solver.solve_forward(gen_mesh, coeff, f, newton)
    return solver.boundary_trace(gen_mesh, sol.u)


def generate_measurement(
    true_inclusion: InclusionSpec | None,
    f: SourceTerm,
    gen_mesh: Mesh,
    recon_mesh: Mesh,
    mask: BoundaryPartition | None = None,
    noise: NoiseSpec | None = None,
    newton: NewtonConfig | None = None,
    margin: float = fem.DEFAULT_MARGIN,
) -> Measurement:
    """Forward solve with the planted inclusion, transfer the trace, optionally add noise."""
    trace = clean_trace(true_inclusion, f, gen_mesh, newton, margin)
    data = transfer_trace(gen_mesh, trace, recon_mesh)
    return Measurement(f, apply_noise(data, noise), mask)


# ---------------------------------------------------------------------------
# brute-force oracle


@dataclass
class OracleContext:
    """Everything needed to evaluate j(eps; z) on one mesh."""

    mesh: Mesh
    source: SourceTerm
    data: np.ndarray
    k_in: float = fem.DEFAULT_K_IN
    mask: BoundaryPartition | None = None
    newton: NewtonConfig = field(default_factory=NewtonConfig)
    margin: float = fem.DEFAULT_MARGIN
    _U: np.ndarray | None = None

    @property
    def U(self) -> np.ndarray:
        if self._U is None:
            self._U = solver.solve_unperturbed(self.mesh, self.source, self.newton).u
        return self._U

    def j(self, u) -> float:
        d = solver.boundary_trace(self.mesh, u) - self.data
        return recon.boundary_l2_squared(self.mesh, d, self.mask)

    @property
    def j0(self) -> float:
        return self.j(self.U)


@dataclass
class OracleSample:
    eps: float
    j: float
    delta: float
    ratio: float
    perturbation: float
    inclusion_area: float


def oracle_topological_gradient(z, eps_list, ctx: OracleContext) -> list[OracleSample]:
    """For each eps, solve with a disk of radius eps at z and report (j(eps; z) - j(0)) / eps^2.

    ``perturbation`` is the boundary L2 norm of u_eps - U.
    """
    eps_sorted = sorted(float(e) for e in eps_list)
    if eps_sorted != [float(e) for e in eps_list]:
        raise ValueError("eps_list must be increasing")
    zx, zy = float(z[0]), float(z[1])
    if 1.0 - math.hypot(zx, zy) < ctx.margin + eps_sorted[-1]:
        raise ValueError(f"probe {z} closer than margin + max eps to the boundary")
    U = ctx.U
    j0 = ctx.j(U)
    out = []
    for eps in eps_sorted:
        inc = InclusionSpec((zx, zy), eps, "circle", ctx.k_in)
        coeff = fem.classify_elements(ctx.mesh, inc, ctx.margin)
        u = solver.solve_forward(ctx.mesh, coeff, ctx.source, ctx.newton, u0=U).u
        jj = ctx.j(u)
        pert = math.sqrt(recon.boundary_l2_squared(ctx.mesh, solver.boundary_trace(ctx.mesh, u - U)))
        out.append(OracleSample(eps, jj, jj - j0, (jj - j0) / eps**2, pert, coeff.inclusion_area))
    return out


def loglog_slope(xs, ys) -> float:
    xs = np.log(np.asarray(xs, dtype=float))
    ys = np.log(np.abs(np.asarray(ys, dtype=float)))
    return float(np.polyfit(xs, ys, 1)[0])


@dataclass
class ProbeReport:
    """Oracle samples at one node compared against the representation formula.

    ``predicted_ratio`` is 2 * pi * G(z): a disk of radius eps has area pi * eps^2
    and the misfit carries no factor 1/2, so j(eps) - j(0) ~ 2 pi eps^2 G.
    """

    point: tuple[float, float]
    node: int
    G: float
    predicted_ratio: float
    samples: list[OracleSample]
    misfit_slope: float
    boundary_slope: float

    @property
    def ratio_at_min_eps(self) -> float:
        return self.samples[0].ratio

    @property
    def sign_agrees(self) -> bool:
        return bool(np.sign(self.ratio_at_min_eps) == np.sign(self.G))

    @property
    def relative_gap(self) -> float:
        return abs(self.ratio_at_min_eps - self.predicted_ratio) / abs(self.predicted_ratio)

    def to_dict(self) -> dict:
        return {
            "point": list(self.point),
            "node": self.node,
            "G": self.G,
            "predicted_ratio": self.predicted_ratio,
            "samples": [
                {"eps": s.eps, "j": s.j, "delta": s.delta, "ratio": s.ratio,
                 "boundary_perturbation": s.perturbation, "inclusion_area": s.inclusion_area}
                for s in self.samples
            ],
            "misfit_slope": self.misfit_slope,
            "boundary_slope": self.boundary_slope,
            "sign_agrees": self.sign_agrees,
            "relative_gap": self.relative_gap,
        }


def gradient_for_context(ctx: OracleContext, tensor=None) -> np.ndarray:
    """Nodal topological gradient for the oracle's data (circle tensor of unit area by default)."""
    tensor = tensor or topo.circle_tensor(ctx.k_in)
    res = solver.boundary_trace(ctx.mesh, ctx.U) - ctx.data
    W = solver.solve_adjoint(ctx.mesh, ctx.U, res, ctx.mask)
    return topo.topological_gradient(ctx.mesh, ctx.U, W, ctx.k_in, tensor, ctx.margin).g


def probe_oracle(ctx: OracleContext, probes, eps_list, G=None) -> list[ProbeReport]:
    """Snap each probe to its nearest node and compare the oracle with G there."""
    if G is None:
        G = gradient_for_context(ctx)
    out = []
    for z in probes:
        node = int(np.argmin(np.hypot(*(ctx.mesh.nodes - np.asarray(z, dtype=float)).T)))
        pz = (float(ctx.mesh.nodes[node, 0]), float(ctx.mesh.nodes[node, 1]))
        samples = oracle_topological_gradient(pz, eps_list, ctx)
        eps = [s.eps for s in samples]
        out.append(ProbeReport(
            pz, node, float(G[node]), 2.0 * math.pi * float(G[node]), samples,
            loglog_slope(eps, [s.delta for s in samples]),
            loglog_slope(eps, [s.perturbation for s in samples]),
        ))
    return out


def random_interior_points(n: int, min_dist: float, seed: int = 0) -> list[tuple[float, float]]:
    """Uniform points of the unit disk at distance >= min_dist from the boundary."""
    rng = np.random.default_rng(seed)
    rmax = 1.0 - min_dist
    r = rmax * np.sqrt(rng.random(n))
    t = 2.0 * math.pi * rng.random(n)
    return [(float(a), float(b)) for a, b in zip(r * np.cos(t), r * np.sin(t))]


# ---------------------------------------------------------------------------
# campaigns


@dataclass
class Experiment:
    """A planted-inclusion experiment with cached clean data and background solves."""

    recon_mesh: Mesh
    gen_mesh: Mesh
    inclusion: InclusionSpec
    sources: list[SourceTerm]
    algorithm: str = "alg2"
    partition: BoundaryPartition | None = None
    cfg: ReconConfig = field(default_factory=ReconConfig)
    _clean: dict = field(default_factory=dict, repr=False)
    _cache: BackgroundCache | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.algorithm not in ("alg1", "alg2", "alg3"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.algorithm == "alg3" and len(self.sources) != 1:
            raise ValueError("alg3 uses exactly one source term")

    @property
    def cache(self) -> BackgroundCache:
        if self._cache is None:
            self._cache = BackgroundCache(self.recon_mesh, self.cfg.newton)
        return self._cache

    def clean_data(self, f: SourceTerm) -> np.ndarray:
        key = str(f)
        if key not in self._clean:
            trace = clean_trace(self.inclusion, f, self.gen_mesh, self.cfg.newton, self.cfg.margin)
            self._clean[key] = transfer_trace(self.gen_mesh, trace, self.recon_mesh)
        return self._clean[key]

    def measurements(self, noise: NoiseSpec | None = None) -> list[Measurement]:
        out = []
        for i, f in enumerate(self.sources):
            out.append(Measurement(f, apply_noise(self.clean_data(f), source_noise(noise, i))))
        return out

    def reconstruct(self, noise: NoiseSpec | None = None) -> recon.ReconstructionResult:
        ms = self.measurements(noise)
        if self.algorithm == "alg1":
            m = ms[0]
            if self.partition is not None:
                m = Measurement(m.source, m.boundary_data, self.partition)
            return recon.run_algorithm1(self.recon_mesh, m, self.cfg, self.cache)
        if self.algorithm == "alg2":
            return recon.run_algorithm2(self.recon_mesh, ms, self.cfg, self.cache)
        part = self.partition
        if part is None:
            raise ValueError("alg3 needs a boundary partition")
        return recon.run_algorithm3(self.recon_mesh, self.sources[0], recon.split_by_arcs(ms[0], part), self.cfg, self.cache)


@dataclass
class RunRecord:
    seed: int
    detected_center: tuple[float, float] | None
    error: float
    failed: bool
    message: str = ""


@dataclass
class CampaignResult:
    p: float
    runs: list[RunRecord]

    @property
    def mean_error(self) -> float:
        ok = [r.error for r in self.runs if not r.failed]
        return float(np.mean(ok)) if ok else float("nan")

    @property
    def failure_rate(self) -> float:
        return sum(r.failed for r in self.runs) / len(self.runs)

    def to_dict(self, config: dict | None = None) -> dict:
        out = {
            "p": self.p,
            "n_runs": len(self.runs),
            "mean_error": self.mean_error,
            "failure_rate": self.failure_rate,
            "runs": [
                {
                    "seed": r.seed,
                    "detected_center": list(r.detected_center) if r.detected_center else None,
                    "error": r.error,
                    "failed": r.failed,
                    **({"message": r.message} if r.message else {}),
                }
                for r in self.runs
            ],
        }
        if config is not None:
            out["config"] = config
        return out


def run_campaign(experiment: Experiment, p: float, n_runs: int, base_seed: int = 0) -> CampaignResult:
    """Repeat the reconstruction with noise seeds base_seed + i; a boundary detection counts as failure."""
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    truth = experiment.inclusion.center
    runs = []
    for i in range(n_runs):
        seed = int(base_seed) + i
        try:
            res = experiment.reconstruct(NoiseSpec(p, seed) if p > 0 else None)
        except Exception as exc:  # individual runs must not abort the campaign
            log.warning("campaign run %d failed: %s", seed, exc)
            runs.append(RunRecord(seed, None, float("nan"), True, str(exc)))
            continue
        runs.append(RunRecord(seed, res.detected_center, res.error_to(truth), res.boundary_violation_flag))
    return CampaignResult(p, runs)


def write_campaign(json_path, csv_path, result: CampaignResult, config: dict | None = None) -> dict:
    payload = result.to_dict(config)
    Path(json_path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    with open(csv_path, "w", newline="") as fh:
        if config is not None:
            fh.write("# config: " + json.dumps(config, sort_keys=True) + "\n")
        w = csv.writer(fh)
        w.writerow(["seed", "x", "y", "error", "failed"])
        for r in result.runs:
            x, y = r.detected_center if r.detected_center else (float("nan"), float("nan"))
            w.writerow([r.seed, repr(x), repr(y), repr(r.error), int(r.failed)])
    return payload
