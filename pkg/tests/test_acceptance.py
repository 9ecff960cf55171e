"""Acceptance criteria 1-7.

Each test prints one ``CRITERION n: PASS|FAIL`` line with the measured values and
then asserts the criterion at its stated tolerance.
"""

import math
import time

import numpy as np
import pytest

from topodetect import fem, recon, solver, synth, topo
from topodetect.fem import InclusionSpec, SourceTerm
from topodetect.mesh import build_partition, generate_disk_mesh
from topodetect.recon import Measurement, ReconConfig

SOURCES = [fem.F1, fem.F2, fem.F3, fem.F4]
BUMP = SourceTerm.parse("Bump(0,0,0.3)")


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}")
        return ok
    return emit


@pytest.fixture(scope="module")
def cache(desk_mesh):
    return recon.BackgroundCache(desk_mesh)


# 1 -------------------------------------------------------------------------


def test_criterion_1_multi_source(desk_mesh, gen_mesh, cache, report):
    rows = [(0.0, 0.1), (0.4, 0.3), (-0.65, 0.0), (0.4, -0.5)]
    lines, ok = [], desk_mesh.n_triangles >= 20_000
    for c in rows:
        t0 = time.perf_counter()
        inc = InclusionSpec(c, 0.04)
        ms = [synth.generate_measurement(inc, f, gen_mesh, desk_mesh) for f in SOURCES]
        res = recon.run_algorithm2(desk_mesh, ms, cache=cache)
        dt = time.perf_counter() - t0
        err = res.error_to(c)
        row_ok = err <= 0.10 and dt <= 120.0
        ok &= row_ok
        lines.append(f"{c}->({res.detected_center[0]:.3f},{res.detected_center[1]:.3f}) "
                     f"err={err:.3f} {dt:.1f}s {'ok' if row_ok else 'MISS'}")
    report(1, ok, f"[{desk_mesh.n_triangles} elements] " + "; ".join(lines))
    assert ok


# 2 -------------------------------------------------------------------------


def test_criterion_2_asymptotic_order(gen_mesh, report):
    # same-mesh planted data: the oracle compares functionals on one discretisation
    inc = InclusionSpec((0.2, -0.2), 0.2)
    ctx = synth.OracleContext(gen_mesh, fem.F1, synth.clean_trace(inc, fem.F1, gen_mesh))
    reps = synth.probe_oracle(ctx, [(0.2, -0.2), (-0.3, 0.3)], [0.02, 0.04, 0.08])
    slopes_ok = all(abs(r.misfit_slope - 2.0) <= 0.2 for r in reps)
    signs_ok = all(r.sign_agrees for r in reps)
    big = max(reps, key=lambda r: abs(r.G))
    gap_ok = big.relative_gap <= 0.35
    ok = slopes_ok and signs_ok and gap_ok
    detail = "; ".join(
        f"z=({r.point[0]:.3f},{r.point[1]:.3f}) slope={r.misfit_slope:.3f} ratio={r.ratio_at_min_eps:.4e} "
        f"2piG={r.predicted_ratio:.4e} gap={r.relative_gap:.1%}"
        for r in reps
    )
    report(2, ok, detail)
    assert ok


# 3 -------------------------------------------------------------------------


def test_criterion_3_uniform_weight_equivalence(desk_mesh, gen_mesh, cache, report):
    inc = InclusionSpec((0.5, 0.4), 0.04)
    data = synth.generate_measurement(inc, BUMP, gen_mesh, desk_mesh).boundary_data
    cfg = ReconConfig(weights="uniform")
    detail = []
    ok = True
    for n in (8, 16, 24):
        part = build_partition(n, 1 / 48)
        a = recon.run_algorithm3(desk_mesh, BUMP, recon.split_by_arcs(Measurement(BUMP, data), part), cfg, cache)
        b = recon.run_algorithm1(desk_mesh, Measurement(BUMP, data, part), cfg, cache)
        ok &= a.detected_node == b.detected_node
        detail.append(f"N={n}: alg3 node {a.detected_node}, alg1 node {b.detected_node}")
    report(3, ok, "; ".join(detail))
    assert ok


# 4 -------------------------------------------------------------------------


def test_criterion_4_partial_trend(desk_mesh, gen_mesh, cache, report):
    inc = InclusionSpec((0.5, 0.4), 0.04)
    data = synth.generate_measurement(inc, BUMP, gen_mesh, desk_mesh).boundary_data
    errs = {}
    flags = {}
    for n in (8, 12, 16, 24):
        ms = recon.partial_measurements(BUMP, data, n, 1 / 48)
        res = recon.run_algorithm3(desk_mesh, BUMP, ms, cache=cache)
        errs[n] = res.error_to(inc.center)
        flags[n] = res.boundary_violation_flag
    seq = [errs[n] for n in (8, 12, 16, 24)]
    trend_ok = all(b <= a + 0.02 for a, b in zip(seq, seq[1:]))
    final_ok = errs[24] <= 0.05
    ok = trend_ok and final_ok
    detail = ", ".join(f"N={n}: {errs[n]:.3f}{' (boundary)' if flags[n] else ''}" for n in errs)
    report(4, ok, f"{detail}; non-increasing={trend_ok}, N=24 <= 0.05: {final_ok}")
    assert ok


# 5 -------------------------------------------------------------------------


def test_criterion_5_noise(desk_mesh, gen_mesh, report):
    ex = synth.Experiment(desk_mesh, gen_mesh, InclusionSpec((0.2, -0.2), 0.04), SOURCES)
    res = {p: synth.run_campaign(ex, p, 20) for p in (0.01, 0.02, 0.05, 0.10)}
    means = [res[p].mean_error for p in (0.01, 0.02, 0.05)]
    p1_ok = res[0.01].mean_error <= 0.06 and res[0.01].failure_rate == 0.0
    inc_ok = all(np.isfinite(means)) and means[0] < means[1] < means[2]
    p10_ok = res[0.10].failure_rate > 0.0
    ok = p1_ok and inc_ok and p10_ok
    detail = ", ".join(f"p={p:.0%}: mean {r.mean_error:.4f} failures {r.failure_rate:.0%}" for p, r in res.items())
    report(5, ok, f"{detail}; p=1% ok={p1_ok}, increasing={inc_ok}, p=10% failures={p10_ok}")
    assert ok


# 6 -------------------------------------------------------------------------


def _mms(h):
    m = generate_disk_mesh(h)
    A = fem.assemble_stiffness(m) + fem.assemble_mass(m)
    F = fem.assemble_load(m, lambda x, y: -4.0 + x * x + y * y)
    F += fem.assemble_boundary_load(m, np.full(len(m.boundary_edges), 2.0))
    e = fem.solve_sparse(A, F) - np.sum(m.nodes**2, axis=1)
    return math.sqrt(e @ (fem.assemble_mass(m) @ e)), math.sqrt(math.pi / m.n_nodes)


def test_criterion_6_solver(desk_mesh, report):
    its = {}
    newton_ok = True
    for f in SOURCES + [BUMP]:
        sol = solver.solve_unperturbed(desk_mesh, f)
        its[str(f)] = sol.iterations
        newton_ok &= sol.converged and sol.residual_history[-1] <= 1e-10 and sol.iterations <= 15
    errs = [_mms(h) for h in (0.1, 0.05, 0.025)]
    order = np.polyfit(np.log([b for _, b in errs]), np.log([a for a, _ in errs]), 1)[0]
    U = solver.solve_unperturbed(desk_mesh, fem.F1).u
    coeff = fem.classify_elements(desk_mesh, InclusionSpec((0.3, 0.2), 0.04))
    mats = [fem.assemble_stiffness(desk_mesh, coeff), fem.assemble_mass(desk_mesh),
            fem.assemble_reaction_linearized(desk_mesh, coeff, U), solver.adjoint_operator(desk_mesh, U)]
    asym = max(abs(A - A.T).max() for A in mats)
    ok = newton_ok and order >= 1.8 and asym == 0.0
    report(6, ok, f"Newton iterations {its}; MMS order {order:.3f}; max |A - A^T| = {asym}")
    assert ok


# 7 -------------------------------------------------------------------------


def test_criterion_7_trivial_field(desk_mesh, report):
    # without an inclusion there is nothing to hide, so data come from the reconstruction mesh itself
    ms = [Measurement(f, synth.clean_trace(None, f, desk_mesh)) for f in SOURCES]
    res = recon.run_algorithm2(desk_mesh, ms)
    g = res.aggregated_field
    field_ok = np.abs(g.g).max() <= topo.FLAT_TOL * g.scale and res.flat_field

    k = 0.1
    iso = np.array_equal(topo.circle_tensor(1.0).m, np.eye(2))
    ident = all(
        np.array_equal(topo.ellipse_tensor(kk, ax, 1.0).m, topo.circle_tensor(kk).m)
        for kk in (0.1, 1.0, 7.0) for ax in ((1.0, 0.0), (0.6, 0.8), (0.0, -1.0))
    )
    r90 = topo.rotation((0.0, 1.0))
    rot_exact = np.array_equal(topo.ellipse_tensor(k, (0.0, 1.0), 0.5).m,
                               r90 @ topo.ellipse_tensor(k, (1.0, 0.0), 0.5).m @ r90.T)
    th = 0.7
    R = topo.rotation((math.cos(th), math.sin(th)))
    nu = np.array([0.6, 0.8])
    m = topo.ellipse_tensor(k, nu, 0.3).m
    rot_gen = np.abs(topo.ellipse_tensor(k, R @ nu, 0.3).m - R @ m @ R.T).max() <= 1e-14 * np.abs(m).max()
    ok = field_ok and iso and ident and rot_exact and rot_gen
    report(7, ok, f"max|G| = {np.abs(g.g).max():.3e}, 1e-6 x scale = {topo.FLAT_TOL * g.scale:.3e}, "
                  f"flat={res.flat_field}; k=1 isotropy={iso}, r=1 identity={ident}, "
                  f"rotation covariance (90 deg exact={rot_exact}, 0.7 rad to roundoff={rot_gen})")
    assert ok
