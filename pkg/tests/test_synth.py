import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from topodetect import fem, solver, synth
from topodetect.fem import InclusionSpec
from topodetect.mesh import generate_disk_mesh
from topodetect.recon import ReconConfig


@given(
    st.lists(st.floats(-10.0, 10.0, allow_nan=False), min_size=1, max_size=50),
    st.floats(0.0, 0.5),
    st.integers(0, 2**64 - 1),
)
@settings(max_examples=100, deadline=None)
def test_noise_stays_within_bounds(values, p, seed):
    v = np.array(values)
    out = synth.apply_noise(v, synth.NoiseSpec(p, seed))
    lo, hi = v * (1 - p / 2), v * (1 + p / 2)
    tol = 1e-15 * np.abs(v)
    assert np.all(out >= np.minimum(lo, hi) - tol)
    assert np.all(out <= np.maximum(lo, hi) + tol)


def test_noise_two_percent_example():
    v = np.linspace(-1.0, 1.0, 101)
    out = synth.apply_noise(v, synth.NoiseSpec(0.02, 5))
    nz = v != 0
    ratio = out[nz] / v[nz]
    assert ratio.min() >= 0.99 and ratio.max() <= 1.01


def test_zero_noise_is_identity():
    v = np.array([0.3, -0.1, 2.0])
    assert np.array_equal(synth.apply_noise(v, None), v)
    assert np.array_equal(synth.apply_noise(v, synth.NoiseSpec(0.0, 3)), v)


def test_noise_is_seeded():
    v = np.ones(20)
    a = synth.apply_noise(v, synth.NoiseSpec(0.1, 42))
    b = synth.apply_noise(v, synth.NoiseSpec(0.1, 42))
    c = synth.apply_noise(v, synth.NoiseSpec(0.1, 43))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_source_noise_streams_differ():
    n = synth.NoiseSpec(0.05, 9)
    s0, s1 = synth.source_noise(n, 0), synth.source_noise(n, 1)
    assert s0.p == s1.p == 0.05 and s0.seed != s1.seed
    assert synth.source_noise(None, 0) is None


def test_noise_spec_validation():
    with pytest.raises(ValueError):
        synth.NoiseSpec(1.5)
    with pytest.raises(ValueError):
        synth.NoiseSpec(0.1, -1)


def test_transfer_same_mesh_is_identity(coarse_mesh):
    t = np.cos(coarse_mesh.boundary_node_angles)
    assert np.array_equal(synth.transfer_trace(coarse_mesh, t, coarse_mesh), t)


def test_transfer_between_meshes(coarse_mesh):
    fine = generate_disk_mesh(0.04, 3)
    t = np.cos(2 * fine.boundary_node_angles)
    out = synth.transfer_trace(fine, t, coarse_mesh)
    # linear interpolation error is at most dtheta^2 / 8 * max|f"| = dtheta^2 / 2
    dtheta = fine.boundary_edge_lengths.max() * 1.001
    assert np.abs(out - np.cos(2 * coarse_mesh.boundary_node_angles)).max() <= 0.5 * dtheta**2 + 1e-15


def test_no_inclusion_oracle_is_nonnegative(medium_mesh):
    U = solver.solve_unperturbed(medium_mesh, fem.F1).u
    ctx = synth.OracleContext(medium_mesh, fem.F1, solver.boundary_trace(medium_mesh, U))
    assert ctx.j0 == 0.0
    for z in [(0.0, 0.0), (0.4, -0.3)]:
        for s in synth.oracle_topological_gradient(z, [0.05, 0.1], ctx):
            assert s.j >= 0.0 and s.ratio >= 0.0


def test_oracle_rejects_probe_near_boundary(medium_mesh):
    ctx = synth.OracleContext(medium_mesh, fem.F1, np.zeros(len(medium_mesh.boundary_nodes)))
    with pytest.raises(ValueError, match="margin"):
        synth.oracle_topological_gradient((0.9, 0.0), [0.02, 0.08], ctx)
    with pytest.raises(ValueError, match="increasing"):
        synth.oracle_topological_gradient((0.0, 0.0), [0.08, 0.02], ctx)


def test_planted_inclusion_lowers_misfit(medium_mesh):
    inc = InclusionSpec((0.2, 0.3), 0.1)
    data = synth.clean_trace(inc, fem.F1, medium_mesh)
    ctx = synth.OracleContext(medium_mesh, fem.F1, data)
    # placing the true inclusion brings the misfit down to (nearly) zero
    s = synth.oracle_topological_gradient((0.2, 0.3), [0.1], ctx)[0]
    assert s.j < 1e-3 * ctx.j0
    assert s.delta < 0


def test_probe_report(medium_mesh):
    inc = InclusionSpec((0.2, -0.2), 0.2)
    ctx = synth.OracleContext(medium_mesh, fem.F1, synth.clean_trace(inc, fem.F1, medium_mesh))
    rep = synth.probe_oracle(ctx, [(-0.3, 0.3)], [0.04, 0.08])[0]
    assert rep.predicted_ratio == pytest.approx(2 * math.pi * rep.G)
    d = rep.to_dict()
    json.dumps(d)
    assert d["node"] == rep.node and len(d["samples"]) == 2


def test_random_interior_points():
    pts = synth.random_interior_points(200, 0.13, seed=4)
    assert len(pts) == 200
    assert max(math.hypot(*p) for p in pts) <= 0.87
    assert pts == synth.random_interior_points(200, 0.13, seed=4)


def test_loglog_slope():
    x = np.array([0.01, 0.02, 0.04])
    assert synth.loglog_slope(x, 3 * x**2) == pytest.approx(2.0)


@pytest.fixture(scope="module")
def small_experiment():
    rm = generate_disk_mesh(0.05)
    gm = generate_disk_mesh(0.035, 7)
    return synth.Experiment(rm, gm, InclusionSpec((0.2, -0.2), 0.08), [fem.F1, fem.F2], cfg=ReconConfig())


def test_campaign_without_noise_repeats_itself(small_experiment):
    res = synth.run_campaign(small_experiment, 0.0, 3)
    centers = {r.detected_center for r in res.runs}
    assert len(centers) == 1
    assert res.failure_rate == 0.0
    assert res.mean_error == pytest.approx(res.runs[0].error)


def test_campaign_statistics(small_experiment, tmp_path):
    res = synth.run_campaign(small_experiment, 0.02, 4, base_seed=10)
    assert [r.seed for r in res.runs] == [10, 11, 12, 13]
    ok = [r.error for r in res.runs if not r.failed]
    if ok:
        assert res.mean_error == pytest.approx(np.mean(ok))
    else:
        assert math.isnan(res.mean_error)
    assert res.failure_rate == sum(r.failed for r in res.runs) / 4
    again = synth.run_campaign(small_experiment, 0.02, 4, base_seed=10)
    assert [r.detected_center for r in again.runs] == [r.detected_center for r in res.runs]
    payload = synth.write_campaign(tmp_path / "c.json", tmp_path / "c.csv", res, {"k": 1})
    assert payload["n_runs"] == 4
    rows = (tmp_path / "c.csv").read_text().splitlines()
    assert rows[0].startswith("# config: ") and rows[1] == "seed,x,y,error,failed"
    assert len(rows) == 6


def test_campaign_argument_checks(small_experiment):
    with pytest.raises(ValueError):
        synth.run_campaign(small_experiment, 0.01, 0)
    with pytest.raises(ValueError):
        synth.Experiment(small_experiment.recon_mesh, small_experiment.gen_mesh, small_experiment.inclusion,
                         [fem.F1, fem.F2], algorithm="alg3")
