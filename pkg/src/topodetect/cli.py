"""Command-line front end: ``topodetect {mesh,generate,reconstruct,validate,campaign}``.

Exit codes: 0 success, 1 solver/IO/config error, 2 detection on the boundary.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import mesh as meshmod
from . import recon, solver, synth, topo
from .config import SCHEMA, ConfigError, RunConfig, parse_config_text
from .fem import SourceTerm
from .mesh import TWO_PI, Mesh

log = logging.getLogger("topodetect")

EXIT_OK, EXIT_ERROR, EXIT_BOUNDARY = 0, 1, 2


class CliError(RuntimeError):
    pass


class _Parser(argparse.ArgumentParser):
    # usage errors are configuration errors, not detection failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _outdir(cfg: RunConfig) -> Path:
    d = Path(cfg["output.dir"])
    d.mkdir(parents=True, exist_ok=True)
    return d


def _config_comment(cfg: RunConfig) -> str:
    return "# config: " + json.dumps(cfg.to_dict(), sort_keys=True) + "\n"


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# measurement files


def write_measurement_csv(path: Path, mesh: Mesh, values, cfg: RunConfig) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(_config_comment(cfg))
        w = csv.writer(fh)
        w.writerow(["angle", "value"])
        for a, v in zip(mesh.boundary_node_angles, values):
            w.writerow([repr(float(a)), repr(float(v))])


def read_measurement_csv(path) -> tuple[np.ndarray, np.ndarray]:
    angles, values = [], []
    header_seen = False
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            parts = [p.strip() for p in s.split(",")]
            if not header_seen:
                if parts != ["angle", "value"]:
                    raise CliError(f"{path}:{lineno}: expected header 'angle,value'")
                header_seen = True
                continue
            if len(parts) != 2:
                raise CliError(f"{path}:{lineno}: expected 2 columns, got {len(parts)}")
            try:
                a, v = float(parts[0]), float(parts[1])
            except ValueError:
                raise CliError(f"{path}:{lineno}: cannot parse {s!r}") from None
            if not (np.isfinite(a) and np.isfinite(v)):
                raise CliError(f"{path}:{lineno}: non-finite value")
            angles.append(a)
            values.append(v)
    if not values:
        raise CliError(f"{path}: no data rows")
    return np.array(angles), np.array(values)


def data_on_mesh(mesh: Mesh, angles, values) -> np.ndarray:
    """Boundary data in the mesh's cycle order; interpolated in angle unless the nodes coincide."""
    ref = mesh.boundary_node_angles
    if len(angles) == len(ref) and np.allclose(angles, ref, rtol=0.0, atol=1e-12):
        return np.asarray(values, dtype=float)
    a = np.mod(angles, TWO_PI)
    order = np.argsort(a, kind="stable")
    return np.interp(ref, a[order], np.asarray(values)[order], period=TWO_PI)


# ---------------------------------------------------------------------------
# commands


def cmd_mesh(cfg: RunConfig, args) -> int:
    which = args.which
    m = cfg.gen_mesh() if which == "gen" else cfg.recon_mesh()
    out = _outdir(cfg) / (args.name or f"{which}_mesh.txt")
    meshmod.save_mesh(m, out, "config: " + json.dumps(cfg.to_dict(), sort_keys=True))
    print(f"{out}: {m.n_nodes} nodes, {m.n_triangles} triangles, {len(m.boundary_edges)} boundary edges, "
          f"max edge {m.max_edge_length:.4g}")
    return EXIT_OK


def cmd_generate(cfg: RunConfig, args) -> int:
    out = _outdir(cfg)
    rm, gm = cfg.recon_mesh(), cfg.gen_mesh()
    inc = cfg.inclusion()
    noise = cfg.noise()
    entries = []
    for i, f in enumerate(cfg.source_terms()):
        trace = synth.clean_trace(inc, f, gm, cfg.newton(), cfg["margin"])
        data = synth.apply_noise(synth.transfer_trace(gm, trace, rm), synth.source_noise(noise, i))
        name = f"meas_{i + 1}.csv"
        write_measurement_csv(out / name, rm, data, cfg)
        entries.append({"source": str(f), "file": name, "n_values": len(data)})
    manifest = {
        "config": cfg.to_dict(),
        "truth": None if inc is None else {
            "center": list(inc.center), "scale": inc.scale, "shape": inc.shape, "k_in": inc.k_in,
        },
        "noise": "none" if noise is None else {"p": noise.p, "seed": noise.seed},
        "recon_mesh": {"n_nodes": rm.n_nodes, "n_triangles": rm.n_triangles, "n_boundary": len(rm.boundary_edges)},
        "gen_mesh": {"n_nodes": gm.n_nodes, "n_triangles": gm.n_triangles, "n_boundary": len(gm.boundary_edges)},
        "measurements": entries,
    }
    _write_json(out / "manifest.json", manifest)
    print(f"wrote {len(entries)} measurement files and manifest.json to {out}")
    return EXIT_OK


def _load_manifest(path) -> dict:
    try:
        manifest = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(manifest, dict) or not isinstance(manifest.get("measurements"), list):
        raise CliError(f"{path}: manifest has no 'measurements' list")
    return manifest


def cmd_reconstruct(cfg: RunConfig, args) -> int:
    manifest_path = Path(args.manifest)
    manifest = _load_manifest(manifest_path)
    m = cfg.recon_mesh()
    ms = []
    for entry in manifest["measurements"]:
        try:
            f = SourceTerm.parse(entry["source"])
            file = manifest_path.parent / entry["file"]
        except (KeyError, TypeError) as exc:
            raise CliError(f"{manifest_path}: malformed measurement entry {entry!r}") from exc
        angles, values = read_measurement_csv(file)
        ms.append(recon.Measurement(f, data_on_mesh(m, angles, values)))
    if not ms:
        raise CliError(f"{manifest_path}: no measurements listed")
    rc = cfg.recon()
    alg = cfg["algorithm"]
    part = cfg.partition()
    if alg == "alg1":
        first = ms[0] if part is None else recon.Measurement(ms[0].source, ms[0].boundary_data, part)
        res = recon.run_algorithm1(m, first, rc)
    elif alg == "alg2":
        res = recon.run_algorithm2(m, ms, rc)
    else:
        if part is None:
            raise CliError("alg3 needs partition.n_arcs > 0")
        res = recon.run_algorithm3(m, ms[0].source, recon.split_by_arcs(ms[0], part), rc)
    truth = (manifest.get("truth") or {}).get("center")
    out = _outdir(cfg)
    payload = recon.result_to_dict(res, cfg.to_dict(), truth)
    if not cfg["output.timings"]:
        payload.pop("timings", None)
    _write_json(out / "report.json", payload)
    recon.write_field_csv(out / "field.csv", m, res, cfg.to_dict())
    if cfg["output.gnuplot"]:
        recon.write_gnuplot_stub(out / "field.gp", "field.csv")
    msg = f"detected center ({res.detected_center[0]:.4f}, {res.detected_center[1]:.4f})"
    if truth is not None:
        msg += f", error {res.error_to(truth):.4f}"
    for w in res.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(msg)
    if res.boundary_violation_flag:
        print("detection failed: the minimum of G lies in the boundary band", file=sys.stderr)
        return EXIT_BOUNDARY
    return EXIT_OK


def cmd_validate(cfg: RunConfig, args) -> int:
    m = cfg.recon_mesh()
    f = cfg.source_terms()[0]
    inc = cfg.inclusion()
    data = synth.apply_noise(synth.clean_trace(inc, f, m, cfg.newton(), cfg["margin"]), cfg.noise())
    ctx = synth.OracleContext(m, f, data, cfg["k_in"], None, cfg.newton(), cfg["margin"])
    eps = list(cfg["validate.eps"])
    G = synth.gradient_for_context(ctx, cfg.tensor())
    probes = list(cfg["validate.probes"])
    if not probes:
        if inc is not None:
            probes.append(inc.center)
        idx = topo.interior_nodes(m, cfg["margin"] + max(eps))
        j = int(idx[np.argmin(G[idx])])
        probes.append(tuple(m.nodes[j]))
        probes += synth.random_interior_points(cfg["validate.n_random"], cfg["margin"] + max(eps) + 0.01,
                                               cfg["validate.seed"])
    reports = synth.probe_oracle(ctx, probes, eps, G)
    payload = {
        "config": cfg.to_dict(),
        "source": str(f),
        "j0": ctx.j0,
        "expected_misfit_slope": 2.0,
        "expected_boundary_slope": 2.0,
        "probes": [r.to_dict() for r in reports],
    }
    _write_json(_outdir(cfg) / "validate.json", payload)
    for r in reports:
        print(f"z=({r.point[0]:.3f},{r.point[1]:.3f}) G={r.G:.4e} ratio={r.ratio_at_min_eps:.4e} "
              f"pred={r.predicted_ratio:.4e} slope={r.misfit_slope:.3f} boundary_slope={r.boundary_slope:.3f}")
    return EXIT_OK


def cmd_campaign(cfg: RunConfig, args) -> int:
    inc = cfg.inclusion()
    if inc is None:
        raise CliError("a campaign needs a planted inclusion")
    sources = cfg.source_terms()
    if cfg["algorithm"] == "alg3":
        sources = sources[:1]
    ex = synth.Experiment(cfg.recon_mesh(), cfg.gen_mesh(), inc, sources, cfg["algorithm"], cfg.partition(), cfg.recon())
    res = synth.run_campaign(ex, cfg["noise.p"], cfg["campaign.n_runs"], cfg["campaign.base_seed"])
    out = _outdir(cfg)
    synth.write_campaign(out / "campaign.json", out / "campaign_runs.csv", res, cfg.to_dict())
    print(f"p={res.p}: mean error {res.mean_error:.4f}, failure rate {res.failure_rate:.2f} "
          f"over {len(res.runs)} runs (seeds {res.runs[0].seed}..{res.runs[-1].seed})")
    return EXIT_OK


COMMANDS = {
    "mesh": (cmd_mesh, "generate a disk mesh and save it"),
    "generate": (cmd_generate, "write synthetic measurement files and a manifest"),
    "reconstruct": (cmd_reconstruct, "detect the inclusion from measurement files"),
    "validate": (cmd_validate, "compare the brute-force oracle with the topological gradient"),
    "campaign": (cmd_campaign, "repeat a reconstruction over noise seeds"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat 'key = value' config file")
    common.add_argument("-v", "--verbose", action="store_true")
    for key, (_, default, help_) in SCHEMA.items():
        common.add_argument(f"--{key}", dest=key, default=None, metavar="VALUE",
                            help=f"{help_} (default: {default or 'empty'})")
    p = _Parser(prog="topodetect", description="Topological-gradient detection of small inclusions.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, help_) in COMMANDS.items():
        sp = sub.add_parser(name, parents=[common], help=help_)
        if name == "mesh":
            sp.add_argument("--which", choices=("recon", "gen"), default="recon")
            sp.add_argument("--name", help="output file name inside output.dir")
        if name == "reconstruct":
            sp.add_argument("manifest", help="manifest.json written by 'generate'")
    return p


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.defaults()
    if getattr(args, "manifest", None):
        # the manifest's config is the baseline so that reconstruct reuses the generating setup
        manifest = _load_manifest(args.manifest)
        base = manifest.get("config") or {}
        cfg = RunConfig.from_dict(base)
    if args.config:
        cfg.update(parse_config_text(Path(args.config).read_text(), args.config))
    cfg.update({k: getattr(args, k) for k in SCHEMA if getattr(args, k, None) is not None})
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command][0](cfg, args)
    except (CliError, ConfigError, meshmod.MeshError, recon.ReconstructionError, solver.NewtonError,
            ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
