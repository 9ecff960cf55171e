"""Run configuration: flat ``key = value`` files with dotted keys, overridable from the command line."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from . import fem, mesh, recon, synth, topo
from .fem import InclusionSpec, SourceTerm
from .solver import NewtonConfig


class ConfigError(ValueError):
    pass


def _floats(text: str, n: int | None = None) -> tuple[float, ...]:
    parts = [p for p in text.replace(";", ",").split(",") if p.strip()]
    vals = tuple(float(p) for p in parts)
    if n is not None and len(vals) != n:
        raise ValueError(f"expected {n} numbers, got {len(vals)}")
    return vals


def _point(text: str) -> tuple[float, float]:
    return _floats(text, 2)


def _points(text: str) -> tuple[tuple[float, float], ...]:
    return tuple(_point(p) for p in text.split(";") if p.strip())


def _sources(text: str) -> tuple[str, ...]:
    items = tuple(p.strip() for p in text.split(";") if p.strip())
    for it in items:
        SourceTerm.parse(it)
    return items


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _choice(*options):
    def conv(text: str) -> str:
        t = text.strip()
        if t not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {t!r}")
        return t
    return conv


def _str(text: str) -> str:
    return text.strip()


# key -> (converter, default text, help)
SCHEMA: dict[str, tuple] = {
    "mesh.h": (float, "0.012", "target edge length of the reconstruction mesh"),
    "mesh.seed": (int, "0", "refinement seed of the reconstruction mesh"),
    "mesh.file": (_str, "", "load the reconstruction mesh from this file instead of generating it"),
    "mesh.max_nodes": (int, str(mesh.MAX_NODES), "node-count cap for generated meshes"),
    "gen.h": (float, "0.008", "target edge length of the data-generation mesh"),
    "gen.seed": (int, "7", "refinement seed of the data-generation mesh"),
    "gen.file": (_str, "", "load the data-generation mesh from this file"),
    "inclusion.center": (_point, "0.2,-0.2", "true inclusion center x,y"),
    "inclusion.radius": (float, "0.04", "inclusion scale (radius for circles)"),
    "inclusion.shape": (_choice("circle", "ellipse", "polygon", "none"), "circle", "inclusion shape"),
    "inclusion.ratio": (float, "1.0", "ellipse axis ratio"),
    "inclusion.axis": (_point, "1,0", "ellipse major-axis direction"),
    "inclusion.vertices": (_points, "", "polygon vertices at unit scale, 'x,y;x,y;...'"),
    "sources": (_sources, "F1;F2;F3;F4", "source terms separated by ';'"),
    "algorithm": (_choice("alg1", "alg2", "alg3"), "alg2", "reconstruction algorithm"),
    "partition.n_arcs": (int, "0", "number of measurement arcs (0 = full boundary)"),
    "partition.ell": (float, repr(1.0 / 48.0), "arc length as a fraction of the perimeter"),
    "partition.offset": (float, "0.0", "angle of the center of the first arc"),
    "k_in": (float, repr(fem.DEFAULT_K_IN), "conductivity inside the inclusion"),
    "margin": (float, repr(fem.DEFAULT_MARGIN), "minimum distance of detections from the boundary"),
    "tensor.shape": (_choice("circle", "ellipse"), "circle", "reference shape of the polarization tensor"),
    "tensor.ratio": (float, "1.0", "ellipse tensor axis ratio"),
    "tensor.axis": (_point, "1,0", "ellipse tensor major-axis direction"),
    "weights": (_choice("misfit", "uniform"), "misfit", "aggregation weights: misfit / |min G| or uniform"),
    "incremental": (_bool, "false", "add sources one at a time and stop when the detection settles"),
    "stop_tol": (float, "0.02", "center movement below which incremental mode stops"),
    "newton.abs_tol": (float, "1e-10", "Newton residual tolerance"),
    "newton.max_iter": (int, "25", "Newton iteration cap"),
    "newton.damping": (float, "1.0", "initial Newton step length"),
    "newton.max_halvings": (int, "8", "line-search halvings per iteration"),
    "newton.singular_shift": (float, "1.0", "mass shift used while the iterate is zero"),
    "newton.linear_rtol": (float, "1e-08", "relative residual required of each Newton step solve"),
    "noise.p": (float, "0.0", "multiplicative noise level as a fraction"),
    "noise.seed": (int, "0", "noise seed"),
    "campaign.n_runs": (int, "20", "runs per campaign"),
    "campaign.base_seed": (int, "0", "seed of the first campaign run"),
    "validate.probes": (_points, "", "oracle probe points 'x,y;x,y' (empty = defaults)"),
    "validate.eps": (lambda t: _floats(t), "0.02;0.04;0.08", "oracle inclusion radii"),
    "validate.seed": (int, "0", "seed for random probe points"),
    "validate.n_random": (int, "3", "number of random interior probes"),
    "output.dir": (_str, "out", "output directory"),
    "output.gnuplot": (_bool, "false", "also write a gnuplot script for the field CSV"),
    "output.timings": (_bool, "false", "include wall-clock timings in reports (breaks byte-identical reruns)"),
}


def _convert(key: str, text: str):
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        return SCHEMA[key][0](text)
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from None


def _jsonable(v):
    if isinstance(v, tuple):
        return [_jsonable(x) for x in v]
    return v


@dataclass
class RunConfig:
    values: dict

    @classmethod
    def defaults(cls) -> "RunConfig":
        return cls({k: _convert(k, spec[1]) for k, spec in SCHEMA.items()})

    @classmethod
    def load(cls, path=None, overrides: dict[str, str] | None = None) -> "RunConfig":
        cfg = cls.defaults()
        if path is not None:
            cfg.update(parse_config_text(Path(path).read_text(), str(path)))
        if overrides:
            cfg.update(overrides)
        return cfg

    def update(self, raw: dict[str, str]) -> None:
        for k, v in raw.items():
            self.values[k] = _convert(k, v)

    def __getitem__(self, key):
        return self.values[key]

    def to_dict(self) -> dict:
        return {k: _jsonable(self.values[k]) for k in sorted(self.values)}

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        """Inverse of :meth:`to_dict`; keys not in the schema are ignored."""
        return cls.load(None, {k: value_text(k, v) for k, v in d.items() if k in SCHEMA})

    def to_text(self) -> str:
        return "".join(f"{k} = {value_text(k, self.values[k])}\n" for k in sorted(self.values))

    # -- builders ---------------------------------------------------------

    def newton(self) -> NewtonConfig:
        return NewtonConfig(
            self["newton.abs_tol"], self["newton.max_iter"], self["newton.damping"],
            self["newton.max_halvings"], self["newton.singular_shift"], self["newton.linear_rtol"],
        )

    def source_terms(self) -> list[SourceTerm]:
        return [SourceTerm.parse(s) for s in self["sources"]]

    def inclusion(self) -> InclusionSpec | None:
        if self["inclusion.shape"] == "none":
            return None
        return InclusionSpec(
            self["inclusion.center"], self["inclusion.radius"], self["inclusion.shape"], self["k_in"],
            self["inclusion.ratio"], self["inclusion.axis"], self["inclusion.vertices"],
        )

    def tensor(self) -> topo.PolarizationTensor:
        if self["tensor.shape"] == "circle":
            return topo.circle_tensor(self["k_in"])
        ax = self["tensor.axis"]
        n = (ax[0] ** 2 + ax[1] ** 2) ** 0.5
        return topo.ellipse_tensor(self["k_in"], (ax[0] / n, ax[1] / n), self["tensor.ratio"])

    def recon(self) -> recon.ReconConfig:
        return recon.ReconConfig(
            self["k_in"], self["margin"], self.tensor(), self.newton(), self["weights"],
            self["incremental"], self["stop_tol"],
        )

    def partition(self) -> mesh.BoundaryPartition | None:
        n = self["partition.n_arcs"]
        if n == 0:
            return None
        return mesh.build_partition(n, self["partition.ell"], self["partition.offset"])

    def noise(self) -> synth.NoiseSpec | None:
        return synth.NoiseSpec(self["noise.p"], self["noise.seed"]) if self["noise.p"] > 0 else None

    def _mesh(self, prefix: str, max_nodes_key: str = "mesh.max_nodes") -> mesh.Mesh:
        if self[f"{prefix}.file"]:
            return mesh.load_mesh(self[f"{prefix}.file"])
        return mesh.generate_disk_mesh(self[f"{prefix}.h"], self[f"{prefix}.seed"], max_nodes=self[max_nodes_key])

    def recon_mesh(self) -> mesh.Mesh:
        return self._mesh("mesh")

    def gen_mesh(self) -> mesh.Mesh:
        return self._mesh("gen")


def value_text(key: str, v) -> str:
    """Config-file text for a typed value (tuples or JSON lists)."""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        if v and isinstance(v[0], (list, tuple)):
            return ";".join(",".join(repr(float(c)) for c in p) for p in v)
        if key in ("sources", "validate.eps"):
            return ";".join(c if isinstance(c, str) else repr(float(c)) for c in v)
        return ",".join(repr(float(c)) for c in v)
    return repr(v) if isinstance(v, float) else str(v)


def parse_config_text(text: str, name: str = "<config>") -> dict[str, str]:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{name}:{n}: expected 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        if k not in SCHEMA:
            raise ConfigError(f"{name}:{n}: unknown config key {k!r}")
        out[k] = v
    return out


def dumps(cfg: RunConfig) -> str:
    return json.dumps(cfg.to_dict(), sort_keys=True)
