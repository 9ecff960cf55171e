"""P1 finite-element assembly for -div(k grad u) + chi u^3 = f with Neumann data."""

from __future__ import annotations

import math
import re
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import shapely
from scipy.sparse.linalg import splu

from .mesh import Mesh

K_OUT = 1.0
DEFAULT_K_IN = 0.1
DEFAULT_MARGIN = 0.05

# interior 3-point rule, exact for quadratics; rows are barycentric coordinates
QUAD_BARY = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
QUAD_WEIGHTS = np.full(3, 1 / 3)


class SingularSystemError(RuntimeError):
    """A linear system could not be solved to the required accuracy."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class SeparationError(ValueError):
    """The inclusion is closer to the boundary than the separation margin."""


# ---------------------------------------------------------------------------
# source terms

_SOURCE_RE = re.compile(r"^\s*(\w+)\s*(?:\(([^)]*)\))?\s*$")


@dataclass(frozen=True)
class SourceTerm:
    kind: str
    params: tuple[float, ...] = ()

    def __post_init__(self):
        kind = self.kind.upper() if self.kind.upper() in {"F1", "F2", "F3", "F4"} else self.kind.capitalize()
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        nparams = {"F1": 0, "F2": 0, "F3": 0, "F4": 0, "Bump": 3, "Constant": 1}
        if kind not in nparams:
            raise ValueError(f"unknown source term {self.kind!r}")
        if len(self.params) != nparams[kind]:
            raise ValueError(f"{kind} takes {nparams[kind]} parameters, got {len(self.params)}")
        if kind == "Bump":
            xs, ys, rs = self.params
            if rs <= 0.0:
                raise ValueError("Bump radius must be positive")
            if math.hypot(xs, ys) >= 1.0:
                raise ValueError("Bump centre must lie inside the unit disk")

    @classmethod
    def parse(cls, text: str) -> "SourceTerm":
        m = _SOURCE_RE.match(text)
        if not m:
            raise ValueError(f"cannot parse source term {text!r}")
        args = [float(a) for a in m.group(2).split(",")] if m.group(2) else []
        return cls(m.group(1), tuple(args))

    def __str__(self) -> str:
        if not self.params:
            return self.kind
        return f"{self.kind}({','.join(repr(p) for p in self.params)})"

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        k = self.kind
        if k == "F1":
            return x.copy()
        if k == "F2":
            return y.copy()
        if k == "F3":
            return x * y
        if k == "F4":
            return 0.5 * (x * x - y * y)
        if k == "Constant":
            return np.full(np.broadcast(x, y).shape, self.params[0])
        xs, ys, rs = self.params
        d2 = (x - xs) ** 2 + (y - ys) ** 2
        with np.errstate(divide="ignore", over="ignore"):
            return 1.0 - np.exp(-(rs * rs) / d2)


F1, F2, F3, F4 = (SourceTerm(k) for k in ("F1", "F2", "F3", "F4"))


# ---------------------------------------------------------------------------
# inclusions


@dataclass(frozen=True)
class InclusionSpec:
    """Inclusion ``center + scale * D`` with conductivity ``k_in``.

    ``D`` is the unit disk for ``circle``; for ``ellipse`` it has semi-axes 1 and
    ``ratio`` with the major axis along ``axis``; for ``polygon`` it is the polygon
    with ``vertices`` (listed counterclockwise, unit scale).
    """

    center: tuple[float, float]
    scale: float
    shape: str = "circle"
    k_in: float = DEFAULT_K_IN
    ratio: float = 1.0
    axis: tuple[float, float] = (1.0, 0.0)
    vertices: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if self.shape not in ("circle", "ellipse", "polygon"):
            raise ValueError(f"unknown inclusion shape {self.shape!r}")
        if self.scale <= 0.0:
            raise ValueError("inclusion scale must be positive")
        if self.k_in <= 0.0:
            raise ValueError("k_in must be positive")
        if self.shape == "ellipse":
            if not 0.0 < self.ratio <= 1.0:
                raise ValueError("ellipse ratio must lie in (0, 1]")
            n = math.hypot(*self.axis)
            object.__setattr__(self, "axis", (self.axis[0] / n, self.axis[1] / n))
        if self.shape == "polygon" and len(self.vertices) < 3:
            raise ValueError("polygon inclusion needs at least 3 vertices")

    @property
    def area(self) -> float:
        if self.shape == "circle":
            return math.pi * self.scale**2
        if self.shape == "ellipse":
            return math.pi * self.ratio * self.scale**2
        return self._polygon().area

    def _polygon(self):
        v = np.asarray(self.vertices, dtype=float) * self.scale + np.asarray(self.center)
        return shapely.Polygon(v)

    def contains(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=float) - np.asarray(self.center)
        if self.shape == "circle":
            return np.einsum("ij,ij->i", p, p) < self.scale**2
        if self.shape == "ellipse":
            nx, ny = self.axis
            s = p[:, 0] * nx + p[:, 1] * ny
            t = -p[:, 0] * ny + p[:, 1] * nx
            return (s / self.scale) ** 2 + (t / (self.ratio * self.scale)) ** 2 < 1.0
        pts = np.asarray(points, dtype=float)
        return shapely.contains_xy(self._polygon(), pts[:, 0], pts[:, 1])

    def outline(self, n: int = 128) -> np.ndarray:
        if self.shape == "polygon":
            return np.asarray(self._polygon().exterior.coords)[:-1]
        t = np.linspace(0.0, 2.0 * math.pi, n, endpoint=False)
        s, q = self.scale * np.cos(t), self.scale * self.ratio * np.sin(t)
        if self.shape == "circle":
            q = self.scale * np.sin(t)
        nx, ny = self.axis
        return np.column_stack([s * nx - q * ny, s * ny + q * nx]) + np.asarray(self.center)

    def boundary_distance(self, mesh: Mesh) -> float:
        """Distance from the inclusion to the mesh boundary (negative if it pokes outside)."""
        domain = shapely.Polygon(mesh.nodes[mesh.boundary_nodes])
        region = shapely.Polygon(self.outline())
        if not domain.contains(region):
            return -1.0
        return float(domain.exterior.distance(region))


@dataclass(frozen=True, eq=False)
class CoefficientField:
    """Per-element conductivity ``k`` and reaction indicator ``chi``."""

    k: np.ndarray
    chi: np.ndarray
    unresolved: bool = False
    inclusion_area: float = 0.0


def classify_elements(
    mesh: Mesh, inclusion: InclusionSpec | None, margin: float = DEFAULT_MARGIN
) -> CoefficientField:
    """Assign ``k_in`` and ``chi = 0`` to elements whose centroid lies in the inclusion."""
    m = mesh.n_triangles
    if inclusion is None:
        return CoefficientField(np.full(m, K_OUT), np.ones(m))
    dist = inclusion.boundary_distance(mesh)
    if dist < margin:
        raise SeparationError(
            f"inclusion at {inclusion.center} is {dist:.4f} from the boundary (< margin {margin})"
        )
    inside = inclusion.contains(mesh.centroids)
    k = np.where(inside, inclusion.k_in, K_OUT)
    chi = np.where(inside, 0.0, 1.0)
    unresolved = not inside.any()
    if unresolved:
        warnings.warn(f"inclusion at {inclusion.center} contains no element centroid", stacklevel=2)
    return CoefficientField(k, chi, unresolved, float(mesh.areas[inside].sum()))


# ---------------------------------------------------------------------------
# element quantities


def shape_gradients(mesh: Mesh) -> np.ndarray:
    """Constant gradients of the three barycentric basis functions, shape (m, 3, 2)."""
    p = mesh.nodes[mesh.triangles]
    area2 = 2.0 * mesh.areas
    grads = np.empty((mesh.n_triangles, 3, 2))
    for a in range(3):
        b, c = (a + 1) % 3, (a + 2) % 3
        grads[:, a, 0] = (p[:, b, 1] - p[:, c, 1]) / area2
        grads[:, a, 1] = (p[:, c, 0] - p[:, b, 0]) / area2
    return grads


def _cached(mesh: Mesh, name: str, fn):
    cache = mesh.__dict__.setdefault("_fem_cache", {})
    if name not in cache:
        cache[name] = fn(mesh)
    return cache[name]


def _assemble(mesh: Mesh, local: np.ndarray) -> sp.csr_matrix:
    n = mesh.n_nodes
    rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
    cols = np.tile(mesh.triangles, (1, 3)).ravel()
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def _symmetric(local: np.ndarray) -> np.ndarray:
    return 0.5 * (local + local.transpose(0, 2, 1))


def assemble_stiffness(mesh: Mesh, coeff: CoefficientField | None = None) -> sp.csr_matrix:
    """Stiffness matrix of int k grad(u) . grad(v)."""
    g = _cached(mesh, "grads", shape_gradients)
    k = np.full(mesh.n_triangles, K_OUT) if coeff is None else coeff.k
    local = np.einsum("ead,ebd->eab", g, g) * (k * mesh.areas)[:, None, None]
    return _assemble(mesh, _symmetric(local))


def quadrature_values(mesh: Mesh, u: np.ndarray) -> np.ndarray:
    """Values of the P1 interpolant of ``u`` at the quadrature points, shape (m, 3)."""
    return u[mesh.triangles] @ QUAD_BARY.T


def quadrature_points(mesh: Mesh) -> np.ndarray:
    return np.einsum("qa,ead->eqd", QUAD_BARY, mesh.nodes[mesh.triangles])


def _check_field(mesh: Mesh, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape != (mesh.n_nodes,):
        raise ValueError(f"nodal field has shape {u.shape}, mesh has {mesh.n_nodes} nodes")
    return u


def assemble_weighted_mass(mesh: Mesh, weight_q: np.ndarray) -> sp.csr_matrix:
    """Matrix of int w(x) u v with ``w`` given at quadrature points, shape (m, 3)."""
    wq = weight_q * (QUAD_WEIGHTS * mesh.areas[:, None])
    local = np.einsum("eq,qa,qb->eab", wq, QUAD_BARY, QUAD_BARY)
    return _assemble(mesh, _symmetric(local))


def assemble_mass(mesh: Mesh) -> sp.csr_matrix:
    return assemble_weighted_mass(mesh, np.ones((mesh.n_triangles, 3)))


def lumped_mass(mesh: Mesh) -> np.ndarray:
    return np.bincount(mesh.triangles.ravel(), np.repeat(mesh.areas / 3.0, 3), minlength=mesh.n_nodes)


def assemble_reaction_linearized(
    mesh: Mesh, coeff: CoefficientField | None, U, factor: float = 3.0
) -> sp.csr_matrix:
    """Matrix of int chi * factor * U^2 u v (the Jacobian of the cubic term for factor 3)."""
    U = _check_field(mesh, U)
    chi = np.ones(mesh.n_triangles) if coeff is None else coeff.chi
    uq = quadrature_values(mesh, U)
    return assemble_weighted_mass(mesh, factor * chi[:, None] * uq * uq)


def assemble_load(mesh: Mesh, f: SourceTerm) -> np.ndarray:
    """Vector of int f phi_i."""
    xq = quadrature_points(mesh)
    fq = f(xq[..., 0], xq[..., 1]) * (QUAD_WEIGHTS * mesh.areas[:, None])
    local = fq @ QUAD_BARY
    return np.bincount(mesh.triangles.ravel(), local.ravel(), minlength=mesh.n_nodes)


def assemble_cubic(mesh: Mesh, coeff: CoefficientField | None, u) -> np.ndarray:
    """Vector of int chi u^3 phi_i with u interpolated at the quadrature points."""
    chi = np.ones(mesh.n_triangles) if coeff is None else coeff.chi
    uq = quadrature_values(mesh, u)
    local = (chi[:, None] * uq**3 * (QUAD_WEIGHTS * mesh.areas[:, None])) @ QUAD_BARY
    return np.bincount(mesh.triangles.ravel(), local.ravel(), minlength=mesh.n_nodes)


def assemble_nonlinear_residual(
    mesh: Mesh, coeff: CoefficientField | None, u, f: SourceTerm, *, stiffness=None, load=None
) -> np.ndarray:
    """Residual K(k) u + int chi u^3 phi_i - int f phi_i of the discrete state equation."""
    u = _check_field(mesh, u)
    K = assemble_stiffness(mesh, coeff) if stiffness is None else stiffness
    F = assemble_load(mesh, f) if load is None else load
    return K @ u + assemble_cubic(mesh, coeff, u) - F


def assemble_boundary_load(mesh: Mesh, g, mask=None) -> np.ndarray:
    """Vector of int_{boundary (in mask)} g phi_i for boundary values ``g`` in cycle order.

    ``mask`` is a BoundaryPartition, a boolean per-boundary-edge array, or None.
    """
    g = np.asarray(g, dtype=float)
    nb = len(mesh.boundary_edges)
    if g.shape != (nb,):
        raise ValueError(f"boundary data has shape {g.shape}, mesh has {nb} boundary nodes")
    L = mesh.boundary_edge_lengths
    if mask is not None:
        emask = mask.edge_mask(mesh) if hasattr(mask, "edge_mask") else np.asarray(mask, dtype=bool)
        L = np.where(emask, L, 0.0)
    ga, gb = g, np.roll(g, -1)
    ea, eb = mesh.boundary_edges[:, 0], mesh.boundary_edges[:, 1]
    out = np.zeros(mesh.n_nodes)
    np.add.at(out, ea, L * (2.0 * ga + gb) / 6.0)
    np.add.at(out, eb, L * (ga + 2.0 * gb) / 6.0)
    return out


# ---------------------------------------------------------------------------
# linear solver


def solve_sparse(A, b, reg: float = 0.0, mass_diag=None, rtol: float = 1e-10) -> np.ndarray:
    """Direct sparse solve of ``(A + reg*diag(mass_diag)) x = b``.

    Raises SingularSystemError when ``A`` annihilates constants and no
    regularisation was requested, or when the residual check fails.
    """
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    n = A.shape[0]
    if reg < 0.0:
        raise ValueError("reg must be non-negative")
    if reg > 0.0:
        d = np.ones(n) if mass_diag is None else np.asarray(mass_diag, dtype=float)
        A = A + sp.diags(reg * d)
    scale = abs(A).sum(axis=1).max() if A.nnz else 0.0
    diag = {"n": n, "nnz": int(A.nnz), "row_abs_max": float(scale)}
    if scale == 0.0:
        raise SingularSystemError("zero matrix", diag)
    if np.abs(A @ np.ones(n)).max() <= 1e-12 * scale:
        diag["constant_kernel"] = True
        raise SingularSystemError("matrix annihilates constants (pure Neumann operator without reaction)", diag)
    try:
        lu = splu(A.tocsc())
    except RuntimeError as exc:
        raise SingularSystemError(f"factorisation failed: {exc}", diag) from exc
    x = lu.solve(b)
    bn = np.linalg.norm(b)
    r = b - A @ x
    res = np.linalg.norm(r)
    # iterative refinement for ill-conditioned (weak reaction) systems
    for _ in range(3):
        if not np.all(np.isfinite(x)) or res <= rtol * bn:
            break
        x = x + lu.solve(r)
        r = b - A @ x
        res = np.linalg.norm(r)
    diag["relative_residual"] = float(res / bn) if bn > 0 else float(res)
    if not np.all(np.isfinite(x)) or (bn > 0 and res > rtol * bn):
        raise SingularSystemError(f"linear solve inaccurate (relative residual {res / max(bn, 1e-300):.2e})", diag)
    return x
