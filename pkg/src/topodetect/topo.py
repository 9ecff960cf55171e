"""Polarization tensors and the nodal topological-gradient field."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fem
from .mesh import Mesh


@dataclass(frozen=True, eq=False)
class PolarizationTensor:
    """Symmetric 2x2 tensor of a reference shape with area ``area``.

    ``area`` also scales the reaction term of the topological gradient, so the
    field is proportional to the shape area and its minimiser does not depend on it.
    """

    m: np.ndarray
    kind: str = "custom"
    area: float = 1.0

    def __post_init__(self):
        m = np.array(self.m, dtype=float)
        if m.shape != (2, 2) or not np.all(np.isfinite(m)):
            raise ValueError("polarization tensor must be a finite 2x2 matrix")
        if m[0, 1] != m[1, 0]:
            raise ValueError("polarization tensor must be symmetric")
        m.setflags(write=False)
        object.__setattr__(self, "m", m)


def circle_tensor(k: float, area: float = 1.0) -> PolarizationTensor:
    """``2 |D| / (1 + k) * I`` for a disk of area ``area`` and conductivity ratio ``k``."""
    if k <= 0.0 or area <= 0.0:
        raise ValueError("k and area must be positive")
    return PolarizationTensor(2.0 * area / (1.0 + k) * np.eye(2), "circle", area)


def rotation(axis_dir) -> np.ndarray:
    nx, ny = axis_dir
    return np.array([[nx, -ny], [ny, nx]])


def ellipse_tensor(k: float, axis_dir, ratio: float, area: float = 1.0) -> PolarizationTensor:
    """Tensor of an ellipse with major axis along ``axis_dir`` and axis ratio ``ratio``.

    Normalised with a positive ``area`` prefactor so that ``ratio = 1`` gives
    exactly :func:`circle_tensor`.
    """
    if k <= 0.0 or area <= 0.0:
        raise ValueError("k and area must be positive")
    if not 0.0 < ratio <= 1.0:
        raise ValueError("ratio must lie in (0, 1]")
    nu = np.asarray(axis_dir, dtype=float)
    if abs(np.hypot(*nu) - 1.0) > 1e-12:
        raise ValueError("axis_dir must be a unit vector")
    r = ratio
    diag = np.diag([area * (1.0 + r) / (1.0 + k * r), area * (1.0 + r) / (r + k)])
    if r == 1.0:
        return PolarizationTensor(diag, "ellipse", area)
    # the major axis (first diagonal entry) is mapped onto axis_dir
    R = rotation(nu)
    m = R @ diag @ R.T
    m = 0.5 * (m + m.T)
    return PolarizationTensor(m, "ellipse", area)


def recover_nodal_gradient(mesh: Mesh, u) -> np.ndarray:
    """Area-weighted average of the element gradients around every node, shape (n, 2)."""
    u = np.asarray(u, dtype=float)
    if u.shape != (mesh.n_nodes,):
        raise ValueError("field does not match the mesh")
    g = fem._cached(mesh, "grads", fem.shape_gradients)
    ge = np.einsum("ea,ead->ed", u[mesh.triangles], g)
    w = np.repeat(mesh.areas, 3)
    idx = mesh.triangles.ravel()
    wsum = np.bincount(idx, w, minlength=mesh.n_nodes)
    out = np.empty((mesh.n_nodes, 2))
    for d in range(2):
        out[:, d] = np.bincount(idx, np.repeat(ge[:, d], 3) * w, minlength=mesh.n_nodes) / wsum
    return out


@dataclass
class GradientField:
    g: np.ndarray
    min_node: int
    min_value: float
    flat: bool = False
    scale: float = 0.0


@dataclass(frozen=True)
class Detection:
    point: tuple[float, float]
    node: int
    value: float
    boundary_violation: bool
    flat: bool
    unrestricted_node: int


def interior_nodes(mesh: Mesh, margin: float) -> np.ndarray:
    if margin < 0.0:
        raise ValueError("margin must be non-negative")
    idx = np.flatnonzero(mesh.boundary_distance >= margin)
    if len(idx) == 0:
        raise ValueError(f"no nodes at distance >= {margin} from the boundary")
    return idx


def field_scale(mesh: Mesh, U, k: float, tensor: PolarizationTensor) -> float:
    """Magnitude G would have if the adjoint state were as large as U itself."""
    U = np.asarray(U, dtype=float)
    gU = np.hypot(*recover_nodal_gradient(mesh, U).T).max()
    return float(abs(1.0 - k) * np.abs(tensor.m).max() * gU**2 + tensor.area * np.abs(U).max() ** 4)


FLAT_TOL = 1e-6


def topological_gradient(
    mesh: Mesh,
    U,
    W,
    k: float,
    tensor: PolarizationTensor,
    margin: float = fem.DEFAULT_MARGIN,
    grad_U=None,
) -> GradientField:
    """Nodal values of (1 - k) grad(U)^T M grad(W) + |D| U^3 W.

    ``grad_U`` may be passed to reuse a recovered gradient of the same ``U``.
    """
    U = np.asarray(U, dtype=float)
    W = np.asarray(W, dtype=float)
    if U.shape != (mesh.n_nodes,) or W.shape != (mesh.n_nodes,):
        raise ValueError("U and W must be nodal fields on the mesh")
    gU = recover_nodal_gradient(mesh, U) if grad_U is None else grad_U
    gW = recover_nodal_gradient(mesh, W)
    g = (1.0 - k) * np.einsum("nd,de,ne->n", gU, tensor.m, gW) + tensor.area * U**3 * W
    scale = field_scale(mesh, U, k, tensor)
    return make_field(mesh, g, margin, scale)


def make_field(mesh: Mesh, g, margin: float, scale: float) -> GradientField:
    g = np.asarray(g, dtype=float)
    idx = interior_nodes(mesh, margin)
    j = int(idx[np.argmin(g[idx])])
    flat = bool(np.abs(g).max() <= FLAT_TOL * scale) if scale > 0 else not np.any(g)
    return GradientField(g, j, float(g[j]), flat, scale)


def argmin_interior(field: GradientField, mesh: Mesh, margin: float = fem.DEFAULT_MARGIN) -> Detection:
    """Minimising node among nodes at distance >= ``margin`` from the boundary.

    Ties go to the lowest node index (``np.argmin`` semantics). The violation
    flag reports that the unrestricted minimiser sits inside the margin band.
    """
    g = field.g
    idx = interior_nodes(mesh, margin)
    j = int(idx[np.argmin(g[idx])])
    j_all = int(np.argmin(g))
    violation = bool(j_all != j and g[j_all] < g[j])
    flat = field.flat or bool(np.all(g == g[0]))
    x, y = mesh.nodes[j]
    return Detection((float(x), float(y)), j, float(g[j]), violation, flat, j_all)
