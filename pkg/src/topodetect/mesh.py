"""Triangular meshes of the unit disk and boundary-arc partitions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay

TWO_PI = 2.0 * math.pi

MAX_NODES = 2_000_000


class MeshError(ValueError):
    """Raised for invalid mesh data or unreadable mesh files."""


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming P1 triangulation.

    ``boundary_edges`` are stored as a single closed counterclockwise cycle, so
    ``boundary_nodes`` (the first node of every edge) is the boundary node list in
    cycle order.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=float)
        tris = np.ascontiguousarray(self.triangles, dtype=np.int64)
        edges = np.ascontiguousarray(self.boundary_edges, dtype=np.int64)
        for name, arr in (("nodes", nodes), ("triangles", tris), ("boundary_edges", edges)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        validate_mesh(self)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def boundary_nodes(self) -> np.ndarray:
        return self.boundary_edges[:, 0].copy()

    @cached_property
    def boundary_node_flags(self) -> np.ndarray:
        flags = np.zeros(self.n_nodes, dtype=bool)
        flags[self.boundary_nodes] = True
        return flags

    @cached_property
    def boundary_edge_lengths(self) -> np.ndarray:
        a, b = self.nodes[self.boundary_edges[:, 0]], self.nodes[self.boundary_edges[:, 1]]
        return np.hypot(*(b - a).T)

    @cached_property
    def arc_mid_angles(self) -> np.ndarray:
        """Polar angle in [0, 2pi) of every boundary edge midpoint."""
        mid = 0.5 * (self.nodes[self.boundary_edges[:, 0]] + self.nodes[self.boundary_edges[:, 1]])
        return np.mod(np.arctan2(mid[:, 1], mid[:, 0]), TWO_PI)

    @cached_property
    def boundary_node_angles(self) -> np.ndarray:
        p = self.nodes[self.boundary_nodes]
        return np.mod(np.arctan2(p[:, 1], p[:, 0]), TWO_PI)

    @cached_property
    def areas(self) -> np.ndarray:
        return signed_areas(self.nodes, self.triangles)

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.nodes[self.triangles].mean(axis=1)

    @cached_property
    def max_edge_length(self) -> float:
        p = self.nodes[self.triangles]
        d = p - np.roll(p, -1, axis=1)
        return float(np.hypot(d[..., 0], d[..., 1]).max())

    @cached_property
    def boundary_distance(self) -> np.ndarray:
        """Euclidean distance of each node to the boundary polygon."""
        a = self.nodes[self.boundary_edges[:, 0]]
        ab = self.nodes[self.boundary_edges[:, 1]] - a
        ab2 = np.einsum("ij,ij->i", ab, ab)
        out = np.empty(self.n_nodes)
        chunk = max(1, 4_000_000 // max(1, len(a)))
        for start in range(0, self.n_nodes, chunk):
            p = self.nodes[start:start + chunk, None, :]
            t = np.clip(np.einsum("nij,ij->ni", p - a, ab) / ab2, 0.0, 1.0)
            d = p - (a + t[..., None] * ab)
            out[start:start + chunk] = np.sqrt(np.einsum("nij,nij->ni", d, d).min(axis=1))
        out[self.boundary_nodes] = 0.0
        return out

    def same_as(self, other: "Mesh") -> bool:
        return (
            self is other
            or (
                self.nodes.shape == other.nodes.shape
                and self.triangles.shape == other.triangles.shape
                and np.array_equal(self.nodes, other.nodes)
                and np.array_equal(self.triangles, other.triangles)
                and np.array_equal(self.boundary_edges, other.boundary_edges)
            )
        )


def signed_areas(nodes: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p = nodes[triangles]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


def validate_mesh(mesh: Mesh) -> None:
    nodes, tris, edges = mesh.nodes, mesh.triangles, mesh.boundary_edges
    if nodes.ndim != 2 or nodes.shape[1] != 2:
        raise MeshError("nodes must have shape (n, 2)")
    if not np.all(np.isfinite(nodes)):
        raise MeshError("non-finite node coordinates")
    if tris.ndim != 2 or tris.shape[1] != 3 or len(tris) == 0:
        raise MeshError("triangles must have shape (m, 3) with m >= 1")
    if edges.ndim != 2 or edges.shape[1] != 2 or len(edges) < 3:
        raise MeshError("boundary_edges must have shape (b, 2) with b >= 3")
    n = len(nodes)
    if tris.min() < 0 or tris.max() >= n:
        bad = int(np.flatnonzero((tris < 0).any(axis=1) | (tris >= n).any(axis=1))[0])
        raise MeshError(f"triangle {bad} has a node index out of range")
    if edges.min() < 0 or edges.max() >= n:
        bad = int(np.flatnonzero((edges < 0).any(axis=1) | (edges >= n).any(axis=1))[0])
        raise MeshError(f"boundary edge {bad} has a node index out of range")
    area = signed_areas(nodes, tris)
    if np.any(area <= 0.0):
        bad = int(np.flatnonzero(area <= 0.0)[0])
        raise MeshError(f"triangle {bad} is not counterclockwise (signed area {area[bad]:.3e})")
    # closed single cycle: edge e ends where edge e+1 starts
    if not np.array_equal(edges[:, 1], np.roll(edges[:, 0], -1)):
        raise MeshError("open boundary cycle")
    if len(np.unique(edges[:, 0])) != len(edges):
        raise MeshError("boundary cycle visits a node twice")
    # every boundary edge is the (directed) edge of exactly one triangle
    directed = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    key_all = directed[:, 0] * n + directed[:, 1]
    reverse = directed[:, 1] * n + directed[:, 0]
    free = ~np.isin(key_all, reverse)
    free_keys = np.sort(key_all[free])
    bkeys = np.sort(edges[:, 0] * n + edges[:, 1])
    if len(np.unique(key_all)) != len(key_all):
        raise MeshError("non-conforming triangulation: a directed edge appears twice")
    if not np.array_equal(free_keys, bkeys):
        missing = np.setdiff1d(bkeys, free_keys)
        if len(missing):
            raise MeshError("open boundary cycle: boundary edge not on the triangulation boundary")
        raise MeshError("boundary edges do not cover the whole triangulation boundary")


def boundary_cycle(triangles: np.ndarray, n_nodes: int) -> np.ndarray:
    """Ordered (counterclockwise) boundary edges of a triangulation of a disk-like region."""
    directed = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    key = directed[:, 0] * n_nodes + directed[:, 1]
    rkey = directed[:, 1] * n_nodes + directed[:, 0]
    free = directed[~np.isin(key, rkey)]
    nxt = dict(zip(free[:, 0].tolist(), free[:, 1].tolist()))
    start = int(free[:, 0].min())
    cycle = [start]
    while True:
        b = nxt[cycle[-1]]
        if b == start:
            break
        cycle.append(b)
        if len(cycle) > len(free):
            raise MeshError("boundary is not a single cycle")
    if len(cycle) != len(free):
        raise MeshError("boundary is not a single cycle")
    cyc = np.asarray(cycle)
    return np.column_stack([cyc, np.roll(cyc, -1)])


def from_triangulation(nodes: np.ndarray, triangles: np.ndarray) -> Mesh:
    """Orient triangles counterclockwise and extract the boundary cycle."""
    nodes = np.asarray(nodes, dtype=float)
    tris = np.asarray(triangles, dtype=np.int64).copy()
    flip = signed_areas(nodes, tris) < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    edges = boundary_cycle(tris, len(nodes))
    # start the cycle at the boundary node with the smallest polar angle
    ang = np.mod(np.arctan2(nodes[edges[:, 0], 1], nodes[edges[:, 0], 0]), TWO_PI)
    edges = np.roll(edges, -int(np.argmin(ang)), axis=0)
    return Mesh(nodes, tris, edges)


def _ring_points(target_h: float, seed: int, max_nodes: int = MAX_NODES) -> np.ndarray:
    """Concentric rings; seed 0 returns only the closed upper half (y >= 0)."""
    # ring and circumferential spacing 1.05*h keep quad diagonals below 1.5*h
    n_rings = max(2, math.ceil(1.0 / (1.05 * target_h)))
    rng = np.random.default_rng(seed) if seed else None
    pts = [np.zeros((1, 2))]
    total = 1
    for i in range(1, n_rings + 1):
        r = i / n_rings
        m = max(6, round(TWO_PI * r / (1.05 * target_h)))
        total += m
        if total > max_nodes:
            raise MeshError(f"target_h={target_h} needs more than {max_nodes} nodes")
        if rng is not None:
            theta = TWO_PI * (np.arange(m) + rng.uniform(0.0, 1.0)) / m
            pts.append(np.column_stack([r * np.cos(theta), r * np.sin(theta)]))
            continue
        # every ring has nodes at angles 0 and pi so the x axis is a mesh line
        m += m % 2
        k = np.arange(m // 2 + 1)
        theta = TWO_PI * k / m
        y = r * np.sin(theta)
        y[(k == 0) | (k == m / 2)] = 0.0
        pts.append(np.column_stack([r * np.cos(theta), y]))
    return np.concatenate(pts)


def _mirror(upper: np.ndarray, tris: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reflect a triangulation of the upper half disk across y = 0."""
    strict = upper[:, 1] > 0.0
    image = np.arange(len(upper))
    image[strict] = len(upper) + np.arange(strict.sum())
    nodes = np.vstack([upper, upper[strict] * np.array([1.0, -1.0])])
    tris = np.vstack([tris, image[tris][:, [0, 2, 1]]])
    return nodes, tris


def _half_triangulation(upper: np.ndarray) -> np.ndarray:
    tri = Delaunay(upper).simplices
    return tri[np.abs(signed_areas(upper, tri)) > 1e-14]


def generate_disk_mesh(
    target_h: float, refinement_seed: int = 0, smooth: bool = True, max_nodes: int = MAX_NODES
) -> Mesh:
    """Concentric-ring triangulation of B(0, 1).

    Seed 0 gives a mesh that is exactly symmetric under y -> -y; any other seed
    rotates each ring by a random angle so that two meshes with equal
    ``target_h`` differ.
    """
    if not 0.0 < target_h < 1.0:
        raise MeshError("target_h must lie in (0, 1)")
    seed = int(refinement_seed)
    pts = _ring_points(target_h, seed, max_nodes)
    if seed:
        tri = Delaunay(pts).simplices
        if smooth:
            mesh = from_triangulation(pts, tri)
            moved = _laplacian_smooth(mesh)
            if np.all(signed_areas(moved, mesh.triangles) > 0.0):
                pts = moved
                tri = Delaunay(pts).simplices
        return from_triangulation(pts, tri)

    n_up = len(pts)
    full, tri = _mirror(pts, _half_triangulation(pts))
    if smooth:
        mesh = from_triangulation(full, tri)
        moved = _laplacian_smooth(mesh)
        if np.all(signed_areas(moved, mesh.triangles) > 0.0):
            up = moved[:n_up].copy()
            up[pts[:, 1] == 0.0, 1] = 0.0
            pts = up
            full, tri = _mirror(pts, _half_triangulation(pts))
    return from_triangulation(full, tri)


def _laplacian_smooth(mesh: Mesh, relax: float = 0.5) -> np.ndarray:
    tris = mesh.triangles
    i = np.concatenate([tris[:, 0], tris[:, 1], tris[:, 2], tris[:, 1], tris[:, 2], tris[:, 0]])
    j = np.concatenate([tris[:, 1], tris[:, 2], tris[:, 0], tris[:, 0], tris[:, 1], tris[:, 2]])
    pairs = np.unique(np.column_stack([i, j]), axis=0)
    deg = np.bincount(pairs[:, 0], minlength=mesh.n_nodes)
    acc = np.zeros_like(mesh.nodes)
    np.add.at(acc, pairs[:, 0], mesh.nodes[pairs[:, 1]])
    avg = acc / deg[:, None]
    out = mesh.nodes.copy()
    interior = ~mesh.boundary_node_flags
    out[interior] += relax * (avg[interior] - out[interior])
    return out


@dataclass(frozen=True)
class BoundaryPartition:
    """Equal-length boundary arcs, each given as (theta_start, theta_end) in radians."""

    arcs: tuple[tuple[float, float], ...]
    ell: float = field(default=1.0)

    def __post_init__(self):
        if not self.arcs:
            raise ValueError("partition needs at least one arc")
        lengths = [b - a for a, b in self.arcs]
        if any(L <= 0.0 for L in lengths):
            raise ValueError("every arc must have positive length")
        if sum(lengths) > TWO_PI * (1.0 + 1e-12):
            raise ValueError("arcs overlap")
        if len(self.arcs) > 1:
            starts = sorted(np.mod(a, TWO_PI) for a, _ in self.arcs)
            gaps = np.diff(starts + [starts[0] + TWO_PI])
            if np.any(gaps < min(lengths) * (1.0 - 1e-12)):
                raise ValueError("arcs overlap")

    @property
    def total_length(self) -> float:
        return float(sum(b - a for a, b in self.arcs))

    def contains_angle(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        hit = np.zeros(theta.shape, dtype=bool)
        for a, b in self.arcs:
            hit |= np.mod(theta - a, TWO_PI) < (b - a)
        return hit

    def edge_mask(self, mesh: Mesh) -> np.ndarray:
        """True for boundary edges whose midpoint angle lies in some arc."""
        return self.contains_angle(mesh.arc_mid_angles)

    def single(self, i: int) -> "BoundaryPartition":
        return BoundaryPartition((self.arcs[i],), ell=self.ell)


def build_partition(n_arcs: int, ell: float, offset: float = 0.0) -> BoundaryPartition:
    """``n_arcs`` equispaced arcs of length ``2*pi*ell`` each, the first centred at ``offset``."""
    if n_arcs < 1:
        raise ValueError("n_arcs must be >= 1")
    if ell <= 0.0:
        raise ValueError("ell must be positive")
    if n_arcs * ell > 1.0 + 1e-12:
        raise ValueError(f"{n_arcs} arcs of fraction {ell} overlap")
    half = math.pi * ell
    arcs = []
    for i in range(n_arcs):
        c = offset + TWO_PI * i / n_arcs
        arcs.append((c - half, c + half))
    arcs.sort(key=lambda ab: np.mod(ab[0], TWO_PI))
    return BoundaryPartition(tuple(arcs), ell=ell)


def save_mesh(mesh: Mesh, path, comment: str | None = None) -> None:
    """Write the text format; ``comment`` lines are prefixed with ``#`` and ignored on load."""
    lines = [f"# {c}" for c in comment.splitlines()] if comment else []
    lines += [f"{mesh.n_nodes} {mesh.n_triangles} {len(mesh.boundary_edges)}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.nodes.tolist()]
    lines += [f"{i} {j} {k}" for i, j, k in mesh.triangles.tolist()]
    lines += [f"{a} {b}" for a, b in mesh.boundary_edges.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh(path) -> Mesh:
    text = Path(path).read_text().splitlines()
    rows = [(n + 1, ln.split()) for n, ln in enumerate(text) if ln.strip() and not ln.lstrip().startswith("#")]
    if not rows:
        raise MeshError(f"{path}: empty mesh file")

    def parse(row, count, conv, what):
        lineno, tok = row
        if len(tok) != count:
            raise MeshError(f"{path}:{lineno}: expected {count} values for {what}, got {len(tok)}")
        try:
            return [conv(t) for t in tok]
        except ValueError:
            raise MeshError(f"{path}:{lineno}: cannot parse {what}: {' '.join(tok)}") from None

    nn, nt, nb = parse(rows[0], 3, int, "header")
    if min(nn, nt, nb) < 0 or len(rows) != 1 + nn + nt + nb:
        raise MeshError(
            f"{path}:{rows[0][0]}: header announces {nn}+{nt}+{nb} records, file has {len(rows) - 1}"
        )
    body = rows[1:]
    nodes = np.array([parse(r, 2, float, "node") for r in body[:nn]], dtype=float).reshape(-1, 2)
    tris = np.array([parse(r, 3, int, "triangle") for r in body[nn:nn + nt]], dtype=np.int64).reshape(-1, 3)
    edges = np.array([parse(r, 2, int, "boundary edge") for r in body[nn + nt:]], dtype=np.int64).reshape(-1, 2)
    for offset, arr, what in ((1 + nn, tris, "triangle"), (1 + nn + nt, edges, "boundary edge")):
        bad = np.flatnonzero(((arr < 0) | (arr >= nn)).any(axis=1))
        if len(bad):
            raise MeshError(f"{path}:{body[offset - 1 + bad[0]][0]}: {what} {bad[0]} index out of range")
    area = signed_areas(nodes, tris)
    bad = np.flatnonzero(area <= 0.0)
    if len(bad):
        raise MeshError(f"{path}:{body[nn + bad[0]][0]}: triangle {bad[0]} is not counterclockwise")
    try:
        return Mesh(nodes, tris, edges)
    except MeshError as exc:
        raise MeshError(f"{path}: {exc}") from None
