"""Damped Newton solver for the state equation and the linear adjoint solve."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import fem
from .fem import CoefficientField, SourceTerm
from .mesh import Mesh

log = logging.getLogger(__name__)

ADJOINT_REG = 1e-8
ADJOINT_REG_RTOL = 1e-4


class NewtonError(RuntimeError):
    def __init__(self, message: str, residual_history: list[float]):
        super().__init__(message)
        self.residual_history = residual_history


@dataclass(frozen=True)
class NewtonConfig:
    abs_tol: float = 1e-10
    max_iter: int = 25
    damping: float = 1.0
    max_halvings: int = 8
    # shift*lumped_mass is added to the Jacobian while the iterate is ~0, where the
    # pure-Neumann Jacobian is singular
    singular_shift: float = 1.0
    # Newton steps are judged by the nonlinear residual, so the inner solve may stop
    # above the roundoff floor of fine, weakly reactive Jacobians
    linear_rtol: float = 1e-8

    def __post_init__(self):
        if self.abs_tol <= 0.0:
            raise ValueError("abs_tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must lie in (0, 1]")


@dataclass
class ForwardSolution:
    u: np.ndarray
    iterations: int
    residual_history: list[float]
    converged: bool
    shifted_steps: int = 0
    notes: list[str] = field(default_factory=list)


def solve_forward(
    mesh: Mesh,
    coeff: CoefficientField,
    f: SourceTerm,
    cfg: NewtonConfig | None = None,
    u0=None,
) -> ForwardSolution:
    """Solve the discrete semilinear Neumann problem by damped Newton iteration."""
    cfg = cfg or NewtonConfig()
    K = fem.assemble_stiffness(mesh, coeff)
    F = fem.assemble_load(mesh, f)
    if np.linalg.norm(F) == 0.0:
        raise ValueError(f"source term {f} vanishes identically on the mesh")
    Ml = fem.lumped_mass(mesh)
    u = np.zeros(mesh.n_nodes) if u0 is None else np.array(u0, dtype=float)

    def residual(v):
        return fem.assemble_nonlinear_residual(mesh, coeff, v, f, stiffness=K, load=F)

    r = residual(u)
    rn = float(np.linalg.norm(r))
    history = [rn]
    shifted = 0
    notes: list[str] = []
    it = 0
    while rn > cfg.abs_tol and it < cfg.max_iter:
        it += 1
        J = K + fem.assemble_reaction_linearized(mesh, coeff, u, 3.0)
        reg = 0.0
        if np.abs(u).max() < 1e-8:
            reg = cfg.singular_shift
            shifted += 1
        du = fem.solve_sparse(J, -r, reg=reg, mass_diag=Ml, rtol=cfg.linear_rtol)
        step = cfg.damping
        for _ in range(cfg.max_halvings + 1):
            trial = u + step * du
            r_trial = residual(trial)
            rn_trial = float(np.linalg.norm(r_trial))
            if rn_trial < rn:
                break
            step *= 0.5
        else:
            notes.append(f"iteration {it}: no decrease after {cfg.max_halvings} halvings")
        u, r, rn = trial, r_trial, rn_trial
        history.append(rn)
    converged = rn <= cfg.abs_tol
    if not converged:
        raise NewtonError(f"Newton did not converge in {cfg.max_iter} iterations (residual {rn:.3e})", history)
    log.debug("newton converged in %d iterations, residual %.3e", it, rn)
    return ForwardSolution(u, it, history, converged, shifted, notes)


def solve_unperturbed(mesh: Mesh, f: SourceTerm, cfg: NewtonConfig | None = None, u0=None) -> ForwardSolution:
    return solve_forward(mesh, fem.classify_elements(mesh, None), f, cfg, u0)


def boundary_trace(mesh: Mesh, u) -> np.ndarray:
    """Nodal values at the boundary nodes in boundary-cycle order."""
    u = np.asarray(u, dtype=float)
    if u.shape != (mesh.n_nodes,):
        raise ValueError("field does not match the mesh")
    return u[mesh.boundary_nodes]


def adjoint_operator(mesh: Mesh, U) -> sp.csr_matrix:
    """-Laplace + 3 U^2 on the inclusion-free domain."""
    return fem.assemble_stiffness(mesh, None) + fem.assemble_reaction_linearized(mesh, None, U, 3.0)


def solve_adjoint(mesh: Mesh, U, boundary_residual, mask=None, operator=None) -> np.ndarray:
    """Adjoint state W: (-Laplace + 3U^2) W = 0, dW/dn = boundary_residual on the masked boundary."""
    U = np.asarray(U, dtype=float)
    b = fem.assemble_boundary_load(mesh, boundary_residual, mask)
    if not np.any(b):
        return np.zeros(mesh.n_nodes)
    A = adjoint_operator(mesh, U) if operator is None else operator
    reg = 0.0
    if np.abs(U).max() < 1e-8:
        warnings.warn("background potential ~0: regularising the adjoint operator", stacklevel=2)
        reg = ADJOINT_REG
        # the shifted operator has condition number ~1/reg; accept the roundoff floor
        return fem.solve_sparse(A, b, reg=reg, mass_diag=fem.lumped_mass(mesh), rtol=ADJOINT_REG_RTOL)
    return fem.solve_sparse(A, b)
