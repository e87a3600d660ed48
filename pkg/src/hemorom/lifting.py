"""Lifting functions for the inlet velocity and the outlet pressures.

The velocity lifting is a potential-flow solution promoted to a vector field
along the inflow direction, so ``g_u(t) * chi_u`` carries the plug inflow.
Each pressure lifting ``chi_p[j]`` equals one on outlet ``j`` and has zero
normal derivative on every other boundary.  Subtracting the lifted boundary
data from the snapshots leaves fields with homogeneous boundary values.
"""

import numpy as np
import scipy.sparse.linalg as spla
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .errors import NumericalError
from .mesh import (
    as_vector_field,
    boundary_values,
    convection,
    divergence,
    laplacian_matrices,
    pressure_face_values,
    velocity_face_values,
)

__all__ = [
    "solve_velocity_lifting",
    "solve_pressure_lifting",
    "Lifting",
    "homogenize",
    "reconstruct",
    "homogenized_traces",
]


def _solve(matrix, rhs, what):
    try:
        x = spla.spsolve(matrix.tocsc(), rhs)
    except RuntimeError as exc:
        raise NumericalError(f"{what}: linear solve failed ({exc})") from exc
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"{what}: linear solve returned non-finite values")
    return x


def inflow_direction(mesh):
    return -mesh.bface_normal[mesh.inlet_faces][0]


def solve_velocity_lifting(mesh, outlet_neumann_value=1.0):
    """Potential-flow velocity lifting.

    Solves ``lap chi = 0`` with ``chi = 1`` on the inlet, ``chi = 0`` on the
    walls and ``d chi / dn = outlet_neumann_value`` on the outlets, and
    returns ``chi`` times the unit inflow direction.
    """
    dmask = mesh.inlet_faces | mesh.wall_faces
    lap, lap_d, lap_n = laplacian_matrices(mesh, dmask)
    fd = np.where(mesh.inlet_faces, 1.0, 0.0)
    gn = np.where(mesh.outlet_faces(), float(outlet_neumann_value), 0.0)
    chi = _solve(lap, -(lap_d @ fd + lap_n @ gn), "velocity lifting")
    return chi[:, None] * inflow_direction(mesh)[None, :]


def nonlinear_lifting_source(mesh, chi_u, chi_u_faces=None):
    """``div(div(chi_u ⊗ chi_u))``.

    ``chi_u_faces`` are the boundary data of ``chi_u``; by default those of
    the velocity lifting (unit inflow, no-slip walls, free outlets).
    """
    chi_u = as_vector_field(chi_u, mesh, "chi_u")
    fv = velocity_face_values(mesh, 1.0) if chi_u_faces is None else chi_u_faces
    return divergence(convection(chi_u, chi_u, mesh, fv, fv), mesh)


def solve_pressure_lifting(mesh, chi_u, outlet_index=0, chi_u_faces=None):
    """Pressure lifting of one outlet.

    Solves ``lap chi_p + div(div(chi_u ⊗ chi_u)) = 0`` with ``chi_p = 1`` on
    outlet ``outlet_index`` and zero normal derivative elsewhere.
    """
    dmask = mesh.outlet_faces(outlet_index)
    lap, lap_d, _ = laplacian_matrices(mesh, dmask)
    fd = dmask.astype(float)
    rhs = -nonlinear_lifting_source(mesh, chi_u, chi_u_faces) - lap_d @ fd
    return _solve(lap, rhs, f"pressure lifting (outlet {outlet_index})")


class Lifting(BaseEstimator):
    """Velocity and per-outlet pressure lifting fields of a mesh.

    Parameters
    ----------
    outlet_neumann_value : float, default=1.0
        Normal derivative of the velocity potential on the outlets.

    Attributes
    ----------
    chi_u_ : ndarray of shape (n_cells, 2)
    chi_p_ : ndarray of shape (n_outlets, n_cells)
    mesh_ : StructuredMesh
    """

    def __init__(self, outlet_neumann_value=1.0):
        self.outlet_neumann_value = outlet_neumann_value

    def fit(self, mesh, y=None):
        self.mesh_ = mesh
        self.chi_u_ = solve_velocity_lifting(mesh, self.outlet_neumann_value)
        self.chi_p_ = np.array(
            [solve_pressure_lifting(mesh, self.chi_u_, j) for j in range(mesh.n_outlets)]
        ).reshape(mesh.n_outlets, mesh.n_cells)
        return self

    @property
    def n_outlets(self):
        check_is_fitted(self, "chi_p_")
        return self.chi_p_.shape[0]

    def velocity_faces(self):
        """Boundary data of ``chi_u``: unit inflow, no-slip, zero-gradient outlets."""
        return velocity_face_values(self.mesh_, 1.0)

    def pressure_faces(self, j):
        vals = np.zeros(self.mesh_.n_outlets)
        vals[j] = 1.0
        return pressure_face_values(self.mesh_, vals)

    def lift_velocity(self, g_u):
        """``g_u(t) chi_u`` for each entry of ``g_u``; shape ``(T, n, 2)``."""
        check_is_fitted(self, "chi_u_")
        return np.asarray(g_u, dtype=float).reshape(-1, 1, 1) * self.chi_u_[None]

    def lift_pressure(self, g_p):
        """``sum_j g_p[:, j] chi_p[j]``; shape ``(T, n)``."""
        check_is_fitted(self, "chi_p_")
        g_p = np.asarray(g_p, dtype=float).reshape(-1, self.n_outlets)
        return g_p @ self.chi_p_


def _check_traces(db):
    n = len(db.times)
    g_u = np.asarray(db.g_u, dtype=float)
    g_p = np.asarray(db.g_p, dtype=float)
    if g_u.shape != (n,) or g_p.shape[0] != n:
        raise ValueError(f"boundary samples do not cover the {n} snapshot times")
    if not (np.all(np.isfinite(g_u)) and np.all(np.isfinite(g_p))):
        missing = np.flatnonzero(~np.isfinite(g_u) | ~np.all(np.isfinite(g_p), axis=1))
        raise ValueError(f"missing boundary samples at snapshot indices {missing.tolist()}")
    return g_u, g_p


def homogenize(db, lifting):
    """Subtract the lifted boundary data from every snapshot.

    Returns a new database with ``u' = u - g_u chi_u`` and
    ``p' = p - sum_j g_p[j] chi_p[j]``; boundary samples are kept.
    """
    g_u, g_p = _check_traces(db)
    if not np.any(g_u) and not np.any(g_p):
        return db.replace(u=db.u.copy(), p=db.p.copy())
    return db.replace(u=db.u - lifting.lift_velocity(g_u), p=db.p - lifting.lift_pressure(g_p))


def reconstruct(a, b, u_modes, p_modes, lifting, g_u, g_p):
    """Lifted linear combinations ``g_u chi_u + a @ u_modes`` and
    ``sum_j g_p[j] chi_p[j] + b @ p_modes``.

    ``a`` and ``b`` may be single coefficient vectors or ``(T, N)`` arrays
    matched with ``T`` boundary samples.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    u_modes = np.asarray(u_modes, dtype=float)
    p_modes = np.asarray(p_modes, dtype=float)
    if a.shape[-1] != u_modes.shape[0] or b.shape[-1] != p_modes.shape[0]:
        raise ValueError(
            f"coefficient lengths ({a.shape[-1]}, {b.shape[-1]}) do not match basis sizes "
            f"({u_modes.shape[0]}, {p_modes.shape[0]})"
        )
    single = a.ndim == 1
    a2, b2 = np.atleast_2d(a), np.atleast_2d(b)
    u = lifting.lift_velocity(g_u) + np.tensordot(a2, u_modes, axes=(1, 0))
    p = lifting.lift_pressure(g_p) + b2 @ p_modes
    if single:
        return u[0], p[0]
    return u, p


def homogenized_traces(db, lifting):
    """Largest inlet velocity and outlet pressure trace of ``u'`` and ``p'``.

    ``db`` is the original (lifted) database.  Face values of each snapshot
    follow the boundary data it was computed with (``g_u`` on the inlet,
    ``g_p`` on the outlets); the lifting fields contribute their own traces.

    Returns
    -------
    u_trace, p_trace : ndarray of shape (N_t,)
    """
    g_u, g_p = _check_traces(db)
    mesh = lifting.mesh_
    inlet, outlet = mesh.inlet_faces, mesh.outlet_faces()
    chi_u_b = boundary_values(lifting.chi_u_, mesh, lifting.velocity_faces())
    chi_p_b = np.array([
        boundary_values(lifting.chi_p_[j], mesh, lifting.pressure_faces(j))
        for j in range(lifting.n_outlets)
    ])
    u_tr, p_tr = [], []
    for k in range(len(db.times)):
        ub = boundary_values(db.u[k], mesh, velocity_face_values(mesh, g_u[k])) - g_u[k] * chi_u_b
        pb = boundary_values(db.p[k], mesh, pressure_face_values(mesh, g_p[k])) - g_p[k] @ chi_p_b
        u_tr.append(np.max(np.abs(ub[inlet])))
        p_tr.append(np.max(np.abs(pb[outlet])))
    return np.array(u_tr), np.array(p_tr)
