"""POD-Galerkin reduced model with lifting, supremizer or PPE stabilization.

The velocity is expanded on ``[chi_u | phi_1.. | s_1..]`` with coefficients
``[g_u, a]`` and the pressure on ``[chi_p_1.. | psi_1..]`` with coefficients
``[g_p, b]``.  The lifting fields act as pinned modes: their coefficients are
prescribed boundary data, so every reduced operator below has one extra
leading column per lifting field while the test functions are the modes only.

Operator layout (``na`` velocity modes, ``npr`` pressure modes, ``m`` outlets)::

    M (na, 1+na)          (v_i, v_j)
    B (na, 1+na)          (v_i, lap v_j)
    C (na, 1+na, 1+na)    (v_i, div(v_j ⊗ v_k))
    K (na, m+npr)         (v_i, grad q_j)
    P (npr, 1+na)         (psi_i, div v_j)
    D (npr, m+npr)        (grad psi_i, grad q_j)
    N (npr, m+npr)        (psi_i, grad q_j . n) over the outlets
    G (npr, 1+na, 1+na)   (psi_i, div(div(v_j ⊗ v_k)))
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .errors import ConvergenceError, FieldShapeError, NumericalError
from .lifting import Lifting, homogenize
from .mesh import (
    boundary_values,
    convection,
    divergence,
    gradient,
    laplacian,
    laplacian_matrices,
    pressure_face_values,
    velocity_face_values,
)
from .pod import POD, dof_weights

log = logging.getLogger(__name__)

__all__ = [
    "ReducedBasis",
    "ReducedOperators",
    "ReducedModel",
    "Trajectory",
    "ErrorReport",
    "compute_supremizers",
    "enrich_basis",
    "assemble_operators",
    "coupling_matrix",
    "integrate_supremizer",
    "integrate_ppe",
    "integrate",
    "rom_errors",
    "fit_pod_bases",
    "build_basis",
    "build_model",
    "simulate",
    "GalerkinROM",
]

BLOWUP_FACTOR = 1.0e6


# -- bases --------------------------------------------------------------------


@dataclass
class ReducedBasis:
    """Lifting fields and reduced modes on one mesh.

    ``u_modes`` holds the POD velocity modes followed by the ``n_sup``
    supremizers, all orthonormal in the volume-weighted inner product.
    """

    mesh: object
    chi_u: np.ndarray
    chi_p: np.ndarray
    u_modes: np.ndarray
    p_modes: np.ndarray
    n_sup: int = 0

    def __post_init__(self):
        n = self.mesh.n_cells
        self.chi_u = np.asarray(self.chi_u, dtype=float)
        self.chi_p = np.asarray(self.chi_p, dtype=float).reshape(-1, n)
        self.u_modes = np.asarray(self.u_modes, dtype=float).reshape(-1, n, 2)
        self.p_modes = np.asarray(self.p_modes, dtype=float).reshape(-1, n)
        if self.chi_u.shape != (n, 2):
            raise FieldShapeError(f"chi_u has shape {self.chi_u.shape}, mesh needs ({n}, 2)")
        if self.chi_p.shape[0] != self.mesh.n_outlets:
            raise FieldShapeError(f"{self.chi_p.shape[0]} pressure liftings for {self.mesh.n_outlets} outlets")

    @property
    def n_u(self):
        """Number of velocity test functions (POD modes plus supremizers)."""
        return self.u_modes.shape[0]

    @property
    def n_p(self):
        return self.p_modes.shape[0]

    @property
    def n_lift_p(self):
        return self.chi_p.shape[0]

    def velocity_fields(self):
        """Extended velocity basis as ``(field, face_values)`` pairs."""
        m = self.mesh
        out = [(self.chi_u, velocity_face_values(m, 1.0))]
        hom = velocity_face_values(m, 0.0)
        out += [(f, hom) for f in self.u_modes]
        return out

    def pressure_fields(self):
        """Extended pressure basis as ``(field, face_values)`` pairs."""
        m = self.mesh
        out = []
        for j, chi in enumerate(self.chi_p):
            e = np.zeros(m.n_outlets)
            e[j] = 1.0
            out.append((chi, pressure_face_values(m, e)))
        hom = pressure_face_values(m, 0.0)
        out += [(f, hom) for f in self.p_modes]
        return out


def _wdot(f, g, w):
    return float(np.sum(f.reshape(len(w), -1) * g.reshape(len(w), -1) * w[:, None]))


def _gram_schmidt(fields, against, w, drop_tol=1e-10):
    """Weighted Gram-Schmidt (two passes) of ``fields`` against ``against``
    and among themselves; nearly dependent fields are dropped."""
    basis = [np.array(a, dtype=float) for a in against]
    out = []
    for f in fields:
        v = np.array(f, dtype=float)
        n0 = np.sqrt(_wdot(v, v, w))
        if n0 == 0:
            continue
        for _ in range(2):
            for q in basis + out:
                v = v - _wdot(q, v, w) * q
        nv = np.sqrt(_wdot(v, v, w))
        if nv <= drop_tol * n0:
            log.warning("dropping an enrichment field that lies in the existing span")
            continue
        out.append(v / nv)
    return out


def _supremizer_solver(mesh):
    key = "supremizer_lu"
    if key not in mesh._cache:
        lap, _, _ = laplacian_matrices(mesh, np.ones(mesh.n_bfaces, bool))
        try:
            mesh._cache[key] = spla.splu(lap.tocsc())
        except RuntimeError as exc:
            raise NumericalError(f"supremizer operator factorization failed ({exc})") from exc
    return mesh._cache[key]


def supremizer(psi, mesh, face_values=None):
    """Solve ``lap s = -grad psi`` with ``s = 0`` on the whole boundary."""
    if face_values is None:
        face_values = pressure_face_values(mesh, 0.0)
    rhs = -gradient(psi, mesh, face_values)
    lu = _supremizer_solver(mesh)
    s = np.column_stack([lu.solve(rhs[:, d].copy()) for d in range(2)])
    if not np.all(np.isfinite(s)):
        raise NumericalError("supremizer solve returned non-finite values")
    return s


def compute_supremizers(pressure_fields, mesh, variant="exact", n_keep=None, face_values=None):
    """Supremizer fields of pressure modes or pressure snapshots.

    Parameters
    ----------
    pressure_fields : array of shape (k, n_cells)
        Pressure modes (``variant="exact"``) or homogenized pressure
        snapshots (``variant="approximate"``).
    variant : {"exact", "approximate"}
        The approximate variant compresses the snapshot supremizers to
        ``n_keep`` fields by POD.
    face_values : ndarray, optional
        Boundary data of the pressure fields; homogeneous outlet values by
        default.

    Returns
    -------
    ndarray of shape (k or n_keep, n_cells, 2)
    """
    fields = np.asarray(pressure_fields, dtype=float).reshape(-1, mesh.n_cells)
    if fields.shape[0] == 0:
        raise ValueError("no pressure fields given")
    sup = np.array([supremizer(f, mesh, face_values) for f in fields])
    if variant == "exact":
        return sup
    if variant != "approximate":
        raise ValueError(f"unknown supremizer variant {variant!r}")
    n_keep = fields.shape[0] if n_keep is None else int(n_keep)
    X = sup.reshape(len(sup), -1)
    pod = POD(n_modes=n_keep, weights=dof_weights(mesh, 2)).fit(X)
    return pod.modes_.reshape(n_keep, mesh.n_cells, 2)


def enrich_basis(u_modes, supremizers, mesh):
    """Orthonormalize supremizers against the velocity modes and append them."""
    w = mesh.cell_volumes
    extra = _gram_schmidt(supremizers, u_modes, w)
    if not extra:
        return np.asarray(u_modes), 0
    return np.concatenate([np.asarray(u_modes), np.array(extra)]), len(extra)


# -- operators ----------------------------------------------------------------


@dataclass
class ReducedOperators:
    M: np.ndarray
    B: np.ndarray
    C: np.ndarray
    K: np.ndarray
    P: np.ndarray
    D: np.ndarray
    N: np.ndarray
    G: np.ndarray
    n_lift_u: int = 1
    n_lift_p: int = 1

    NAMES = ("M", "B", "C", "K", "P", "D", "N", "G")

    @property
    def n_u(self):
        return self.M.shape[0]

    @property
    def n_p(self):
        return self.P.shape[0]

    def check_finite(self):
        for name in self.NAMES:
            if not np.all(np.isfinite(getattr(self, name))):
                raise NumericalError(f"reduced operator {name} has non-finite entries")


def assemble_operators(basis):
    """Galerkin projection of every operator onto the extended bases."""
    m = basis.mesh
    w = m.cell_volumes
    vel = basis.velocity_fields()
    prs = basis.pressure_fields()
    tests_u = [f for f, _ in vel[1:]]
    tests_p = [f for f, _ in prs[basis.n_lift_p:]]
    nu_, np_ = len(tests_u), len(tests_p)
    ne_u, ne_p = len(vel), len(prs)

    Tu = np.array(tests_u).reshape(nu_, -1) * np.repeat(w, 2)[None] if nu_ else np.zeros((0, 2 * m.n_cells))
    Tp = np.array(tests_p).reshape(np_, -1) * w[None] if np_ else np.zeros((0, m.n_cells))

    def pu(field_):
        return Tu @ np.asarray(field_).ravel()

    def pp(field_):
        return Tp @ np.asarray(field_).ravel()

    M = np.column_stack([pu(f) for f, _ in vel]) if nu_ else np.zeros((0, ne_u))
    B = np.column_stack([pu(laplacian(f, m, fv)) for f, fv in vel]) if nu_ else np.zeros((0, ne_u))
    P = np.column_stack([pp(divergence(f, m, fv)) for f, fv in vel]) if np_ else np.zeros((0, ne_u))
    grads = [gradient(f, m, fv) for f, fv in prs]
    K = np.column_stack([pu(g) for g in grads]) if nu_ else np.zeros((0, ne_p))

    gw = [g * w[:, None] for g in grads[basis.n_lift_p:]]
    D = np.array([[float(np.sum(gi * gj)) for gj in grads] for gi in gw]).reshape(np_, ne_p)

    outlet = m.outlet_faces()
    area, dist = m.bface_area[outlet], m.bface_distance[outlet]
    cells = m.bface_cell[outlet]
    test_faces = [boundary_values(f, m, fv)[outlet] for f, fv in prs[basis.n_lift_p:]]
    dn = [(boundary_values(f, m, fv)[outlet] - f[cells]) / dist for f, fv in prs]
    N = np.array([[float(np.sum(area * ti * dj)) for dj in dn] for ti in test_faces]).reshape(np_, ne_p)

    C = np.zeros((nu_, ne_u, ne_u))
    G = np.zeros((np_, ne_u, ne_u))
    for j, (fj, fvj) in enumerate(vel):
        for k, (fk, fvk) in enumerate(vel):
            cjk = convection(fj, fk, m, fvj, fvk)
            C[:, j, k] = pu(cjk)
            if np_:
                G[:, j, k] = pp(divergence(cjk, m))
    ops = ReducedOperators(M, B, C, K, P, D, N, G, n_lift_u=1, n_lift_p=basis.n_lift_p)
    ops.check_finite()
    return ops


def coupling_matrix(basis):
    """``(v_i, grad psi_j)`` over velocity test functions and pressure modes."""
    m = basis.mesh
    w2 = np.repeat(m.cell_volumes, 2)
    hom = pressure_face_values(m, 0.0)
    grads = np.array([gradient(q, m, hom).ravel() for q in basis.p_modes])
    return (basis.u_modes.reshape(basis.n_u, -1) * w2) @ grads.T


# -- time integration ---------------------------------------------------------


@dataclass
class Trajectory:
    """Reduced coefficients and boundary data on a time grid."""

    times: np.ndarray
    a: np.ndarray
    b: np.ndarray
    g_u: np.ndarray
    g_p: np.ndarray
    newton_iterations: np.ndarray = field(default_factory=lambda: np.zeros(0, int))

    def at(self, times, atol=1e-9):
        """Sub-trajectory at the given stored times."""
        idx = []
        for t in np.atleast_1d(times):
            k = np.flatnonzero(np.abs(self.times - t) <= atol * max(1.0, abs(t)))
            if not k.size:
                raise ValueError(f"time {t} is not on the trajectory grid")
            idx.append(k[0])
        idx = np.array(idx)
        return Trajectory(self.times[idx], self.a[idx], self.b[idx], self.g_u[idx], self.g_p[idx])


def _quad(T, x):
    return np.einsum("ijk,j,k->i", T, x, x)


def _quad_jac(T, x):
    return np.einsum("ijk,k->ij", T, x) + np.einsum("ikj,k->ij", T, x)


def integrate(ops, a0, b0, t_grid, g_u, g_p, nu, stabilization="sup", newton_tol=1e-12,
              newton_maxiter=25, guard=None, g_u_dot=None, scale=None):
    """Implicit Euler with Newton iterations for the reduced system.

    Parameters
    ----------
    ops : ReducedOperators
    a0, b0 : ndarray
        Coefficients at ``t_grid[0]``.
    t_grid : ndarray
        Increasing times, the first being the initial time.
    g_u : ndarray of shape (n_t,)
    g_p : ndarray of shape (n_t, n_outlets)
    stabilization : {"sup", "ppe"}
        ``"sup"`` closes the momentum rows with ``P a = 0``; ``"ppe"`` with the
        reduced pressure Poisson rows ``(D - N) b = a^T G a``.
    guard : float, optional
        Abort when ``max|a|`` or ``max|b|`` exceeds it.
    g_u_dot : ndarray, optional
        Time derivative of ``g_u``; central differences of ``g_u`` by default.
    scale : (float, float), optional
        Typical magnitudes of ``a`` and ``b``; Newton stops once the update
        is below ``newton_tol`` times ``max(|x|, scale)`` for each block.

    Returns
    -------
    Trajectory
    """
    t_grid = np.asarray(t_grid, dtype=float)
    n_t = len(t_grid)
    if n_t < 1 or np.any(np.diff(t_grid) <= 0):
        raise ValueError("time grid must be strictly increasing")
    g_u = np.asarray(g_u, dtype=float).reshape(n_t)
    g_p = np.asarray(g_p, dtype=float).reshape(n_t, ops.n_lift_p)
    if g_u_dot is None:
        g_u_dot = np.gradient(g_u, t_grid) if n_t > 1 else np.zeros(1)
    na, npr, m = ops.n_u, ops.n_p, ops.n_lift_p
    if stabilization == "sup":
        closure = ops.P[:, 1:]
    elif stabilization == "ppe":
        closure = (ops.D - ops.N)[:, m:]
        if npr and np.linalg.matrix_rank(closure) < npr:
            raise NumericalError(
                "reduced pressure Poisson matrix D - N is singular; anchor the pressure "
                "with a Dirichlet lifting block"
            )
    else:
        raise ValueError(f"unknown stabilization {stabilization!r}")

    Mr, Ml = ops.M[:, 1:], ops.M[:, 0]
    Br, Bl = ops.B[:, 1:], ops.B[:, 0]
    Kl, Kr = ops.K[:, :m], ops.K[:, m:]
    DNl = (ops.D - ops.N)[:, :m]

    a = np.zeros((n_t, na))
    b = np.zeros((n_t, npr))
    a[0], b[0] = np.asarray(a0, dtype=float), np.asarray(b0, dtype=float)
    iters = np.zeros(n_t, int)
    floor_a, floor_b = (0.0, 0.0) if scale is None else scale

    for n in range(1, n_t):
        dt = t_grid[n] - t_grid[n - 1]
        x = np.concatenate([a[n - 1], b[n - 1]])
        gu, gp = g_u[n], g_p[n]
        fixed_a = Ml * g_u_dot[n] - nu * Bl * gu + Kl @ gp - Mr @ a[n - 1] / dt
        converged = False
        for it in range(1, newton_maxiter + 1):
            av, bv = x[:na], x[na:]
            ah = np.concatenate([[gu], av])
            Ra = Mr @ av / dt + fixed_a - nu * Br @ av + _quad(ops.C, ah) + Kr @ bv
            Ja = Mr / dt - nu * Br + _quad_jac(ops.C, ah)[:, 1:]
            if stabilization == "sup":
                Rc = ops.P[:, 0] * gu + closure @ av
                J = np.block([[Ja, Kr], [closure, np.zeros((npr, npr))]])
            else:
                Rc = DNl @ gp + closure @ bv - _quad(ops.G, ah)
                J = np.block([[Ja, Kr], [-_quad_jac(ops.G, ah)[:, 1:], closure]])
            R = np.concatenate([Ra, Rc])
            try:
                dx = np.linalg.solve(J, -R)
            except np.linalg.LinAlgError as exc:
                raise NumericalError(f"singular reduced Jacobian at t={t_grid[n]:.6g}") from exc
            x = x + dx
            ok_a = np.max(np.abs(dx[:na]), initial=0.0) <= newton_tol * max(
                np.max(np.abs(x[:na]), initial=0.0), floor_a)
            ok_b = np.max(np.abs(dx[na:]), initial=0.0) <= newton_tol * max(
                np.max(np.abs(x[na:]), initial=0.0), floor_b)
            if ok_a and ok_b:
                converged = True
                break
        if not np.all(np.isfinite(x)):
            raise NumericalError(f"reduced state became non-finite at t={t_grid[n]:.6g}")
        if not converged:
            raise ConvergenceError(
                f"Newton did not converge at t={t_grid[n]:.6g} after {newton_maxiter} iterations",
                float(np.linalg.norm(R)),
            )
        if guard is not None and np.max(np.abs(x), initial=0.0) > guard:
            raise NumericalError(f"reduced state blew up at t={t_grid[n]:.6g} (|x| > {guard:.3g})")
        a[n], b[n] = x[:na], x[na:]
        iters[n] = it
    return Trajectory(t_grid, a, b, g_u, g_p, iters)


def integrate_supremizer(ops, a0, b0, t_grid, g_u, g_p, nu, **kwargs):
    """Coupled momentum and reduced continuity ``P a = 0``."""
    return integrate(ops, a0, b0, t_grid, g_u, g_p, nu, stabilization="sup", **kwargs)


def integrate_ppe(ops, a0, t_grid, g_u, g_p, nu, b0=None, **kwargs):
    """Coupled momentum and reduced pressure Poisson equation."""
    if b0 is None:
        b0 = np.zeros(ops.n_p)
    return integrate(ops, a0, b0, t_grid, g_u, g_p, nu, stabilization="ppe", **kwargs)


# -- model and errors ---------------------------------------------------------


@dataclass
class ReducedModel:
    """Everything the online phase needs: basis, operators, initial state."""

    basis: ReducedBasis
    ops: ReducedOperators
    nu: float
    t0: float
    a0: np.ndarray
    b0: np.ndarray
    scale_a: float
    scale_b: float
    stabilization: str = "sup"

    @property
    def guard(self):
        """Blow-up threshold: a large multiple of the training coefficients."""
        return BLOWUP_FACTOR * max(self.scale_a, self.scale_b, 1e-300)

    def reconstruct(self, traj):
        """Full-order velocity ``(T, n, 2)`` and pressure ``(T, n)`` fields."""
        bs = self.basis
        u = traj.g_u[:, None, None] * bs.chi_u[None] + np.tensordot(traj.a, bs.u_modes, axes=(1, 0))
        p = traj.g_p @ bs.chi_p + traj.b @ bs.p_modes
        return u, p

    def project(self, u, p, g_u, g_p):
        """Weighted projection coefficients of lifted fields for given ``g``."""
        bs = self.basis
        w = bs.mesh.cell_volumes
        u = np.asarray(u, dtype=float).reshape(-1, bs.mesh.n_cells, 2)
        p = np.asarray(p, dtype=float).reshape(-1, bs.mesh.n_cells)
        g_u = np.asarray(g_u, dtype=float).reshape(-1)
        g_p = np.asarray(g_p, dtype=float).reshape(-1, bs.n_lift_p)
        uh = u - g_u[:, None, None] * bs.chi_u[None]
        ph = p - g_p @ bs.chi_p
        a = np.einsum("tnd,knd,n->tk", uh, bs.u_modes, w)
        b = np.einsum("tn,kn,n->tk", ph, bs.p_modes, w)
        return a, b


@dataclass
class ErrorReport:
    """Relative and absolute weighted L2 errors per time."""

    times: np.ndarray
    eps_u: np.ndarray
    eps_p: np.ndarray
    abs_u: np.ndarray
    abs_p: np.ndarray
    proj_u: np.ndarray
    proj_p: np.ndarray

    def mean(self):
        return {k: float(np.mean(getattr(self, k))) if len(self.times) else float("nan")
                for k in ("eps_u", "eps_p", "abs_u", "abs_p", "proj_u", "proj_p")}

    def projection_ok(self, rtol=1e-10):
        """Reconstruction error at least the projection error at every time."""
        return bool(np.all(self.eps_u >= self.proj_u * (1 - rtol))
                    and np.all(self.eps_p >= self.proj_p * (1 - rtol)))


def _wnorm(x, w):
    x = x.reshape(x.shape[0], len(w), -1)
    return np.sqrt(np.einsum("tnd,tnd,n->t", x, x, w))


def _rel(num, den):
    den = np.asarray(den, dtype=float)
    out = np.zeros_like(num)
    nz = den > 0
    out[nz] = num[nz] / den[nz]
    out[~nz & (num > 0)] = np.inf
    return out


def rom_errors(fom_times, fom_u, fom_p, model, traj, atol=1e-9):
    """Compare a reduced trajectory with full-order fields at the same times.

    The projection error uses the same boundary data as the reduced solution,
    so it is the best approximation the reduced space can offer.
    """
    fom_times = np.asarray(fom_times, dtype=float)
    if fom_times.shape != traj.times.shape or np.any(
        np.abs(fom_times - traj.times) > atol * np.maximum(1.0, np.abs(fom_times))
    ):
        raise ValueError("full-order and reduced time stamps do not match")
    w = model.basis.mesh.cell_volumes
    u_rom, p_rom = model.reconstruct(traj)
    fom_u = np.asarray(fom_u, dtype=float).reshape(u_rom.shape)
    fom_p = np.asarray(fom_p, dtype=float).reshape(p_rom.shape)
    abs_u = _wnorm(fom_u - u_rom, w)
    abs_p = _wnorm(fom_p - p_rom, w)
    nu_, np_ = _wnorm(fom_u, w), _wnorm(fom_p, w)
    a_pr, b_pr = model.project(fom_u, fom_p, traj.g_u, traj.g_p)
    u_pr, p_pr = model.reconstruct(Trajectory(traj.times, a_pr, b_pr, traj.g_u, traj.g_p))
    return ErrorReport(
        traj.times.copy(), _rel(abs_u, nu_), _rel(abs_p, np_), abs_u, abs_p,
        _rel(_wnorm(fom_u - u_pr, w), nu_), _rel(_wnorm(fom_p - p_pr, w), np_),
    )


def substep_grid(t0, times, substeps):
    """``t0`` followed by ``substeps`` equal steps up to each requested time."""
    times = np.asarray(times, dtype=float)
    if times.size == 0:
        raise ValueError("empty time list")
    knots = np.concatenate([[t0], times])
    if np.any(np.diff(knots) <= 0):
        raise ValueError("requested times must be increasing and after the initial time")
    pieces = [np.array([t0])]
    for lo, hi in zip(knots[:-1], knots[1:]):
        pieces.append(np.linspace(lo, hi, substeps + 1)[1:])
    grid = np.concatenate(pieces)
    grid[np.arange(1, len(times) + 1) * substeps] = times
    return grid


def fit_pod_bases(hdb, n_modes=None, delta=0.9999):
    """Velocity and pressure POD of a homogenized database."""
    mesh = hdb.mesh
    nt = len(hdb.times)
    pod_u = POD(n_modes, delta, dof_weights(mesh, 2)).fit(hdb.u.reshape(nt, -1))
    pod_p = POD(n_modes, delta, dof_weights(mesh, 1)).fit(hdb.p.reshape(nt, -1))
    return pod_u, pod_p


def build_basis(lifting, pod_u, pod_p, stabilization="sup", supremizer="exact", p_snapshots=None):
    """Reduced basis, enriched with supremizers for ``stabilization="sup"``."""
    mesh = lifting.mesh_
    u_modes = pod_u.modes_.reshape(-1, mesh.n_cells, 2)
    p_modes = pod_p.modes_
    n_sup = 0
    if stabilization == "sup":
        if supremizer == "exact":
            src = p_modes
        elif p_snapshots is None:
            raise ValueError("approximate supremizers need the pressure snapshots")
        else:
            src = p_snapshots
        sup = compute_supremizers(src, mesh, supremizer, n_keep=len(p_modes))
        u_modes, n_sup = enrich_basis(u_modes, sup, mesh)
    return ReducedBasis(mesh, lifting.chi_u_, lifting.chi_p_, u_modes, p_modes, n_sup)


def build_model(db, basis, ops, nu, stabilization="sup"):
    """Attach the initial state and coefficient scales of ``db`` to a basis."""
    model = ReducedModel(basis, ops, float(nu), 0.0, np.zeros(basis.n_u), np.zeros(basis.n_p),
                         1.0, 1.0, stabilization)
    a_tr, b_tr = model.project(db.u, db.p, db.g_u, db.g_p)
    model.scale_a = float(np.max(np.abs(a_tr), initial=0.0))
    model.scale_b = float(np.max(np.abs(b_tr), initial=0.0))
    ini = db.initial
    if ini:
        a0, b0 = model.project(ini["u"], ini["p"], ini["g_u"], ini["g_p"])
        model.t0, model.a0, model.b0 = float(ini["t"]), a0[0], b0[0]
    else:
        model.t0, model.a0, model.b0 = float(db.times[0]), a_tr[0], b_tr[0]
    return model


class GalerkinROM(BaseEstimator):
    """Offline construction and online evaluation of the reduced model.

    Parameters
    ----------
    n_modes : int, optional
        Modes per variable; chosen from ``delta`` when ``None``.
    delta : float, default=0.9999
    stabilization : {"sup", "ppe"}
    supremizer : {"exact", "approximate"}
    nu : float
        Kinematic viscosity.
    substeps : int, default=20
        Implicit Euler steps between consecutive requested times.
    newton_tol, newton_maxiter
        Newton stopping rule.
    outlet_neumann_value : float, default=1.0
        Passed to :class:`~hemorom.lifting.Lifting`.
    """

    def __init__(self, n_modes=None, delta=0.9999, stabilization="sup", supremizer="exact",
                 nu=0.004, substeps=20, newton_tol=1e-12, newton_maxiter=25,
                 outlet_neumann_value=1.0):
        self.n_modes = n_modes
        self.delta = delta
        self.stabilization = stabilization
        self.supremizer = supremizer
        self.nu = nu
        self.substeps = substeps
        self.newton_tol = newton_tol
        self.newton_maxiter = newton_maxiter
        self.outlet_neumann_value = outlet_neumann_value

    def fit(self, db, y=None, lifting=None):
        """Build lifting, POD bases, supremizers and reduced operators."""
        if self.stabilization not in ("sup", "ppe"):
            raise ValueError(f"unknown stabilization {self.stabilization!r}")
        if lifting is None:
            lifting = Lifting(self.outlet_neumann_value).fit(db.mesh)
        self.lifting_ = lifting
        hdb = homogenize(db, lifting)
        self.pod_u_, self.pod_p_ = fit_pod_bases(hdb, self.n_modes, self.delta)
        basis = build_basis(lifting, self.pod_u_, self.pod_p_, self.stabilization,
                            self.supremizer, hdb.p)
        self.model_ = build_model(db, basis, assemble_operators(basis), self.nu, self.stabilization)
        return self

    def predict(self, times, g_u_fn, g_p_fn):
        """Integrate from the initial state and return the trajectory at ``times``.

        ``g_u_fn`` and ``g_p_fn`` map an array of times to inlet speeds
        ``(n,)`` and outlet pressures ``(n, n_outlets)``.
        """
        check_is_fitted(self, "model_")
        return simulate(self.model_, times, g_u_fn, g_p_fn, substeps=self.substeps,
                        newton_tol=self.newton_tol, newton_maxiter=self.newton_maxiter)

    def reconstruct(self, traj):
        check_is_fitted(self, "model_")
        return self.model_.reconstruct(traj)


def simulate(model, times, g_u_fn, g_p_fn, substeps=20, newton_tol=1e-12, newton_maxiter=25,
             stabilization=None):
    """Online evaluation of a :class:`ReducedModel` at the requested times."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    grid = substep_grid(model.t0, times, substeps)
    g_u = np.asarray(g_u_fn(grid), dtype=float).reshape(len(grid))
    g_p = np.asarray(g_p_fn(grid), dtype=float).reshape(len(grid), model.basis.n_lift_p)
    traj = integrate(model.ops, model.a0, model.b0, grid, g_u, g_p, model.nu,
                     stabilization=stabilization or model.stabilization, newton_tol=newton_tol,
                     newton_maxiter=newton_maxiter, guard=model.guard,
                     scale=(model.scale_a, model.scale_b))
    return traj.at(times)

