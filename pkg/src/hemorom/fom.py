"""Finite-volume incompressible Navier-Stokes solver for the plane channel.

Cell-centred collocated unknowns, implicit Euler in time with the convective
flux lagged at the previous step, and a PISO-style predictor/corrector loop.
The pressure equation is assembled as the exact composition of the discrete
divergence and gradient, so the corrected cell velocity is discretely
divergence free.  Each outlet carries a three-element Windkessel model that
supplies the outlet Dirichlet pressure from the previous-step outflow.
"""

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import formats
from . import windkessel as wk
from .errors import BundleError, ConvergenceError, NumericalError
from .mesh import (
    StructuredMesh,
    as_vector_field,
    divergence_matrices,
    gradient_matrices,
    laplacian_matrices,
    convection_matrices,
    pressure_face_values,
    velocity_face_values,
)

log = logging.getLogger(__name__)

__all__ = [
    "FluidParams",
    "TimeGrid",
    "BoundaryData",
    "FomState",
    "ChannelFlowSolver",
    "SnapshotDatabase",
    "run_fom",
]


@dataclass(frozen=True)
class FluidParams:
    nu: float
    U: float = 1.0
    L: float = 1.0

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError(f"kinematic viscosity must be positive, got {self.nu}")

    @property
    def reynolds(self):
        return self.U * self.L / self.nu


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    T: float
    dt: float
    stride: int = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.stride < 1:
            raise ValueError("snapshot stride must be >= 1")
        n = (self.T - self.t0) / self.dt
        if n < 1 - 1e-9 or abs(n - round(n)) > 1e-6 * max(1.0, n):
            raise ValueError(f"dt={self.dt} does not split ({self.t0}, {self.T}] into whole steps")

    @property
    def n_steps(self):
        return int(round((self.T - self.t0) / self.dt))

    def time(self, n):
        return self.t0 + n * self.dt


@dataclass(frozen=True)
class BoundaryData:
    """Boundary values at one time level: inlet speed and outlet pressures."""

    g_u: float
    p_out: tuple


@dataclass(frozen=True)
class FomState:
    u: np.ndarray
    p: np.ndarray
    wk: tuple
    t: float
    bc: BoundaryData


class ChannelFlowSolver:
    """One-step integrator of the channel flow problem.

    Parameters
    ----------
    mesh : StructuredMesh
    fluid : FluidParams
    windkessel : sequence of WindkesselParams
        One entry per outlet of ``mesh``.
    u0 : float
        Amplitude of the pulsatile inflow.
    inlet_params : WindkesselParams, optional
        Parameters whose ``Rd C`` sets the inflow period; defaults to the
        first outlet.
    n_piso : int, default=2
        Predictor/corrector sweeps per time step.
    lin_tol : float, default=1e-10
        Relative residual tolerance of the Krylov solves.
    """

    def __init__(self, mesh, fluid, windkessel, u0, inlet_params=None, n_piso=2, lin_tol=1e-10):
        windkessel = tuple(windkessel)
        if len(windkessel) != mesh.n_outlets:
            raise ValueError(f"need {mesh.n_outlets} Windkessel blocks, got {len(windkessel)}")
        self.mesh = mesh
        self.fluid = fluid
        self.windkessel = windkessel
        self.u0 = float(u0)
        self.inlet_params = inlet_params or windkessel[0]
        self.n_piso = int(n_piso)
        self.lin_tol = float(lin_tol)

        self._vel_mask = mesh.inlet_faces | mesh.wall_faces
        self._p_mask = mesh.outlet_faces()
        self._lap, self._lap_d, _ = laplacian_matrices(mesh, self._vel_mask)
        self._grad, self._grad_b = gradient_matrices(mesh, self._p_mask)
        self._div, self._div_b = divergence_matrices(mesh, self._vel_mask)
        vol2 = np.repeat(mesh.cell_volumes, 2)
        # -V (D G) is symmetric positive definite: discrete integration by parts
        # leaves no boundary term for these boundary conditions.
        a = -(sp.diags(mesh.cell_volumes) @ (self._div @ self._grad))
        self._p_matrix = (0.5 * (a + a.T)).tocsr()
        self._p_precond = sp.diags(1.0 / self._p_matrix.diagonal())
        self._vol2 = vol2

    # -- boundary data --------------------------------------------------------

    def inlet_speed(self, t):
        return float(wk.inlet_profile(t, self.u0, self.inlet_params))

    def initial_state(self, t0=0.0):
        n = self.mesh.n_cells
        states = tuple(wk.WindkesselState(0.0, 0.0, t0) for _ in self.windkessel)
        bc = BoundaryData(self.inlet_speed(t0), tuple(0.0 for _ in self.windkessel))
        return FomState(np.zeros((n, 2)), np.zeros(n), states, float(t0), bc)

    def face_fluxes(self, u, g_u):
        """Volumetric fluxes through interior and boundary faces."""
        m = self.mesh
        uf = 0.5 * (u[m.face_owner] + u[m.face_neighbour])
        flux_int = m.face_area * np.sum(uf * m.face_normal, axis=1)
        ub = velocity_face_values(m, g_u)
        ub = np.where(np.isfinite(ub), ub, u[m.bface_cell])
        flux_bnd = m.bface_area * np.sum(ub * m.bface_normal, axis=1)
        return flux_int, flux_bnd

    def outlet_flow(self, u):
        """Outflow rate through each outlet (zero-gradient face values)."""
        m = self.mesh
        ub = u[m.bface_cell]
        q = m.bface_area * np.sum(ub * m.bface_normal, axis=1)
        return np.array([q[m.outlet_faces(j)].sum() for j in range(m.n_outlets)])

    def inlet_flow(self, g_u):
        m = self.mesh
        return float(-g_u * m.bface_area[m.inlet_faces].sum())

    def pressure_gradient(self, p, p_out):
        pb = np.nan_to_num(pressure_face_values(self.mesh, p_out))
        return (self._grad @ p + self._grad_b @ pb).reshape(-1, 2)

    # -- PISO building blocks -------------------------------------------------

    def momentum_predict(self, state, dt, bc, pressure=None, p_out=None, flux=None,
                         source=None, nu=None):
        """Implicit momentum predictor.

        Solves ``u*/dt + C(phi^n) u* - nu L u* = u^n/dt - grad p + b`` with the
        convective fluxes ``phi^n`` frozen at the old velocity and the velocity
        boundary data of ``bc``.

        Parameters
        ----------
        state : FomState
            Old time level.
        bc : BoundaryData
            Boundary values at the new time level.
        pressure, p_out : optional
            Pressure (and its outlet values) entering the gradient; default to
            the old state.
        flux : tuple of ndarray, optional
            ``(interior, boundary)`` face fluxes overriding ``phi^n``.
        source : ndarray, optional
            Body force ``b`` per cell, shape ``(n, 2)``.
        nu : float, optional
            Viscosity override.
        """
        if not dt > 0:
            raise ValueError("dt must be positive")
        m = self.mesh
        nu = self.fluid.nu if nu is None else nu
        pressure = state.p if pressure is None else pressure
        p_out = state.bc.p_out if p_out is None else p_out
        flux_int, flux_bnd = self.face_fluxes(state.u, state.bc.g_u) if flux is None else flux
        conv, conv_b = convection_matrices(m, flux_int, flux_bnd, self._vel_mask)
        a = (sp.identity(m.n_cells) / dt + conv - nu * self._lap).tocsr()
        ub = np.nan_to_num(velocity_face_values(m, bc.g_u))
        rhs = state.u / dt - self.pressure_gradient(pressure, p_out)
        rhs += nu * (self._lap_d @ ub) - conv_b @ ub
        if source is not None:
            rhs += as_vector_field(source, m, "source")
        precond = sp.diags(1.0 / a.diagonal())
        out = np.empty_like(state.u)
        # one tolerance for both components: a component with a vanishing
        # right-hand side (symmetric flows) cannot meet a relative target
        atol = self.lin_tol * np.linalg.norm(rhs)
        for d in range(2):
            x, info = spla.bicgstab(a, rhs[:, d], x0=state.u[:, d], rtol=0.0,
                                    atol=atol, maxiter=2000, M=precond)
            if info != 0:
                res = np.linalg.norm(a @ x - rhs[:, d])
                raise ConvergenceError(f"momentum solve (component {d}) did not converge", res)
            out[:, d] = x
        return out

    def pressure_correct(self, u_star, dt, bc, p_prev=None, p_prev_out=None):
        """Project ``u_star`` onto discretely divergence-free fields.

        Solves ``dt D G p = div(w)`` with ``w = u_star + dt grad(p_prev)``
        (``w = u_star`` when no previous pressure is given), outlet Dirichlet
        values from ``bc`` and zero normal gradient elsewhere, then sets
        ``u = w - dt grad(p)``.

        Returns
        -------
        p_new, u_new : ndarray
        """
        if not self.mesh.outlet_faces().any():
            raise NumericalError("pressure system is singular: no Dirichlet outlet")
        m = self.mesh
        w = as_vector_field(u_star, m, "u_star").copy()
        if p_prev is not None:
            w += dt * self.pressure_gradient(p_prev, bc.p_out if p_prev_out is None else p_prev_out)
        ub = np.nan_to_num(velocity_face_values(m, bc.g_u))
        pb = np.nan_to_num(pressure_face_values(m, bc.p_out))
        div_w = self._div @ w.ravel() + self._div_b @ ub.ravel()
        rhs = -m.cell_volumes * (div_w / dt - self._div @ (self._grad_b @ pb))
        x0 = np.zeros(m.n_cells) if p_prev is None else p_prev
        p, info = spla.cg(self._p_matrix, rhs, x0=x0, rtol=self.lin_tol, atol=0.0,
                          maxiter=20 * m.n_cells, M=self._p_precond)
        if info != 0:
            res = np.linalg.norm(self._p_matrix @ p - rhs)
            raise ConvergenceError("pressure solve did not converge", res)
        u_new = w - dt * self.pressure_gradient(p, bc.p_out)
        return p, u_new

    def divergence(self, u, g_u):
        ub = np.nan_to_num(velocity_face_values(self.mesh, g_u))
        return self._div @ np.asarray(u).ravel() + self._div_b @ ub.ravel()

    def step(self, state, dt):
        """Advance one time step, Windkessel first (explicit in the outflow)."""
        q = self.outlet_flow(state.u)
        wk_new = tuple(wk.step(s, qj, dt, par) for s, qj, par in zip(state.wk, q, self.windkessel))
        t_new = state.t + dt
        bc = BoundaryData(self.inlet_speed(t_new), tuple(s.p for s in wk_new))
        flux = self.face_fluxes(state.u, state.bc.g_u)
        p, p_out = state.p, state.bc.p_out
        u = state.u
        for _ in range(self.n_piso):
            u_star = self.momentum_predict(state, dt, bc, pressure=p, p_out=p_out, flux=flux)
            p, u = self.pressure_correct(u_star, dt, bc, p_prev=p, p_prev_out=p_out)
            p_out = bc.p_out
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(p))):
            raise NumericalError(f"non-finite solution at t={t_new:.6g}")
        return FomState(u, p, wk_new, t_new, bc)


@dataclass
class SnapshotDatabase:
    """Stored full-order solutions.

    ``u`` has shape ``(N_t, n_cells, 2)``, ``p`` ``(N_t, n_cells)``, ``g_u``
    ``(N_t,)`` and ``g_p`` ``(N_t, n_outlets)``.  ``initial`` holds the state
    at ``t0`` (not counted as a snapshot).
    """

    mesh: StructuredMesh
    times: np.ndarray
    u: np.ndarray
    p: np.ndarray
    g_u: np.ndarray
    g_p: np.ndarray
    initial: dict = field(default_factory=dict)
    config_text: str = ""
    wall_time: float = float("nan")

    def __len__(self):
        return len(self.times)

    def replace(self, **changes):
        data = dict(self.__dict__)
        data.update(changes)
        return SnapshotDatabase(**data)

    def save(self, directory):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        m = self.mesh
        (d / "mesh.txt").write_text(
            "%d %d %.17g %.17g %d\n" % (m.nx, m.ny, m.length, m.radius, m.n_outlets)
        )
        lines = ["# index t u_file p_file g_u " + " ".join(f"g_p_{j}" for j in range(m.n_outlets))]
        for k, t in enumerate(self.times):
            uf, pf = f"u_{k:04d}.fld", f"p_{k:04d}.fld"
            formats.write_field(d / uf, self.u[k], m.nx, m.ny)
            formats.write_field(d / pf, self.p[k], m.nx, m.ny)
            lines.append(_record(k, t, uf, pf, self.g_u[k], self.g_p[k]))
        (d / "manifest.txt").write_text("\n".join(lines) + "\n")
        if self.initial:
            ini = self.initial
            formats.write_field(d / "u_init.fld", ini["u"], m.nx, m.ny)
            formats.write_field(d / "p_init.fld", ini["p"], m.nx, m.ny)
            (d / "initial.txt").write_text(
                _record(-1, ini["t"], "u_init.fld", "p_init.fld", ini["g_u"], ini["g_p"]) + "\n"
            )
        if self.config_text:
            (d / "config.txt").write_text(self.config_text)
        (d / "timings.txt").write_text("fom_wall_time = %.17g\n" % self.wall_time)

    @classmethod
    def load(cls, directory):
        d = Path(directory)
        try:
            nx, ny, length, radius, n_out = (d / "mesh.txt").read_text().split()
        except (FileNotFoundError, ValueError) as exc:
            raise BundleError(f"{d}: missing or malformed mesh.txt") from exc
        mesh = StructuredMesh(int(nx), int(ny), float(length), float(radius), int(n_out))
        records = read_manifest(d / "manifest.txt")
        times = np.array([r["t"] for r in records])
        u = np.array([formats.read_field(d / r["u_file"])[0] for r in records]).reshape(-1, mesh.n_cells, 2)
        p = np.array([formats.read_field(d / r["p_file"])[0] for r in records]).reshape(-1, mesh.n_cells)
        g_u = np.array([r["g_u"] for r in records])
        g_p = np.array([r["g_p"] for r in records]).reshape(len(records), mesh.n_outlets)
        initial = {}
        if (d / "initial.txt").exists():
            (rec,) = read_manifest(d / "initial.txt")
            initial = {
                "t": rec["t"], "g_u": rec["g_u"], "g_p": np.array(rec["g_p"]),
                "u": formats.read_field(d / rec["u_file"])[0],
                "p": formats.read_field(d / rec["p_file"])[0],
            }
        config_text = (d / "config.txt").read_text() if (d / "config.txt").exists() else ""
        wall = float("nan")
        if (d / "timings.txt").exists():
            wall = float((d / "timings.txt").read_text().split("=")[1])
        return cls(mesh, times, u, p, g_u, g_p, initial, config_text, wall)


def _record(k, t, uf, pf, g_u, g_p):
    vals = " ".join("%.17g" % x for x in np.atleast_1d(g_p))
    return f"{k} %.17g {uf} {pf} %.17g {vals}" % (t, g_u)


def read_manifest(path):
    """Parse a snapshot manifest into a list of dicts."""
    try:
        text = Path(path).read_text()
    except FileNotFoundError as exc:
        raise BundleError(f"missing manifest {path}") from exc
    records = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) < 6:
            raise BundleError(f"{path}: malformed manifest line {line!r}")
        records.append({
            "index": int(parts[0]), "t": float(parts[1]), "u_file": parts[2],
            "p_file": parts[3], "g_u": float(parts[4]), "g_p": [float(x) for x in parts[5:]],
        })
    return records


def solver_from_config(cfg):
    mesh = StructuredMesh(cfg["mesh.nx"], cfg["mesh.ny"], cfg["mesh.length"],
                          cfg["mesh.radius"], cfg["mesh.n_outlets"])
    fluid = FluidParams(cfg["fluid.nu"], cfg["fluid.U"], cfg["fluid.L"])
    return ChannelFlowSolver(mesh, fluid, cfg.windkessel(), cfg["inlet.u0"],
                             n_piso=cfg["fom.n_piso"], lin_tol=cfg["fom.lin_tol"])


def run_fom(cfg, out_dir=None, progress=None):
    """Integrate the full-order model over ``(t0, T]`` and collect snapshots.

    Parameters
    ----------
    cfg : Config
    out_dir : path, optional
        If given, the database is written there.
    progress : callable, optional
        Called as ``progress(step, n_steps)`` after every step.

    Returns
    -------
    SnapshotDatabase
    """
    solver = solver_from_config(cfg)
    grid = TimeGrid(cfg["time.t0"], cfg["time.T"], cfg["time.dt"], cfg["time.stride"])
    log.info("FOM: %d steps, Re = %.3g", grid.n_steps, solver.fluid.reynolds)
    state = solver.initial_state(grid.t0)
    initial = {"t": state.t, "u": state.u, "p": state.p, "g_u": state.bc.g_u,
               "g_p": np.array(state.bc.p_out)}
    times, us, ps, gus, gps = [], [], [], [], []
    start = time.perf_counter()
    for n in range(1, grid.n_steps + 1):
        state = solver.step(state, grid.dt)
        state = FomState(state.u, state.p, state.wk, grid.time(n), state.bc)
        if n % grid.stride == 0:
            times.append(state.t)
            us.append(state.u)
            ps.append(state.p)
            gus.append(state.bc.g_u)
            gps.append(state.bc.p_out)
        if progress is not None:
            progress(n, grid.n_steps)
    wall = time.perf_counter() - start
    mesh = solver.mesh
    db = SnapshotDatabase(
        mesh, np.array(times), np.array(us).reshape(-1, mesh.n_cells, 2),
        np.array(ps).reshape(-1, mesh.n_cells), np.array(gus),
        np.array(gps).reshape(-1, mesh.n_outlets), initial, cfg.dumps(), wall,
    )
    if out_dir is not None:
        db.save(out_dir)
    return db
