"""Brute-force reference implementations used by the tests.

Everything here walks the grid cell by cell with explicit (i, j) neighbour
lookups and plain Python loops.  It shares no code with the package's sparse
operators; only the discretization rules are the same:

* interior face value: arithmetic mean of the two cells;
* boundary face value: the Dirichlet value if one is given, else the cell value;
* two-point diffusive flux, half-cell distance at Dirichlet boundary faces,
  zero flux at the other boundary faces.
"""

import numpy as np

DIRS = (("W", -1, 0, (-1.0, 0.0)), ("E", 1, 0, (1.0, 0.0)),
        ("S", 0, -1, (0.0, -1.0)), ("N", 0, 1, (0.0, 1.0)))


class Grid:
    def __init__(self, nx, ny, length, radius, n_outlets=1):
        self.nx, self.ny = nx, ny
        self.hx = length / nx
        self.hy = 2.0 * radius / ny
        self.vol = self.hx * self.hy
        self.n = nx * ny
        rows = np.array_split(np.arange(ny), n_outlets)
        self.outlet_of_row = {int(r): k for k, rr in enumerate(rows) for r in rr}

    def cell(self, i, j):
        return j * self.nx + i

    def boundary_kind(self, i, j, d):
        """``None`` for an interior face, else ('inlet'|'wall'|'outlet', outlet index)."""
        name, di, dj, _ = d
        ii, jj = i + di, j + dj
        if 0 <= ii < self.nx and 0 <= jj < self.ny:
            return None
        if name == "W":
            return ("inlet", None)
        if name == "E":
            return ("outlet", self.outlet_of_row[j])
        return ("wall", None)

    def area(self, d):
        return self.hy if d[0] in "WE" else self.hx

    def dist(self, d):
        return self.hx if d[0] in "WE" else self.hy


def velocity_bc(inlet_value):
    """Dirichlet map for velocity-like fields: plug inflow, no-slip, free outlets."""
    return {"inlet": np.array([inlet_value, 0.0]), "wall": np.zeros(2), "outlet": None}


def pressure_bc(outlet_values):
    vals = np.atleast_1d(np.asarray(outlet_values, dtype=float))
    return {"inlet": None, "wall": None, "outlet": vals}


def free_bc():
    return {"inlet": None, "wall": None, "outlet": None}


def _dirichlet(bc, kind):
    name, k = kind
    v = bc[name]
    if v is None:
        return None
    return v[k] if name == "outlet" else v


def face_value(g, f, i, j, d, bc):
    c = g.cell(i, j)
    kind = g.boundary_kind(i, j, d)
    if kind is None:
        nb = g.cell(i + d[1], j + d[2])
        return 0.5 * (f[c] + f[nb])
    v = _dirichlet(bc, kind)
    return f[c] if v is None else v


def gradient(g, p, bc):
    out = np.zeros((g.n, 2))
    for j in range(g.ny):
        for i in range(g.nx):
            c = g.cell(i, j)
            for d in DIRS:
                out[c] += face_value(g, p, i, j, d, bc) * g.area(d) * np.array(d[3])
            out[c] /= g.vol
    return out


def divergence(g, u, bc):
    out = np.zeros(g.n)
    for j in range(g.ny):
        for i in range(g.nx):
            c = g.cell(i, j)
            for d in DIRS:
                out[c] += np.dot(face_value(g, u, i, j, d, bc), d[3]) * g.area(d)
            out[c] /= g.vol
    return out


def laplacian(g, f, bc):
    out = np.zeros_like(f, dtype=float)
    for j in range(g.ny):
        for i in range(g.nx):
            c = g.cell(i, j)
            acc = np.zeros_like(f[c], dtype=float)
            for d in DIRS:
                kind = g.boundary_kind(i, j, d)
                if kind is None:
                    nb = g.cell(i + d[1], j + d[2])
                    acc = acc + g.area(d) * (f[nb] - f[c]) / g.dist(d)
                else:
                    v = _dirichlet(bc, kind)
                    if v is not None:
                        acc = acc + g.area(d) * (v - f[c]) / (0.5 * g.dist(d))
            out[c] = acc / g.vol
    return out


def convection(g, w, v, w_bc, v_bc):
    """``div(w ⊗ v)``: the face flux of ``w`` carries the face value of ``v``."""
    out = np.zeros_like(v, dtype=float)
    for j in range(g.ny):
        for i in range(g.nx):
            c = g.cell(i, j)
            acc = np.zeros_like(v[c], dtype=float)
            for d in DIRS:
                flux = np.dot(face_value(g, w, i, j, d, w_bc), d[3]) * g.area(d)
                acc = acc + flux * face_value(g, v, i, j, d, v_bc)
            out[c] = acc / g.vol
    return out


def dot(g, f, h):
    total = 0.0
    for c in range(g.n):
        total += g.vol * float(np.sum(np.asarray(f[c]) * np.asarray(h[c])))
    return total


def outlet_normal_flux(g, test, test_bc, trial, trial_bc):
    """``sum_outlet_faces area * test_face * (trial_face - trial_cell) / (hx/2)``."""
    total = 0.0
    d = DIRS[1]
    i = g.nx - 1
    for j in range(g.ny):
        c = g.cell(i, j)
        tf = face_value(g, test, i, j, d, test_bc)
        qf = face_value(g, trial, i, j, d, trial_bc)
        total += g.area(d) * tf * (qf - trial[c]) / (0.5 * g.hx)
    return total


def reduced_operators(g, vel, prs, n_lift_p):
    """All reduced tensors by quadrature loops.

    ``vel`` and ``prs`` are lists of ``(field, bc)``; the first velocity entry
    and the first ``n_lift_p`` pressure entries are the lifting fields.
    """
    tu, tp = vel[1:], prs[n_lift_p:]
    nu_, np_, eu, ep = len(tu), len(tp), len(vel), len(prs)
    M = np.zeros((nu_, eu))
    B = np.zeros((nu_, eu))
    K = np.zeros((nu_, ep))
    P = np.zeros((np_, eu))
    D = np.zeros((np_, ep))
    N = np.zeros((np_, ep))
    C = np.zeros((nu_, eu, eu))
    G = np.zeros((np_, eu, eu))
    lap = [laplacian(g, f, bc) for f, bc in vel]
    div = [divergence(g, f, bc) for f, bc in vel]
    grad = [gradient(g, q, bc) for q, bc in prs]
    for i, (vi, _) in enumerate(tu):
        for j, (vj, _) in enumerate(vel):
            M[i, j] = dot(g, vi, vj)
            B[i, j] = dot(g, vi, lap[j])
        for j in range(ep):
            K[i, j] = dot(g, vi, grad[j])
    for i, (qi, qbc) in enumerate(tp):
        for j in range(eu):
            P[i, j] = dot(g, qi, div[j])
        for j, (qj, bcj) in enumerate(prs):
            D[i, j] = dot(g, grad[n_lift_p + i], grad[j])
            N[i, j] = outlet_normal_flux(g, qi, qbc, qj, bcj)
    for j, (fj, bj) in enumerate(vel):
        for k, (fk, bk) in enumerate(vel):
            cjk = convection(g, fj, fk, bj, bk)
            dc = divergence(g, cjk, free_bc())
            for i, (vi, _) in enumerate(tu):
                C[i, j, k] = dot(g, vi, cjk)
            for i, (qi, _) in enumerate(tp):
                G[i, j, k] = dot(g, qi, dc)
    return dict(M=M, B=B, C=C, K=K, P=P, D=D, N=N, G=G)


def dense_pod(S, w):
    """POD by a dense SVD of the weighted snapshot matrix.

    Returns eigenvalues of ``(1/N_t) S W S^T`` (descending) and the left
    singular structure as weighted-orthonormal modes.
    """
    nt = S.shape[0]
    sw = np.sqrt(w)
    _, sig, vt = np.linalg.svd(S * sw, full_matrices=False)
    lam = sig**2 / nt
    modes = vt / sw
    return lam, modes


def windkessel_implicit(pp, q, dt, rp, rd, c, pd=0.0):
    """Hand-solved implicit Euler step of ``C dpp/dt + (pp - pd)/Rd = Q``."""
    pp_new = (pp + dt / c * (q + pd / rd)) / (1.0 + dt / (rd * c))
    return pp_new, pp_new + rp * q
