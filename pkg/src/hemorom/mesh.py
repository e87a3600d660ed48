"""Structured 2D channel mesh, cell-centred fields and finite-volume operators.

Scalar fields are arrays of shape ``(n_cells,)`` and vector fields arrays of
shape ``(n_cells, 2)``; cells are numbered row-major, ``c = j * nx + i`` with
``i`` running along the channel axis.

Boundary data is passed as per-boundary-face arrays.  For the gradient,
divergence and convection operators a finite entry is a Dirichlet face value
and ``NaN`` means "use the owner cell value" (zero normal derivative).  The
Laplacian takes separate Dirichlet and Neumann arrays because it needs a
two-point face gradient.
"""

import numpy as np
import scipy.sparse as sp

from .errors import FieldShapeError

INLET = -1
WALL = -2

__all__ = [
    "INLET",
    "WALL",
    "StructuredMesh",
    "as_scalar_field",
    "as_vector_field",
    "inner_product",
    "norm",
    "boundary_values",
    "velocity_face_values",
    "pressure_face_values",
    "gradient",
    "divergence",
    "laplacian",
    "convection",
    "gradient_matrices",
    "divergence_matrices",
    "laplacian_matrices",
    "convection_matrices",
]


class StructuredMesh:
    """Uniform Cartesian mesh of a plane channel ``[0, L] x [-R, R]``.

    The west boundary is the inlet, north and south are walls and the east
    boundary is split into ``n_outlets`` contiguous outlets of (nearly) equal
    height.  A unit depth is assumed so volumes are m² and face areas m.

    Parameters
    ----------
    nx, ny : int
        Number of cells along and across the channel.
    length : float
        Channel length L in metres.
    radius : float
        Channel half-height R in metres.
    n_outlets : int, default=1
        Number of independent pressure outlets on the east boundary.
    """

    def __init__(self, nx, ny, length, radius, n_outlets=1):
        nx, ny, n_outlets = int(nx), int(ny), int(n_outlets)
        if nx < 1 or ny < 1:
            raise ValueError(f"mesh needs at least one cell per direction, got {nx}x{ny}")
        if not (length > 0 and radius > 0):
            raise ValueError("length and radius must be positive")
        if not 1 <= n_outlets <= ny:
            raise ValueError(f"n_outlets must lie in [1, ny={ny}], got {n_outlets}")
        self.nx, self.ny = nx, ny
        self.length, self.radius = float(length), float(radius)
        self.n_outlets = n_outlets
        self.hx = self.length / nx
        self.hy = 2.0 * self.radius / ny
        self.n_cells = nx * ny

        ii, jj = np.meshgrid(np.arange(nx), np.arange(ny))
        ii, jj = ii.ravel(), jj.ravel()
        self.centers = np.column_stack(
            [(ii + 0.5) * self.hx, -self.radius + (jj + 0.5) * self.hy]
        )
        self.cell_volumes = np.full(self.n_cells, self.hx * self.hy)

        own, nbr, nrm, area, dist = [], [], [], [], []
        for j in range(ny):
            for i in range(nx - 1):
                own.append(self.index(i, j))
                nbr.append(self.index(i + 1, j))
                nrm.append((1.0, 0.0))
                area.append(self.hy)
                dist.append(self.hx)
        for j in range(ny - 1):
            for i in range(nx):
                own.append(self.index(i, j))
                nbr.append(self.index(i, j + 1))
                nrm.append((0.0, 1.0))
                area.append(self.hx)
                dist.append(self.hy)
        self.face_owner = np.array(own, dtype=np.intp)
        self.face_neighbour = np.array(nbr, dtype=np.intp)
        self.face_normal = np.array(nrm, dtype=float).reshape(-1, 2)
        self.face_area = np.array(area, dtype=float)
        self.face_distance = np.array(dist, dtype=float)

        outlet_rows = np.array_split(np.arange(ny), n_outlets)
        outlet_of_row = np.empty(ny, dtype=int)
        for k, rows in enumerate(outlet_rows):
            outlet_of_row[rows] = k

        cell, nrm, area, dist, tag, centre = [], [], [], [], [], []
        for j in range(ny):
            c = self.index(0, j)
            cell.append(c)
            nrm.append((-1.0, 0.0))
            area.append(self.hy)
            dist.append(0.5 * self.hx)
            tag.append(INLET)
            centre.append((0.0, self.centers[c, 1]))
        for j in range(ny):
            c = self.index(nx - 1, j)
            cell.append(c)
            nrm.append((1.0, 0.0))
            area.append(self.hy)
            dist.append(0.5 * self.hx)
            tag.append(outlet_of_row[j])
            centre.append((self.length, self.centers[c, 1]))
        for i in range(nx):
            for j, sign in ((0, -1.0), (ny - 1, 1.0)):
                c = self.index(i, j)
                cell.append(c)
                nrm.append((0.0, sign))
                area.append(self.hx)
                dist.append(0.5 * self.hy)
                tag.append(WALL)
                centre.append((self.centers[c, 0], sign * self.radius))
        self.bface_cell = np.array(cell, dtype=np.intp)
        self.bface_normal = np.array(nrm, dtype=float)
        self.bface_area = np.array(area, dtype=float)
        self.bface_distance = np.array(dist, dtype=float)
        self.bface_tag = np.array(tag, dtype=int)
        self.bface_center = np.array(centre, dtype=float)

        for name in (
            "centers", "cell_volumes", "face_owner", "face_neighbour", "face_normal",
            "face_area", "face_distance", "bface_cell", "bface_normal", "bface_area",
            "bface_distance", "bface_tag", "bface_center",
        ):
            getattr(self, name).setflags(write=False)
        self._cache = {}

    def __repr__(self):
        return (
            f"StructuredMesh(nx={self.nx}, ny={self.ny}, length={self.length!r}, "
            f"radius={self.radius!r}, n_outlets={self.n_outlets})"
        )

    def index(self, i, j):
        return j * self.nx + i

    @property
    def n_faces(self):
        return len(self.face_owner)

    @property
    def n_bfaces(self):
        return len(self.bface_cell)

    @property
    def total_volume(self):
        return float(self.cell_volumes.sum())

    @property
    def inlet_area(self):
        return float(self.bface_area[self.inlet_faces].sum())

    @property
    def inlet_faces(self):
        return self.bface_tag == INLET

    @property
    def wall_faces(self):
        return self.bface_tag == WALL

    def outlet_faces(self, j=None):
        """Mask of the faces of outlet ``j`` (all outlets if ``None``)."""
        if j is None:
            return self.bface_tag >= 0
        if not 0 <= j < self.n_outlets:
            raise IndexError(f"outlet index {j} out of range for {self.n_outlets} outlets")
        return self.bface_tag == j

    @property
    def interior_cells(self):
        """Mask of cells that touch no boundary face."""
        mask = np.ones(self.n_cells, dtype=bool)
        mask[self.bface_cell] = False
        return mask

    def same_as(self, other):
        return (
            isinstance(other, StructuredMesh)
            and (self.nx, self.ny, self.length, self.radius, self.n_outlets)
            == (other.nx, other.ny, other.length, other.radius, other.n_outlets)
        )


# -- field validation ---------------------------------------------------------


def as_scalar_field(values, mesh, name="field"):
    arr = np.asarray(values, dtype=float)
    if arr.shape != (mesh.n_cells,):
        raise FieldShapeError(
            f"{name}: expected scalar field of shape ({mesh.n_cells},), got {arr.shape}"
        )
    return arr


def as_vector_field(values, mesh, name="field"):
    arr = np.asarray(values, dtype=float)
    if arr.shape != (mesh.n_cells, 2):
        raise FieldShapeError(
            f"{name}: expected vector field of shape ({mesh.n_cells}, 2), got {arr.shape}"
        )
    return arr


def _as_field(values, mesh, name="field"):
    arr = np.asarray(values, dtype=float)
    if arr.shape == (mesh.n_cells,) or arr.shape == (mesh.n_cells, 2):
        return arr
    raise FieldShapeError(f"{name}: shape {arr.shape} does not fit a mesh of {mesh.n_cells} cells")


def _face_array(values, mesh, ncomp, name):
    shape = (mesh.n_bfaces,) if ncomp == 1 else (mesh.n_bfaces, ncomp)
    if values is None:
        return np.full(shape, np.nan)
    arr = np.asarray(values, dtype=float)
    if arr.shape != shape:
        raise FieldShapeError(f"{name}: expected boundary array of shape {shape}, got {arr.shape}")
    return arr


def inner_product(f, g, mesh):
    """Volume-weighted L2 inner product of two scalar or two vector fields."""
    f = _as_field(f, mesh, "f")
    g = _as_field(g, mesh, "g")
    if f.shape != g.shape:
        raise FieldShapeError(f"cannot pair fields of shapes {f.shape} and {g.shape}")
    if f.ndim == 2:
        return float(np.sum(mesh.cell_volumes * np.sum(f * g, axis=1)))
    return float(np.sum(mesh.cell_volumes * f * g))


def norm(f, mesh):
    return float(np.sqrt(inner_product(f, f, mesh)))


def boundary_values(f, mesh, face_values=None):
    """Face values of ``f`` on every boundary face.

    Dirichlet entries of ``face_values`` are returned as given; ``NaN`` entries
    take the owner cell value.
    """
    f = _as_field(f, mesh)
    ncomp = 1 if f.ndim == 1 else 2
    fv = _face_array(face_values, mesh, ncomp, "face_values")
    return np.where(np.isfinite(fv), fv, f[mesh.bface_cell])


def velocity_face_values(mesh, inlet_value=0.0):
    """Boundary data of the channel velocity: plug inflow, no-slip walls,
    zero-gradient outlets."""
    fv = np.full((mesh.n_bfaces, 2), np.nan)
    fv[mesh.inlet_faces] = (inlet_value, 0.0)
    fv[mesh.wall_faces] = 0.0
    return fv


def pressure_face_values(mesh, outlet_values=0.0):
    """Boundary data of the pressure: Dirichlet on each outlet, zero gradient
    on inlet and walls."""
    vals = np.broadcast_to(np.asarray(outlet_values, dtype=float), (mesh.n_outlets,))
    fv = np.full(mesh.n_bfaces, np.nan)
    outlet = mesh.outlet_faces()
    fv[outlet] = vals[mesh.bface_tag[outlet]]
    return fv


# -- sparse building blocks ---------------------------------------------------


def _blocks(mesh):
    if "blocks" in mesh._cache:
        return mesh._cache["blocks"]
    n, nf, nb = mesh.n_cells, mesh.n_faces, mesh.n_bfaces
    own, nbr = mesh.face_owner, mesh.face_neighbour
    r = np.arange(nf)
    ones = np.ones(nf)
    blocks = {
        # oriented face -> cell sum: +1 to owner, -1 to neighbour
        "sint": sp.csr_matrix(
            (np.r_[ones, -ones], (np.r_[own, nbr], np.r_[r, r])), shape=(n, nf)
        ),
        "iint": sp.csr_matrix(
            (np.full(2 * nf, 0.5), (np.r_[r, r], np.r_[own, nbr])), shape=(nf, n)
        ),
        "dint": sp.csr_matrix((np.r_[-ones, ones], (np.r_[r, r], np.r_[own, nbr])), shape=(nf, n)),
        "sbnd": sp.csr_matrix(
            (np.ones(nb), (mesh.bface_cell, np.arange(nb))), shape=(n, nb)
        ),
        "ibnd": sp.csr_matrix(
            (np.ones(nb), (np.arange(nb), mesh.bface_cell)), shape=(nb, n)
        ),
        "vinv": sp.diags(1.0 / mesh.cell_volumes),
    }
    mesh._cache["blocks"] = blocks
    return blocks


def _interleave_rows(mx, my):
    n = mx.shape[0]
    perm = np.arange(2 * n).reshape(2, n).T.ravel()
    return sp.vstack([mx, my]).tocsr()[perm]


def _interleave_cols(mx, my):
    n = mx.shape[1]
    perm = np.arange(2 * n).reshape(2, n).T.ravel()
    return sp.hstack([mx, my]).tocsc()[:, perm].tocsr()


def gradient_matrices(mesh, dirichlet_mask=None):
    """Sparse Gauss gradient.

    Returns ``(G, Gb)`` such that the flattened (interleaved ``x, y``) gradient
    is ``G @ p + Gb @ pb`` where ``pb`` holds the Dirichlet face values (zero
    elsewhere) and ``dirichlet_mask`` flags Dirichlet boundary faces.
    """
    b = _blocks(mesh)
    dmask = np.zeros(mesh.n_bfaces, bool) if dirichlet_mask is None else np.asarray(dirichlet_mask, bool)
    keep = (~dmask).astype(float)
    comps, bcomps = [], []
    for d in range(2):
        a_int = mesh.face_area * mesh.face_normal[:, d]
        a_bnd = mesh.bface_area * mesh.bface_normal[:, d]
        m = b["sint"] @ sp.diags(a_int) @ b["iint"] + b["sbnd"] @ sp.diags(a_bnd * keep) @ b["ibnd"]
        comps.append(b["vinv"] @ m)
        bcomps.append(b["vinv"] @ b["sbnd"] @ sp.diags(a_bnd * dmask))
    return _interleave_rows(*comps), _interleave_rows(*bcomps)


def divergence_matrices(mesh, dirichlet_mask=None):
    """Sparse Gauss divergence of an interleaved vector field.

    Returns ``(D, Db)`` with ``div u = D @ u.ravel() + Db @ ub.ravel()``;
    ``ub`` holds Dirichlet face vectors (zero elsewhere).
    """
    b = _blocks(mesh)
    dmask = np.zeros(mesh.n_bfaces, bool) if dirichlet_mask is None else np.asarray(dirichlet_mask, bool)
    keep = (~dmask).astype(float)
    comps, bcomps = [], []
    for d in range(2):
        a_int = mesh.face_area * mesh.face_normal[:, d]
        a_bnd = mesh.bface_area * mesh.bface_normal[:, d]
        m = b["sint"] @ sp.diags(a_int) @ b["iint"] + b["sbnd"] @ sp.diags(a_bnd * keep) @ b["ibnd"]
        comps.append(b["vinv"] @ m)
        bcomps.append(b["vinv"] @ b["sbnd"] @ sp.diags(a_bnd * dmask))
    return _interleave_cols(*comps), _interleave_cols(*bcomps)


def laplacian_matrices(mesh, dirichlet_mask=None):
    """Sparse two-point Laplacian of a scalar (or one vector component).

    Returns ``(L, Ld, Ln)`` with ``lap f = L @ f + Ld @ fD + Ln @ gN`` where
    ``fD`` are Dirichlet face values and ``gN`` outward normal derivatives on
    the remaining faces (both zero where unused).
    """
    b = _blocks(mesh)
    dmask = np.zeros(mesh.n_bfaces, bool) if dirichlet_mask is None else np.asarray(dirichlet_mask, bool)
    coef_int = mesh.face_area / mesh.face_distance
    coef_bnd = mesh.bface_area / mesh.bface_distance * dmask
    lap = b["sint"] @ sp.diags(coef_int) @ b["dint"] - b["sbnd"] @ sp.diags(coef_bnd) @ b["ibnd"]
    ld = b["sbnd"] @ sp.diags(coef_bnd)
    ln = b["sbnd"] @ sp.diags(mesh.bface_area * (~dmask))
    return (b["vinv"] @ lap).tocsr(), (b["vinv"] @ ld).tocsr(), (b["vinv"] @ ln).tocsr()


def convection_matrices(mesh, flux_int, flux_bnd, dirichlet_mask=None):
    """Sparse convection ``(1/V) sum_f F_f v_f`` for prescribed face fluxes.

    Returns ``(C, Cb)`` acting on one component of the transported field and
    on its Dirichlet face values.
    """
    b = _blocks(mesh)
    dmask = np.zeros(mesh.n_bfaces, bool) if dirichlet_mask is None else np.asarray(dirichlet_mask, bool)
    m = b["sint"] @ sp.diags(flux_int) @ b["iint"] + b["sbnd"] @ sp.diags(flux_bnd * (~dmask)) @ b["ibnd"]
    mb = b["sbnd"] @ sp.diags(flux_bnd * dmask)
    return (b["vinv"] @ m).tocsr(), (b["vinv"] @ mb).tocsr()


# -- array-level operators ----------------------------------------------------


def _split(fv):
    mask = np.isfinite(fv)
    if mask.ndim == 2:
        if np.any(mask.any(axis=1) != mask.all(axis=1)):
            raise ValueError("vector face values must be all-finite or all-NaN per face")
        mask = mask[:, 0]
    return mask, np.where(np.isfinite(fv), fv, 0.0)


def gradient(p, mesh, face_values=None):
    """Cell gradient of a scalar field from the Gauss theorem with arithmetic
    mean face interpolation."""
    p = as_scalar_field(p, mesh, "p")
    mask, pb = _split(_face_array(face_values, mesh, 1, "face_values"))
    g, gb = gradient_matrices(mesh, mask)
    return (g @ p + gb @ pb).reshape(-1, 2)


def divergence(u, mesh, face_values=None):
    """Cell divergence of a vector field (Gauss theorem, mean face values)."""
    u = as_vector_field(u, mesh, "u")
    mask, ub = _split(_face_array(face_values, mesh, 2, "face_values"))
    d, db = divergence_matrices(mesh, mask)
    return d @ u.ravel() + db @ ub.ravel()


def laplacian(f, mesh, dirichlet=None, neumann=None):
    """Two-point flux Laplacian of a scalar or vector field.

    Parameters
    ----------
    f : ndarray
        Scalar ``(n,)`` or vector ``(n, 2)`` field.
    dirichlet : ndarray, optional
        Boundary face values (``NaN`` where the face is not Dirichlet).
    neumann : ndarray, optional
        Outward normal derivative on non-Dirichlet faces; defaults to zero.
    """
    f = _as_field(f, mesh, "f")
    ncomp = 1 if f.ndim == 1 else 2
    mask, fd = _split(_face_array(dirichlet, mesh, ncomp, "dirichlet"))
    gn = np.zeros_like(fd) if neumann is None else np.nan_to_num(_face_array(neumann, mesh, ncomp, "neumann"))
    lap, ld, ln = laplacian_matrices(mesh, mask)
    return lap @ f + ld @ fd + ln @ gn


def convection(w, v, mesh, w_faces=None, v_faces=None):
    """Discrete ``div(w ⊗ v)``: face fluxes of ``w`` transporting ``v``.

    ``v`` may be a scalar or a vector field; face values follow the usual
    Dirichlet/``NaN`` convention for each argument.
    """
    w = as_vector_field(w, mesh, "w")
    v = _as_field(v, mesh, "v")
    wb = boundary_values(w, mesh, w_faces)
    wf = 0.5 * (w[mesh.face_owner] + w[mesh.face_neighbour])
    flux_int = mesh.face_area * np.sum(wf * mesh.face_normal, axis=1)
    flux_bnd = mesh.bface_area * np.sum(wb * mesh.bface_normal, axis=1)
    ncomp = 1 if v.ndim == 1 else 2
    mask, vb = _split(_face_array(v_faces, mesh, ncomp, "v_faces"))
    c, cb = convection_matrices(mesh, flux_int, flux_bnd, mask)
    return c @ v + cb @ vb
