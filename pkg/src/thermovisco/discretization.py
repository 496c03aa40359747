"""Box meshes, Galerkin spaces and the assembled coupling operators.

Displacement lives in the span of the first ``n_disp`` vector hat functions
on interior nodes (zero on the boundary), stress in the span of the first
``k_stress`` cellwise-constant Mandel components (an L²-orthogonal basis),
and temperature in the full multilinear nodal space with no boundary
conditions (pure Neumann).  All element integrals of basis-function
products use closed forms; sampler integrals use 2-point Gauss per axis.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from dataclasses import dataclass
from typing import Callable

from .constitutive import SQRT2, sym_components, to_mandel


@dataclass(frozen=True)
class Mesh:
    """Uniform tensor-product mesh of an interval / rectangle / box."""

    dim: int
    extents: tuple
    cells: tuple
    nodes: np.ndarray        # (n_nodes, dim)
    cell_nodes: np.ndarray   # (n_cells, 2**dim), corner order: x-bit fastest
    spacing: tuple

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cell_nodes.shape[0]

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def volume(self) -> float:
        return float(np.prod(self.extents))

    @property
    def cell_centers(self) -> np.ndarray:
        return self.nodes[self.cell_nodes].mean(axis=1)

    @property
    def boundary_node_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_nodes, dtype=bool)
        for a in range(self.dim):
            mask |= np.isclose(self.nodes[:, a], 0.0)
            mask |= np.isclose(self.nodes[:, a], self.extents[a])
        return mask

    @property
    def interior_nodes(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_node_mask)


def _as_tuple(value, dim, name, cast):
    if np.isscalar(value):
        value = (value,) * dim
    value = tuple(cast(v) for v in value)
    if len(value) != dim:
        raise ValueError(f"{name} must have {dim} entries, got {len(value)}")
    return value


def build_mesh(dim: int, extents, cells) -> Mesh:
    """Uniform mesh with ``cells`` elements per axis on [0, extents]."""
    if dim not in (1, 2, 3):
        raise ValueError(f"dim must be 1, 2 or 3, got {dim}")
    extents = _as_tuple(extents, dim, "extents", float)
    cells = _as_tuple(cells, dim, "cells", int)
    if any(L <= 0.0 for L in extents):
        raise ValueError(f"extents must be positive, got {extents}")
    if any(m < 2 for m in cells):
        raise ValueError(f"need at least 2 cells per axis, got {cells}")

    npts = [m + 1 for m in cells]
    axes = [np.linspace(0.0, extents[a], npts[a]) for a in range(dim)]
    # Node id = i + nx*(j + ny*k): x index fastest.
    grids = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([g.reshape(-1, order="F") for g in grids], axis=-1)

    def node_id(idx):
        nid = 0
        for a in reversed(range(dim)):
            nid = nid * npts[a] + idx[a]
        return nid

    corners = []
    for local in range(2 ** dim):
        bits = [(local >> a) & 1 for a in range(dim)]
        corners.append(bits)

    cell_list = []
    ranges = [range(m) for m in cells]
    for ck in ranges[2] if dim == 3 else [0]:
        for cj in ranges[1] if dim >= 2 else [0]:
            for ci in ranges[0]:
                base = (ci, cj, ck)[:dim]
                cell_list.append([node_id([base[a] + b[a] for a in range(dim)]) for b in corners])
    cell_nodes = np.array(cell_list, dtype=np.int64)

    spacing = tuple(extents[a] / cells[a] for a in range(dim))
    return Mesh(dim, extents, cells, nodes, cell_nodes, spacing)


@dataclass(frozen=True)
class FieldCoefficients:
    """Coefficient vector tagged with the space it expands."""

    space: str  # displacement | stress | temperature
    values: np.ndarray

    def __post_init__(self):
        if self.space not in ("displacement", "stress", "temperature"):
            raise ValueError(f"unknown space tag {self.space!r}")


# 1D closed-form element integrals on [0, h]:
#   _m1: ∫ n_p n_q,  _k1: ∫ n_p' n_q',  _g1: ∫ n_p n_q'
def _m1(h):
    return h / 6.0 * np.array([[2.0, 1.0], [1.0, 2.0]])


def _k1(h):
    return 1.0 / h * np.array([[1.0, -1.0], [-1.0, 1.0]])


_G1 = np.array([[-0.5, 0.5], [-0.5, 0.5]])


def _kron_axes(factors):
    """Kronecker product with axis 0 (x) as the fastest local index."""
    out = factors[0]
    for f in factors[1:]:
        out = np.kron(f, out)
    return out


class GalerkinSystem:
    """Assembled discrete spaces and coupling operators on one mesh.

    Attributes
    ----------
    M_u : csr_matrix (n_disp, n_disp) — displacement mass matrix
    M_theta, K_theta : csr_matrix (n_temp, n_temp) — temperature mass/stiffness
    B : csr_matrix (k_stress, n_disp) — L² projection of ε(u) onto the
        stress basis (cellwise Mandel components of the cell-mean strain)
    D : csr_matrix (n_temp, n_disp) — divergence coupling ∫ N_i div φ_j
    stress_vol : (k_stress,) — L² norms² of the stress basis (cell volumes)

    Instances are immutable after construction and safe to share read-only.
    """

    def __init__(self, mesh: Mesh, n_disp: int, k_stress: int):
        dim = mesh.dim
        self.mesh = mesh
        self.s_comp = sym_components(dim)

        interior = mesh.interior_nodes
        max_disp = interior.size * dim
        max_stress = mesh.n_cells * self.s_comp
        if not 1 <= n_disp <= max_disp:
            raise ValueError(f"n_disp level must be in [1, {max_disp}], got {n_disp}")
        if not 1 <= k_stress <= max_stress:
            raise ValueError(f"k_stress level must be in [1, {max_stress}], got {k_stress}")
        self.n_disp = n_disp
        self.k_stress = k_stress
        self.n_temp = mesh.n_nodes

        # Displacement dof a <-> (interior node, component), node-major order;
        # the basis for n is a prefix of the basis for any larger level.
        self.disp_node = np.repeat(interior, dim)[:n_disp]
        self.disp_comp = np.tile(np.arange(dim), interior.size)[:n_disp]
        dof_of = -np.ones((mesh.n_nodes, dim), dtype=np.int64)
        dof_of[self.disp_node, self.disp_comp] = np.arange(n_disp)
        self._dof_of = dof_of

        # Stress dof a <-> (cell, Mandel component), cell-major order.
        self.stress_cell = np.repeat(np.arange(mesh.n_cells), self.s_comp)[:k_stress]
        self.stress_comp = np.tile(np.arange(self.s_comp), mesh.n_cells)[:k_stress]
        self.stress_vol = np.full(k_stress, mesh.cell_volume)

        self._build_reference(dim)
        self._assemble(mesh, dim)
        # Factor eagerly so instances stay immutable (and shareable) after
        # construction; a singular factorization means a broken basis.
        try:
            self._Mu_lu = spla.splu(self.M_u.tocsc())
        except RuntimeError as exc:
            raise ValueError(f"singular Gram matrix for displacement space: {exc}") from exc

    # -- reference-cell data ------------------------------------------------

    def _build_reference(self, dim):
        mesh = self.mesh
        h = mesh.spacing
        n_loc = 2 ** dim

        self._m_elem = _kron_axes([_m1(h[a]) for a in range(dim)])
        k_elem = np.zeros((n_loc, n_loc))
        for a in range(dim):
            fac = [_k1(h[b]) if b == a else _m1(h[b]) for b in range(dim)]
            k_elem += _kron_axes(fac)
        self._k_elem = k_elem
        # ∫ N_p ∂N_q/∂x_c per axis c (exact; _G1 is h-independent).
        self._d_elem = [
            _kron_axes([_G1 if b == c else _m1(h[b]) for b in range(dim)]) for c in range(dim)
        ]
        # Gradients at the cell center: ∂N_p/∂x_a = sign / (h_a 2^{d-1}).
        grad_c = np.zeros((n_loc, dim))
        for p in range(n_loc):
            for a in range(dim):
                sign = 1.0 if (p >> a) & 1 else -1.0
                grad_c[p, a] = sign / (h[a] * 2 ** (dim - 1))
        self._grad_center = grad_c

        # 2-point Gauss per axis on the reference cell [0,1]^d.
        g1 = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
        pts = np.stack(np.meshgrid(*([g1] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
        self._gauss_ref = pts
        self._gauss_w = np.full(pts.shape[0], mesh.cell_volume / pts.shape[0])
        self._gauss_N = self._shape_values(pts)                   # (n_g, n_loc)
        self._gauss_dN = self._shape_gradients(pts)               # (n_g, n_loc, dim)
        corners = np.stack(np.meshgrid(*([np.array([0.0, 1.0])] * dim),
                                       indexing="ij"), axis=-1).reshape(-1, dim)
        self._corner_dN = self._shape_gradients(corners)          # (n_loc, n_loc, dim)

        cn = mesh.cell_nodes
        self._gauss_xy = (mesh.nodes[cn[:, 0]][:, None, :]
                          + self._gauss_ref[None, :, :] * np.array(h))  # (n_cells, n_g, dim)
        # Scatter index pattern for per-cell (n_loc x n_loc) blocks.
        self._pat_rows = np.repeat(cn, n_loc, axis=1).ravel()
        self._pat_cols = np.tile(cn, (1, n_loc)).ravel()

    def _shape_values(self, xi):
        dim = self.mesh.dim
        n_loc = 2 ** dim
        vals = np.ones((xi.shape[0], n_loc))
        for p in range(n_loc):
            for a in range(dim):
                t = xi[:, a]
                vals[:, p] *= t if (p >> a) & 1 else (1.0 - t)
        return vals

    def _shape_gradients(self, xi):
        """Physical gradients ∂N_p/∂x_a at reference points xi."""
        dim = self.mesh.dim
        h = self.mesh.spacing
        n_loc = 2 ** dim
        grads = np.zeros((xi.shape[0], n_loc, dim))
        for p in range(n_loc):
            for a in range(dim):
                g = np.ones(xi.shape[0])
                for b in range(dim):
                    t = xi[:, b]
                    if b == a:
                        g *= (1.0 if (p >> b) & 1 else -1.0) / h[b]
                    else:
                        g *= t if (p >> b) & 1 else (1.0 - t)
                grads[:, p, a] = g
        return grads

    # -- assembly -------------------------------------------------------------

    def _assemble(self, mesh, dim):
        n_loc = 2 ** dim
        cn = mesh.cell_nodes

        def accumulate(elem):
            data = np.tile(elem.ravel(), mesh.n_cells)
            return sp.coo_matrix((data, (self._pat_rows, self._pat_cols)),
                                 shape=(mesh.n_nodes, mesh.n_nodes)).tocsr()

        self.M_theta = accumulate(self._m_elem)
        # Constants are the Neumann kernel: K @ 1 vanishes exactly in 1D and
        # to one or two ulp of the entry scale in 2D/3D (hx/hy ratios are not
        # exactly representable, so bitwise zero is unattainable there).
        self.K_theta = accumulate(self._k_elem)

        # Displacement mass: block copy of the scalar mass at included dofs.
        rows, cols, data = [], [], []
        for e in range(mesh.n_cells):
            dofs = self._dof_of[cn[e]]  # (n_loc, dim)
            for p in range(n_loc):
                for q in range(n_loc):
                    m = self._m_elem[p, q]
                    for c in range(dim):
                        a, b = dofs[p, c], dofs[q, c]
                        if a >= 0 and b >= 0:
                            rows.append(a)
                            cols.append(b)
                            data.append(m)
        self.M_u = sp.coo_matrix((data, (rows, cols)),
                                 shape=(self.n_disp, self.n_disp)).tocsr()

        # Divergence coupling D[i, j] = ∫ N_i ∂N_m/∂x_c for dof j = (m, c).
        rows, cols, data = [], [], []
        for e in range(mesh.n_cells):
            dofs = self._dof_of[cn[e]]
            for q in range(n_loc):
                for c in range(dim):
                    j = dofs[q, c]
                    if j < 0:
                        continue
                    for p in range(n_loc):
                        rows.append(cn[e, p])
                        cols.append(j)
                        data.append(self._d_elem[c][p, q])
        self.D = sp.coo_matrix((data, (rows, cols)),
                               shape=(self.n_temp, self.n_disp)).tocsr()

        # Strain projection B: Mandel components of the cell-mean of ε(φ_j).
        from .constitutive import _OFFDIAG
        offdiag = _OFFDIAG[dim]
        rows, cols, data = [], [], []
        for a in range(self.k_stress):
            e = self.stress_cell[a]
            comp = self.stress_comp[a]
            dofs = self._dof_of[cn[e]]
            for p in range(n_loc):
                g = self._grad_center[p]  # cell mean of a multilinear gradient = center value
                for c in range(dim):
                    j = dofs[p, c]
                    if j < 0:
                        continue
                    if comp < dim:
                        val = g[comp] if c == comp else 0.0
                    else:
                        (i1, i2) = offdiag[comp - dim]
                        val = 0.0
                        if c == i1:
                            val += 0.5 * SQRT2 * g[i2]
                        if c == i2:
                            val += 0.5 * SQRT2 * g[i1]
                    if val != 0.0:
                        rows.append(a)
                        cols.append(j)
                        data.append(val)
        self.B = sp.coo_matrix((data, (rows, cols)),
                               shape=(self.k_stress, self.n_disp)).tocsr()
        # ∫ ψ_a : ε(φ_j) = vol * B[a, j] (midpoint is exact here).
        self.S = sp.diags(self.stress_vol) @ self.B

    # -- solves and field plumbing ---------------------------------------------

    def solve_mass_u(self, rhs: np.ndarray) -> np.ndarray:
        return self._Mu_lu.solve(rhs)

    def nodal_displacement(self, coeffs: np.ndarray) -> np.ndarray:
        """Expand coefficients to a full (n_nodes, dim) nodal array (zeros elsewhere)."""
        full = np.zeros((self.mesh.n_nodes, self.mesh.dim))
        full[self.disp_node, self.disp_comp] = coeffs
        return full

    def cell_center_values(self, nodal: np.ndarray) -> np.ndarray:
        """Q1 interpolant at cell centers = mean of the corner values."""
        return nodal[self.mesh.cell_nodes].mean(axis=1)

    def divergence_gauss(self, v_coeffs: np.ndarray) -> np.ndarray:
        """div u_t at the Gauss points of every cell, shape (n_cells, n_g)."""
        V = self.nodal_displacement(v_coeffs)[self.mesh.cell_nodes]  # (n_cells, n_loc, dim)
        return np.einsum("gpd,epd->eg", self._gauss_dN, V)

    def divergence_sup(self, v_coeffs: np.ndarray) -> float:
        """sup-norm of the piecewise-multilinear div u_t (attained at corners)."""
        V = self.nodal_displacement(v_coeffs)[self.mesh.cell_nodes]
        vals = np.einsum("gpd,epd->eg", self._corner_dN, V)
        return float(np.abs(vals).max()) if vals.size else 0.0

    def advection_matrix(self, div_gauss: np.ndarray) -> sp.csr_matrix:
        """Assemble ∫ div(u_t) N_i N_j with 2-pt Gauss from per-cell values."""
        blocks = np.einsum("eg,g,gp,gq->epq", div_gauss, self._gauss_w,
                           self._gauss_N, self._gauss_N)
        return sp.coo_matrix((blocks.ravel(), (self._pat_rows, self._pat_cols)),
                             shape=(self.n_temp, self.n_temp)).tocsr()

    def heat_source_vector(self, cell_values: np.ndarray) -> np.ndarray:
        """∫ s φ_i for a cellwise-constant source, midpoint-consistent."""
        weights = cell_values * self.mesh.cell_volume / (2 ** self.mesh.dim)
        rhs = np.zeros(self.n_temp)
        np.add.at(rhs, self.mesh.cell_nodes.ravel(),
                  np.repeat(weights, 2 ** self.mesh.dim))
        return rhs

    def load_vector(self, f: Callable, t: float) -> np.ndarray:
        """∫ f(t)·φ_j with 2-pt Gauss per cell; f maps (t, pts) -> (m, dim)."""
        out = np.zeros(self.n_disp)
        pts = self._gauss_xy.reshape(-1, self.mesh.dim)
        fv = np.asarray(f(t, pts), dtype=float).reshape(self.mesh.n_cells,
                                                        self._gauss_ref.shape[0],
                                                        self.mesh.dim)
        # contribution to dof (node p, comp c): Σ_g w_g f_c(x_g) N_p(x_g)
        contrib = np.einsum("g,egd,gp->epd", self._gauss_w, fv, self._gauss_N)
        dofs = self._dof_of[self.mesh.cell_nodes]  # (n_cells, n_loc, dim)
        mask = dofs >= 0
        np.add.at(out, dofs[mask], contrib[mask])
        return out

    def integrate_nodal(self, nodal_values: np.ndarray) -> float:
        """∫ of the Q1 interpolant with the given nodal values."""
        return float((self.M_theta @ nodal_values).sum())

    def locate(self, pts: np.ndarray):
        """Cell index and reference coordinates of physical points."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        dim = self.mesh.dim
        h = np.array(self.mesh.spacing)
        idx = np.floor(pts / h).astype(np.int64)
        idx = np.clip(idx, 0, np.array(self.mesh.cells) - 1)
        ref = pts / h - idx
        cell = idx[:, 0]
        if dim >= 2:
            cell = cell + self.mesh.cells[0] * idx[:, 1]
        if dim == 3:
            cell = cell + self.mesh.cells[0] * self.mesh.cells[1] * idx[:, 2]
        return cell, ref


def build_spaces(mesh: Mesh, n_disp_level: int, k_stress_level: int) -> GalerkinSystem:
    """Construct the discrete spaces and assemble all coupling matrices."""
    return GalerkinSystem(mesh, n_disp_level, k_stress_level)


def project_displacement(sys: GalerkinSystem, sampler: Callable) -> FieldCoefficients:
    """L² projection onto the displacement space.

    ``sampler`` maps points (m, dim) to vectors (m, dim) and should vanish
    on the boundary.  The residual is orthogonal to every basis function.
    """
    pts = sys._gauss_xy.reshape(-1, sys.mesh.dim)
    fv = np.asarray(sampler(pts), dtype=float).reshape(
        sys.mesh.n_cells, sys._gauss_ref.shape[0], sys.mesh.dim)
    contrib = np.einsum("g,egd,gp->epd", sys._gauss_w, fv, sys._gauss_N)
    b = np.zeros(sys.n_disp)
    dofs = sys._dof_of[sys.mesh.cell_nodes]
    mask = dofs >= 0
    np.add.at(b, dofs[mask], contrib[mask])
    return FieldCoefficients("displacement", sys.solve_mass_u(b))


def project_stress(sys: GalerkinSystem, sampler: Callable) -> FieldCoefficients:
    """L² projection onto the stress space: cell means of Mandel components.

    ``sampler`` maps points (m, dim) to symmetric matrices (m, dim, dim).
    """
    pts = sys._gauss_xy.reshape(-1, sys.mesh.dim)
    mats = np.asarray(sampler(pts), dtype=float)
    mandel = to_mandel(mats).reshape(sys.mesh.n_cells, sys._gauss_ref.shape[0], sys.s_comp)
    means = np.einsum("g,egc->ec", sys._gauss_w, mandel) / sys.mesh.cell_volume
    vals = means[sys.stress_cell, sys.stress_comp]
    return FieldCoefficients("stress", vals)


def strain(sys: GalerkinSystem, disp: FieldCoefficients) -> FieldCoefficients:
    """Symmetric gradient expanded in the stress basis (in 1D: u_x)."""
    if disp.space != "displacement":
        raise ValueError(f"strain expects displacement coefficients, got {disp.space!r}")
    return FieldCoefficients("stress", sys.B @ disp.values)


def eval_displacement(sys: GalerkinSystem, coeffs: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Evaluate the displacement field at physical points, shape (m, dim)."""
    nodal = sys.nodal_displacement(coeffs)
    cell, ref = sys.locate(pts)
    N = sys._shape_values(ref)
    return np.einsum("mp,mpd->md", N, nodal[sys.mesh.cell_nodes[cell]])


def eval_temperature(sys: GalerkinSystem, theta: np.ndarray, pts: np.ndarray) -> np.ndarray:
    cell, ref = sys.locate(pts)
    N = sys._shape_values(ref)
    return np.einsum("mp,mp->m", N, theta[sys.mesh.cell_nodes[cell]])


def eval_stress(sys: GalerkinSystem, coeffs: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Evaluate the piecewise-constant stress as Mandel vectors (m, s)."""
    full = np.zeros((sys.mesh.n_cells, sys.s_comp))
    full[sys.stress_cell, sys.stress_comp] = coeffs
    cell, _ = sys.locate(pts)
    return full[cell]
