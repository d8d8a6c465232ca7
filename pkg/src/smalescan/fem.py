"""Meshes on the unit ball and assembly of the radius-parametrized forms.

Discretization is piecewise-linear on a uniform partition of [-1, 1] in
1D and on the structured polar-ring triangulation of the disc in 2D
(ring i of R carries 6i nodes at radius i/R).  All accuracy comes from
mesh refinement, never from element order.

For a mesh, metric and problem the assembler produces, at any scale
parameter r in [0, 1]:

    H(r)    matrix of the quadratic form
            h_r(u) = int A(r x) grad u . grad u + r^2 int w(r x) f(r x) u^2
    S       Euclidean H^1_0 Gram matrix int grad u . grad v  (r-independent)
    F(r,u)  residual of the semilinear functional, F_i = q_r(u_h, phi_i)
    J(r,u)  Jacobian of F; J(r, 0) equals H(r) by the same quadrature
    psi(r,u) discrete energy, whose exact gradient is F by construction

Quadrature: the gradient terms use the midpoint rule (1D) and the
3-point barycentric rule (2D); the weighted mass / nonlinear terms use
3-point Gauss (1D) and the 7-point degree-5 rule (2D), which integrates
the cubic nonlinearity of P1 functions exactly in 1D and near-exactly
in 2D.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import metric as metric_mod
from .metric import MetricModel
from .problem import ProblemSpec

__all__ = [
    "Mesh",
    "AssembledForm",
    "Assembler",
    "build_mesh",
    "assemble_h",
    "assemble_gram",
    "assemble_residual",
    "assemble_jacobian",
    "assemble_energy",
]

# Interior-dof chunk size for the 1D block partition (see spectral.inertia).
_CHUNK_1D = 64


@dataclass(frozen=True)
class Mesh:
    """P1 mesh of the unit ball in dimension 1 or 2.

    ``interior_dof_map[i]`` is the interior dof index of node i, or -1
    for boundary nodes.  ``block_offsets`` partitions the interior dofs
    into consecutive blocks such that the assembled matrices are block
    tridiagonal (1D: index chunks, 2D: the center node and the rings);
    the spectral module exploits this for fast inertia counts.
    """

    dim: int
    resolution: int
    nodes: np.ndarray                 # (N, dim)
    elements: np.ndarray              # (ne, dim + 1) node indices
    boundary_nodes: np.ndarray        # (N,) bool
    interior_dof_map: np.ndarray      # (N,) int, -1 on the boundary
    block_offsets: tuple              # interior-dof block boundaries
    boundary_edges: Optional[np.ndarray] = None     # (nb, 2), 2D only
    boundary_normals: Optional[np.ndarray] = None   # (nb, dim) outward units
    boundary_elements: Optional[np.ndarray] = None  # (nb,) adjacent element

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_interior(self) -> int:
        return int((~self.boundary_nodes).sum())


def build_mesh(dim: int, resolution: int) -> Mesh:
    """Deterministic mesh of the unit ball.

    1D: uniform partition of [-1, 1] into ``resolution`` segments.
    2D: polar-ring triangulation with ``resolution`` rings;
    node count 1 + 3 R (R + 1), 6 R^2 triangles.
    """
    if dim == 1:
        if resolution < 2:
            raise ValueError(f"1D resolution must be >= 2, got {resolution}")
        return _build_mesh_1d(resolution)
    if dim == 2:
        if resolution < 1:
            raise ValueError(f"2D ring count must be >= 1, got {resolution}")
        return _build_mesh_2d(resolution)
    raise ValueError(f"unsupported mesh dimension {dim}")


def _interior_map(boundary: np.ndarray) -> np.ndarray:
    dof = np.full(boundary.shape[0], -1, dtype=int)
    dof[~boundary] = np.arange(int((~boundary).sum()))
    return dof


def _build_mesh_1d(res: int) -> Mesh:
    nodes = np.linspace(-1.0, 1.0, res + 1).reshape(-1, 1)
    elements = np.column_stack([np.arange(res), np.arange(1, res + 1)])
    boundary = np.zeros(res + 1, dtype=bool)
    boundary[0] = boundary[-1] = True
    n_int = res - 1
    offsets = list(range(0, n_int, _CHUNK_1D)) + [n_int]
    return Mesh(
        dim=1,
        resolution=res,
        nodes=nodes,
        elements=elements,
        boundary_nodes=boundary,
        interior_dof_map=_interior_map(boundary),
        block_offsets=tuple(offsets),
    )


def _build_mesh_2d(rings: int) -> Mesh:
    R = rings
    nodes = [np.zeros(2)]
    ring_start = [None]  # first node index of ring i
    for i in range(1, R + 1):
        ring_start.append(len(nodes))
        theta = 2.0 * np.pi * np.arange(6 * i) / (6 * i)
        radius = i / R
        ring = np.column_stack([radius * np.cos(theta), radius * np.sin(theta)])
        if i == R:
            # Pin boundary nodes exactly onto the unit circle.
            ring /= np.linalg.norm(ring, axis=1)[:, None]
        nodes.extend(ring)
    nodes = np.asarray(nodes)

    elements = []
    # Innermost fan around the center node.
    s1 = ring_start[1]
    for j in range(6):
        elements.append((0, s1 + j, s1 + (j + 1) % 6))
    # Strip between ring i-1 and ring i, built sextant by sextant so the
    # pattern is invariant under rotation by 60 degrees.
    for i in range(2, R + 1):
        s_in, s_out = ring_start[i - 1], ring_start[i]
        m_in, m_out = 6 * (i - 1), 6 * i
        for k in range(6):
            for j in range(i):
                o0 = s_out + (k * i + j) % m_out
                o1 = s_out + (k * i + j + 1) % m_out
                a = s_in + (k * (i - 1) + j) % m_in
                elements.append((o0, o1, a))
            for j in range(i - 1):
                a0 = s_in + (k * (i - 1) + j) % m_in
                a1 = s_in + (k * (i - 1) + j + 1) % m_in
                o1 = s_out + (k * i + j + 1) % m_out
                elements.append((a0, o1, a1))
    elements = np.asarray(elements, dtype=int)

    # Enforce positive orientation.
    def signed_area2(v):
        e1, e2 = v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]
        return e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]

    cross = signed_area2(nodes[elements])
    flip = cross < 0.0
    elements[flip] = elements[flip][:, [0, 2, 1]]
    cross = signed_area2(nodes[elements])
    if np.any(cross <= 1e-14):
        raise RuntimeError("degenerate element in polar-ring mesh")

    boundary = np.zeros(len(nodes), dtype=bool)
    boundary[ring_start[R]:] = True

    # Boundary edges: edges used by exactly one triangle, oriented as in
    # that triangle; the outward normal is the clockwise rotation of the
    # edge vector (interior lies on the left of a ccw-traversed edge).
    edge_owner = {}
    for t, (a, b, c) in enumerate(elements):
        for p, q in ((a, b), (b, c), (c, a)):
            key = (min(p, q), max(p, q))
            if key in edge_owner:
                edge_owner[key] = None
            else:
                edge_owner[key] = (t, p, q)
    b_edges, b_tris = [], []
    for key, val in edge_owner.items():
        if val is not None:
            t, p, q = val
            b_edges.append((p, q))
            b_tris.append(t)
    order = np.argsort([min(e) for e in b_edges], kind="stable")
    b_edges = np.asarray(b_edges, dtype=int)[order]
    b_tris = np.asarray(b_tris, dtype=int)[order]
    tang = nodes[b_edges[:, 1]] - nodes[b_edges[:, 0]]
    normals = np.column_stack([tang[:, 1], -tang[:, 0]])
    normals /= np.linalg.norm(normals, axis=1)[:, None]
    if not np.all(np.asarray(boundary)[b_edges].all(axis=1)):
        raise RuntimeError("boundary edge with interior node")

    # Interior-dof blocks: center, then each interior ring.
    offsets = [0, 1]
    for i in range(1, R):
        offsets.append(offsets[-1] + 6 * i)
    return Mesh(
        dim=2,
        resolution=R,
        nodes=nodes,
        elements=elements,
        boundary_nodes=boundary,
        interior_dof_map=_interior_map(boundary),
        block_offsets=tuple(offsets),
        boundary_edges=b_edges,
        boundary_normals=normals,
        boundary_elements=b_tris,
    )


@dataclass(frozen=True)
class AssembledForm:
    """Discrete form H(r) plus the fixed Gram matrix S, interior dofs only."""

    H: sp.csr_matrix
    S: sp.csr_matrix
    r: float

    @property
    def n(self) -> int:
        return self.H.shape[0]


# Degree-5 rule on the reference triangle (barycentric points, weights
# summing to 1); used for the weighted mass and nonlinear terms.
_A1 = (6.0 - np.sqrt(15.0)) / 21.0
_A2 = (6.0 + np.sqrt(15.0)) / 21.0
_W1 = (155.0 - np.sqrt(15.0)) / 1200.0
_W2 = (155.0 + np.sqrt(15.0)) / 1200.0
_TRI7_BARY = np.array(
    [
        [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
        [1.0 - 2.0 * _A1, _A1, _A1],
        [_A1, 1.0 - 2.0 * _A1, _A1],
        [_A1, _A1, 1.0 - 2.0 * _A1],
        [1.0 - 2.0 * _A2, _A2, _A2],
        [_A2, 1.0 - 2.0 * _A2, _A2],
        [_A2, _A2, 1.0 - 2.0 * _A2],
    ]
)
_TRI7_W = np.array([9.0 / 40.0, _W1, _W1, _W1, _W2, _W2, _W2])

_TRI3_BARY = np.array(
    [
        [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
        [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
        [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0],
    ]
)
_TRI3_W = np.full(3, 1.0 / 3.0)

# 3-point Gauss on [-1, 1].
_G3_X = np.array([-np.sqrt(3.0 / 5.0), 0.0, np.sqrt(3.0 / 5.0)])
_G3_W = np.array([5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])


class Assembler:
    """Caches mesh geometry and quadrature data; assembles all forms.

    The expensive per-mesh precomputation (element gradients, quadrature
    points, scatter indices, the Gram matrix) happens once; per-radius
    assembly is a handful of vectorized evaluations.
    """

    def __init__(self, mesh: Mesh, metric: MetricModel, spec: ProblemSpec):
        if metric.dim != mesh.dim:
            raise ValueError(
                f"metric dimension {metric.dim} != mesh dimension {mesh.dim}"
            )
        self.mesh = mesh
        self.metric = metric
        self.spec = spec
        if mesh.dim == 1:
            self._setup_1d()
        else:
            self._setup_2d()
        ne, nv = self.elem_nodes.shape
        rows = np.repeat(self.elem_nodes, nv, axis=1).ravel()
        cols = np.tile(self.elem_nodes, (1, nv)).ravel()
        self._rows, self._cols = rows, cols
        self._int_idx = np.flatnonzero(~mesh.boundary_nodes)
        self._S = self._assemble_matrix(self._grad_element_matrices_euclid())
        self._lu_S = None

    # -- geometry -----------------------------------------------------------

    def _setup_1d(self):
        mesh = self.mesh
        self.elem_nodes = mesh.elements
        verts = mesh.nodes[mesh.elements][:, :, 0]     # (ne, 2)
        h = verts[:, 1] - verts[:, 0]
        if np.any(h <= 1e-14):
            raise ValueError("degenerate 1D element")
        ne = len(h)
        self.grads = np.stack([-1.0 / h, 1.0 / h], axis=1)[:, :, None]  # (ne,2,1)
        mid = 0.5 * (verts[:, 0] + verts[:, 1])
        self.grad_pts = mid[:, None, None]                 # (ne, 1, 1)
        self.grad_w = h[:, None]                           # midpoint rule
        x = mid[:, None] + 0.5 * h[:, None] * _G3_X[None, :]
        self.mass_pts = x[:, :, None]                      # (ne, 3, 1)
        self.mass_w = 0.5 * h[:, None] * _G3_W[None, :]
        lam1 = 0.5 * (1.0 + _G3_X)
        self.mass_phi = np.stack([1.0 - lam1, lam1], axis=0)  # (nv, qm) = (2, 3)

    def _setup_2d(self):
        mesh = self.mesh
        self.elem_nodes = mesh.elements
        v = mesh.nodes[mesh.elements]                      # (ne, 3, 2)
        e1 = v[:, 1] - v[:, 0]
        e2 = v[:, 2] - v[:, 0]
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        area = 0.5 * det
        if np.any(area <= 1e-14):
            raise ValueError("degenerate or misoriented triangle")
        g1 = np.stack([e2[:, 1], -e2[:, 0]], axis=1) / det[:, None]
        g2 = np.stack([-e1[:, 1], e1[:, 0]], axis=1) / det[:, None]
        self.grads = np.stack([-g1 - g2, g1, g2], axis=1)  # (ne, 3, 2)
        self.grad_pts = np.einsum("qi,tid->tqd", _TRI3_BARY, v)
        self.grad_w = area[:, None] * _TRI3_W[None, :]
        self.mass_pts = np.einsum("qi,tid->tqd", _TRI7_BARY, v)
        self.mass_w = area[:, None] * _TRI7_W[None, :]
        self.mass_phi = _TRI7_BARY.T                       # (3, 7)

    # -- generic element kernels ---------------------------------------------

    def _grad_element_matrices_euclid(self):
        w = self.grad_w.sum(axis=1)
        return np.einsum("t,tia,tja->tij", w, self.grads, self.grads)

    def _grad_element_matrices(self, r: float):
        ne, qg, d = self.grad_pts.shape
        A, _ = metric_mod.coefficients(
            self.metric, (r * self.grad_pts).reshape(-1, d)
        )
        A = A.reshape(ne, qg, d, d)
        return np.einsum("tq,tqab,tia,tjb->tij", self.grad_w, A, self.grads, self.grads)

    def _mass_weights(self, r: float):
        """Quadrature weight * w(r x) at the mass points, plus f(r x)."""
        ne, qm, d = self.mass_pts.shape
        pts = (r * self.mass_pts).reshape(-1, d)
        _, wdet = metric_mod.coefficients(self.metric, pts)
        fv = self.spec.f_values(pts)
        return (self.mass_w * wdet.reshape(ne, qm)), fv.reshape(ne, qm), pts

    def _assemble_matrix(self, elem_mats) -> sp.csr_matrix:
        n = self.mesh.n_nodes
        M = sp.coo_matrix(
            (elem_mats.ravel(), (self._rows, self._cols)), shape=(n, n)
        ).tocsr()
        M = M[self._int_idx][:, self._int_idx]
        return (0.5 * (M + M.T)).tocsr()

    def _full_vector(self, u: np.ndarray) -> np.ndarray:
        full = np.zeros(self.mesh.n_nodes)
        full[self._int_idx] = u
        return full

    def _u_at_mass_points(self, ufull):
        ue = ufull[self.elem_nodes]                        # (ne, nv)
        return ue @ self.mass_phi                          # (ne, qm)

    # -- public assembly ------------------------------------------------------

    def gram(self) -> sp.csr_matrix:
        return self._S

    def gram_lu(self):
        if self._lu_S is None:
            self._lu_S = spla.splu(self._S.tocsc())
        return self._lu_S

    def h(self, r: float) -> AssembledForm:
        if not 0.0 <= r <= 1.0:
            raise ValueError(f"scale parameter r = {r} outside [0, 1]")
        Ke = self._grad_element_matrices(r)
        wq, fq, _ = self._mass_weights(r)
        Me = np.einsum("tq,iq,jq->tij", wq * fq, self.mass_phi, self.mass_phi)
        H = self._assemble_matrix(Ke + r * r * Me)
        return AssembledForm(H=H, S=self._S, r=r)

    def residual(self, r: float, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        ufull = self._full_vector(u)
        ue = ufull[self.elem_nodes]
        ne, qg, d = self.grad_pts.shape
        A, _ = metric_mod.coefficients(
            self.metric, (r * self.grad_pts).reshape(-1, d)
        )
        A = A.reshape(ne, qg, d, d)
        gu = np.einsum("tia,ti->ta", self.grads, ue)
        Fe = np.einsum("tq,tia,tqab,tb->ti", self.grad_w, self.grads, A, gu)
        wq, fq, pts = self._mass_weights(r)
        uq = self._u_at_mass_points(ufull)
        vq = self.spec.v_values(fq, uq)
        Fe += r * r * np.einsum("tq,iq->ti", wq * vq, self.mass_phi)
        F = np.zeros(self.mesh.n_nodes)
        np.add.at(F, self.elem_nodes.ravel(), Fe.ravel())
        return F[self._int_idx]

    def jacobian(self, r: float, u: np.ndarray) -> sp.csr_matrix:
        u = np.asarray(u, dtype=float)
        ufull = self._full_vector(u)
        Ke = self._grad_element_matrices(r)
        wq, fq, _ = self._mass_weights(r)
        uq = self._u_at_mass_points(ufull)
        dvq = self.spec.dv_values(fq, uq)
        Me = np.einsum("tq,iq,jq->tij", wq * dvq, self.mass_phi, self.mass_phi)
        return self._assemble_matrix(Ke + r * r * Me)

    def energy(self, r: float, u: np.ndarray) -> float:
        """Discrete functional whose exact gradient is ``residual``."""
        u = np.asarray(u, dtype=float)
        ufull = self._full_vector(u)
        ue = ufull[self.elem_nodes]
        ne, qg, d = self.grad_pts.shape
        A, _ = metric_mod.coefficients(
            self.metric, (r * self.grad_pts).reshape(-1, d)
        )
        A = A.reshape(ne, qg, d, d)
        gu = np.einsum("tia,ti->ta", self.grads, ue)
        grad_term = np.einsum("tq,ta,tqab,tb->", self.grad_w, gu, A, gu)
        wq, fq, _ = self._mass_weights(r)
        uq = self._u_at_mass_points(ufull)
        gq = self.spec.g_values(fq, uq)
        return 0.5 * grad_term + r * r * float(np.sum(wq * gq))


# ---------------------------------------------------------------------------
# Free-function entry points
# ---------------------------------------------------------------------------

def assemble_h(mesh, metric, spec, r) -> AssembledForm:
    """H(r) over interior dofs plus the Gram matrix, see ``Assembler.h``."""
    return Assembler(mesh, metric, spec).h(r)


def assemble_gram(mesh) -> sp.csr_matrix:
    """Euclidean H^1_0 Gram matrix over interior dofs."""
    return Assembler(
        mesh, metric_mod.euclidean(mesh.dim), ProblemSpec(0.0)
    ).gram()


def assemble_residual(mesh, metric, spec, r, u) -> np.ndarray:
    return Assembler(mesh, metric, spec).residual(r, u)


def assemble_jacobian(mesh, metric, spec, r, u) -> sp.csr_matrix:
    return Assembler(mesh, metric, spec).jacobian(r, u)


def assemble_energy(mesh, metric, spec, r, u) -> float:
    return Assembler(mesh, metric, spec).energy(r, u)
