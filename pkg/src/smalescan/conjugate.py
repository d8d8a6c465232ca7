"""Scan the radius family, locate conjugate radii, crossing forms, index.

A conjugate radius is a parameter r* where the discrete form H(r)
becomes degenerate.  Since the crossing form is negative definite,
eigenvalue branches cross zero transversally downward, so the negative
count n_neg(H(r)) is a nondecreasing step function of r and every
crossing is located by bisection on that integer.

The crossing form on the kernel at r* is computed two independent
ways: as the central difference of the assembled bilinear form in r
(the precision anchor), and as the boundary integral

    Gamma[u] = -(1/r*) int_{dB} <grad u, x>^2 <A(r* x) x, x> dS

evaluated with elementwise-constant gradients from boundary-adjacent
elements (the formula witness).  Their agreement, the negative
definiteness of the form, and the index identity

    mu(H(1)) = sum of multiplicities over 0 < r < 1

are the verification products of this module.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import metric as metric_mod
from .fem import Assembler, Mesh
from .metric import MetricModel
from .problem import ProblemSpec
from .spectral import FactorizationError, inertia, kernel_eigenpairs, smallest_eigenpairs

__all__ = [
    "ScanResult",
    "ConjugateRadius",
    "CrossingFormReport",
    "IndexReport",
    "VerificationError",
    "DegenerateRadiusOneError",
    "scan",
    "locate",
    "crossing_form_fd",
    "crossing_form_boundary",
    "verify_crossing",
    "verify_index",
]

R_MIN_FLOOR = 1e-3
BISECTION_TOL = {1: 1e-8, 2: 1e-6}
KERNEL_RESIDUAL_TOL = 1e-6
KERNEL_THRESHOLD_AT_ONE = 1e-7
DEFAULT_GRID_POINTS = 200


class VerificationError(RuntimeError):
    """A verified identity or definiteness property failed."""


class DegenerateRadiusOneError(RuntimeError):
    """H(1) is degenerate: the standing assumption m(1) = 0 is violated."""


@dataclass(frozen=True)
class ScanResult:
    """Per-radius smallest pencil eigenvalues and negative counts."""

    r: np.ndarray
    n_neg: np.ndarray
    eigenvalues: Optional[np.ndarray]  # (len(r), k) or None when k = 0

    def brackets(self) -> List[Tuple[float, float, int]]:
        """Consecutive grid intervals across which n_neg jumps."""
        out = []
        for i in range(len(self.r) - 1):
            jump = int(self.n_neg[i + 1] - self.n_neg[i])
            if jump != 0:
                out.append((float(self.r[i]), float(self.r[i + 1]), jump))
        return out


@dataclass(frozen=True)
class ConjugateRadius:
    r_star: float
    multiplicity: int
    kernel_basis: np.ndarray        # (n, m), S-orthonormal columns
    bracket: Tuple[float, float]

    @property
    def bracket_width(self) -> float:
        return self.bracket[1] - self.bracket[0]


@dataclass(frozen=True)
class CrossingFormReport:
    r_star: float
    multiplicity: int
    gamma_fd: np.ndarray
    gamma_bd: np.ndarray
    signature: int
    agreement: float


@dataclass(frozen=True)
class IndexReport:
    morse_index_at_1: int
    conjugate_list: List[Tuple[float, int]]
    sum_m: int
    identity_holds: bool
    morse_index_small_r: int
    corollary_bound: int


def _n_neg_evaluator(asm: Assembler, strict: bool = True):
    """Closure r -> n_neg(H(r)); retries with a nudged r on breakdown.

    A singular leading block in the Schur recurrence occurs only on a
    measure-zero set of radii; a deterministic nudge of relative size
    1e-9 moves off it without affecting any located quantity (bisection
    tolerances are 1e-8 and coarser).
    """
    blocks = asm.mesh.block_offsets

    def n_neg(r: float) -> int:
        shift = 0.0
        for attempt in range(4):
            try:
                form = asm.h(min(r + shift, 1.0))
                return inertia(form.H, block_offsets=blocks, strict=strict).n_neg
            except FactorizationError:
                shift = (attempt + 1) * 1e-9 * (1.0 + r)
        raise FactorizationError(f"inertia evaluation failed near r = {r}")

    return n_neg


def scan(
    mesh: Mesh,
    metric: MetricModel,
    spec: ProblemSpec,
    r_grid: Sequence[float],
    k: int = 0,
    assembler: Optional[Assembler] = None,
    threads: int = 1,
) -> ScanResult:
    """Negative counts (and optionally k smallest eigenvalues) over a grid.

    The grid must be ascending inside [R_MIN_FLOOR, 1]; the lower cutoff
    excludes the degenerate limit r -> 0 where the ball collapses.
    Grid points are independent; with ``threads > 1`` they are evaluated
    concurrently and collected in grid order, so output is identical to
    the sequential run.
    """
    r_grid = np.asarray(list(r_grid), dtype=float)
    if r_grid.ndim != 1 or len(r_grid) == 0:
        raise ValueError("empty scan grid")
    if np.any(np.diff(r_grid) <= 0.0):
        raise ValueError("scan grid must be strictly ascending")
    if r_grid[0] < R_MIN_FLOOR - 1e-15 or r_grid[-1] > 1.0 + 1e-15:
        raise ValueError(f"scan grid must lie in [{R_MIN_FLOOR}, 1]")
    asm = assembler or Assembler(mesh, metric, spec)
    blocks = mesh.block_offsets

    def eval_point(r: float):
        form = asm.h(r)
        nn = inertia(form.H, block_offsets=blocks).n_neg
        vals = None
        if k > 0:
            vals = smallest_eigenpairs(form.H, form.S, k).values
        return nn, vals

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(eval_point, r_grid))
    else:
        results = [eval_point(r) for r in r_grid]

    n_neg = np.array([nn for nn, _ in results], dtype=int)
    eigs = np.array([v for _, v in results]) if k > 0 else None
    return ScanResult(r=r_grid, n_neg=n_neg, eigenvalues=eigs)


def _bisect(n_neg, r_lo, n_lo, r_hi, n_hi, tol) -> List[Tuple[float, float, int, int]]:
    """Shrink [r_lo, r_hi] around each crossing down to width <= tol.

    Returns final brackets (lo, hi, n_lo, n_hi).  When the midpoint
    count splits the jump, both halves carry a crossing and are
    refined independently (split-and-recurse).
    """
    stack = [(r_lo, n_lo, r_hi, n_hi)]
    final = []
    while stack:
        lo, nlo, hi, nhi = stack.pop()
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            nmid = n_neg(mid)
            nmid = min(max(nmid, nlo), nhi)
            if nmid > nlo and nmid < nhi:
                stack.append((mid, nmid, hi, nhi))
                hi, nhi = mid, nmid
            elif nmid == nlo:
                lo = mid
            else:
                hi = mid
        final.append((lo, hi, nlo, nhi))
    final.sort()
    return final


def locate(
    mesh: Mesh,
    metric: MetricModel,
    spec: ProblemSpec,
    r_lo: float,
    r_hi: float,
    assembler: Optional[Assembler] = None,
    tol: Optional[float] = None,
) -> List[ConjugateRadius]:
    """Conjugate radii inside a bracket with an inertia jump.

    Bisection runs on the strict negative-pivot count (no zero band;
    a tolerance band around zero would bias the located radius by the
    band width).  A bracket with jump >= 2 is pre-refined tenfold to
    separate near-coincident crossings; sub-brackets that keep a jump
    >= 2 down to the final width are genuine multiple crossings, and
    their multiplicity is the jump itself.  Kernel bases come from the
    smallest-|lambda| eigenvectors at the final midpoint.
    """
    asm = assembler or Assembler(mesh, metric, spec)
    if tol is None:
        tol = BISECTION_TOL[mesh.dim]
    n_neg = _n_neg_evaluator(asm)
    n_lo, n_hi = n_neg(r_lo), n_neg(r_hi)
    jump = n_hi - n_lo
    if jump < 1:
        raise ValueError(
            f"bracket ({r_lo}, {r_hi}) carries no inertia jump (got {jump})"
        )

    segments = [(r_lo, n_lo, r_hi, n_hi)]
    if jump >= 2 and (r_hi - r_lo) > 10.0 * tol:
        grid = np.linspace(r_lo, r_hi, 11)
        counts = [n_lo] + [n_neg(r) for r in grid[1:-1]] + [n_hi]
        counts = np.minimum(np.maximum(counts, n_lo), n_hi)
        segments = [
            (grid[i], int(counts[i]), grid[i + 1], int(counts[i + 1]))
            for i in range(10)
            if counts[i + 1] > counts[i]
        ]

    out = []
    for lo, nlo, hi, nhi in segments:
        for blo, bhi, bnlo, bnhi in _bisect(n_neg, lo, nlo, hi, nhi, tol):
            m = bnhi - bnlo
            r_star = 0.5 * (blo + bhi)
            form = asm.h(r_star)
            pairs = kernel_eigenpairs(form.H, form.S, m)
            basis = pairs.vectors
            Hnorm = abs(form.H).max()
            for j in range(m):
                v = basis[:, j]
                rel = np.linalg.norm(form.H @ v) / (Hnorm * math.sqrt(v @ (form.S @ v)))
                if rel > KERNEL_RESIDUAL_TOL:
                    raise VerificationError(
                        f"kernel vector residual {rel:.2e} exceeds "
                        f"{KERNEL_RESIDUAL_TOL} at r* = {r_star}"
                    )
            out.append(
                ConjugateRadius(
                    r_star=r_star,
                    multiplicity=m,
                    kernel_basis=basis,
                    bracket=(blo, bhi),
                )
            )
    out.sort(key=lambda c: c.r_star)
    return out


def find_conjugate_radii(
    mesh, metric, spec, scan_result: ScanResult, assembler=None, tol=None
) -> List[ConjugateRadius]:
    """Locate every crossing bracketed by a scan."""
    asm = assembler or Assembler(mesh, metric, spec)
    out = []
    for r_lo, r_hi, _ in scan_result.brackets():
        out.extend(locate(mesh, metric, spec, r_lo, r_hi, assembler=asm, tol=tol))
    return out


def crossing_form_fd(
    mesh: Mesh,
    metric: MetricModel,
    spec: ProblemSpec,
    conj: ConjugateRadius,
    delta: Optional[float] = None,
    assembler: Optional[Assembler] = None,
    richardson: bool = True,
) -> np.ndarray:
    """Crossing form on the kernel by central differencing of H(r).

    Gamma_ij = (u_i^T H(r*+d) u_j - u_i^T H(r*-d) u_j) / (2 d), with the
    default step d = 1e-4 r*.  A Richardson audit at d/2 must agree to
    1 percent; for forms polynomial of degree <= 2 in r the central
    difference is exact and the audit is trivially satisfied.
    """
    asm = assembler or Assembler(mesh, metric, spec)
    r0 = conj.r_star
    if delta is None:
        delta = 1e-4 * r0
    if delta <= 0.0:
        raise ValueError("finite-difference step must be positive")
    V = conj.kernel_basis

    def gamma(d):
        Hp = asm.h(min(r0 + d, 1.0)).H
        Hm = asm.h(r0 - d).H
        G = (V.T @ (Hp @ V) - V.T @ (Hm @ V)) / (2.0 * d)
        return 0.5 * (G + G.T)

    G = gamma(delta)
    if richardson:
        G_half = gamma(0.5 * delta)
        denom = np.linalg.norm(G_half, "fro")
        if denom > 0.0:
            discrepancy = np.linalg.norm(G - G_half, "fro") / denom
            if discrepancy > 0.01:
                raise VerificationError(
                    f"finite-difference step audit failed at r* = {r0}: "
                    f"delta vs delta/2 discrepancy {discrepancy:.2e}"
                )
    return G


def _boundary_quadratic_2d(asm: Assembler, r0: float, ufull: np.ndarray) -> float:
    mesh = asm.mesh
    edges = mesh.boundary_edges
    tris = mesh.boundary_elements
    p0 = mesh.nodes[edges[:, 0]]
    p1 = mesh.nodes[edges[:, 1]]
    length = np.linalg.norm(p1 - p0, axis=1)
    # Elementwise-constant gradient of the adjacent triangle.
    ue = ufull[mesh.elements[tris]]
    gu = np.einsum("tia,ti->ta", asm.grads[tris], ue)
    total = 0.0
    # Two-point Gauss along each straight edge.
    for s in (0.5 - 0.5 / math.sqrt(3.0), 0.5 + 0.5 / math.sqrt(3.0)):
        x = (1.0 - s) * p0 + s * p1
        A, _ = metric_mod.coefficients(asm.metric, r0 * x)
        axx = np.einsum("ta,tab,tb->t", x, A, x)
        gux = np.einsum("ta,ta->t", gu, x)
        total += 0.5 * np.sum(length * gux * gux * axx)
    return -total / r0


def _boundary_quadratic_1d(asm: Assembler, r0: float, ufull: np.ndarray) -> float:
    mesh = asm.mesh
    h_left = mesh.nodes[1, 0] - mesh.nodes[0, 0]
    h_right = mesh.nodes[-1, 0] - mesh.nodes[-2, 0]
    du_left = (ufull[1] - ufull[0]) / h_left
    du_right = (ufull[-1] - ufull[-2]) / h_right
    A_right, _ = metric_mod.eval_scaled(asm.metric, r0, [1.0])
    A_left, _ = metric_mod.eval_scaled(asm.metric, r0, [-1.0])
    return -(du_right ** 2 * A_right[0, 0] + du_left ** 2 * A_left[0, 0]) / r0


def crossing_form_boundary(
    mesh: Mesh,
    metric: MetricModel,
    spec: ProblemSpec,
    conj: ConjugateRadius,
    assembler: Optional[Assembler] = None,
) -> np.ndarray:
    """Crossing form by the boundary integral, independent of the fd route.

    In 1D the integral degenerates to the two-endpoint sum.  Off-diagonal
    entries come from the polarization identity
    Gamma(u, v) = (Gamma[u + v] - Gamma[u - v]) / 4.
    """
    asm = assembler or Assembler(mesh, metric, spec)
    r0 = conj.r_star
    quad = _boundary_quadratic_1d if mesh.dim == 1 else _boundary_quadratic_2d
    int_idx = np.flatnonzero(~mesh.boundary_nodes)

    def q(u):
        full = np.zeros(mesh.n_nodes)
        full[int_idx] = u
        return quad(asm, r0, full)

    V = conj.kernel_basis
    m = V.shape[1]
    G = np.empty((m, m))
    for i in range(m):
        G[i, i] = q(V[:, i])
        for j in range(i + 1, m):
            G[i, j] = G[j, i] = 0.25 * (q(V[:, i] + V[:, j]) - q(V[:, i] - V[:, j]))
    return G


def verify_crossing(
    mesh: Mesh,
    metric: MetricModel,
    spec: ProblemSpec,
    conj: ConjugateRadius,
    assembler: Optional[Assembler] = None,
    delta: Optional[float] = None,
) -> CrossingFormReport:
    """Both crossing forms, definiteness check and the agreement figure.

    The fd form must be negative definite; its signature is then -m and
    |signature| equals the multiplicity, which is what makes every
    crossing a genuine bifurcation point.  A failure here flags either
    a discretization problem or a violated hypothesis and is raised,
    never patched.
    """
    asm = assembler or Assembler(mesh, metric, spec)
    gamma_fd = crossing_form_fd(mesh, metric, spec, conj, delta=delta, assembler=asm)
    gamma_bd = crossing_form_boundary(mesh, metric, spec, conj, assembler=asm)
    eigs = np.linalg.eigvalsh(gamma_fd)
    if np.any(eigs >= 0.0):
        raise VerificationError(
            f"crossing form at r* = {conj.r_star} is not negative definite "
            f"(eigenvalues {eigs})"
        )
    signature = int(np.sum(eigs > 0.0) - np.sum(eigs < 0.0))
    if abs(signature) != conj.multiplicity:
        raise VerificationError(
            f"|signature| = {abs(signature)} != multiplicity = {conj.multiplicity}"
        )
    agreement = np.linalg.norm(gamma_fd - gamma_bd, "fro") / np.linalg.norm(
        gamma_fd, "fro"
    )
    return CrossingFormReport(
        r_star=conj.r_star,
        multiplicity=conj.multiplicity,
        gamma_fd=gamma_fd,
        gamma_bd=gamma_bd,
        signature=signature,
        agreement=float(agreement),
    )


def endpoint_kernel_gap(
    mesh: Mesh,
    metric: MetricModel,
    spec: ProblemSpec,
    assembler: Optional[Assembler] = None,
) -> float:
    """|lambda| of the pencil eigenvalue of (H(1), S) nearest zero."""
    asm = assembler or Assembler(mesh, metric, spec)
    form1 = asm.h(1.0)
    return float(abs(kernel_eigenpairs(form1.H, form1.S, 1).values[0]))


def verify_index(
    mesh: Mesh,
    metric: MetricModel,
    spec: ProblemSpec,
    conjugates: Sequence[ConjugateRadius],
    assembler: Optional[Assembler] = None,
    r_min: float = R_MIN_FLOOR,
    kernel_threshold: float = KERNEL_THRESHOLD_AT_ONE,
) -> IndexReport:
    """Morse index at r = 1 against the summed crossing multiplicities.

    Refuses to proceed when H(1) carries a pencil eigenvalue below the
    kernel threshold: the index identity presumes no degeneracy at the
    endpoint, and a run that violates the assumption must abort rather
    than guess.
    """
    asm = assembler or Assembler(mesh, metric, spec)
    gap = endpoint_kernel_gap(mesh, metric, spec, assembler=asm)
    if gap < kernel_threshold:
        raise DegenerateRadiusOneError(
            f"degenerate endpoint: |lambda_min(H(1), S)| = {gap:.3e} "
            f"< {kernel_threshold}"
        )
    blocks = mesh.block_offsets
    mu = inertia(asm.h(1.0).H, block_offsets=blocks).n_neg
    n_small = inertia(asm.h(r_min).H, block_offsets=blocks).n_neg
    conj_list = [(c.r_star, c.multiplicity) for c in sorted(conjugates, key=lambda c: c.r_star)]
    sum_m = int(sum(m for _, m in conj_list))
    max_m = max((m for _, m in conj_list), default=0)
    bound = mu // max_m if max_m > 0 else 0
    return IndexReport(
        morse_index_at_1=int(mu),
        conjugate_list=conj_list,
        sum_m=sum_m,
        identity_holds=(int(mu) == sum_m),
        morse_index_small_r=int(n_small),
        corollary_bound=int(bound),
    )
