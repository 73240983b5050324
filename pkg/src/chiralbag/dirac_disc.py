"""Sparse Dirac discretizations on half-space grids with the chiral bag constraint.

Three matrices describe a spinor problem on a tensor grid of spacing ``h``:

``pairing``
    Galerkin matrix of ``Re <D psi, psi>`` built from summation-by-parts
    central differences (``Q_i = H D_i`` with the lumped mass ``H``).  ``mass^{-1}
    pairing`` is the first-order Dirac operator; it is used for pointwise
    residuals and to resolve eigenvalue signs.
``energy``
    Galerkin matrix of ``int |D psi|^2`` with multilinear (Q1) elements and exact
    cellwise integration.  Unlike the central-difference operator it has no
    spurious lattice modes, so the smallest eigenvalues of ``(energy, mass)`` are
    the squared eigenvalues of the Dirac operator.
``mass``
    Lumped volume weights ``f^n h^n``.

Conformal metrics ``f^2 xi`` enter through ``D_{f^2 xi} = f^{-(n+1)/2} D_xi f^{(n-1)/2}``:
in the variable ``phi = f^{(n-1)/2} psi`` the pairing is the flat one and the
energy carries the cell weight ``1/f``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp
from numpy.typing import NDArray

from .clifford import CliffordRep, _check_sign

INTERIOR, PHYSICAL, TRUNCATION, CORNER = 0, 1, 2, 3
CLASS_NAMES = {INTERIOR: "interior", PHYSICAL: "physical", TRUNCATION: "truncation", CORNER: "corner"}

ScalarField = Callable[[NDArray[np.float64]], NDArray[np.float64]]


# --------------------------------------------------------------------------- grids


@dataclass(frozen=True, eq=False)
class Grid:
    """Tensor grid restricted to a set of active cells.

    ``points`` are node coordinates ``(x_1, ..., x_{n-1}, t)``.  ``cells`` lists the
    ``2^n`` corner nodes of each active cell, corner ``a`` sitting at offset bit
    ``(a >> k) & 1`` along axis ``k``.
    """

    n: int
    h: float
    kind: str
    size: tuple[float, ...]
    points: NDArray[np.float64]
    cells: NDArray[np.int64]
    node_class: NDArray[np.int8]
    normals: NDArray[np.float64]

    @property
    def num_nodes(self) -> int:
        return self.points.shape[0]

    @property
    def cell_count(self) -> NDArray[np.int64]:
        return np.bincount(self.cells.ravel(), minlength=self.num_nodes)

    @property
    def weights(self) -> NDArray[np.float64]:
        """Lumped (trapezoidal) volume weight of every node."""
        return self.cell_count * self.h**self.n / 2**self.n

    @property
    def cell_centers(self) -> NDArray[np.float64]:
        return self.points[self.cells].mean(axis=1)

    def boundary_nodes(self) -> NDArray[np.int64]:
        return np.flatnonzero(self.node_class != INTERIOR)

    def summary(self) -> dict:
        counts = np.bincount(self.node_class, minlength=4)
        return {
            "n": self.n,
            "h": self.h,
            "kind": self.kind,
            "size": list(self.size),
            "nodes": int(self.num_nodes),
            "cells": int(self.cells.shape[0]),
            **{CLASS_NAMES[c]: int(counts[c]) for c in range(4)},
        }

    def same_as(self, other: "Grid") -> bool:
        return (
            self.n == other.n
            and self.h == other.h
            and self.points.shape == other.points.shape
            and np.array_equal(self.points, other.points)
            and np.array_equal(self.cells, other.cells)
        )


def _corner_offsets(n: int) -> NDArray[np.int64]:
    return np.array([[(a >> k) & 1 for k in range(n)] for a in range(2**n)])


def _masked_grid(n: int, h: float, ranges: list[NDArray[np.int64]], inside: Callable) -> tuple:
    shape = tuple(len(r) for r in ranges)
    lattice = np.stack(np.meshgrid(*ranges, indexing="ij"), axis=-1).reshape(-1, n)
    pts = lattice * h
    node_in = inside(pts)
    cell_lo = np.stack(
        np.meshgrid(*[np.arange(s - 1) for s in shape], indexing="ij"), axis=-1
    ).reshape(-1, n)
    corners = np.stack(
        [np.ravel_multi_index(tuple((cell_lo + o).T), shape) for o in _corner_offsets(n)], axis=1
    )
    corners = corners[node_in[corners].all(axis=1)]
    used = np.unique(corners)
    remap = np.full(pts.shape[0], -1, dtype=np.int64)
    remap[used] = np.arange(used.size)
    return pts[used], remap[corners]


def _check_spacing(n: int, h: float, extents: dict[str, float]) -> None:
    if n < 2:
        raise ValueError(f"dimension must be >= 2, got {n}")
    if not h > 0:
        raise ValueError(f"grid spacing must be positive, got {h}")
    for name, ext in extents.items():
        if ext / h < 2 - 1e-9:
            raise ValueError(f"grid too coarse: {name}={ext} gives fewer than 3 nodes at h={h}")


def box_grid(n: int, h: float, L: float, T: float) -> Grid:
    """Box ``[-L, L]^{n-1} x [0, T]``; the chiral condition applies on every face."""
    _check_spacing(n, h, {"L": 2 * L, "T": T})
    m, mt = int(round(L / h)), int(round(T / h))
    ranges = [np.arange(-m, m + 1)] * (n - 1) + [np.arange(0, mt + 1)]
    pts, cells = _masked_grid(n, h, ranges, lambda p: np.ones(len(p), bool))
    tol = 1e-9 * h
    faces = []  # (mask, inner normal)
    for k in range(n - 1):
        e = np.eye(n)[k]
        faces.append((np.abs(pts[:, k] + m * h) < tol, e))
        faces.append((np.abs(pts[:, k] - m * h) < tol, -e))
    faces.append((np.abs(pts[:, -1] - mt * h) < tol, -np.eye(n)[-1]))
    on_phys = np.abs(pts[:, -1]) < tol
    hits = np.zeros(len(pts), int)
    normals = np.zeros_like(pts)
    for mask, nu in faces:
        hits += mask
        normals[mask] = nu
    normals[on_phys] = np.eye(n)[-1]
    cls = np.full(len(pts), INTERIOR, dtype=np.int8)
    cls[hits > 0] = TRUNCATION
    cls[on_phys] = PHYSICAL
    cls[(hits + on_phys) > 1] = CORNER
    normals[cls == CORNER] = 0.0
    return Grid(n, float(h), "box", (float(m * h), float(mt * h)), pts, cells, cls, normals)


def halfball_grid(n: int, h: float, R: float) -> Grid:
    """Cells of the lattice lying in the half-ball ``{|p| <= R, t >= 0}``."""
    _check_spacing(n, h, {"R_max": R})
    m = int(np.floor(R / h + 1e-9))
    ranges = [np.arange(-m, m + 1)] * (n - 1) + [np.arange(0, m + 1)]
    r2max = R * R * (1 + 1e-12)
    pts, cells = _masked_grid(n, h, ranges, lambda p: np.einsum("ij,ij->i", p, p) <= r2max)
    count = np.bincount(cells.ravel(), minlength=len(pts))
    on_phys = np.abs(pts[:, -1]) < 1e-9 * h
    full = np.where(on_phys, 2 ** (n - 1), 2**n)
    trunc = count < full
    cls = np.full(len(pts), INTERIOR, dtype=np.int8)
    cls[trunc] = TRUNCATION
    cls[on_phys] = PHYSICAL
    cls[on_phys & trunc] = CORNER
    normals = np.zeros_like(pts)
    normals[cls == PHYSICAL] = np.eye(n)[-1]
    tr = cls == TRUNCATION
    normals[tr] = -pts[tr] / np.linalg.norm(pts[tr], axis=1, keepdims=True)
    return Grid(n, float(h), "halfball", (float(R),), pts, cells, cls, normals)


def ball_grid(n: int, h: float, R: float) -> Grid:
    """Full ball ``|p| <= R``; every boundary node carries the radial inner normal."""
    _check_spacing(n, h, {"R_max": R})
    m = int(np.floor(R / h + 1e-9))
    ranges = [np.arange(-m, m + 1)] * n
    r2max = R * R * (1 + 1e-12)
    pts, cells = _masked_grid(n, h, ranges, lambda p: np.einsum("ij,ij->i", p, p) <= r2max)
    count = np.bincount(cells.ravel(), minlength=len(pts))
    cls = np.where(count < 2**n, TRUNCATION, INTERIOR).astype(np.int8)
    normals = np.zeros_like(pts)
    b = cls == TRUNCATION
    normals[b] = -pts[b] / np.linalg.norm(pts[b], axis=1, keepdims=True)
    return Grid(n, float(h), "ball", (float(R),), pts, cells, cls, normals)


def make_grid(n: int, h: float, kind: str = "halfball", R_max: float = 6.0,
              L: float | None = None, T: float | None = None) -> Grid:
    if kind == "halfball":
        return halfball_grid(n, h, R_max)
    if kind == "ball":
        return ball_grid(n, h, R_max)
    if kind == "box":
        return box_grid(n, h, L if L is not None else R_max, T if T is not None else R_max)
    raise ValueError(f"unknown grid kind {kind!r}")


# ------------------------------------------------------------------ scalar blocks


@lru_cache(maxsize=None)
def _reference_blocks(n: int) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Unit-cell integrals ``int d_i N_a d_j N_b`` and ``int N_a d_i N_b`` for ``h = 1``."""
    mass1 = np.array([[1 / 3, 1 / 6], [1 / 6, 1 / 3]])
    stiff1 = np.array([[1.0, -1.0], [-1.0, 1.0]])
    mixed1 = np.array([[-0.5, -0.5], [0.5, 0.5]])  # int phi_a' phi_b
    bits = _corner_offsets(n)
    stiff = np.ones((n, n, 2**n, 2**n))
    for i, j, k in itertools.product(range(n), range(n), range(n)):
        if k == i == j:
            fac = stiff1
        elif k == i:
            fac = mixed1
        elif k == j:
            fac = mixed1.T
        else:
            fac = mass1
        stiff[i, j] *= fac[np.ix_(bits[:, k], bits[:, k])]
    # summation-by-parts difference: lumped transverse mass, 1-D Galerkin along axis i
    diff = np.zeros((n, 2**n, 2**n))
    same_perp = np.ones((n, 2**n, 2**n), bool)
    for i, k in itertools.product(range(n), range(n)):
        if k != i:
            same_perp[i] &= bits[:, k][:, None] == bits[:, k][None, :]
    for i in range(n):
        along = mixed1.T[np.ix_(bits[:, i], bits[:, i])]
        diff[i] = np.where(same_perp[i], along, 0.0) / 2 ** (n - 1)
    return stiff, diff


def _cell_sum(grid: Grid, local: NDArray[np.float64], cell_weight: NDArray[np.float64] | None) -> sp.csr_matrix:
    nloc = 2**grid.n
    rows = np.repeat(grid.cells, nloc, axis=1).ravel()
    cols = np.tile(grid.cells, (1, nloc)).ravel()
    w = np.ones(grid.cells.shape[0]) if cell_weight is None else cell_weight
    data = (w[:, None, None] * local[None]).ravel()
    N = grid.num_nodes
    return sp.csr_matrix((data, (rows, cols)), shape=(N, N))


def scalar_stiffness(grid: Grid, cell_weight: NDArray[np.float64] | None = None) -> list[list[sp.csr_matrix]]:
    """``K^{ij}[a, b] = int w d_i N_a d_j N_b`` with ``w`` constant per cell."""
    stiff, _ = _reference_blocks(grid.n)
    scale = grid.h ** (grid.n - 2)
    return [[_cell_sum(grid, scale * stiff[i, j], cell_weight) for j in range(grid.n)] for i in range(grid.n)]


def sbp_difference(grid: Grid) -> list[sp.csr_matrix]:
    """``Q_i`` with ``Q_i + Q_i^T`` a diagonal boundary term and ``H^{-1} Q_i`` a central difference."""
    _, diff = _reference_blocks(grid.n)
    scale = grid.h ** (grid.n - 1)
    return [_cell_sum(grid, scale * diff[i], None) for i in range(grid.n)]


# ----------------------------------------------------------------- spinor blocks


def spinor_sectors(rep: CliffordRep) -> list[NDArray[np.complex128]]:
    """Isometries onto subspaces preserved by the energy form and by every chiral projector.

    For odd ``n`` the spinor space is the ``n + 1`` representation; its volume
    element commutes with all even products of generators, so its two
    eigenspaces decouple.  For even ``n`` the representation is irreducible.
    """
    d = rep.d
    if rep.n % 2 == 0:
        return [np.eye(d, dtype=complex)]
    gamma_last = -1j * rep.chirality  # chirality = i gamma_{n+1}
    vol = np.eye(d, dtype=complex)
    for g in (*rep.gamma, gamma_last):
        vol = vol @ g
    m = (rep.n + 1) // 2
    vol = (1j**m) * vol
    w, v = np.linalg.eigh(0.5 * (vol + vol.conj().T))
    return [v[:, w > 0], v[:, w < 0]]


def _energy_blocks(rep: CliffordRep, U: NDArray[np.complex128]) -> list[list[NDArray[np.complex128]]]:
    n = rep.n
    return [[U.conj().T @ rep.gamma[i].conj().T @ rep.gamma[j] @ U for j in range(n)] for i in range(n)]


def _kron_sum(scalars: list[list[sp.csr_matrix]], blocks: list[list[NDArray]]) -> sp.csr_matrix:
    out = None
    for row_s, row_b in zip(scalars, blocks):
        for s, b in zip(row_s, row_b):
            b = np.where(np.abs(b) < 1e-15, 0.0, b)
            if not np.any(b):
                continue
            term = sp.kron(s, sp.csr_matrix(b), format="csr")
            out = term if out is None else out + term
    return out.tocsr()


# ----------------------------------------------------------------- Dirac matrix


@dataclass(frozen=True, eq=False)
class Sector:
    """Reduced problem on one invariant spinor subspace."""

    basis: sp.csr_matrix  # full DOFs -> reduced DOFs of this sector
    energy: sp.csr_matrix
    mass: NDArray[np.float64]


@dataclass(frozen=True, eq=False)
class DiracMatrix:
    """Discrete Dirac data on a grid, optionally reduced by the chiral bag constraint.

    DOFs are ordered node-major: ``index = node * d + component``.
    """

    grid: Grid
    rep: CliffordRep
    model: str
    factor: NDArray[np.float64]  # conformal factor f at the nodes
    pairing: sp.csr_matrix  # full DOFs, Hermitian on the reduced space
    mass: NDArray[np.float64]  # full DOFs
    cell_factor: NDArray[np.float64]
    sign: int | None = None
    sectors: tuple[Sector, ...] = ()
    symmetrization_norm: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return self.rep.d

    @property
    def reduced(self) -> bool:
        return self.sign is not None

    @property
    def op(self) -> sp.csr_matrix:
        """First-order operator ``mass^{-1} pairing`` on full DOFs."""
        return sp.diags(1.0 / self.mass) @ self.pairing

    @property
    def basis(self) -> sp.csr_matrix:
        """Reduced DOFs of all sectors mapped to full DOFs."""
        self._require_reduced()
        return sp.hstack([s.basis for s in self.sectors], format="csr")

    def reduced_pairing(self) -> sp.csr_matrix:
        P = self.basis
        A = (P.conj().T @ self.pairing @ P).tocsr()
        return ((A + A.conj().T) * 0.5).tocsr()

    def reduced_mass(self) -> NDArray[np.float64]:
        self._require_reduced()
        return np.concatenate([s.mass for s in self.sectors])

    def reduced_energy(self) -> sp.csr_matrix:
        self._require_reduced()
        return sp.block_diag([s.energy for s in self.sectors], format="csr")

    def energy_full(self) -> sp.csr_matrix:
        """Energy on unconstrained full DOFs (small grids only)."""
        scalars = scalar_stiffness(self.grid, 1.0 / self.cell_factor)
        K = _kron_sum(scalars, _energy_blocks(self.rep, np.eye(self.d)))
        F = sp.diags(np.repeat(self.factor ** ((self.grid.n - 1) / 2), self.d))
        return (F @ K @ F).tocsr()

    def _require_reduced(self) -> None:
        if not self.reduced:
            raise ValueError("matrix has no chiral constraint applied; call apply_chiral_bc first")


def _node_mass(grid: Grid, factor: NDArray[np.float64]) -> NDArray[np.float64]:
    return grid.weights * factor**grid.n


def assemble_conformal(rep: CliffordRep, grid: Grid, f: ScalarField | None = None, model: str | None = None) -> DiracMatrix:
    """Dirac data for the metric ``f^2 xi`` (flat when ``f`` is None)."""
    if rep.n != grid.n:
        raise ValueError(f"representation dimension {rep.n} does not match grid dimension {grid.n}")
    if f is None:
        factor = np.ones(grid.num_nodes)
        cell_factor = np.ones(grid.cells.shape[0])
        model = model or "flat"
    else:
        factor = np.asarray(f(grid.points), dtype=float)
        cell_factor = np.asarray(f(grid.cell_centers), dtype=float)
        model = model or "conformal"
    if np.any(factor <= 0) or np.any(cell_factor <= 0):
        raise ValueError("conformal factor must be strictly positive on the grid")
    Q = sbp_difference(grid)
    A = None
    for i, q in enumerate(Q):
        term = sp.kron(q, sp.csr_matrix(rep.gamma[i]), format="csr")
        A = term if A is None else A + term
    F = sp.diags(np.repeat(factor ** ((grid.n - 1) / 2), rep.d))
    A = (F @ A @ F).tocsr()
    mass = np.repeat(_node_mass(grid, factor), rep.d)
    return DiracMatrix(grid, rep, model, factor, A, mass, cell_factor)


def assemble_flat(rep: CliffordRep, grid: Grid) -> DiracMatrix:
    return assemble_conformal(rep, grid, None, "flat")


def hemisphere_factor(p: NDArray[np.float64]) -> NDArray[np.float64]:
    """Conformal factor ``2 / (1 + r^2)`` of the round hemisphere over the half-space."""
    return 2.0 / (1.0 + np.einsum("...i,...i->...", p, p))


def perturbed_hemisphere_factor(p: NDArray[np.float64], amplitude: float = 0.1) -> NDArray[np.float64]:
    r2 = np.einsum("...i,...i->...", p, p)
    return 2.0 / (1.0 + r2) * (1.0 + amplitude * np.exp(-r2))


MODELS: dict[str, ScalarField | None] = {
    "flat": None,
    "hemisphere": hemisphere_factor,
    "perturbed": perturbed_hemisphere_factor,
}


def assemble_model(rep: CliffordRep, grid: Grid, model: str) -> DiracMatrix:
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}; choose from {sorted(MODELS)}")
    return assemble_conformal(rep, grid, MODELS[model], model)


def boundary_bases(rep: CliffordRep, normals: NDArray[np.float64], sign: int) -> NDArray[np.complex128]:
    """Batched orthonormal bases (``m x d x d/2``) of ``ker B^{sign}`` for inner normals ``normals``."""
    G = np.stack(rep.gamma)
    ng = np.einsum("mi,iab,bc->mac", normals, G, rep.chirality)
    ng = 0.5 * (ng + np.conj(np.swapaxes(ng, 1, 2)))
    w, v = np.linalg.eigh(ng)
    basis = v[:, :, rep.d // 2:]
    if np.any(np.abs(w[:, rep.d // 2:] - 1) > 1e-10):
        raise ValueError("nu.Gamma is not an involution at some boundary node")
    # deterministic phase: first significant entry of each column real positive
    mag = np.abs(basis)
    first = np.argmax(mag > 1e-8, axis=1)
    lead = np.take_along_axis(basis, first[:, None, :], axis=1)
    basis = basis * (np.abs(lead) / lead)
    if sign == 1:
        basis = np.einsum("ab,mbc->mac", rep.chirality, basis)
    return basis


def _sector_basis(grid: Grid, rep: CliffordRep, sign: int, U: NDArray[np.complex128]) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Reduced-DOF bases of one sector, in sector coordinates and in full coordinates."""
    d, db = rep.d, U.shape[1]
    N = grid.num_nodes
    cls = grid.node_class
    interior = np.flatnonzero(cls == INTERIOR)
    bnd = np.flatnonzero((cls == PHYSICAL) | (cls == TRUNCATION))
    blocks = np.zeros((N, db, db), dtype=complex)
    ncols = np.zeros(N, dtype=np.int64)
    blocks[interior] = np.eye(db)
    ncols[interior] = db
    if bnd.size:
        B = boundary_bases(rep, grid.normals[bnd], sign)
        Bu = np.einsum("ja,mak->mjk", U.conj().T, B)
        proj = Bu @ np.conj(np.swapaxes(Bu, 1, 2))  # admissible projector seen in this sector
        w, v = np.linalg.eigh(0.5 * (proj + np.conj(np.swapaxes(proj, 1, 2))))
        nb = (w > 0.5).sum(axis=1)
        if np.any(nb != nb[0]):
            raise ValueError("admissible subspace rank varies between boundary nodes")
        k = int(nb[0])
        vk = v[:, :, db - k:]
        first = np.argmax(np.abs(vk) > 1e-8, axis=1)
        lead = np.take_along_axis(vk, first[:, None, :], axis=1)
        blocks[bnd, :, :k] = vk * (np.abs(lead) / lead)
        ncols[bnd] = k
    offsets = np.concatenate([[0], np.cumsum(ncols)])
    rows, cols, vals = [], [], []
    for c in range(db):
        nodes = np.flatnonzero(ncols > c)
        for a in range(db):
            v = blocks[nodes, a, c]
            nz = np.abs(v) > 1e-15
            rows.append(nodes[nz] * db + a)
            cols.append(offsets[nodes[nz]] + c)
            vals.append(v[nz])
    rows, cols, vals = map(np.concatenate, (rows, cols, vals))
    P_sec = sp.csr_matrix((vals, (rows, cols)), shape=(N * db, int(offsets[-1])))
    lift = sp.kron(sp.identity(N, format="csr"), sp.csr_matrix(U), format="csr")
    P_full = (lift @ P_sec).tocsr()
    P_full.data[np.abs(P_full.data) < 1e-15] = 0
    P_full.eliminate_zeros()
    return P_sec, P_full


def apply_chiral_bc(matrix: DiracMatrix, rep: CliffordRep | None = None, sign: int | str = -1) -> DiracMatrix:
    """Restrict to spinors whose boundary values satisfy ``B^{sign} psi = 0``.

    Boundary DOFs are expressed in an orthonormal basis of the admissible
    eigenspace of ``nu.Gamma``; nodes where two boundary pieces meet are
    clamped to zero because the two admissible spaces intersect trivially.
    The reduced pairing is symmetrized; the size of the removed skew part is
    kept in ``symmetrization_norm`` (zero on flat faces, small on curved
    staircase boundaries).
    """
    s = _check_sign(sign)
    rep = rep or matrix.rep
    if rep.n != matrix.rep.n or not all(np.array_equal(a, b) for a, b in zip(rep.gamma, matrix.rep.gamma)):
        raise ValueError("representation differs from the one used for assembly")
    if matrix.reduced:
        raise ValueError(f"matrix already reduced with sign {matrix.sign:+d}")
    grid = matrix.grid
    n = grid.n
    scalars = scalar_stiffness(grid, 1.0 / matrix.cell_factor)
    froot = matrix.factor ** ((n - 1) / 2)
    sectors = []
    for U in spinor_sectors(rep):
        P_sec, P_full = _sector_basis(grid, rep, s, U)
        Kb = _kron_sum(scalars, _energy_blocks(rep, U))
        PF = sp.diags(np.repeat(froot, U.shape[1])) @ P_sec
        K = (PF.conj().T @ Kb @ PF).tocsr()
        K = ((K + K.conj().T) * 0.5).tocsr()
        M = np.real((P_full.conj().T @ sp.diags(matrix.mass) @ P_full).diagonal())
        sectors.append(Sector(P_full, K, M))
    P_all = sp.hstack([sec.basis for sec in sectors], format="csr")
    Ar = (P_all.conj().T @ matrix.pairing @ P_all).tocsr()
    skew = Ar - Ar.conj().T
    sym_norm = 0.5 * float(np.abs(skew.data).max()) if skew.nnz else 0.0
    return replace(matrix, sign=s, sectors=tuple(sectors), symmetrization_norm=sym_norm)


# ------------------------------------------------------------------ diagnostics


def sample_field(grid: Grid, evaluator: Callable[[NDArray[np.float64]], NDArray[np.complex128]]) -> NDArray[np.complex128]:
    """Nodal values of a spinor field, flattened in DOF order.  ``evaluator`` maps ``(N, n) -> (N, d)``."""
    return np.asarray(evaluator(grid.points), dtype=complex).reshape(-1)


def hermiticity_residual(matrix: DiracMatrix) -> float:
    """Max entry of ``A - A^H`` of the reduced (symmetrized) pairing; zero by construction."""
    A = matrix.reduced_pairing()
    diff = A - A.conj().T
    return float(np.abs(diff.data).max()) if diff.nnz else 0.0


def interior_mask(grid: Grid, layers: int = 1) -> NDArray[np.bool_]:
    """Nodes whose full stencil neighbourhood of ``layers`` cells is active and interior."""
    ok = grid.node_class == INTERIOR
    if layers <= 1:
        return ok
    adj = sp.csr_matrix(
        (np.ones(grid.cells.size * 2**grid.n), (np.repeat(grid.cells, 2**grid.n, 1).ravel(), np.tile(grid.cells, (1, 2**grid.n)).ravel())),
        shape=(grid.num_nodes, grid.num_nodes),
    )
    bad = (~ok).astype(float)
    for _ in range(layers - 1):
        bad = adj @ bad
    return bad == 0


def covariance_residual(
    rep: CliffordRep,
    grid: Grid,
    f: ScalarField,
    psi: Callable[[NDArray[np.float64]], NDArray[np.complex128]],
    grad_f: Callable[[NDArray[np.float64]], NDArray[np.float64]] | None = None,
) -> float:
    """Interior max of ``D_{f^2 xi}(f^{-(n-1)/2} psi) - f^{-(n+1)/2} D_xi psi``.

    The left side uses the local formula
    ``D_{f^2 xi} chi = f^{-1} (D_xi chi + (n-1)/2 f^{-1} grad f . chi)``; both sides
    share the central-difference ``D_xi`` but not the composition, so the
    residual measures the discrete covariance error.
    """
    n, d = grid.n, rep.d
    flat = assemble_flat(rep, grid)
    op = flat.op
    x = grid.points
    fv = np.asarray(f(x), dtype=float)
    if grad_f is None:
        grad = np.zeros_like(x)
        step = 1e-5
        for k in range(n):
            e = np.zeros(n)
            e[k] = step
            grad[:, k] = (f(x + e) - f(x - e)) / (2 * step)
    else:
        grad = grad_f(x)
    pv = np.asarray(psi(x), dtype=complex)
    chi = pv * fv[:, None] ** (-(n - 1) / 2)
    Dchi = (op @ chi.reshape(-1)).reshape(-1, d)
    grad_dot = np.einsum("mi,iab,mb->ma", grad, np.stack(rep.gamma), chi)
    lhs = (Dchi + 0.5 * (n - 1) * grad_dot / fv[:, None]) / fv[:, None]
    Dpsi = (op @ pv.reshape(-1)).reshape(-1, d)
    rhs = Dpsi * fv[:, None] ** (-(n + 1) / 2)
    mask = interior_mask(grid, 2)
    return float(np.abs(lhs - rhs)[mask].max())


def export_coo(matrix: sp.spmatrix, path: str | Path) -> None:
    """Write ``row col re im`` lines (0-based indices)."""
    coo = sp.coo_matrix(matrix)
    order = np.lexsort((coo.col, coo.row))
    data = np.asarray(coo.data, dtype=complex)[order]
    table = np.column_stack([coo.row[order], coo.col[order], data.real, data.imag])
    header = f"{matrix.shape[0]} {matrix.shape[1]} {coo.nnz}"
    np.savetxt(path, table, fmt=["%d", "%d", "%.17g", "%.17g"], header=header, comments="# ")


# ------------------------------------------------------------- conformal Laplacian


def scalar_curvature(f: ScalarField, points: NDArray[np.float64], step: float = 1e-3) -> NDArray[np.float64]:
    """Scalar curvature of ``f^2 xi`` from ``c_n f^{-(n+2)/2} Delta(f^{(n-2)/2})`` (positive Laplacian).

    The Laplacian of ``u = f^{(n-2)/2}`` uses a fourth-order central stencil.
    """
    n = points.shape[1]
    cn = 4.0 * (n - 1) / (n - 2)
    p = (n - 2) / 2
    u = lambda y: np.asarray(f(y), dtype=float) ** p  # noqa: E731
    lap = np.zeros(points.shape[0])
    u0 = u(points)
    for k in range(n):
        e = np.zeros(n)
        e[k] = step
        lap += (-u(points + 2 * e) + 16 * u(points + e) - 30 * u0 + 16 * u(points - e) - u(points - 2 * e)) / (12 * step**2)
    fv = np.asarray(f(points), dtype=float)
    return -cn * fv ** (-(n + 2) / 2) * lap


@dataclass(frozen=True, eq=False)
class LaplacianPencil:
    grid: Grid
    stiffness: sp.csr_matrix
    mass: NDArray[np.float64]
    curvature: NDArray[np.float64]
    model: str


def assemble_conformal_laplacian(grid: Grid, n: int | None = None, model: str = "hemisphere") -> LaplacianPencil:
    """Weak form of ``c_n Delta_g u + R_g u = mu u`` with the natural (Robin) boundary condition.

    Stiffness ``c_n int f^{n-2} |grad u|^2 + int R_g f^n u^2`` and lumped mass
    ``int f^n u^2``.  The boundary term ``2(n-1) int H_g u^2`` vanishes for the
    radial models on ``t = 0`` because ``d_t f = 0`` there; the truncation sphere is
    treated as a Neumann boundary.
    """
    n = grid.n if n is None else n
    if n != grid.n:
        raise ValueError("dimension mismatch between grid and request")
    if n < 3:
        raise ValueError("conformal Laplacian requires n >= 3")
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}")
    f = MODELS[model]
    cn = 4.0 * (n - 1) / (n - 2)
    if f is None:
        fn = np.ones(grid.num_nodes)
        cw = np.ones(grid.cells.shape[0])
        R = np.zeros(grid.num_nodes)
    else:
        fn = f(grid.points)
        cw = f(grid.cell_centers) ** (n - 2)
        R = scalar_curvature(f, grid.points)
    K = scalar_stiffness(grid, cw)
    lap = sum(K[i][i] for i in range(n))
    m = grid.weights * fn**n
    S = (cn * lap + sp.diags(R * m)).tocsr()
    return LaplacianPencil(grid, S, m, R, model)
