"""Smallest-|lambda| eigenpairs of the reduced Dirac problems and spectral checks."""

from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import bisect
from scipy.special import jv
from numpy.typing import NDArray

from .clifford import CliffordRep, build_rep
from .dirac_disc import (
    DiracMatrix,
    Grid,
    apply_chiral_bc,
    assemble_conformal_laplacian,
    assemble_flat,
    assemble_model,
    ball_grid,
    halfball_grid,
)

log = logging.getLogger(__name__)

CLUSTER_RTOL = 1e-6
DENSE_LIMIT = 2500
KERNEL_TOL = 1e-10
SIGN_WINDOW = 0.05
DIRECT_TOL = 1e-10
LOBPCG_TOL = 1e-8


class SolverError(RuntimeError):
    """Eigensolver failed to factorize or converge."""


@dataclass
class SpectrumResult:
    eigenvalues: NDArray[np.float64]
    residuals: NDArray[np.float64]
    vectors: NDArray[np.complex128] | None = None
    meta: dict = field(default_factory=dict)

    @property
    def clusters(self) -> list[tuple[float, int]]:
        return cluster(self.eigenvalues)

    def to_dict(self) -> dict:
        return {
            "eigenvalues": [float(v) for v in self.eigenvalues],
            "residuals": [float(v) for v in self.residuals],
            "clusters": [{"value": v, "multiplicity": m} for v, m in self.clusters],
            "solver": self.meta,
        }


def cluster(values: NDArray[np.float64], rtol: float = CLUSTER_RTOL) -> list[tuple[float, int]]:
    """Group values (already ordered) that agree within ``rtol * max(1, |v|)``."""
    out: list[tuple[float, int]] = []
    for v in values:
        if out and abs(v - out[-1][0]) <= rtol * max(1.0, abs(v)):
            out[-1] = (out[-1][0], out[-1][1] + 1)
        else:
            out.append((float(v), 1))
    return out


def _as_diag(M) -> sp.spmatrix:
    if M is None:
        return None
    if sp.issparse(M):
        return M.tocsr()
    M = np.asarray(M)
    return sp.diags(M) if M.ndim == 1 else sp.csr_matrix(M)


def _pair_residuals(K, M, vals, vecs) -> NDArray[np.float64]:
    KV = K @ vecs
    MV = M @ vecs
    norms = np.sqrt(np.abs(np.einsum("ij,ij->j", vecs.conj(), MV)))
    return np.linalg.norm(KV - MV * vals[None, :], axis=0) / np.maximum(norms, 1e-300)


def _signed_order(vals: NDArray, rtol: float = CLUSTER_RTOL) -> NDArray[np.intp]:
    """Indices sorting by |value|; inside a degenerate cluster negative values come first."""
    idx = np.argsort(np.abs(vals), kind="stable")
    out, start = [], 0
    mags = np.abs(vals[idx])
    for i in range(1, len(idx) + 1):
        if i == len(idx) or mags[i] - mags[start] > rtol * max(1.0, mags[start]):
            block = idx[start:i]
            out.extend(block[np.argsort(vals[block], kind="stable")])
            start = i
    return np.array(out, dtype=np.intp)


def _order(vals: NDArray, vecs: NDArray, k: int):
    idx = _signed_order(vals)[:k]
    return vals[idx], vecs[:, idx]


def _amg_preconditioner(K: sp.spmatrix, M: sp.spmatrix):
    import pyamg

    Kr = sp.csr_matrix(K.real) if np.iscomplexobj(K.data) else K.tocsr()
    shift = float(np.abs(Kr.diagonal()).mean() / max(M.diagonal().mean(), 1e-300)) * 1e-3
    ml = pyamg.smoothed_aggregation_solver((Kr + shift * M).tocsr(), symmetry="symmetric", max_coarse=500)
    cycle = ml.aspreconditioner(cycle="V")

    def apply(x):
        x = np.asarray(x)
        if np.iscomplexobj(x):
            if x.ndim == 1:
                return cycle @ x.real + 1j * (cycle @ x.imag)
            return np.column_stack([cycle @ c.real + 1j * (cycle @ c.imag) for c in x.T])
        if x.ndim == 1:
            return cycle @ x
        return np.column_stack([cycle @ c for c in x.T])

    return spla.LinearOperator(K.shape, matvec=apply, matmat=apply, dtype=K.dtype)


def smallest_eigs(K, M=None, k: int = 1, tol: float | None = None, method: str = "auto",
                  positive: bool = False, maxiter: int | None = None) -> SpectrumResult:
    """``k`` eigenpairs of ``K v = mu M v`` nearest zero.

    ``method``: ``dense`` (LAPACK), ``shift-invert`` (ARPACK Lanczos on
    ``(K - sigma M)^{-1} M`` with ``sigma = 0``) or ``lobpcg`` (preconditioned
    block iteration, requires a positive semidefinite ``K``).  ``auto`` picks
    dense for small problems, shift-invert otherwise.  Starting vectors are
    fixed, so results are deterministic.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    K = K.tocsr() if sp.issparse(K) else sp.csr_matrix(K)
    N = K.shape[0]
    M = sp.identity(N, format="csr") if M is None else _as_diag(M)
    if k > N:
        raise ValueError(f"requested {k} eigenpairs of a {N}-dimensional pencil")
    if method == "auto":
        method = "dense" if N <= DENSE_LIMIT else "shift-invert"
    if tol is None:
        tol = LOBPCG_TOL if method == "lobpcg" else DIRECT_TOL
    t0 = time.perf_counter()
    meta: dict = {"method": method, "shift": 0.0, "tol": tol, "size": int(N)}
    if method == "dense":
        vals, vecs = sla.eigh(K.toarray(), M.toarray())
        vals, vecs = _order(vals, vecs, k)
        meta.update(iterations=None, converged=True)
    elif method == "shift-invert":
        v0 = M @ np.ones(N)
        v0 = v0 / np.linalg.norm(v0)
        if np.iscomplexobj(K.data):
            v0 = v0.astype(complex)
        sigma = 0.0
        scale = float(abs(K.diagonal()).max() / max(M.diagonal().max(), 1e-300))
        for attempt in range(2):
            try:
                vals, vecs = spla.eigsh(K.tocsc(), k=k, M=M.tocsc(), sigma=sigma, which="LM",
                                        v0=v0, tol=0 if tol < 1e-14 else tol * 1e-2, maxiter=maxiter)
                break
            except RuntimeError as exc:  # singular factorization at the shift
                if attempt:
                    raise SolverError(f"shift-invert failed: {exc}") from exc
                sigma = -1e-8 * scale
                meta["shift"] = sigma
                meta["shift_perturbed"] = True
            except spla.ArpackNoConvergence as exc:
                raise SolverError(f"no convergence: {exc}") from exc
        vals, vecs = _order(vals, vecs, k)
        meta.update(iterations=None, converged=True)
    elif method == "lobpcg":
        if not positive:
            raise ValueError("lobpcg requires a positive semidefinite pencil")
        extra = max(4, k // 2)
        rng = np.random.default_rng(0)
        X = rng.standard_normal((N, k + extra))
        if np.iscomplexobj(K.data):
            X = X + 1j * rng.standard_normal((N, k + extra))
        precond = _amg_preconditioner(K, M)
        cap = maxiter or 400
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            vals, vecs, hist = spla.lobpcg(K, X, B=M, M=precond, largest=False, tol=tol,
                                           maxiter=cap, retResidualNormsHistory=True)
        if caught:
            meta["solver_warnings"] = len(caught)
        vals = np.real(vals)
        vals, vecs = _order(vals, vecs, k)
        meta.update(iterations=len(hist), converged=None)
    else:
        raise ValueError(f"unknown method {method!r}")
    vals = np.real(vals)
    res = _pair_residuals(K, M, vals, vecs)
    scale = max(1.0, float(np.abs(vals).max()))
    if meta.get("converged") is None:
        meta["converged"] = bool(np.all(res <= max(tol, 1e-12) * scale * 10))
    meta["seconds"] = round(time.perf_counter() - t0, 3)
    meta["kernel"] = bool(np.any(np.abs(vals) < KERNEL_TOL))
    return SpectrumResult(vals, res, vecs, meta)


# ------------------------------------------------------------ Dirac spectra


def dirac_eigs(matrix: DiracMatrix, k: int = 4, tol: float | None = None, method: str = "auto",
               keep_vectors: bool = True, sign_window: float = SIGN_WINDOW) -> SpectrumResult:
    """Signed eigenvalues of smallest modulus for a reduced Dirac matrix.

    Squared eigenvalues come from the energy pencil of every spinor sector.
    Energy eigenvectors of a near-degenerate pair ``+-lambda`` are in general
    mixtures of the two Dirac modes, so signs are resolved by a Rayleigh-Ritz
    step: within each window of moduli agreeing to ``sign_window`` the
    first-order pairing is diagonalized; the sign of each Ritz value is the
    sign of ``lambda`` and its modulus is the energy quotient of the Ritz vector.
    ``residuals`` are those of the energy eigenpairs ``K v = lambda^2 M v``.
    """
    if not matrix.reduced:
        raise ValueError("apply the chiral constraint before solving")
    sizes = [s.energy.shape[0] for s in matrix.sectors]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    total = int(offsets[-1])
    want = min(k + matrix.d, min(sizes))
    mus, vecs, metas = [], [], []
    for b, sec in enumerate(matrix.sectors):
        m = method
        if m == "auto":
            if sec.energy.shape[0] <= DENSE_LIMIT:
                m = "dense"
            else:
                m = "shift-invert" if matrix.grid.n <= 2 else "lobpcg"
        res = smallest_eigs(sec.energy, sec.mass, k=want, tol=tol, method=m, positive=True)
        metas.append(res.meta)
        V = np.zeros((total, res.vectors.shape[1]), dtype=complex)
        V[offsets[b]:offsets[b + 1]] = res.vectors
        mus.append(res.eigenvalues)
        vecs.append(V)
    mu = np.concatenate(mus)
    V = np.concatenate(vecs, axis=1)
    order = np.argsort(mu, kind="stable")
    mu, V = mu[order], V[:, order]
    K = matrix.reduced_energy()
    Mv = matrix.reduced_mass()
    A = matrix.reduced_pairing()
    energy_res = _pair_residuals(K, sp.diags(Mv), mu, V)
    G = V.conj().T @ (Mv[:, None] * V)
    L = np.linalg.cholesky(0.5 * (G + G.conj().T))
    V = np.linalg.solve(L.conj(), V.T).T
    modulus = np.sqrt(np.maximum(mu, 0.0))
    groups, start = [], 0
    for i in range(1, len(mu) + 1):
        if i == len(mu) or modulus[i] - modulus[start] > sign_window * max(modulus[start], 1e-12):
            groups.append((start, i))
            start = i
    lam_list, vec_list, ritz = [], [], []
    for a, b in groups:
        W = V[:, a:b]
        S = W.conj().T @ (A @ W)
        s, Y = np.linalg.eigh(0.5 * (S + S.conj().T))
        Wy = W @ Y
        for j in range(b - a):
            w = Wy[:, j]
            q = float(np.real(w.conj() @ (K @ w)) / np.real(w.conj() @ (Mv * w)))
            lam_list.append(math.copysign(math.sqrt(max(q, 0.0)), s[j]))
            vec_list.append(w)
            ritz.append(float(s[j]))
    lam = np.array(lam_list)
    W = np.column_stack(vec_list)
    ritz = np.array(ritz)
    idx = _signed_order(lam)[:k]
    lam, W, ritz = lam[idx], W[:, idx], ritz[idx]
    meta = {
        "sectors": metas,
        "size": total,
        "tol": tol,
        "converged": all(m.get("converged", True) for m in metas),
        "kernel": bool(np.any(np.abs(lam) < KERNEL_TOL)),
        "symmetrization_norm": matrix.symmetrization_norm,
        "energy_eigenvalues": [float(v) for v in mu[:k]],
        "pairing_ritz_values": [float(v) for v in ritz],
    }
    return SpectrumResult(lam, energy_res[:k], W if keep_vectors else None, meta)


def discrete_volume(matrix: DiracMatrix) -> float:
    """``sum f^n h^n`` over nodes: the discrete volume of ``f^2 xi``."""
    g = matrix.grid
    return float(np.sum(g.weights * matrix.factor**g.n))


def sphere_constant(n: int) -> float:
    omega = 2 * math.pi ** ((n + 1) / 2) / math.gamma((n + 1) / 2)
    return n / 2 * (omega / 2) ** (1 / n)


# ------------------------------------------------------------- checks


def spectral_symmetry_check(rep: CliffordRep, grid: Grid, model: str = "flat", k: int = 4,
                            tol: float = 1e-8, grid_minus: Grid | None = None,
                            method: str = "auto") -> dict:
    """Pair the ``k`` smallest-|lambda| eigenvalues under ``B^+`` with negated ones under ``B^-``."""
    if grid_minus is not None and not grid.same_as(grid_minus):
        raise ValueError("spectral symmetry requires both problems on the identical grid")
    base = assemble_model(rep, grid, model)
    plus = dirac_eigs(apply_chiral_bc(base, rep, +1), k=k, method=method, keep_vectors=False)
    minus = dirac_eigs(apply_chiral_bc(base, rep, -1), k=k, method=method, keep_vectors=False)
    lp = np.sort(plus.eigenvalues)
    lm = np.sort(-minus.eigenvalues)
    disc = float(np.max(np.abs(lp - lm)))
    return {
        "model": model,
        "grid": grid.summary(),
        "k": k,
        "plus": [float(v) for v in plus.eigenvalues],
        "minus": [float(v) for v in minus.eigenvalues],
        "max_pairing_discrepancy": disc,
        "tol": tol,
        "pass": bool(disc < tol),
    }


def hemisphere_spectrum(n: int, h: float, R_max: float, k: int = 4, sign: int = -1,
                        model: str = "hemisphere", method: str = "auto") -> dict:
    """``lambda_1`` of the conformal hemisphere model and the product ``lambda_1 Vol^{1/n}``."""
    if n not in (2, 3):
        raise ValueError("hemisphere model supported for n in {2, 3}")
    rep = build_rep(n)
    grid = halfball_grid(n, h, R_max)
    mat = apply_chiral_bc(assemble_model(rep, grid, model), rep, sign)
    res = dirac_eigs(mat, k=k, method=method, keep_vectors=False)
    vol = discrete_volume(mat)
    lam1 = float(np.abs(res.eigenvalues[0]))
    target_lam = n / 2
    target_prod = sphere_constant(n)
    prod = lam1 * vol ** (1 / n)
    return {
        "n": n,
        "h": h,
        "R_max": R_max,
        "model": model,
        "sign": sign,
        "grid": grid.summary(),
        "spectrum": res.to_dict(),
        "lambda1": lam1,
        "volume": vol,
        "volume_target": 2 * math.pi ** ((n + 1) / 2) / math.gamma((n + 1) / 2) / 2,
        "product": prod,
        "lambda1_target": target_lam,
        "product_target": target_prod,
        "lambda1_rel_error": abs(lam1 - target_lam) / target_lam,
        "product_rel_error": abs(prod - target_prod) / target_prod,
    }


def hijazi_check(n: int, h: float, R_max: float, model: str = "hemisphere", budget: float = 0.05,
                 method: str = "auto") -> dict:
    """Compare ``lambda_1^2`` with ``n / (4 (n - 1)) mu_1`` on the same grid."""
    if n < 3:
        raise ValueError("the conformal Laplacian comparison needs n >= 3")
    rep = build_rep(n)
    grid = halfball_grid(n, h, R_max)
    mat = apply_chiral_bc(assemble_model(rep, grid, model), rep, -1)
    dres = dirac_eigs(mat, k=1, method=method, keep_vectors=False)
    lam1 = float(abs(dres.eigenvalues[0]))
    lap = assemble_conformal_laplacian(grid, n, model)
    lmethod = "dense" if grid.num_nodes <= DENSE_LIMIT else "shift-invert"
    lres = smallest_eigs(lap.stiffness, lap.mass, k=1, method=lmethod)
    mu1 = float(lres.eigenvalues[0])
    bound = n / (4 * (n - 1)) * mu1
    lhs = lam1**2
    rel_gap = (lhs - bound) / bound if bound else float("inf")
    return {
        "n": n,
        "h": h,
        "R_max": R_max,
        "model": model,
        "lambda1": lam1,
        "lambda1_sq": lhs,
        "mu1": mu1,
        "bound": bound,
        "relative_gap": rel_gap,
        "budget": budget,
        "pass": bool(lhs >= bound * (1 - budget)),
        "dirac_solver": dres.meta,
        "laplacian_solver": lres.meta,
    }


def disk_bessel_root(radius: float = 1.0, xtol: float = 1e-12) -> dict:
    """Smallest chiral bag eigenvalue of the flat disk by separation of variables.

    Modes ``(J_m(lambda r) e^{i m theta}, +-J_{m+1}(lambda r) e^{i (m+1) theta})`` meet
    ``nu.Gamma psi = psi`` on ``r = radius`` iff ``J_m(x) = J_{m+1}(x)`` or
    ``J_m(x) = -J_{m+1}(x)`` with ``x = lambda radius``; the ``m = 0`` branch of the
    first determinant has the smallest positive root.
    """
    det = lambda x: jv(0, x) - jv(1, x)  # noqa: E731
    x = bisect(det, 0.5, 2.5, xtol=xtol, maxiter=200)
    return {"radius": radius, "root": x, "eigenvalue": x / radius, "determinant": float(det(x))}


def disk_oracle_check(h: float = 0.02, radius: float = 1.0, sign: int = -1, rtol: float = 0.02,
                      method: str = "auto") -> dict:
    """Flat disk ``|lambda_1|`` under the chiral bag condition against the Bessel root."""
    rep = build_rep(2)
    grid = ball_grid(2, h, radius)
    res = dirac_eigs(apply_chiral_bc(assemble_flat(rep, grid), rep, sign), k=2, method=method,
                     keep_vectors=False)
    oracle = disk_bessel_root(radius)
    lam1 = float(abs(res.eigenvalues[0]))
    rel = abs(lam1 - oracle["eigenvalue"]) / oracle["eigenvalue"]
    return {
        "h": h,
        "radius": radius,
        "sign": sign,
        "grid": grid.summary(),
        "lambda1": lam1,
        "oracle": oracle,
        "relative_error": rel,
        "rtol": rtol,
        "spectrum": res.to_dict(),
        "pass": bool(rel < rtol),
    }
