"""Complex Clifford algebra representations and chiral bag projectors.

Conventions: gamma matrices are skew-Hermitian with ``gamma_i @ gamma_i = -Id``,
so Clifford multiplication by a unit vector squares to ``-1``.  Spinor space
carries the standard Hermitian inner product of ``C^d``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

RELATION_TOL = 1e-12

_SX = np.array([[0, 1], [1, 0]], dtype=complex)
_SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
_SZ = np.array([[1, 0], [0, -1]], dtype=complex)
_I2 = np.eye(2, dtype=complex)


@dataclass(frozen=True)
class CliffordRep:
    """Gamma matrices of an orthonormal frame together with a chirality operator."""

    n: int
    gamma: tuple[NDArray[np.complex128], ...]
    chirality: NDArray[np.complex128]
    metric: NDArray[np.complex128] = field(repr=False, default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.metric is None:
            object.__setattr__(self, "metric", np.eye(self.d, dtype=complex))
        for g in self.gamma:
            g.setflags(write=False)
        self.chirality.setflags(write=False)

    @property
    def d(self) -> int:
        return self.chirality.shape[0]

    def clifford(self, v: ArrayLike) -> NDArray[np.complex128]:
        """Matrix of Clifford multiplication by the vector ``v``."""
        v = np.asarray(v, dtype=float)
        if v.shape != (self.n,):
            raise ValueError(f"vector of length {self.n} expected, got shape {v.shape}")
        return np.tensordot(v, np.stack(self.gamma), axes=1)

    def nu_gamma(self, nu: ArrayLike) -> NDArray[np.complex128]:
        """The boundary involution ``nu . Gamma``."""
        return self.clifford(nu) @ self.chirality


def _even_gammas(m: int) -> tuple[list[NDArray[np.complex128]], NDArray[np.complex128]]:
    """Gammas for n = 2m built by the recursive Pauli tensor construction."""
    gammas = [1j * _SX, 1j * _SY]
    chi = _SZ.copy()
    for _ in range(m - 1):
        gammas = [np.kron(g, _I2) for g in gammas]
        gammas += [np.kron(chi, 1j * _SX), np.kron(chi, 1j * _SY)]
        chi = np.kron(chi, _SZ)
    return gammas, chi


def build_rep(n: int) -> CliffordRep:
    """Deterministic representation of Cl(n) with a chirality operator.

    Even ``n`` uses ``Gamma = i^{n/2} gamma_1 ... gamma_n``.  Odd ``n`` keeps the
    first ``n`` generators of the ``n + 1`` representation and sets
    ``Gamma = i gamma_{n+1}``.
    """
    if int(n) != n or n < 2:
        raise ValueError(f"dimension must be an integer >= 2, got {n!r}")
    n = int(n)
    if n % 2 == 0:
        gammas, _ = _even_gammas(n // 2)
        prod = np.eye(gammas[0].shape[0], dtype=complex)
        for g in gammas:
            prod = prod @ g
        chi = (1j ** (n // 2)) * prod
    else:
        gammas, _ = _even_gammas((n + 1) // 2)
        chi = 1j * gammas[n]
        gammas = gammas[:n]
    # clean exact zeros and unit entries from floating products
    chi = np.round(chi.real, 15) + 1j * np.round(chi.imag, 15)
    return CliffordRep(n=n, gamma=tuple(g.copy() for g in gammas), chirality=chi)


def clifford_mul(rep: CliffordRep, v: ArrayLike, s: ArrayLike) -> NDArray[np.complex128]:
    """Clifford product ``v . s``.  ``s`` may carry trailing batch axes after the spinor axis."""
    s = np.asarray(s, dtype=complex)
    if s.shape[0] != rep.d:
        raise ValueError(f"spinor of dimension {rep.d} expected, got {s.shape[0]}")
    return np.tensordot(rep.clifford(v), s, axes=1)


@dataclass(frozen=True)
class ChiralProjector:
    sign: int
    nu: NDArray[np.float64]
    matrix: NDArray[np.complex128]


def _check_sign(sign: int | str) -> int:
    if sign in (1, "+", "plus"):
        return 1
    if sign in (-1, "-", "minus"):
        return -1
    raise ValueError(f"sign must be +1/-1 (or 'plus'/'minus'), got {sign!r}")


def chiral_projector(rep: CliffordRep, nu: ArrayLike, sign: int | str) -> ChiralProjector:
    """``B^{sign} = (Id + sign * nu.Gamma) / 2`` for a unit vector ``nu``."""
    s = _check_sign(sign)
    nu = np.asarray(nu, dtype=float)
    if abs(np.linalg.norm(nu) - 1.0) > 1e-12:
        raise ValueError(f"nu must be a unit vector, |nu| = {np.linalg.norm(nu)!r}")
    mat = 0.5 * (np.eye(rep.d) + s * rep.nu_gamma(nu))
    return ChiralProjector(sign=s, nu=nu, matrix=mat)


def admissible_basis(rep: CliffordRep, nu: ArrayLike, sign: int | str) -> NDArray[np.complex128]:
    """Orthonormal ``d x d/2`` basis of ``ker B^{sign}`` at a boundary point with normal ``nu``.

    ``ker B^-`` is the ``+1`` eigenspace of ``nu.Gamma`` and ``ker B^+`` the ``-1``
    eigenspace.  The ``B^+`` basis is the image of the ``B^-`` basis under
    ``Gamma``, which makes the two reduced problems exactly conjugate.
    """
    s = _check_sign(sign)
    ng = rep.nu_gamma(np.asarray(nu, dtype=float))
    w, v = np.linalg.eigh(0.5 * (ng + ng.conj().T))
    basis = v[:, w > 0]
    # fix the phase of each column for determinism
    idx = np.argmax(np.abs(basis) > 1e-8, axis=0)
    phase = basis[idx, np.arange(basis.shape[1])]
    basis = basis * (np.abs(phase) / phase)
    if s == 1:
        basis = rep.chirality @ basis
    return basis


def verify_relations(rep: CliffordRep, tol: float = RELATION_TOL) -> dict:
    """Residuals of every algebraic relation the representation must satisfy."""
    n, d = len(rep.gamma), rep.d
    eye = np.eye(d)
    chi = rep.chirality
    norm = lambda a: float(np.linalg.norm(a, 2))  # noqa: E731
    clifford = 0.0
    for i in range(n):
        for j in range(n):
            gi, gj = rep.gamma[i], rep.gamma[j]
            clifford = max(clifford, norm(gi @ gj + gj @ gi + 2.0 * (i == j) * eye))
    skew = max(norm(g.conj().T + g) for g in rep.gamma)
    unitary = max(norm(g.conj().T @ g - eye) for g in rep.gamma)
    chi_sq = norm(chi @ chi - eye)
    chi_herm = norm(chi.conj().T - chi)
    chi_anti = max(norm(chi @ g + g @ chi) for g in rep.gamma)
    dim_expected = 2 ** (n // 2) if n % 2 == 0 else 2 ** ((n + 1) // 2)
    residuals = {
        "clifford_relation": clifford,
        "skew_hermitian": skew,
        "unitary": unitary,
        "chirality_square": chi_sq,
        "chirality_hermitian": chi_herm,
        "chirality_anticommutes": chi_anti,
    }
    passed = all(v < tol for v in residuals.values()) and d == dim_expected
    return {
        "n": n,
        "d": d,
        "expected_d": dim_expected,
        "residuals": residuals,
        "max_residual": max(residuals.values()),
        "tol": tol,
        "pass": bool(passed),
    }
