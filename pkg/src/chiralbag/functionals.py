"""Variational functionals for the chiral bag eigenvalue problem.

Grid functionals take a :class:`~chiralbag.dirac_disc.DiracMatrix` and a
discrete spinor.  On a constrained matrix the spinor may be given in reduced
coordinates (as returned by :func:`~chiralbag.spectral.dirac_eigs`) or as full
nodal values, which are projected onto the admissible boundary spaces.

The bubble scan and the surface family are radial, so they reduce exactly to
one-dimensional integrals evaluated with adaptive Gauss-Kronrod quadrature.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy.integrate import IntegrationWarning, quad
from scipy.optimize import curve_fit

from .dirac_disc import DiracMatrix, _corner_offsets
from .fields import cutoff_radial, cutoff_radial_derivative
from .spectral import sphere_constant

__all__ = [
    "QuadraticParts",
    "RayleighReport",
    "conformal_functional",
    "epsilon_scan",
    "holder_chain",
    "moment_integral",
    "quadratic_parts",
    "rayleigh_abs",
    "rayleigh_sq",
    "sphere_area",
    "sphere_constant",
    "surface_family",
    "surface_factor",
    "surface_scan",
]

QUAD_RTOL = 1e-12
MOMENT_TOL = 1e-8
SCAN_BUDGET = 0.02
SURFACE_BUDGET = 0.10


def sphere_area(n: int) -> float:
    """Volume ``omega_n`` of the unit ``n``-sphere."""
    return 2 * math.pi ** ((n + 1) / 2) / math.gamma((n + 1) / 2)


def _half_shell(n: int) -> float:
    """``omega_{n-1} / 2``: radial integrals over the half-space pick up this factor."""
    return sphere_area(n - 1) / 2


# ------------------------------------------------------------------ grid functionals


@dataclass(frozen=True)
class QuadraticParts:
    """``int |D psi|^2``, ``int |psi|^2`` and ``int Re <D psi, psi>`` of one spinor."""

    energy: float
    norm: float
    pairing: float


def _coordinates(psi: NDArray, matrix: DiracMatrix) -> tuple[NDArray[np.complex128], bool]:
    psi = np.asarray(psi, dtype=complex).reshape(-1)
    full = matrix.grid.num_nodes * matrix.d
    if matrix.reduced:
        P = matrix.basis
        if psi.size == P.shape[1]:
            return psi, True
        if psi.size == full:
            return P.conj().T @ psi, True
        raise ValueError(f"spinor has {psi.size} entries; expected {P.shape[1]} (reduced) or {full} (full)")
    if psi.size != full:
        raise ValueError(f"spinor has {psi.size} entries; expected {full}")
    return psi, False


def quadratic_parts(psi: NDArray, matrix: DiracMatrix) -> QuadraticParts:
    """Mass-weighted quadratic forms of ``psi`` on the grid of ``matrix``."""
    c, reduced = _coordinates(psi, matrix)
    if reduced:
        K = matrix.reduced_energy()
        M = matrix.reduced_mass()
        A = matrix.reduced_pairing()
    else:
        K = matrix.energy_full()
        M = matrix.mass
        A = matrix.pairing
    energy = float(np.real(np.vdot(c, K @ c)))
    norm = float(np.real(np.vdot(c, M * c)))
    pairing = float(np.real(np.vdot(c, A @ c)))
    return QuadraticParts(energy, norm, pairing)


def rayleigh_sq(psi: NDArray, matrix: DiracMatrix) -> float:
    """``int |D psi|^2 / int |psi|^2``."""
    q = quadratic_parts(psi, matrix)
    if q.norm == 0.0:
        raise ZeroDivisionError("spinor has zero L2 norm")
    return q.energy / q.norm


def rayleigh_abs(psi: NDArray, matrix: DiracMatrix) -> float:
    """``int |D psi|^2 / |int Re <D psi, psi>|``."""
    q = quadratic_parts(psi, matrix)
    if q.pairing == 0.0:
        raise ZeroDivisionError("spinor has zero pairing <D psi, psi>")
    return q.energy / abs(q.pairing)


def cell_dirac(psi: NDArray, matrix: DiracMatrix) -> NDArray[np.complex128]:
    """``D psi`` of the multilinear interpolant at every cell centre, shape ``(cells, d)``.

    With ``phi = f^{(n-1)/2} psi`` the centre value is ``f_c^{-(n+1)/2} sum_i gamma_i d_i phi``.
    """
    c, reduced = _coordinates(psi, matrix)
    full = matrix.basis @ c if reduced else c
    g, d = matrix.grid, matrix.d
    phi = (full.reshape(-1, d) * matrix.factor[:, None] ** ((g.n - 1) / 2))[g.cells]
    bits = _corner_offsets(g.n)
    out = np.zeros((g.cells.shape[0], d), dtype=complex)
    for i in range(g.n):
        w = (2.0 * bits[:, i] - 1.0) / (2 ** (g.n - 1) * g.h)
        grad = np.einsum("a,cab->cb", w, phi)
        out += grad @ matrix.rep.gamma[i].T
    return out * matrix.cell_factor[:, None] ** (-(g.n + 1) / 2)


def conformal_functional(psi: NDArray, matrix: DiracMatrix, n: int | None = None) -> float:
    """``(int |D psi|^{2n/(n+1)})^{(n+1)/n} / |int Re <D psi, psi>|``.

    The numerator uses the cell-centre Dirac values with the midpoint rule in
    the volume ``f^n h^n``; the denominator is the discrete pairing.
    """
    g = matrix.grid
    n = g.n if n is None else n
    if n != g.n:
        raise ValueError(f"functional exponent n={n} does not match grid dimension {g.n}")
    q = quadratic_parts(psi, matrix)
    if q.pairing == 0.0:
        raise ZeroDivisionError("spinor has zero pairing <D psi, psi>")
    dpsi = cell_dirac(psi, matrix)
    mod2 = np.einsum("cb,cb->c", dpsi.conj(), dpsi).real
    vol = g.h**n * matrix.cell_factor**n
    p = n / (n + 1)
    num = float(np.sum(vol * mod2**p)) ** ((n + 1) / n)
    return num / abs(q.pairing)


def holder_chain(mod2: NDArray[np.float64], f: NDArray[np.float64], weights: NDArray[np.float64],
                 n: int) -> tuple[float, float]:
    """Both sides of ``(sum m |psi|^{2n/(n+1)})^{(n+1)/n} <= (sum m |psi|^2 / f)(sum m f^n)^{1/n}``."""
    mod2, f, w = (np.asarray(a, dtype=float) for a in (mod2, f, weights))
    if np.any(f <= 0) or np.any(w <= 0):
        raise ValueError("weights and f must be strictly positive")
    lhs = float(np.sum(w * mod2 ** (n / (n + 1)))) ** ((n + 1) / n)
    rhs = float(np.sum(w * mod2 / f)) * float(np.sum(w * f**n)) ** (1 / n)
    return lhs, rhs


# ------------------------------------------------------------------ moment identity


def moment_integral(n: int) -> dict:
    """``I = int_0^inf r^{n-1} (2 / (1 + r^2))^n dr`` and the check ``omega_{n-1} I = omega_n``."""
    if n < 2:
        raise ValueError("n must be at least 2")
    head, err1 = quad(lambda r: r ** (n - 1) * (2 / (1 + r * r)) ** n, 0, 1, epsabs=0, epsrel=QUAD_RTOL)
    tail, err2 = quad(lambda r: r ** (n - 1) * (2 / (1 + r * r)) ** n, 1, np.inf, epsabs=0, epsrel=QUAD_RTOL)
    I = head + tail
    lhs = sphere_area(n - 1) * I
    rhs = sphere_area(n)
    residual = abs(lhs - rhs)
    return {
        "n": n,
        "I": I,
        "quadrature_error": err1 + err2,
        "omega_n_minus_1_times_I": lhs,
        "omega_n": rhs,
        "residual": residual,
        "pass": bool(residual < MOMENT_TOL),
    }


# ------------------------------------------------------------------------ bubble scan


@dataclass
class RayleighReport:
    """``J`` along a decreasing list of bubble scales with an extrapolated limit."""

    n: int
    delta: float
    values: list[tuple[float, float]]
    limit: float
    order: float
    amplitude: float
    target: float
    numerators: list[float]
    denominators: list[float]
    quadrature: dict = field(default_factory=dict)
    budget: float = SCAN_BUDGET

    @property
    def relative_error(self) -> float:
        return abs(self.limit - self.target) / self.target

    @property
    def monotone(self) -> bool:
        js = [j for _, j in self.values]
        return all(a > b for a, b in zip(js, js[1:]))

    @property
    def passed(self) -> bool:
        return self.relative_error < self.budget

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "delta": self.delta,
            "values": [{"eps": e, "J": j} for e, j in self.values],
            "limit": self.limit,
            "order": self.order,
            "amplitude": self.amplitude,
            "target": self.target,
            "relative_error": self.relative_error,
            "monotone": self.monotone,
            "numerators": self.numerators,
            "denominators": self.denominators,
            "quadrature": self.quadrature,
            "budget": self.budget,
            "pass": self.passed,
        }


def _bubble(y: NDArray[np.float64] | float) -> NDArray[np.float64] | float:
    return 2.0 / (1.0 + y * y)


def _radial_quad(fun, stop: float, breaks: list[float], limit: int) -> tuple[float, float, bool]:
    pts = sorted(b for b in set(breaks) if 0 < b < stop)
    with warnings.catch_warnings():
        warnings.simplefilter("error", IntegrationWarning)
        try:
            val, err = quad(fun, 0.0, stop, points=pts or None, limit=limit, epsabs=0, epsrel=QUAD_RTOL)
            ok = True
        except IntegrationWarning:
            warnings.simplefilter("ignore", IntegrationWarning)
            val, err = quad(fun, 0.0, stop, points=pts or None, limit=limit, epsabs=0, epsrel=QUAD_RTOL)
            ok = False
    return float(val), float(err), ok


def bubble_terms(n: int, eps: float, delta: float, limit: int = 200) -> dict:
    """Numerator and denominator of ``J`` for ``eta(x) psi^+(x / eps)`` on the flat half-space.

    With ``f_eps = f(r / eps)``: ``|D psi|^2 = eta'^2 f_eps^{n-1} + eta^2 (n/2)^2 f_eps^{n+1} / eps^2``
    (the cross term is zero because Clifford multiplication is skew) and
    ``Re <D psi, psi> = eta^2 (n/2) f_eps^n / eps``.
    """
    if not 0 < eps <= delta:
        raise ValueError(f"need 0 < eps <= delta, got eps={eps}, delta={delta}")
    p = n / (n + 1)

    def dirac_sq(r):
        fe = _bubble(r / eps)
        return cutoff_radial_derivative(r, delta) ** 2 * fe ** (n - 1) + cutoff_radial(r, delta) ** 2 * (n / 2) ** 2 * fe ** (n + 1) / eps**2

    def num(r):
        return r ** (n - 1) * dirac_sq(r) ** p

    def den(r):
        return r ** (n - 1) * cutoff_radial(r, delta) ** 2 * (n / 2) * _bubble(r / eps) ** n / eps

    breaks = [eps, 3 * eps, delta]
    N, eN, okN = _radial_quad(num, 2 * delta, breaks, limit)
    Dn, eD, okD = _radial_quad(den, 2 * delta, breaks, limit)
    shell = _half_shell(n)
    numerator = (shell * N) ** ((n + 1) / n)
    denominator = shell * Dn
    return {
        "eps": eps,
        "J": numerator / denominator,
        "numerator": numerator,
        "denominator": denominator,
        "abs_error": [eN, eD],
        "converged": okN and okD,
    }


def default_eps(delta: float, count: int = 6) -> list[float]:
    """``delta / 4`` halved ``count - 1`` times."""
    return [delta / 4 * 0.5**k for k in range(count)]


def _power_law(e, limit, amplitude, order):
    return limit + amplitude * e**order


def epsilon_scan(n: int, delta: float = 0.5, eps_list: list[float] | None = None, resolution: int = 200,
                 budget: float = SCAN_BUDGET) -> RayleighReport:
    """Evaluate ``J`` on the cut-off bubble and fit ``J(eps) = J_inf + a eps^p``.

    ``resolution`` bounds the number of adaptive subintervals per radial integral.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    eps = list(default_eps(delta) if eps_list is None else eps_list)
    if len(eps) < 4:
        raise ValueError("the extrapolation needs at least four scales")
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError("eps list must be strictly decreasing")
    if eps[0] > delta or eps[-1] <= 0:
        raise ValueError("scales must lie in (0, delta]")
    rows = [bubble_terms(n, e, delta, resolution) for e in eps]
    x = np.array(eps)
    js = np.array([r["J"] for r in rows])
    if np.any(js <= 0):
        raise ArithmeticError("non-positive functional value")
    start = [js[-1], (js[0] - js[-1]) / max(x[0], 1e-300), 1.0]
    params, _ = curve_fit(_power_law, x, js, p0=start, maxfev=20000)
    return RayleighReport(
        n=n,
        delta=delta,
        values=[(float(e), float(j)) for e, j in zip(eps, js)],
        limit=float(params[0]),
        amplitude=float(params[1]),
        order=float(params[2]),
        target=sphere_constant(n),
        numerators=[r["numerator"] for r in rows],
        denominators=[r["denominator"] for r in rows],
        quadrature={
            "method": "adaptive Gauss-Kronrod on the radial reduction",
            "subinterval_limit": resolution,
            "rtol": QUAD_RTOL,
            "max_abs_error": float(max(max(r["abs_error"]) for r in rows)),
            "converged": all(r["converged"] for r in rows),
        },
        budget=budget,
    )


# ----------------------------------------------------------------------- surface family

SURFACE_ALPHA = 2.0
SURFACE_DELTA = 8.0


def surface_factor(r: NDArray[np.float64] | float, eps: float, alpha: float) -> NDArray[np.float64]:
    """``2 eps^2 / (eps^2 + min(r, alpha)^2)``: the bubble frozen outside ``r = alpha``."""
    rr = np.minimum(np.asarray(r, dtype=float), alpha)
    return 2 * eps**2 / (eps**2 + rr**2)


def surface_family(eps: float, alpha: float = SURFACE_ALPHA, delta: float = SURFACE_DELTA,
                   limit: int = 200) -> dict:
    """Rayleigh bound, volume and product for ``g_eps = f_eps^2 xi`` on the half-disk of radius ``2 delta``.

    The test spinor is ``eta psi^+(x / eps)`` transferred to ``g_eps``; in flat
    quantities its quotient is ``int |D psi|^2 / f_eps  /  int Re <D psi, psi>``.
    """
    n = 2
    if not 0 < eps <= alpha <= delta:
        raise ValueError(f"need 0 < eps <= alpha <= delta, got {eps}, {alpha}, {delta}")
    inner = float(surface_factor(alpha * (1 - 1e-15), eps, alpha))
    outer = float(surface_factor(alpha * (1 + 1e-15), eps, alpha))
    exact = 2 * eps**2 / (eps**2 + alpha**2)

    def dirac_sq(r):
        fe = _bubble(r / eps)
        return cutoff_radial_derivative(r, delta) ** 2 * fe + cutoff_radial(r, delta) ** 2 * fe**3 / eps**2

    stop = 2 * delta
    breaks = [eps, 3 * eps, alpha, delta]
    N, eN, okN = _radial_quad(lambda r: r * dirac_sq(r) / surface_factor(r, eps, alpha), stop, breaks, limit)
    Dn, eD, okD = _radial_quad(lambda r: r * cutoff_radial(r, delta) ** 2 * _bubble(r / eps) ** 2 / eps, stop, breaks, limit)
    V, eV, okV = _radial_quad(lambda r: r * surface_factor(r, eps, alpha) ** 2, stop, breaks, limit)
    shell = _half_shell(n)
    lam = N / Dn
    volume = shell * V
    target_volume = eps**2 * sphere_area(1)
    product = lam * math.sqrt(volume)
    return {
        "eps": eps,
        "alpha": alpha,
        "delta": delta,
        "lambda_bound": lam,
        "volume": volume,
        "volume_target": target_volume,
        "volume_ratio": volume / target_volume,
        "product": product,
        "product_target": sphere_constant(n),
        "product_ratio": product / sphere_constant(n),
        "continuity_gap": max(abs(inner - exact), abs(outer - exact)),
        "quadrature": {"abs_error": [eN, eD, eV], "converged": okN and okD and okV},
    }


def surface_scan(eps_list: list[float] | None = None, alpha: float = SURFACE_ALPHA, delta: float = SURFACE_DELTA,
                 budget: float = SURFACE_BUDGET, volume_budget: float = 0.05) -> dict:
    """Surface family along decreasing ``eps``; verdicts at the finest scale."""
    eps = list(eps_list or [0.2, 0.1, 0.05])
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError("eps list must be strictly decreasing")
    rows = [surface_family(e, alpha, delta) for e in eps]
    prods = [r["product"] for r in rows]
    target = sphere_constant(2)
    last = rows[-1]
    verdicts = {
        "product_bound": bool(last["product"] <= target * (1 + budget)),
        "monotone": bool(all(a > b for a, b in zip(prods, prods[1:]))),
        "from_above": bool(all(p >= target for p in prods)),
        "volume": bool(abs(last["volume_ratio"] - 1) < volume_budget),
        "continuity": bool(all(r["continuity_gap"] < 1e-12 for r in rows)),
    }
    return {
        "alpha": alpha,
        "delta": delta,
        "rows": rows,
        "target": target,
        "budget": budget,
        "volume_budget": volume_budget,
        "verdicts": verdicts,
        "pass": all(verdicts.values()),
    }
