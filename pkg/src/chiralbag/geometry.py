"""Fermi-coordinate metric charts, orthonormal frames and Dirac correction fields.

Coordinates are ``p = (x_1, ..., x_{n-1}, t)`` with ``t`` the distance to the
boundary.  Index conventions for returned arrays:

* ``B[j, i] = b^j_i`` so that column ``i`` holds the components of ``e_i``;
* ``christoffel(...)[l, r, s] = Gamma^l_{rs}``;
* ``tilde_christoffel(...)[i, j, k] = tilde Gamma^k_{ij} = g(nabla_{e_i} e_j, e_k)``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla
from numpy.typing import ArrayLike, NDArray

from .clifford import CliffordRep

FD_STEP = 1e-4
FIT_RADIUS = 1e-2
FIT_POINTS = 5
FIT_DEGREE = 4

TangentialMetric = Callable[[NDArray[np.float64]], NDArray[np.float64]]


@dataclass(frozen=True)
class MetricChart:
    """Metric ``dt^2 + g_ij(x, t) dx^i dx^j`` near a boundary point ``q`` at the origin.

    ``tangential(p)`` returns the ``(n-1, n-1)`` block ``g_ij``.  When
    ``dtangential`` is given it returns ``d_k g_ij`` with shape ``(n, n-1, n-1)``;
    otherwise derivatives are Richardson-extrapolated central differences.
    ``boundary`` holds declared data at ``q``: ``h`` (second fundamental form),
    ``riemann`` (``R_{i a b j}`` in the convention
    ``g_ij = delta + R_{i a b j} x^a x^b / 3 + ...``), ``ambient_nn``
    (``R~^{i j}_{nn}``) and ``g_t_alpha`` (``d_a d_t g^{ij}``, indexed ``[i, j, a]``).
    """

    n: int
    name: str
    tangential: TangentialMetric = field(repr=False)
    dtangential: Callable[[NDArray[np.float64]], NDArray[np.float64]] | None = field(default=None, repr=False)
    radius: float = math.inf
    allows_negative_t: bool = True
    boundary: dict = field(default_factory=dict, repr=False)
    fd_step: float = FD_STEP

    def check_point(self, p: ArrayLike) -> NDArray[np.float64]:
        p = np.asarray(p, dtype=float)
        if p.shape != (self.n,):
            raise ValueError(f"point of dimension {self.n} expected, got shape {p.shape}")
        if np.linalg.norm(p) >= self.radius:
            raise ValueError(f"point {p} outside chart domain r < {self.radius}")
        if p[-1] < 0 and not self.allows_negative_t:
            raise ValueError("chart defined for t >= 0 only")
        return p

    def metric(self, p: ArrayLike) -> NDArray[np.float64]:
        p = self.check_point(p)
        G = np.eye(self.n)
        G[:-1, :-1] = self.tangential(p)
        return G

    def dmetric(self, p: ArrayLike) -> NDArray[np.float64]:
        """``d_k g_ab`` with shape ``(n, n, n)``; the normal row and column vanish."""
        p = self.check_point(p)
        n = self.n
        out = np.zeros((n, n, n))
        if self.dtangential is not None:
            out[:, :-1, :-1] = self.dtangential(p)
            return out
        for k in range(n):
            out[k, :-1, :-1] = _richardson(lambda q: self.tangential(q), p, k, self.fd_step)
        return out


def _richardson(fun: Callable, p: NDArray[np.float64], k: int, step: float) -> NDArray[np.float64]:
    def central(s: float):
        e = np.zeros_like(p)
        e[k] = s
        return (fun(p + e) - fun(p - e)) / (2 * s)

    return (4 * central(step / 2) - central(step)) / 3


# ------------------------------------------------------------------ frames


@dataclass(frozen=True)
class FrameData:
    """``B`` with ``B^2 = G^{-1}`` in Fermi block form, and its inverse."""

    B: NDArray[np.float64]
    Binv: NDArray[np.float64]

    def iso_residual(self, G: NDArray[np.float64]) -> float:
        return float(np.linalg.norm(self.B @ G @ self.B - np.eye(len(G)), 2))


def _check_fermi_form(G: NDArray[np.float64], tol: float = 1e-12) -> None:
    if abs(G[-1, -1] - 1.0) > tol or np.abs(G[-1, :-1]).max(initial=0.0) > tol:
        raise ValueError("metric is not in Fermi block form (g_nn = 1, g_in = 0)")


def sqrt_inverse_metric(G: ArrayLike) -> FrameData:
    """SPD square root of ``G^{-1}`` by eigendecomposition of the tangential block."""
    G = np.asarray(G, dtype=float)
    _check_fermi_form(G)
    Gt = 0.5 * (G[:-1, :-1] + G[:-1, :-1].T)
    w, V = np.linalg.eigh(Gt)
    if w.size and w.min() <= 0:
        raise ValueError(f"metric not positive definite: smallest eigenvalue {w.min():.3e}")
    n = len(G)
    B = np.eye(n)
    Binv = np.eye(n)
    B[:-1, :-1] = (V / np.sqrt(w)) @ V.T
    Binv[:-1, :-1] = (V * np.sqrt(w)) @ V.T
    return FrameData(B, Binv)


def frame(chart: MetricChart, p: ArrayLike) -> FrameData:
    return sqrt_inverse_metric(chart.metric(p))


def frame_derivatives(chart: MetricChart, p: ArrayLike) -> NDArray[np.float64]:
    """``d_r b^l_j`` as an array ``[r, l, j]``.

    Differentiating ``B^2 = G^{-1}`` gives the Sylvester equation
    ``B dB + dB B = -G^{-1} dG G^{-1}`` on the tangential block.
    """
    p = chart.check_point(p)
    G = chart.metric(p)
    dG = chart.dmetric(p)
    fr = sqrt_inverse_metric(G)
    n = chart.n
    Bt = fr.B[:-1, :-1]
    Ginv = np.linalg.inv(G[:-1, :-1])
    out = np.zeros((n, n, n))
    for r in range(n):
        rhs = -Ginv @ dG[r, :-1, :-1] @ Ginv
        out[r, :-1, :-1] = sla.solve_sylvester(Bt, Bt, rhs)
    return out


def christoffel(chart: MetricChart, p: ArrayLike) -> NDArray[np.float64]:
    """``Gamma^l_{rs} = g^{lk} (d_r g_sk + d_s g_rk - d_k g_rs) / 2``."""
    G = chart.metric(p)
    dG = chart.dmetric(p)
    first = 0.5 * (np.einsum("rsk->rsk", dG) + np.einsum("srk->rsk", dG) - np.einsum("krs->rsk", dG))
    return np.einsum("lk,rsk->lrs", np.linalg.inv(G), first)


def tilde_christoffel(chart: MetricChart, p: ArrayLike) -> NDArray[np.float64]:
    """``tilde Gamma^k_{ij} = (b^r_i d_r b^l_j + b^r_i b^s_j Gamma^l_{rs}) (b^{-1})^k_l``."""
    fr = frame(chart, p)
    dB = frame_derivatives(chart, p)
    Gam = christoffel(chart, p)
    B, Binv = fr.B, fr.Binv
    X = np.einsum("ri,rlj->ijl", B, dB) + np.einsum("ri,sj,lrs->ijl", B, B, Gam)
    return np.einsum("ijl,kl->ijk", X, Binv)


def antisymmetry_residual(Gt: NDArray[np.float64]) -> float:
    """``max |tilde Gamma^k_{ij} + tilde Gamma^j_{ik}|``."""
    return float(np.abs(Gt + np.swapaxes(Gt, 1, 2)).max())


# ------------------------------------------------------------ correction fields


@dataclass(frozen=True)
class CorrectionFields:
    """Zeroth-order terms relating ``D_g`` to ``D_xi`` in the frame trivialization.

    ``W[i, j, k]`` is totally antisymmetric with ``W.psi = sum_{i<j<k} W_ijk e_i e_j e_k psi``;
    ``Z[i, j]`` is antisymmetric with ``Z.psi = sum_{i<j} Z_ij e_i e_j psi``;
    ``T`` has length ``n`` (normal entry zero).  Indices run over tangential directions.
    """

    W: NDArray[np.float64]
    T: NDArray[np.float64]
    Z: NDArray[np.float64]
    H_t: float

    @property
    def norms(self) -> dict[str, float]:
        m = self.W.shape[0]
        w = [self.W[i, j, k] for i, j, k in itertools.combinations(range(m), 3)]
        z = [self.Z[i, j] for i, j in itertools.combinations(range(m), 2)]
        return {
            "W": float(np.linalg.norm(w)) if w else 0.0,
            "T": float(np.linalg.norm(self.T)),
            "Z": float(np.linalg.norm(z)) if z else 0.0,
            "H_t": abs(self.H_t),
        }

    def apply(self, rep: CliffordRep, psi: NDArray[np.complex128]) -> NDArray[np.complex128]:
        """``W.psi + T.psi + nu.Z.psi - (n-1)/2 H_t nu.psi``."""
        g = rep.gamma
        n = rep.n
        m = n - 1
        out = np.zeros(rep.d, dtype=complex)
        for i, j, k in itertools.combinations(range(m), 3):
            out += self.W[i, j, k] * (g[i] @ g[j] @ g[k] @ psi)
        for j in range(m):
            out += self.T[j] * (g[j] @ psi)
        zpsi = np.zeros(rep.d, dtype=complex)
        for i, j in itertools.combinations(range(m), 2):
            zpsi += self.Z[i, j] * (g[i] @ g[j] @ psi)
        out += g[n - 1] @ zpsi
        out -= 0.5 * (n - 1) * self.H_t * (g[n - 1] @ psi)
        return out


def _perm_sign(perm: tuple[int, ...]) -> int:
    sign = 1
    p = list(perm)
    for i in range(len(p)):
        while p[i] != i:
            j = p[i]
            p[i], p[j] = p[j], p[i]
            sign = -sign
    return sign


def correction_fields(chart: MetricChart, p: ArrayLike) -> CorrectionFields:
    n = chart.n
    m = n - 1
    fr = frame(chart, p)
    dB = frame_derivatives(chart, p)
    Gam = christoffel(chart, p)
    Gt = tilde_christoffel(chart, p)
    B, Binv = fr.B, fr.Binv
    # c_ijk = b^r_i d_r(b^l_j) (b^{-1})^k_l
    c = np.einsum("ri,rlj,kl->ijk", B, dB, Binv)
    W = np.zeros((m, m, m))
    for i, j, k in itertools.combinations(range(m), 3):
        val = 0.0
        idx = (i, j, k)
        for perm in itertools.permutations(range(3)):
            a, b, cc = (idx[q] for q in perm)
            val += _perm_sign(perm) * c[a, b, cc]
        val *= 0.25
        for perm in itertools.permutations(range(3)):
            a, b, cc = (idx[q] for q in perm)
            W[a, b, cc] = _perm_sign(perm) * val
    T = np.zeros(n)
    for j in range(m):
        T[j] = 0.25 * sum(Gt[i, j, i] - Gt[i, i, j] for i in range(m))
    # z_ij = d_n(b^l_i)(b^{-1})^j_l + b^r_j Gamma^l_{rn} (b^{-1})^i_l
    z = np.einsum("li,jl->ij", dB[n - 1], Binv) + np.einsum("rj,lr,il->ij", B, Gam[:, :, n - 1], Binv)
    z = z[:m, :m]
    Z = 0.25 * (z - z.T)
    H_t = -float(sum(Gt[i, n - 1, i] for i in range(m))) / m
    return CorrectionFields(W=W, T=T, Z=Z, H_t=H_t)


# ------------------------------------------------------------ charts


def flat_chart(n: int) -> MetricChart:
    m = n - 1
    return MetricChart(
        n=n,
        name="flat",
        tangential=lambda p: np.eye(m),
        dtangential=lambda p: np.zeros((n, m, m)),
        boundary=_declared(n),
    )


def _declared(n: int, h=None, riemann=None, ambient_nn=None, g_t_alpha=None) -> dict:
    m = n - 1
    return {
        "h": np.zeros((m, m)) if h is None else np.asarray(h, dtype=float),
        "riemann": np.zeros((m, m, m, m)) if riemann is None else np.asarray(riemann, dtype=float),
        "ambient_nn": np.zeros((m, m)) if ambient_nn is None else np.asarray(ambient_nn, dtype=float),
        "g_t_alpha": np.zeros((m, m, m)) if g_t_alpha is None else np.asarray(g_t_alpha, dtype=float),
    }


_SERIES_CUT = 1e-2


def _sphere_profile(rho: NDArray[np.float64]):
    """``s = sin^2 rho / rho^2``, ``q = (1 - s) / rho^2`` and ``s'/rho``, ``q'/rho``."""
    rho = np.asarray(rho, dtype=float)
    r2 = rho**2
    small = rho < _SERIES_CUT
    safe = np.where(small, 1.0, rho)
    sin = np.sin(safe)
    s_big = sin**2 / safe**2
    q_big = (1 - s_big) / safe**2
    ds_big = (np.sin(2 * safe) / safe**2 - 2 * sin**2 / safe**3) / safe
    dq_big = (-ds_big * safe / safe**2 - 2 * (1 - s_big) / safe**3) / safe
    s_ser = 1 - r2 / 3 + 2 * r2**2 / 45 - r2**3 / 315
    q_ser = 1 / 3 - 2 * r2 / 45 + r2**2 / 315 - 2 * r2**3 / 14175
    ds_ser = -2 / 3 + 8 * r2 / 45 - 6 * r2**2 / 315
    dq_ser = -4 / 45 + 4 * r2 / 315 - 12 * r2**2 / 14175
    pick = lambda a, b: np.where(small, a, b)  # noqa: E731
    return pick(s_ser, s_big), pick(q_ser, q_big), pick(ds_ser, ds_big), pick(dq_ser, dq_big)


def fermi_chart_hemisphere(n: int) -> MetricChart:
    """Round ``S^n_+`` as ``dt^2 + cos^2 t sigma(x)`` with ``sigma`` the unit ``S^{n-1}`` in normal coordinates."""
    if n < 2:
        raise ValueError("n >= 2 required")
    m = n - 1
    eye = np.eye(m)

    def sigma_parts(x):
        rho = np.linalg.norm(x)
        s, q, ds, dq = _sphere_profile(np.array(rho))
        return float(s), float(q), float(ds), float(dq)

    def tangential(p):
        x, t = p[:-1], p[-1]
        s, q, _, _ = sigma_parts(x)
        sigma = s * eye + q * np.outer(x, x)
        return math.cos(t) ** 2 * sigma

    def dtangential(p):
        x, t = p[:-1], p[-1]
        s, q, ds, dq = sigma_parts(x)
        sigma = s * eye + q * np.outer(x, x)
        out = np.zeros((n, m, m))
        c2 = math.cos(t) ** 2
        for k in range(m):
            dsig = ds * x[k] * eye + dq * x[k] * np.outer(x, x)
            dsig += q * (np.outer(eye[k], x) + np.outer(x, eye[k]))
            out[k] = c2 * dsig
        out[m] = -math.sin(2 * t) * sigma
        return out

    riemann = np.einsum("ib,aj->iabj", eye, eye) - np.einsum("ij,ab->iabj", eye, eye)
    return MetricChart(
        n=n,
        name="hemisphere",
        tangential=tangential,
        dtangential=dtangential,
        radius=math.pi / 2,
        boundary=_declared(n, riemann=riemann, ambient_nn=eye),
    )


def _arclength_inverse(s: float, kappa: float) -> float:
    """``x`` with arclength ``s`` along ``y = kappa x^2 / 2`` from the vertex."""
    if kappa == 0:
        return s
    x = s
    for _ in range(60):
        u = kappa * x
        arc = 0.5 * (x * math.sqrt(1 + u * u) + math.asinh(u) / kappa)
        step = (arc - s) / math.sqrt(1 + u * u)
        x -= step
        if abs(step) < 1e-17 * max(1.0, abs(x)):
            break
    return x


def graph_chart(kappa: float) -> MetricChart:
    """Flat half-plane region ``{y >= kappa x^2 / 2}`` in Fermi coordinates of its boundary curve.

    With ``k(s)`` the curvature at arclength ``s`` the metric is
    ``dt^2 + (1 - k(s) t)^2 ds^2``; the chart is valid for ``t < 1 / |kappa|``.
    """
    kappa = float(kappa)

    def curvature(s: float) -> float:
        x = _arclength_inverse(s, kappa)
        return kappa / (1 + (kappa * x) ** 2) ** 1.5

    def tangential(p):
        s, t = p
        return np.array([[(1 - curvature(s) * t) ** 2]])

    radius = 0.5 / abs(kappa) if kappa else math.inf
    return MetricChart(
        n=2,
        name=f"graph:{kappa:g}",
        tangential=tangential,
        radius=radius,
        boundary=_declared(2, h=[[kappa]]),
    )


def synthetic_chart(a: float = 0.1, b: float = 0.0, c: float = 0.0, n: int = 3) -> MetricChart:
    """``g_ij = (1 + a x_1 t) delta_ij + b x_2 t E_ij + c t^2 S_ij``.

    ``E = e_1 e_1^T`` and ``S`` swaps the first two tangential axes; with
    ``b, c != 0`` the tangential metric and its normal derivative do not commute.
    """
    m = n - 1
    eye = np.eye(m)
    S = np.zeros((m, m))
    E = np.zeros((m, m))
    if m >= 2:
        S[0, 1] = S[1, 0] = 1.0
    E[0, 0] = 1.0
    if m < 2 and b:
        raise ValueError("the b term needs n >= 3")

    def tangential(p):
        x2 = p[1] if m >= 2 else 0.0
        x1, t = p[0], p[-1]
        return (1 + a * x1 * t) * eye + b * x2 * t * E + c * t * t * S

    def dtangential(p):
        x2 = p[1] if m >= 2 else 0.0
        x1, t = p[0], p[-1]
        out = np.zeros((n, m, m))
        out[0] += a * t * eye
        if m >= 2:
            out[1] += b * t * E
        out[m] += a * x1 * eye + b * x2 * E + 2 * c * t * S
        return out

    g_t_alpha = np.zeros((m, m, m))
    g_t_alpha[:, :, 0] = -a * eye
    if m >= 2:
        g_t_alpha[:, :, 1] = -b * E
    return MetricChart(
        n=n,
        name=f"synthetic:a={a:g},b={b:g},c={c:g}",
        tangential=tangential,
        dtangential=dtangential,
        radius=1.0,
        # h = 0 and flat boundary; the t^2 coefficient of g^{ij} is -c S
        boundary=_declared(n, ambient_nn=-c * S, g_t_alpha=g_t_alpha),
    )


def chart_from_name(name: str, n: int = 3) -> MetricChart:
    """``flat``, ``hemisphere``, ``graph:<kappa>`` or ``synthetic[:<a> | :a=..,b=..,c=..,n=..]``."""
    head, _, arg = name.partition(":")
    if head == "flat":
        return flat_chart(n)
    if head == "hemisphere":
        return fermi_chart_hemisphere(n)
    if head == "graph":
        return graph_chart(float(arg) if arg else 0.3)
    if head == "synthetic":
        params: dict[str, float] = {}
        if arg:
            if "=" in arg:
                for item in arg.split(","):
                    key, _, val = item.partition("=")
                    if key not in ("a", "b", "c", "n"):
                        raise ValueError(f"unknown synthetic chart key {key!r}")
                    params[key] = float(val)
            else:
                params["a"] = float(arg)
        return synthetic_chart(params.get("a", 0.1), params.get("b", 0.0), params.get("c", 0.0),
                               int(params.get("n", n)))
    raise ValueError(f"unknown chart {name!r}")


# ------------------------------------------------------------ curvature oracle


def _christoffel_derivative(chart: MetricChart, p: NDArray[np.float64], k: int, step: float = 1e-4):
    return _richardson(lambda q: christoffel(chart, q), p, k, step)


def riemann_tensor(chart: MetricChart, p: ArrayLike) -> NDArray[np.float64]:
    """``R^l_{ijk}`` with ``R(d_j, d_k) d_i = R^l_{ijk} d_l``, from differenced Christoffel symbols."""
    p = chart.check_point(p)
    n = chart.n
    Gam = christoffel(chart, p)
    dGam = np.stack([_christoffel_derivative(chart, p, k) for k in range(n)])  # [j, l, i, k]
    return (np.einsum("jlik->lijk", dGam) - np.einsum("klij->lijk", dGam)
            + np.einsum("ljm,mik->lijk", Gam, Gam) - np.einsum("lkm,mij->lijk", Gam, Gam))


def riemann_lower(chart: MetricChart, p: ArrayLike) -> NDArray[np.float64]:
    """``R_{abcd} = g(R(d_c, d_d) d_b, d_a)``."""
    return np.einsum("am,mbcd->abcd", chart.metric(p), riemann_tensor(chart, p))


def ricci_tensor(chart: MetricChart, p: ArrayLike) -> NDArray[np.float64]:
    return np.einsum("jijk->ik", riemann_tensor(chart, p))


def scalar_curvature_at(chart: MetricChart, p: ArrayLike) -> float:
    """Scalar curvature from finite-differenced Christoffel symbols."""
    return float(np.einsum("ik,ik->", np.linalg.inv(chart.metric(p)), ricci_tensor(chart, p)))


def second_fundamental_form(chart: MetricChart, x: ArrayLike) -> NDArray[np.float64]:
    """``h_ij(x) = -d_t g_ij(x, 0) / 2`` for the inner normal ``d_t``."""
    p = np.append(np.asarray(x, dtype=float), 0.0)
    return -0.5 * chart.dmetric(p)[-1, :-1, :-1]


def codazzi_check(chart: MetricChart, x: ArrayLike | None = None, tol: float = 1e-6) -> dict:
    """``R_{ijkn} = h_{ik,j} - h_{jk,i}`` at a boundary point, curvature from the chart."""
    m = chart.n - 1
    x = np.zeros(m) if x is None else np.asarray(x, dtype=float)
    dh = np.stack([_richardson(lambda y: second_fundamental_form(chart, y), x, k, 1e-4) for k in range(m)])
    rhs = np.einsum("jik->ijk", dh) - np.einsum("ijk->ijk", dh)
    lhs = riemann_lower(chart, np.append(x, 0.0))[:m, :m, :m, m]
    err = float(np.abs(lhs - rhs).max()) if m else 0.0
    return {"chart": chart.name, "max_error": err, "tol": tol, "pass": bool(err < tol)}


def t_development_check(chart: MetricChart, radius: float = 1e-3, tol: float = 1e-5) -> dict:
    """Linear part of ``T`` against ``-Ric_{aj} x^a / 4 - Ric~_{tj} t / 2``.

    The boundary Ricci tensor is contracted from the declared ``riemann`` data
    and the ambient one comes from the curvature oracle at ``q``.
    """
    n = chart.n
    m = n - 1
    ric_b = np.einsum("iaij->aj", chart.boundary["riemann"])
    ric_t = ricci_tensor(chart, np.zeros(n))[n - 1, :m]
    slopes = np.zeros((n, m))
    for a in range(n):
        e = np.zeros(n)
        e[a] = radius
        slopes[a] = (correction_fields(chart, e).T[:m] - correction_fields(chart, -e).T[:m]) / (2 * radius)
    expected = np.vstack([-0.25 * ric_b, -0.5 * ric_t[None, :]])
    err = float(np.abs(slopes - expected).max())
    return {"chart": chart.name, "fitted": slopes.tolist(), "expected": expected.tolist(),
            "max_error": err, "tol": tol, "pass": bool(err < tol)}


# ------------------------------------------------------------ expansions


def _monomials(n: int, degree: int) -> list[tuple[int, ...]]:
    out = []
    for total in range(degree + 1):
        for combo in itertools.combinations_with_replacement(range(n), total):
            e = [0] * n
            for c in combo:
                e[c] += 1
            out.append(tuple(e))
    return out


def _stencil(chart: MetricChart, radius: float, points: int) -> NDArray[np.float64]:
    n = chart.n
    axes = [np.linspace(-radius, radius, points)] * (n - 1)
    if chart.allows_negative_t:
        axes.append(np.linspace(-radius, radius, points))
    else:
        axes.append(np.linspace(0.0, 2 * radius, points))
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.reshape(-1) for g in mesh], axis=1)


def polynomial_fit(chart: MetricChart, fun: Callable[[NDArray[np.float64]], NDArray[np.float64]],
                   radius: float = FIT_RADIUS, points: int = FIT_POINTS, degree: int = FIT_DEGREE) -> dict:
    """Least-squares Taylor coefficients of a matrix-valued map on a tensor stencil.

    Monomials up to ``degree`` are fitted in scaled variables so that the
    reported low-order coefficients are not polluted by the cubic remainder.
    """
    pts = _stencil(chart, radius, points)
    mons = _monomials(chart.n, degree)
    scaled = pts / radius
    V = np.stack([np.prod(scaled ** np.array(e), axis=1) for e in mons], axis=1)
    if len(pts) < len(mons):
        raise ValueError(f"stencil of {len(pts)} points cannot determine {len(mons)} coefficients (condition)")
    vals = np.stack([np.asarray(fun(p), dtype=float).reshape(-1) for p in pts])
    cond = float(np.linalg.cond(V))
    if not np.isfinite(cond) or cond > 1e8:
        raise ValueError(f"ill-conditioned fit (condition number {cond:.2e}); change the stencil")
    coef, *_ = np.linalg.lstsq(V, vals, rcond=None)
    scale = np.array([radius ** sum(e) for e in mons])
    coef = coef / scale[:, None]
    resid = float(np.abs(V @ (coef * scale[:, None]) - vals).max())
    shape = np.asarray(fun(pts[0])).shape
    return {"monomials": mons, "coef": {e: coef[i].reshape(shape) for i, e in enumerate(mons)},
            "residual": resid, "condition": cond}


def _quadratic_parts(fit: dict, n: int) -> dict[str, NDArray[np.float64]]:
    """Coefficient tensors of ``t``, ``x^a x^b`` (symmetric, indexed ``[i, j, a, b]``), ``x^a t`` and ``t^2``."""
    m = n - 1
    coef = fit["coef"]

    def unit(*idx):
        e = [0] * n
        for i in idx:
            e[i] += 1
        return coef[tuple(e)]

    shape = coef[tuple([0] * n)].shape
    t1 = unit(n - 1)
    t2 = unit(n - 1, n - 1)
    xx = np.zeros(shape + (m, m))
    xt = np.zeros(shape + (m,))
    for a in range(m):
        xt[..., a] = unit(a, n - 1)
        for b in range(m):
            c = unit(a, b)
            xx[..., a, b] = c if a == b else 0.5 * c
    return {"const": coef[tuple([0] * n)], "t": t1, "xx": xx, "xt": xt, "tt": t2}


def declared_inverse_expansion(chart: MetricChart) -> dict[str, NDArray[np.float64]]:
    """Expected coefficients of ``g^{ij}`` from the declared boundary data."""
    b = chart.boundary
    h = b["h"]
    return {
        "t": 2 * h,
        "xx": -np.einsum("iabj->ijab", b["riemann"]) / 3,
        "xt": b["g_t_alpha"],
        "tt": 3 * h @ h + b["ambient_nn"],
    }


def _sym_xx(xx: NDArray[np.float64]) -> NDArray[np.float64]:
    return 0.5 * (xx + np.swapaxes(xx, -1, -2))


def metric_expansion_coeffs(chart: MetricChart, radius: float = FIT_RADIUS, points: int = FIT_POINTS) -> dict:
    """Fitted Taylor coefficients of ``g^{ij} - delta^{ij}`` at ``q`` against the declared data."""
    m = chart.n - 1
    fit = polynomial_fit(chart, lambda p: np.linalg.inv(chart.tangential(p)) - np.eye(m), radius, points)
    parts = _quadratic_parts(fit, chart.n)
    declared = declared_inverse_expansion(chart)
    errors = {
        "t": float(np.abs(parts["t"] - declared["t"]).max()),
        "xx": float(np.abs(_sym_xx(parts["xx"]) - _sym_xx(declared["xx"])).max()),
        "xt": float(np.abs(parts["xt"] - declared["xt"]).max()) if m else 0.0,
        "tt": float(np.abs(parts["tt"] - declared["tt"]).max()),
    }
    return {
        "chart": chart.name,
        "fitted": {k: v.tolist() for k, v in parts.items() if k != "const"},
        "declared": {k: v.tolist() for k, v in declared.items()},
        "errors": errors,
        "max_error": max(errors.values()),
        "fit_residual": fit["residual"],
        "condition": fit["condition"],
        "radius": radius,
        "h_recovered": (parts["t"] / 2).tolist(),
    }


def b_expansion_check(chart: MetricChart, radius: float = FIT_RADIUS, points: int = FIT_POINTS,
                      tol: float = 1e-6) -> dict:
    """Fitted coefficients of ``B`` and ``B^{-1}`` against those implied by the ``g^{ij}`` fit.

    From ``B^2 = G^{-1} = I + G_1 + ... `` : first-order and mixed terms halve;
    the ``t^2`` term of ``B`` is ``(G_tt - G_t^2 / 4) / 2`` and that of ``B^{-1}``
    is ``-G_tt / 2 + 3 G_t^2 / 8``.
    """
    m = chart.n - 1
    g = _quadratic_parts(polynomial_fit(chart, lambda p: np.linalg.inv(chart.tangential(p)) - np.eye(m),
                                        radius, points), chart.n)
    bfit = _quadratic_parts(polynomial_fit(chart, lambda p: frame(chart, p).B[:-1, :-1] - np.eye(m),
                                           radius, points), chart.n)
    bifit = _quadratic_parts(polynomial_fit(chart, lambda p: frame(chart, p).Binv[:-1, :-1] - np.eye(m),
                                            radius, points), chart.n)
    At = g["t"]
    expect_b = {"t": At / 2, "xx": g["xx"] / 2, "xt": g["xt"] / 2, "tt": (g["tt"] - At @ At / 4) / 2}
    expect_bi = {"t": -At / 2, "xx": -g["xx"] / 2, "xt": -g["xt"] / 2, "tt": -g["tt"] / 2 + 3 * At @ At / 8}
    err_b = {k: float(np.abs(bfit[k] - v).max()) if v.size else 0.0 for k, v in expect_b.items()}
    err_bi = {k: float(np.abs(bifit[k] - v).max()) if v.size else 0.0 for k, v in expect_bi.items()}
    worst = max(max(err_b.values()), max(err_bi.values()))
    return {
        "chart": chart.name,
        "B_fitted": {k: bfit[k].tolist() for k in expect_b},
        "B_expected": {k: v.tolist() for k, v in expect_b.items()},
        "Binv_fitted": {k: bifit[k].tolist() for k in expect_bi},
        "Binv_expected": {k: v.tolist() for k, v in expect_bi.items()},
        "errors_B": err_b,
        "errors_Binv": err_bi,
        "max_error": worst,
        "tol": tol,
        "pass": bool(worst < tol),
    }


def _slope(radii: NDArray[np.float64], values: NDArray[np.float64], floor: float) -> float | str:
    if np.all(values < floor):
        return "vanishes"
    keep = values >= floor
    if keep.sum() < 2:
        return "vanishes"
    return float(np.polyfit(np.log(radii[keep]), np.log(values[keep]), 1)[0])


def order_estimate_scan(chart: MetricChart, radii: ArrayLike | None = None, direction: ArrayLike | None = None,
                        floor: float = 1e-13) -> dict:
    """Log-log slopes of ``|W|``, ``|Z|``, ``|T|`` and ``|H_t|`` along a fixed ray from ``q``."""
    n = chart.n
    radii = np.geomspace(0.2, 0.01, 8) if radii is None else np.asarray(radii, dtype=float)
    if np.any(np.diff(radii) >= 0):
        raise ValueError("radii must be strictly decreasing")
    if radii[0] / radii[-1] < 10 * (1 - 1e-12):
        raise ValueError("radii must span at least one decade")
    u = np.ones(n) / math.sqrt(n) if direction is None else np.asarray(direction, dtype=float)
    u = u / np.linalg.norm(u)
    rows = {"W": [], "Z": [], "T": [], "H_t": []}
    for r in radii:
        norms = correction_fields(chart, r * u).norms
        for key in rows:
            rows[key].append(norms[key])
    vals = {k: np.array(v) for k, v in rows.items()}
    slopes = {k: _slope(radii, v, floor) for k, v in vals.items()}
    need = {"W": 1.9, "Z": 1.9, "T": 0.9}
    verdicts = {k: (slopes[k] == "vanishes") or (slopes[k] >= need[k]) for k in need}
    return {
        "chart": chart.name,
        "direction": u.tolist(),
        "radii": radii.tolist(),
        "norms": {k: v.tolist() for k, v in vals.items()},
        "slopes": slopes,
        "thresholds": need,
        "verdicts": verdicts,
        "pass": bool(all(verdicts.values())),
    }


def devdir_identity_check(chart: MetricChart, rep: CliffordRep, field_: Callable, p: ArrayLike,
                          h: float = 1e-3) -> float:
    """``|D_g psi - (D_xi psi + sum (b - delta) d_i . d_j psi + corrections)|`` at ``p``.

    The left side is assembled from the spin connection
    ``nabla_{e_i} psi = e_i(psi) + 1/4 sum tilde Gamma^k_{ij} e_j e_k psi``;
    derivatives of ``psi`` are central differences with step ``h``.
    """
    p = chart.check_point(p)
    n = chart.n
    if rep.n != n:
        raise ValueError("representation and chart dimensions differ")
    fr = frame(chart, p)
    Gt = tilde_christoffel(chart, p)
    g = rep.gamma
    psi = np.asarray(field_(p), dtype=complex)
    dpsi = []
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        dpsi.append((np.asarray(field_(p + e)) - np.asarray(field_(p - e))) / (2 * h))
    lhs = np.zeros(rep.d, dtype=complex)
    for i in range(n):
        nabla = sum(fr.B[j, i] * dpsi[j] for j in range(n))
        for j in range(n):
            for k in range(n):
                if Gt[i, j, k] != 0.0:
                    nabla = nabla + 0.25 * Gt[i, j, k] * (g[j] @ g[k] @ psi)
        lhs += g[i] @ nabla
    rhs = sum(g[i] @ dpsi[i] for i in range(n))
    for i in range(n):
        for j in range(n):
            coef = fr.B[j, i] - (i == j)
            if coef != 0.0:
                rhs = rhs + coef * (g[i] @ dpsi[j])
    rhs = rhs + correction_fields(chart, p).apply(rep, psi)
    return float(np.linalg.norm(lhs - rhs))


def random_interior_points(chart: MetricChart, count: int = 10, scale: float = 0.5, seed: int = 0,
                           margin: float = 1e-2) -> NDArray[np.float64]:
    """Deterministic sample of points with ``t > margin`` inside ``scale`` times the chart radius (capped at 0.5)."""
    rng = np.random.default_rng(seed)
    rmax = min(scale * chart.radius, 0.5)
    out = []
    while len(out) < count:
        q = rng.uniform(-rmax, rmax, chart.n)
        q[-1] = abs(q[-1])
        if margin < q[-1] and np.linalg.norm(q) < rmax:
            out.append(q)
    return np.array(out)
