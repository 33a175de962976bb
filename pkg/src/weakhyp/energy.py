"""Quasi-Vandermonde symmetrizer, energy quantities and weight planning."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .symbols import bracket

__all__ = [
    "EnergyQuantities",
    "InadmissibleError",
    "QuantityFit",
    "ScalingReport",
    "SymmetrizerBlock",
    "WeightPlan",
    "build_block",
    "combined_constant",
    "detH_log_derivative",
    "energy_quantities",
    "fit_scaling",
    "gamma_exponent",
    "lagrange_inverse",
    "plan_weight",
    "scan_scaling",
    "thresholds",
    "vandermonde_block",
    "vandermonde_det",
]


class InadmissibleError(ValueError):
    """The requested Gevrey order or weight cannot satisfy the energy inequality."""


def vandermonde_block(mu):
    """``H[..., k, j] = mu_j^k`` for nodes ``mu[..., j]``."""
    mu = np.asarray(mu)
    m = mu.shape[-1]
    return mu[..., None, :] ** np.arange(m)[:, None]


def vandermonde_det(mu):
    """``prod_{i<j} (mu_j - mu_i)``."""
    mu = np.asarray(mu)
    m = mu.shape[-1]
    out = np.ones(mu.shape[:-1], dtype=mu.dtype)
    for j in range(1, m):
        for i in range(j):
            out = out * (mu[..., j] - mu[..., i])
    return out


def lagrange_inverse(mu, rtol=1e-14):
    """Inverse of :func:`vandermonde_block`; row ``r`` holds the monomial
    coefficients of the ``r``-th Lagrange basis polynomial on ``mu``."""
    mu = np.asarray(mu)
    m = mu.shape[-1]
    scale = np.max(np.abs(mu), axis=-1, keepdims=True) + np.finfo(float).tiny
    gaps = np.abs(mu[..., :, None] - mu[..., None, :]) + np.eye(m) * scale[..., None]
    if np.any(gaps < rtol * scale[..., None]):
        raise ValueError("node collision: symmetrizer block is singular")
    inv = np.zeros(mu.shape[:-1] + (m, m), dtype=mu.dtype)
    for r in range(m):
        poly = np.zeros(mu.shape[:-1] + (m,), dtype=mu.dtype)
        poly[..., 0] = 1.0
        denom = np.ones(mu.shape[:-1], dtype=mu.dtype)
        deg = 0
        for j in range(m):
            if j == r:
                continue
            # poly <- poly * (x - mu_j)
            new = np.zeros_like(poly)
            new[..., 1:deg + 2] = poly[..., :deg + 1]
            new[..., :deg + 1] -= mu[..., j, None] * poly[..., :deg + 1]
            poly = new
            deg += 1
            denom = denom * (mu[..., r] - mu[..., j])
        inv[..., r, :] = poly / denom[..., None]
    return inv


@dataclass(frozen=True)
class SymmetrizerBlock:
    nodes: np.ndarray
    matrix: np.ndarray
    det: float
    inverse: np.ndarray


def build_block(reg, t, q=0):
    """Symmetrizer block at time ``t`` for frequency index ``q`` of ``reg``."""
    vals, _ = reg.at(np.asarray([t], dtype=float))
    mu = vals[q, 0] / reg.brackets[q]
    return SymmetrizerBlock(nodes=mu, matrix=vandermonde_block(mu),
                            det=float(vandermonde_det(mu)), inverse=lagrange_inverse(mu))


def _nodes(reg, q, t=None):
    if t is None:
        vals, ders = reg.values[q], reg.derivatives[q]
    else:
        v, d = reg.at(np.asarray(t, dtype=float))
        vals, ders = v[q], d[q]
    xb = reg.brackets[q]
    return vals / xb, ders / xb


def detH_log_derivative(reg, q=0, t=None):
    """``|d_t det H / det H| = |sum_{i<j} (dl_j - dl_i) / (l_j - l_i)|``."""
    mu, dmu = _nodes(reg, q, t)
    m = mu.shape[-1]
    s = np.zeros(mu.shape[:-1])
    for j in range(1, m):
        for i in range(j):
            s = s + (dmu[..., j] - dmu[..., i]) / (mu[..., j] - mu[..., i])
    return np.abs(s)


def _spectral_norm(M):
    if M.shape[-1] == 1:
        return np.abs(M[..., 0, 0])
    return np.linalg.norm(M, ord=2, axis=(-2, -1))


def _antiherm_norm(M):
    return _spectral_norm(M - np.conj(np.swapaxes(M, -1, -2)))


@dataclass
class EnergyQuantities:
    """``q1..q4`` sampled at times ``t`` (NaN where the symbol is singular)."""

    t: np.ndarray
    eps: float
    xi_bracket: float
    q1: np.ndarray
    q2: np.ndarray
    q3: np.ndarray
    q4: np.ndarray


def energy_quantities(reg, reduced, q=0, t=None):
    """The four energy quantities on the grid of ``reg`` (or at times ``t``)."""
    spec = reduced.spec
    t = reg.t if t is None else np.asarray(t, dtype=float)
    xi = reg.field.xis[q]
    mu, dmu = _nodes(reg, q, None if t is reg.t else t)
    H = vandermonde_block(mu)
    Hinv = lagrange_inverse(mu)
    m = spec.m
    dH = np.zeros_like(H)
    for k in range(1, m):
        dH[..., k, :] = k * mu ** (k - 1) * dmu
    q1 = detH_log_derivative(reg, q, None if t is reg.t else t)
    q2 = _spectral_norm(Hinv @ dH)

    ok = ~spec.singular_at(t, m - 1)
    q3 = np.full(t.shape, np.nan)
    q4 = np.full(t.shape, np.nan)
    if np.any(ok):
        blk, calL = reduced.parts(t[ok], xi)
        Hc = H[ok].astype(complex)
        Hic = Hinv[ok].astype(complex)
        q3[ok] = _antiherm_norm(Hic @ blk @ Hc)
        n = len(t[ok])
        L4 = calL.reshape(n, m, m, m, m)
        conj = np.einsum("nab,nIbJc,ncd->nIaJd", Hic, L4, Hc).reshape(n, m * m, m * m)
        q4[ok] = _antiherm_norm(conj)
    return EnergyQuantities(t=t, eps=reg.eps, xi_bracket=float(reg.brackets[q]),
                            q1=q1, q2=q2, q3=q3, q4=q4)


# ---------------------------------------------------------------------------
# scaling fits


def gamma_exponent(alpha, m):
    """``min{1/(1+alpha), 1/(alpha m)}``."""
    return min(1.0 / (1.0 + alpha), 1.0 / (alpha * m))


def _targets(alpha, m):
    return {"q1": -1.0, "q2": -1.0, "q3": alpha, "q4": alpha * (1 - m)}


@dataclass
class QuantityFit:
    name: str
    target: float
    slope: float | None
    intercept: float | None
    constant: float
    margin: float
    passed: bool
    status: str


@dataclass
class ScalingReport:
    alpha: float
    m: int
    eps: list
    sup: dict
    fits: dict
    samples: list = field(default_factory=list)

    def constants(self):
        return {k: f.constant for k, f in self.fits.items()}

    def to_dict(self):
        return {
            "alpha": self.alpha,
            "m": self.m,
            "eps": list(self.eps),
            "fits": {k: asdict(v) for k, v in self.fits.items()},
        }


def _normalized(name, value, eps, xb, alpha, m):
    """``q / bound-shape`` so that the envelope constant is a sup of this ratio."""
    if name in ("q1", "q2"):
        return value * eps
    if name == "q3":
        return value / (eps**alpha * xb)
    return value * eps ** (alpha * (m - 1))


def fit_scaling(eps, sup, alpha, m, margin=0.15, envelope=None, floor=1e-10):
    """Least-squares log-log slope of each quantity's t-sup against ``eps``.

    ``sup[name]`` holds the t-sup per ``eps``; ``q3`` is fitted after
    dividing by ``<xi>`` (the caller passes it already divided).  Pass means
    ``slope >= target - margin``; sups at or below ``floor`` count as zero.
    """
    eps = np.asarray(eps, dtype=float)
    if len(eps) < 5:
        raise ValueError("need at least 5 eps samples")
    targets = _targets(alpha, m)
    fits = {}
    for name, target in targets.items():
        y = np.asarray(sup[name], dtype=float)
        const = float(envelope[name]) if envelope else float("nan")
        if np.all(y <= floor):
            fits[name] = QuantityFit(name, target, None, None, 0.0, margin, True,
                                     "identically better than bound")
            continue
        good = y > 0
        slope, icpt = np.polyfit(np.log(eps[good]), np.log(y[good]), 1)
        fits[name] = QuantityFit(name, target, float(slope), float(np.exp(icpt)), const,
                                 margin, bool(slope >= target - margin), "fitted")
    return ScalingReport(alpha=alpha, m=m, eps=list(map(float, eps)),
                         sup={k: list(map(float, v)) for k, v in sup.items()}, fits=fits)


def scan_scaling(field_fit, reduced, eps_list, alpha, operating=None, q=0):
    """Sweep ``eps`` at the frequency ``field_fit.xis[q]`` and fit the slopes.

    ``operating`` is an optional list of ``(field, eps)`` pairs (one
    frequency each) whose quantities enter the envelope constants only.
    Returns ``(report, rows)`` where ``rows`` are per-sample records.
    """
    from .eigen import mollify

    m = reduced.m
    names = ("q1", "q2", "q3", "q4")
    sup = {k: [] for k in names}
    env = {k: 0.0 for k in names}
    rows = []

    def absorb(eq, record_sup):
        xb = eq.xi_bracket
        for k in names:
            v = getattr(eq, k)
            top = float(np.nanmax(v)) if np.any(np.isfinite(v)) else 0.0
            if record_sup:
                sup[k].append(top / xb if k == "q3" else top)
            env[k] = max(env[k], _normalized(k, top, eq.eps, xb, alpha, m))
        for i in range(len(eq.t)):
            rows.append((float(eq.t[i]), float(np.sqrt(xb * xb - 1.0)), float(eq.eps),
                         float(eq.q1[i]), float(eq.q2[i]), float(eq.q3[i]), float(eq.q4[i])))

    for eps in eps_list:
        reg = mollify(field_fit, eps, alpha)
        absorb(energy_quantities(reg, reduced, q=q), True)
    for fld, eps in operating or ():
        reg = mollify(fld, eps, alpha)
        absorb(energy_quantities(reg, reduced, q=0), False)
    report = fit_scaling(eps_list, sup, alpha, m, envelope=env)
    return report, rows


# ---------------------------------------------------------------------------
# weight plan


@dataclass
class WeightPlan:
    gamma: float
    s: float
    rho0: float
    kappa: float
    Xi0: float
    C: float
    T: float
    rho_positive: bool

    def rho(self, t):
        return self.rho0 - self.kappa * np.asarray(t, dtype=float)

    def eps_at(self, xb):
        return np.asarray(xb, dtype=float) ** (-self.gamma)

    def to_dict(self):
        return {"gamma": self.gamma, "s": self.s, "rho0": self.rho0, "kappa": self.kappa,
                "Xi0": self.Xi0, "C": self.C}


def combined_constant(constants):
    """``C = C1 + C2 + C3`` with ``C1 = 2(c1 + c2)``, ``C2 = c3``, ``C3 = c4``."""
    return 2.0 * (constants["q1"] + constants["q2"]) + constants["q3"] + constants["q4"]


def plan_weight(s, scaling, radii, alpha, m, T, rho0=1.0, strict=False):
    """Plan ``rho(t) = rho0 - kappa t`` so that ``2 kappa <xi>^(1/s)`` dominates
    ``C <xi>^(1-gamma alpha)`` on grid radii ``>= Xi0``.

    ``Xi0`` is the smallest grid radius at which ``kappa T < rho0``; when no
    radius achieves it the first radius is used and ``rho_positive`` is False
    (``strict`` raises instead).
    """
    gamma = gamma_exponent(alpha, m)
    if not 1.0 / s > 1.0 - gamma * alpha:
        raise InadmissibleError(
            f"inadmissible s={s}: need 1/s > 1 - gamma*alpha = {1 - gamma * alpha:.6g}"
        )
    constants = scaling.constants() if isinstance(scaling, ScalingReport) else dict(scaling)
    C = combined_constant(constants)
    radii = np.sort(np.asarray(radii, dtype=float))
    xb = bracket(radii[:, None])
    expo = 1.0 - gamma * alpha - 1.0 / s
    vals = C * xb**expo
    # suffix max: kappa if the cutoff sits at radius i
    kappas = 0.5 * np.maximum.accumulate(vals[::-1])[::-1]
    ok = np.nonzero(kappas * T < rho0)[0]
    if len(ok):
        i = int(ok[0])
        positive = True
    else:
        if strict:
            raise InadmissibleError(
                f"kappa*T >= rho0 on every grid cutoff (min kappa={kappas.min():.4g}, "
                f"T={T}, rho0={rho0})"
            )
        i = 0
        positive = False
    return WeightPlan(gamma=gamma, s=float(s), rho0=float(rho0), kappa=float(kappas[i]),
                      Xi0=float(radii[i]), C=float(C), T=float(T), rho_positive=positive)


def thresholds(alpha, m):
    """``(s_star, s_yuzawa)``; ``1/(m-1)`` is ``+inf`` for ``m = 1``."""
    inv = math.inf if m == 1 else 1.0 / (m - 1)
    return 1.0 + min(alpha, inv), 1.0 + alpha / m
