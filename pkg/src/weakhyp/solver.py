"""Per-frequency integration, initial lift, W-transform, Gevrey data and decay fits."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import RK45
from scipy.stats import norm, qmc

from .energy import _nodes, lagrange_inverse, vandermonde_block, vandermonde_det
from .symbols import bracket, eval_system

__all__ = [
    "DecayFit",
    "EnergyCheck",
    "FrequencyGrid",
    "GevreyData",
    "InsufficientDataError",
    "ModeTrajectory",
    "StepUnderflowError",
    "check_energy",
    "energy_rate",
    "fit_decay",
    "integrate_linear",
    "inverse_w_transform",
    "lift_initial",
    "log_norm",
    "max_ratio",
    "original_matrix",
    "reduced_matrix",
    "solve_original",
    "solve_reduced",
    "synthesize_gevrey",
    "w_transform",
]

LOG_SPLIT = 600.0


class StepUnderflowError(RuntimeError):
    def __init__(self, t, h, stiffness):
        super().__init__(f"step size {h:.3e} underflowed at t={t:.17g} "
                         f"(|M(t)| = {stiffness:.3e})")
        self.t = t
        self.h = h
        self.stiffness = stiffness


class InsufficientDataError(ValueError):
    pass


# ---------------------------------------------------------------------------
# grid


def _directions(n, count):
    if n == 1:
        return np.array([[1.0], [-1.0]])
    pts = qmc.Halton(d=n, scramble=False).random(count + 1)[1:]
    v = norm.ppf(np.clip(pts, 1e-12, 1 - 1e-12))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


@dataclass(frozen=True)
class FrequencyGrid:
    radii: np.ndarray
    directions: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.radii, dtype=float)
        if r.ndim != 1 or len(r) == 0 or np.any(np.diff(r) <= 0):
            raise ValueError("radii must be strictly increasing")
        d = np.atleast_2d(np.asarray(self.directions, dtype=float))
        if np.any(np.abs(np.linalg.norm(d, axis=1) - 1.0) > 1e-14):
            raise ValueError("directions must be unit vectors")
        object.__setattr__(self, "radii", r)
        object.__setattr__(self, "directions", d)

    @classmethod
    def log_spaced(cls, K=12, n=1, n_dirs=4, base=2.0, k0=0):
        return cls(base ** np.arange(k0, K + 1, dtype=float), _directions(n, n_dirs))

    @property
    def brackets(self):
        return np.sqrt(1.0 + self.radii**2)

    def xi(self, i, d=0):
        return self.radii[i] * self.directions[d]


# ---------------------------------------------------------------------------
# integrator

_C, _A, _B, _E, _P = RK45.C, RK45.A, RK45.B, RK45.E, RK45.P
_SAFETY, _MIN_FACTOR, _MAX_FACTOR = 0.9, 0.2, 10.0


@dataclass
class IntegratorStats:
    steps: int = 0
    rejected: int = 0
    max_error_norm: float = 0.0
    rtol: float = 0.0
    atol: float = 0.0

    def to_dict(self):
        return dict(steps=self.steps, rejected=self.rejected,
                    max_error_norm=self.max_error_norm, rtol=self.rtol, atol=self.atol)


def _stiffness(M):
    return float(np.linalg.norm(M, 2)) if np.all(np.isfinite(M)) else float("nan")


def integrate_linear(matfun, T, y0, t_eval, rtol=1e-9, atol=1e-12, max_step=np.inf):
    """Integrate ``y' = M(t) y`` on ``[0, T]`` with the Dormand-Prince 5(4) pair.

    ``matfun(ts)`` returns the stacked matrices ``M(ts)``; it is called once
    per step with all new stage times.  Returns ``(Y, stats)`` with ``Y``
    sampled at ``t_eval`` by the pair's quartic dense output.
    """
    y = np.asarray(y0, dtype=complex).copy()
    t_eval = np.asarray(t_eval, dtype=float)
    out = np.empty((len(t_eval), len(y)), dtype=complex)
    stats = IntegratorStats(rtol=rtol, atol=atol)
    t = 0.0
    M0 = matfun(np.array([0.0]))[0]
    f = M0 @ y
    scale = atol + rtol * np.abs(y)
    d0, d1 = np.linalg.norm(y / scale), np.linalg.norm(f / scale)
    h = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h = min(h, max_step, T)
    K = np.empty((7, len(y)), dtype=complex)
    k_out = 0
    while k_out < len(t_eval) and t_eval[k_out] <= 0.0:
        out[k_out] = y
        k_out += 1
    while t < T:
        h = min(h, max_step, T - t) if np.isfinite(h) else 0.0
        if h < 10 * np.spacing(max(t, 1.0)):
            raise StepUnderflowError(t, h, _stiffness(M0))
        t_new = T if t + h >= T * (1 - 1e-15) else t + h
        h = t_new - t
        ms = matfun(np.minimum(t + _C[1:] * h, T))
        K[0] = f
        for s in range(1, 6):
            K[s] = ms[s - 1] @ (y + h * (_A[s, :s] @ K[:s]))
        y_new = y + h * (_B @ K[:6])
        K[6] = ms[4] @ y_new
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = float(np.sqrt(np.mean(np.abs(h * (_E @ K) / scale) ** 2)))
        if err > 1.0 or not np.isfinite(err):
            stats.rejected += 1
            h *= max(_MIN_FACTOR, _SAFETY * (err if np.isfinite(err) else 1e10) ** -0.2)
            continue
        stats.steps += 1
        stats.max_error_norm = max(stats.max_error_norm, err)
        if k_out < len(t_eval) and t_eval[k_out] <= t_new:
            Q = K.T @ _P
            while k_out < len(t_eval) and t_eval[k_out] <= t_new:
                x = (t_eval[k_out] - t) / h
                p = np.cumprod(np.full(_P.shape[1], x))
                out[k_out] = y + h * (Q @ p)
                k_out += 1
        t, y, f, M0 = t_new, y_new, K[6].copy(), ms[4]
        factor = _MAX_FACTOR if err == 0 else min(_MAX_FACTOR, _SAFETY * err**-0.2)
        h *= factor
    if not np.all(np.isfinite(out)):
        raise StepUnderflowError(t, h, _stiffness(M0))
    return out, stats


# ---------------------------------------------------------------------------
# trajectories


@dataclass
class ModeTrajectory:
    t: np.ndarray
    xi: np.ndarray
    u: np.ndarray | None = None
    V: np.ndarray | None = None
    W: np.ndarray | None = None
    W_log_scale: np.ndarray | None = None
    stats: dict = field(default_factory=dict)

    @property
    def xi_bracket(self):
        return float(bracket(self.xi))


def original_matrix(spec, xi):
    xi = np.atleast_1d(np.asarray(xi, dtype=float))

    def matfun(ts):
        A, B = eval_system(spec, np.clip(ts, 0.0, spec.T), xi)
        return 1j * (A + B)

    return matfun


def reduced_matrix(reduced, xi):
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    T = reduced.spec.T

    def matfun(ts):
        return 1j * reduced.matrix(np.clip(ts, 0.0, T), xi)

    return matfun


def _max_step(xi):
    return 0.1 / float(bracket(xi))


def solve_original(spec, xi, g0hat, t_eval, rtol=1e-9, atol=1e-12):
    """``d_t u = i(A(t, xi) + B(t)) u`` with ``u(0) = g0hat``."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    Y, st = integrate_linear(original_matrix(spec, xi), spec.T, g0hat, t_eval,
                             rtol=rtol, atol=atol, max_step=_max_step(xi))
    return ModeTrajectory(t=np.asarray(t_eval, dtype=float), xi=xi, u=Y,
                          stats={"original": st.to_dict()})


def solve_reduced(reduced, xi, U0, t_eval, rtol=1e-9, atol=1e-12):
    """``d_t V = i(calA + calL) V`` with ``V(0) = U0``."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    Y, st = integrate_linear(reduced_matrix(reduced, xi), reduced.spec.T, U0, t_eval,
                             rtol=rtol, atol=atol, max_step=_max_step(xi))
    return ModeTrajectory(t=np.asarray(t_eval, dtype=float), xi=xi, V=Y,
                          stats={"reduced": st.to_dict()})


def lift_initial(spec, xi, g0hat):
    """Initial value of the reduced unknown from ``g0hat``.

    ``D_t^k u(0)`` follows from the equation by the Leibniz rule with
    ``D_t = -i d_t``; component ``i*m + j`` is ``<xi>^(m-1-j) D_t^j u_i(0)``.
    """
    m = spec.m
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    g = np.asarray(g0hat, dtype=complex)
    xb = float(bracket(xi))
    order = max(m - 2, 0)
    A, B = spec.jets(0.0, order)
    dP = [(-1j) ** l * (A[l] @ xi + B[l]) for l in range(order + 1)]
    D = [g]
    for k in range(1, m):
        acc = np.zeros(m, dtype=complex)
        for l in range(k):
            acc += math.comb(k - 1, l) * (dP[l] @ D[k - 1 - l])
        D.append(acc)
    U = np.empty(m * m, dtype=complex)
    for i in range(m):
        for j in range(m):
            U[i * m + j] = xb ** (m - 1 - j) * D[j][i]
    return U


# ---------------------------------------------------------------------------
# W-transform


def _symmetrizer(reg, q, t):
    mu, dmu = _nodes(reg, q, None if t is None else t)
    return mu, dmu, vandermonde_block(mu), lagrange_inverse(mu), vandermonde_det(mu)


def _exponent(plan, t, xb):
    return plan.rho(t) * xb ** (1.0 / plan.s)


def w_transform(V, reg, plan, t=None, q=0):
    """``W = e^(rho <xi>^(1/s)) det H  H^{-1} V`` blockwise.

    Returns ``(w, log_scale)`` with ``W = exp(log_scale) * w``; ``log_scale``
    is zero unless the exponent exceeds the split threshold somewhere.
    """
    V = np.asarray(V)
    tt = reg.t if t is None else np.asarray(t, dtype=float)
    xb = float(reg.brackets[q])
    _, _, _, Hinv, det = _symmetrizer(reg, q, t)
    m = Hinv.shape[-1]
    blocks = V.reshape(V.shape[:-1] + (m, m))
    w = np.einsum("...ab,...ib->...ia", Hinv, blocks).reshape(V.shape) * det[..., None]
    E = _exponent(plan, tt, xb)
    if np.max(np.abs(E)) > LOG_SPLIT:
        return w, E
    return w * np.exp(E)[..., None], np.zeros_like(E)


def inverse_w_transform(w, log_scale, reg, plan, t=None, q=0):
    tt = reg.t if t is None else np.asarray(t, dtype=float)
    xb = float(reg.brackets[q])
    _, _, H, _, det = _symmetrizer(reg, q, t)
    m = H.shape[-1]
    blocks = np.asarray(w).reshape(np.shape(w)[:-1] + (m, m))
    v = np.einsum("...ab,...ib->...ia", H, blocks).reshape(np.shape(w)) / det[..., None]
    return v * np.exp(log_scale - _exponent(plan, tt, xb))[..., None]


def log_norm(w, log_scale):
    return np.log(np.linalg.norm(w, axis=-1)) + log_scale


def energy_rate(w, log_scale, reg, plan, reduced, t=None, q=0):
    """``d_t |W|^2`` from the right-hand side of the transformed equation.

    Returned as ``rate / |W|^2``, which is scale free.
    """
    tt = reg.t if t is None else np.asarray(t, dtype=float)
    xb = float(reg.brackets[q])
    mu, dmu, H, Hinv, _ = _symmetrizer(reg, q, t)
    m = H.shape[-1]
    dH = np.zeros_like(H)
    for k in range(1, m):
        dH[..., k, :] = k * mu ** (k - 1) * dmu
    K = Hinv @ dH
    ell = np.zeros(mu.shape[:-1])
    for j in range(1, m):
        for i in range(j):
            ell = ell + (dmu[..., j] - dmu[..., i]) / (mu[..., j] - mu[..., i])
    xi = reg.field.xis[q]
    Mfull = reduced.matrix(tt, xi)
    Hf = np.zeros(Mfull.shape, dtype=complex)
    Hif = np.zeros(Mfull.shape, dtype=complex)
    Kf = np.zeros(Mfull.shape, dtype=complex)
    for i in range(m):
        sl = slice(i * m, (i + 1) * m)
        Hf[..., sl, sl] = H
        Hif[..., sl, sl] = Hinv
        Kf[..., sl, sl] = K
    Mc = Hif @ Mfull @ Hf
    drho = -plan.kappa * xb ** (1.0 / plan.s)
    dw = ((drho + ell)[..., None] * w - np.einsum("...ab,...b->...a", Kf, w)
          + 1j * np.einsum("...ab,...b->...a", Mc, w))
    nrm2 = np.sum(np.abs(w) ** 2, axis=-1)
    return 2.0 * np.real(np.sum(dw * np.conj(w), axis=-1)) / nrm2


@dataclass
class EnergyCheck:
    radii: list
    ratios: list
    included: list
    passed: bool
    tol: float
    Xi0: float

    def to_dict(self):
        return dict(radii=self.radii, ratios=self.ratios, included=self.included,
                    passed=self.passed, tol=self.tol, Xi0=self.Xi0)


def max_ratio(w, log_scale):
    ln = log_norm(w, log_scale)
    return float(np.exp(np.max(ln - ln[0])))


def check_energy(entries, Xi0, tol=1e-8):
    """``entries`` is a list of ``(radius, w, log_scale)``; radii below ``Xi0`` are
    reported but excluded from pass/fail."""
    radii, ratios, inc = [], [], []
    ok = True
    for r, w, ls in entries:
        ratio = max_ratio(w, ls)
        radii.append(float(r))
        ratios.append(ratio)
        take = r >= Xi0
        inc.append(bool(take))
        if take and not ratio <= 1.0 + tol:
            ok = False
    return EnergyCheck(radii=radii, ratios=ratios, included=inc, passed=ok, tol=tol,
                       Xi0=float(Xi0))


# ---------------------------------------------------------------------------
# Gevrey data and decay fits


@dataclass(frozen=True)
class GevreyData:
    s0: float
    delta0: float
    brackets: np.ndarray
    log_amplitude: np.ndarray
    phases: np.ndarray
    mask: np.ndarray

    @property
    def amplitude(self):
        return np.exp(self.log_amplitude)

    def unit_vector(self, i, d=0):
        """Direction of ``g0hat`` at grid point ``(i, d)``; norm one."""
        v = self.mask * np.exp(1j * self.phases[i, d])
        return v / np.linalg.norm(v)

    def g0hat(self, i, d=0):
        return self.amplitude[i] * self.unit_vector(i, d)


def synthesize_gevrey(s0, delta0, grid, m, phase_seed=None, mask=None):
    """Amplitude ``exp(-delta0 <xi>^(1/s0))``; zero phases unless seeded."""
    if not s0 > 1 or not np.isfinite(s0):
        raise ValueError("s0 must be a finite number > 1")
    if not delta0 > 0:
        raise ValueError("delta0 must be positive")
    xb = grid.brackets
    shape = (len(xb), len(grid.directions), m)
    if phase_seed is None:
        ph = np.zeros(shape)
    else:
        ph = np.random.default_rng(phase_seed).uniform(0.0, 2 * np.pi, shape)
    mk = np.ones(m) if mask is None else np.asarray(mask, dtype=float)
    if not np.any(mk):
        raise ValueError("component mask selects nothing")
    return GevreyData(s0=float(s0), delta0=float(delta0), brackets=xb,
                      log_amplitude=-delta0 * xb ** (1.0 / s0), phases=ph, mask=mk)


@dataclass
class DecayFit:
    delta: float | None
    intercept: float | None
    residual: float | None
    s: float
    Xi0: float
    n_points: int
    passed: bool
    status: str
    corrected_delta: float | None = None
    corrected_residual: float | None = None
    log_power: float = 0.0

    def to_dict(self):
        return {"delta": self.delta, "s": self.s, "residual": self.residual,
                "Xi0": self.Xi0, "n_points": self.n_points, "intercept": self.intercept,
                "corrected_delta": self.corrected_delta,
                "corrected_residual": self.corrected_residual,
                "log_power": self.log_power, "passed": self.passed, "status": self.status}


def _linfit(x, y):
    X = np.stack([x, np.ones_like(x)], axis=1)
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    res = float(np.linalg.norm(y - X @ coef) / np.linalg.norm(y))
    return float(coef[0]), float(coef[1]), res


def fit_decay(radii, log_abs_v, s, Xi0, log_power=0.0, floor=1e-300, min_points=6,
              max_residual=0.05):
    """Regress ``-log|V(T, xi)|`` on ``<xi>^(1/s)`` over radii ``>= Xi0``.

    ``log_power`` is the exponent of the polynomial factor removed in the
    corrected model ``-log|V| - p log<xi> = delta <xi>^(1/s) + c``.
    """
    radii = np.asarray(radii, dtype=float)
    y = -np.asarray(log_abs_v, dtype=float)
    sel = radii >= Xi0
    n = int(sel.sum())
    if n < min_points:
        raise InsufficientDataError(f"need {min_points} radii >= Xi0={Xi0}, have {n}")
    if np.all(y[sel] > -math.log(floor)):
        return DecayFit(None, None, None, float(s), float(Xi0), n, False, "fully decayed",
                        log_power=log_power)
    xb = bracket(radii[sel, None])
    x = xb ** (1.0 / s)
    delta, icpt, res = _linfit(x, y[sel])
    cd, _, cres = _linfit(x, y[sel] + log_power * np.log(xb))
    ok = delta > 0 and res <= max_residual
    return DecayFit(delta, icpt, res, float(s), float(Xi0), n, bool(ok), "fitted",
                    corrected_delta=cd, corrected_residual=cres, log_power=float(log_power))
