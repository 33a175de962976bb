"""Ordered real eigenvalues, regularity checks and mollified separated eigenvalues."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import integrate

from .symbols import CharPoly, bracket

__all__ = [
    "EigenField",
    "HyperbolicityError",
    "Mollifier",
    "PropertyReport",
    "RegularizedEigenField",
    "UniformityReport",
    "companion_roots",
    "compute_eigenvalues",
    "estimate_holder",
    "check_uniform_property",
    "mollify",
    "verify_prop_roots",
]


class HyperbolicityError(ValueError):
    def __init__(self, t, xi, imag):
        super().__init__(f"non-real root |Im| = {imag:.3e} at t={t}, xi={list(xi)}")
        self.t = t
        self.xi = xi
        self.imag = imag


def companion_roots(b):
    """Roots of ``tau^m + b_1 tau^(m-1) + ... + b_m`` via companion eigensolve."""
    b = np.asarray(b)
    m = b.shape[-1]
    comp = np.zeros(b.shape[:-1] + (m, m), dtype=b.dtype)
    for r in range(m - 1):
        comp[..., r, r + 1] = 1.0
    comp[..., m - 1, :] = -b[..., ::-1]
    return np.linalg.eigvals(comp)


@dataclass(frozen=True)
class EigenField:
    """Sorted real eigenvalues ``values[q, i, j] = lambda_j(t_i, xi_q)``."""

    t: np.ndarray
    xis: np.ndarray
    values: np.ndarray
    tol: float

    @property
    def m(self):
        return self.values.shape[-1]

    @property
    def brackets(self):
        return bracket(self.xis)


def compute_eigenvalues(charpoly, t, xis, tol=1e-8):
    """Eigenvalues of ``A(t, xi)`` on a time grid for each frequency in ``xis``."""
    t = np.asarray(t, dtype=float)
    xis = np.atleast_2d(np.asarray(xis, dtype=float))
    out = np.empty((len(xis), len(t), charpoly.spec.m))
    for q, xi in enumerate(xis):
        roots = companion_roots(charpoly.coefficients(t, xi))
        imag = np.abs(roots.imag)
        bound = tol * (1.0 + np.linalg.norm(xi))
        if np.any(imag > bound):
            i = int(np.argmax(imag.max(axis=-1)))
            raise HyperbolicityError(float(t[i]), xi, float(imag[i].max()))
        out[q] = np.sort(roots.real, axis=-1)
    return EigenField(t=t, xis=xis, values=out, tol=tol)


def estimate_holder(field, alpha, chunk=512):
    """Discrete Hölder seminorm ``max |l(t)-l(s)| / |t-s|^alpha``, shape ``(n_xi, m)``."""
    t = field.t
    if len(t) < 3:
        raise ValueError("need at least 3 grid points")
    n = len(t)
    best = np.zeros(field.values.shape[0::2])
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        dt = np.abs(t[start:stop, None] - t[None, :])
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.where(dt > 0, dt ** (-alpha), 0.0)
        for q in range(field.values.shape[0]):
            lam = field.values[q]
            diff = np.abs(lam[start:stop, None, :] - lam[None, :, :])
            best[q] = np.maximum(best[q], (diff * w[..., None]).max(axis=(0, 1)))
    return best


@dataclass(frozen=True)
class UniformityReport:
    c: float
    witness: tuple | None
    passed: bool
    cap: float
    failure: str | None = None


def check_uniform_property(field, cap=100.0, zero_tol=0.0):
    """Best constant in ``|l_i - l_j| <= c |l_k - l_{k-1}|`` over the sampled grid.

    Ratios ``0/0`` are skipped; ``x/0`` with ``x > 0`` fails with a witness
    ``(i, j, k, t, xi)`` (1-based eigenvalue indices).
    """
    m = field.m
    if m < 2:
        return UniformityReport(c=0.0, witness=None, passed=True, cap=cap)
    lam = field.values
    spread = lam[..., -1] - lam[..., 0]
    gaps = np.diff(lam, axis=-1)
    kmin = np.argmin(gaps, axis=-1)
    gmin = np.take_along_axis(gaps, kmin[..., None], axis=-1)[..., 0]
    scale = zero_tol * (1.0 + np.linalg.norm(field.xis, axis=-1))[:, None]
    zero_gap = gmin <= scale
    zero_spread = spread <= scale
    bad = zero_gap & ~zero_spread
    if np.any(bad):
        q, i = np.argwhere(bad)[0]
        wit = (m, 1, int(kmin[q, i]) + 2, float(field.t[i]), tuple(field.xis[q]))
        return UniformityReport(c=float("inf"), witness=wit, passed=False, cap=cap,
                                failure="positive spread over a vanishing gap")
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(zero_gap, 0.0, spread / np.where(zero_gap, 1.0, gmin))
    q, i = np.unravel_index(np.argmax(ratio), ratio.shape)
    c = float(ratio[q, i])
    wit = (m, 1, int(kmin[q, i]) + 2, float(field.t[i]), tuple(field.xis[q]))
    return UniformityReport(c=c, witness=wit, passed=c <= cap, cap=cap)


# ---------------------------------------------------------------------------
# mollifier


def _bump(x):
    x = np.asarray(x, dtype=float)
    inside = np.abs(x) < 1.0
    y = np.where(inside, 1.0 - x * x, 1.0)
    return np.where(inside, np.exp(-1.0 / y), 0.0)


def _bump_prime(x):
    x = np.asarray(x, dtype=float)
    inside = np.abs(x) < 1.0
    y = np.where(inside, 1.0 - x * x, 1.0)
    return np.where(inside, np.exp(-1.0 / y) * (-2.0 * x / (y * y)), 0.0)


_BUMP_MASS = integrate.quad(lambda x: float(_bump(x)), -1.0, 1.0,
                            epsabs=1e-14, epsrel=1e-13, limit=200)[0]


@dataclass(frozen=True)
class Mollifier:
    """Normalized bump ``c exp(-1/(1-x^2))`` rescaled to ``phi_eps``."""

    eps: float

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")

    @staticmethod
    def profile(x):
        return _bump(x) / _BUMP_MASS

    def phi(self, s):
        return _bump(np.asarray(s) / self.eps) / (_BUMP_MASS * self.eps)

    def dphi(self, s):
        return _bump_prime(np.asarray(s) / self.eps) / (_BUMP_MASS * self.eps**2)

    def mass(self):
        return integrate.quad(lambda s: float(self.phi(s)), -self.eps, self.eps,
                              epsabs=1e-14, epsrel=1e-13, limit=200)[0]


def _mollified_on_grid(t_src, lam, eps):
    # on the sample grid itself the kernel weights do not depend on the point
    from scipy.signal import oaconvolve

    h = t_src[1] - t_src[0]
    pad = int(np.ceil(eps / h)) + 1
    lam_pad = np.concatenate([np.repeat(lam[:1], pad, axis=0), lam,
                              np.repeat(lam[-1:], pad, axis=0)], axis=0)
    offs = h * np.arange(-pad, pad + 1)
    mol = Mollifier(eps)
    w = mol.phi(offs)
    dw = mol.dphi(offs)
    sw, sdw = w.sum(), dw.sum()
    flat = lam_pad.reshape(len(lam_pad), -1)
    g = oaconvolve(flat, w[:, None], mode="valid", axes=0) / sw
    num = oaconvolve(flat, dw[:, None], mode="valid", axes=0)
    d = (num - g * sdw) / sw
    return g.reshape(lam.shape), d.reshape(lam.shape)


def _mollified(t_src, lam, eps, t_eval):
    """Normalized-kernel convolution of grid samples and its exact t-derivative.

    ``lam`` has the grid on axis 0 (further axes broadcast).  Values outside
    ``[t_src[0], t_src[-1]]`` are the end values (constant extension).
    """
    t_eval = np.asarray(t_eval, dtype=float)
    if t_eval.shape == t_src.shape and np.array_equal(t_eval, t_src):
        return _mollified_on_grid(t_src, lam, eps)
    h = t_src[1] - t_src[0]
    pad = int(np.ceil(eps / h)) + 1
    t_pad = t_src[0] + h * np.arange(-pad, len(t_src) + pad)
    lam_pad = np.concatenate([np.repeat(lam[:1], pad, axis=0), lam,
                              np.repeat(lam[-1:], pad, axis=0)], axis=0)
    width = 2 * pad + 1
    t_eval = np.asarray(t_eval, dtype=float)
    flat = t_eval.ravel()
    mol = Mollifier(eps)
    vals = np.empty((flat.size,) + lam.shape[1:])
    ders = np.empty_like(vals)
    chunk = max(1, 2_000_000 // width)
    for a in range(0, flat.size, chunk):
        te = flat[a:a + chunk]
        start = np.floor((te - t_pad[0]) / h).astype(int) - pad
        idx = start[:, None] + np.arange(width)[None, :]
        idx = np.clip(idx, 0, len(t_pad) - 1)
        d = te[:, None] - t_pad[idx]
        w = mol.phi(d)
        dw = mol.dphi(d)
        sw = w.sum(axis=1)
        sdw = dw.sum(axis=1)
        samples = lam_pad[idx]
        extra = (1,) * (lam.ndim - 1)
        g = np.einsum("ek,ek...->e...", w, samples) / sw.reshape((-1,) + extra)
        num = np.einsum("ek,ek...->e...", dw, samples)
        vals[a:a + chunk] = g
        ders[a:a + chunk] = (num - g * sdw.reshape((-1,) + extra)) / sw.reshape((-1,) + extra)
    shape = t_eval.shape + lam.shape[1:]
    return vals.reshape(shape), ders.reshape(shape)


class RegularizedEigenField:
    """``lambda_{j,eps} = (lambda_j * phi_eps) + j eps^alpha <xi>`` on the field's grid.

    ``at(t)`` evaluates the same smooth function at arbitrary times.
    """

    def __init__(self, field, eps, alpha):
        self.field = field
        self.eps = float(eps)
        self.alpha = float(alpha)
        self.t = field.t
        self.brackets = field.brackets
        m = field.m
        self.shift = (np.arange(1, m + 1)[None, :] * self.eps**self.alpha
                      * self.brackets[:, None])

    @cached_property
    def _grid(self):
        return self.at(self.t)

    @property
    def values(self):
        """``(n_xi, N_t, m)``"""
        return self._grid[0]

    @property
    def derivatives(self):
        return self._grid[1]

    def at(self, t):
        """Values and t-derivatives at times ``t``; shape ``(n_xi, *t.shape, m)``."""
        lam = np.moveaxis(self.field.values, 1, 0)
        v, d = _mollified(self.field.t, lam, self.eps, t)
        v = np.moveaxis(v, -2, 0)
        d = np.moveaxis(d, -2, 0)
        shift = self.shift.reshape(self.shift.shape[:1] + (1,) * (v.ndim - 2) + self.shift.shape[1:])
        return v + shift, d


def mollify(field, eps, alpha):
    """Mollify and separate the eigenvalues of ``field``."""
    h = field.t[1] - field.t[0]
    if eps < 4 * h:
        raise ValueError(f"eps={eps} is below 4 grid spacings (h={h}); mollifier under-resolved")
    return RegularizedEigenField(field, eps, alpha)


@dataclass(frozen=True)
class PropertyReport:
    c_i: float
    c_ii: float
    separated: bool
    min_separation_ratio: float
    mixed_form_separated: bool
    t_max: float


def verify_prop_roots(reg, field=None, t_max=None, rtol=1e-12):
    """Empirical constants of the three regularization properties on ``[0, t_max]``.

    ``c_i = sup |d_t l_eps| / (eps^(alpha-1) <xi>)``,
    ``c_ii = sup |l_eps - l| / (eps^alpha <xi>)``; separation checks
    ``l_{j,eps} - l_{i,eps} >= eps^alpha <xi>`` for ``j > i`` (up to ``rtol``).
    """
    field = field or reg.field
    if t_max is None:
        t_max = field.t[-1]
    mask = field.t <= t_max
    eps, a = reg.eps, reg.alpha
    xb = reg.brackets[:, None, None]
    lam = field.values[:, mask]
    le = reg.values[:, mask]
    dle = reg.derivatives[:, mask]
    c_i = float(np.max(np.abs(dle) / (eps ** (a - 1) * xb)))
    c_ii = float(np.max(np.abs(le - lam) / (eps**a * xb)))
    unit = eps**a * reg.brackets[:, None]
    m = field.m
    ratio = np.inf
    mixed = True
    for j in range(1, m):
        for i in range(j):
            r = np.min((le[..., j] - le[..., i]) / unit)
            ratio = min(ratio, float(r))
            mixed &= bool(np.all(le[..., j] - lam[..., i] >= unit * (1 - rtol)))
    return PropertyReport(c_i=c_i, c_ii=c_ii, separated=ratio >= 1 - rtol,
                          min_separation_ratio=ratio, mixed_form_separated=mixed,
                          t_max=float(t_max))
