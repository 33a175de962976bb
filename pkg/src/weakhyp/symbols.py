"""Matrix symbols, characteristic polynomial, adjugate and block Sylvester reduction.

All array routines accept arbitrary leading batch dimensions, so a whole
time grid can be pushed through in one call.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .expr import CoeffExpr, SingularPointError, parse_coeff_expr

__all__ = [
    "CharPoly",
    "ReducedSystem",
    "SystemSpec",
    "TauPolyMatrix",
    "adjugate_symbol",
    "bracket",
    "char_poly",
    "dt_derivative",
    "eval_system",
    "faddeev_leverrier",
    "load_system",
    "lower_order_matrix",
    "to_block_sylvester",
]


def bracket(xi):
    """Japanese bracket ``(1 + |xi|^2)^(1/2)``; ``xi`` has its components last."""
    xi = np.asarray(xi, dtype=float)
    return np.sqrt(1.0 + np.sum(xi * xi, axis=-1))


# ---------------------------------------------------------------------------
# system specification


def _as_expr(x):
    return x if isinstance(x, CoeffExpr) else parse_coeff_expr(x)


def _parse_at(e, path):
    try:
        return _as_expr(e)
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None


@dataclass(frozen=True)
class SystemSpec:
    """First order system ``D_t u - A(t, D_x) u - B(t) u = 0``.

    ``A_coeffs[i][j][k]`` is the coefficient of ``xi_k`` in ``A_ij``;
    ``B_coeffs[i][j]`` is the zero order term.
    """

    m: int
    n: int
    T: float
    alpha: float
    A_coeffs: tuple
    B_coeffs: tuple
    _const: tuple = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ValueError("m and n must be >= 1")
        if not self.T > 0:
            raise ValueError("T must be positive")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        A = tuple(
            tuple(tuple(_as_expr(self.A_coeffs[i][j][k]) for k in range(self.n))
                  for j in range(self.m))
            for i in range(self.m)
        )
        B = tuple(
            tuple(_as_expr(self.B_coeffs[i][j]) for j in range(self.m))
            for i in range(self.m)
        )
        object.__setattr__(self, "A_coeffs", A)
        object.__setattr__(self, "B_coeffs", B)

    @classmethod
    def from_strings(cls, m, n, T, alpha, A, B=None):
        if B is None:
            B = [["0"] * m for _ in range(m)]
        if n == 1 and isinstance(A[0][0], (str, int, float, CoeffExpr)):
            A = [[[a] for a in row] for row in A]
        return cls(m=m, n=n, T=float(T), alpha=float(alpha), A_coeffs=A, B_coeffs=B)

    def _entries(self):
        for row in self.A_coeffs:
            for cell in row:
                yield from cell
        for row in self.B_coeffs:
            yield from row

    def kink_order(self):
        """Smallest t-derivative order that fails at ``t = 0`` (``inf`` if none)."""
        return min(e.kink_order() for e in self._entries())

    def singular_at(self, t, order):
        t = np.asarray(t, dtype=float)
        return (t == 0.0) & (order >= self.kink_order())

    def a_is_constant(self):
        return all(e.is_constant() for row in self.A_coeffs for cell in row for e in cell)

    def b_is_zero(self):
        return all(e.is_constant() and e(0.0) == 0.0 for row in self.B_coeffs for e in row)

    def jets(self, t, order):
        """Derivatives ``d^k/dt^k`` of the coefficient arrays for ``k <= order``.

        Returns ``(A_jet, B_jet)`` with shapes ``(order+1, *t.shape, m, m, n)``
        and ``(order+1, *t.shape, m, m)``.
        """
        m, n = self.m, self.n
        tshape = np.shape(t)
        A = np.empty((order + 1,) + tshape + (m, m, n))
        B = np.empty((order + 1,) + tshape + (m, m))
        fac = [math.factorial(k) for k in range(order + 1)]
        for i in range(m):
            for j in range(m):
                for k in range(n):
                    jet = self.A_coeffs[i][j][k].taylor(t, order)
                    for r in range(order + 1):
                        A[(r,) + (Ellipsis, i, j, k)] = jet[r] * fac[r]
                jet = self.B_coeffs[i][j].taylor(t, order)
                for r in range(order + 1):
                    B[(r,) + (Ellipsis, i, j)] = jet[r] * fac[r]
        return A, B

    def to_dict(self):
        return {
            "m": self.m,
            "n": self.n,
            "T": self.T,
            "alpha": self.alpha,
            "A": [[[e.to_text() for e in cell] for cell in row] for row in self.A_coeffs],
            "B": [[e.to_text() for e in row] for row in self.B_coeffs],
        }

    @classmethod
    def from_dict(cls, d, path="system"):
        if not isinstance(d, dict):
            raise ValueError(f"{path}: expected a mapping")
        try:
            m, n = int(d["m"]), int(d.get("n", 1))
            T, alpha = float(d["T"]), float(d["alpha"])
            A = d["A"]
            B = d.get("B") or [["0"] * m for _ in range(m)]
        except KeyError as exc:
            raise ValueError(f"{path}: missing field {exc.args[0]!r}") from None
        except (TypeError, ValueError) as exc:
            raise ValueError(f"{path}: {exc}") from None
        if len(A) != m or any(len(row) != m for row in A):
            raise ValueError(f"{path}.A: expected {m}x{m} entries")
        if len(B) != m or any(len(row) != m for row in B):
            raise ValueError(f"{path}.B: expected {m}x{m} entries")
        A = [[list(cell) if isinstance(cell, (list, tuple)) else [cell] for cell in row]
             for row in A]
        for i, row in enumerate(A):
            for j, cell in enumerate(row):
                if len(cell) != n:
                    raise ValueError(f"{path}.A[{i}][{j}]: expected {n} coefficients")
                row[j] = [_parse_at(e, f"{path}.A[{i}][{j}][{k}]") for k, e in enumerate(cell)]
        B = [[_parse_at(e, f"{path}.B[{i}][{j}]") for j, e in enumerate(row)]
             for i, row in enumerate(B)]
        try:
            return cls(m=m, n=n, T=T, alpha=alpha, A_coeffs=A, B_coeffs=B)
        except ValueError as exc:
            raise ValueError(f"{path}: {exc}") from None

    def to_json(self):
        """Canonical encoding: sorted-key JSON with canonical expression text."""
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def load_system(path):
    """Read a system spec from canonical JSON or interchange YAML."""
    text = Path(path).read_text()
    if str(path).endswith((".yaml", ".yml")):
        import yaml

        data = yaml.safe_load(text)
    else:
        data = json.loads(text)
    return SystemSpec.from_dict(data.get("system", data))


def _check_time(spec, t):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t > spec.T):
        raise ValueError(f"t outside [0, {spec.T}]")


def eval_system(spec, t, xi):
    """``A(t, xi)`` and ``B(t)`` as real ``m x m`` arrays."""
    _check_time(spec, t)
    A, B = spec.jets(t, 0)
    return A[0] @ np.asarray(xi, dtype=float), B[0]


def dt_derivative(spec, which, k, t, xi):
    """Exact ``k``-th t-derivative of ``A(t, xi)`` or ``B(t)``.

    Raises :class:`~weakhyp.expr.SingularPointError` at an ``abs(t)^p`` kink
    with ``p <= k``.
    """
    if k > max(spec.m - 1, 0):
        raise ValueError(f"derivative order {k} exceeds m-1 = {spec.m - 1}")
    _check_time(spec, t)
    A, B = spec.jets(t, k)
    if which == "A":
        return A[k] @ np.asarray(xi, dtype=float)
    if which == "B":
        return B[k]
    raise ValueError("which must be 'A' or 'B'")


# ---------------------------------------------------------------------------
# characteristic polynomial and adjugate


def faddeev_leverrier(A):
    """Faddeev-LeVerrier recursion.

    Returns ``(b, M)`` where ``b[..., h-1] = b_h`` so that
    ``det(tau I - A) = tau^m + b_1 tau^(m-1) + ... + b_m`` and ``M[k-1]``
    (``k = 1..m``) are the matrices with
    ``adj(tau I - A) = sum_k M_k tau^(m-k)``.
    """
    A = np.asarray(A)
    m = A.shape[-1]
    eye = np.broadcast_to(np.eye(m, dtype=A.dtype), A.shape)
    b = np.empty(A.shape[:-2] + (m,), dtype=A.dtype)
    M = np.empty((m,) + A.shape, dtype=A.dtype)
    Mk = eye.copy()
    for k in range(1, m + 1):
        if k > 1:
            Mk = A @ Mk + b[..., k - 2, None, None] * eye
        M[k - 1] = Mk
        AM = A @ Mk
        b[..., k - 1] = -np.trace(AM, axis1=-2, axis2=-1) / k
    return b, M


def char_poly(A):
    """Coefficients ``(b_1, ..., b_m)`` of ``det(tau I - A)``."""
    return faddeev_leverrier(A)[0]


@dataclass(frozen=True)
class TauPolyMatrix:
    """``m x m`` matrix polynomial in ``tau``; ``coeffs[r]`` multiplies ``tau^r``."""

    coeffs: np.ndarray

    @property
    def degree(self):
        return self.coeffs.shape[0] - 1

    def __call__(self, tau):
        out = np.zeros(self.coeffs.shape[1:], dtype=complex)
        for c in self.coeffs[::-1]:
            out = out * tau + c
        return out

    def dtau(self, k=1):
        """``k``-th tau-derivative."""
        d = self.degree
        if k > d:
            return TauPolyMatrix(np.zeros((1,) + self.coeffs.shape[1:], dtype=self.coeffs.dtype))
        new = np.array([
            self.coeffs[r + k] * (math.factorial(r + k) / math.factorial(r))
            for r in range(d - k + 1)
        ])
        return TauPolyMatrix(new)

    def __matmul__(self, other):
        other = np.asarray(other)
        return TauPolyMatrix(self.coeffs @ other)


def adjugate_coeffs(A):
    """``L[r]`` with ``adj(tau I - A) = sum_r L[r] tau^r`` (``r = 0..m-1``)."""
    _, M = faddeev_leverrier(A)
    return M[::-1]


def adjugate_symbol(spec, t, xi):
    """Cofactor matrix ``L(t, tau, xi)`` of ``(tau I - A)^T``."""
    A, _ = eval_system(spec, t, xi)
    return TauPolyMatrix(adjugate_coeffs(A.astype(complex)))


def _dt_powers(spec, t, xi, order):
    """``D_t^k (A + B)`` for ``k = 0..order`` with ``D_t = -i d/dt``."""
    Aj, Bj = spec.jets(t, order)
    P = Aj @ np.asarray(xi, dtype=float) + Bj
    phase = np.array([(-1j) ** k for k in range(order + 1)])
    return P * phase.reshape((order + 1,) + (1,) * (P.ndim - 1)), P[0], Bj[0]


def _lower_order_coeffs(spec, t, xi):
    """``(b, L, C)`` at ``(t, xi)``; ``C[r]`` multiplies ``tau^r``."""
    m = spec.m
    order = m - 1
    D, P0, B0 = _dt_powers(spec, t, xi, order)
    A0 = (P0 - B0).astype(complex)
    b, M = faddeev_leverrier(A0)
    L = M[::-1]
    C = L @ B0.astype(complex)
    for r in range(m):
        for k in range(1, m - r):
            C[r] = C[r] + math.comb(r + k, k) * (L[r + k] @ D[k])
    return b, L, C


def lower_order_matrix(spec, t, xi):
    """Lower order matrix ``C(t, tau, xi)`` with ``L # (D_t - A - B) = delta I - C``."""
    _check_time(spec, t)
    return TauPolyMatrix(_lower_order_coeffs(spec, t, xi)[2])


class CharPoly:
    """Evaluator of ``b_1..b_m`` of ``det(tau I - A(t, xi))``."""

    def __init__(self, spec):
        self.spec = spec

    def coefficients(self, t, xi):
        """Real array ``(..., m)`` for ``t`` of any shape."""
        A, _ = self.spec.jets(np.asarray(t, dtype=float), 0)
        return char_poly(A[0] @ np.asarray(xi, dtype=float))


# ---------------------------------------------------------------------------
# block Sylvester reduction


class ReducedSystem:
    """Block Sylvester pair ``(calA, calL)`` of size ``m^2 x m^2``.

    Component ``i*m + j`` (0-based) of the reduced unknown is
    ``<xi>^(m-1-j) D_t^j u_i``.
    """

    def __init__(self, spec):
        self.spec = spec
        self.m = spec.m
        self.size = spec.m * spec.m

    def parts(self, t, xi):
        """Return ``(companion_block, calL)`` at ``(t, xi)``.

        ``companion_block`` has shape ``(..., m, m)``, ``calL`` shape
        ``(..., m^2, m^2)``; ``t`` may be an array.
        """
        m = self.m
        t = np.asarray(t, dtype=float)
        xb = float(bracket(xi))
        b, _, C = _lower_order_coeffs(self.spec, t, xi)
        blk = np.zeros(t.shape + (m, m), dtype=complex)
        for r in range(m - 1):
            blk[..., r, r + 1] = xb
        for c in range(m):
            blk[..., m - 1, c] = -b[..., m - 1 - c] * xb ** (1 - (m - c))
        calL = np.zeros(t.shape + (m * m, m * m), dtype=complex)
        for i in range(m):
            row = i * m + m - 1
            for j in range(m):
                for r in range(m):
                    calL[..., row, j * m + r] = C[r][..., i, j] * xb ** (r + 1 - m)
        return blk, calL

    def calA(self, t, xi):
        blk, _ = self.parts(t, xi)
        return block_diag_repeat(blk, self.m)

    def calL(self, t, xi):
        return self.parts(t, xi)[1]

    def matrix(self, t, xi):
        """``calA + calL``."""
        blk, calL = self.parts(t, xi)
        return block_diag_repeat(blk, self.m) + calL


def block_diag_repeat(blk, m):
    """Block-diagonal matrix with ``m`` copies of ``blk`` (batched)."""
    k = blk.shape[-1]
    out = np.zeros(blk.shape[:-2] + (m * k, m * k), dtype=blk.dtype)
    for i in range(m):
        out[..., i * k:(i + 1) * k, i * k:(i + 1) * k] = blk
    return out


def to_block_sylvester(spec):
    return ReducedSystem(spec)


__all__ += ["adjugate_coeffs", "block_diag_repeat", "SingularPointError"]
