import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from weakhyp.expr import SingularPointError
from weakhyp.symbols import (CharPoly, ReducedSystem, SystemSpec, adjugate_coeffs,
                             adjugate_symbol, bracket, char_poly, dt_derivative,
                             eval_system, faddeev_leverrier, load_system,
                             lower_order_matrix)


def cofactor_adjugate(M):
    m = M.shape[0]
    out = np.empty_like(M)
    for i in range(m):
        for j in range(m):
            minor = np.delete(np.delete(M, j, axis=0), i, axis=1)
            out[i, j] = (-1) ** (i + j) * (np.linalg.det(minor) if m > 1 else 1.0)
    return out


@given(st.integers(1, 5).flatmap(
    lambda m: arrays(np.float64, (m, m), elements=st.floats(-3, 3))))
def test_char_poly_matches_numpy(A):
    b = char_poly(A)
    ref = np.poly(A)[1:]
    assert np.allclose(b, ref, atol=1e-9 * (1 + np.abs(A).sum()) ** A.shape[0])


@given(st.integers(1, 4).flatmap(
    lambda m: arrays(np.float64, (m, m), elements=st.floats(-3, 3))),
    st.complex_numbers(max_magnitude=4, allow_nan=False, allow_infinity=False))
def test_adjugate_matches_cofactor_expansion(A, tau):
    m = A.shape[0]
    L = sum(c * tau**r for r, c in enumerate(adjugate_coeffs(A.astype(complex))))
    ref = cofactor_adjugate(tau * np.eye(m) - A)
    assert np.allclose(L, ref, atol=1e-9 * (1 + np.abs(A).sum() + abs(tau)) ** m)


def test_faddeev_batched_shapes():
    A = np.random.default_rng(0).standard_normal((7, 3, 3, 3))
    b, M = faddeev_leverrier(A)
    assert b.shape == (7, 3, 3) and M.shape == (3, 7, 3, 3, 3)
    assert np.allclose(b[2, 1], np.poly(A[2, 1])[1:])


def test_m1_degenerates_exactly():
    spec = SystemSpec.from_strings(1, 1, 1.0, 1.0, [["t + 2"]], [["sin(t)"]])
    L = adjugate_symbol(spec, 0.3, [5.0])
    assert L.degree == 0 and L(7.0)[0, 0] == 1.0
    C = lower_order_matrix(spec, 0.3, [5.0])
    assert C(1.0)[0, 0] == pytest.approx(math.sin(0.3), abs=0)
    R = ReducedSystem(spec)
    M = R.matrix(0.3, [5.0])
    assert M[0, 0] == pytest.approx(2.3 * 5.0 + math.sin(0.3), rel=1e-15)


def symbolic_lower_order(A_rows, B_rows, t0, xi0):
    """``C = L B + sum_k (1/k!) d_tau^k L (-i)^k d_t^k (A + B)`` with sympy."""
    t, tau, xi = sp.symbols("t tau xi")
    A = sp.Matrix(A_rows) * xi
    B = sp.Matrix(B_rows)
    m = A.shape[0]
    L = (tau * sp.eye(m) - A).adjugate()
    C = L * B
    for k in range(1, m):
        C += sp.diff(L, tau, k) / sp.factorial(k) * (-sp.I) ** k * sp.diff(A + B, t, k)
    return sp.lambdify(tau, C.subs({t: t0, xi: xi0}), "numpy")


@pytest.mark.parametrize("A_txt,B_txt,A_sym,B_sym", [
    ([["0", "1"], ["t^2", "0"]], [["0", "0"], ["1", "0"]],
     [[0, 1], ["t**2", 0]], [[0, 0], [1, 0]]),
    ([["0", "1", "0"], ["0", "0", "1"], ["0", "3*t^2", "0"]], [["0"] * 3] * 3,
     [[0, 1, 0], [0, 0, 1], [0, "3*t**2", 0]], [[0] * 3] * 3),
    ([["sin(t)", "1", "0"], ["t", "0", "t^3"], ["1", "cos(t)", "t^2"]],
     [["t", "0", "1"], ["0", "1", "0"], ["t^2", "0", "0"]],
     [["sin(t)", 1, 0], ["t", 0, "t**3"], [1, "cos(t)", "t**2"]],
     [["t", 0, 1], [0, 1, 0], ["t**2", 0, 0]]),
])
def test_lower_order_matches_symbolic_composition(A_txt, B_txt, A_sym, B_sym):
    m = len(A_txt)
    spec = SystemSpec.from_strings(m, 1, 1.0, 1.0, A_txt, B_txt)
    sym = [[sp.sympify(x) for x in row] for row in A_sym]
    symB = [[sp.sympify(x) for x in row] for row in B_sym]
    for t0, xi0 in ((0.4, 3.0), (0.9, -1.5)):
        ref = symbolic_lower_order(sym, symB, t0, xi0)
        got = lower_order_matrix(spec, t0, [xi0])
        for tau in (0.0, 1.3, -2.0 + 0.5j):
            assert np.allclose(got(tau), np.array(ref(tau), dtype=complex), atol=1e-10)


def test_wave_lower_order_value(wave):
    C = lower_order_matrix(wave, 1.0, [1.0])
    assert C.coeffs[0][1, 0] == pytest.approx(-2j)


def test_companion_block_eigenvalues_match_symbol(triple, rng):
    R = ReducedSystem(triple)
    for _ in range(10):
        t = rng.uniform(0, 1)
        xi = rng.uniform(-50, 50)
        blk, _ = R.parts(np.array([t]), [xi])
        A, _ = eval_system(triple, t, [xi])
        got = np.sort(np.linalg.eigvals(blk[0]).real)
        want = np.sort(np.linalg.eigvals(A).real)
        assert np.allclose(got, want, atol=1e-7 * (1 + abs(xi)))


def test_wave_block_eigenvalues(wave):
    blk, calL = ReducedSystem(wave).parts(np.array([0.5]), [1000.0])
    ev = np.sort(np.linalg.eigvals(blk[0]).real)
    assert np.allclose(ev, [-500.0, 500.0], rtol=1e-12)
    assert calL.shape == (1, 4, 4)


def test_lower_order_rows_only_in_last_block_row(triple):
    _, calL = ReducedSystem(triple).parts(np.array([0.3]), [4.0])
    m = 3
    for row in range(m * m):
        if row % m != m - 1:
            assert np.all(calL[0, row] == 0)


def test_constant_system_has_no_lower_order():
    spec = SystemSpec.from_strings(2, 1, 1.0, 1.0, [["0", "1"], ["1", "0"]])
    assert spec.a_is_constant() and spec.b_is_zero()
    _, calL = ReducedSystem(spec).parts(np.linspace(0, 1, 5), [10.0])
    assert np.all(calL == 0)


def test_dt_derivative_limits(wave):
    assert dt_derivative(wave, "A", 1, 0.5, [2.0])[1, 0] == pytest.approx(2.0)
    with pytest.raises(ValueError):
        dt_derivative(wave, "A", 2, 0.5, [2.0])
    holder = SystemSpec.from_strings(2, 1, 1.0, 0.5, [["0", "1"], ["abs(t)", "0"]])
    with pytest.raises(SingularPointError):
        dt_derivative(holder, "A", 1, 0.0, [1.0])
    with pytest.raises(ValueError):
        eval_system(wave, 1.5, [1.0])


def test_char_poly_evaluator(wave):
    b = CharPoly(wave).coefficients(np.array([0.5, 1.0]), [2.0])
    assert np.allclose(b, [[0, -1.0], [0, -4.0]])


def test_bracket():
    assert bracket([3.0, 4.0]) == pytest.approx(math.sqrt(26))
    assert np.allclose(bracket(np.zeros((4, 2))), 1.0)


def test_spec_round_trip_and_files(tmp_path, wave):
    again = SystemSpec.from_dict(__import__("json").loads(wave.to_json()))
    assert again == wave
    p = tmp_path / "w.json"
    p.write_text(wave.to_json())
    assert load_system(p) == wave
    y = tmp_path / "w.yaml"
    y.write_text("system:\n  m: 2\n  T: 1\n  alpha: 1\n  A: [['0', '1'], ['t^2', '0']]\n")
    assert load_system(y) == wave


@pytest.mark.parametrize("d,msg", [
    ({"m": 2, "T": 1, "alpha": 1, "A": [["0", "1"]]}, "system.A"),
    ({"m": 2, "T": 1, "alpha": 1, "A": [["0", "1"], ["t^", "0"]]}, "system.A[1][0][0]"),
    ({"m": 2, "T": 1, "A": [["0", "1"], ["t", "0"]]}, "missing field 'alpha'"),
    ({"m": 2, "T": 1, "alpha": 1, "A": [["0", "1"], ["t", "0"]], "B": [["1", "x"], ["0", "0"]]},
     "system.B[0][1]"),
    ({"m": 2, "T": -1, "alpha": 1, "A": [["0", "1"], ["t", "0"]]}, "T must be positive"),
])
def test_from_dict_errors_carry_field_path(d, msg):
    with pytest.raises(ValueError, match=__import__("re").escape(msg)):
        SystemSpec.from_dict(d)
