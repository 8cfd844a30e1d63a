"""Tests for the operator expression language."""

import math

import numpy as np
import pytest

from ptsim.expressions import (
    ExpressionError,
    constants,
    evaluate,
    format_expression,
    matrix_from_expression,
    parse_expression,
    scalar_from_expression,
)


def test_dirac_matrix():
    mat = matrix_from_expression("|0><1|_2")
    assert mat.shape == (2, 2)
    assert np.array_equal(mat, np.array([[0, 1], [0, 0]], dtype=complex))


def test_sigma_x_from_dirac_sum():
    mat = matrix_from_expression("hbar/2*(|0><1|_2+|1><0|_2)")
    hbar = constants["hbar"]
    expected = hbar / 2 * np.array([[0, 1], [1, 0]])
    assert np.allclose(mat, expected, atol=1e-15)


def test_number_operator_product():
    mat = matrix_from_expression("bdagger_3*b_3")
    assert np.allclose(mat, np.diag([0.0, 1.0, 2.0]))
    # matches the predefined number operator
    assert np.allclose(mat, matrix_from_expression("n_3"))


def test_scalar_constants():
    assert scalar_from_expression("2*pi") == pytest.approx(6.283185307179586, abs=1e-12)
    assert scalar_from_expression("hbar/kB") == pytest.approx(7.6382, abs=1e-4)


def test_scientific_notation_and_unary_minus():
    assert scalar_from_expression("1e-3") == pytest.approx(0.001)
    assert scalar_from_expression("-2+1") == pytest.approx(-1.0)
    assert scalar_from_expression("-2*-3") == pytest.approx(6.0)


def test_sqrt_exp_scalars():
    assert scalar_from_expression("sqrt(2)") == pytest.approx(math.sqrt(2))
    assert scalar_from_expression("exp(1)") == pytest.approx(math.e)
    # sqrt of a negative number is complex; real part is 0
    assert scalar_from_expression("sqrt(-4)") == pytest.approx(0.0)


def test_pauli_matrices():
    sz = matrix_from_expression("sigma_z")
    assert np.array_equal(sz, np.diag([1.0, -1.0]))
    sx = matrix_from_expression("sigma_x")
    sy = matrix_from_expression("sigma_y")
    # su(2) algebra: [sx, sy] = 2i sz
    assert np.allclose(sx @ sy - sy @ sx, 2j * sz)


def test_precedence_star_tighter_than_otimes():
    # 2*Id_2 otimes Id_3 must parse as (2*Id_2) otimes Id_3
    mat = matrix_from_expression("2*Id_2 otimes Id_3")
    assert np.allclose(mat, 2 * np.eye(6))
    # otimes binds tighter than +
    mat2 = matrix_from_expression("Id_2 otimes Id_2 + Id_4")
    assert np.allclose(mat2, 2 * np.eye(4))


def test_kron_associativity():
    rng = np.random.default_rng(7)
    a = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    b = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    c = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    assert np.allclose(np.kron(np.kron(a, b), c), np.kron(a, np.kron(b, c)),
                       atol=1e-12)
    # and through the parser on operator atoms
    left = matrix_from_expression("(sigma_x otimes bdagger_3) otimes sigma_z")
    right = matrix_from_expression("sigma_x otimes (bdagger_3 otimes sigma_z)")
    assert np.array_equal(left, right)


@pytest.mark.parametrize("dim", [2, 3, 5])
def test_dirac_completeness(dim):
    total = sum(matrix_from_expression(f"|{i}><{i}|_{dim}") for i in range(dim))
    assert np.array_equal(total, np.eye(dim, dtype=complex))


@pytest.mark.parametrize("dim", [2, 4, 6])
def test_ladder_adjoint(dim):
    bdag = matrix_from_expression(f"bdagger_{dim}")
    b = matrix_from_expression(f"b_{dim}")
    assert np.array_equal(bdag.conj().T, b)


@pytest.mark.parametrize("text", [
    "|0><1|_2",
    "hbar/2*(|0><1|_2+|1><0|_2)",
    "2*Id_2 otimes Id_3",
    "-sigma_y*sqrt(2)+exp(-1)*Id_2",
    "bdagger_4*b_4/3 - n_4",
])
def test_format_round_trip(text):
    ast = parse_expression(text)
    printed = format_expression(ast)
    assert np.allclose(evaluate(parse_expression(printed)), evaluate(ast),
                       atol=1e-15)


@pytest.mark.parametrize("text", [
    "|2><0|_2",          # index out of range
    "sigma_w",           # unknown identifier
    "(Id_2",             # unbalanced parens
    "Id_2 + Id_3",       # shape mismatch
    "sqrt(Id_2)",        # sqrt of a matrix
    "Id_2/sigma_x",      # matrix divisor
    "1/0",
    "Id_2 Id_2",         # missing operator
    "2 @ 3",             # stray character
])
def test_errors(text):
    with pytest.raises(ExpressionError):
        matrix_from_expression(text)


def test_error_carries_offset():
    with pytest.raises(ExpressionError) as err:
        matrix_from_expression("Id_2 + sigma_q")
    assert err.value.pos == 7
