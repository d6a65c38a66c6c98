import numpy as np
import pytest

from surrogate_dfl.errors import NotPositiveDefinite, SingularMatrix
from surrogate_dfl.numerics import (
    cholesky,
    matrix_from_csv,
    matrix_to_csv,
    project_simplex,
    solve_symmetric,
)


def test_solve_symmetric_identity():
    X = solve_symmetric(np.eye(3), np.eye(3))
    assert np.allclose(X, np.eye(3), atol=1e-12)


def test_solve_symmetric_diagonal():
    A = np.array([[2.0, 0.0], [0.0, 4.0]])
    X = solve_symmetric(A, np.array([[1.0], [1.0]]))
    assert np.allclose(X, [[0.5], [0.25]], atol=1e-12)


def test_solve_symmetric_indefinite_swap():
    # oracle: multiply back
    A = np.array([[0.0, 1.0], [1.0, 0.0]])
    B = np.array([[1.0], [2.0]])
    X = solve_symmetric(A, B)
    assert np.allclose(A @ X, B, atol=1e-12)
    assert np.allclose(X, [[2.0], [1.0]], atol=1e-12)


def test_solve_symmetric_residual_contract():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = rng.integers(2, 12)
        M = rng.normal(size=(n, n))
        A = M.T @ M + np.eye(n)
        X = solve_symmetric(A, np.eye(n))
        assert np.max(np.abs(A @ X - np.eye(n))) <= 1e-7


def test_solve_symmetric_singular():
    A = np.array([[1.0, 1.0], [1.0, 1.0]])
    with pytest.raises(SingularMatrix):
        solve_symmetric(A, np.ones(2))


def test_solve_symmetric_vector_rhs_shape():
    x = solve_symmetric(np.eye(2), np.array([3.0, 4.0]))
    assert x.shape == (2,)
    assert np.allclose(x, [3.0, 4.0])


def test_cholesky_identity():
    assert np.allclose(cholesky(np.eye(2)), np.eye(2))


def test_cholesky_hand_expanded():
    # L L^T = [[4,2],[2,5]] gives L11=2, L21=1, L22=sqrt(5-1)=2
    A = np.array([[4.0, 2.0], [2.0, 5.0]])
    L = cholesky(A)
    assert np.allclose(L, [[2.0, 0.0], [1.0, 2.0]], atol=1e-12)
    assert np.allclose(L @ L.T, A, atol=1e-10)


def test_cholesky_indefinite_raises():
    with pytest.raises(NotPositiveDefinite):
        cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_project_simplex_already_feasible():
    v = np.array([0.3, 0.7])
    assert np.allclose(project_simplex(v, 1.0), v, atol=1e-12)


def test_project_simplex_vertex():
    # KKT of the 2-d projection puts all mass on the first coordinate
    assert np.allclose(project_simplex(np.array([2.0, 0.0]), 1.0), [1.0, 0.0])


def test_project_simplex_symmetry():
    assert np.allclose(project_simplex(np.zeros(2), 1.0), [0.5, 0.5])


def test_project_simplex_properties():
    rng = np.random.default_rng(1)
    for _ in range(100):
        n = rng.integers(1, 20)
        total = rng.uniform(0.1, 5.0)
        v = rng.normal(0, 3, n)
        w = project_simplex(v, total)
        assert abs(w.sum() - total) <= 1e-10
        assert w.min() >= -1e-12
        again = project_simplex(w, total)
        assert np.max(np.abs(again - w)) <= 1e-12


def test_matrix_csv_roundtrip(tmp_path):
    A = np.array([[1.25, -3.5], [0.125, 7.0]])
    path = tmp_path / "m.csv"
    matrix_to_csv(A, path)
    assert np.allclose(matrix_from_csv(path), A)
    text = path.read_text()
    assert "," in text and ";" not in text  # '.' decimal separator, no header
