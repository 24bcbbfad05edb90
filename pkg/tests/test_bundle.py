import numpy as np
import pytest

from lpstoch.bundle import (
    Connection,
    central_jacobian,
    coadjoint_covariant_increment,
    curvature,
    xi_bar_increment,
)
from lpstoch.lie import SO3, levi_civita
from lpstoch.systems import uniform_field_potential


def kk_connection(analytic=True):
    A_vec, A_jac = uniform_field_potential((0.0, 0.0, 1.0))
    deriv = (lambda x: A_jac(x)[..., None, :, :]) if analytic else None
    return Connection(1, 3, lambda x: A_vec(x)[..., None, :], deriv)


def test_zero_connection_is_flat():
    conn = Connection.zero(3, 2)
    B = curvature(conn, levi_civita(), np.array([0.3, -1.0]))
    np.testing.assert_array_equal(B, 0)


@pytest.mark.parametrize("analytic", [True, False])
def test_kk_curvature_is_unit_field(analytic):
    B = curvature(kk_connection(analytic), np.zeros((1, 1, 1)), np.array([0.2, 1.5, -0.7]))
    expected = np.zeros((1, 3, 3))
    expected[0, 0, 1], expected[0, 1, 0] = 1.0, -1.0
    np.testing.assert_allclose(B, expected, atol=1e-9)


def test_constant_nonabelian_connection_curvature():
    rng = np.random.default_rng(0)
    M = rng.standard_normal((3, 2))
    C = levi_civita()
    B = curvature(Connection.constant(M), C, np.zeros(2))
    expected = -np.einsum("bcd,ca,de->bae", C, M, M)
    np.testing.assert_allclose(B, expected, atol=1e-14)


def test_curvature_antisymmetry_exact():
    rng = np.random.default_rng(1)

    def coeffs(x):
        return np.stack([np.sin(x), np.cos(x[..., ::-1]), x ** 2], axis=-2)

    conn = Connection(3, 2, coeffs)
    for x in rng.standard_normal((20, 2)):
        B = curvature(conn, levi_civita(), x)
        assert np.array_equal(B, -np.swapaxes(B, -1, -2))


def test_curvature_general_field_against_curl():
    # A = (sin y, x z, cos x): curl = (-x, sin x, z - cos y)
    def A(x):
        return np.stack([np.sin(x[..., 1]), x[..., 0] * x[..., 2], np.cos(x[..., 0])], -1)[..., None, :]

    x = np.array([0.4, -0.3, 1.1])
    B = curvature(Connection(1, 3, A), np.zeros((1, 1, 1)), x)[0]
    curl = np.array([-x[0], np.sin(x[0]), x[2] - np.cos(x[1])])
    np.testing.assert_allclose([B[1, 2], B[2, 0], B[0, 1]], curl, atol=1e-8)


def test_fd_derivative_matches_half_step():
    conn = Connection(1, 2, lambda x: np.stack([np.sin(x[..., 0]) * x[..., 1], np.exp(x[..., 1])], -1)[..., None, :])
    x = np.array([0.3, 0.5])
    d1 = conn.dA(x)
    d2 = central_jacobian(conn.coeffs, x, conn.fd_step / 2)
    assert np.max(np.abs(d1 - d2)) <= 10 * conn.fd_step ** 2 * 2.0


def test_xi_bar_increment_examples_and_linearity():
    M = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    conn = Connection.constant(M)
    dxi = np.array([0.1, 0.2, 0.3])
    np.testing.assert_array_equal(xi_bar_increment(Connection.zero(3, 2), np.zeros(2), np.ones(2), dxi), dxi)
    np.testing.assert_array_equal(xi_bar_increment(conn, np.zeros(2), np.zeros(2), dxi), dxi)
    np.testing.assert_array_equal(xi_bar_increment(conn, np.zeros(2), np.array([0.0, 1.0]), np.zeros(3)), M[:, 1])
    rng = np.random.default_rng(2)
    dx1, dx2 = rng.standard_normal((2, 2))
    d1, d2 = rng.standard_normal((2, 3))
    a, b = 0.7, -1.3
    lhs = xi_bar_increment(conn, np.zeros(2), a * dx1 + b * dx2, a * d1 + b * d2)
    rhs = a * xi_bar_increment(conn, np.zeros(2), dx1, d1) + b * xi_bar_increment(conn, np.zeros(2), dx2, d2)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_coadjoint_covariant_increment():
    C = levi_civita()
    mu = np.array([1.0, 0.0, 0.0])
    dxb = np.array([0.0, 1.0, 0.0])
    zero = Connection.zero(3, 2)
    inc = coadjoint_covariant_increment(C, zero, np.zeros(2), mu, dxb, np.zeros(2))
    np.testing.assert_allclose(inc, np.cross(mu, dxb))
    np.testing.assert_allclose(inc, SO3().coad(dxb, mu))
    abel = coadjoint_covariant_increment(np.zeros((1, 1, 1)), Connection.zero(1, 2), np.zeros(2), np.array([2.0]),
                                         np.array([5.0]), np.ones(2))
    assert abel[0] == 0.0
    M = np.arange(6.0).reshape(3, 2)
    dx = np.array([0.3, -0.1])
    inc = coadjoint_covariant_increment(C, Connection.constant(M), np.zeros(2), np.array([0.2, 0.5, -1.0]), M @ dx, dx)
    np.testing.assert_allclose(inc, 0.0, atol=1e-15)
