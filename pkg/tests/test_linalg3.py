from itertools import permutations

import numpy as np
import pytest

from mpmlaw import linalg3 as la
from mpmlaw.errors import SingularMatrix

from conftest import fd_matrix_grad, random_rotation


def test_svd3_identity(kernel_backend):
    s = la.svd3(np.eye(3))
    np.testing.assert_allclose(s.u, np.eye(3), atol=1e-14)
    np.testing.assert_allclose(s.sigma, np.ones(3), atol=1e-14)
    np.testing.assert_allclose(s.v, np.eye(3), atol=1e-14)


def test_svd3_ordered_diagonal(kernel_backend):
    s = la.svd3(np.diag([2.0, 1.0, 0.5]))
    np.testing.assert_allclose(s.u, np.eye(3), atol=1e-14)
    np.testing.assert_allclose(s.sigma, [2.0, 1.0, 0.5], atol=1e-14)
    np.testing.assert_allclose(s.v, np.eye(3), atol=1e-14)


def test_svd3_random_sweep(kernel_backend, rng):
    F = rng.uniform(-2.0, 2.0, (1000, 3, 3))
    U, sig, V = la.svd3_batch(F)
    rec = U @ (sig[:, :, None] * la.transpose(V))
    rel = np.linalg.norm(rec - F, axis=(1, 2)) / np.linalg.norm(F, axis=(1, 2))
    assert rel.max() <= 1e-10
    eye = np.eye(3)
    assert np.linalg.norm(la.transpose(U) @ U - eye, axis=(1, 2)).max() <= 1e-10
    assert np.linalg.norm(la.transpose(V) @ V - eye, axis=(1, 2)).max() <= 1e-10
    # proper rotations; any reflection folded into sigma[2]
    assert np.all(np.abs(la.det3(U) - 1.0) <= 1e-10)
    assert np.all(np.abs(la.det3(V) - 1.0) <= 1e-10)
    assert np.all(sig[:, 0] >= sig[:, 1])
    assert np.all(sig[:, 1] >= np.abs(sig[:, 2]))


def test_svd3_deterministic(kernel_backend, rng):
    F = rng.uniform(-2.0, 2.0, (3, 3))
    a = la.svd3(F)
    b = la.svd3(F.copy())
    assert np.array_equal(a.u, b.u)
    assert np.array_equal(a.sigma, b.sigma)
    assert np.array_equal(a.v, b.v)


def test_polar3_identity_and_rotation(rng):
    R, S = la.polar3(np.eye(3))
    np.testing.assert_allclose(R, np.eye(3), atol=1e-14)
    np.testing.assert_allclose(S, np.eye(3), atol=1e-14)
    Rstar = random_rotation(rng)
    R, S = la.polar3(Rstar)
    np.testing.assert_allclose(R, Rstar, atol=1e-12)
    np.testing.assert_allclose(S, np.eye(3), atol=1e-12)


def test_polar3_random_sweep(rng):
    F = rng.uniform(-2.0, 2.0, (500, 3, 3))
    R, S = la.polar3_batch(F)
    assert np.abs(S - la.transpose(S)).max() <= 1e-12
    assert np.abs(la.det3(R) - 1.0).max() <= 1e-10  # also holds for det(F) < 0
    rec = R @ S
    rel = np.linalg.norm(rec - F, axis=(1, 2)) / np.linalg.norm(F, axis=(1, 2))
    assert rel.max() <= 1e-10


def _det_bruteforce(m):
    total = 0.0
    for perm in permutations(range(3)):
        sign = 1.0
        p = list(perm)
        for i in range(3):
            for j in range(i + 1, 3):
                if p[i] > p[j]:
                    sign = -sign
        total += sign * m[0, perm[0]] * m[1, perm[1]] * m[2, perm[2]]
    return total


def test_det3_golden_and_oracle(rng):
    assert la.det3(np.eye(3)) == 1.0
    assert la.det3(np.diag([2.0, 1.0, 1.0])) == 2.0
    for _ in range(50):
        F = rng.uniform(-2.0, 2.0, (3, 3))
        expect = _det_bruteforce(F)
        assert abs(la.det3(F) - expect) <= 1e-12 * max(1.0, abs(expect))


def test_inv_transpose3(rng):
    np.testing.assert_allclose(la.inv_transpose3(np.eye(3)), np.eye(3), atol=1e-15)
    np.testing.assert_allclose(
        la.inv_transpose3(np.diag([2.0, 1.0, 1.0])), np.diag([0.5, 1.0, 1.0]), atol=1e-15
    )
    for _ in range(50):
        F = np.eye(3) + rng.uniform(-0.5, 0.5, (3, 3))
        if abs(la.det3(F)) < 0.1:
            continue
        out = la.inv_transpose3(F)
        np.testing.assert_allclose(F.T @ out, np.eye(3), atol=1e-10)


def test_inv_transpose3_singular():
    F = np.zeros((3, 3))
    with pytest.raises(SingularMatrix):
        la.inv_transpose3(F)
    F = np.diag([1.0, 1.0, 0.0])
    with pytest.raises(SingularMatrix):
        la.inv_transpose3(F)


def test_svd3_adjoint_diagonal_case():
    F = np.diag([2.0, 1.0, 0.5])
    s = la.svd3(F)
    out = la.svd3_adjoint(F, s, np.zeros((3, 3)), np.array([1.0, 0.0, 0.0]), np.zeros((3, 3)))
    np.testing.assert_allclose(out, np.diag([1.0, 0.0, 0.0]), atol=1e-12)


def test_svd3_adjoint_fd_oracle(rng):
    checked = 0
    while checked < 25:
        F = rng.uniform(-2.0, 2.0, (3, 3))
        s = la.svd3(F)
        gaps = (abs(s.sigma[0] - s.sigma[1]), abs(s.sigma[1] - abs(s.sigma[2])), abs(s.sigma[1] + s.sigma[2]))
        if min(gaps) < 0.15:
            continue
        dU = rng.standard_normal((3, 3))
        dS = rng.standard_normal(3)
        dV = rng.standard_normal((3, 3))

        def loss(Fx):
            sx = la.svd3(Fx)
            return float((dU * sx.u).sum() + (dS * sx.sigma).sum() + (dV * sx.v).sum())

        g_fd = fd_matrix_grad(loss, F, h=1e-6)
        g = la.svd3_adjoint(F, s, dU, dS, dV)
        assert np.linalg.norm(g - g_fd) <= 1e-4 * np.linalg.norm(g_fd)
        checked += 1


def test_svd3_adjoint_degenerate_is_finite(rng):
    F = np.diag([1.5, 1.5, 0.5])  # sigma_0 == sigma_1
    s = la.svd3(F)
    out = la.svd3_adjoint(F, s, rng.standard_normal((3, 3)), rng.standard_normal(3), rng.standard_normal((3, 3)))
    assert np.all(np.isfinite(out))
    out = la.svd3_adjoint(np.eye(3), la.svd3(np.eye(3)), rng.standard_normal((3, 3)), np.zeros(3), rng.standard_normal((3, 3)))
    assert np.all(np.isfinite(out))


def test_rotation_adjoint_exact_at_identity(rng):
    # the analytically cancelled polar-rotation adjoint stays exact at repeated sigmas
    Rbar = rng.standard_normal((3, 3))
    U, sig, V = la.svd3_batch(np.eye(3)[None])

    def loss(Fx):
        R, _ = la.polar3(Fx)
        return float((Rbar * R).sum())

    g_fd = fd_matrix_grad(loss, np.eye(3), h=1e-6)
    g = la.rotation_adjoint_batch(U, sig, V, Rbar[None])[0]
    assert np.linalg.norm(g - g_fd) <= 1e-6 * np.linalg.norm(g_fd)


def test_backend_parity_on_svd(rng):
    import mpmlaw.backend as be

    F = rng.uniform(-2.0, 2.0, (64, 3, 3))
    old = be.active_backend()
    try:
        be.use_backend("numba")
        U1, s1, V1 = la.svd3_batch(F)
        be.use_backend("numpy")
        U2, s2, V2 = la.svd3_batch(F)
    finally:
        be.use_backend(old)
    # decompositions may differ by column-sign pairs, but sigma and the
    # reconstruction must agree
    np.testing.assert_allclose(s1, s2, atol=1e-10)
    r1 = U1 @ (s1[:, :, None] * la.transpose(V1))
    r2 = U2 @ (s2[:, :, None] * la.transpose(V2))
    np.testing.assert_allclose(r1, r2, atol=1e-10)
