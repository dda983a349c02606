import math

import numpy as np
import pytest

from mpmlaw import linalg3 as la
from mpmlaw import materials as mat
from mpmlaw.errors import InvalidDeformation, SingularMatrix

from conftest import fd_matrix_grad, random_rotation

LAME = mat.LameParams.from_youngs(1e5, 0.3)
PLASTIC = mat.PlasticParams(friction_angle=math.radians(25.0), yield_stress=5e3)


def all_laws():
    return {name: mat.make_environment_law(name) for name in mat.ENVIRONMENTS}


def test_lame_conversion():
    p = mat.LameParams.from_youngs(1e5, 0.3)
    assert p.mu == pytest.approx(1e5 / 2.6)
    assert p.lam == pytest.approx(1e5 * 0.3 / (1.3 * 0.4))


def test_fixed_corotated_golden():
    p = mat.LameParams(mu=1.0, lam=1.0)
    np.testing.assert_allclose(mat.fixed_corotated_stress(np.eye(3), p), 0.0, atol=1e-15)
    P = mat.fixed_corotated_stress(np.diag([1.1, 1.0, 1.0]), p)
    np.testing.assert_allclose(P, np.diag([0.3, 0.11, 0.11]), atol=1e-10)


def test_fixed_corotated_rotation_gives_zero(rng):
    for _ in range(20):
        R = random_rotation(rng)
        P = mat.fixed_corotated_stress(R, LAME)
        assert np.abs(P).max() <= 1e-9 * LAME.mu


def test_hencky_stress_golden():
    np.testing.assert_allclose(mat.stvk_hencky_stress(np.eye(3), LAME), 0.0, atol=1e-12)
    tau = mat.stvk_hencky_stress(np.diag([math.e, 1.0, 1.0]), mat.LameParams(mu=1.0, lam=0.0))
    np.testing.assert_allclose(tau, np.diag([2.0, 0.0, 0.0]), atol=1e-12)


def test_hencky_stress_conjugation(rng):
    for _ in range(50):
        D = np.diag(rng.uniform(0.5, 2.0, 3))
        R = random_rotation(rng)
        t0 = mat.stvk_hencky_stress(D, LAME)
        t1 = mat.stvk_hencky_stress(R @ D, LAME)
        np.testing.assert_allclose(t1, R @ t0 @ R.T, atol=1e-8 * max(1.0, np.abs(t0).max()))


def test_hencky_rejects_nonpositive_sigma():
    with pytest.raises(InvalidDeformation):
        mat.stvk_hencky_stress(np.diag([1.0, 1.0, -1.0]), LAME)


def test_drucker_prager_branches():
    p = mat.LameParams(1e4, 1e4)
    q = mat.PlasticParams(friction_angle=math.radians(30.0))
    # tension goes to the cone tip
    np.testing.assert_allclose(
        mat.drucker_prager_return(np.diag([1.1, 1.1, 1.1]), p, q), np.eye(3), atol=1e-12
    )
    # rest state is a fixed point
    np.testing.assert_allclose(mat.drucker_prager_return(np.eye(3), p, q), np.eye(3), atol=0)
    # hand-evaluated elastic case: dgamma <= 0 keeps F
    F = np.diag([0.8, 0.95, 1.0])
    eps = np.log(np.diag(F))
    ehat = eps - eps.sum() / 3.0
    alpha = math.sqrt(2.0 / 3.0) * 2.0 * math.sin(q.friction_angle) / (3.0 - math.sin(q.friction_angle))
    dgamma = np.linalg.norm(ehat) + alpha * (3.0 * p.lam + 2.0 * p.mu) * eps.sum() / (2.0 * p.mu)
    assert dgamma <= 0.0
    assert np.array_equal(mat.drucker_prager_return(F, p, q), F)


def test_drucker_prager_projection_oracle():
    p = mat.LameParams(1e4, 1e4)
    q = mat.PlasticParams(friction_angle=math.radians(30.0))
    F = np.diag([0.5, 0.9, 1.1])
    out = mat.drucker_prager_return(F, p, q)
    # scalar re-evaluation of the projected Hencky strains
    eps = np.log(np.diag(F))
    tr = eps.sum()
    ehat = eps - tr / 3.0
    nrm = np.linalg.norm(ehat)
    alpha = math.sqrt(2.0 / 3.0) * 2.0 * math.sin(q.friction_angle) / (3.0 - math.sin(q.friction_angle))
    dgamma = nrm + alpha * (3.0 * p.lam + 2.0 * p.mu) * tr / (2.0 * p.mu)
    assert dgamma > 0.0
    expect = np.sort(eps - dgamma * ehat / nrm)
    got = np.sort(np.log(np.linalg.svd(out, compute_uv=False)))
    np.testing.assert_allclose(got, expect, atol=1e-12)
    # isochoric: determinant preserved
    assert abs(la.det3(out) - la.det3(F)) <= 1e-10 * abs(la.det3(F))


def test_von_mises_golden():
    p = mat.LameParams(1e4, 1e4)
    np.testing.assert_allclose(
        mat.von_mises_return(np.eye(3), p, PLASTIC), np.eye(3), atol=0
    )
    huge = mat.PlasticParams(yield_stress=1e12)
    F = np.diag([2.0, 1.0, 0.5])
    assert np.array_equal(mat.von_mises_return(F, p, huge), F)


def test_von_mises_isochoric_projection():
    mu, tau_y = 1e4, 1e3
    p = mat.LameParams(mu, 1e4)
    q = mat.PlasticParams(yield_stress=tau_y)
    F = np.diag([2.0, 1.0, 0.5])
    out = mat.von_mises_return(F, p, q)
    eps = np.log(np.linalg.svd(out, compute_uv=False))
    ehat = eps - eps.sum() / 3.0
    assert abs(np.linalg.norm(ehat) - tau_y / (2.0 * mu)) <= 1e-10
    assert abs(eps.sum() - np.log(np.diag(F)).sum()) <= 1e-10
    assert abs(la.det3(out) - la.det3(F)) <= 1e-10 * abs(la.det3(F))


def test_fluid_stress_golden():
    p = mat.LameParams(mu=0.0, lam=1.0)
    np.testing.assert_allclose(mat.fluid_stress(np.eye(3), p), 0.0, atol=1e-15)
    np.testing.assert_allclose(
        mat.fluid_stress(np.diag([2.0, 1.0, 1.0]), p), np.diag([1.0, 2.0, 2.0]), atol=1e-12
    )


def test_fluid_return_golden(rng):
    np.testing.assert_allclose(mat.fluid_return(np.eye(3)), np.eye(3), atol=0)
    np.testing.assert_allclose(
        mat.fluid_return(np.diag([2.0, 1.0, 1.0])), 2.0 ** (1.0 / 3.0) * np.eye(3), atol=1e-13
    )
    for _ in range(30):
        F = np.eye(3) + rng.uniform(-0.4, 0.4, (3, 3))
        J = la.det3(F)
        if J <= 0.05:
            continue
        out = mat.fluid_return(F)
        assert abs(la.det3(out) - J) <= 1e-12 * abs(J)
    with pytest.raises(InvalidDeformation):
        mat.fluid_return(np.diag([1.0, 1.0, -1.0]))


def test_fluid_stress_singular():
    with pytest.raises(SingularMatrix):
        mat.fluid_stress(np.zeros((3, 3)), mat.LameParams(0.0, 1.0))


def test_environment_construction():
    laws = all_laws()
    assert isinstance(laws["jello"], mat.JelloLaw)
    assert isinstance(laws["sand"], mat.SandLaw)
    assert isinstance(laws["plasticine"], mat.PlasticineLaw)
    assert isinstance(laws["water"], mat.WaterLaw)
    with pytest.raises(ValueError):
        mat.make_environment_law("rubber")
    # jello's return map is the identity for arbitrary F
    F = np.array([[1.2, 0.1, 0.0], [0.0, 0.9, 0.2], [0.1, 0.0, 1.1]])
    assert np.array_equal(laws["jello"].plastic(F), F)


def test_undeformed_equilibrium_all_laws():
    for name, law in all_laws().items():
        assert np.abs(law.elastic(np.eye(3))).max() <= 1e-12, name
        np.testing.assert_allclose(law.plastic(np.eye(3)), np.eye(3), atol=1e-12)


def test_equivariance_all_laws(rng):
    laws = all_laws()
    for _ in range(200):
        F = np.eye(3) + rng.uniform(-0.5, 0.5, (3, 3))
        if la.det3(F) < 0.05:
            continue
        R = random_rotation(rng)
        for name, law in laws.items():
            s0 = law.elastic(F)
            s1 = law.elastic(R @ F)
            scale = max(np.abs(s0).max(), 1e-9)
            if law.stress_is_kirchhoff:
                assert np.abs(s1 - R @ s0 @ R.T).max() <= 1e-8 * scale, name
            else:
                assert np.abs(s1 - R @ s0).max() <= 1e-8 * scale, name
            p0 = law.plastic(F)
            p1 = law.plastic(R @ F)
            assert np.abs(p1 - R @ p0).max() <= 1e-8 * max(np.abs(p0).max(), 1.0), name


@pytest.mark.parametrize("name", mat.ENVIRONMENTS)
def test_law_adjoints_match_fd(name, rng):
    law = mat.make_environment_law(name)
    for _ in range(8):
        F = np.eye(3) + rng.uniform(-0.3, 0.3, (3, 3))
        if la.det3(F) < 0.2:
            continue
        Sbar = rng.standard_normal((3, 3))
        tau, kc = law.kirchhoff_batch(F[None])
        Fbar, _ = law.kirchhoff_adjoint(kc, Sbar[None])
        g_fd = fd_matrix_grad(
            lambda Fx: float((Sbar * law.kirchhoff_batch(Fx[None])[0][0]).sum()), F
        )
        assert np.linalg.norm(Fbar[0] - g_fd) <= 1e-4 * max(np.linalg.norm(g_fd), 1e-12)

        Hbar = rng.standard_normal((3, 3))
        _, pc = law.plastic_batch(F[None])
        Fbp, _ = law.plastic_adjoint(pc, Hbar[None])
        g_fd = fd_matrix_grad(
            lambda Fx: float((Hbar * law.plastic_batch(Fx[None])[0][0]).sum()), F
        )
        assert np.linalg.norm(Fbp[0] - g_fd) <= 1e-4 * max(np.linalg.norm(g_fd), 1e-12)


def test_with_trainable():
    law = mat.with_trainable(mat.WaterLaw(lam=2e4), ("lam",))
    assert law.trainable == ("lam",)
    assert law.lam == 2e4
    assert mat.WaterLaw(lam=2e4).trainable == ()
