"""Analytic elastoplastic constitutive models behind a two-map interface.

Each law provides the elastic map F -> stress and the plastic return map
F_trial -> F_new, in batched form (leading particle axis) with hand-derived
adjoints. The adjoints also accumulate gradients with respect to the physical
parameters, which is what system identification consumes.

Stress conventions: the MPM force term wants Kirchhoff stress tau. Laws whose
natural output is first Piola-Kirchhoff (fixed corotated, fluid) declare
``stress_is_kirchhoff = False`` and are converted at the interface boundary
(``kirchhoff_batch``); the Hencky-strain model is Kirchhoff directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import linalg3 as la
from .errors import InvalidDeformation

DEFAULT_YOUNGS = 1e5
DEFAULT_POISSON = 0.3
DEFAULT_WATER_LAM = 1e5
DEFAULT_FRICTION_ANGLE = math.radians(25.0)
DEFAULT_YIELD_STRESS = 5e3
DEFAULT_DENSITY = 1e3

_DIAG = np.arange(3)


@dataclass(frozen=True)
class LameParams:
    """Lame coefficients in Pa."""

    mu: float
    lam: float

    @classmethod
    def from_youngs(cls, youngs_modulus: float, poissons_ratio: float) -> "LameParams":
        e, nu = youngs_modulus, poissons_ratio
        return cls(mu=e / (2.0 * (1.0 + nu)), lam=e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu)))


@dataclass(frozen=True)
class PlasticParams:
    """Yield-surface parameters: friction angle (rad) and yield stress (Pa)."""

    friction_angle: float = DEFAULT_FRICTION_ANGLE
    yield_stress: float = DEFAULT_YIELD_STRESS


def _check_positive_sigma(sig):
    if np.any(sig <= 0.0):
        raise InvalidDeformation(f"non-positive singular value (min {float(sig.min()):.3e})")


def _log_divided_difference(sig):
    """(log s_j - log s_i)/(s_j - s_i) with the midpoint limit near coincidence."""
    si = sig[..., :, None]
    sj = sig[..., None, :]
    diff = sj - si
    near = np.abs(diff) < 1e-5 * np.maximum(1.0, np.abs(si) + np.abs(sj))
    safe = np.where(near, 1.0, diff)
    log_si = np.log(si)
    log_sj = np.log(sj)
    return np.where(near, 2.0 / (si + sj), (log_sj - log_si) / safe)


def _value_divided_difference(g, sig, J):
    """(g_j - g_i)/(s_j - s_i), switching to the analytic limit via J = dg/dsigma."""
    si = sig[..., :, None]
    sj = sig[..., None, :]
    gi = g[..., :, None]
    gj = g[..., None, :]
    diff = sj - si
    near = np.abs(diff) < 1e-5 * np.maximum(1.0, np.abs(si) + np.abs(sj))
    safe = np.where(near, 1.0, diff)
    jjj = J[..., _DIAG, _DIAG][..., None, :]  # J_jj broadcast over rows
    limit = jjj - J  # limit_ij = J_jj - J_ij
    return np.where(near, limit, (gj - gi) / safe)


# --------------------------------------------------------------------------
# fixed corotated hyperelasticity (Piola stress)


def _corotated_stress_batch(F, mu, lam):
    U, sig, V = la.svd3_batch(F)
    R = U @ la.transpose(V)
    G = la.inv_transpose3_batch(F)
    J = la.det3(F)
    coef = lam * J * (J - 1.0)
    P = 2.0 * mu * (F - R) + coef[..., None, None] * G
    cache = (F, U, sig, V, R, G, J)
    return P, cache


def _corotated_stress_adjoint(cache, Pbar, mu, lam):
    F, U, sig, V, R, G, J = cache
    Fbar = 2.0 * mu * Pbar
    Fbar += la.rotation_adjoint_batch(U, sig, V, -2.0 * mu * Pbar)
    gdot = np.sum(G * Pbar, axis=(-2, -1))
    Jbar = lam * (2.0 * J - 1.0) * gdot
    Fbar += Jbar[..., None, None] * la.cof3(F)
    coef = lam * J * (J - 1.0)
    Fbar += la.invt_adjoint_batch(G, coef[..., None, None] * Pbar)
    grads = {
        "mu": float(np.sum(2.0 * (F - R) * Pbar)),
        "lam": float(np.sum(J * (J - 1.0) * gdot)),
    }
    return Fbar, grads


# --------------------------------------------------------------------------
# Hencky-strain elasticity (Kirchhoff stress)


def _hencky_stress_batch(F, mu, lam):
    U, sig, V = la.svd3_batch(F)
    _check_positive_sigma(sig)
    eps = np.log(sig)
    tr = eps.sum(axis=-1)
    k = 2.0 * mu * eps + lam * tr[..., None]
    tau = U @ (k[..., :, None] * la.transpose(U))
    cache = (U, sig, V, eps, tr, k)
    return tau, cache


def _hencky_stress_adjoint(cache, taubar, mu, lam):
    U, sig, V, eps, tr, k = cache
    DD = 2.0 * mu * _log_divided_difference(sig)
    Fbar, kbar = la.sym_spectral_map_adjoint_batch(U, sig, V, k, taubar, DD)
    epsbar = 2.0 * mu * kbar + lam * kbar.sum(axis=-1, keepdims=True)
    Fbar += la.sigma_adjoint_batch(U, V, epsbar / sig)
    grads = {
        "mu": float(np.sum(2.0 * eps * kbar)),
        "lam": float(np.sum(tr * kbar.sum(axis=-1))),
    }
    return Fbar, grads


# --------------------------------------------------------------------------
# Hencky-strain return maps (Drucker-Prager / von Mises)


def _dp_alpha(theta):
    s = math.sin(theta)
    return math.sqrt(2.0 / 3.0) * 2.0 * s / (3.0 - s)


def _projection_pieces(eps, tr, dgamma, enorm, project):
    """Projected strain, values g = exp(eps_new) and the strain Jacobian.

    Only meaningful on projecting lanes; inactive lanes use safe denominators.
    """
    safe_norm = np.where(project, enorm, 1.0)
    dg = np.where(project, dgamma, 0.0)
    n = (eps - tr[..., None] / 3.0) / safe_norm[..., None]
    eps_new = eps - dg[..., None] * n
    g = np.exp(eps_new)
    eye = np.eye(3)
    ones = np.ones((3, 3)) / 3.0
    p_dev = eye - ones
    nnt = n[..., :, None] * n[..., None, :]
    jeps = eye - nnt - (dg / safe_norm)[..., None, None] * (p_dev - nnt)
    return n, eps_new, g, jeps


def _return_map_batch(F, mu, lam, *, beta, c):
    """Shared two-branch projection: dgamma = |eps_hat| + beta tr(eps) - c."""
    U, sig, V = la.svd3_batch(F)
    _check_positive_sigma(sig)
    eps = np.log(sig)
    tr = eps.sum(axis=-1)
    ehat = eps - tr[..., None] / 3.0
    enorm = np.sqrt(np.sum(ehat * ehat, axis=-1))
    dgamma = enorm + beta * tr - c
    return U, sig, V, eps, tr, enorm, dgamma


def _dp_return_batch(F, mu, lam, theta):
    alpha = _dp_alpha(theta)
    beta = alpha * (3.0 * lam + 2.0 * mu) / (2.0 * mu)
    U, sig, V, eps, tr, enorm, dgamma = _return_map_batch(F, mu, lam, beta=beta, c=0.0)
    tension = tr > 0.0
    project = (~tension) & (dgamma > 0.0)
    elastic = (~tension) & (~project)

    n, eps_new, g_proj, jeps = _projection_pieces(eps, tr, dgamma, enorm, project)
    # jeps above lacks the beta term of d(dgamma): fold it in for DP
    jeps = jeps - beta * n[..., :, None] * np.ones(3)

    g = np.where(tension[..., None], 1.0, np.where(project[..., None], g_proj, sig))
    H = U @ (g[..., :, None] * la.transpose(V))
    H = np.where(elastic[..., None, None], F, H)
    cache = (F, U, sig, V, eps, tr, enorm, dgamma, n, eps_new, g, jeps, tension, project, elastic, beta, alpha)
    return H, cache


def _vm_return_batch(F, mu, lam, tau_y):
    c = tau_y / (2.0 * mu)
    U, sig, V, eps, tr, enorm, dgamma = _return_map_batch(F, mu, lam, beta=0.0, c=c)
    tension = np.zeros(dgamma.shape, dtype=bool)
    project = dgamma > 0.0
    elastic = ~project

    n, eps_new, g_proj, jeps = _projection_pieces(eps, tr, dgamma, enorm, project)
    g = np.where(project[..., None], g_proj, sig)
    H = U @ (g[..., :, None] * la.transpose(V))
    H = np.where(elastic[..., None, None], F, H)
    cache = (F, U, sig, V, eps, tr, enorm, dgamma, n, eps_new, g, jeps, tension, project, elastic, 0.0, 0.0)
    return H, cache


def _return_map_adjoint(cache, Hbar, mu, lam, *, dp_theta=None, vm_tau_y=None):
    (F, U, sig, V, eps, tr, enorm, dgamma, n, eps_new, g, jeps, tension, project,
     elastic, beta, alpha) = cache

    # dg/dsigma per lane: projecting lanes chain through jeps; tension is constant
    jac = g[..., :, None] * jeps / sig[..., None, :]
    jac = np.where(project[..., None, None], jac, 0.0)
    DD = _value_divided_difference(g, sig, jac)
    DD = np.where(tension[..., None, None], 0.0, DD)

    Fbar, gbar = la.spectral_map_adjoint_batch(U, sig, V, g, Hbar, DD)

    # value path (projecting lanes only): eps_new -> eps -> sigma
    enbar = gbar * g
    epsbar = np.einsum("...ba,...b->...a", jeps, enbar)
    sbar = np.where(project[..., None], epsbar / sig, 0.0)
    Fbar += la.sigma_adjoint_batch(U, V, sbar)
    Fbar = np.where(elastic[..., None, None], Hbar, Fbar)

    grads: dict[str, float] = {}
    ndot = np.where(project, np.sum(enbar * n, axis=-1), 0.0)
    if vm_tau_y is not None:
        # dgamma = |eps_hat| - tau_y/(2 mu)
        grads["yield_stress"] = float(np.sum(ndot) / (2.0 * mu))
        grads["mu"] = float(-np.sum(ndot) * vm_tau_y / (2.0 * mu * mu))
        grads["lam"] = 0.0
    if dp_theta is not None:
        # dgamma = |eps_hat| + beta tr(eps), beta = alpha (3 lam + 2 mu)/(2 mu)
        trdot = np.where(project, tr, 0.0)
        base = -np.sum(trdot * ndot)
        db_dmu = -3.0 * alpha * lam / (2.0 * mu * mu)
        db_dlam = 3.0 * alpha / (2.0 * mu)
        st = math.sin(dp_theta)
        dalpha = math.sqrt(2.0 / 3.0) * 6.0 * math.cos(dp_theta) / (3.0 - st) ** 2
        db_dtheta = dalpha * (3.0 * lam + 2.0 * mu) / (2.0 * mu)
        grads["mu"] = float(base * db_dmu)
        grads["lam"] = float(base * db_dlam)
        grads["friction_angle"] = float(base * db_dtheta)
    return Fbar, grads


# --------------------------------------------------------------------------
# weakly compressible fluid


def _fluid_stress_batch(F, lam):
    G = la.inv_transpose3_batch(F)
    J = la.det3(F)
    coef = lam * J * (J - 1.0)
    P = coef[..., None, None] * G
    return P, (F, G, J)


def _fluid_stress_adjoint(cache, Pbar, lam):
    F, G, J = cache
    gdot = np.sum(G * Pbar, axis=(-2, -1))
    Jbar = lam * (2.0 * J - 1.0) * gdot
    Fbar = Jbar[..., None, None] * la.cof3(F)
    coef = lam * J * (J - 1.0)
    Fbar += la.invt_adjoint_batch(G, coef[..., None, None] * Pbar)
    return Fbar, {"lam": float(np.sum(J * (J - 1.0) * gdot))}


def _fluid_return_batch(F):
    J = la.det3(F)
    if np.any(J <= 0.0):
        raise InvalidDeformation(f"non-positive volume ratio (min {float(J.min()):.3e})")
    H = np.cbrt(J)[..., None, None] * np.eye(3)
    return H, (F, J)


def _fluid_return_adjoint(cache, Hbar):
    F, J = cache
    trbar = Hbar[..., 0, 0] + Hbar[..., 1, 1] + Hbar[..., 2, 2]
    Jbar = trbar / (3.0 * np.cbrt(J) ** 2)
    return Jbar[..., None, None] * la.cof3(F), {}


# --------------------------------------------------------------------------
# law objects


class ConstitutiveLaw:
    """Two-map interface: elastic F -> stress, plastic F_trial -> F_new."""

    stress_is_kirchhoff = False
    trainable: tuple[str, ...] = ()

    def elastic_batch(self, F):
        raise NotImplementedError

    def elastic_adjoint(self, cache, stress_bar):
        raise NotImplementedError

    def plastic_batch(self, F):
        return F, None

    def plastic_adjoint(self, cache, Fnew_bar):
        return Fnew_bar, {}

    # scalar convenience surface
    def elastic(self, F: la.Mat3) -> la.Mat3:
        return self.elastic_batch(F[None])[0][0]

    def plastic(self, F: la.Mat3) -> la.Mat3:
        return self.plastic_batch(F[None])[0][0]

    def kirchhoff_batch(self, F):
        """Elastic stress converted to Kirchhoff for the grid force term."""
        stress, cache = self.elastic_batch(F)
        if self.stress_is_kirchhoff:
            return stress, (cache, None)
        tau = stress @ la.transpose(F)
        return tau, (cache, (F, stress))

    def kirchhoff_adjoint(self, kcache, taubar):
        cache, conv = kcache
        if conv is None:
            return self.elastic_adjoint(cache, taubar)
        F, P = conv
        Fbar, grads = self.elastic_adjoint(cache, taubar @ F)
        Fbar = Fbar + la.transpose(taubar) @ P
        return Fbar, grads

    def parameters(self) -> dict[str, np.ndarray]:
        """Live parameter arrays keyed by name; empty unless trainable."""
        return {}


@dataclass(frozen=True)
class JelloLaw(ConstitutiveLaw):
    """Fixed corotated hyperelasticity with an identity return map."""

    elastic_params: LameParams

    def elastic_batch(self, F):
        p = self.elastic_params
        return _corotated_stress_batch(F, p.mu, p.lam)

    def elastic_adjoint(self, cache, Pbar):
        p = self.elastic_params
        return _corotated_stress_adjoint(cache, Pbar, p.mu, p.lam)


@dataclass(frozen=True)
class SandLaw(ConstitutiveLaw):
    """Hencky-strain elasticity with the Drucker-Prager yield condition."""

    elastic_params: LameParams
    plastic_params: PlasticParams

    stress_is_kirchhoff = True

    def elastic_batch(self, F):
        p = self.elastic_params
        return _hencky_stress_batch(F, p.mu, p.lam)

    def elastic_adjoint(self, cache, taubar):
        p = self.elastic_params
        return _hencky_stress_adjoint(cache, taubar, p.mu, p.lam)

    def plastic_batch(self, F):
        p, q = self.elastic_params, self.plastic_params
        return _dp_return_batch(F, p.mu, p.lam, q.friction_angle)

    def plastic_adjoint(self, cache, Fnew_bar):
        p, q = self.elastic_params, self.plastic_params
        return _return_map_adjoint(cache, Fnew_bar, p.mu, p.lam, dp_theta=q.friction_angle)


@dataclass(frozen=True)
class PlasticineLaw(ConstitutiveLaw):
    """Hencky-strain elasticity with the von Mises yield condition."""

    elastic_params: LameParams
    plastic_params: PlasticParams

    stress_is_kirchhoff = True

    def elastic_batch(self, F):
        p = self.elastic_params
        return _hencky_stress_batch(F, p.mu, p.lam)

    def elastic_adjoint(self, cache, taubar):
        p = self.elastic_params
        return _hencky_stress_adjoint(cache, taubar, p.mu, p.lam)

    def plastic_batch(self, F):
        p, q = self.elastic_params, self.plastic_params
        return _vm_return_batch(F, p.mu, p.lam, q.yield_stress)

    def plastic_adjoint(self, cache, Fnew_bar):
        p, q = self.elastic_params, self.plastic_params
        return _return_map_adjoint(cache, Fnew_bar, p.mu, p.lam, vm_tau_y=q.yield_stress)


@dataclass(frozen=True)
class WaterLaw(ConstitutiveLaw):
    """Weakly compressible fluid: volume-penalty stress, hydrostatic return map."""

    lam: float = DEFAULT_WATER_LAM

    def elastic_batch(self, F):
        return _fluid_stress_batch(F, self.lam)

    def elastic_adjoint(self, cache, Pbar):
        return _fluid_stress_adjoint(cache, Pbar, self.lam)

    def plastic_batch(self, F):
        return _fluid_return_batch(F)

    def plastic_adjoint(self, cache, Fnew_bar):
        return _fluid_return_adjoint(cache, Fnew_bar)


@dataclass(frozen=True)
class ZeroStressLaw(ConstitutiveLaw):
    """Stress-free material with identity return; useful in transfer tests."""

    def elastic_batch(self, F):
        return np.zeros_like(F), None

    def elastic_adjoint(self, cache, Pbar):
        return np.zeros_like(Pbar), {}


# spec-level scalar operations -----------------------------------------------


def fixed_corotated_stress(F: la.Mat3, p: LameParams) -> la.Mat3:
    """First Piola-Kirchhoff stress of the fixed corotated model."""
    return _corotated_stress_batch(F[None], p.mu, p.lam)[0][0]


def stvk_hencky_stress(F: la.Mat3, p: LameParams) -> la.Mat3:
    """Kirchhoff stress of the Hencky-strain (Saint Venant-Kirchhoff style) model."""
    return _hencky_stress_batch(F[None], p.mu, p.lam)[0][0]


def drucker_prager_return(F_trial: la.Mat3, p: LameParams, q: PlasticParams) -> la.Mat3:
    return _dp_return_batch(F_trial[None], p.mu, p.lam, q.friction_angle)[0][0]


def von_mises_return(F_trial: la.Mat3, p: LameParams, q: PlasticParams) -> la.Mat3:
    return _vm_return_batch(F_trial[None], p.mu, p.lam, q.yield_stress)[0][0]


def fluid_stress(F: la.Mat3, p: LameParams) -> la.Mat3:
    return _fluid_stress_batch(F[None], p.lam)[0][0]


def fluid_return(F_trial: la.Mat3) -> la.Mat3:
    return _fluid_return_batch(F_trial[None])[0][0]


ENVIRONMENTS = ("jello", "sand", "plasticine", "water")


def make_environment_law(
    name: str,
    youngs_modulus: float = DEFAULT_YOUNGS,
    poissons_ratio: float = DEFAULT_POISSON,
    friction_angle: float = DEFAULT_FRICTION_ANGLE,
    yield_stress: float = DEFAULT_YIELD_STRESS,
    water_lam: float = DEFAULT_WATER_LAM,
) -> ConstitutiveLaw:
    """Build one of the named material environments with its default parameters."""
    lame = LameParams.from_youngs(youngs_modulus, poissons_ratio)
    if name == "jello":
        return JelloLaw(elastic_params=lame)
    if name == "sand":
        return SandLaw(elastic_params=lame, plastic_params=PlasticParams(friction_angle=friction_angle))
    if name == "plasticine":
        return PlasticineLaw(elastic_params=lame, plastic_params=PlasticParams(yield_stress=yield_stress))
    if name == "water":
        return WaterLaw(lam=water_lam)
    raise ValueError(f"unknown environment {name!r}; expected one of {ENVIRONMENTS}")


def with_trainable(law: ConstitutiveLaw, names: tuple[str, ...]) -> ConstitutiveLaw:
    """Copy of an analytic law with the given physical parameters marked trainable."""
    new = replace(law)
    object.__setattr__(new, "trainable", tuple(names))
    return new
