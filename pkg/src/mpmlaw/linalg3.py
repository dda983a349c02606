"""3x3 linear algebra with fixed decomposition conventions and analytic adjoints.

Everything operates on plain float64 ndarrays: a ``Mat3`` is a (3, 3) array, a
``Vec3`` a (3,) array, and batched variants take leading dimensions
(``(..., 3, 3)``). The SVD convention folds reflections into the last singular
value so U and V are always proper rotations: ``sigma[0] >= sigma[1] >=
|sigma[2]|`` and only ``sigma[2]`` may be negative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backend
from .errors import SingularMatrix

Mat3 = np.ndarray
Vec3 = np.ndarray

# |det| below this is treated as an unrecoverable element inversion
DET_EPSILON = 1e-10
# clamp for the 1/(sigma_i^2 - sigma_j^2) adjoint denominators
SVD_EPSILON = 1e-6


@dataclass(frozen=True)
class Svd3:
    """Decomposition F = u @ diag(sigma) @ v.T with proper rotations u, v."""

    u: Mat3
    sigma: Vec3
    v: Mat3


def det3(F: np.ndarray) -> np.ndarray:
    """Cofactor-expansion determinant; accepts a single matrix or a batch."""
    d = (
        F[..., 0, 0] * (F[..., 1, 1] * F[..., 2, 2] - F[..., 1, 2] * F[..., 2, 1])
        - F[..., 0, 1] * (F[..., 1, 0] * F[..., 2, 2] - F[..., 1, 2] * F[..., 2, 0])
        + F[..., 0, 2] * (F[..., 1, 0] * F[..., 2, 1] - F[..., 1, 1] * F[..., 2, 0])
    )
    return d


def cof3(F: np.ndarray) -> np.ndarray:
    """Cofactor matrix, i.e. d(det F)/dF; equals det(F) * F^{-T} when invertible."""
    c = np.empty_like(F)
    c[..., 0, :] = np.cross(F[..., 1, :], F[..., 2, :])
    c[..., 1, :] = np.cross(F[..., 2, :], F[..., 0, :])
    c[..., 2, :] = np.cross(F[..., 0, :], F[..., 1, :])
    return c


def inv_transpose3(F: Mat3) -> Mat3:
    """F^{-T} via cofactors. Raises SingularMatrix below DET_EPSILON."""
    d = det3(F)
    if abs(float(d)) <= DET_EPSILON:
        raise SingularMatrix(f"|det| = {abs(float(d)):.3e} <= {DET_EPSILON}")
    return cof3(F) / d


def inv_transpose3_batch(F: np.ndarray) -> np.ndarray:
    d = det3(F)
    if np.any(np.abs(d) <= DET_EPSILON):
        worst = float(np.min(np.abs(d)))
        raise SingularMatrix(f"min |det| = {worst:.3e} <= {DET_EPSILON}")
    return cof3(F) / d[..., None, None]


def transpose(M: np.ndarray) -> np.ndarray:
    return np.swapaxes(M, -1, -2)


def svd3_batch(F: np.ndarray):
    """Batched SVD under the package convention; dispatches to the active backend."""
    return backend.kernels().svd3_batch(np.ascontiguousarray(F, dtype=np.float64))


def svd3(F: Mat3) -> Svd3:
    """SVD of one matrix; deterministic for identical input bits."""
    U, s, V = svd3_batch(F[None])
    return Svd3(u=U[0], sigma=s[0], v=V[0])


def polar3_batch(F: np.ndarray):
    U, s, V = svd3_batch(F)
    R = U @ transpose(V)
    S = V @ (s[..., :, None] * transpose(V))
    return R, S


def polar3(F: Mat3):
    """Polar decomposition F = R @ S with R a proper rotation, S symmetric."""
    R, S = polar3_batch(F[None])
    return R[0], S[0]


def clamp_signed(x: np.ndarray, eps: float) -> np.ndarray:
    """Replace x with sign(x) * max(|x|, eps), treating sign(0) as +1."""
    return np.where(x >= 0.0, np.maximum(x, eps), np.minimum(x, -eps))


_clamp_signed = clamp_signed


def svd3_adjoint_batch(U, sig, V, dU, dSigma, dV, eps: float = SVD_EPSILON):
    """Reverse-mode SVD: map cotangents of (U, sigma, V) to the input cotangent.

    Degenerate 1/(sigma_j^2 - sigma_i^2) terms are clamped at ``eps``, which
    keeps the output finite (subgradient) near repeated singular values.
    """
    Ut = transpose(U)
    Vt = transpose(V)
    Abar = np.zeros_like(U)
    ii = np.arange(3)
    Abar[..., ii, ii] = dSigma

    pu = Ut @ dU if dU is not None else None
    pv = Vt @ dV if dV is not None else None
    GU = (pu - transpose(pu)) if pu is not None else 0.0
    GV = (pv - transpose(pv)) if pv is not None else 0.0
    if pu is not None or pv is not None:
        sj = sig[..., None, :]
        si = sig[..., :, None]
        den = _clamp_signed(sj * sj - si * si, eps)
        off = (GU * sj + GV * si) / den
        off[..., ii, ii] = 0.0
        Abar = Abar + off
    return U @ Abar @ Vt


def svd3_adjoint(F: Mat3, svd: Svd3, dU: Mat3, dSigma: Vec3, dV: Mat3) -> Mat3:
    """Scalar wrapper around svd3_adjoint_batch (F is accepted for the contract
    ``svd == svd3(F)`` but the formula only needs the decomposition)."""
    return svd3_adjoint_batch(
        svd.u[None],
        svd.sigma[None],
        svd.v[None],
        None if dU is None else dU[None],
        np.zeros(3) if dSigma is None else dSigma,
        None if dV is None else dV[None],
    )[0]


def rotation_adjoint_batch(U, sig, V, Rbar, eps: float = SVD_EPSILON):
    """Adjoint of F -> R = U @ V.T (the polar rotation).

    Uses the analytically cancelled form with 1/(sigma_i + sigma_j)
    denominators, which stays exact for repeated singular values; the clamp
    only engages for near rank-deficient or inverted inputs.
    """
    K = transpose(U) @ Rbar @ V
    KA = K - transpose(K)
    den = _clamp_signed(sig[..., :, None] + sig[..., None, :], eps)
    Abar = KA / den
    ii = np.arange(3)
    Abar[..., ii, ii] = 0.0
    return U @ Abar @ transpose(V)


def sigma_adjoint_batch(U, V, sbar):
    """Adjoint of F -> sigma: exact, d sigma_i = u_i . dF v_i."""
    return U @ (sbar[..., :, None] * transpose(V))


def invt_adjoint_batch(G, Gbar):
    """Adjoint of F -> G = F^{-T} given G itself: Fbar = -G @ Gbar^T @ G."""
    return -G @ transpose(Gbar) @ G


_DIAG = np.arange(3)


def spectral_map_adjoint_batch(U, sig, V, g, Hbar, DD, eps: float = SVD_EPSILON):
    """Adjoint of F -> H = U @ diag(g) @ V.T where g depends only on sigma.

    ``DD`` must hold the divided differences (g_j - g_i)/(sigma_j - sigma_i)
    with the caller's analytic limit substituted near coincident sigmas; that
    is what keeps this form exact where the naive 1/(sigma_j^2 - sigma_i^2)
    quotient degenerates.

    Returns the rotational part of the input cotangent plus ``gbar``, the
    cotangent of the values g (to be chained through dg/dsigma by the caller).
    """
    M = transpose(U) @ Hbar @ V
    SS = (g[..., :, None] + g[..., None, :]) / clamp_signed(
        sig[..., :, None] + sig[..., None, :], eps
    )
    Q1 = 0.5 * (SS + DD)
    Q2 = 0.5 * (DD - SS)
    Abar = Q1 * M + Q2 * transpose(M)
    Abar[..., _DIAG, _DIAG] = 0.0
    gbar = np.stack([M[..., 0, 0], M[..., 1, 1], M[..., 2, 2]], axis=-1)
    return U @ Abar @ transpose(V), gbar


def sym_spectral_map_adjoint_batch(U, sig, V, k, Hbar, DD, eps: float = SVD_EPSILON):
    """Adjoint of F -> H = U @ diag(k) @ U.T (two-sided in U), k = k(sigma).

    ``DD`` holds safe divided differences (k_j - k_i)/(sigma_j - sigma_i).
    Returns the rotational cotangent part and ``kbar``.
    """
    W = transpose(U) @ Hbar @ U
    Ssym = W + transpose(W)
    ratio = sig[..., None, :] / clamp_signed(sig[..., :, None] + sig[..., None, :], eps)
    Abar = Ssym * DD * ratio
    Abar[..., _DIAG, _DIAG] = 0.0
    kbar = np.stack([W[..., 0, 0], W[..., 1, 1], W[..., 2, 2]], axis=-1)
    return U @ Abar @ transpose(V), kbar
