"""Pure-numpy kernel backend.

Vectorized twins of the numba kernels: batched 3x3 SVD plus the four
particle-grid transfer kernels (forward and adjoint). Scatter sums use
``np.add.at`` which accumulates in index order, so results are deterministic
for a fixed particle ordering.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "numpy"

# 27 stencil offsets, x-major to match the numba loop nest.
OFFSETS = np.array(
    [(i, j, k) for i in range(3) for j in range(3) for k in range(3)], dtype=np.int64
)


def _det3(m):
    return (
        m[..., 0, 0] * (m[..., 1, 1] * m[..., 2, 2] - m[..., 1, 2] * m[..., 2, 1])
        - m[..., 0, 1] * (m[..., 1, 0] * m[..., 2, 2] - m[..., 1, 2] * m[..., 2, 0])
        + m[..., 0, 2] * (m[..., 1, 0] * m[..., 2, 1] - m[..., 1, 1] * m[..., 2, 0])
    )


def svd3_batch(F):
    """Batched SVD with proper-rotation U, V; any reflection is carried by sigma[2].

    Returns (U, sigma, V) with F = U @ diag(sigma) @ V^T,
    sigma[0] >= sigma[1] >= |sigma[2]|.
    """
    U, s, Vh = np.linalg.svd(F.astype(np.float64))
    V = np.ascontiguousarray(Vh.swapaxes(-1, -2))
    s = np.ascontiguousarray(s)
    neg_u = _det3(U) < 0.0
    if np.any(neg_u):
        U[neg_u, :, 2] *= -1.0
        s[neg_u, 2] *= -1.0
    neg_v = _det3(V) < 0.0
    if np.any(neg_v):
        V[neg_v, :, 2] *= -1.0
        s[neg_v, 2] *= -1.0
    return np.ascontiguousarray(U), s, V


def _stencil(x, h, res):
    """Quadratic B-spline stencil: node ids, weights, weight gradients, offsets."""
    pos = x / h
    base = np.floor(pos - 0.5).astype(np.int64)
    np.clip(base, 0, res - 3, out=base)
    fx = pos - base  # (N, 3), in [0.5, 1.5] for in-domain particles

    wa = np.stack(
        [0.5 * (1.5 - fx) ** 2, 0.75 - (fx - 1.0) ** 2, 0.5 * (fx - 0.5) ** 2], axis=-1
    )  # (N, 3 axes, 3 offsets)
    ga = np.stack([fx - 1.5, -2.0 * (fx - 1.0), fx - 0.5], axis=-1) / h

    oi, oj, ok = OFFSETS[:, 0], OFFSETS[:, 1], OFFSETS[:, 2]
    w = wa[:, 0, oi] * wa[:, 1, oj] * wa[:, 2, ok]  # (N, 27)
    gw = np.stack(
        [
            ga[:, 0, oi] * wa[:, 1, oj] * wa[:, 2, ok],
            wa[:, 0, oi] * ga[:, 1, oj] * wa[:, 2, ok],
            wa[:, 0, oi] * wa[:, 1, oj] * ga[:, 2, ok],
        ],
        axis=-1,
    )  # (N, 27, 3)

    idx = ((base[:, 0, None] + oi) * res + (base[:, 1, None] + oj)) * res + (
        base[:, 2, None] + ok
    )  # (N, 27)
    d = (OFFSETS[None, :, :] - fx[:, None, :]) * h  # node minus particle, (N, 27, 3)
    return idx, w, gw, d


def p2g(x, v, C, tau, mass, vol0, h, res):
    """Scatter mass, APIC momentum and stress/force contributions to the grid."""
    n_nodes = res * res * res
    k = 4.0 / (h * h)
    idx, w, _, d = _stencil(x, h, res)

    grid_m = np.zeros(n_nodes)
    grid_mom = np.zeros((n_nodes, 3))
    grid_f = np.zeros((n_nodes, 3))

    np.add.at(grid_m, idx, w * mass[:, None])
    aff = v[:, None, :] + np.einsum("nab,nob->noa", C, d)
    np.add.at(grid_mom, idx, (w * mass[:, None])[:, :, None] * aff)
    td = np.einsum("nab,nob->noa", tau, d)
    np.add.at(grid_f, idx, (-k * w * vol0[:, None])[:, :, None] * td)
    return grid_m, grid_mom, grid_f


def g2p(x, grid_v, h, res):
    """Gather velocity and the affine velocity matrix from the grid."""
    k = 4.0 / (h * h)
    idx, w, _, d = _stencil(x, h, res)
    vb = grid_v[idx]  # (N, 27, 3)
    v_new = np.einsum("no,noa->na", w, vb)
    C_new = k * np.einsum("no,noa,nob->nab", w, vb, d)
    return v_new, C_new


def g2p_adjoint(x, grid_v, vbar_p, Cbar_p, h, res):
    """Adjoint of g2p: cotangents on grid velocities plus position contributions."""
    k = 4.0 / (h * h)
    idx, w, gw, d = _stencil(x, h, res)
    vb = grid_v[idx]

    cbar_d = np.einsum("nab,nob->noa", Cbar_p, d)  # C̄ d per node
    contrib = w[:, :, None] * (vbar_p[:, None, :] + k * cbar_d)
    grid_vbar = np.zeros_like(grid_v)
    np.add.at(grid_vbar, idx, contrib)

    wbar = np.einsum("noa,na->no", vb, vbar_p) + k * np.einsum("noa,noa->no", cbar_d, vb)
    xbar = np.einsum("no,noa->na", wbar, gw)
    # d = x_node - x: pull the C' dependence on d back to the particle position
    xbar -= k * np.einsum("no,noa->na", w, np.einsum("nba,nob->noa", Cbar_p, vb))
    return grid_vbar, xbar


def p2g_adjoint(x, v, C, tau, mass, vol0, h, res, mbar, mombar, fbar):
    """Adjoint of p2g: cotangents on particle velocity, affine matrix, stress, position."""
    k = 4.0 / (h * h)
    idx, w, gw, d = _stencil(x, h, res)

    mo = mombar[idx]  # (N, 27, 3)
    fb = fbar[idx]
    mb = mbar[idx]  # (N, 27)

    wm = w * mass[:, None]
    vbar = np.einsum("no,noa->na", wm, mo)
    Cbar = mass[:, None, None] * np.einsum("no,noa,nob->nab", w, mo, d)
    taubar = (-k) * vol0[:, None, None] * np.einsum("no,noa,nob->nab", w, fb, d)

    aff = v[:, None, :] + np.einsum("nab,nob->noa", C, d)
    td = np.einsum("nab,nob->noa", tau, d)
    wbar = (
        mass[:, None] * np.einsum("noa,noa->no", aff, mo)
        - k * vol0[:, None] * np.einsum("noa,noa->no", td, fb)
        + mass[:, None] * mb
    )
    xbar = np.einsum("no,noa->na", wbar, gw)
    xbar -= mass[:, None] * np.einsum("no,noa->na", w, np.einsum("nba,nob->noa", C, mo))
    xbar += k * vol0[:, None] * np.einsum("no,noa->na", w, np.einsum("nba,nob->noa", tau, fb))
    return vbar, Cbar, taubar, xbar
