"""Numba kernel backend.

Scalar-loop ``@njit`` implementations of the hot kernels: batched 3x3 SVD
(cyclic Jacobi on F^T F with one-sided recovery of U) and the particle-grid
transfers with their adjoints. Loops run in fixed particle order, so scatter
accumulation is deterministic.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

BACKEND_NAME = "numba"


@njit(cache=True)
def _svd3(F, U, sig, V):
    # A = F^T F, symmetric PSD
    a00 = F[0, 0] * F[0, 0] + F[1, 0] * F[1, 0] + F[2, 0] * F[2, 0]
    a11 = F[0, 1] * F[0, 1] + F[1, 1] * F[1, 1] + F[2, 1] * F[2, 1]
    a22 = F[0, 2] * F[0, 2] + F[1, 2] * F[1, 2] + F[2, 2] * F[2, 2]
    a01 = F[0, 0] * F[0, 1] + F[1, 0] * F[1, 1] + F[2, 0] * F[2, 1]
    a02 = F[0, 0] * F[0, 2] + F[1, 0] * F[1, 2] + F[2, 0] * F[2, 2]
    a12 = F[0, 1] * F[0, 2] + F[1, 1] * F[1, 2] + F[2, 1] * F[2, 2]
    A = np.empty((3, 3))
    A[0, 0] = a00
    A[1, 1] = a11
    A[2, 2] = a22
    A[0, 1] = A[1, 0] = a01
    A[0, 2] = A[2, 0] = a02
    A[1, 2] = A[2, 1] = a12

    for i in range(3):
        for j in range(3):
            V[i, j] = 1.0 if i == j else 0.0

    # cyclic Jacobi sweeps; 3x3 converges in a handful of sweeps
    for _ in range(30):
        off = A[0, 1] ** 2 + A[0, 2] ** 2 + A[1, 2] ** 2
        diag = A[0, 0] ** 2 + A[1, 1] ** 2 + A[2, 2] ** 2
        if off <= 1e-60 * (diag + 1e-300):
            break
        for p in range(2):
            for q in range(p + 1, 3):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                tau = (A[q, q] - A[p, p]) / (2.0 * apq)
                if tau >= 0.0:
                    t = 1.0 / (tau + math.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + math.sqrt(1.0 + tau * tau))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                app = A[p, p]
                aqq = A[q, q]
                A[p, p] = app - t * apq
                A[q, q] = aqq + t * apq
                A[p, q] = 0.0
                A[q, p] = 0.0
                for r in range(3):
                    if r != p and r != q:
                        arp = A[r, p]
                        arq = A[r, q]
                        A[r, p] = c * arp - s * arq
                        A[p, r] = A[r, p]
                        A[r, q] = s * arp + c * arq
                        A[q, r] = A[r, q]
                for r in range(3):
                    vrp = V[r, p]
                    vrq = V[r, q]
                    V[r, p] = c * vrp - s * vrq
                    V[r, q] = s * vrp + c * vrq

    lam0 = max(A[0, 0], 0.0)
    lam1 = max(A[1, 1], 0.0)
    lam2 = max(A[2, 2], 0.0)

    # sort eigenvalues descending; track permutation parity to keep det(V) = +1
    i0, i1, i2 = 0, 1, 2
    l0, l1, l2 = lam0, lam1, lam2
    if l0 < l1:
        l0, l1 = l1, l0
        i0, i1 = i1, i0
    if l0 < l2:
        l0, l2 = l2, l0
        i0, i2 = i2, i0
    if l1 < l2:
        l1, l2 = l2, l1
        i1, i2 = i2, i1
    odd = (i0, i1, i2) in ((0, 2, 1), (1, 0, 2), (2, 1, 0))

    Vs = np.empty((3, 3))
    for r in range(3):
        Vs[r, 0] = V[r, i0]
        Vs[r, 1] = V[r, i1]
        Vs[r, 2] = V[r, i2]
    if odd:
        Vs[0, 2] = -Vs[0, 2]
        Vs[1, 2] = -Vs[1, 2]
        Vs[2, 2] = -Vs[2, 2]
    for r in range(3):
        V[r, 0] = Vs[r, 0]
        V[r, 1] = Vs[r, 1]
        V[r, 2] = Vs[r, 2]

    # one-sided recovery: columns of B = F V are sigma_i * u_i
    B = np.empty((3, 3))
    for r in range(3):
        for cidx in range(3):
            B[r, cidx] = F[r, 0] * V[0, cidx] + F[r, 1] * V[1, cidx] + F[r, 2] * V[2, cidx]

    fnorm = math.sqrt(l0)  # spectral norm of F
    eps_len = 1e-14 * fnorm

    n1 = math.sqrt(B[0, 0] ** 2 + B[1, 0] ** 2 + B[2, 0] ** 2)
    if n1 > eps_len and n1 > 0.0:
        u10 = B[0, 0] / n1
        u11 = B[1, 0] / n1
        u12 = B[2, 0] / n1
    else:
        u10, u11, u12 = 1.0, 0.0, 0.0

    dot12 = B[0, 1] * u10 + B[1, 1] * u11 + B[2, 1] * u12
    b20 = B[0, 1] - dot12 * u10
    b21 = B[1, 1] - dot12 * u11
    b22 = B[2, 1] - dot12 * u12
    n2 = math.sqrt(b20 * b20 + b21 * b21 + b22 * b22)
    if n2 > eps_len and n2 > 0.0:
        u20 = b20 / n2
        u21 = b21 / n2
        u22 = b22 / n2
    else:
        # pick the axis least aligned with u1 and orthogonalize
        a0, a1, a2 = abs(u10), abs(u11), abs(u12)
        if a0 <= a1 and a0 <= a2:
            e0, e1, e2 = 1.0, 0.0, 0.0
        elif a1 <= a2:
            e0, e1, e2 = 0.0, 1.0, 0.0
        else:
            e0, e1, e2 = 0.0, 0.0, 1.0
        de = e0 * u10 + e1 * u11 + e2 * u12
        u20 = e0 - de * u10
        u21 = e1 - de * u11
        u22 = e2 - de * u12
        nn = math.sqrt(u20 * u20 + u21 * u21 + u22 * u22)
        u20 /= nn
        u21 /= nn
        u22 /= nn

    u30 = u11 * u22 - u12 * u21
    u31 = u12 * u20 - u10 * u22
    u32 = u10 * u21 - u11 * u20

    U[0, 0], U[1, 0], U[2, 0] = u10, u11, u12
    U[0, 1], U[1, 1], U[2, 1] = u20, u21, u22
    U[0, 2], U[1, 2], U[2, 2] = u30, u31, u32

    sig[0] = math.sqrt(l0)
    sig[1] = math.sqrt(l1)
    s3 = math.sqrt(l2)
    if u30 * B[0, 2] + u31 * B[1, 2] + u32 * B[2, 2] < 0.0:
        s3 = -s3
    sig[2] = s3


@njit(cache=True)
def svd3_batch(F):
    n = F.shape[0]
    U = np.empty((n, 3, 3))
    sig = np.empty((n, 3))
    V = np.empty((n, 3, 3))
    for i in range(n):
        _svd3(F[i], U[i], sig[i], V[i])
    return U, sig, V


@njit(cache=True, inline="always")
def _axis_stencil(xs, h, res):
    p = xs / h
    b = int(math.floor(p - 0.5))
    if b < 0:
        b = 0
    elif b > res - 3:
        b = res - 3
    return b, p - b


@njit(cache=True)
def p2g(x, v, C, tau, mass, vol0, h, res):
    n = x.shape[0]
    m_nodes = res * res * res
    grid_m = np.zeros(m_nodes)
    grid_mom = np.zeros((m_nodes, 3))
    grid_f = np.zeros((m_nodes, 3))
    k = 4.0 / (h * h)
    wx = np.empty(3)
    wy = np.empty(3)
    wz = np.empty(3)
    for p in range(n):
        bx, fx = _axis_stencil(x[p, 0], h, res)
        by, fy = _axis_stencil(x[p, 1], h, res)
        bz, fz = _axis_stencil(x[p, 2], h, res)
        wx[0] = 0.5 * (1.5 - fx) ** 2
        wx[1] = 0.75 - (fx - 1.0) ** 2
        wx[2] = 0.5 * (fx - 0.5) ** 2
        wy[0] = 0.5 * (1.5 - fy) ** 2
        wy[1] = 0.75 - (fy - 1.0) ** 2
        wy[2] = 0.5 * (fy - 0.5) ** 2
        wz[0] = 0.5 * (1.5 - fz) ** 2
        wz[1] = 0.75 - (fz - 1.0) ** 2
        wz[2] = 0.5 * (fz - 0.5) ** 2
        mp = mass[p]
        vp0, vp1, vp2 = v[p, 0], v[p, 1], v[p, 2]
        kv = k * vol0[p]
        for i in range(3):
            d0 = (i - fx) * h
            for j in range(3):
                d1 = (j - fy) * h
                wij = wx[i] * wy[j]
                row = ((bx + i) * res + (by + j)) * res + bz
                for l in range(3):
                    d2 = (l - fz) * h
                    wt = wij * wz[l]
                    node = row + l
                    grid_m[node] += wt * mp
                    grid_mom[node, 0] += wt * mp * (
                        vp0 + C[p, 0, 0] * d0 + C[p, 0, 1] * d1 + C[p, 0, 2] * d2
                    )
                    grid_mom[node, 1] += wt * mp * (
                        vp1 + C[p, 1, 0] * d0 + C[p, 1, 1] * d1 + C[p, 1, 2] * d2
                    )
                    grid_mom[node, 2] += wt * mp * (
                        vp2 + C[p, 2, 0] * d0 + C[p, 2, 1] * d1 + C[p, 2, 2] * d2
                    )
                    cw = kv * wt
                    grid_f[node, 0] -= cw * (
                        tau[p, 0, 0] * d0 + tau[p, 0, 1] * d1 + tau[p, 0, 2] * d2
                    )
                    grid_f[node, 1] -= cw * (
                        tau[p, 1, 0] * d0 + tau[p, 1, 1] * d1 + tau[p, 1, 2] * d2
                    )
                    grid_f[node, 2] -= cw * (
                        tau[p, 2, 0] * d0 + tau[p, 2, 1] * d1 + tau[p, 2, 2] * d2
                    )
    return grid_m, grid_mom, grid_f


@njit(cache=True)
def g2p(x, grid_v, h, res):
    n = x.shape[0]
    v_new = np.zeros((n, 3))
    C_new = np.zeros((n, 3, 3))
    k = 4.0 / (h * h)
    wx = np.empty(3)
    wy = np.empty(3)
    wz = np.empty(3)
    for p in range(n):
        bx, fx = _axis_stencil(x[p, 0], h, res)
        by, fy = _axis_stencil(x[p, 1], h, res)
        bz, fz = _axis_stencil(x[p, 2], h, res)
        wx[0] = 0.5 * (1.5 - fx) ** 2
        wx[1] = 0.75 - (fx - 1.0) ** 2
        wx[2] = 0.5 * (fx - 0.5) ** 2
        wy[0] = 0.5 * (1.5 - fy) ** 2
        wy[1] = 0.75 - (fy - 1.0) ** 2
        wy[2] = 0.5 * (fy - 0.5) ** 2
        wz[0] = 0.5 * (1.5 - fz) ** 2
        wz[1] = 0.75 - (fz - 1.0) ** 2
        wz[2] = 0.5 * (fz - 0.5) ** 2
        for i in range(3):
            d0 = (i - fx) * h
            for j in range(3):
                d1 = (j - fy) * h
                wij = wx[i] * wy[j]
                row = ((bx + i) * res + (by + j)) * res + bz
                for l in range(3):
                    d2 = (l - fz) * h
                    wt = wij * wz[l]
                    node = row + l
                    vb0 = grid_v[node, 0]
                    vb1 = grid_v[node, 1]
                    vb2 = grid_v[node, 2]
                    v_new[p, 0] += wt * vb0
                    v_new[p, 1] += wt * vb1
                    v_new[p, 2] += wt * vb2
                    kw = k * wt
                    C_new[p, 0, 0] += kw * vb0 * d0
                    C_new[p, 0, 1] += kw * vb0 * d1
                    C_new[p, 0, 2] += kw * vb0 * d2
                    C_new[p, 1, 0] += kw * vb1 * d0
                    C_new[p, 1, 1] += kw * vb1 * d1
                    C_new[p, 1, 2] += kw * vb1 * d2
                    C_new[p, 2, 0] += kw * vb2 * d0
                    C_new[p, 2, 1] += kw * vb2 * d1
                    C_new[p, 2, 2] += kw * vb2 * d2
    return v_new, C_new


@njit(cache=True)
def g2p_adjoint(x, grid_v, vbar_p, Cbar_p, h, res):
    n = x.shape[0]
    grid_vbar = np.zeros_like(grid_v)
    xbar = np.zeros((n, 3))
    k = 4.0 / (h * h)
    wx = np.empty(3)
    wy = np.empty(3)
    wz = np.empty(3)
    gx = np.empty(3)
    gy = np.empty(3)
    gz = np.empty(3)
    for p in range(n):
        bx, fx = _axis_stencil(x[p, 0], h, res)
        by, fy = _axis_stencil(x[p, 1], h, res)
        bz, fz = _axis_stencil(x[p, 2], h, res)
        wx[0] = 0.5 * (1.5 - fx) ** 2
        wx[1] = 0.75 - (fx - 1.0) ** 2
        wx[2] = 0.5 * (fx - 0.5) ** 2
        wy[0] = 0.5 * (1.5 - fy) ** 2
        wy[1] = 0.75 - (fy - 1.0) ** 2
        wy[2] = 0.5 * (fy - 0.5) ** 2
        wz[0] = 0.5 * (1.5 - fz) ** 2
        wz[1] = 0.75 - (fz - 1.0) ** 2
        wz[2] = 0.5 * (fz - 0.5) ** 2
        gx[0] = (fx - 1.5) / h
        gx[1] = -2.0 * (fx - 1.0) / h
        gx[2] = (fx - 0.5) / h
        gy[0] = (fy - 1.5) / h
        gy[1] = -2.0 * (fy - 1.0) / h
        gy[2] = (fy - 0.5) / h
        gz[0] = (fz - 1.5) / h
        gz[1] = -2.0 * (fz - 1.0) / h
        gz[2] = (fz - 0.5) / h
        vb_p0, vb_p1, vb_p2 = vbar_p[p, 0], vbar_p[p, 1], vbar_p[p, 2]
        for i in range(3):
            d0 = (i - fx) * h
            for j in range(3):
                d1 = (j - fy) * h
                row = ((bx + i) * res + (by + j)) * res + bz
                for l in range(3):
                    d2 = (l - fz) * h
                    wt = wx[i] * wy[j] * wz[l]
                    node = row + l
                    vb0 = grid_v[node, 0]
                    vb1 = grid_v[node, 1]
                    vb2 = grid_v[node, 2]
                    cd0 = Cbar_p[p, 0, 0] * d0 + Cbar_p[p, 0, 1] * d1 + Cbar_p[p, 0, 2] * d2
                    cd1 = Cbar_p[p, 1, 0] * d0 + Cbar_p[p, 1, 1] * d1 + Cbar_p[p, 1, 2] * d2
                    cd2 = Cbar_p[p, 2, 0] * d0 + Cbar_p[p, 2, 1] * d1 + Cbar_p[p, 2, 2] * d2
                    grid_vbar[node, 0] += wt * (vb_p0 + k * cd0)
                    grid_vbar[node, 1] += wt * (vb_p1 + k * cd1)
                    grid_vbar[node, 2] += wt * (vb_p2 + k * cd2)
                    wbar = (
                        vb0 * vb_p0
                        + vb1 * vb_p1
                        + vb2 * vb_p2
                        + k * (cd0 * vb0 + cd1 * vb1 + cd2 * vb2)
                    )
                    xbar[p, 0] += wbar * gx[i] * wy[j] * wz[l]
                    xbar[p, 1] += wbar * wx[i] * gy[j] * wz[l]
                    xbar[p, 2] += wbar * wx[i] * wy[j] * gz[l]
                    ctv0 = Cbar_p[p, 0, 0] * vb0 + Cbar_p[p, 1, 0] * vb1 + Cbar_p[p, 2, 0] * vb2
                    ctv1 = Cbar_p[p, 0, 1] * vb0 + Cbar_p[p, 1, 1] * vb1 + Cbar_p[p, 2, 1] * vb2
                    ctv2 = Cbar_p[p, 0, 2] * vb0 + Cbar_p[p, 1, 2] * vb1 + Cbar_p[p, 2, 2] * vb2
                    kw = k * wt
                    xbar[p, 0] -= kw * ctv0
                    xbar[p, 1] -= kw * ctv1
                    xbar[p, 2] -= kw * ctv2
    return grid_vbar, xbar


@njit(cache=True)
def p2g_adjoint(x, v, C, tau, mass, vol0, h, res, mbar, mombar, fbar):
    n = x.shape[0]
    vbar = np.zeros((n, 3))
    Cbar = np.zeros((n, 3, 3))
    taubar = np.zeros((n, 3, 3))
    xbar = np.zeros((n, 3))
    k = 4.0 / (h * h)
    wx = np.empty(3)
    wy = np.empty(3)
    wz = np.empty(3)
    gx = np.empty(3)
    gy = np.empty(3)
    gz = np.empty(3)
    for p in range(n):
        bx, fx = _axis_stencil(x[p, 0], h, res)
        by, fy = _axis_stencil(x[p, 1], h, res)
        bz, fz = _axis_stencil(x[p, 2], h, res)
        wx[0] = 0.5 * (1.5 - fx) ** 2
        wx[1] = 0.75 - (fx - 1.0) ** 2
        wx[2] = 0.5 * (fx - 0.5) ** 2
        wy[0] = 0.5 * (1.5 - fy) ** 2
        wy[1] = 0.75 - (fy - 1.0) ** 2
        wy[2] = 0.5 * (fy - 0.5) ** 2
        wz[0] = 0.5 * (1.5 - fz) ** 2
        wz[1] = 0.75 - (fz - 1.0) ** 2
        wz[2] = 0.5 * (fz - 0.5) ** 2
        gx[0] = (fx - 1.5) / h
        gx[1] = -2.0 * (fx - 1.0) / h
        gx[2] = (fx - 0.5) / h
        gy[0] = (fy - 1.5) / h
        gy[1] = -2.0 * (fy - 1.0) / h
        gy[2] = (fy - 0.5) / h
        gz[0] = (fz - 1.5) / h
        gz[1] = -2.0 * (fz - 1.0) / h
        gz[2] = (fz - 0.5) / h
        mp = mass[p]
        vp0, vp1, vp2 = v[p, 0], v[p, 1], v[p, 2]
        kv = k * vol0[p]
        for i in range(3):
            d0 = (i - fx) * h
            for j in range(3):
                d1 = (j - fy) * h
                row = ((bx + i) * res + (by + j)) * res + bz
                for l in range(3):
                    d2 = (l - fz) * h
                    wt = wx[i] * wy[j] * wz[l]
                    node = row + l
                    mo0 = mombar[node, 0]
                    mo1 = mombar[node, 1]
                    mo2 = mombar[node, 2]
                    fb0 = fbar[node, 0]
                    fb1 = fbar[node, 1]
                    fb2 = fbar[node, 2]
                    wm = wt * mp
                    vbar[p, 0] += wm * mo0
                    vbar[p, 1] += wm * mo1
                    vbar[p, 2] += wm * mo2
                    Cbar[p, 0, 0] += wm * mo0 * d0
                    Cbar[p, 0, 1] += wm * mo0 * d1
                    Cbar[p, 0, 2] += wm * mo0 * d2
                    Cbar[p, 1, 0] += wm * mo1 * d0
                    Cbar[p, 1, 1] += wm * mo1 * d1
                    Cbar[p, 1, 2] += wm * mo1 * d2
                    Cbar[p, 2, 0] += wm * mo2 * d0
                    Cbar[p, 2, 1] += wm * mo2 * d1
                    Cbar[p, 2, 2] += wm * mo2 * d2
                    cw = kv * wt
                    taubar[p, 0, 0] -= cw * fb0 * d0
                    taubar[p, 0, 1] -= cw * fb0 * d1
                    taubar[p, 0, 2] -= cw * fb0 * d2
                    taubar[p, 1, 0] -= cw * fb1 * d0
                    taubar[p, 1, 1] -= cw * fb1 * d1
                    taubar[p, 1, 2] -= cw * fb1 * d2
                    taubar[p, 2, 0] -= cw * fb2 * d0
                    taubar[p, 2, 1] -= cw * fb2 * d1
                    taubar[p, 2, 2] -= cw * fb2 * d2
                    aff0 = vp0 + C[p, 0, 0] * d0 + C[p, 0, 1] * d1 + C[p, 0, 2] * d2
                    aff1 = vp1 + C[p, 1, 0] * d0 + C[p, 1, 1] * d1 + C[p, 1, 2] * d2
                    aff2 = vp2 + C[p, 2, 0] * d0 + C[p, 2, 1] * d1 + C[p, 2, 2] * d2
                    td0 = tau[p, 0, 0] * d0 + tau[p, 0, 1] * d1 + tau[p, 0, 2] * d2
                    td1 = tau[p, 1, 0] * d0 + tau[p, 1, 1] * d1 + tau[p, 1, 2] * d2
                    td2 = tau[p, 2, 0] * d0 + tau[p, 2, 1] * d1 + tau[p, 2, 2] * d2
                    wbar = (
                        mp * (aff0 * mo0 + aff1 * mo1 + aff2 * mo2)
                        - kv * (td0 * fb0 + td1 * fb1 + td2 * fb2)
                        + mp * mbar[node]
                    )
                    xbar[p, 0] += wbar * gx[i] * wy[j] * wz[l]
                    xbar[p, 1] += wbar * wx[i] * gy[j] * wz[l]
                    xbar[p, 2] += wbar * wx[i] * wy[j] * gz[l]
                    ctm0 = C[p, 0, 0] * mo0 + C[p, 1, 0] * mo1 + C[p, 2, 0] * mo2
                    ctm1 = C[p, 0, 1] * mo0 + C[p, 1, 1] * mo1 + C[p, 2, 1] * mo2
                    ctm2 = C[p, 0, 2] * mo0 + C[p, 1, 2] * mo1 + C[p, 2, 2] * mo2
                    xbar[p, 0] -= wm * ctm0
                    xbar[p, 1] -= wm * ctm1
                    xbar[p, 2] -= wm * ctm2
                    ttf0 = tau[p, 0, 0] * fb0 + tau[p, 1, 0] * fb1 + tau[p, 2, 0] * fb2
                    ttf1 = tau[p, 0, 1] * fb0 + tau[p, 1, 1] * fb1 + tau[p, 2, 1] * fb2
                    ttf2 = tau[p, 0, 2] * fb0 + tau[p, 1, 2] * fb1 + tau[p, 2, 2] * fb2
                    xbar[p, 0] += cw * ttf0
                    xbar[p, 1] += cw * ttf1
                    xbar[p, 2] += cw * ttf2
    return vbar, Cbar, taubar, xbar
