"""Compiled inner loops for the per-timestep hot path.

The numpy functions in :mod:`fields` and :mod:`bacteria` define the rules; the
kernels here implement the same arithmetic in single fused passes.  Tests check
the two agree.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_U30 = np.uint64(30)
_U27 = np.uint64(27)
_U31 = np.uint64(31)
_U11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0


@njit(cache=True, inline="always")
def _mix(x):
    x = x + _GOLDEN
    x = (x ^ (x >> _U30)) * _M1
    x = (x ^ (x >> _U27)) * _M2
    return x ^ (x >> _U31)


@njit(cache=True, inline="always")
def _uniform(s, key):
    h = _mix(_mix(np.uint64(key) ^ s))
    return float(h >> _U11) * _INV53


@njit(cache=True, inline="always")
def _logistic(x):
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@njit(cache=True)
def field_step(c, r, courant, decay, supply, target):
    """Diffusion (zero-flux walls), +x upwind advection, decay, supply relaxation."""
    nz, ny, nx = c.shape
    d = np.empty_like(c)
    for k in range(nz):
        for j in range(ny):
            for i in range(nx):
                v = c[k, j, i]
                nb = (c[k, j, i + 1] if i + 1 < nx else v) + (c[k, j, i - 1] if i > 0 else v)
                nb += (c[k, j + 1, i] if j + 1 < ny else v) + (c[k, j - 1, i] if j > 0 else v)
                nb += (c[k + 1, j, i] if k + 1 < nz else v) + (c[k - 1, j, i] if k > 0 else v)
                d[k, j, i] = (1.0 - 6.0 * r) * v + r * nb
    out = np.empty_like(c)
    for k in range(nz):
        for j in range(ny):
            for i in range(nx):
                v = (1.0 - courant) * d[k, j, i]
                if i > 0:
                    v += courant * d[k, j, i - 1]
                v *= decay
                if supply > 0.0:
                    v = v + supply * (target - v)
                    if v < 0.0:
                        v = 0.0
                out[k, j, i] = v
    return out


@njit(cache=True)
def withdraw_sequential(flat, idx, req, vol):
    """Agent-order withdrawals; each grant is capped by what is left in the voxel."""
    n = idx.shape[0]
    granted = np.empty(n)
    for a in range(n):
        v = idx[a]
        avail = flat[v] * vol
        g = req[a] if req[a] < avail else avail
        granted[a] = g
        left = flat[v] - g / vol
        flat[v] = left if left > 0.0 else 0.0
    return granted


@njit(cache=True, inline="always")
def _voxel(p0, p1, p2, inv_h, nx, ny, nz):
    i = int(math.ceil(p0 * inv_h)) - 1
    j = int(math.ceil(p1 * inv_h)) - 1
    k = int(math.ceil(p2 * inv_h)) - 1
    i = min(max(i, 0), nx - 1)
    j = min(max(j, 0), ny - 1)
    k = min(max(k, 0), nz - 1)
    return i + nx * (j + ny * k)


@njit(cache=True)
def voxel_indices(pos, inv_h, nx, ny, nz):
    out = np.empty(pos.shape[0], dtype=np.int64)
    for a in range(pos.shape[0]):
        out[a] = _voxel(pos[a, 0], pos[a, 1], pos[a, 2], inv_h, nx, ny, nz)
    return out


@njit(cache=True)
def agents_step(pos, heading, m, a, ids, ca, cr, inv_h, nx, ny, nz, extent,
                k_R, k_B, T0, gamma_t, a0, N_r, K_a, K_r, alpha_m, m0, speed, dt,
                s_tumble, s_z, s_phi):
    """Sense, adapt, tumble-or-run and reflect every agent; returns new voxel indices."""
    n = pos.shape[0]
    new_pos = np.empty_like(pos)
    new_head = np.empty_like(heading)
    new_m = np.empty(n)
    new_a = np.empty(n)
    new_idx = np.empty(n, dtype=np.int64)
    for q in range(n):
        v = _voxel(pos[q, 0], pos[q, 1], pos[q, 2], inv_h, nx, ny, nz)
        mq = m[q] + dt * (k_R * (1.0 - a[q]) - k_B * a[q])
        f = -alpha_m * (mq - m0) + math.log1p(ca[v] / K_a) - math.log1p(cr[v] / K_r)
        aq = _logistic(-N_r * f)
        new_m[q] = mq
        new_a[q] = aq
        p_tumble = -math.expm1(-(T0 * math.exp(gamma_t * (aq - a0))) * dt)
        hx, hy, hz = heading[q, 0], heading[q, 1], heading[q, 2]
        if _uniform(s_tumble, ids[q]) < p_tumble:
            z = 2.0 * _uniform(s_z, ids[q]) - 1.0
            phi = 2.0 * math.pi * _uniform(s_phi, ids[q])
            rho = math.sqrt(max(0.0, 1.0 - z * z))
            hx, hy, hz = rho * math.cos(phi), rho * math.sin(phi), z
            nrm = math.sqrt(hx * hx + hy * hy + hz * hz)
            hx, hy, hz = hx / nrm, hy / nrm, hz / nrm
        h3 = (hx, hy, hz)
        for ax in range(3):
            x = pos[q, ax] + speed * dt * h3[ax]
            hd = h3[ax]
            for _ in range(4):
                if x < 0.0:
                    x = -x
                    hd = -hd
                elif x > extent[ax]:
                    x = 2.0 * extent[ax] - x
                    hd = -hd
                else:
                    break
            new_pos[q, ax] = min(max(x, 0.0), extent[ax])
            new_head[q, ax] = hd
        new_idx[q] = _voxel(new_pos[q, 0], new_pos[q, 1], new_pos[q, 2], inv_h, nx, ny, nz)
    return new_pos, new_head, new_m, new_a, new_idx
