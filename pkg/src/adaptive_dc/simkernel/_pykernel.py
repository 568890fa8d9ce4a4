"""Pure-Python fallback for ``_ckernel``.

Scalar loops over Python floats in the same operation order as the compiled
kernel, so the two backends agree bit for bit. Roughly two orders of
magnitude slower.
"""
from __future__ import annotations

import math

import numpy as np

C1, C2, C3 = 0, 1, 2


class _Model:
    __slots__ = ("n", "ctrl", "L", "R", "C", "Y", "Tphi", "Ttheta", "Trhat", "Teta",
                 "Kz", "W", "Vstar", "g2", "adj", "dly", "dv", "links")

    def __init__(self, model):
        (n, ctrl, L, R, C, Y, Tphi, Ttheta, Trhat, Teta, Kz, W, Vstar, g2, adj, dly, dv) = model
        self.n = int(n)
        self.ctrl = int(ctrl)
        self.L = [float(v) for v in L]
        self.R = [float(v) for v in R]
        self.C = float(C)
        self.Y = float(Y)
        self.Tphi = [float(v) for v in Tphi]
        self.Ttheta = [float(v) for v in Ttheta]
        self.Trhat = [float(v) for v in Trhat]
        self.Teta = [float(v) for v in Teta]
        self.Kz = [float(v) for v in Kz]
        self.W = [float(v) for v in W]
        self.Vstar = float(Vstar)
        self.g2 = [float(v) for v in g2]
        adj = np.asarray(adj).reshape(-1)
        dly = np.asarray(dly).reshape(-1)
        self.adj = [bool(v) for v in adj]
        self.dly = [int(v) for v in dly]
        self.dv = int(dv)
        n = self.n
        self.links = [[(j, i * n + j) for j in range(n) if self.adj[i * n + j]] for i in range(n)]


def _rhs(m: _Model, I_ell: float, x, dx, u, Ifro, thfro, Vfro: float, nz):
    n = m.n
    ph0 = n + 1
    th0 = 2 * n + 1
    rh0 = 3 * n + 1
    et0 = 4 * n + 1
    W = m.W
    if m.dv == 0:
        Vm = x[n] + nz[n]
    else:
        Vm = Vfro
    for i in range(n):
        Im_i = x[i] + nz[i]
        sth = 0.0
        sI = 0.0
        th_i = x[th0 + i]
        for j, ij in m.links[i]:
            if m.dly[ij] == 0:
                thj = x[th0 + j]
                Ij = x[j] + nz[j]
            else:
                thj = thfro[ij]
                Ij = Ifro[ij]
            sth = sth + (th_i - thj)
            sI = sI + (W[i] * Im_i - W[j] * Ij)
        if m.ctrl == C1:
            psi = -(Vm - m.Vstar) - W[i] * sth
            F = psi / m.Tphi[i]
            zi = Im_i - x[ph0 + i]
            u[i] = -m.Kz[i] * zi + x[rh0 + i] * Im_i + m.Vstar + F * x[et0 + i] - W[i] * sth
            dx[ph0 + i] = F
            dx[th0 + i] = sI / m.Ttheta[i]
            dx[rh0 + i] = -Im_i * zi / m.Trhat[i]
            dx[et0 + i] = -F * zi / m.Teta[i]
        elif m.ctrl == C2:
            u[i] = m.Vstar - m.g2[i] * Im_i
            dx[ph0 + i] = 0.0
            dx[th0 + i] = 0.0
            dx[rh0 + i] = 0.0
            dx[et0 + i] = 0.0
        else:
            u[i] = m.Vstar + m.g2[i] * Im_i - W[i] * sth
            dx[ph0 + i] = 0.0
            dx[th0 + i] = sI / m.Ttheta[i]
            dx[rh0 + i] = 0.0
            dx[et0 + i] = 0.0
    sumI = 0.0
    for i in range(n):
        sumI = sumI + x[i]
        dx[i] = (-x[n] - m.R[i] * x[i] + u[i]) / m.L[i]
    dx[n] = (sumI - I_ell - m.Y * x[n]) / m.C


def rhs(model, x, I_ell):
    m = _Model(model)
    n = m.n
    xs = [float(v) for v in x]
    dx = [0.0] * (5 * n + 1)
    u = [0.0] * n
    zeros = [0.0] * (n * n + n + 1)
    _rhs(m, float(I_ell), xs, dx, u, zeros, zeros, 0.0, zeros)
    return np.array(dx), np.array(u)


def advance(model, x, hist, k0, nsteps, h, method, I_ell, noise,
            record_every, rec_x, rec_u, rec_pos, final=False):
    m = _Model(model)
    n = m.n
    N = 5 * n + 1
    depth = hist.shape[0]
    use_noise = noise.shape[0] > 0
    h = float(h)
    I_ell = float(I_ell)
    half = 0.5 * h
    h6 = h / 6.0
    xp = [float(v) for v in x]
    hl = hist.tolist()
    k1 = [0.0] * N
    k2 = [0.0] * N
    k3 = [0.0] * N
    k4 = [0.0] * N
    xs = [0.0] * N
    u = [0.0] * n
    ud = [0.0] * n
    Ifro = [0.0] * (n * n)
    thfro = [0.0] * (n * n)
    Vfro = 0.0
    delayed = [(i, j, i * n + j, m.dly[i * n + j]) for i in range(n) for j in range(n)
               if m.adj[i * n + j] and m.dly[i * n + j] > 0]
    zero_nz = [0.0] * (n + 1)
    status, fail_k = 0, -1
    total = 1 if final else int(nsteps)
    rec_cap = rec_x.shape[0]
    cols = range(N)
    for s in range(total):
        k = k0 + s
        nz = [float(v) for v in noise[s]] if use_noise else zero_nz
        row = hl[k % depth]
        for i in range(n):
            row[i] = xp[i] + nz[i]
            row[n + i] = xp[2 * n + 1 + i]
        row[2 * n] = xp[n] + nz[n]
        for i, j, ij, d in delayed:
            rd = hl[(k - d) % depth]
            Ifro[ij] = rd[j]
            thfro[ij] = rd[n + j]
        if m.dv > 0:
            Vfro = hl[(k - m.dv) % depth][2 * n]

        _rhs(m, I_ell, xp, k1, u, Ifro, thfro, Vfro, nz)
        if k % record_every == 0 and rec_pos < rec_cap:
            rec_x[rec_pos, :] = xp
            rec_u[rec_pos, :] = u
            rec_pos += 1
        if final:
            break

        if method == 0:
            for c in cols:
                xs[c] = xp[c] + half * k1[c]
            _rhs(m, I_ell, xs, k2, ud, Ifro, thfro, Vfro, nz)
            for c in cols:
                xs[c] = xp[c] + half * k2[c]
            _rhs(m, I_ell, xs, k3, ud, Ifro, thfro, Vfro, nz)
            for c in cols:
                xs[c] = xp[c] + h * k3[c]
            _rhs(m, I_ell, xs, k4, ud, Ifro, thfro, Vfro, nz)
            for c in cols:
                xp[c] = xp[c] + h6 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c])
        else:
            for c in cols:
                xp[c] = xp[c] + h * k1[c]
        if not all(math.isfinite(v) for v in xp):
            status, fail_k = 1, k
            break
    x[:] = xp
    hist[:, :] = np.asarray(hl)
    if status:
        return status, fail_k, rec_pos
    return 0, k0 + (0 if final else int(nsteps)), rec_pos
