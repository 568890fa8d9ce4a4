# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled fixed-step integrator for the closed loop.

Mirrors ``_pykernel`` operation for operation, so both backends produce
bit-identical trajectories.

State layout (length 5n+1): I[0:n], V, phi[n+1:2n+1], theta, rhat, eta.
History row layout (length 2n+1): measured I[0:n], theta[n:2n], measured V.
"""
from libc.math cimport isfinite
from libc.stdlib cimport malloc, free

import numpy as np

DEF C1 = 0
DEF C2 = 1
DEF C3 = 2


cdef struct Model:
    int n
    int ctrl
    const double* L
    const double* R
    double C
    double Y
    const double* Tphi
    const double* Ttheta
    const double* Trhat
    const double* Teta
    const double* Kz
    const double* W
    double Vstar
    const double* g2
    const int* adj
    const long* dly
    long dv


cdef void _rhs(const Model* m, double I_ell, const double* x, double* dx, double* u,
               const double* Ifro, const double* thfro, double Vfro,
               const double* nz) noexcept nogil:
    cdef int n = m.n
    cdef int i, j, ij
    cdef int ph0 = n + 1
    cdef int th0 = 2 * n + 1
    cdef int rh0 = 3 * n + 1
    cdef int et0 = 4 * n + 1
    cdef double Vm, Im_i, Ij, thj, sth, sI, psi, F, zi, sumI
    if m.dv == 0:
        Vm = x[n] + nz[n]
    else:
        Vm = Vfro
    for i in range(n):
        Im_i = x[i] + nz[i]
        sth = 0.0
        sI = 0.0
        for j in range(n):
            ij = i * n + j
            if m.adj[ij]:
                if m.dly[ij] == 0:
                    thj = x[th0 + j]
                    Ij = x[j] + nz[j]
                else:
                    thj = thfro[ij]
                    Ij = Ifro[ij]
                sth = sth + (x[th0 + i] - thj)
                sI = sI + (m.W[i] * Im_i - m.W[j] * Ij)
        if m.ctrl == C1:
            psi = -(Vm - m.Vstar) - m.W[i] * sth
            F = psi / m.Tphi[i]
            zi = Im_i - x[ph0 + i]
            u[i] = -m.Kz[i] * zi + x[rh0 + i] * Im_i + m.Vstar + F * x[et0 + i] - m.W[i] * sth
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
            u[i] = m.Vstar + m.g2[i] * Im_i - m.W[i] * sth
            dx[ph0 + i] = 0.0
            dx[th0 + i] = sI / m.Ttheta[i]
            dx[rh0 + i] = 0.0
            dx[et0 + i] = 0.0
    sumI = 0.0
    for i in range(n):
        sumI = sumI + x[i]
        dx[i] = (-x[n] - m.R[i] * x[i] + u[i]) / m.L[i]
    dx[n] = (sumI - I_ell - m.Y * x[n]) / m.C


cdef inline long _ring(long k, long depth) noexcept nogil:
    cdef long r = k % depth
    if r < 0:
        r += depth
    return r


cdef Model _unpack(tuple model, list keep):
    cdef Model m
    cdef const double[::1] L, R, Tphi, Ttheta, Trhat, Teta, Kz, W, g2
    cdef const int[::1] adj
    cdef const long[::1] dly
    (n, ctrl, L_, R_, C, Y, Tphi_, Ttheta_, Trhat_, Teta_, Kz_, W_, Vstar, g2_, adj_, dly_, dv) = model
    L = np.ascontiguousarray(L_, dtype=np.float64)
    R = np.ascontiguousarray(R_, dtype=np.float64)
    Tphi = np.ascontiguousarray(Tphi_, dtype=np.float64)
    Ttheta = np.ascontiguousarray(Ttheta_, dtype=np.float64)
    Trhat = np.ascontiguousarray(Trhat_, dtype=np.float64)
    Teta = np.ascontiguousarray(Teta_, dtype=np.float64)
    Kz = np.ascontiguousarray(Kz_, dtype=np.float64)
    W = np.ascontiguousarray(W_, dtype=np.float64)
    g2 = np.ascontiguousarray(g2_, dtype=np.float64)
    adj = np.ascontiguousarray(adj_, dtype=np.intc).reshape(-1)
    dly = np.ascontiguousarray(dly_, dtype=np.int_).reshape(-1)
    keep.extend([L, R, Tphi, Ttheta, Trhat, Teta, Kz, W, g2, adj, dly])
    m.n = n
    m.ctrl = ctrl
    m.L = &L[0]
    m.R = &R[0]
    m.C = C
    m.Y = Y
    m.Tphi = &Tphi[0]
    m.Ttheta = &Ttheta[0]
    m.Trhat = &Trhat[0]
    m.Teta = &Teta[0]
    m.Kz = &Kz[0]
    m.W = &W[0]
    m.Vstar = Vstar
    m.g2 = &g2[0]
    m.adj = &adj[0]
    m.dly = &dly[0]
    m.dv = dv
    return m


def rhs(tuple model, const double[::1] x, double I_ell):
    """Undelayed, noise-free closed-loop derivative and control voltages."""
    keep = []
    cdef Model m = _unpack(model, keep)
    cdef int n = m.n
    dx = np.empty(5 * n + 1)
    u = np.empty(n)
    zeros = np.zeros(n * n + n + 1)
    cdef double[::1] dxv = dx
    cdef double[::1] uv = u
    cdef double[::1] zv = zeros
    _rhs(&m, I_ell, &x[0], &dxv[0], &uv[0], &zv[0], &zv[0], 0.0, &zv[0])
    return dx, u


def advance(tuple model, double[::1] x, double[:, ::1] hist, long k0, long nsteps,
            double h, int method, double I_ell, double[:, ::1] noise,
            long record_every, double[:, ::1] rec_x, double[:, ::1] rec_u, long rec_pos,
            bint final=False):
    """Advance ``x`` in place by ``nsteps`` steps starting at global step ``k0``.

    Returns ``(status, k, rec_pos)``; ``status`` is 0 on success and 1 when a
    non-finite value appears, in which case ``k`` is the offending step.
    With ``final`` set, only the sample at step ``k0`` is recorded.
    """
    keep = []
    cdef Model m = _unpack(model, keep)
    cdef int n = m.n
    cdef int N = 5 * n + 1
    cdef int H = 2 * n + 1
    cdef long depth = hist.shape[0]
    cdef bint use_noise = noise.shape[0] > 0
    cdef long k, s, row, rd
    cdef int i, j, ij, c
    cdef double half = 0.5 * h
    cdef double h6 = h / 6.0
    cdef double Vfro = 0.0
    cdef int status = 0
    cdef long fail_k = -1
    cdef long total = 1 if final else nsteps
    cdef double* buf = <double*> malloc(sizeof(double) * (9 * N + 2 * n * n + 2 * n + 2))
    if buf == NULL:
        raise MemoryError()
    cdef double* k1 = buf
    cdef double* k2 = buf + N
    cdef double* k3 = buf + 2 * N
    cdef double* k4 = buf + 3 * N
    cdef double* xs = buf + 4 * N
    cdef double* u = buf + 5 * N
    cdef double* ud = buf + 6 * N
    cdef double* Ifro = buf + 7 * N
    cdef double* thfro = Ifro + n * n
    cdef double* nz = thfro + n * n
    cdef double* xp = &x[0]
    try:
        with nogil:
            for s in range(total):
                k = k0 + s
                for c in range(n + 1):
                    nz[c] = noise[s, c] if use_noise else 0.0
                row = _ring(k, depth)
                for i in range(n):
                    hist[row, i] = xp[i] + nz[i]
                    hist[row, n + i] = xp[2 * n + 1 + i]
                hist[row, 2 * n] = xp[n] + nz[n]
                for i in range(n):
                    for j in range(n):
                        ij = i * n + j
                        if m.adj[ij] and m.dly[ij] > 0:
                            rd = _ring(k - m.dly[ij], depth)
                            Ifro[ij] = hist[rd, j]
                            thfro[ij] = hist[rd, n + j]
                if m.dv > 0:
                    Vfro = hist[_ring(k - m.dv, depth), 2 * n]

                _rhs(&m, I_ell, xp, k1, u, Ifro, thfro, Vfro, nz)
                if k % record_every == 0 and rec_pos < rec_x.shape[0]:
                    for c in range(N):
                        rec_x[rec_pos, c] = xp[c]
                    for c in range(n):
                        rec_u[rec_pos, c] = u[c]
                    rec_pos += 1
                if final:
                    break

                if method == 0:
                    for c in range(N):
                        xs[c] = xp[c] + half * k1[c]
                    _rhs(&m, I_ell, xs, k2, ud, Ifro, thfro, Vfro, nz)
                    for c in range(N):
                        xs[c] = xp[c] + half * k2[c]
                    _rhs(&m, I_ell, xs, k3, ud, Ifro, thfro, Vfro, nz)
                    for c in range(N):
                        xs[c] = xp[c] + h * k3[c]
                    _rhs(&m, I_ell, xs, k4, ud, Ifro, thfro, Vfro, nz)
                    for c in range(N):
                        xp[c] = xp[c] + h6 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c])
                else:
                    for c in range(N):
                        xp[c] = xp[c] + h * k1[c]
                for c in range(N):
                    if not isfinite(xp[c]):
                        status = 1
                        fail_k = k
                        break
                if status:
                    break
    finally:
        free(buf)
    if status:
        return status, fail_k, rec_pos
    return 0, k0 + (0 if final else nsteps), rec_pos
