# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled right-hand side, analytic Jacobian and fixed-step loop.

State layout: [delta(N), omega_n(N), V_n(N), chi_f chain(N*gamma), chi_v chain(N*gamma)],
chains stored row-major per inverter.
"""

import numpy as np
from libc.math cimport exp, sin, pow, fabs, isfinite

cdef double[5][5] SA = [
    [0.25, 0.0, 0.0, 0.0, 0.0],
    [0.5, 0.25, 0.0, 0.0, 0.0],
    [17.0 / 50.0, -1.0 / 25.0, 0.25, 0.0, 0.0],
    [371.0 / 1360.0, -137.0 / 2720.0, 15.0 / 544.0, 0.25, 0.0],
    [25.0 / 24.0, -49.0 / 48.0, 125.0 / 16.0, -85.0 / 12.0, 0.25],
]
cdef double[5] SC = [0.25, 0.75, 11.0 / 20.0, 0.5, 1.0]

cdef enum:
    METHOD_SDIRK4 = 0
    METHOD_RK4 = 1
    MAX_REFRESH = 10
    MAX_SPLIT_DEPTH = 10


cdef inline double _sign(double x) nogil:
    if x > 0:
        return 1.0
    if x < 0:
        return -1.0
    return 0.0


cdef class Kernel:
    cdef readonly int n, gamma, ns, resilient, method
    cdef public double newton_tol
    cdef public int newton_maxit
    cdef readonly long long n_split
    cdef double[:, ::1] A, Ba, Br, Mv, BrMv, J
    cdef double[::1] deg, g5, g6, mP, nQ, lP, lQ, cf, cv, bf, bv, af, av
    cdef double wref, vu, vl, wlim, vmin, vmax
    cdef long long[::1] anode, achan, akind
    cdef double[::1] astart
    cdef double[:, ::1] apar
    cdef int nterms
    cdef double[::1] P, Q, v, zf, zv, df, dv, f0, k1, k2, k3, k4, Z, R, scale, ytmp, ysave
    cdef double[:, ::1] F
    cdef long long[::1] piv

    def __init__(self, int n, int gamma, bint resilient, adjacency, pin_upper, pin_lower,
                 b_active_lap, b_reactive_lap, m_p, n_q, load_p, load_q, c_f, c_v, beta_f,
                 beta_v, alpha_f, alpha_v, double omega_ref, double v_upper, double v_lower,
                 attack_table, double omega_limit, double v_min, double v_max, int method=0,
                 double newton_tol=1e-12, int newton_maxit=25):
        self.n = n
        self.gamma = gamma
        self.ns = 3 * n + 2 * n * gamma
        self.resilient = resilient
        self.method = method
        self.newton_tol = newton_tol
        self.newton_maxit = newton_maxit
        self.n_split = 0
        f = lambda a: np.ascontiguousarray(a, dtype=np.float64).copy()
        self.Ba = f(b_active_lap)
        self.Br = f(b_reactive_lap)
        self.mP = f(m_p)
        self.nQ = f(n_q)
        self.Mv = np.linalg.inv(np.eye(n) + np.asarray(self.nQ)[:, None] * np.asarray(self.Br))
        self.BrMv = np.asarray(self.Br) @ np.asarray(self.Mv)
        self.cf = f(c_f)
        self.cv = f(c_v)
        self.bf = f(beta_f)
        self.bv = f(beta_v)
        self.af = f(alpha_f)
        self.av = f(alpha_v)
        self.wref = omega_ref
        self.vu = v_upper
        self.vl = v_lower
        self.wlim = omega_limit
        self.vmin = v_min
        self.vmax = v_max
        node, chan, kind, start, par = attack_table
        self.anode = np.ascontiguousarray(node, dtype=np.int64)
        self.achan = np.ascontiguousarray(chan, dtype=np.int64)
        self.akind = np.ascontiguousarray(kind, dtype=np.int64)
        self.astart = f(start)
        self.apar = np.ascontiguousarray(np.asarray(par, dtype=np.float64).reshape(-1, 8))
        self.nterms = self.anode.shape[0]
        self.set_graph(adjacency, pin_upper, pin_lower)
        self.set_loads(load_p, load_q)
        z = lambda: np.zeros(n)
        self.P, self.Q, self.v, self.zf, self.zv = z(), z(), z(), z(), z()
        self.df, self.dv = z(), z()
        zs = lambda: np.zeros(self.ns)
        self.f0, self.k1, self.k2, self.k3, self.k4 = zs(), zs(), zs(), zs(), zs()
        self.Z, self.R, self.scale, self.ytmp, self.ysave = zs(), zs(), zs(), zs(), zs()
        self.F = np.zeros((5, self.ns))
        self.J = np.zeros((self.ns, self.ns))
        self.piv = np.zeros(self.ns, dtype=np.int64)

    def set_graph(self, adjacency, pin_upper, pin_lower):
        self.A = np.ascontiguousarray(adjacency, dtype=np.float64).copy()
        self.deg = np.asarray(self.A).sum(axis=1)
        self.g5 = np.ascontiguousarray(pin_upper, dtype=np.float64).copy()
        self.g6 = np.ascontiguousarray(pin_lower, dtype=np.float64).copy()

    def set_loads(self, load_p, load_q):
        self.lP = np.ascontiguousarray(load_p, dtype=np.float64).copy()
        self.lQ = np.ascontiguousarray(load_q, dtype=np.float64).copy()

    # ------------------------------------------------------------------ model

    cdef void _attacks(self, double t) noexcept nogil:
        cdef int k, m, i
        cdef double tau, val, p
        for i in range(self.n):
            self.df[i] = 0.0
            self.dv[i] = 0.0
        for k in range(self.nterms):
            tau = t - self.astart[k]
            if tau < 0:
                continue
            if self.akind[k] == 0:
                val = 0.0
                for m in range(7, -1, -1):
                    val = val * tau + self.apar[k, m]
            elif self.akind[k] == 1:
                val = self.apar[k, 0] * sin(self.apar[k, 1] * tau + self.apar[k, 2])
            else:
                p = self.apar[k, 1]
                val = self.apar[k, 0] * pow(tau, p) if tau > 0 else 0.0
            if self.achan[k] == 0:
                self.df[self.anode[k]] += val
            else:
                self.dv[self.anode[k]] += val

    cdef void _algebraic(self, double[::1] y) noexcept nogil:
        """P, v_od, Q and both neighbourhood terms from the state."""
        cdef int n = self.n, i, j
        cdef double s, g
        for i in range(n):
            s = self.lP[i]
            for j in range(n):
                s += self.Ba[i, j] * y[j]
            self.P[i] = s
        for i in range(n):
            s = 0.0
            for j in range(n):
                s += self.Mv[i, j] * (y[2 * n + j] - self.nQ[j] * self.lQ[j])
            self.v[i] = s
        for i in range(n):
            s = self.lQ[i]
            for j in range(n):
                s += self.Br[i, j] * self.v[j]
            self.Q[i] = s
        for i in range(n):
            g = self.g5[i] + self.g6[i]
            s = -self.deg[i] * y[n + i] + g * (self.wref + self.mP[i] * self.P[i] - y[n + i])
            for j in range(n):
                s += self.A[i, j] * y[n + j]
            self.zf[i] = self.cf[i] * s
            s = (-self.deg[i] * y[2 * n + i]
                 + self.g5[i] * (self.vu + self.nQ[i] * self.Q[i] - y[2 * n + i])
                 + self.g6[i] * (self.vl + self.nQ[i] * self.Q[i] - y[2 * n + i]))
            for j in range(n):
                s += self.A[i, j] * y[2 * n + j]
            self.zv[i] = self.cv[i] * s

    cdef void _rhs(self, double t, double[::1] y, double[::1] out) noexcept nogil:
        cdef int n = self.n, gm = self.gamma, i, k, cf0, cv0
        cdef double ef, ev
        self._algebraic(y)
        self._attacks(t)
        cf0 = 3 * n
        cv0 = 3 * n + n * gm
        for i in range(n):
            out[i] = y[n + i] - self.mP[i] * self.P[i] - self.wref
            out[n + i] = self.zf[i] + self.df[i]
            out[2 * n + i] = self.zv[i] + self.dv[i]
            if self.resilient:
                ef = exp(-self.af[i] * t)
                ev = exp(-self.av[i] * t)
                out[n + i] += self.zf[i] * y[cf0 + i * gm] / (fabs(self.zf[i]) + ef)
                out[2 * n + i] += self.zv[i] * y[cv0 + i * gm] / (fabs(self.zv[i]) + ev)
                for k in range(gm - 1):
                    out[cf0 + i * gm + k] = y[cf0 + i * gm + k + 1]
                    out[cv0 + i * gm + k] = y[cv0 + i * gm + k + 1]
                out[cf0 + i * gm + gm - 1] = self.bf[i] * fabs(self.zf[i])
                out[cv0 + i * gm + gm - 1] = self.bv[i] * fabs(self.zv[i])
            else:
                for k in range(gm):
                    out[cf0 + i * gm + k] = 0.0
                    out[cv0 + i * gm + k] = 0.0

    cdef void _jacobian(self, double t, double[::1] y) noexcept nogil:
        cdef int n = self.n, gm = self.gamma, ns = self.ns, i, j, k, cf0, cv0
        cdef double g, fx, fv, ef, ev, dzx, dzd, dzv, den, sf, sv
        self._algebraic(y)
        cf0 = 3 * n
        cv0 = 3 * n + n * gm
        for i in range(ns):
            for j in range(ns):
                self.J[i, j] = 0.0
        for i in range(n):
            for j in range(n):
                self.J[i, j] = -self.mP[i] * self.Ba[i, j]
            self.J[i, n + i] = 1.0
            g = self.g5[i] + self.g6[i]
            fx = 1.0
            fv = 1.0
            if self.resilient:
                ef = exp(-self.af[i] * t)
                ev = exp(-self.av[i] * t)
                den = fabs(self.zf[i]) + ef
                fx += y[cf0 + i * gm] * ef / (den * den)
                self.J[n + i, cf0 + i * gm] = self.zf[i] / den
                den = fabs(self.zv[i]) + ev
                fv += y[cv0 + i * gm] * ev / (den * den)
                self.J[2 * n + i, cv0 + i * gm] = self.zv[i] / den
                for k in range(gm - 1):
                    self.J[cf0 + i * gm + k, cf0 + i * gm + k + 1] = 1.0
                    self.J[cv0 + i * gm + k, cv0 + i * gm + k + 1] = 1.0
            sf = self.bf[i] * _sign(self.zf[i])
            sv = self.bv[i] * _sign(self.zv[i])
            for j in range(n):
                dzx = self.A[i, j]
                dzv = self.A[i, j] + g * self.nQ[i] * self.BrMv[i, j]
                if i == j:
                    dzx -= self.deg[i] + g
                    dzv -= self.deg[i] + g
                dzx *= self.cf[i]
                dzv *= self.cv[i]
                dzd = self.cf[i] * g * self.mP[i] * self.Ba[i, j]
                self.J[n + i, j] = fx * dzd
                self.J[n + i, n + j] = fx * dzx
                self.J[2 * n + i, 2 * n + j] = fv * dzv
                if self.resilient:
                    self.J[cf0 + i * gm + gm - 1, j] = sf * dzd
                    self.J[cf0 + i * gm + gm - 1, n + j] = sf * dzx
                    self.J[cv0 + i * gm + gm - 1, 2 * n + j] = sv * dzv

    # ------------------------------------------------------------------ linear algebra

    cdef int _lu(self) noexcept nogil:
        """In-place LU with partial pivoting of self.J; returns 0 on success."""
        cdef int n = self.ns, i, j, k, p
        cdef double best, tmp, piv
        for k in range(n):
            p = k
            best = fabs(self.J[k, k])
            for i in range(k + 1, n):
                if fabs(self.J[i, k]) > best:
                    best = fabs(self.J[i, k])
                    p = i
            self.piv[k] = p
            if best == 0.0 or not isfinite(best):
                return 1
            if p != k:
                for j in range(n):
                    tmp = self.J[k, j]
                    self.J[k, j] = self.J[p, j]
                    self.J[p, j] = tmp
            piv = self.J[k, k]
            for i in range(k + 1, n):
                tmp = self.J[i, k] / piv
                self.J[i, k] = tmp
                if tmp != 0.0:
                    for j in range(k + 1, n):
                        self.J[i, j] -= tmp * self.J[k, j]
        return 0

    cdef void _lu_solve(self, double[::1] b) noexcept nogil:
        cdef int n = self.ns, i, j, p
        cdef double s, tmp
        for i in range(n):
            p = self.piv[i]
            if p != i:
                tmp = b[i]
                b[i] = b[p]
                b[p] = tmp
        for i in range(n):
            s = b[i]
            for j in range(i):
                s -= self.J[i, j] * b[j]
            b[i] = s
        for i in range(n - 1, -1, -1):
            s = b[i]
            for j in range(i + 1, n):
                s -= self.J[i, j] * b[j]
            b[i] = s / self.J[i, i]

    # ------------------------------------------------------------------ steppers

    cdef int _factor(self, double t, double[::1] y, double hg) noexcept nogil:
        """LU of I - hg*J(t, y) into self.J."""
        cdef int ns = self.ns, i, j
        self._jacobian(t, y)
        for i in range(ns):
            for j in range(ns):
                self.J[i, j] = -hg * self.J[i, j]
            self.J[i, i] += 1.0
        return self._lu()

    cdef int _sdirk(self, double t, double dt, double[::1] y) noexcept nogil:
        cdef int ns = self.ns, i, j, q, it, ok, refreshes = 0
        cdef double hg = 0.25 * dt, err, prev, e, ti
        if self._factor(t, y, hg) != 0:
            return 2
        for q in range(ns):
            self.scale[q] = 1.0 + fabs(y[q])
        for i in range(5):
            ti = t + SC[i] * dt
            for q in range(ns):
                e = 0.0
                for j in range(i):
                    e += SA[i][j] * self.F[j, q]
                self.R[q] = dt * e
                self.Z[q] = self.R[q]
            ok = 0
            prev = 1e300
            for it in range(self.newton_maxit):
                for q in range(ns):
                    self.ytmp[q] = y[q] + self.Z[q]
                self._rhs(ti, self.ytmp, self.f0)
                for q in range(ns):
                    self.f0[q] = -(self.Z[q] - hg * self.f0[q] - self.R[q])
                self._lu_solve(self.f0)
                err = 0.0
                for q in range(ns):
                    self.Z[q] += self.f0[q]
                    e = fabs(self.f0[q]) / self.scale[q]
                    if not isfinite(e):
                        return 2
                    if e > err:
                        err = e
                if err < self.newton_tol:
                    ok = 1
                    break
                if err > 0.5 * prev and refreshes < MAX_REFRESH:
                    # slow contraction: the step-start Jacobian is stale
                    for q in range(ns):
                        self.ytmp[q] = y[q] + self.Z[q]
                    if self._factor(ti, self.ytmp, hg) != 0:
                        return 2
                    refreshes += 1
                    prev = 1e300
                else:
                    prev = err
            if not ok:
                return 2
            for q in range(ns):
                self.F[i, q] = (self.Z[q] - self.R[q]) / hg
        for q in range(ns):
            y[q] += self.Z[q]
        return 0

    cdef int _advance(self, double t, double dt, double[::1] y, int depth) noexcept nogil:
        """One SDIRK step, halved recursively where the stage equations fail."""
        if self._sdirk(t, dt, y) == 0:
            return 0
        if depth >= MAX_SPLIT_DEPTH:
            return 2
        self.n_split += 1
        if self._advance(t, 0.5 * dt, y, depth + 1) != 0:
            return 2
        return self._advance(t + 0.5 * dt, 0.5 * dt, y, depth + 1)

    cdef int _rk4(self, double t, double dt, double[::1] y) noexcept nogil:
        cdef int ns = self.ns, q
        self._rhs(t, y, self.k1)
        for q in range(ns):
            self.ytmp[q] = y[q] + 0.5 * dt * self.k1[q]
        self._rhs(t + 0.5 * dt, self.ytmp, self.k2)
        for q in range(ns):
            self.ytmp[q] = y[q] + 0.5 * dt * self.k2[q]
        self._rhs(t + 0.5 * dt, self.ytmp, self.k3)
        for q in range(ns):
            self.ytmp[q] = y[q] + dt * self.k3[q]
        self._rhs(t + dt, self.ytmp, self.k4)
        for q in range(ns):
            y[q] += dt / 6.0 * (self.k1[q] + 2 * self.k2[q] + 2 * self.k3[q] + self.k4[q])
        return 0

    cdef int _diverged(self, double[::1] y) noexcept nogil:
        cdef int n = self.n, i
        cdef double w
        for i in range(self.ns):
            if not isfinite(y[i]):
                return 1
        self._algebraic(y)
        for i in range(n):
            w = y[n + i] - self.mP[i] * self.P[i] - self.wref
            if fabs(w) > self.wlim or self.v[i] < self.vmin or self.v[i] > self.vmax:
                return 1
            if not isfinite(w) or not isfinite(self.v[i]):
                return 1
        return 0

    # ------------------------------------------------------------------ Python API

    def rhs(self, double t, y):
        yy = np.ascontiguousarray(y, dtype=np.float64).copy()
        out = np.zeros(self.ns)
        self._rhs(t, yy, out)
        return out

    def jacobian(self, double t, y):
        yy = np.ascontiguousarray(y, dtype=np.float64).copy()
        self._jacobian(t, yy)
        return np.asarray(self.J).copy()

    def run(self, double[::1] y, double t0, long long step0, long long nsteps, double dt, long long record_every,
            double[:, ::1] rec_y, long long[::1] rec_step):
        """Advance ``nsteps`` steps in place; returns (status, steps_done, n_recorded).

        status: 0 ok, 1 diverged (last recorded row is the diverged state),
        2 solver failure (y holds the last good state).
        """
        cdef long long k, step, nrec = 0, done = 0
        cdef int status = 0, rc, q
        cdef double t
        with nogil:
            for k in range(nsteps):
                step = step0 + k
                t = t0 + k * dt
                if self.method == METHOD_SDIRK4:
                    for q in range(self.ns):
                        self.ysave[q] = y[q]
                    rc = self._advance(t, dt, y, 0)
                    if rc != 0:
                        for q in range(self.ns):
                            y[q] = self.ysave[q]
                        status = 2
                        break
                else:
                    self._rk4(t, dt, y)
                done += 1
                rc = self._diverged(y)
                if rc or (step + 1) % record_every == 0:
                    for q in range(self.ns):
                        rec_y[nrec, q] = y[q]
                    rec_step[nrec] = step + 1
                    nrec += 1
                if rc:
                    status = 1
                    break
        return status, int(done), int(nrec)
