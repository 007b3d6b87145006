"""NumPy implementation of the kernel, used when the compiled extension is unavailable."""

from __future__ import annotations

import numpy as np

from .attacks import KIND_POLY, KIND_SIN
from .integrators import NewtonFailure, rk4_step, sdirk4_advance

METHOD_SDIRK4, METHOD_RK4 = 0, 1


class Kernel:
    def __init__(self, n, gamma, resilient, adjacency, pin_upper, pin_lower, b_active_lap,
                 b_reactive_lap, m_p, n_q, load_p, load_q, c_f, c_v, beta_f, beta_v, alpha_f,
                 alpha_v, omega_ref, v_upper, v_lower, attack_table, omega_limit, v_min, v_max,
                 method=METHOD_SDIRK4, newton_tol=1e-12, newton_maxit=25):
        f = lambda a: np.array(a, dtype=float)
        self.n, self.gamma = int(n), int(gamma)
        self.ns = 3 * self.n + 2 * self.n * self.gamma
        self.resilient = int(bool(resilient))
        self.method = int(method)
        self.newton_tol, self.newton_maxit = float(newton_tol), int(newton_maxit)
        self.n_split = 0
        self.Ba, self.Br = f(b_active_lap), f(b_reactive_lap)
        self.mP, self.nQ = f(m_p), f(n_q)
        self.Mv = np.linalg.inv(np.eye(self.n) + self.nQ[:, None] * self.Br)
        self.BrMv = self.Br @ self.Mv
        self.cf, self.cv, self.bf, self.bv = f(c_f), f(c_v), f(beta_f), f(beta_v)
        self.af, self.av = f(alpha_f), f(alpha_v)
        self.wref, self.vu, self.vl = float(omega_ref), float(v_upper), float(v_lower)
        self.wlim, self.vmin, self.vmax = float(omega_limit), float(v_min), float(v_max)
        node, chan, kind, start, par = attack_table
        self.anode = np.asarray(node, dtype=np.int64)
        self.achan = np.asarray(chan, dtype=np.int64)
        self.akind = np.asarray(kind, dtype=np.int64)
        self.astart = f(start)
        self.apar = np.asarray(par, dtype=float).reshape(-1, 8)
        self.set_graph(adjacency, pin_upper, pin_lower)
        self.set_loads(load_p, load_q)

    def set_graph(self, adjacency, pin_upper, pin_lower):
        self.A = np.array(adjacency, dtype=float)
        self.deg = self.A.sum(axis=1)
        self.g5 = np.array(pin_upper, dtype=float)
        self.g6 = np.array(pin_lower, dtype=float)
        self.g = self.g5 + self.g6
        self.dzf_dx = self.cf[:, None] * (self.A - np.diag(self.deg + self.g))
        self.dzf_dd = (self.cf * self.g * self.mP)[:, None] * self.Ba
        self.dzv_dv = self.cv[:, None] * (self.A - np.diag(self.deg + self.g)
                                          + (self.g * self.nQ)[:, None] * self.BrMv)

    def set_loads(self, load_p, load_q):
        self.lP = np.array(load_p, dtype=float)
        self.lQ = np.array(load_q, dtype=float)

    # ------------------------------------------------------------------ model

    def _attacks(self, t):
        df = np.zeros(self.n)
        dv = np.zeros(self.n)
        for k in range(self.anode.size):
            tau = t - self.astart[k]
            if tau < 0:
                continue
            par = self.apar[k]
            if self.akind[k] == KIND_POLY:
                val = np.polynomial.polynomial.polyval(tau, par)
            elif self.akind[k] == KIND_SIN:
                val = par[0] * np.sin(par[1] * tau + par[2])
            else:
                val = par[0] * tau ** par[1] if tau > 0 else 0.0
            (df if self.achan[k] == 0 else dv)[self.anode[k]] += val
        return df, dv

    def _algebraic(self, y):
        n = self.n
        d, x, V = y[:n], y[n:2 * n], y[2 * n:3 * n]
        P = self.Ba @ d + self.lP
        v = self.Mv @ (V - self.nQ * self.lQ)
        Q = self.Br @ v + self.lQ
        zf = self.cf * (self.A @ x - self.deg * x + self.g * (self.wref + self.mP * P - x))
        zv = self.cv * (self.A @ V - self.deg * V + self.g5 * (self.vu + self.nQ * Q - V)
                        + self.g6 * (self.vl + self.nQ * Q - V))
        return P, v, Q, zf, zv

    def _chains(self, y):
        n, gm = self.n, self.gamma
        cf = y[3 * n:3 * n + n * gm].reshape(n, gm)
        cv = y[3 * n + n * gm:].reshape(n, gm)
        return cf, cv

    def rhs(self, t, y):
        y = np.asarray(y, dtype=float)
        n = self.n
        P, v, Q, zf, zv = self._algebraic(y)
        df, dv = self._attacks(t)
        cf, cv = self._chains(y)
        dx = zf + df
        dV = zv + dv
        dcf = np.zeros_like(cf)
        dcv = np.zeros_like(cv)
        if self.resilient:
            dx = dx + zf * cf[:, 0] / (np.abs(zf) + np.exp(-self.af * t))
            dV = dV + zv * cv[:, 0] / (np.abs(zv) + np.exp(-self.av * t))
            dcf[:, :-1] = cf[:, 1:]
            dcv[:, :-1] = cv[:, 1:]
            dcf[:, -1] = self.bf * np.abs(zf)
            dcv[:, -1] = self.bv * np.abs(zv)
        return np.concatenate([y[n:2 * n] - self.mP * P - self.wref, dx, dV, dcf.ravel(), dcv.ravel()])

    def jacobian(self, t, y):
        y = np.asarray(y, dtype=float)
        n, gm = self.n, self.gamma
        _, _, _, zf, zv = self._algebraic(y)
        cf, cv = self._chains(y)
        J = np.zeros((self.ns, self.ns))
        dx, dV = slice(n, 2 * n), slice(2 * n, 3 * n)
        J[:n, :n] = -self.mP[:, None] * self.Ba
        J[:n, dx] = np.eye(n)
        fx = np.ones(n)
        fv = np.ones(n)
        cf0, cv0 = 3 * n, 3 * n + n * gm
        rows = np.arange(n)
        if self.resilient:
            ef = np.exp(-self.af * t)
            ev = np.exp(-self.av * t)
            fx = 1 + cf[:, 0] * ef / (np.abs(zf) + ef) ** 2
            fv = 1 + cv[:, 0] * ev / (np.abs(zv) + ev) ** 2
            J[n + rows, cf0 + rows * gm] = zf / (np.abs(zf) + ef)
            J[2 * n + rows, cv0 + rows * gm] = zv / (np.abs(zv) + ev)
            for k in range(gm - 1):
                J[cf0 + rows * gm + k, cf0 + rows * gm + k + 1] = 1.0
                J[cv0 + rows * gm + k, cv0 + rows * gm + k + 1] = 1.0
            last_f = cf0 + rows * gm + gm - 1
            last_v = cv0 + rows * gm + gm - 1
            sf = (self.bf * np.sign(zf))[:, None]
            sv = (self.bv * np.sign(zv))[:, None]
            J[last_f, :n] = sf * self.dzf_dd
            J[last_f, dx] = sf * self.dzf_dx
            J[last_v, dV] = sv * self.dzv_dv
        J[dx, :n] = fx[:, None] * self.dzf_dd
        J[dx, dx] = fx[:, None] * self.dzf_dx
        J[dV, dV] = fv[:, None] * self.dzv_dv
        return J

    def _diverged(self, y) -> bool:
        if not np.all(np.isfinite(y)):
            return True
        n = self.n
        P = self.Ba @ y[:n] + self.lP
        v = self.Mv @ (y[2 * n:3 * n] - self.nQ * self.lQ)
        w = y[n:2 * n] - self.mP * P - self.wref
        return bool(np.any(np.abs(w) > self.wlim) or np.any(v < self.vmin) or np.any(v > self.vmax)
                    or not np.all(np.isfinite(w)) or not np.all(np.isfinite(v)))

    def run(self, y, t0, step0, nsteps, dt, record_every, rec_y, rec_step):
        nrec = done = 0
        status = 0
        for k in range(nsteps):
            step = step0 + k
            t = t0 + k * dt
            if self.method == METHOD_SDIRK4:
                try:
                    new, splits = sdirk4_advance(self.rhs, self.jacobian, t, y, dt, self.newton_tol,
                                                 self.newton_maxit)
                    self.n_split += splits
                except NewtonFailure:
                    status = 2
                    break
            else:
                new = rk4_step(self.rhs, t, y, dt)
            y[:] = new
            done += 1
            div = self._diverged(y)
            if div or (step + 1) % record_every == 0:
                rec_y[nrec] = y
                rec_step[nrec] = step + 1
                nrec += 1
            if div:
                status = 1
                break
        return status, done, nrec
