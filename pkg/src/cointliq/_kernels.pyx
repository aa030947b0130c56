# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. Same contracts as ``_kernels_py``."""

from libc.math cimport exp, sqrt


def gbm_ou_paths(const double[:, ::1] z1, const double[:, ::1] z2, double a0, double eps0,
                 double mu1, const double[::1] sig1, const double[::1] ou_sd, double decay,
                 double rho, double rho_c, double dt, double[:, ::1] a_out,
                 double[:, ::1] eps_out):
    cdef Py_ssize_t n = z1.shape[0], N = z1.shape[1], p, i
    cdef double sq = sqrt(dt), la, a, e, s1, drift, sd
    with nogil:
        for p in range(n):
            s1 = sig1[p]
            sd = ou_sd[p]
            drift = (mu1 - 0.5 * s1 * s1) * dt
            la = 0.0
            e = eps0
            a_out[p, 0] = a0
            eps_out[p, 0] = eps0
            for i in range(N):
                la += drift + s1 * sq * z1[p, i]
                a_out[p, i + 1] = a0 * exp(la)
                e = e * decay + sd * (rho * z1[p, i] + rho_c * z2[p, i])
                eps_out[p, i + 1] = e


def trade_step(const double[::1] q, const double[::1] m, double[::1] r, const double[::1] s,
               double eta, double dt, double[::1] q_next, double[::1] m_next):
    cdef Py_ssize_t n = q.shape[0], p
    cdef double rate, traded, cap
    with nogil:
        for p in range(n):
            rate = r[p]
            cap = q[p] / dt
            if rate > cap:
                rate = cap
            r[p] = rate
            traded = rate * dt
            if traded >= q[p]:
                q_next[p] = 0.0
            else:
                q_next[p] = q[p] - traded
            m_next[p] = m[p] + rate * (s[p] - eta * rate) * dt


def g2_sum(const double[::1] eps, const double[::1] w, const double[::1] mubar,
           const double[::1] logc, const double[::1] lin, double k, double base,
           double[::1] out):
    cdef Py_ssize_t n = eps.shape[0], J = w.shape[0], p, j
    cdef double e, acc, x
    with nogil:
        for p in range(n):
            e = eps[p]
            acc = 0.0
            for j in range(J):
                x = mubar[j] * e
                acc += w[j] * exp(x + logc[j]) * (k * x + lin[j])
            out[p] = 1.0 - exp(-e) * (base + acc)


def fk_oracle(const double[:, ::1] z, double eps0, double shift, double decay, double sd,
              const double[::1] disc, const double[::1] weights, double k, double lin,
              double phi3, double[::1] out):
    cdef Py_ssize_t n = z.shape[0], M = z.shape[1], p, j
    cdef double x, acc
    with nogil:
        for p in range(n):
            x = eps0
            acc = weights[0] * disc[0] * (exp(x) * (k * x + lin) + phi3)
            for j in range(M):
                x = x * decay + shift + sd * z[p, j]
                acc += weights[j + 1] * disc[j + 1] * (exp(x) * (k * x + lin) + phi3)
            out[p] = acc
