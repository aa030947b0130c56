"""Pure numpy implementations of the hot kernels.

Signatures mirror ``_kernels.pyx``; output arrays are written in place.
"""

import numpy as np


def gbm_ou_paths(z1, z2, a0, eps0, mu1, sig1, ou_sd, decay, rho, rho_c, dt, a_out, eps_out):
    n, N = z1.shape
    sq = np.sqrt(dt)
    log_a = (mu1 - 0.5 * sig1[:, None] ** 2) * dt + sig1[:, None] * sq * z1
    a_out[:, 0] = a0
    a_out[:, 1:] = a0 * np.exp(np.cumsum(log_a, axis=1))
    xi = rho * z1 + rho_c * z2
    eps_out[:, 0] = eps0
    for i in range(N):
        eps_out[:, i + 1] = eps_out[:, i] * decay + ou_sd * xi[:, i]


def trade_step(q, m, r, s, eta, dt, q_next, m_next):
    np.minimum(r, q / dt, out=r)
    traded = r * dt
    done = traded >= q
    q_next[:] = np.where(done, 0.0, q - traded)
    m_next[:] = m + r * (s - eta * r) * dt


def g2_sum(eps, w, mubar, logc, lin, k, base, out):
    x = mubar[None, :] * eps[:, None]
    terms = w[None, :] * np.exp(x + logc[None, :]) * (k * x + lin[None, :])
    out[:] = 1.0 - np.exp(-eps) * (base + terms.sum(axis=1))


def fk_oracle(z, eps0, shift, decay, sd, disc, weights, k, lin, phi3, out):
    n, M = z.shape
    x = np.full(n, float(eps0))
    acc = weights[0] * disc[0] * (np.exp(x) * (k * x + lin) + phi3)
    for j in range(M):
        x = x * decay + shift + sd * z[:, j]
        acc += weights[j + 1] * disc[j + 1] * (np.exp(x) * (k * x + lin) + phi3)
    out[:] = acc
