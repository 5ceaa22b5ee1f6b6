"""Pure-numpy kernels: loop over stages, vectorise across streams.

Same signatures and the same floating-point operation order as the numba
kernels, so outputs are identical.
"""

import numpy as np


def _halts(R, t, caps):
    max_r, r_slope, max_stage, stage_slope = caps
    return (R >= max_r + r_slope * R) | (t > max_stage + stage_slope * R)


def lord(p, level, pi, caps, alpha, wealth, rejected):
    m, n = p.shape
    spent = np.zeros(m)
    R = np.zeros(m, dtype=np.int64)
    stopped = np.zeros(m, dtype=bool)
    for k in range(n):
        w = level * np.maximum(1, R) - spent
        wealth[:, k] = w
        stopped |= _halts(R, k + 1, caps)
        a = np.where(stopped, 0.0, np.maximum(w, 0.0) * pi[k])
        alpha[:, k] = a
        spent += a
        rej = p[:, k] <= a
        rejected[:, k] = rej
        R += rej


def saffron(p, level, pi, lam, penalize_alpha, caps, alpha_bar, alpha, wealth, rejected):
    m, n = p.shape
    pen = np.zeros(m)
    R = np.zeros(m, dtype=np.int64)
    stopped = np.zeros(m, dtype=bool)
    for k in range(n):
        w = level * np.maximum(1, R) - pen
        wealth[:, k] = w
        stopped |= _halts(R, k + 1, caps)
        ab = np.where(stopped, 0.0, np.maximum(w, 0.0) * (1.0 - lam) * pi[k])
        a = np.where(stopped, 0.0, np.minimum(lam, ab))
        alpha_bar[:, k] = ab
        alpha[:, k] = a
        x = p[:, k]
        rej = x <= a
        rejected[:, k] = rej
        R += rej
        charged = a if penalize_alpha else ab
        pen += np.where(x > lam, charged / (1.0 - lam), 0.0)


def alpha_investing(p, level, pi, caps, alpha_bar, alpha, lam_out, wealth, rejected):
    m, n = p.shape
    pen = np.zeros(m)
    R = np.zeros(m, dtype=np.int64)
    stopped = np.zeros(m, dtype=bool)
    for k in range(n):
        w = level * np.maximum(1, R) - pen
        wealth[:, k] = w
        stopped |= _halts(R, k + 1, caps)
        c = np.maximum(w, 0.0) * pi[k]
        ab = np.where(stopped, 0.0, c / (1.0 + c))
        alpha_bar[:, k] = ab
        alpha[:, k] = ab
        lam_out[:, k] = ab
        rej = p[:, k] <= ab
        rejected[:, k] = rej
        R += rej
        pen += np.where(rej, 0.0, ab / (1.0 - ab))


def planned_lord(p, level, pi, counts, offsets, members, caps, alpha, wealth, rejected):
    m, n = p.shape
    planned = np.empty((m, n))
    committed = np.zeros(m)
    R = np.zeros(m, dtype=np.int64)
    stopped = np.zeros(m, dtype=bool)
    for s in range(n + 1):
        if s >= 1:
            k = s - 1
            stopped |= _halts(R, s, caps)
            a = np.where(stopped, 0.0, planned[:, k])
            alpha[:, k] = a
            rej = p[:, k] <= a
            rejected[:, k] = rej
            R += rej
        if s < n and counts[s] > 0:
            w = level * np.maximum(1, R) - committed
            g = np.maximum(w, 0.0) * pi[s] / counts[s]
            for q in range(offsets[s], offsets[s + 1]):
                i = members[q]
                planned[:, i] = g
                wealth[:, i] = w
                committed += g


def planned_saffron(p, level, pi, lam, counts, offsets, members, caps,
                    alpha_bar, alpha, wealth, rejected):
    m, n = p.shape
    planned_ab = np.empty((m, n))
    planned_a = np.empty((m, n))
    specified = np.zeros(m)
    released = np.zeros(m)
    R = np.zeros(m, dtype=np.int64)
    stopped = np.zeros(m, dtype=bool)
    for s in range(n + 1):
        if s >= 1:
            k = s - 1
            stopped |= _halts(R, s, caps)
            alpha_bar[:, k] = np.where(stopped, 0.0, planned_ab[:, k])
            a = np.where(stopped, 0.0, planned_a[:, k])
            alpha[:, k] = a
            x = p[:, k]
            rej = x <= a
            rejected[:, k] = rej
            R += rej
            released += np.where(x <= lam[k], planned_a[:, k] / (1.0 - lam[k]), 0.0)
        if s < n and counts[s] > 0:
            w = level * np.maximum(1, R) - (specified - released)
            g = np.maximum(w, 0.0) * pi[s] / counts[s]
            for q in range(offsets[s], offsets[s + 1]):
                i = members[q]
                ab = g * (1.0 - lam[i])
                a = np.minimum(lam[i], ab)
                planned_ab[:, i] = ab
                planned_a[:, i] = a
                wealth[:, i] = w
                specified += a / (1.0 - lam[i])
