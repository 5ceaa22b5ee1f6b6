"""numba kernels: one loop over streams, one over stages.

Every kernel writes into caller-allocated 2-D arrays (streams x stages).
The arithmetic mirrors ``_numpy.py`` operation for operation so both
backends agree bit-for-bit.
"""

import numpy as np
from numba import njit

_jit = njit(cache=True, nogil=True)


@_jit
def _halts(R, t, max_r, r_slope, max_stage, stage_slope):
    return R >= max_r + r_slope * R or t > max_stage + stage_slope * R


@_jit
def lord(p, level, pi, caps, alpha, wealth, rejected):
    m, n = p.shape
    max_r, r_slope, max_stage, stage_slope = caps[0], caps[1], caps[2], caps[3]
    for j in range(m):
        spent = 0.0
        R = 0
        stopped = False
        for k in range(n):
            w = level * max(1, R) - spent
            wealth[j, k] = w
            if not stopped and _halts(R, k + 1, max_r, r_slope, max_stage, stage_slope):
                stopped = True
            a = 0.0 if stopped else max(w, 0.0) * pi[k]
            alpha[j, k] = a
            spent += a
            rej = p[j, k] <= a
            rejected[j, k] = rej
            if rej:
                R += 1


@_jit
def saffron(p, level, pi, lam, penalize_alpha, caps, alpha_bar, alpha, wealth, rejected):
    m, n = p.shape
    max_r, r_slope, max_stage, stage_slope = caps[0], caps[1], caps[2], caps[3]
    for j in range(m):
        pen = 0.0
        R = 0
        stopped = False
        for k in range(n):
            w = level * max(1, R) - pen
            wealth[j, k] = w
            if not stopped and _halts(R, k + 1, max_r, r_slope, max_stage, stage_slope):
                stopped = True
            if stopped:
                ab = 0.0
                a = 0.0
            else:
                ab = max(w, 0.0) * (1.0 - lam) * pi[k]
                a = min(lam, ab)
            alpha_bar[j, k] = ab
            alpha[j, k] = a
            x = p[j, k]
            rej = x <= a
            rejected[j, k] = rej
            if rej:
                R += 1
            if x > lam:
                pen += (a if penalize_alpha else ab) / (1.0 - lam)


@_jit
def alpha_investing(p, level, pi, caps, alpha_bar, alpha, lam_out, wealth, rejected):
    m, n = p.shape
    max_r, r_slope, max_stage, stage_slope = caps[0], caps[1], caps[2], caps[3]
    for j in range(m):
        pen = 0.0
        R = 0
        stopped = False
        for k in range(n):
            w = level * max(1, R) - pen
            wealth[j, k] = w
            if not stopped and _halts(R, k + 1, max_r, r_slope, max_stage, stage_slope):
                stopped = True
            if stopped:
                ab = 0.0
            else:
                c = max(w, 0.0) * pi[k]
                ab = c / (1.0 + c)
            alpha_bar[j, k] = ab
            alpha[j, k] = ab
            lam_out[j, k] = ab
            x = p[j, k]
            rej = x <= ab
            rejected[j, k] = rej
            if rej:
                R += 1
            else:
                pen += ab / (1.0 - ab)


@_jit
def planned_lord(p, level, pi, counts, offsets, members, caps, alpha, wealth, rejected):
    m, n = p.shape
    max_r, r_slope, max_stage, stage_slope = caps[0], caps[1], caps[2], caps[3]
    planned = np.empty(n)
    for j in range(m):
        committed = 0.0
        R = 0
        stopped = False
        for s in range(n + 1):
            if s >= 1:
                k = s - 1
                if not stopped and _halts(R, s, max_r, r_slope, max_stage, stage_slope):
                    stopped = True
                a = 0.0 if stopped else planned[k]
                alpha[j, k] = a
                rej = p[j, k] <= a
                rejected[j, k] = rej
                if rej:
                    R += 1
            if s < n and counts[s] > 0:
                w = level * max(1, R) - committed
                g = max(w, 0.0) * pi[s] / counts[s]
                for q in range(offsets[s], offsets[s + 1]):
                    i = members[q]
                    planned[i] = g
                    wealth[j, i] = w
                    committed += g


@_jit
def planned_saffron(p, level, pi, lam, counts, offsets, members, caps,
                    alpha_bar, alpha, wealth, rejected):
    m, n = p.shape
    max_r, r_slope, max_stage, stage_slope = caps[0], caps[1], caps[2], caps[3]
    planned_ab = np.empty(n)
    planned_a = np.empty(n)
    for j in range(m):
        specified = 0.0
        released = 0.0
        R = 0
        stopped = False
        for s in range(n + 1):
            if s >= 1:
                k = s - 1
                if not stopped and _halts(R, s, max_r, r_slope, max_stage, stage_slope):
                    stopped = True
                if stopped:
                    alpha_bar[j, k] = 0.0
                    alpha[j, k] = 0.0
                    a = 0.0
                else:
                    alpha_bar[j, k] = planned_ab[k]
                    a = planned_a[k]
                    alpha[j, k] = a
                x = p[j, k]
                rej = x <= a
                rejected[j, k] = rej
                if rej:
                    R += 1
                if x <= lam[k]:
                    released += planned_a[k] / (1.0 - lam[k])
            if s < n and counts[s] > 0:
                w = level * max(1, R) - (specified - released)
                g = max(w, 0.0) * pi[s] / counts[s]
                for q in range(offsets[s], offsets[s + 1]):
                    i = members[q]
                    ab = g * (1.0 - lam[i])
                    a = min(lam[i], ab)
                    planned_ab[i] = ab
                    planned_a[i] = a
                    wealth[j, i] = w
                    specified += a / (1.0 - lam[i])
