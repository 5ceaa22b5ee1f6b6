"""Direct, quadratic-time evaluation of the threshold formulas.

Each threshold recomputes its rejection set and wealth sums from scratch
over the whole history, with no running state carried between steps.
These are slow on purpose: they exist to check the incremental kernels.
Stopping rules are not modelled here.
"""

from __future__ import annotations

import math

import numpy as np


def _as_list(p):
    return [float(x) for x in np.asarray(p, dtype=np.float64).ravel()]


def _rejections(p, alpha, upto):
    """|R_upto| counting indices 1..upto."""
    return sum(1 for i in range(upto) if p[i] <= alpha[i])


def direct_lord(p, level, pi):
    p = _as_list(p)
    alpha = []
    for t in range(1, len(p) + 1):
        spent = math.fsum(alpha[: t - 1])
        R = _rejections(p, alpha, t - 1)
        alpha.append((level * max(1, R) - spent) * pi)
    return np.array(alpha)


def direct_saffron(p, level, pi, lam, penalize_alpha=False):
    """Returns ``(alpha_bar, alpha)``."""
    p = _as_list(p)
    alpha_bar, alpha = [], []
    for t in range(1, len(p) + 1):
        charged = alpha if penalize_alpha else alpha_bar
        penalty = math.fsum(charged[i] * (p[i] > lam) / (1 - lam) for i in range(t - 1))
        R = _rejections(p, alpha, t - 1)
        ab = (level * max(1, R) - penalty) * (1 - lam) * pi
        alpha_bar.append(ab)
        alpha.append(min(lam, ab))
    return np.array(alpha_bar), np.array(alpha)


def direct_alpha_investing(p, level, pi):
    """Solve ``a = {level (1 v R) - sum a_i 1(p_i > a_i)/(1 - a_i)} (1 - a) pi`` for each ``a``."""
    p = _as_list(p)
    alpha = []
    for t in range(1, len(p) + 1):
        penalty = math.fsum(alpha[i] * (p[i] > alpha[i]) / (1 - alpha[i]) for i in range(t - 1))
        R = _rejections(p, alpha, t - 1)
        c = (level * max(1, R) - penalty) * pi
        alpha.append(c / (1 + c))
    return np.array(alpha)


def _specification_order(spec_time):
    # every alpha_i with s_i < s_t is needed before alpha_t, and R_{s_t}
    # needs alpha_i for i <= s_t (all of which have s_i < s_t)
    return sorted(range(1, len(spec_time) + 1), key=lambda i: spec_time[i - 1])


def direct_planned_lord(p, spec_time, level, pi):
    """``pi`` may be a scalar or a sequence indexed by specification time."""
    p = _as_list(p)
    spec = [int(s) for s in spec_time]
    n = len(p)
    pis = [pi] * n if np.isscalar(pi) else list(pi)
    alpha = [None] * n
    for t in _specification_order(spec):
        s_t = spec[t - 1]
        n_s = sum(1 for s in spec if s == s_t)
        earlier = math.fsum(alpha[i - 1] for i in range(1, n + 1) if spec[i - 1] < s_t)
        R = sum(1 for i in range(1, s_t + 1) if p[i - 1] <= alpha[i - 1])
        alpha[t - 1] = (level * max(1, R) - earlier) * pis[s_t] / n_s
    return np.array(alpha)


def direct_planned_saffron(p, spec_time, level, pi, lam):
    """Returns ``(alpha_bar_prime, alpha)``; ``lam`` is a scalar or per-index sequence."""
    p = _as_list(p)
    spec = [int(s) for s in spec_time]
    n = len(p)
    pis = [pi] * n if np.isscalar(pi) else list(pi)
    lams = [float(lam)] * n if np.isscalar(lam) else [float(x) for x in lam]
    alpha_bar, alpha = [None] * n, [None] * n
    for t in _specification_order(spec):
        s_t = spec[t - 1]
        n_s = sum(1 for s in spec if s == s_t)
        terms = []
        for i in range(1, n + 1):
            if spec[i - 1] < s_t:
                indicator = lams[i - 1] < p[i - 1] or s_t < i
                terms.append(alpha[i - 1] * indicator / (1 - lams[i - 1]))
        R = sum(1 for i in range(1, s_t + 1) if p[i - 1] <= alpha[i - 1])
        ab = (level * max(1, R) - math.fsum(terms)) * (1 - lams[t - 1]) * pis[s_t] / n_s
        alpha_bar[t - 1] = ab
        alpha[t - 1] = min(lams[t - 1], ab)
    return np.array(alpha_bar), np.array(alpha)
