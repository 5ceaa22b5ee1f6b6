"""Batched stream kernels with a numba path and a pure-numpy fallback.

The backend is chosen once at import from ``ONLINEFDR_BACKEND``
(``numba`` or ``numpy``). When the variable is unset, numba is used if it
imports and numpy otherwise. Every public function here also accepts an
explicit ``backend=`` so tests and benchmarks can compare the two.

All kernels take ``p`` as a 2-D array (streams x stages) and return a
dict of same-shaped arrays. ``caps`` encodes a stopping rule as
``(max_r, r_slope, max_stage, stage_slope)``: stage ``t`` halts testing
once ``R >= max_r + r_slope * R`` or ``t > max_stage + stage_slope * R``,
where ``R`` counts rejections before ``t``.
"""

from __future__ import annotations

import os
import warnings

import numpy as np

from . import _numpy

NO_CAPS = np.array([np.inf, 0.0, np.inf, 0.0])

_nb = None
_requested = os.environ.get("ONLINEFDR_BACKEND", "").strip().lower()
if _requested not in ("", "numba", "numpy"):
    raise ImportError(f"ONLINEFDR_BACKEND must be 'numba' or 'numpy', got {_requested!r}")
if _requested != "numpy":
    try:
        from . import _numba as _nb
    except ImportError:
        if _requested == "numba":
            raise
        warnings.warn("numba unavailable; using the pure-numpy kernels", RuntimeWarning)

BACKEND = "numba" if _nb is not None else "numpy"


def available_backends():
    return ("numba", "numpy") if _nb is not None else ("numpy",)


def _module(backend):
    backend = backend or BACKEND
    if backend == "numba":
        if _nb is None:
            raise RuntimeError("numba backend requested but numba is not importable")
        return _nb
    if backend == "numpy":
        return _numpy
    raise ValueError(f"unknown backend {backend!r}")


def group_structure(spec_time):
    """Members of each specification-time group, in index order.

    Returns ``(counts, offsets, members)`` such that the 0-based indices
    with ``s_i == s`` are ``members[offsets[s]:offsets[s + 1]]``.
    """
    spec = np.asarray(spec_time, dtype=np.int64)
    n = spec.shape[0]
    counts = np.bincount(spec, minlength=n).astype(np.int64)[:n] if n else np.zeros(0, np.int64)
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    members = np.argsort(spec, kind="stable").astype(np.int64)
    return counts, offsets, members


def _prepare(p, pi):
    p = np.ascontiguousarray(np.atleast_2d(np.asarray(p, dtype=np.float64)))
    n = p.shape[1]
    pi = np.ascontiguousarray(np.broadcast_to(np.asarray(pi, dtype=np.float64), (n,)))
    return p, pi


def _caps(caps):
    return NO_CAPS if caps is None else np.ascontiguousarray(caps, dtype=np.float64)


def lord(p, level, pi, caps=None, backend=None):
    p, pi = _prepare(p, pi)
    out = {k: np.empty(p.shape) for k in ("alpha", "wealth")}
    out["rejected"] = np.empty(p.shape, dtype=np.bool_)
    _module(backend).lord(p, float(level), pi, _caps(caps),
                          out["alpha"], out["wealth"], out["rejected"])
    return out


def saffron(p, level, pi, lam, penalize_alpha=False, caps=None, backend=None):
    p, pi = _prepare(p, pi)
    out = {k: np.empty(p.shape) for k in ("alpha_bar", "alpha", "wealth")}
    out["rejected"] = np.empty(p.shape, dtype=np.bool_)
    _module(backend).saffron(p, float(level), pi, float(lam), bool(penalize_alpha), _caps(caps),
                             out["alpha_bar"], out["alpha"], out["wealth"], out["rejected"])
    out["lam"] = np.full(p.shape, float(lam))
    return out


def alpha_investing(p, level, pi, caps=None, backend=None):
    p, pi = _prepare(p, pi)
    out = {k: np.empty(p.shape) for k in ("alpha_bar", "alpha", "lam", "wealth")}
    out["rejected"] = np.empty(p.shape, dtype=np.bool_)
    _module(backend).alpha_investing(p, float(level), pi, _caps(caps), out["alpha_bar"],
                                     out["alpha"], out["lam"], out["wealth"], out["rejected"])
    return out


def planned_lord(p, spec_time, level, pi, caps=None, backend=None):
    p, pi = _prepare(p, pi)
    counts, offsets, members = group_structure(spec_time)
    out = {k: np.empty(p.shape) for k in ("alpha", "wealth")}
    out["rejected"] = np.empty(p.shape, dtype=np.bool_)
    _module(backend).planned_lord(p, float(level), pi, counts, offsets, members, _caps(caps),
                                  out["alpha"], out["wealth"], out["rejected"])
    return out


def planned_saffron(p, spec_time, level, pi, lam, caps=None, backend=None):
    p, pi = _prepare(p, pi)
    lam = np.ascontiguousarray(np.broadcast_to(np.asarray(lam, dtype=np.float64), (p.shape[1],)))
    counts, offsets, members = group_structure(spec_time)
    out = {k: np.empty(p.shape) for k in ("alpha_bar", "alpha", "wealth")}
    out["rejected"] = np.empty(p.shape, dtype=np.bool_)
    _module(backend).planned_saffron(p, float(level), pi, lam, counts, offsets, members,
                                     _caps(caps), out["alpha_bar"], out["alpha"],
                                     out["wealth"], out["rejected"])
    out["lam"] = np.broadcast_to(lam, p.shape).copy()
    return out
