"""Hot numeric kernels for grid posteriors.

Every kernel exists twice: a loop version compiled with numba ``@njit`` and a
vectorized numpy version. The backend is picked at import time; set
``SELECTLAB_NUMBA=0`` to force the numpy path (also used when numba is not
installed). Both backends are always importable as ``NUMBA`` and ``NUMPY`` so
they can be compared directly.

Grids are handled as 2-d arrays ``(na, nb)``: the first parameter axis, and the
flattened product of the remaining axes (``nb == 1`` for one-dimensional
grids). Quadrature weights are separable, ``qa[i] * qb[j]``.
"""

from __future__ import annotations

import math
import os
from types import SimpleNamespace

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("SELECTLAB_NUMBA", "1").strip().lower() not in (
    "0",
    "false",
    "no",
    "off",
)

# exponent clamp for each separable factor; a product stays inside float range
FACTOR_EXP_LIMIT = 350.0


# ---------------------------------------------------------------------------
# loop versions (compiled by numba when available)
# ---------------------------------------------------------------------------


def _logistic_reweight_loop(density, fa, fb, y, eps):
    na, nb = density.shape
    for i in range(na):
        a = fa[i]
        for j in range(nb):
            w = density[i, j]
            if w == 0.0:
                continue
            e = a * fb[j]
            if y == 1:
                p = 1.0 / (1.0 + e)
            else:
                p = e / (1.0 + e)
            if p < eps:
                p = eps
            elif p > 1.0 - eps:
                p = 1.0 - eps
            density[i, j] = w * p


def _normalize_moments_loop(density, qa, qb, ta, tb, flush):
    na, nb = density.shape
    kb = tb.shape[1]
    k = kb + 1
    m1 = np.zeros(k)
    m2 = np.zeros((k, k))
    r1 = np.empty(kb)
    r2 = np.empty((kb, kb))
    s = 0.0
    for i in range(na):
        # partial sums over the rest axes, combined with ta[i] once per row
        rs = 0.0
        r1[:] = 0.0
        r2[:, :] = 0.0
        for j in range(nb):
            w = density[i, j]
            if w == 0.0:
                continue
            v = qb[j] * w
            rs += v
            for b in range(kb):
                vb = v * tb[j, b]
                r1[b] += vb
                for c in range(b, kb):
                    r2[b, c] += vb * tb[j, c]
        q = qa[i]
        t = ta[i]
        s += q * rs
        m1[0] += q * t * rs
        m2[0, 0] += q * t * t * rs
        for b in range(kb):
            m1[b + 1] += q * r1[b]
            m2[0, b + 1] += q * t * r1[b]
            for c in range(b, kb):
                m2[b + 1, c + 1] += q * r2[b, c]
    if not (s > 0.0) or not math.isfinite(s):
        return s, m1, m2
    inv = 1.0 / s
    for i in range(na):
        for j in range(nb):
            w = density[i, j] * inv
            density[i, j] = w if w >= flush else 0.0
    for a in range(k):
        m1[a] *= inv
        for b in range(a, k):
            m2[a, b] *= inv
            m2[b, a] = m2[a, b]
    return s, m1, m2


def _loglik_accumulate_loop(out, za, zb, ea, eb, c1, c0, log_eps):
    m = za.shape[0]
    na, nb = out.shape
    for r in range(m):
        w1 = c1[r]
        w0 = c0[r]
        for i in range(na):
            zai = za[r, i]
            eai = ea[r, i]
            for j in range(nb):
                zbj = zb[r, j]
                z = zai + zbj
                if abs(zai) > 300.0 or abs(zbj) > 300.0:
                    sp = max(z, 0.0) + math.log1p(math.exp(-abs(z)))
                else:
                    sp = math.log1p(eai * eb[r, j])
                l1 = z - sp
                l0 = -sp
                if l1 < log_eps:
                    l1 = log_eps
                if l0 < log_eps:
                    l0 = log_eps
                out[i, j] += w1 * l1 + w0 * l0


# ---------------------------------------------------------------------------
# numpy versions
# ---------------------------------------------------------------------------


def _logistic_reweight_np(density, fa, fb, y, eps):
    e = np.multiply.outer(fa, fb)
    if y == 1:
        p = 1.0 / (1.0 + e)
    else:
        p = e / (1.0 + e)
    np.clip(p, eps, 1.0 - eps, out=p)
    density *= p


def _normalize_moments_np(density, qa, qb, ta, tb, flush):
    q = density * qa[:, None] * qb[None, :]
    s = float(q.sum())
    k = tb.shape[1] + 1
    if not (s > 0.0) or not math.isfinite(s):
        return s, np.zeros(k), np.zeros((k, k))
    row = q.sum(axis=1)  # marginal over rest axes
    col = q.sum(axis=0)  # marginal over first axis
    m1 = np.empty(k)
    m2 = np.empty((k, k))
    m1[0] = row @ ta
    m2[0, 0] = row @ (ta * ta)
    if k > 1:
        m1[1:] = col @ tb
        m2[1:, 1:] = (tb * col[:, None]).T @ tb
        m2[0, 1:] = ta @ q @ tb
        m2[1:, 0] = m2[0, 1:]
    density /= s
    density[density < flush] = 0.0
    return s, m1 / s, m2 / s


def _loglik_accumulate_np(out, za, zb, ea, eb, c1, c0, log_eps):
    for r in range(za.shape[0]):
        z = za[r][:, None] + zb[r][None, :]
        sp = np.logaddexp(0.0, z)
        acc = 0.0
        if c1[r] != 0.0:
            acc = c1[r] * np.maximum(z - sp, log_eps)
        if c0[r] != 0.0:
            acc = acc + c0[r] * np.maximum(-sp, log_eps)
        out += acc


NUMPY = SimpleNamespace(
    name="numpy",
    logistic_reweight=_logistic_reweight_np,
    normalize_moments=_normalize_moments_np,
    loglik_accumulate=_loglik_accumulate_np,
)

if HAVE_NUMBA:
    NUMBA = SimpleNamespace(
        name="numba",
        logistic_reweight=njit(cache=True)(_logistic_reweight_loop),
        normalize_moments=njit(cache=True)(_normalize_moments_loop),
        loglik_accumulate=njit(cache=True)(_loglik_accumulate_loop),
    )
else:  # pragma: no cover
    NUMBA = None

BACKEND = NUMBA if USE_NUMBA else NUMPY


def separable_factors(axes_feat, sign=-1.0):
    """Per-axis factors ``exp(sign * phi_j * theta_j)``, exponents clamped."""
    return [
        np.exp(np.clip(sign * f * ax, -FACTOR_EXP_LIMIT, FACTOR_EXP_LIMIT))
        for f, ax in axes_feat
    ]


def rest_product(factors):
    """Flattened outer product of per-axis factors (``[1.0]`` when empty)."""
    out = np.ones(1)
    for f in factors:
        out = np.multiply.outer(out, f).ravel()
    return out
