"""Log-likelihood surfaces, maximum likelihood and second-moment diagnostics.

Selection terms never appear here. Under a selection rule that does not look
at theta they only add a theta-free constant to the log-likelihood, so the
estimator is the ordinary binary-regression one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .model import PROB_EPS, Claim, ConfigError, Dgp, InputError

INVERTIBLE_TOL = 1e-6
FLAT_TOL = 1e-8
SINGULAR_TOL = 1e-8
# a maximized average log-likelihood this close to 0 means the data are separated
SEPARATION_LOGLIK = -1e-6


def _unpack(observations, ys=None):
    """Accept a list of Claim or arrays ``(xs, ys)``; return float arrays."""
    if ys is None:
        obs = list(observations)
        if any(not isinstance(c, Claim) for c in obs):
            raise InputError("pass investigated Claim objects or (xs, ys) arrays")
        if any(c.y is None for c in obs):
            raise InputError("every observation must carry an outcome")
        xs = np.array([c.x for c in obs], dtype=float)
        ys = np.array([c.y for c in obs], dtype=float)
    else:
        xs = np.asarray(observations, dtype=float)
        ys = np.asarray(ys, dtype=float).reshape(-1)
    if ys.size == 0:
        raise InputError("need at least one observation")
    if np.any((ys != 0) & (ys != 1)):
        raise InputError("outcomes must be 0 or 1")
    return xs, ys


def sym_eigvalsh(m: np.ndarray) -> np.ndarray:
    """Ascending eigenvalues of a symmetric matrix, closed form up to 2x2.

    The closed form returns exact zeros for rank-deficient integer-valued
    matrices such as the all-ones matrix.
    """
    m = np.asarray(m, dtype=float)
    if m.shape == (1, 1):
        return m[0].copy()
    if m.shape == (2, 2):
        a, b, d = m[0, 0], 0.5 * (m[0, 1] + m[1, 0]), m[1, 1]
        mid = 0.5 * (a + d)
        r = math.hypot(0.5 * (a - d), b)
        return np.array([mid - r, mid + r])
    return np.linalg.eigvalsh(0.5 * (m + m.T))


@dataclass
class SecondMomentTracker:
    """Running ``sum_i x_i x_i'`` over the index features of selected claims."""

    k: int
    sum_xx: np.ndarray = field(default=None)
    n: int = 0

    def __post_init__(self):
        if self.sum_xx is None:
            self.sum_xx = np.zeros((self.k, self.k))

    def add(self, phi) -> None:
        phi = np.asarray(phi, dtype=float).reshape(-1)
        self.sum_xx += np.outer(phi, phi)
        self.n += 1

    @classmethod
    def from_features(cls, features) -> "SecondMomentTracker":
        f = np.asarray(features, dtype=float)
        f = f.reshape(f.shape[0], -1)
        return cls(k=f.shape[1], sum_xx=f.T @ f, n=f.shape[0])


def second_moment(tracker: SecondMomentTracker):
    """``((1/n) X'X, ascending eigenvalues, invertible)``."""
    if tracker.n < 1:
        raise InputError("second moment needs at least one step")
    m = tracker.sum_xx / tracker.n
    eig = sym_eigvalsh(m)
    return m, eig, bool(eig[0] > INVERTIBLE_TOL)


# ---------------------------------------------------------------------------
# log-likelihood
# ---------------------------------------------------------------------------


def _rest_index(phi_u: np.ndarray, rest_axes) -> np.ndarray:
    """Index contribution of the non-first axes, flattened per observation."""
    m = phi_u.shape[0]
    zb = np.zeros((m, 1))
    for j, ax in enumerate(rest_axes, start=1):
        zb = (zb[:, :, None] + (phi_u[:, j, None] * ax)[:, None, :]).reshape(m, -1)
    return zb


def loglik_surface(observations, ys=None, dgp: Dgp = None, axes=None, backend=None) -> np.ndarray:
    """Average log-likelihood ``Q_n(theta)`` at every node of a tensor grid.

    ``observations`` is either a list of investigated :class:`Claim` (with
    ``ys`` omitted) or an array of covariates paired with ``ys``.
    """
    xs, ys = _unpack(observations, ys)
    axes = tuple(np.asarray(a, dtype=float) for a in axes)
    phi = np.asarray(dgp.index.features(xs.reshape(-1, dgp.k)), dtype=float)
    if phi.shape[1] != len(axes):
        raise ConfigError("grid dimension does not match the index dimension")
    n = ys.size
    uniq, inv = np.unique(phi, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    c1 = np.bincount(inv, weights=ys, minlength=len(uniq)) / n
    c0 = np.bincount(inv, weights=1.0 - ys, minlength=len(uniq)) / n
    shape = tuple(a.size for a in axes)
    out = np.zeros((axes[0].size, int(np.prod(shape[1:], dtype=int))))
    if dgp.link.kind == "logistic":
        backend = backend or kernels.BACKEND
        za = uniq[:, :1] * axes[0][None, :]
        zb = _rest_index(uniq, axes[1:])
        lim = kernels.FACTOR_EXP_LIMIT
        ea = np.exp(np.clip(za, -lim, lim))
        eb = np.exp(np.clip(zb, -lim, lim))
        backend.loglik_accumulate(out, za, zb, ea, eb, c1, c0, math.log(PROB_EPS))
    else:
        za = uniq[:, :1] * axes[0][None, :]
        zb = _rest_index(uniq, axes[1:])
        for r in range(len(uniq)):
            p = np.clip(dgp.link(za[r][:, None] + zb[r][None, :]), PROB_EPS, 1 - PROB_EPS)
            out += c1[r] * np.log(p) + c0[r] * np.log1p(-p)
    return out.reshape(shape)


def _loglik_terms(theta, phi, ys, link):
    """Per-observation log-likelihood and its first two index derivatives."""
    z = phi @ theta
    if link.kind == "logistic":
        g = link(z)
        # log g = -softplus(-z), log(1-g) = -softplus(z)
        l1 = np.maximum(-np.logaddexp(0.0, -z), math.log(PROB_EPS))
        l0 = np.maximum(-np.logaddexp(0.0, z), math.log(PROB_EPS))
        ll = ys * l1 + (1 - ys) * l0
        d1 = ys - g
        d2 = -g * (1.0 - g)
        return ll, d1, d2
    g = np.clip(link(z), PROB_EPS, 1 - PROB_EPS)
    gp = link.derivative(z)
    gpp = link.second_derivative(z)
    ll = ys * np.log(g) + (1 - ys) * np.log1p(-g)
    d1 = ys * gp / g - (1 - ys) * gp / (1 - g)
    d2 = ys * (gpp / g - (gp / g) ** 2) - (1 - ys) * (gpp / (1 - g) + (gp / (1 - g)) ** 2)
    return ll, d1, d2


def average_loglik(theta, phi, ys, link) -> float:
    return float(np.mean(_loglik_terms(np.asarray(theta, float), phi, ys, link)[0]))


def loglik_gradient(theta, phi, ys, link) -> np.ndarray:
    _, d1, _ = _loglik_terms(np.asarray(theta, float), phi, ys, link)
    return phi.T @ d1 / ys.size


def loglik_hessian(theta, phi, ys, link) -> np.ndarray:
    _, _, d2 = _loglik_terms(np.asarray(theta, float), phi, ys, link)
    h = (phi * d2[:, None]).T @ phi / ys.size
    return 0.5 * (h + h.T)


@dataclass
class MleResult:
    theta_hat: np.ndarray
    loglik: float
    hessian_eigenvalues: np.ndarray
    flat_directions: list
    status: str
    iterations: int
    gradient_norm: float
    hessian: np.ndarray = field(repr=False, default=None)

    @property
    def diverging(self) -> bool:
        return self.status == "diverging"


def _canonical_sign(v: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(np.abs(v) > 1e-12)
    return -v if nz.size and v[nz[0]] < 0 else v


def mle(
    observations,
    ys=None,
    dgp: Dgp = None,
    init=None,
    bounds=None,
    tol: float = 1e-8,
    max_iter: int = 200,
    flat_tol: float = FLAT_TOL,
) -> MleResult:
    """Maximize ``Q_n`` by Newton ascent with backtracking.

    When the Hessian is singular (smallest curvature below 1e-8) the step falls
    back to gradient ascent with a Cauchy-scaled initial step, so repeated
    covariates still converge along the identified direction. Separated data
    (``Q_n`` driven to 0, or an iterate leaving ``bounds``) is reported with
    status ``"diverging"`` rather than raised.
    """
    xs, ys = _unpack(observations, ys)
    phi = np.asarray(dgp.index.features(xs.reshape(-1, dgp.k)), dtype=float)
    link = dgp.link
    theta = np.zeros(dgp.k) if init is None else np.array(init, dtype=float).reshape(-1)
    lo = hi = None
    if bounds is not None:
        b = np.asarray(bounds, dtype=float).reshape(dgp.k, 2)
        lo, hi = b[:, 0], b[:, 1]

    q = average_loglik(theta, phi, ys, link)
    status = "max_iter"
    it = 0
    for it in range(1, max_iter + 1):
        grad = loglik_gradient(theta, phi, ys, link)
        if np.max(np.abs(grad)) < tol:
            status = "converged"
            break
        h = loglik_hessian(theta, phi, ys, link)
        curv = sym_eigvalsh(-h)
        if curv[0] > SINGULAR_TOL:
            step = np.linalg.solve(-h, grad)
        else:
            denom = grad @ (-h) @ grad
            step = grad * ((grad @ grad) / denom if denom > 1e-300 else 1.0)
        t = 1.0
        accepted = False
        for _ in range(60):
            cand = theta + t * step
            qc = average_loglik(cand, phi, ys, link)
            if qc >= q - 1e-14 * max(1.0, abs(q)):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            status = "converged" if np.max(np.abs(grad)) < 1e-6 else "stalled"
            break
        theta, q = cand, qc
        if lo is not None and (np.any(theta < lo) or np.any(theta > hi)):
            status = "diverging"
            break
    if q > SEPARATION_LOGLIK:
        status = "diverging"

    h = loglik_hessian(theta, phi, ys, link)
    evals, evecs = np.linalg.eigh(h)
    flat = [_canonical_sign(evecs[:, i]) for i in range(len(evals)) if abs(evals[i]) < flat_tol]
    grad = loglik_gradient(theta, phi, ys, link)
    return MleResult(
        theta_hat=theta,
        loglik=q,
        hessian_eigenvalues=evals,
        flat_directions=flat,
        status=status,
        iterations=it,
        gradient_norm=float(np.max(np.abs(grad))),
        hessian=h,
    )


def gradient_check(observations, ys=None, dgp: Dgp = None, theta=None, step: float = 1e-5) -> float:
    """Max relative error between the analytic gradient of ``Q_n`` and central differences."""
    xs, ys = _unpack(observations, ys)
    phi = np.asarray(dgp.index.features(xs.reshape(-1, dgp.k)), dtype=float)
    theta = np.asarray(theta, dtype=float).reshape(-1)
    analytic = loglik_gradient(theta, phi, ys, dgp.link)
    numeric = np.empty_like(analytic)
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = step
        numeric[j] = (
            average_loglik(theta + e, phi, ys, dgp.link) - average_loglik(theta - e, phi, ys, dgp.link)
        ) / (2 * step)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    return float(np.max(np.abs(analytic - numeric) / scale))
