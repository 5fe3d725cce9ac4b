"""Grid posteriors on the parameter space and their functionals.

A :class:`ParamGrid` is a tensor-product grid carrying a normalized density.
Integrals use trapezoidal quadrature. Single-observation updates multiply the
density by the likelihood and renormalize right away, so the density never
underflows as a whole; multi-observation updates go through log space.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .model import PROB_EPS, ConfigError, Dgp, InputError

LOG_FLOOR = -745.0
# densities below this are flushed to zero (keeps the kernels off denormals)
FLUSH = 1e-300


class NumericalError(ArithmeticError):
    """Posterior mass vanished or became non-finite."""


def trapezoid_weights(axis: np.ndarray) -> np.ndarray:
    h = np.diff(axis)
    w = np.zeros_like(axis)
    w[:-1] += h / 2
    w[1:] += h / 2
    return w


@dataclass
class PosteriorSummary:
    mean: np.ndarray
    covariance: np.ndarray
    entropy: float


@dataclass(eq=False)
class ParamGrid:
    axes: tuple
    density: np.ndarray
    normalized: bool = False
    _moments: Optional[tuple] = field(default=None, repr=False)
    _geom: Optional[tuple] = field(default=None, repr=False)

    def __post_init__(self):
        self.axes = tuple(np.asarray(a, dtype=float) for a in self.axes)
        if not 1 <= len(self.axes) <= 3:
            raise ConfigError("grids support 1 to 3 parameter dimensions")
        for a in self.axes:
            if a.ndim != 1 or a.size < 3:
                raise ConfigError("each grid axis needs at least 3 nodes")
            if np.any(np.diff(a) <= 0):
                raise ConfigError("grid axes must be strictly increasing")
        self.density = np.ascontiguousarray(self.density, dtype=float).reshape(self.shape)
        if not self.normalized:
            self._normalize()

    @classmethod
    def from_log_weights(cls, axes, log_weights) -> "ParamGrid":
        lw = np.asarray(log_weights, dtype=float)
        if not np.any(np.isfinite(lw)):
            raise NumericalError("no finite log weight")
        dens = np.exp(lw - np.max(lw[np.isfinite(lw)]))
        return cls(axes, dens)

    # geometry -------------------------------------------------------------

    @property
    def k(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple:
        return tuple(a.size for a in self.axes)

    @property
    def bounds(self) -> np.ndarray:
        return np.array([[a[0], a[-1]] for a in self.axes])

    def nodes(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def quad_weights(self) -> np.ndarray:
        w = np.ones(1)
        for a in self.axes:
            w = np.multiply.outer(w, trapezoid_weights(a)).ravel()
        return w.reshape(self.shape)

    def _split(self):
        # (first axis, its weights, rest-axes node coords, rest weights)
        if self._geom is None:
            self._geom = self._build_split()
        return self._geom

    def _build_split(self):
        rest = self.axes[1:]
        if rest:
            mesh = np.meshgrid(*rest, indexing="ij")
            tb = np.stack([m.ravel() for m in mesh], axis=1)
        else:
            tb = np.zeros((1, 0))
        qb = kernels.rest_product([trapezoid_weights(a) for a in rest])
        return self.axes[0], trapezoid_weights(self.axes[0]), tb, qb

    def _flat(self) -> np.ndarray:
        return self.density.reshape(self.axes[0].size, -1)

    # density access -------------------------------------------------------

    @property
    def log_weights(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            lw = np.log(self.density)
        return np.maximum(lw, LOG_FLOOR)

    def mass(self) -> float:
        return float(np.sum(self.density * self.quad_weights()))

    def copy(self) -> "ParamGrid":
        g = ParamGrid.__new__(ParamGrid)
        g.axes = self.axes
        g.density = self.density.copy()
        g.normalized = self.normalized
        g._moments = self._moments
        g._geom = self._geom
        return g

    def moments(self) -> tuple:
        """Cached ``(mean, second_moment_matrix)`` under the grid density."""
        if self._moments is None:
            self._normalize()
        return self._moments

    def _normalize(self):
        ta, qa, tb, qb = self._split()
        s, m1, m2 = kernels.BACKEND.normalize_moments(self._flat(), qa, qb, ta, tb, FLUSH)
        if not (s > 0.0) or not np.isfinite(s):
            raise NumericalError(f"posterior mass is {s}")
        self.normalized = True
        self._moments = (np.asarray(m1), np.asarray(m2))


def normal_prior_on_grid(
    mu,
    sigma,
    bounds: Optional[Sequence] = None,
    resolution: int = 201,
    width: float = 6.0,
) -> ParamGrid:
    """Normal density truncated to a box and renormalized on the grid.

    ``sigma`` is a covariance: a vector is read as its diagonal. Default bounds
    are ``mu +- width * sqrt(diag(sigma))``.
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    cov = np.asarray(sigma, dtype=float)
    if cov.ndim <= 1:
        cov = np.diag(np.broadcast_to(cov, mu.shape))
    if cov.shape != (mu.size, mu.size):
        raise ConfigError("prior covariance does not match the mean dimension")
    if resolution < 3:
        raise ConfigError("grid resolution must be >= 3")
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise ConfigError("prior covariance must be positive definite") from None
    if not np.allclose(cov, cov.T):
        raise ConfigError("prior covariance must be symmetric")
    if bounds is None:
        sd = np.sqrt(np.diag(cov))
        bounds = np.stack([mu - width * sd, mu + width * sd], axis=1)
    bounds = np.asarray(bounds, dtype=float).reshape(mu.size, 2)
    axes = tuple(np.linspace(lo, hi, resolution) for lo, hi in bounds)
    mesh = np.meshgrid(*axes, indexing="ij")
    d = np.stack([m - c for m, c in zip(mesh, mu)], axis=-1)
    prec = np.linalg.inv(cov)
    lw = -0.5 * np.einsum("...i,ij,...j->...", d, prec, d)
    return ParamGrid.from_log_weights(axes, lw)


def _check_outcome(y):
    if y not in (0, 1):
        raise InputError(f"outcome must be 0 or 1, got {y!r}")


def _reweight_inplace(grid: ParamGrid, dgp: Dgp, x, y: int, backend=None):
    """Multiply the grid density by ``p(y | x, theta)`` and renormalize."""
    _check_outcome(y)
    backend = backend or kernels.BACKEND
    phi = np.asarray(dgp.index.features(x), dtype=float).reshape(-1)
    if phi.size != grid.k:
        raise ConfigError(f"feature dimension {phi.size} != grid dimension {grid.k}")
    flat = grid._flat()
    partial_max = max(float(np.max(np.abs(f * a))) for f, a in zip(phi, grid.axes))
    if dgp.link.kind == "logistic" and partial_max <= 300.0:
        fac = kernels.separable_factors(list(zip(phi, grid.axes)), sign=-1.0)
        backend.logistic_reweight(flat, fac[0], kernels.rest_product(fac[1:]), int(y), PROB_EPS)
    else:
        z = np.zeros(grid.shape)
        for j, (f, a) in enumerate(zip(phi, grid.axes)):
            sh = [1] * grid.k
            sh[j] = a.size
            z = z + (f * a).reshape(sh)
        p = np.clip(dgp.link(z), PROB_EPS, 1.0 - PROB_EPS)
        grid.density *= p if y == 1 else 1.0 - p
    ta, qa, tb, qb = grid._split()
    s, m1, m2 = backend.normalize_moments(flat, qa, qb, ta, tb, FLUSH)
    if not (s > 0.0) or not np.isfinite(s):
        raise NumericalError(f"posterior mass is {s} after update at x={x}, y={y}")
    grid._moments = (np.asarray(m1), np.asarray(m2))


def bayes_update(grid: ParamGrid, dgp: Dgp, x, y: int) -> ParamGrid:
    """Posterior after one investigated claim.

    Only ``p(y | x, theta)`` enters: the selection density does not depend on
    theta and cancels from Bayes' rule.
    """
    out = grid.copy()
    _reweight_inplace(out, dgp, x, y)
    return out


def bayes_update_batch(grid: ParamGrid, dgp: Dgp, xs, ys) -> ParamGrid:
    """One reweighting by the summed log-likelihood of all observations."""
    from .estimation import loglik_surface

    xs = np.asarray(xs, dtype=float).reshape(-1, dgp.k)
    ys = np.asarray(ys)
    total = loglik_surface(xs, ys, dgp, grid.axes) * len(ys)
    return ParamGrid.from_log_weights(grid.axes, grid.log_weights + total)


def posterior_mean(grid: ParamGrid) -> np.ndarray:
    return grid.moments()[0].copy()


def summarize(grid: ParamGrid) -> PosteriorSummary:
    mean, second = grid.moments()
    cov = second - np.outer(mean, mean)
    cov = 0.5 * (cov + cov.T)
    np.fill_diagonal(cov, np.maximum(np.diag(cov), 0.0))
    q = grid.quad_weights()
    d = grid.density
    pos = d > 0
    entropy = -float(np.sum(q[pos] * d[pos] * np.log(d[pos])))
    return PosteriorSummary(mean=mean.copy(), covariance=cov, entropy=entropy)


def posterior_fraud_moments(grid: ParamGrid, dgp: Dgp, x):
    """Posterior mean and variance of the fraud probability at covariate(s) x.

    Returns scalars for a single x, arrays for a batch of x.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 0 or (x.ndim == 1 and dgp.k > 1)
    pts = x.reshape(-1, dgp.k)
    phi = np.asarray(dgp.index.features(pts))
    w = (grid.density * grid.quad_weights()).ravel()
    w = w / w.sum()
    p = np.clip(dgp.link(phi @ grid.nodes().T), PROB_EPS, 1.0 - PROB_EPS)
    mean = p @ w
    var = np.maximum((p * p) @ w - mean * mean, 0.0)
    # a vanishing index makes the probability constant in theta
    var = np.where(np.all(phi == 0, axis=1), 0.0, var)
    if single:
        return float(mean[0]), float(var[0])
    return mean, var


def concentration_metric(grid: ParamGrid, theta_ref) -> float:
    """Posterior expectation of ``exp(-||theta - theta_ref||^2)``; 1 iff fully concentrated."""
    ref = np.asarray(theta_ref, dtype=float).reshape(-1)
    h = np.exp(-np.sum((grid.nodes() - ref) ** 2, axis=1))
    w = (grid.density * grid.quad_weights()).ravel()
    return float(h @ w / w.sum())


def point_mass_grid(axes, node_index) -> ParamGrid:
    """Grid whose density is a spike at one node (discrete point mass)."""
    shape = tuple(len(a) for a in axes)
    d = np.zeros(shape)
    d[tuple(node_index)] = 1.0
    return ParamGrid(axes, d)
