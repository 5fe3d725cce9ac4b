"""Data-generating process: links, index maps, outcomes and candidate claims."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

PROB_EPS = 1e-12


class ConfigError(ValueError):
    """Invalid configuration (dimensions, parameters, domains)."""


class InputError(ValueError):
    """Invalid runtime input such as an outcome outside {0, 1}."""


def logistic(u):
    """Numerically stable ``1 / (1 + exp(-u))``."""
    u = np.asarray(u, dtype=float)
    out = np.empty_like(u)
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    e = np.exp(u[~pos])
    out[~pos] = e / (1.0 + e)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class LinkFunction:
    """Monotone map from the real line to [0, 1].

    ``kind`` is ``"logistic"`` or ``"tabulated"``. A tabulated link linearly
    interpolates the strictly increasing table ``(table_u, table_p)`` and holds
    the end values outside it.
    """

    kind: str = "logistic"
    table_u: Optional[tuple] = None
    table_p: Optional[tuple] = None

    def __post_init__(self):
        if self.kind == "logistic":
            return
        if self.kind != "tabulated":
            raise ConfigError(f"unknown link kind {self.kind!r}")
        if self.table_u is None or self.table_p is None:
            raise ConfigError("tabulated link needs table_u and table_p")
        u = np.asarray(self.table_u, dtype=float)
        p = np.asarray(self.table_p, dtype=float)
        if u.ndim != 1 or u.shape != p.shape or u.size < 2:
            raise ConfigError("link table must be two equal-length vectors of size >= 2")
        if np.any(np.diff(u) <= 0) or np.any(np.diff(p) <= 0):
            raise ConfigError("link table must be strictly increasing in u and p")
        if p[0] < 0 or p[-1] > 1:
            raise ConfigError("link table values must lie in [0, 1]")

    def __call__(self, u):
        if self.kind == "logistic":
            return logistic(u)
        out = np.interp(u, self.table_u, self.table_p)
        return out if np.ndim(out) else float(out)

    def derivative(self, u):
        if self.kind == "logistic":
            g = logistic(u)
            return g * (1.0 - g)
        tu = np.asarray(self.table_u)
        slopes = np.diff(self.table_p) / np.diff(tu)
        idx = np.clip(np.searchsorted(tu, u, side="right") - 1, 0, slopes.size - 1)
        inside = (np.asarray(u) >= tu[0]) & (np.asarray(u) <= tu[-1])
        return np.where(inside, slopes[idx], 0.0)

    def second_derivative(self, u):
        if self.kind == "logistic":
            g = logistic(u)
            return g * (1.0 - g) * (1.0 - 2.0 * g)
        return np.zeros_like(np.asarray(u, dtype=float))


@dataclass(frozen=True)
class IndexMap:
    """Index ``x'theta`` (``linear``) or ``u(x) * theta`` with ``u(x) = x^2 + 5x^3``.

    Both kinds are linear in theta through a feature map, which is what the
    posterior and estimation code work with.
    """

    kind: str = "linear"
    k: int = 2

    def __post_init__(self):
        if self.kind not in ("linear", "transformed-1d"):
            raise ConfigError(f"unknown index kind {self.kind!r}")
        if self.k < 1:
            raise ConfigError("index dimension must be positive")
        if self.kind == "transformed-1d" and self.k != 1:
            raise ConfigError("transformed-1d index requires k = 1")

    def features(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 0:
            x = x[None]
        if x.shape[-1] != self.k:
            raise ConfigError(f"covariate dimension {x.shape[-1]} != index dimension {self.k}")
        if self.kind == "linear":
            return x
        return x * x + 5.0 * x**3

    def __call__(self, x, theta):
        theta = np.asarray(theta, dtype=float).reshape(-1)
        if theta.size != self.k:
            raise ConfigError(f"parameter dimension {theta.size} != index dimension {self.k}")
        return self.features(x) @ theta


@dataclass(frozen=True)
class Dgp:
    link: LinkFunction
    index: IndexMap
    theta_true: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    covariate_law: str = "uniform"
    normal_mean: Optional[np.ndarray] = None
    normal_cov: Optional[np.ndarray] = None
    _chol: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        k = self.index.k
        for name in ("theta_true", "lower", "upper"):
            v = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if v.shape != (k,):
                raise ConfigError(f"{name} must have dimension {k}, got {v.shape}")
            object.__setattr__(self, name, v)
        if np.any(self.lower >= self.upper):
            raise ConfigError("covariate domain needs lower < upper coordinate-wise")
        if self.covariate_law not in ("uniform", "equally-spaced", "normal"):
            raise ConfigError(f"unknown covariate law {self.covariate_law!r}")
        if self.covariate_law == "uniform" and not np.all(np.isfinite(self.lower) & np.isfinite(self.upper)):
            raise ConfigError("uniform covariate law needs a bounded domain")
        if self.covariate_law == "normal":
            if self.normal_mean is None or self.normal_cov is None:
                raise ConfigError("normal covariate law needs normal_mean and normal_cov")
            mu = np.atleast_1d(np.asarray(self.normal_mean, dtype=float))
            cov = np.asarray(self.normal_cov, dtype=float)
            if cov.ndim == 1:
                cov = np.diag(cov)
            if mu.shape != (k,) or cov.shape != (k, k):
                raise ConfigError("normal law mean/cov dimensions do not match k")
            if not np.allclose(cov, cov.T):
                raise ConfigError("normal law covariance must be symmetric")
            w, v = np.linalg.eigh(cov)
            if w.min() < -1e-12 * max(1.0, abs(w.max())):
                raise ConfigError("normal law covariance must be positive semi-definite")
            # symmetric square root works for singular (PSD) covariances too
            root = v * np.sqrt(np.clip(w, 0.0, None))
            object.__setattr__(self, "normal_mean", mu)
            object.__setattr__(self, "normal_cov", cov)
            object.__setattr__(self, "_chol", root)

    @property
    def k(self) -> int:
        return self.index.k

    def with_theta(self, theta) -> "Dgp":
        return Dgp(
            self.link, self.index, np.asarray(theta, dtype=float), self.lower, self.upper,
            self.covariate_law, self.normal_mean, self.normal_cov,
        )

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lower) & (x <= self.upper), axis=-1)


@dataclass
class Claim:
    x: np.ndarray
    y: Optional[int] = None

    def __post_init__(self):
        self.x = np.atleast_1d(np.asarray(self.x, dtype=float))
        if self.y is not None and self.y not in (0, 1):
            raise InputError(f"outcome must be 0 or 1, got {self.y!r}")


def fraud_probability(dgp: Dgp, x, theta):
    """``link(index(x, theta))`` clamped to ``[1e-12, 1 - 1e-12]``.

    ``x`` may be a single covariate vector or an array of them (last axis k).
    """
    p = dgp.link(dgp.index(x, theta))
    return np.clip(p, PROB_EPS, 1.0 - PROB_EPS) if np.ndim(p) else float(
        min(max(p, PROB_EPS), 1.0 - PROB_EPS)
    )


def draw_outcome(dgp: Dgp, x, theta, rng: np.random.Generator) -> int:
    """Bernoulli draw; consumes exactly one uniform from ``rng``."""
    p = fraud_probability(dgp, x, theta)
    return int(rng.random() < p)


def midpoint_grid(lower: float, upper: float, size: int) -> np.ndarray:
    return lower + (np.arange(size) + 0.5) * (upper - lower) / size


def generate_batch(dgp: Dgp, size: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``size`` uninvestigated claims as an array of shape ``(size, k)``.

    The equally-spaced law is deterministic and does not touch ``rng``. For
    k > 1 it needs ``size`` to be a perfect k-th power (tensor midpoint grid).
    """
    if size < 1:
        raise ConfigError("batch size must be >= 1")
    k = dgp.k
    if dgp.covariate_law == "equally-spaced":
        m = int(round(size ** (1.0 / k)))
        if m**k != size:
            raise ConfigError(f"equally-spaced batch of {size} is not a {k}-d tensor grid")
        axes = [midpoint_grid(dgp.lower[j], dgp.upper[j], m) for j in range(k)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=1)
    if dgp.covariate_law == "uniform":
        return dgp.lower + (dgp.upper - dgp.lower) * rng.random((size, k))
    return _normal_in_domain(dgp, size, rng)


def _normal_in_domain(dgp: Dgp, size: int, rng: np.random.Generator) -> np.ndarray:
    out = np.empty((0, dgp.k))
    tries = 0
    while out.shape[0] < size:
        z = rng.standard_normal((max(size, 16), dgp.k))
        draw = dgp.normal_mean + z @ dgp._chol.T
        out = np.vstack([out, draw[dgp.contains(draw)]])
        tries += 1
        if tries > 1000:
            raise ConfigError("normal covariate law puts almost no mass inside the domain")
    return out[:size]
