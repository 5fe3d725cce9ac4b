"""Selection strategies: maps from the current belief to the next claim.

Strategies look at the posterior (or, for Thompson sampling, the arm states)
and never at ``dgp.theta_true``. Two modes exist. In ``domain`` mode any point
of the covariate box may be selected. In ``batch`` mode the choice is among
the claims received at this step.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .model import Claim, ConfigError, Dgp, InputError, _normal_in_domain, fraud_probability
from .posterior import ParamGrid, posterior_mean

KINDS = ("naive", "iid", "most_likely", "randomized_most_likely", "thompson")
MODES = ("domain", "batch")


@dataclass(frozen=True)
class StrategySpec:
    kind: str
    mode: str = "domain"
    anchor: Optional[tuple] = None
    arms: int = 50
    domain_resolution: int = 51

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown strategy {self.kind!r}; expected one of {KINDS}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown selection mode {self.mode!r}")
        if self.kind == "naive" and self.anchor is None:
            raise ConfigError("naive strategy needs an anchor point")
        if self.domain_resolution < 2:
            raise ConfigError("domain resolution must be >= 2")

    def validate(self, dgp: Dgp) -> None:
        if self.kind == "naive":
            a = np.asarray(self.anchor, dtype=float).reshape(-1)
            if a.size != dgp.k or not dgp.contains(a):
                raise ConfigError(f"naive anchor {tuple(a)} is not inside the covariate domain")
        if self.kind == "thompson":
            if dgp.k != 1:
                raise ConfigError("Thompson sampling arms need a one-dimensional covariate")
            if self.arms < 2:
                raise ConfigError("Thompson sampling needs at least 2 arms")
        bounded = np.all(np.isfinite(dgp.lower)) and np.all(np.isfinite(dgp.upper))
        if self.mode == "domain" and not bounded and self.kind != "iid":
            raise ConfigError(f"domain-mode {self.kind} needs a bounded covariate domain")


@dataclass
class BetaArm:
    """Beta posterior for the fraud probability of one covariate interval."""

    alpha: float = 1.0
    beta: float = 1.0
    lo: float = 0.0
    hi: float = 1.0
    plays: int = 0

    def observe(self, y: int) -> None:
        if y not in (0, 1):
            raise InputError(f"outcome must be 0 or 1, got {y!r}")
        if y:
            self.alpha += 1
        else:
            self.beta += 1
        self.plays += 1


def make_arms(n_arms: int, lower: float = 0.0, upper: float = 1.0) -> list:
    edges = np.linspace(lower, upper, n_arms + 1)
    return [BetaArm(lo=float(edges[i]), hi=float(edges[i + 1])) for i in range(n_arms)]


def arm_index(x, n_arms: int, lower: float = 0.0, upper: float = 1.0):
    """Arm containing x: intervals are left-closed, the last one also right-closed."""
    # same edges as make_arms, so boundary points land exactly where the intervals say
    edges = np.linspace(lower, upper, n_arms + 1)
    idx = np.searchsorted(edges, np.asarray(x, dtype=float), side="right") - 1
    return np.clip(idx, 0, n_arms - 1)


def thompson_arm_moments(arm: BetaArm):
    a, b = arm.alpha, arm.beta
    s = a + b
    return a / s, a * b / (s * s * (s + 1.0))


def thompson_select(arms: Sequence[BetaArm], rng: np.random.Generator) -> int:
    """One Beta draw per arm, play the largest (lowest index on ties)."""
    if len(arms) < 2:
        raise ConfigError("Thompson sampling needs at least 2 arms")
    a = np.array([arm.alpha for arm in arms])
    b = np.array([arm.beta for arm in arms])
    return int(np.argmax(rng.beta(a, b)))


def _belief_mean(belief) -> np.ndarray:
    if isinstance(belief, ParamGrid):
        return posterior_mean(belief)
    return np.asarray(belief, dtype=float).reshape(-1)


def domain_search_grid(dgp: Dgp, resolution: int) -> np.ndarray:
    """Tensor grid over the covariate box, endpoints included."""
    axes = [np.linspace(dgp.lower[j], dgp.upper[j], resolution) for j in range(dgp.k)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _lexicographic_argmax(values: np.ndarray, points: np.ndarray) -> int:
    best = np.flatnonzero(values == values.max())
    if best.size == 1:
        return int(best[0])
    sub = points[best]
    order = np.lexsort(sub.T[::-1])
    return int(best[order[0]])


def most_likely_point(belief, dgp: Dgp, candidates=None, resolution: int = 51) -> Claim:
    """Claim maximizing the believed fraud probability at the posterior mean.

    ``candidates`` is a batch of covariates; ``None`` searches the whole
    domain. For a linear index on a box the maximum sits at a corner picked
    coordinate-wise from the sign of the posterior mean (lower corner on 0).
    """
    theta = _belief_mean(belief)
    if candidates is None and dgp.index.kind == "linear":
        return Claim(np.where(theta > 0, dgp.upper, dgp.lower))
    pts = domain_search_grid(dgp, resolution) if candidates is None else np.asarray(candidates, float)
    if pts.shape[0] == 0:
        raise InputError("empty candidate batch")
    vals = fraud_probability(dgp, pts, theta)
    return Claim(pts[_lexicographic_argmax(np.atleast_1d(vals), pts)])


def rml_weights(belief, dgp: Dgp, candidates, base_weights=None) -> np.ndarray:
    """Selection probabilities proportional to the believed fraud probability.

    ``base_weights`` carries the covariate law when the candidates are a
    deterministic discretization of the domain rather than draws from it.
    """
    pts = np.asarray(candidates, dtype=float).reshape(-1, dgp.k)
    if pts.shape[0] == 0:
        raise InputError("empty candidate batch")
    w = np.atleast_1d(fraud_probability(dgp, pts, _belief_mean(belief)))
    if base_weights is not None:
        w = w * base_weights
    return w / w.sum()


def _draw_index(p: np.ndarray, rng: np.random.Generator) -> int:
    c = np.cumsum(p)
    return int(min(np.searchsorted(c, rng.random() * c[-1], side="right"), len(p) - 1))


def _domain_law_weights(dgp: Dgp, pts: np.ndarray) -> Optional[np.ndarray]:
    if dgp.covariate_law != "normal":
        return None
    d = pts - dgp.normal_mean
    prec = np.linalg.pinv(dgp.normal_cov)
    return np.exp(-0.5 * np.einsum("ij,jk,ik->i", d, prec, d))


def _uniform_in_domain(dgp: Dgp, rng) -> np.ndarray:
    return dgp.lower + (dgp.upper - dgp.lower) * rng.random(dgp.k)


def select(
    spec: StrategySpec,
    grid: Optional[ParamGrid],
    candidates,
    dgp: Dgp,
    rng: np.random.Generator,
    arms: Optional[Sequence[BetaArm]] = None,
) -> Claim:
    """Next claim to investigate (no outcome attached).

    ``candidates`` is the received batch in batch mode and ignored in domain
    mode. Thompson sampling reads ``arms`` instead of ``grid``.
    """
    batch = spec.mode == "batch"
    if batch:
        candidates = np.asarray(candidates, dtype=float).reshape(-1, dgp.k)
        if candidates.shape[0] == 0:
            raise InputError("empty candidate batch")
    kind = spec.kind

    if kind == "naive":
        a = np.asarray(spec.anchor, dtype=float).reshape(-1)
        if not batch:
            return Claim(a)
        return Claim(candidates[int(np.argmin(np.sum((candidates - a) ** 2, axis=1)))])

    if kind == "iid":
        if batch:
            return Claim(candidates[int(rng.integers(candidates.shape[0]))])
        if dgp.covariate_law == "normal":
            return Claim(_normal_in_domain(dgp, 1, rng)[0])
        return Claim(_uniform_in_domain(dgp, rng))

    if kind == "most_likely":
        return most_likely_point(grid, dgp, candidates if batch else None, spec.domain_resolution)

    if kind == "randomized_most_likely":
        if batch:
            pts, base = candidates, None
        else:
            pts = domain_search_grid(dgp, spec.domain_resolution)
            base = _domain_law_weights(dgp, pts)
        return Claim(pts[_draw_index(rml_weights(grid, dgp, pts, base), rng)])

    # thompson
    if arms is None:
        raise ConfigError("Thompson sampling needs arm states")
    a = thompson_select(arms, rng)
    arm = arms[a]
    if not batch:
        return Claim(np.array([arm.lo + (arm.hi - arm.lo) * rng.random()]))
    idx = arm_index(candidates[:, 0], len(arms), dgp.lower[0], dgp.upper[0])
    inside = np.flatnonzero(idx == a)
    if inside.size == 0:
        mid = 0.5 * (arm.lo + arm.hi)
        return Claim(candidates[int(np.argmin(np.abs(candidates[:, 0] - mid)))])
    return Claim(candidates[inside[int(rng.integers(inside.size))]])
