"""Experiment orchestration: seeded replications of the select/observe/update loop."""

from __future__ import annotations

import copy
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Optional

import numpy as np

from .estimation import MleResult, SecondMomentTracker, loglik_surface, mle, sym_eigvalsh
from .model import ConfigError, Dgp, draw_outcome, fraud_probability, generate_batch, midpoint_grid
from .posterior import NumericalError, ParamGrid, _reweight_inplace, normal_prior_on_grid, posterior_fraud_moments
from .strategies import StrategySpec, arm_index, make_arms, select, thompson_arm_moments

# SeedSequence spawn keys, one per source of randomness inside a replication
STREAM_TAGS = {"candidates": 1, "selection": 2, "outcome": 3}


class ReplicationError(RuntimeError):
    def __init__(self, rep_index: int, step: int, cause: Exception):
        super().__init__(f"replication {rep_index} failed at step {step}: {cause}")
        self.rep_index = rep_index
        self.step = step
        self.cause = cause

    def __reduce__(self):
        # keeps the rep index when the error crosses a process boundary
        return (ReplicationError, (self.rep_index, self.step, self.cause))


@dataclass
class ExperimentConfig:
    dgp: Dgp
    prior_mean: np.ndarray
    prior_cov: np.ndarray
    strategy: StrategySpec
    n_steps: int = 1000
    batch_size: int = 100
    replications: int = 50
    master_seed: int = 0
    snapshot_steps: tuple = ()
    prior_resolution: int = 201
    prior_width: float = 6.0

    def __post_init__(self):
        self.prior_mean = np.atleast_1d(np.asarray(self.prior_mean, dtype=float))
        self.prior_cov = np.asarray(self.prior_cov, dtype=float)
        self.snapshot_steps = tuple(sorted({int(s) for s in self.snapshot_steps}))
        if self.n_steps < 1:
            raise ConfigError("n_steps must be >= 1")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError("master_seed must be a 64-bit unsigned integer")
        if any(s < 0 or s > self.n_steps for s in self.snapshot_steps):
            raise ConfigError(f"snapshot steps must lie in [0, {self.n_steps}]")
        if self.prior_mean.size != self.dgp.k:
            raise ConfigError("prior mean dimension does not match the model")
        self.strategy.validate(self.dgp)

    def prior_grid(self) -> ParamGrid:
        return normal_prior_on_grid(
            self.prior_mean, self.prior_cov, resolution=self.prior_resolution, width=self.prior_width
        )

    def eval_points(self) -> np.ndarray:
        """The equally spaced claims on which fraud-probability curves are reported."""
        return midpoint_grid(self.dgp.lower[0], self.dgp.upper[0], self.batch_size)


def rep_streams(master_seed: int, rep_index: int) -> dict:
    return {
        name: np.random.default_rng(np.random.SeedSequence([master_seed, rep_index, tag]))
        for name, tag in STREAM_TAGS.items()
    }


@dataclass
class Snapshot:
    step: int
    grid: Optional[ParamGrid] = None
    arms: Optional[list] = None
    curve_mean: Optional[np.ndarray] = None
    curve_var: Optional[np.ndarray] = None


@dataclass
class RunTrace:
    rep_index: int
    x: np.ndarray
    y: np.ndarray
    post_mean: np.ndarray
    post_var: np.ndarray
    second_moment: np.ndarray
    eigenvalues: np.ndarray
    snapshots: dict
    terminal_grid: Optional[ParamGrid]
    arms: Optional[list]
    mle: MleResult

    @property
    def n_steps(self) -> int:
        return len(self.y)

    @property
    def min_eig(self) -> np.ndarray:
        return self.eigenvalues[:, 0]


def _curve(config: ExperimentConfig, grid, arms):
    xs = config.eval_points()
    if arms is not None:
        idx = arm_index(xs, len(arms), config.dgp.lower[0], config.dgp.upper[0])
        mom = np.array([thompson_arm_moments(arms[i]) for i in idx])
        return mom[:, 0], mom[:, 1]
    return posterior_fraud_moments(grid, config.dgp, xs)


def _snapshot(config, step, grid, arms) -> Snapshot:
    snap = Snapshot(step=step)
    if arms is not None:
        snap.arms = copy.deepcopy(arms)
    else:
        snap.grid = grid.copy()
    if config.dgp.k == 1:
        snap.curve_mean, snap.curve_var = _curve(config, grid, arms)
    return snap


def run_replication(config: ExperimentConfig, rep_index: int) -> RunTrace:
    """One realization of the select -> observe -> update loop."""
    if not 0 <= rep_index < config.replications:
        raise ConfigError(f"rep_index {rep_index} outside [0, {config.replications})")
    dgp, spec = config.dgp, config.strategy
    k, n = dgp.k, config.n_steps
    streams = rep_streams(config.master_seed, rep_index)
    thompson = spec.kind == "thompson"
    grid = None if thompson else config.prior_grid()
    arms = make_arms(spec.arms, dgp.lower[0], dgp.upper[0]) if thompson else None
    batch_mode = spec.mode == "batch"
    fixed_batch = None
    if batch_mode and dgp.covariate_law == "equally-spaced":
        fixed_batch = generate_batch(dgp, config.batch_size, streams["candidates"])

    xs = np.empty((n, k))
    ys = np.empty(n, dtype=np.int8)
    post_mean = np.full((n, k), np.nan)
    post_var = np.full((n, k), np.nan)
    moments = np.empty((n, k, k))
    eigs = np.empty((n, k))
    tracker = SecondMomentTracker(k)
    snaps = {}
    wanted = set(config.snapshot_steps)
    if 0 in wanted:
        snaps[0] = _snapshot(config, 0, grid, arms)

    for step in range(1, n + 1):
        try:
            cands = None
            if batch_mode:
                cands = fixed_batch if fixed_batch is not None else generate_batch(
                    dgp, config.batch_size, streams["candidates"]
                )
            x = select(spec, grid, cands, dgp, streams["selection"], arms=arms).x
            y = draw_outcome(dgp, x, dgp.theta_true, streams["outcome"])
            if thompson:
                arms[int(arm_index(x[0], len(arms), dgp.lower[0], dgp.upper[0]))].observe(y)
            else:
                _reweight_inplace(grid, dgp, x, y)
            tracker.add(dgp.index.features(x))
        except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
            raise ReplicationError(rep_index, step, exc) from exc
        i = step - 1
        xs[i] = x
        ys[i] = y
        if not thompson:
            m1, m2 = grid.moments()
            post_mean[i] = m1
            post_var[i] = np.maximum(np.diag(m2) - m1 * m1, 0.0)
        moments[i] = tracker.sum_xx / tracker.n
        eigs[i] = sym_eigvalsh(moments[i])
        if step in wanted:
            snaps[step] = _snapshot(config, step, grid, arms)

    bounds = config.prior_grid().bounds if grid is None else grid.bounds
    fit = mle(xs, ys, dgp, init=config.prior_mean, bounds=bounds)
    return RunTrace(
        rep_index=rep_index,
        x=xs,
        y=ys,
        post_mean=post_mean,
        post_var=post_var,
        second_moment=moments,
        eigenvalues=eigs,
        snapshots=snaps,
        terminal_grid=grid,
        arms=arms,
        mle=fit,
    )


def run_replications(config: ExperimentConfig, jobs: int = 1) -> list:
    """All replications, returned in rep_index order whatever the worker count."""
    reps = range(config.replications)
    if jobs <= 1 or config.replications == 1:
        return [run_replication(config, r) for r in reps]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(partial(run_replication, config), reps))


@dataclass
class AggregateSummary:
    steps: np.ndarray
    mean: np.ndarray
    sd: np.ndarray
    min_eig_mean: np.ndarray
    terminal_mean: np.ndarray
    surface_axes: Optional[tuple] = None
    posterior_surface: Optional[np.ndarray] = None
    loglik_surface: Optional[np.ndarray] = None
    pooled_mle: Optional[MleResult] = None
    plays: Optional[np.ndarray] = None


def aggregate(config: ExperimentConfig, traces: list, surfaces: bool = True) -> AggregateSummary:
    """Across-replication statistics (reduced in rep_index order)."""
    traces = sorted(traces, key=lambda t: t.rep_index)
    pm = np.stack([t.post_mean for t in traces])
    mean = pm.mean(axis=0)
    sd = pm.std(axis=0)
    agg = AggregateSummary(
        steps=np.arange(1, config.n_steps + 1),
        mean=mean,
        sd=sd,
        min_eig_mean=np.mean([t.min_eig for t in traces], axis=0),
        terminal_mean=mean[-1].copy(),
    )
    if config.strategy.kind == "thompson":
        agg.plays = np.sum([[a.plays for a in t.arms] for t in traces], axis=0)
        return agg
    if surfaces:
        axes = traces[0].terminal_grid.axes
        agg.surface_axes = axes
        agg.posterior_surface = np.mean([t.terminal_grid.density for t in traces], axis=0)
        # the mean of equal-length average log-likelihoods is the pooled average
        xs = np.concatenate([t.x for t in traces])
        ys = np.concatenate([t.y for t in traces]).astype(float)
        agg.loglik_surface = loglik_surface(xs, ys, config.dgp, axes)
        lo_hi = np.array([[a[0], a[-1]] for a in axes])
        agg.pooled_mle = mle(xs, ys, config.dgp, init=config.prior_mean, bounds=lo_hi)
    return agg


def run_experiment(config: ExperimentConfig, jobs: int = 1, surfaces: bool = True):
    """Run every replication; returns ``(traces, aggregate)``."""
    traces = run_replications(config, jobs)
    return traces, aggregate(config, traces, surfaces=surfaces)


@dataclass
class Curve:
    x: np.ndarray
    truth: np.ndarray
    mean: np.ndarray
    variance: np.ndarray

    @property
    def lower(self) -> np.ndarray:
        return np.clip(self.mean - 2 * np.sqrt(self.variance), 0.0, 1.0)

    @property
    def upper(self) -> np.ndarray:
        return np.clip(self.mean + 2 * np.sqrt(self.variance), 0.0, 1.0)


@dataclass
class ComparisonResult:
    steps: tuple
    curves: dict  # {step: {"rml": Curve, "thompson": Curve}}
    plays: np.ndarray  # Thompson plays per arm, summed over replications
    arm_edges: np.ndarray
    traces: dict = field(default_factory=dict, repr=False)


def run_thompson_comparison(
    rml: ExperimentConfig, thompson: ExperimentConfig, jobs: int = 1
) -> ComparisonResult:
    """Average posterior fraud-probability curves of RML and Thompson sampling."""
    for cfg in (rml, thompson):
        if cfg.dgp.k != 1:
            raise ConfigError("the Thompson comparison needs a one-dimensional covariate")
    if rml.strategy.kind != "randomized_most_likely" or thompson.strategy.kind != "thompson":
        raise ConfigError("expected an RML config and a Thompson config")
    if rml.snapshot_steps != thompson.snapshot_steps:
        raise ConfigError("both configs need the same snapshot steps")
    if not np.array_equal(rml.eval_points(), thompson.eval_points()):
        raise ConfigError("both configs need the same evaluation claims")
    xs = rml.eval_points()
    truth = np.asarray(fraud_probability(rml.dgp, xs.reshape(-1, 1), rml.dgp.theta_true))
    runs = {"rml": run_replications(rml, jobs), "thompson": run_replications(thompson, jobs)}
    curves = {}
    for step in rml.snapshot_steps:
        curves[step] = {}
        for name, traces in runs.items():
            m = np.mean([t.snapshots[step].curve_mean for t in traces], axis=0)
            v = np.mean([t.snapshots[step].curve_var for t in traces], axis=0)
            curves[step][name] = Curve(x=xs, truth=truth, mean=m, variance=v)
    plays = np.sum([[a.plays for a in t.arms] for t in runs["thompson"]], axis=0)
    edges = np.linspace(thompson.dgp.lower[0], thompson.dgp.upper[0], thompson.strategy.arms + 1)
    return ComparisonResult(
        steps=rml.snapshot_steps, curves=curves, plays=plays, arm_edges=edges, traces=runs
    )
