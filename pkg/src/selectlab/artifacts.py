"""CSV artifacts, run directories and manifests.

Every number goes through :func:`fmt` (12 significant digits, ``-0`` folded
into ``0``) and every file is written with ``\\n`` line endings, so the same
config and seed give byte-identical files on any machine and any worker count.
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .harness import AggregateSummary, ComparisonResult, ExperimentConfig, RunTrace

MANIFEST = "manifest.json"


class RunDirExists(FileExistsError):
    pass


def fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    f = float(v)
    if f != f:
        return "nan"
    if f == 0.0:
        return "0"
    return "%.12g" % f


def vec_text(v) -> str:
    return ",".join(fmt(x) for x in np.asarray(v, dtype=float).reshape(-1))


def write_csv(path, header, rows, comments=None) -> None:
    lines = [f"# {k}: {v}" for k, v in (comments or {}).items()]
    lines.append(",".join(header))
    lines.extend(",".join(fmt(v) for v in row) for row in rows)
    Path(path).write_bytes(("\n".join(lines) + "\n").encode("ascii"))


def read_csv(path):
    """``(comments, columns)``; numeric columns come back as float arrays."""
    comments, header, rows = {}, None, []
    for line in Path(path).read_text().split("\n"):
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].partition(":")
            comments[key.strip()] = value.strip()
        elif header is None:
            header = line.split(",")
        else:
            rows.append(line.split(","))
    cols = {}
    for j, name in enumerate(header or []):
        raw = [r[j] for r in rows]
        try:
            cols[name] = np.array([float(v) for v in raw])
        except ValueError:
            cols[name] = raw
    return comments, cols


def parse_vec(text: str) -> np.ndarray:
    return np.array([float(v) for v in text.split(",")]) if text else np.zeros(0)


# ---------------------------------------------------------------------------
# run directories
# ---------------------------------------------------------------------------


def run_dir_name(subcommand: str, digest: str) -> str:
    return f"{subcommand}-{digest[:12]}"


class StagedRun:
    """Writes into a scratch directory and moves it into place on commit.

    A failed run leaves nothing behind; an existing run directory is only
    replaced when ``force`` is set.
    """

    def __init__(self, out_dir, name: str, force: bool = False):
        self.out_dir = Path(out_dir)
        self.final = self.out_dir / name
        if self.final.exists() and not force:
            raise RunDirExists(f"run directory {self.final} already exists (use --force to replace it)")
        self.force = force
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.path = Path(tempfile.mkdtemp(prefix=f".{name}.", dir=self.out_dir))

    def commit(self) -> Path:
        if self.final.exists():
            shutil.rmtree(self.final)
        os.replace(self.path, self.final)
        return self.final

    def abort(self) -> None:
        shutil.rmtree(self.path, ignore_errors=True)


def file_checksums(root) -> dict:
    root = Path(root)
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file() and p.name != MANIFEST:
            out[p.relative_to(root).as_posix()] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


def write_manifest(root, subcommand: str, settings: dict, digest: str, seed: int) -> None:
    manifest = {
        "subcommand": subcommand,
        "package_version": __version__,
        "config_hash": digest,
        "master_seed": int(seed),
        "config": dict(sorted(settings.items())),
        "files": file_checksums(root),
    }
    Path(root, MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_manifest(root) -> dict:
    return json.loads(Path(root, MANIFEST).read_text())


# ---------------------------------------------------------------------------
# writers
# ---------------------------------------------------------------------------


def _tri(k):
    return [(a, b) for a in range(k) for b in range(a, k)]


def trace_header(k: int) -> list:
    r = range(1, k + 1)
    return (
        ["step"]
        + [f"x_{j}" for j in r]
        + ["y"]
        + [f"post_mean_{j}" for j in r]
        + [f"post_var_{j}" for j in r]
        + [f"m_{a + 1}{b + 1}" for a, b in _tri(k)]
        + [f"eig_{j}" for j in r]
    )


def write_trace(path, trace: RunTrace) -> None:
    k = trace.x.shape[1]
    tri = _tri(k)
    rows = []
    for i in range(trace.n_steps):
        m = trace.second_moment[i]
        rows.append(
            [i + 1]
            + list(trace.x[i])
            + [int(trace.y[i])]
            + list(trace.post_mean[i])
            + list(trace.post_var[i])
            + [m[a, b] for a, b in tri]
            + list(trace.eigenvalues[i])
        )
    write_csv(path, trace_header(k), rows)


def write_traces(root, label: str, traces) -> None:
    d = Path(root, "traces")
    d.mkdir(exist_ok=True)
    for t in traces:
        write_trace(d / f"{label}_rep{t.rep_index:03d}.csv", t)


def write_aggregate(path, config: ExperimentConfig, agg: AggregateSummary) -> None:
    k = config.dgp.k
    r = range(1, k + 1)
    header = ["step"] + [f"mean_{j}" for j in r] + [f"sd_{j}" for j in r]
    header += [f"truth_{j}" for j in r] + ["min_eig_mean"]
    truth = list(config.dgp.theta_true)
    rows = [
        [int(s)] + list(agg.mean[i]) + list(agg.sd[i]) + truth + [agg.min_eig_mean[i]]
        for i, s in enumerate(agg.steps)
    ]
    write_csv(path, header, rows)


def _mle_columns(k: int) -> list:
    r = range(1, k + 1)
    return (
        [f"theta_hat_{j}" for j in r]
        + ["loglik", "status", "iterations", "gradient_norm"]
        + [f"hess_eig_{j}" for j in r]
        + ["n_flat"]
        + [f"flat_{j}" for j in r]
    )


def _mle_values(fit, k: int) -> list:
    flat = fit.flat_directions[0] if fit.flat_directions else np.full(k, np.nan)
    return (
        list(fit.theta_hat)
        + [fit.loglik, fit.status, fit.iterations, fit.gradient_norm]
        + list(fit.hessian_eigenvalues)
        + [len(fit.flat_directions)]
        + list(flat)
    )


def write_summary(path, groups: dict, k: int) -> None:
    """Per-replication terminal MLE; ``groups`` maps a strategy label to its traces."""
    header = ["label", "rep"] + _mle_columns(k) + ["min_eig_terminal"]
    rows = [
        [label, t.rep_index] + _mle_values(t.mle, k) + [t.min_eig[-1]]
        for label, traces in groups.items()
        for t in traces
    ]
    write_csv(path, header, rows)


def write_pooled_mle(path, fit, k: int) -> None:
    write_csv(path, _mle_columns(k), [_mle_values(fit, k)])


def write_surface(path, axes, values, markers: dict) -> None:
    """Node coordinates plus one value column; scale and markers in the header."""
    values = np.asarray(values, dtype=float)
    mesh = np.meshgrid(*axes, indexing="ij")
    cols = [m.ravel() for m in mesh] + [values.ravel()]
    comments = {"scale_min": fmt(np.min(values)), "scale_max": fmt(np.max(values))}
    for name, v in markers.items():
        comments[f"marker {name}"] = vec_text(v)
    header = [f"theta_{j}" for j in range(1, len(axes) + 1)] + ["value"]
    write_csv(path, header, zip(*cols), comments)


def write_arm_states(path, traces) -> None:
    rows = []
    for t in traces:
        for a, arm in enumerate(t.arms):
            rows.append([t.rep_index, a, arm.lo, arm.hi, arm.alpha, arm.beta, arm.plays])
    write_csv(path, ["rep", "arm", "lo", "hi", "alpha", "beta", "plays"], rows)


def write_plays(path, plays, edges) -> None:
    rows = [[a, edges[a], edges[a + 1], int(p)] for a, p in enumerate(plays)]
    write_csv(path, ["arm", "lo", "hi", "plays"], rows)


def write_simulation(root, config: ExperimentConfig, traces, agg: AggregateSummary) -> None:
    k = config.dgp.k
    write_traces(root, config.strategy.kind, traces)
    write_aggregate(Path(root, "aggregate.csv"), config, agg)
    write_summary(Path(root, "summary.csv"), {config.strategy.kind: traces}, k)
    if agg.plays is not None:
        write_arm_states(Path(root, "arms.csv"), traces)
        edges = np.linspace(config.dgp.lower[0], config.dgp.upper[0], len(agg.plays) + 1)
        write_plays(Path(root, "plays.csv"), agg.plays, edges)
    if agg.posterior_surface is not None and k <= 2:
        markers = {
            "prior_mean": config.prior_mean,
            "theta_true": config.dgp.theta_true,
            "posterior_mean": agg.terminal_mean,
        }
        write_surface(Path(root, "posterior_surface.csv"), agg.surface_axes, agg.posterior_surface, markers)
        markers = {"theta_true": config.dgp.theta_true, "mle": agg.pooled_mle.theta_hat}
        write_surface(Path(root, "loglik_surface.csv"), agg.surface_axes, agg.loglik_surface, markers)
    if agg.pooled_mle is not None:
        write_pooled_mle(Path(root, "pooled_mle.csv"), agg.pooled_mle, k)


def write_comparison(root, rml: ExperimentConfig, result: ComparisonResult) -> None:
    for step in result.steps:
        rows = []
        for method in ("rml", "thompson"):
            c = result.curves[step][method]
            rows.extend(
                [x, t, m, lo, hi, method]
                for x, t, m, lo, hi in zip(c.x, c.truth, c.mean, c.lower, c.upper)
            )
        write_csv(
            Path(root, f"curves_n{step:04d}.csv"),
            ["x", "truth", "mean", "lower", "upper", "method"],
            rows,
            {"step": str(step)},
        )
    write_plays(Path(root, "plays.csv"), result.plays, result.arm_edges)
    write_arm_states(Path(root, "arms.csv"), result.traces["thompson"])
    for method, traces in result.traces.items():
        write_traces(root, method, traces)
    write_summary(Path(root, "summary.csv"), result.traces, rml.dgp.k)

