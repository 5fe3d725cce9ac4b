"""Second-moment and identification report for an existing run directory.

Reads only the CSV files of the run: per-step traces for the ``(1/n) X'X``
entries and eigenvalues, and ``summary.csv`` for the terminal MLE.
"""

from __future__ import annotations

import re
from collections import defaultdict
from pathlib import Path

import numpy as np

from .artifacts import read_csv, write_csv
from .estimation import INVERTIBLE_TOL

_TRACE = re.compile(r"^(?P<label>.+)_rep(?P<rep>\d+)\.csv$")


def load_traces(run_dir) -> dict:
    """``{label: [(rep, columns), ...]}`` sorted by rep."""
    groups = defaultdict(list)
    for p in sorted(Path(run_dir, "traces").glob("*.csv")):
        m = _TRACE.match(p.name)
        if m:
            groups[m["label"]].append((int(m["rep"]), read_csv(p)[1]))
    return {k: sorted(v, key=lambda t: t[0]) for k, v in sorted(groups.items())}


def verdict(min_eig: float) -> str:
    return "invertible" if min_eig > INVERTIBLE_TOL else "not invertible"


def _entries(cols) -> list:
    return [c for c in cols if re.fullmatch(r"m_\d\d", c)]


def dispersion(reps) -> tuple:
    """``(steps, names, mean, sd)`` of the second-moment entries across reps (ddof 0)."""
    names = _entries(reps[0][1])
    stack = np.stack([np.column_stack([c[n] for n in names]) for _, c in reps])
    return reps[0][1]["step"], names, stack.mean(axis=0), stack.std(axis=0)


def _flat_lines(summary, label) -> list:
    lines = []
    sel = [i for i, lab in enumerate(summary["label"]) if lab == label]
    k = sum(1 for c in summary if c.startswith("flat_"))
    found = defaultdict(list)
    for i in sel:
        if summary["n_flat"][i] > 0:
            d = tuple(round(float(summary[f"flat_{j}"][i]), 6) + 0.0 for j in range(1, k + 1))
            found[d].append(int(summary["rep"][i]))
    if not found:
        lines.append("  MLE flat directions: none")
    for d, reps in sorted(found.items()):
        lines.append(f"  MLE flat direction ({', '.join('%.6f' % v for v in d)}) in {len(reps)} of {len(sel)} reps")
    statuses = defaultdict(int)
    for i in sel:
        statuses[summary["status"][i]] += 1
    lines.append("  MLE status: " + ", ".join(f"{s} {n}" for s, n in sorted(statuses.items())))
    return lines


def diagnose_run(run_dir, out_dir) -> str:
    """Write ``min_eig.csv``, ``verdict.csv``, ``dispersion.csv`` and ``report.txt``; return the report."""
    run_dir, out_dir = Path(run_dir), Path(out_dir)
    groups = load_traces(run_dir)
    if not groups:
        raise FileNotFoundError(f"no trace CSVs under {run_dir / 'traces'}")
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = read_csv(run_dir / "summary.csv")[1] if (run_dir / "summary.csv").is_file() else None

    eig_rows, verdict_rows, disp_rows = [], [], []
    report = [f"run: {run_dir.name}"]
    for label, reps in groups.items():
        steps = reps[0][1]["step"]
        mins = np.stack([c["eig_1"] for _, c in reps])
        for i, s in enumerate(steps):
            eig_rows.append([label, int(s), mins[:, i].mean(), mins[:, i].min(), mins[:, i].max()])
        verdicts = []
        for rep, c in reps:
            v = verdict(c["eig_1"][-1])
            verdicts.append(v)
            verdict_rows.append([label, rep, c["eig_1"][-1], v])
        _, names, mean, sd = dispersion(reps)
        for i, s in enumerate(steps):
            disp_rows.append([label, int(s)] + list(mean[i]) + list(sd[i]))

        n = int(steps[-1])
        report.append(f"[{label}] {len(reps)} replications, {n} steps")
        report.append(
            f"  terminal min eigenvalue: mean {mins[:, -1].mean():.6g}, min {mins[:, -1].min():.6g}, max {mins[:, -1].max():.6g}"
        )
        n_inv = verdicts.count("invertible")
        report.append(f"  invertible (min eigenvalue > {INVERTIBLE_TOL:g}): {n_inv} of {len(verdicts)}")
        probe = 100 if n > 100 else None
        for j, name in enumerate(names):
            line = f"  sd across reps of {name}: {sd[-1, j]:.6g} at n={n}"
            if probe is not None:
                line += f", {sd[probe - 1, j]:.6g} at n={probe}"
            report.append(line)
        if summary is not None and label in summary["label"]:
            report.extend(_flat_lines(summary, label))

    pooled = run_dir / "pooled_mle.csv"
    if pooled.is_file():
        c = read_csv(pooled)[1]
        k = sum(1 for name in c if name.startswith("flat_"))
        eigs = ", ".join("%.6g" % c[f"hess_eig_{j}"][0] for j in range(1, k + 1))
        report.append(f"[pooled] Hessian eigenvalues of the average log-likelihood at its maximizer: {eigs}")
        if c["n_flat"][0] > 0:
            d = ", ".join("%.6f" % c[f"flat_{j}"][0] for j in range(1, k + 1))
            report.append(f"[pooled] flat direction ({d})")

    k_names = _entries(next(iter(groups.values()))[0][1])
    write_csv(out_dir / "min_eig.csv", ["label", "step", "min_eig_mean", "min_eig_min", "min_eig_max"], eig_rows)
    write_csv(out_dir / "verdict.csv", ["label", "rep", "min_eig_terminal", "verdict"], verdict_rows)
    write_csv(
        out_dir / "dispersion.csv",
        ["label", "step"] + [f"mean_{n}" for n in k_names] + [f"sd_{n}" for n in k_names],
        disp_rows,
    )
    text = "\n".join(report) + "\n"
    (out_dir / "report.txt").write_bytes(text.encode("utf-8"))
    return text
