import hashlib
import subprocess
import sys
from pathlib import Path

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from selectlab import artifacts
from selectlab.cli import main
from selectlab.posterior import NumericalError

SMALL = ["--replications", "1", "--n-steps", "10"]


def _run(capsys, argv):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out.strip(), out.err


def _simulate(capsys, out, *extra):
    code, path, err = _run(capsys, ["simulate", "square_rml", *SMALL, "--out", str(out), *extra])
    assert code == 0, err
    return Path(path)


def test_simulate_writes_expected_files(tmp_path, capsys):
    run = _simulate(capsys, tmp_path)
    assert run.parent == tmp_path and run.name.startswith("simulate-")
    names = {str(p.relative_to(run)) for p in run.rglob("*") if p.is_file()}
    for f in ("manifest.json", "aggregate.csv", "summary.csv", "pooled_mle.csv", "posterior_surface.csv",
              "loglik_surface.csv", "traces/randomized_most_likely_rep000.csv", "figures/trajectories.svg"):
        assert f in names
    _, cols = artifacts.read_csv(run / "traces/randomized_most_likely_rep000.csv")
    assert_array_equal(cols["step"], np.arange(1, 11))
    _, agg = artifacts.read_csv(run / "aggregate.csv")
    assert_array_equal(agg["sd_1"], 0.0)
    assert_array_equal(agg["truth_1"], 1.0)


def test_manifest_records_config_seed_and_checksums(tmp_path, capsys):
    run = _simulate(capsys, tmp_path, "--seed", "99")
    man = artifacts.read_manifest(run)
    assert man["subcommand"] == "simulate"
    assert man["master_seed"] == 99
    assert man["config"]["run.master_seed"] == "99"
    assert run.name == f"simulate-{man['config_hash'][:12]}"
    for name, digest in man["files"].items():
        assert hashlib.sha256((run / name).read_bytes()).hexdigest() == digest


def test_csv_bytes_use_unix_newlines_and_twelve_digits(tmp_path, capsys):
    run = _simulate(capsys, tmp_path)
    for f in run.rglob("*.csv"):
        assert b"\r" not in f.read_bytes()
    raw = (run / "traces/randomized_most_likely_rep000.csv").read_text().splitlines()
    header = [l for l in raw if not l.startswith("#")][0].split(",")
    row = [l for l in raw if not l.startswith("#")][1].split(",")
    v = row[header.index("post_mean_1")]
    assert v == "%.12g" % float(v)


def test_existing_run_dir_is_not_overwritten(tmp_path, capsys):
    run = _simulate(capsys, tmp_path)
    before = (run / "manifest.json").read_bytes()
    code, _, err = _run(capsys, ["simulate", "square_rml", *SMALL, "--out", str(tmp_path)])
    assert code == 2 and "exists" in err
    assert (run / "manifest.json").read_bytes() == before
    assert _simulate(capsys, tmp_path, "--force") == run
    assert [p.name for p in tmp_path.iterdir()] == [run.name]


def test_bad_config_exit_code(tmp_path, capsys):
    assert _run(capsys, ["simulate", "--set", "run.nsteps=5", "--out", str(tmp_path)])[0] == 2
    assert _run(capsys, ["simulate", "--set", "strategy.kind=greedy", "--out", str(tmp_path)])[0] == 2
    assert _run(capsys, ["simulate", str(tmp_path / "nope.cfg"), "--out", str(tmp_path)])[0] == 2
    assert _run(capsys, ["simulate", *SMALL, "--jobs", "0", "--out", str(tmp_path)])[0] == 2
    assert list(tmp_path.iterdir()) == []


def test_missing_run_dir_exit_code(tmp_path, capsys):
    assert _run(capsys, ["diagnose", str(tmp_path / "gone")])[0] == 2
    assert _run(capsys, ["plot", str(tmp_path)])[0] == 2


def test_numeric_failure_exit_code_names_replication(tmp_path, capsys, monkeypatch):
    import selectlab.harness as harness

    def boom(*args, **kw):
        raise NumericalError("posterior mass vanished")

    monkeypatch.setattr(harness, "_reweight_inplace", boom)
    code, _, err = _run(capsys, ["simulate", *SMALL, "--out", str(tmp_path)])
    assert code == 3
    assert "replication 0 failed at step 1" in err
    assert not any(p.name.startswith("simulate-") for p in tmp_path.iterdir())


def test_out_flag_beats_environment(tmp_path, capsys, monkeypatch):
    env_out, flag_out = tmp_path / "env", tmp_path / "flag"
    monkeypatch.setenv("SELECTLAB_OUT", str(env_out))
    code, path, _ = _run(capsys, ["simulate", *SMALL])
    assert code == 0 and Path(path).parent == env_out
    code, path, _ = _run(capsys, ["simulate", *SMALL, "--out", str(flag_out)])
    assert code == 0 and Path(path).parent == flag_out


def test_plot_regenerates_identical_figures(tmp_path, capsys):
    run = _simulate(capsys, tmp_path)
    man = artifacts.read_manifest(run)
    figs = sorted(n for n in man["files"] if n.startswith("figures/"))
    assert figs
    for n in figs:
        (run / n).unlink()
    assert _run(capsys, ["plot", str(run)])[0] == 0
    for n in figs:
        assert hashlib.sha256((run / n).read_bytes()).hexdigest() == man["files"][n]


def test_ml_reps_on_the_corner_have_rank_one_second_moment(tmp_path, capsys):
    code, path, _ = _run(capsys, ["simulate", "square_ml", "--replications", "3", "--n-steps", "30",
                                  "--out", str(tmp_path)])
    assert code == 0
    checked = 0
    for f in sorted(Path(path, "traces").glob("*.csv")):
        _, c = artifacts.read_csv(f)
        if np.all(c["x_1"] == 1) and np.all(c["x_2"] == 1):
            assert_array_equal(c["eig_1"], 0.0)
            assert_array_equal(c["eig_2"], 2.0)
            checked += 1
    assert checked > 0


def test_diagnose_naive_reports_flat_direction(tmp_path, capsys):
    code, path, _ = _run(capsys, ["simulate", "--set", "strategy.kind=naive", "--set", "strategy.anchor=1,1",
                                  "--replications", "2", "--n-steps", "200", "--out", str(tmp_path)])
    assert code == 0
    code, report, _ = _run(capsys, ["diagnose", path])
    assert code == 0
    assert "flat direction (0.707107, -0.707107)" in report
    _, v = artifacts.read_csv(Path(path, "diagnose", "verdict.csv"))
    assert v["verdict"] == ["not invertible"] * 2
    _, d = artifacts.read_csv(Path(path, "diagnose", "dispersion.csv"))
    assert_array_equal(d["sd_m_12"], 0.0)


def test_compare_small_run(tmp_path, capsys):
    code, path, err = _run(capsys, ["compare-thompson", "--n-steps", "10", "--replications", "2",
                                    "--set", "run.snapshot_steps=0,5,10", "--out", str(tmp_path)])
    assert code == 0, err
    run = Path(path)
    meta, c0 = artifacts.read_csv(run / "curves_n0000.csv")
    assert meta["step"] == "0"
    x = c0["x"]
    u = x**2 + 5 * x**3
    assert_allclose(c0["truth"], 1 / (1 + np.exp(u)), rtol=0, atol=1e-12)
    th = np.array(c0["method"]) == "thompson"
    assert_array_equal(c0["mean"][th], 0.5)
    _, plays = artifacts.read_csv(run / "plays.csv")
    assert plays["plays"].sum() == 20
    assert (run / "figures" / "compare.svg").is_file()


def test_jobs_do_not_change_bytes(tmp_path, capsys):
    a = _simulate(capsys, tmp_path / "a", "--replications", "3", "--jobs", "1")
    b = _simulate(capsys, tmp_path / "b", "--replications", "3", "--jobs", "2")
    assert artifacts.read_manifest(a)["files"] == artifacts.read_manifest(b)["files"]


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "selectlab", "diagnose", str(tmp_path)], capture_output=True)
    assert proc.returncode == 2
