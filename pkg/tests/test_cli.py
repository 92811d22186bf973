import csv
import json

import numpy as np
import pytest

from sdnioc import load_dataset_csv, load_model
from sdnioc.cli import main


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def reaching_cfg(tmp_path, capsys):
    path = tmp_path / "reach.json"
    assert run(capsys, "problem", "reaching", "--r", 1e-5, "--v", 0.2, "--f", 0.02,
               "--out", path)[0] == 0
    return path


def test_problem_reaching(tmp_path, capsys):
    path = tmp_path / "reach.json"
    code, out, err = run(capsys, "problem", "reaching", "--out", path)
    assert code == 0 and err == ""
    assert out.split() == [str(path), str(tmp_path / "reach.spec.json")]
    model, cost, exp = load_model(path)
    assert model.m == 5 and exp is None
    spec = json.loads((tmp_path / "reach.spec.json").read_text())
    assert spec["true_params"] == {"r": 1e-5, "v": 0.2, "f": 0.02}
    man = json.loads((tmp_path / "reach.json.manifest.json").read_text())
    assert set(man) == {"command", "config_paths", "seed", "timestamp", "tool_version",
                        "output_paths"}


def test_problem_random_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for p in (a, b):
        assert run(capsys, "problem", "random", "--seed", 7, "--out", p)[0] == 0
    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "a.spec.json").read_bytes() == (tmp_path / "b.spec.json").read_bytes()


def test_problem_saccade_defaults(tmp_path, capsys):
    path = tmp_path / "sacc.json"
    assert run(capsys, "problem", "saccade", "--out", path)[0] == 0
    model, _, _ = load_model(path)
    assert model.T == 81
    assert model.x1_mean[0] == -10.0


def test_bad_flag_exit_2(tmp_path, capsys):
    with pytest.raises(SystemExit) as info:
        main(["problem", "pendulum", "--out", str(tmp_path / "x.json")])
    assert info.value.code == 2
    code, _, err = run(capsys, "problem", "reaching", "--r", -1, "--out", tmp_path / "x.json")
    assert code == 2 and "error" in err


def test_simulate_and_determinism(tmp_path, capsys, reaching_cfg):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for p in (a, b):
        code, out, _ = run(capsys, "simulate", reaching_cfg, "--trials", 100, "--seed", 3,
                           "--out", p)
        assert code == 0 and out.strip() == str(p)
    assert a.read_bytes() == b.read_bytes()
    ds = load_dataset_csv(a)
    assert ds.states.shape == (100, 36, 5)
    with a.open() as fh:
        rows = list(csv.reader(fh))[1:]
    assert sum(r[2] == "state" for r in rows) == 100 * 36


def test_simulate_zero_noise(tmp_path, capsys, reaching_cfg):
    out = tmp_path / "z.csv"
    assert run(capsys, "simulate", reaching_cfg, "--trials", 2, "--zero-noise",
               "--out", out)[0] == 0
    ds = load_dataset_csv(out)
    np.testing.assert_array_equal(ds.states[0], ds.states[1])


def test_simulate_with_params(tmp_path, capsys, reaching_cfg):
    out = tmp_path / "p.csv"
    assert run(capsys, "simulate", reaching_cfg, "--trials", 2, "--params",
               "r=1e-4,v=0.2,f=0.02", "--out", out)[0] == 0
    code, _, err = run(capsys, "simulate", reaching_cfg, "--params", "r=1e-4",
                       "--out", out)
    assert code == 2 and "lacks" in err


def test_partial_obs_files(tmp_path, capsys):
    cfg = tmp_path / "po.json"
    assert run(capsys, "problem", "reaching", "--partial-obs", "--obs-noise", 1e-3,
               "--out", cfg)[0] == 0
    out = tmp_path / "d.csv"
    code, stdout, _ = run(capsys, "simulate", cfg, "--trials", 5, "--out", out)
    assert code == 0
    observed = tmp_path / "d.observed.csv"
    assert stdout.split() == [str(out), str(observed)]
    obs = load_dataset_csv(observed)
    assert obs.states is None and obs.exp_obs.shape == (5, 36, 1)
    beliefs = tmp_path / "b.csv"
    assert run(capsys, "track", cfg, observed, "--params", "r=1e-5,v=0.2,f=0.02",
               "--out", beliefs)[0] == 0
    with beliefs.open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["trial", "t", "component", "mean", "var"]
    assert len(rows) == 1 + 5 * 36 * 5
    assert all(float(r[4]) >= -1e-12 for r in rows[1:])


def test_track_requires_params(tmp_path, capsys, reaching_cfg):
    data = tmp_path / "d.csv"
    run(capsys, "simulate", reaching_cfg, "--trials", 2, "--out", data)
    code, _, err = run(capsys, "track", reaching_cfg, data, "--out", tmp_path / "b.csv")
    assert code == 2 and "--params" in err


def test_loglik(tmp_path, capsys, reaching_cfg):
    data = tmp_path / "d.csv"
    run(capsys, "simulate", reaching_cfg, "--trials", 3, "--out", data)
    out = tmp_path / "ll.json"
    assert run(capsys, "loglik", reaching_cfg, data, "--out", out)[0] == 0
    d = json.loads(out.read_text())
    assert d["n_trials"] == 3 and np.isfinite(d["loglik"])


def test_fit_small(tmp_path, capsys, reaching_cfg):
    data = tmp_path / "d.csv"
    run(capsys, "simulate", reaching_cfg, "--trials", 5, "--out", data)
    out = tmp_path / "fit.json"
    code, _, _ = run(capsys, "fit", reaching_cfg, data, "--starts", 2, "--budget", 20,
                     "--threads", 1, "--out", out)
    assert code == 0
    d = json.loads(out.read_text())
    assert set(d["theta_mle"]) == {"r", "v", "f"}
    assert len(d["starts"]) == 2 and set(d["log_err"]) == {"r", "v", "f"}
    out2 = tmp_path / "fit_plain.json"
    assert run(capsys, "fit", reaching_cfg, data, "--starts", 1, "--budget", 20,
               "--threads", 1, "--baseline", "plain-lqg", "--out", out2)[0] == 0
    assert json.loads(out2.read_text())["likelihood"] == "plain"


def test_fit_thread_invariant(tmp_path, capsys, reaching_cfg):
    data = tmp_path / "d.csv"
    run(capsys, "simulate", reaching_cfg, "--trials", 3, "--out", data)
    res = []
    for threads in (1, 2):
        out = tmp_path / f"fit{threads}.json"
        run(capsys, "fit", reaching_cfg, data, "--starts", 2, "--budget", 15,
            "--threads", threads, "--out", out)
        res.append(json.loads(out.read_text())["theta_mle"])
    assert res[0] == res[1]


def test_fit_empty_data_exit_2(tmp_path, capsys, reaching_cfg):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    code, out, err = run(capsys, "fit", reaching_cfg, empty, "--out", tmp_path / "f.json")
    assert code == 2 and out == "" and err
    code, _, _ = run(capsys, "fit", reaching_cfg, tmp_path / "missing.csv",
                     "--out", tmp_path / "f.json")
    assert code == 2


def test_env_seed_override(tmp_path, capsys, reaching_cfg, monkeypatch):
    monkeypatch.setenv("SDNIOC_SEED", "11")
    a = tmp_path / "a.csv"
    run(capsys, "simulate", reaching_cfg, "--trials", 2, "--out", a)
    b = tmp_path / "b.csv"
    run(capsys, "simulate", reaching_cfg, "--trials", 2, "--seed", 11, "--out", b)
    assert a.read_bytes() == b.read_bytes()


def test_bench_moment_matching(tmp_path, capsys):
    out = tmp_path / "mm.json"
    assert run(capsys, "bench", "moment-matching", "--trials", 2000, "--out", out)[0] == 0
    d = json.loads(out.read_text())
    assert d["mean_skl_analytic"] < d["mean_skl_baseline"]
    assert d["likelihood_seconds_100_trials"] > 0


def test_bench_random_tiny(tmp_path, capsys):
    out = tmp_path / "rand.json"
    assert run(capsys, "bench", "random", "--count", 1, "--trials", 20, "--starts", 1,
               "--threads", 1, "--out", out)[0] == 0
    d = json.loads(out.read_text())
    assert len(d["problems"]) == 1 and len(d["median_abs_log_err"]) == 2


def test_optional_dumps_and_flags(tmp_path, capsys, reaching_cfg):
    data, gains = tmp_path / "d.csv", tmp_path / "g.json"
    code, out, _ = run(capsys, "simulate", reaching_cfg, "--trials", 2, "--dump-gains", gains,
                       "--out", data)
    assert code == 0 and str(gains) in out.split()
    g = json.loads(gains.read_text())
    assert len(g["L"]) == 35
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    run(capsys, "loglik", reaching_cfg, data, "--out", a)
    run(capsys, "loglik", reaching_cfg, data, "--omit-initial", "--out", b)
    # x1 is a point mass for the reaching plant: its factor is zero either way
    assert json.loads(a.read_text())["loglik"] == json.loads(b.read_text())["loglik"]
    beliefs, full = tmp_path / "b.csv", tmp_path / "full.json"
    assert run(capsys, "track", reaching_cfg, data, "--params", "r=1e-5,v=0.2,f=0.02",
               "--full-cov", full, "--out", beliefs)[0] == 0
    d = json.loads(full.read_text())
    assert np.array(d["cov"]).shape == (2, 36, 5, 5)


def test_help_documents_every_flag(capsys):
    from sdnioc.cli import build_parser
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    for name, p in sub.choices.items():
        for action in p._actions:
            assert action.help, f"{name}: {action.dest} lacks help"
