import json

import numpy as np
import pytest

from lln_attention import LLNParams, softmax_attention
from lln_attention.cli import load_matrix, main, save_matrix
from lln_attention.matching import MatchResult
from lln_attention.stats import stats_report


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


# ---------------------------------------------------------------- gen

def test_gen_is_byte_identical(tmp_path, capsys):
    for sub in ("a", "b"):
        assert run(capsys, "gen", "--seed", 7, "--n", 2, "--d", 2, "--out", tmp_path / sub)[0] == 0
    for name in ("q.csv", "k.csv", "v.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    lines = (tmp_path / "a" / "q.csv").read_text().splitlines()
    assert len(lines) == 2 and all(len(line.split(",")) == 2 for line in lines)


def test_gen_zero_sigma(tmp_path, capsys):
    run(capsys, "gen", "--seed", 1, "--n", 3, "--d", 2, "--sigma-q", 0, "--out", tmp_path)
    assert (tmp_path / "q.csv").read_text() == "0,0\n0,0\n0,0\n"


def test_gen_standard_deviation(tmp_path, capsys):
    run(capsys, "gen", "--seed", 2, "--n", 1000, "--d", 64, "--sigma-q", 1.5, "--out", tmp_path)
    q = load_matrix(tmp_path / "q.csv")
    assert q.shape == (1000, 64)
    assert abs(q.std() / 1.5 - 1) <= 0.03


def test_gen_round_trips_17_digits(tmp_path):
    x = np.random.default_rng(3).standard_normal((4, 3)) * 1e-7
    save_matrix(tmp_path / "x.csv", x)
    np.testing.assert_array_equal(load_matrix(tmp_path / "x.csv"), x)


def test_gen_unwritable_path(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("")
    code, _, err = run(capsys, "gen", "--seed", 1, "--n", 2, "--d", 2, "--out", blocker / "sub")
    assert code == 3 and "I/O error" in err


def test_seed_is_required(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["gen", "--n", "2", "--d", "2"])
    assert exc.value.code == 2


# ---------------------------------------------------------------- analyze

@pytest.fixture
def uniform_files(tmp_path):
    save_matrix(tmp_path / "q.csv", np.tile([0.3, -1.2, 2.0], (8, 1)))
    save_matrix(tmp_path / "k.csv", np.tile([1.0, 0.5, -0.7], (8, 1)))
    return tmp_path


def test_analyze_uniform(uniform_files, capsys):
    code, out, _ = run(capsys, "analyze", "--q", uniform_files / "q.csv", "--k", uniform_files / "k.csv")
    report = json.loads(out)
    assert code == 0
    assert report["entropy_bits"] == 3.0
    assert report["spectral_gap"] == 1.0
    assert report["temperature_empirical"] is None


def test_analyze_lln_zero_gains_matches_uniform(uniform_files, capsys):
    (uniform_files / "p.json").write_text(json.dumps({"alpha": 0.0, "beta": 0.0}))
    _, softmax_out, _ = run(capsys, "analyze", "--q", uniform_files / "q.csv",
                            "--k", uniform_files / "k.csv")
    code, lln_out, _ = run(capsys, "analyze", "--q", uniform_files / "q.csv",
                           "--k", uniform_files / "k.csv", "--method", "lln",
                           "--params", uniform_files / "p.json")
    assert code == 0 and lln_out == softmax_out


def test_analyze_matches_library(tmp_path, capsys):
    run(capsys, "gen", "--seed", 11, "--n", 128, "--d", 16, "--out", tmp_path)
    code, out, _ = run(capsys, "analyze", "--q", tmp_path / "q.csv", "--k", tmp_path / "k.csv",
                       "--out", tmp_path / "r.json")
    assert code == 0 and out == ""
    q, k = load_matrix(tmp_path / "q.csv"), load_matrix(tmp_path / "k.csv")
    direct = stats_report(q, k, softmax_attention(q, k, np.zeros((128, 1)))[1]).to_dict()
    assert json.loads((tmp_path / "r.json").read_text()) == direct


def test_analyze_accepts_match_output_as_params(tmp_path, capsys):
    run(capsys, "gen", "--seed", 12, "--n", 16, "--d", 4, "--out", tmp_path)
    (tmp_path / "m.json").write_text(json.dumps({"params": {"alpha": 0.5, "beta": 0.5}}))
    code, out, _ = run(capsys, "analyze", "--q", tmp_path / "q.csv", "--k", tmp_path / "k.csv",
                       "--method", "lln_diag", "--block-size", 4, "--params", tmp_path / "m.json")
    assert code == 0 and json.loads(out)["mu_log"] is not None


def test_analyze_errors(tmp_path, capsys):
    run(capsys, "gen", "--seed", 13, "--n", 4, "--d", 2, "--out", tmp_path)
    save_matrix(tmp_path / "short.csv", np.ones((3, 2)))
    (tmp_path / "bad.csv").write_text("1,2\nx,y\n")
    q = tmp_path / "q.csv"
    assert run(capsys, "analyze", "--q", q, "--k", tmp_path / "short.csv")[0] == 2
    assert run(capsys, "analyze", "--q", q, "--k", tmp_path / "bad.csv")[0] == 2
    assert run(capsys, "analyze", "--q", q, "--k", tmp_path / "missing.csv")[0] == 3
    code, _, err = run(capsys, "analyze", "--q", q, "--k", q, "--method", "lln")
    assert code == 2 and "--params" in err


# ---------------------------------------------------------------- match

MATCH_ARGS = ("match", "--seed", 42, "--seeds", 2, "--n", 64, "--d", 16, "--grid", "1,2,3,4")


def test_match_is_deterministic(capsys):
    code, first, _ = run(capsys, *MATCH_ARGS)
    _, second, _ = run(capsys, *MATCH_ARGS)
    result = json.loads(first)
    assert code == 0 and first == second
    assert [g["s2"] for g in result["grid"]] == [1.0, 2.0, 3.0, 4.0]


def test_match_default_residual(capsys):
    code, out, _ = run(capsys, "match", "--seed", 42)
    assert code == 0 and json.loads(out)["residual"] <= 0.15


def test_match_infeasible(monkeypatch, capsys):
    import lln_attention.matching as matching
    # a fit whose intercept exceeds sigma_q^2 sigma_k^2 = 1
    monkeypatch.setattr(matching, "fit_line", lambda x, y: (1.0, 5.0))
    code, out, err = run(capsys, *MATCH_ARGS)
    assert code == 2 and out == ""
    assert "calibration infeasible" in err


def test_match_bad_config(capsys):
    assert run(capsys, "match", "--seed", 1, "--grid", "1")[0] == 2
    assert run(capsys, "match", "--seed", 1, "--sigma-q", 0)[0] == 2


def test_match_result_json_layout():
    keys = set(json.loads(MatchResult(1.0, 0.0, LLNParams(1.0, 1.0), 0.0).to_json()))
    assert keys == {"a", "b", "alpha", "beta", "sigma_q", "sigma_k", "sigma_tilde", "residual", "grid"}


# ---------------------------------------------------------------- sweep and bench

def test_sweep_csv(tmp_path, capsys):
    code, _, _ = run(capsys, "sweep", "--seed", 0, "--kernels", "softmax,quadratic",
                     "--temps", "0.5,2", "--n", 16, "--d", 4, "--out", tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert code == 0
    assert lines[0] == "kernel,temperature,entropy_bits,spectral_gap"
    assert [line.split(",")[:2] for line in lines[1:]] == [
        ["softmax", "0.5"], ["softmax", "2"], ["quadratic", "0.5"], ["quadratic", "2"]]


def test_sweep_rejects_unknown_kernel(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["sweep", "--seed", "0", "--kernels", "cosine"])
    assert exc.value.code == 2


def test_bench_csv(capsys):
    code, out, _ = run(capsys, "bench", "--methods", "lln,softmax", "--seq-lens", "64,128",
                       "--dim", 8, "--repeats", 3)
    lines = out.splitlines()
    assert code == 0 and len(lines) == 5
    assert lines[0] == "method,seq_len,dim,block_size,wall_time_s,peak_bytes,repeats,status"
    assert all(line.endswith(",3,ok") for line in lines[1:])


def test_bench_oom_rows(capsys):
    code, out, _ = run(capsys, "bench", "--methods", "softmax", "--seq-lens", "64,65536",
                       "--dim", 8, "--repeats", 3, "--memory-budget-gb", 1)
    assert code == 0 and out.splitlines()[-1] == "softmax,65536,8,64,,,3,OOM"


def test_bench_rejects_unsorted_lengths(capsys):
    assert run(capsys, "bench", "--seq-lens", "128,64", "--repeats", 3)[0] == 2


# ---------------------------------------------------------------- verify

def test_verify_grads_passes(capsys):
    code, out, _ = run(capsys, "verify", "--suite", "grads", "--seed", 1)
    assert code == 0
    assert out.splitlines()[-1] == "3/3 properties passed"


def test_verify_stats_residuals(capsys):
    code, out, _ = run(capsys, "verify", "--suite", "stats", "--seed", 0)
    assert code == 0
    for line in out.splitlines()[:-1]:
        assert line.startswith("PASS")
        assert float(line.split("worst=")[1].split()[0]) <= 1e-12


def test_verify_corrupted_matrix(tmp_path, capsys):
    p = np.full((4, 4), 0.25)
    p[2] *= 0.9
    save_matrix(tmp_path / "p.csv", p)
    code, out, err = run(capsys, "verify", "--seed", 0, "--matrix", tmp_path / "p.csv")
    assert code == 1
    assert "FAIL  row_stochastic" in out and "row_stochastic" in err


def test_verify_clean_matrix(tmp_path, capsys):
    save_matrix(tmp_path / "p.csv", np.eye(3))
    assert run(capsys, "verify", "--seed", 0, "--matrix", tmp_path / "p.csv")[0] == 0
