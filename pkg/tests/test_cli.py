import csv
import json

import numpy as np
import pytest

from sparsefpca.cli import main, parse_range, resolve, build_parser
from sparsefpca.errors import InputError

QUICK = ["--no-plots", "--m-grid", "51"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def simdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--setting", "2", "--n", "60", "--seed", "3", "--out", str(d)]) == 0
    return d


def test_parse_range():
    assert parse_range("5:11") == tuple(range(5, 12))
    assert parse_range("5,8") == (5, 8)
    assert parse_range([3, 4]) == (3, 4)
    assert parse_range(7) == (7,)
    with pytest.raises(InputError):
        parse_range("a:b")
    with pytest.raises(InputError):
        parse_range("")


def test_simulate_setting1(tmp_path, capsys):
    code, out, _ = run(capsys, "simulate", "--setting", 1, "--out", tmp_path)
    assert code == 0
    ids = {r[0] for r in rows(tmp_path / "data.csv")[1:]}
    assert len(ids) == 50
    truth = json.loads((tmp_path / "truth.json").read_text())
    assert truth["sigma2"] == 1.0
    assert (tmp_path / "latent.csv").exists()


def test_simulate_deterministic(tmp_path, capsys):
    for d in ("a", "b"):
        assert run(capsys, "simulate", "--n", 10, "--seed", 9, "--out", tmp_path / d)[0] == 0
    assert (tmp_path / "a" / "data.csv").read_bytes() == (tmp_path / "b" / "data.csv").read_bytes()


def test_simulate_noiseless_matches_latent(tmp_path, capsys):
    run(capsys, "simulate", "--n", 5, "--sigma2", 0, "--seed", 1, "--out", tmp_path)
    from sparsefpca.simulate import SimSpec, make_truth, simulate_dataset
    sim = simulate_dataset(SimSpec("eggcrate", 5, 5, 15, 0.0, seed=1), make_truth("eggcrate"))
    data = rows(tmp_path / "data.csv")[1:]
    y = np.array([float(r[2]) for r in data])
    np.testing.assert_allclose(y, np.concatenate(sim.latent_obs), rtol=0, atol=1e-12)


def test_missing_input_exit_2(tmp_path, capsys):
    missing = tmp_path / "nowhere.csv"
    code, _, err = run(capsys, "fit", "--input", missing, "--out", tmp_path)
    assert code == 2
    assert str(missing) in err


def test_fit_q_below_p(simdir, tmp_path, capsys):
    code, _, err = run(capsys, "fit", "--input", simdir / "data.csv", "--q", 2, "--p", 3,
                       "--out", tmp_path)
    assert code == 2 and "Q >= p" in err


def test_fit_rerun_identical(simdir, tmp_path, capsys):
    args = ["fit", "--input", simdir / "data.csv", "--basis", "fourier", "--q", 5, "--p", 3,
            "--seed", 2, "--trace", *QUICK]
    assert run(capsys, *args, "--out", tmp_path / "a")[0] == 0
    assert run(capsys, *args, "--out", tmp_path / "b")[0] == 0
    a, b = (tmp_path / "a" / "model.json").read_bytes(), (tmp_path / "b" / "model.json").read_bytes()
    assert a == b
    e = rows(tmp_path / "a" / "eigenfunctions.csv")
    assert e[0] == ["t", "phi_1", "phi_2", "phi_3"] and len(e) == 52
    assert rows(tmp_path / "a" / "trace.csv")[0] == ["iter", "nll", "grad_inf"]


def test_fit_then_predict(simdir, tmp_path, capsys):
    run(capsys, "fit", "--input", simdir / "data.csv", "--basis", "fourier", "--q", 5, "--p", 3,
        "--out", tmp_path, *QUICK)
    code, out, _ = run(capsys, "predict", "--model", tmp_path / "model.json", "--input",
                       simdir / "data.csv", "--grid-size", 17, "--out", tmp_path, "--no-plots")
    assert code == 0 and "alpha=0.05" in out
    pred = rows(tmp_path / "predictions.csv")
    assert pred[0] == ["id", "t", "yhat", "lo", "hi"]
    assert len(pred) - 1 == 60 * 17
    sc = rows(tmp_path / "scores.csv")
    assert sc[0] == ["id", "xi_1", "xi_2", "xi_3"] and len(sc) == 61


def test_predict_empty_subject(simdir, tmp_path, capsys):
    run(capsys, "fit", "--input", simdir / "data.csv", "--basis", "fourier", "--q", 5, "--p", 2,
        "--out", tmp_path, *QUICK)
    bad = tmp_path / "bad.csv"
    text = (simdir / "data.csv").read_text()
    bad.write_text(text + "ghost,0.5,\n")
    code, _, err = run(capsys, "predict", "--model", tmp_path / "model.json", "--input", bad,
                       "--out", tmp_path, "--no-plots")
    assert code == 2 and "ghost" in err


def test_predict_needs_model(tmp_path, capsys):
    code, _, err = run(capsys, "predict", "--input", "x.csv", "--out", tmp_path)
    assert code == 2 and "--model" in err


def test_select_single_pair(simdir, tmp_path, capsys):
    code, out, _ = run(capsys, "select", "--input", simdir / "data.csv", "--basis", "fourier",
                       "--q-range", "5", "--p-range", "3", "--out", tmp_path, *QUICK)
    assert code == 0 and "chosen Q=5 p=3" in out
    table = rows(tmp_path / "selection.csv")
    assert table[0] == ["Q", "p", "nll", "aic", "cv", "converged", "seconds"]
    assert len(table) == 2
    assert json.loads((tmp_path / "model.json").read_text())["diagnostics"]["strategy"] == "grid"


@pytest.mark.slow
@pytest.mark.parametrize("strategy,n_rows", [("sequential", 13), ("grid", 40)])
def test_select_table_sizes(simdir, tmp_path, capsys, strategy, n_rows):
    code, _, _ = run(capsys, "select", "--input", simdir / "data.csv", "--basis", "fourier",
                     "--q-range", "8:15", "--p-range", "2:6", "--strategy", strategy,
                     "--max-iters", 300, "--out", tmp_path, "--no-plots", "--m-grid", "31")
    assert code == 0
    assert len(rows(tmp_path / "selection.csv")) - 1 == n_rows


def test_config_file_and_overrides(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"q": 7, "p": 2, "seed": 5}))
    ns = build_parser().parse_args(["fit", "--config", str(cfg), "--seed", "8"])
    r = resolve(ns)
    assert (r["q"], r["p"], r["seed"]) == (7, 2, 8)
    assert r["alpha"] == 0.05 and r["max_iters"] == 500


def test_bench_defaults_bigger_budget():
    r = resolve(build_parser().parse_args(["bench"]))
    assert (r["max_iters"], r["max_retries"]) == (2000, 2)
    r = resolve(build_parser().parse_args(["bench", "--max-iters", "50"]))
    assert r["max_iters"] == 50


def test_config_unknown_key(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"q": 7, "colour": "red"}))
    code, _, err = run(capsys, "fit", "--config", cfg, "--input", "x.csv")
    assert code == 2 and "colour" in err
    cfg.write_text("[1, 2]")
    assert run(capsys, "fit", "--config", cfg)[0] == 2
    cfg.write_text("{oops")
    assert run(capsys, "fit", "--config", cfg)[0] == 2


def test_outdir_from_env(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("SPARSEFPCA_OUTDIR", str(tmp_path / "env"))
    assert run(capsys, "simulate", "--n", 4)[0] == 0
    assert (tmp_path / "env" / "data.csv").exists()


def test_bench_one_replicate_with_plots(tmp_path, capsys):
    code, out, _ = run(capsys, "bench", "--replicates", 1, "--n", 60, "--q-range", "5:6",
                       "--p-range", "2:3", "--basis", "fourier", "--m-grid", 51, "--out", tmp_path)
    assert code == 0 and "convergence rate" in out and "needed a retry" in out
    m = rows(tmp_path / "metrics.csv")
    s = {r[0]: r for r in rows(tmp_path / "summary.csv")[1:]}
    assert len(m) == 2
    head = m[0]
    # with one replicate the summary median is that replicate (times the table scale)
    v = float(m[1][head.index("rmse_phi1")])
    assert float(s["rmse_phi1"][2]) == pytest.approx(100 * v)
    assert "convergence_rate" in s and "retried_fits" in s
    assert (tmp_path / "bench.png").stat().st_size > 0


def test_plots_written(simdir, tmp_path, capsys):
    run(capsys, "select", "--input", simdir / "data.csv", "--basis", "fourier",
        "--q-range", "5", "--p-range", "2:3", "--m-grid", 51, "--out", tmp_path)
    run(capsys, "predict", "--model", tmp_path / "model.json", "--input", simdir / "data.csv",
        "--out", tmp_path)
    for name in ("eigenfunctions.png", "selection.png", "predictions.png"):
        assert (tmp_path / name).stat().st_size > 0


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
