import json

import numpy as np
import pytest

from adaptalign.cli import file_digest, fnv1a64, strip_wall_clock
from adaptalign.synth import read_benchmark

from conftest import run_cli

# final output MSE of `train-reference` at the default config, pinned on the first build
PINNED_REFERENCE_MSE = 0.00249352


def _json(path):
    return json.loads(path.read_text())


def test_fnv1a_reference_vectors():
    assert fnv1a64(b"") == 0xCBF29CE484222325
    assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a64(b"foobar") == 0x85944171F73967E8


def test_simulate_layout_and_usage(cli_env, tmp_path):
    bench = read_benchmark(cli_env["bench"])
    assert len(bench.subjects) == 4 and bench.subjects[0].embeddings.shape == (1300, 64)
    code, _, err = run_cli("simulate", "--preset", "standard")
    assert code == 2 and "--out" in err
    code, _, _ = run_cli("simulate", "--out", tmp_path / "x", "--transform", "bogus")
    assert code == 2


def test_simulate_seed_is_reproducible(tmp_path):
    flags = ["--n-common", 50, "--n-unique", 10, "--n-test", 5, "--seed", 7, "--quiet"]
    assert run_cli("simulate", "--out", tmp_path / "a", *flags)[0] == 0
    assert run_cli("simulate", "--out", tmp_path / "b", *flags)[0] == 0
    ra, rb = _json(tmp_path / "a/report.json"), _json(tmp_path / "b/report.json")
    assert ra["outputs"] == rb["outputs"] and ra["seeds"] == {"benchmark": 7}


def test_train_reference_outputs(cli_env):
    ref = cli_env["ref"]
    rep = _json(ref / "report.json")
    assert "final output MSE" in cli_env["train_stdout"]
    assert rep["metrics"]["final_output_mse"] <= PINNED_REFERENCE_MSE
    assert set(rep["outputs"]) == {"adapter.json", "mapper.json", "trace.csv"}
    assert rep["resolved"]["lambda3"] == 1.0 and rep["resolved"]["stage1_tolerance"] == 1e-6
    assert all(len(d) == 16 for d in rep["inputs"].values())


def test_train_reference_zero_epochs(cli_env, tmp_path):
    code, _, _ = run_cli("train-reference", "--data", cli_env["bench"], "--out", tmp_path / "r", "--epochs", 0, "--quiet")
    assert code == 0
    assert (tmp_path / "r/trace.csv").read_text().splitlines() == ["epoch,total_loss,output_mse,adapter_mse"]
    assert (tmp_path / "r/adapter.json").exists()


def test_missing_data_dir_exits_1(tmp_path):
    missing = tmp_path / "nowhere"
    code, _, err = run_cli("train-reference", "--data", missing, "--out", tmp_path / "r")
    assert code == 1 and str(missing) in err


def _align(env, out, *flags):
    code, stdout, err = run_cli("align", "--data", env["bench"], "--reference", env["ref"], "--out", out, "--quiet", *flags)
    assert code == 0, err
    return _json(out / "report.json")


def test_align_step1_keeps_reference_mapper(cli_env, tmp_path):
    _align(cli_env, tmp_path / "s1", "--mode", "step1", "--common-limit", 50)
    assert file_digest(tmp_path / "s1/mapper.json") == file_digest(cli_env["ref"] / "mapper.json")


def test_align_aamax_beats_baseline_at_100_commons(cli_env, tmp_path):
    aamax = _align(cli_env, tmp_path / "a", "--mode", "aamax", "--common-limit", 100)
    base = _align(cli_env, tmp_path / "b", "--mode", "baseline", "--common-limit", 100)
    assert aamax["metrics"]["test_output_mse"] < base["metrics"]["test_output_mse"]
    assert aamax["metrics"]["n_train_common"] == 100 and aamax["metrics"]["n_train_items"] == 100


def test_align_with_selection_file(cli_env, tmp_path):
    code, _, err = run_cli("select", "--data", cli_env["bench"], "--reference", cli_env["ref"],
                           "--budget", 40, "--out", tmp_path / "sel", "--quiet")
    assert code == 0, err
    sel = tmp_path / "sel/selection.json"
    rep = _align(cli_env, tmp_path / "al", "--select", sel, "--mode", "aamax", "--epochs", 20)
    assert rep["metrics"]["selection_digest"] == file_digest(sel)
    assert rep["metrics"]["n_train_common"] == 40
    ids = np.sort(np.array(_json(sel)["item_ids"], dtype="<i8"))
    assert rep["metrics"]["train_common_ids_digest"] == f"{fnv1a64(ids.tobytes()):016x}"


def test_align_usage_errors(cli_env, tmp_path):
    base = ["align", "--data", cli_env["bench"], "--reference", cli_env["ref"], "--out", tmp_path / "x"]
    assert run_cli(*base, "--mode", "fancy")[0] == 2
    assert run_cli(*base, "--common-limit", 5000)[0] == 2
    assert run_cli(*base, "--common-limit", 0)[0] == 2
    assert run_cli("align", "--data", cli_env["bench"], "--out", tmp_path / "x")[0] == 2
    assert run_cli(*base[:-2], "--reference", tmp_path / "nothing", "--out", tmp_path / "x")[0] == 1


def _select(env, out, *flags):
    code, _, err = run_cli("select", "--data", env["bench"], "--reference", env["ref"], "--out", out, "--quiet", *flags)
    assert code == 0, err
    return _json(out / "selection.json")


def test_select_budget_and_determinism(cli_env, tmp_path):
    sel = _select(cli_env, tmp_path / "a", "--dims", 20, "--budget", 250)
    assert len(sel["chosen"]) == 250 and len(sel["gap_trace"]) == 250
    assert sel["termination"] == "budget_reached"
    assert {"d", "w", "bin_counts", "skipped_dims"} <= set(sel) and sel["d"] == 20 and sel["w"] == 200
    _select(cli_env, tmp_path / "b", "--dims", 20, "--budget", 250)
    assert (tmp_path / "a/selection.json").read_bytes() == (tmp_path / "b/selection.json").read_bytes()


def test_select_without_budget(cli_env, tmp_path):
    sel = _select(cli_env, tmp_path / "nb")
    assert sel["termination"] in ("full_coverage", "no_improvement")
    assert sel["empty_total"] == sel["empty_uncoverable"]


def test_select_w50_saturates_before_budget(cli_env, tmp_path):
    # with w = 50 the universe has few enough bins that greedy covers them all
    # before 250 picks; the loop stops instead of padding with zero-gain items
    sel = _select(cli_env, tmp_path / "w50", "--w", 50, "--budget", 250)
    assert sel["termination"] == "full_coverage"
    assert len(sel["chosen"]) < 250 and sel["empty_total"] == sel["empty_uncoverable"]


def test_metrics_subject_vs_itself(cli_env, tmp_path):
    code, _, err = run_cli("metrics", "--data", cli_env["bench"], "--subjects", "2,2", "--out", tmp_path / "m", "--quiet")
    assert code == 0, err
    m = _json(tmp_path / "m/metrics.json")
    assert m["cosine"][0][1] == pytest.approx(1.0, abs=1e-12)
    assert m["mse"][0][1] == 0.0 and m["knn"][0][1] == 1.0
    assert m["knn_k"] == 50 and m["eig_k"] == 5
    rep = _json(tmp_path / "m/report.json")
    assert rep["resolved"]["knn_k"] == 50 and rep["resolved"]["eig_k"] == 5 and rep["resolved"]["center"] is False


def test_metrics_after_aamax_alignment(cli_env, tmp_path):
    models = ["--model", f"1={cli_env['ref']}"]
    for s in ("2", "3", "4"):
        _align(cli_env, tmp_path / f"al{s}", "--subject", s, "--mode", "aamax")
        models += ["--model", f"{s}={tmp_path / f'al{s}'}"]
    code, _, err = run_cli("metrics", "--data", cli_env["bench"], *models, "--out", tmp_path / "m", "--quiet")
    assert code == 0, err
    cos = np.array(_json(tmp_path / "m/metrics.json")["cosine"])
    assert cos[~np.eye(4, dtype=bool)].min() >= 0.99
    raw = run_cli("metrics", "--data", cli_env["bench"], "--out", tmp_path / "raw", "--quiet")
    assert raw[0] == 0
    assert _json(tmp_path / "raw/report.json")["metrics"]["mean_offdiag_cosine"] < 0.5


def test_metrics_usage_errors(cli_env, tmp_path):
    assert run_cli("metrics", "--data", cli_env["bench"], "--knn-k", 1000, "--out", tmp_path / "x")[0] == 2
    assert run_cli("metrics", "--data", cli_env["bench"], "--model", "oops", "--out", tmp_path / "x")[0] == 2
    assert run_cli("metrics", "--data", cli_env["bench"], "--subjects", "9", "--out", tmp_path / "x")[0] == 1
    mixed = run_cli("metrics", "--data", cli_env["bench"], "--model", f"1={cli_env['ref']}", "--out", tmp_path / "x")
    assert mixed[0] == 2 and "missing: 2, 3, 4" in mixed[2]


@pytest.fixture(scope="module")
def selection_250(cli_env, tmp_path_factory):
    out = tmp_path_factory.mktemp("sel250")
    _select(cli_env, out, "--budget", 250)
    return out / "selection.json"


def test_coverage_test_greedy_is_significant(cli_env, selection_250, tmp_path):
    code, _, err = run_cli("coverage-test", "--data", cli_env["bench"], "--reference", cli_env["ref"],
                           "--selection", selection_250, "--trials", 1000, "--out", tmp_path / "c", "--quiet")
    assert code == 0, err
    cov = _json(tmp_path / "c/coverage.json")
    assert cov["p_value"] <= 0.01
    assert cov["selected_empty"] < cov["random_mean"] - 3 * cov["random_std"]


def test_coverage_test_single_trial(cli_env, selection_250, tmp_path):
    code, _, _ = run_cli("coverage-test", "--data", cli_env["bench"], "--reference", cli_env["ref"],
                         "--selection", selection_250, "--trials", 1, "--out", tmp_path / "c", "--quiet")
    assert code == 0
    assert _json(tmp_path / "c/coverage.json")["p_value"] in (0.5, 1.0)


def test_coverage_test_universe_mismatch(cli_env, tmp_path):
    small = tmp_path / "small"
    assert run_cli("simulate", "--out", small, "--n-common", 300, "--quiet")[0] == 0
    assert run_cli("train-reference", "--data", small, "--out", tmp_path / "sref", "--epochs", 5, "--quiet")[0] == 0
    assert run_cli("select", "--data", small, "--reference", tmp_path / "sref", "--budget", 10,
                   "--out", tmp_path / "ssel", "--quiet")[0] == 0
    code, _, err = run_cli("coverage-test", "--data", cli_env["bench"], "--reference", cli_env["ref"],
                           "--selection", tmp_path / "ssel/selection.json", "--out", tmp_path / "c")
    assert code == 1 and "universe" in err


def test_extremes(cli_env, tmp_path):
    args = ["extremes", "--data", cli_env["bench"], "--reference", cli_env["ref"], "--count", 10, "--quiet"]
    assert run_cli(*args, "--out", tmp_path / "a")[0] == 0
    ext = _json(tmp_path / "a/extremes.json")
    assert len(ext["top"]) == len(ext["bottom"]) == 10
    common = set(read_benchmark(cli_env["bench"]).subject("1").ids("common").tolist())
    assert set(ext["top"]) <= common and set(ext["bottom"]) <= common
    assert ext["top_values"] == sorted(ext["top_values"], reverse=True)
    assert run_cli(*args, "--out", tmp_path / "b")[0] == 0
    assert (tmp_path / "a/extremes.json").read_bytes() == (tmp_path / "b/extremes.json").read_bytes()
    assert run_cli(*args, "--dims", 20, "--dim", 20, "--out", tmp_path / "c")[0] == 2


def test_config_file_and_report_rerun(cli_env, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"budget": 30, "dims": 10}))
    sel = _select(cli_env, tmp_path / "a", "--config", cfg)
    assert len(sel["chosen"]) == 30 and sel["d"] == 10
    sel = _select(cli_env, tmp_path / "b", "--config", cfg, "--budget", 12)
    assert len(sel["chosen"]) == 12
    # a report re-runs from its own echoed config to the same metrics
    first = _json(tmp_path / "b/report.json")
    _select(cli_env, tmp_path / "c", "--config", tmp_path / "b/report.json")
    again = _json(tmp_path / "c/report.json")
    assert again["metrics"] == first["metrics"] and again["outputs"] == first["outputs"]
    cfg.write_text(json.dumps({"nonsense": 1}))
    assert run_cli("select", "--config", cfg, "--out", tmp_path / "d")[0] == 2
    assert "duration_s" in first and "duration_s" not in strip_wall_clock(first)


def test_unknown_command_and_help():
    assert run_cli("frobnicate")[0] == 2
    assert run_cli("--help")[0] == 0
