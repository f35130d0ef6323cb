import json

import pandas as pd
import pytest

from main import EXIT_ERROR, EXIT_OK, EXIT_USAGE, run_cli

TINY_SPEC = "n_train = 6\nn_test = 4\nh = 4\nw = 4\nd = 8\ns = 2\nrect_min = 1\nrect_max = 2\n"
TINY_TRAIN = "# quick run\nepochs = 2\nbatch_size = 3\nn_subspaces = 2\n"


@pytest.fixture
def workspace(tmp_path):
    (tmp_path / "spec.cfg").write_text(TINY_SPEC)
    (tmp_path / "train.cfg").write_text(TINY_TRAIN)
    return tmp_path


def _gen(ws, name="data"):
    code = run_cli(["gen", "--config", str(ws / "spec.cfg"), "--out", str(ws / name), "--log-dir", str(ws / "logs")])
    assert code == EXIT_OK
    return ws / name


def _train(ws, data, name="run"):
    code = run_cli(["train", "--dataset", str(data), "--config", str(ws / "train.cfg"),
                    "--out", str(ws / name), "--log-dir", str(ws / "logs")])
    assert code == EXIT_OK
    return ws / name


# ── Usage errors ──────────────────────────────────────────────────────────────

def test_usage_errors_exit_with_two(tmp_path):
    assert run_cli([]) == EXIT_USAGE
    assert run_cli(["bogus"]) == EXIT_USAGE
    assert run_cli(["train", "--out", str(tmp_path)]) == EXIT_USAGE


def test_help_exits_cleanly():
    assert run_cli(["--help"]) == EXIT_OK


# ── End-to-end pipeline ───────────────────────────────────────────────────────

def test_gen_train_eval_score(workspace):
    data = _gen(workspace)
    assert len(pd.read_csv(data / "index.csv")) == 10

    run = _train(workspace, data)
    assert (run / "checkpoint.tkcp").exists()
    history = pd.read_csv(run / "history.csv")
    assert history["epoch"].tolist() == [1, 2]

    logs = ["--log-dir", str(workspace / "logs")]
    ckpt = str(run / "checkpoint.tkcp")
    assert run_cli(["eval", "--dataset", str(data), "--checkpoint", ckpt, "--out", str(run)] + logs) == EXIT_OK
    metrics = pd.read_csv(run / "metrics.csv")
    assert metrics["metric"].tolist() == ["image_auroc", "image_ap", "pixel_auroc", "pixel_aupro"]
    assert metrics["value"].between(0.0, 1.0).all()
    assert (run / "usage.csv").exists()

    maps = workspace / "maps"
    assert run_cli(["score", "--dataset", str(data), "--checkpoint", ckpt, "--out", str(maps)] + logs) == EXIT_OK
    assert len(list(maps.glob("*_anomaly.pgm"))) == 4
    assert len(pd.read_csv(maps / "scores.csv")) == 4

    records = [json.loads(p.read_text()) for p in (workspace / "logs").glob("run_*.json")]
    assert sorted(r["subcommand"] for r in records) == ["eval", "gen", "score", "train"]
    assert all(r["status"] == "OK" for r in records)


def test_pipeline_is_reproducible(workspace):
    runs = []
    for tag in ("a", "b"):
        data = _gen(workspace, f"data_{tag}")
        runs.append(_train(workspace, data, f"run_{tag}"))
    assert (runs[0] / "checkpoint.tkcp").read_bytes() == (runs[1] / "checkpoint.tkcp").read_bytes()
    assert (runs[0] / "history.csv").read_text() == (runs[1] / "history.csv").read_text()
    for tag, run in zip(("a", "b"), runs):
        code = run_cli(["eval", "--dataset", str(workspace / f"data_{tag}"), "--checkpoint", str(run / "checkpoint.tkcp"),
                        "--out", str(run), "--log-dir", str(workspace / "logs")])
        assert code == EXIT_OK
    for name in ("metrics.csv", "usage.csv"):
        assert (runs[0] / name).read_bytes() == (runs[1] / name).read_bytes()


def test_eval_without_checkpoint_uses_a_fresh_model(workspace):
    data = _gen(workspace)
    code = run_cli(["eval", "--dataset", str(data), "--config", str(workspace / "train.cfg"), "--van",
                    "--out", str(workspace / "fresh"), "--log-dir", str(workspace / "logs")])
    assert code == EXIT_OK
    assert (workspace / "fresh" / "metrics.csv").exists()


def test_image_score_formula_flag_accepts_paper_and_balanced(workspace):
    data = _gen(workspace)
    values = {}
    for formula in ("paper", "half_peak", "balanced"):
        out = workspace / f"ev_{formula}"
        code = run_cli(["eval", "--dataset", str(data), "--config", str(workspace / "train.cfg"),
                        "--image-score-formula", formula, "--out", str(out), "--log-dir", str(workspace / "logs")])
        assert code == EXIT_OK
        values[formula] = (out / "metrics.csv").read_bytes()
    assert values["paper"] == values["half_peak"]
    assert run_cli(["eval", "--dataset", str(data), "--image-score-formula", "peak",
                    "--out", str(workspace / "ev"), "--log-dir", str(workspace / "logs")]) == EXIT_USAGE


# ── Runtime errors ────────────────────────────────────────────────────────────

def test_missing_dataset_exits_with_one(workspace):
    code = run_cli(["train", "--dataset", str(workspace / "nowhere"), "--out", str(workspace / "run"),
                    "--log-dir", str(workspace / "logs")])
    assert code == EXIT_ERROR
    (record,) = [json.loads(p.read_text()) for p in (workspace / "logs").glob("run_*.json")]
    assert record["status"] == "ERROR"
    assert "DatasetError" in record["errors"][0]


def test_missing_checkpoint_exits_with_one(workspace):
    data = _gen(workspace)
    code = run_cli(["eval", "--dataset", str(data), "--checkpoint", str(workspace / "none.tkcp"),
                    "--out", str(workspace / "ev"), "--log-dir", str(workspace / "logs")])
    assert code == EXIT_ERROR


def test_bad_config_key_exits_with_one(workspace):
    data = _gen(workspace)
    (workspace / "bad.cfg").write_text("n_subspace = 3\n")
    code = run_cli(["train", "--dataset", str(data), "--config", str(workspace / "bad.cfg"),
                    "--out", str(workspace / "run"), "--log-dir", str(workspace / "logs")])
    assert code == EXIT_ERROR


# ── Diagnostics and sweeps ────────────────────────────────────────────────────

def test_sinkhorn_check_writes_its_table(tmp_path):
    code = run_cli(["sinkhorn-check", "--out", str(tmp_path / "checks"), "--log-dir", str(tmp_path / "logs")])
    assert code == EXIT_OK
    table = pd.read_csv(tmp_path / "checks" / "sinkhorn_check.csv")
    assert table["passed"].all()
    assert set(table["check"]) == {"mass", "marginals", "fixed_point", "shift_invariance",
                                   "permutation", "exact_ot", "batch_seconds"}
    assert table.loc[table["check"] == "mass", "passed"].all()


def test_ablate_writes_one_row_per_cell(workspace):
    data = _gen(workspace)
    (workspace / "quick.cfg").write_text("epochs = 1\nbatch_size = 6\n")
    code = run_cli(["ablate", "--dataset", str(data), "--config", str(workspace / "quick.cfg"),
                    "--out", str(workspace / "abl"), "--log-dir", str(workspace / "logs")])
    assert code == EXIT_OK
    table = pd.read_csv(workspace / "abl" / "ablation.csv")
    assert len(table) == 12
    assert table["axis"].tolist()[:5] == ["n_subspaces"] * 5
