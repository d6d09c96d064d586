import json

import pandas as pd
import pytest

from run_finecausal import main

# THIS FILE TESTS THE COMMAND LINE: EXIT CODES, OUTPUT FILES AND OPTION HANDLING.


@pytest.fixture
def tiny_config(tmp_path):
	"""Run config matching the tiny benchmark, one epoch."""
	path = tmp_path / "config.json"
	path.write_text(json.dumps({
		"epochs": 1,
		"batch_size": 4,
		"data": {"seed": 0, "n_train": 24, "n_test": 12, "snippets": 5, "feature_dim": 8, "mask_dim": 3},
	}))
	return path


@pytest.fixture
def data_dir(tmp_path, tiny_config):
	out = tmp_path / "data"
	assert main(["gen-data", "--config", str(tiny_config), "--out-dir", str(out)]) == 0
	return out


@pytest.fixture
def checkpoint(tmp_path, tiny_config, data_dir):
	out = tmp_path / "run"
	assert main(["train", "--config", str(tiny_config), "--data", str(data_dir), "--out-dir", str(out)]) == 0
	return out / "checkpoint.json"


# --- HAPPY PATHS ---
def test_gen_data_is_reproducible(tmp_path, tiny_config, data_dir) -> None:
	again = tmp_path / "again"

	assert main(["gen-data", "--config", str(tiny_config), "--out-dir", str(again)]) == 0

	for name in ("train.jsonl", "test.jsonl", "gen_config.json"):
		assert (again / name).read_bytes() == (data_dir / name).read_bytes()
	assert len((data_dir / "train.jsonl").read_text().splitlines()) == 25


def test_gen_data_flags_override_config(tmp_path, tiny_config) -> None:
	out = tmp_path / "data"

	assert main(["gen-data", "--config", str(tiny_config), "--n-train", "3", "--c-train", "0.5", "--out-dir", str(out)]) == 0

	written = json.loads((out / "gen_config.json").read_text())
	assert written["n_train"] == 3 and written["c_train"] == 0.5 and written["feature_dim"] == 8


def test_train_eval_export(tmp_path, data_dir, checkpoint) -> None:
	run_dir = checkpoint.parent
	assert (run_dir / "metrics.jsonl").exists()
	assert json.loads((run_dir / "run_config.json").read_text())["epochs"] == 1

	eval_dir = tmp_path / "eval"
	assert main(["eval", "--checkpoint", str(checkpoint), "--data", str(data_dir), "--out-dir", str(eval_dir)]) == 0
	assert set(json.loads((eval_dir / "report.json").read_text())) == {"rho", "r_l2_x100", "aiou@0.5", "aiou@0.75"}
	assert len((eval_dir / "predictions.jsonl").read_text().splitlines()) == 12

	attn_dir = tmp_path / "attn"
	assert main(["export-attn", "--checkpoint", str(checkpoint), "--data", str(data_dir), "--n", "2", "--out-dir", str(attn_dir)]) == 0
	assert (attn_dir / "tca_attention_mean.csv").exists()
	assert len([p for p in attn_dir.iterdir() if p.is_dir()]) == 2


def test_ablate_writes_four_rows(tmp_path, tiny_config, data_dir) -> None:
	out = tmp_path / "ablation"

	assert main(["ablate", "--config", str(tiny_config), "--data", str(data_dir), "--seeds", "0", "--out-dir", str(out)]) == 0

	frame = pd.read_csv(out / "ablation.csv", index_col=0)
	assert list(frame.index) == ["baseline", "gat_only", "tca_only", "full"]
	assert (out / "ablation.txt").exists()


def test_grad_check_passes(tmp_path) -> None:
	assert main(["grad-check", "--variant", "tca_only", "--out-dir", str(tmp_path)]) == 0

	frame = pd.read_csv(tmp_path / "grad_check.csv")
	assert frame["passed"].all()


def test_graph_report(tmp_path, capsys) -> None:
	assert main(["graph-report", "--out-dir", str(tmp_path)]) == 0

	assert "violations: none" in capsys.readouterr().out
	assert "factorization" in json.loads((tmp_path / "causal_graph.json").read_text())


def test_out_dir_from_environment(tmp_path, monkeypatch) -> None:
	monkeypatch.setenv("FINECAUSAL_OUT_DIR", str(tmp_path / "env"))

	assert main(["graph-report"]) == 0

	assert (tmp_path / "env" / "causal_graph.json").exists()


# --- FAILURES ---
def test_help_exits_zero(capsys) -> None:
	assert main(["--help"]) == 0
	assert "gen-data" in capsys.readouterr().out


def test_unknown_flag_is_a_usage_error(capsys) -> None:
	assert main(["train", "--no-such-flag"]) == 1
	assert "Error" in capsys.readouterr().err


def test_missing_checkpoint_is_a_usage_error(tmp_path) -> None:
	assert main(["eval", "--checkpoint", str(tmp_path / "missing.json")]) == 1


def test_bad_seed_list_is_a_usage_error(tiny_config) -> None:
	assert main(["ablate", "--config", str(tiny_config), "--seeds", "zero"]) == 1


def test_corrupted_dataset_is_a_runtime_error(tmp_path, tiny_config, data_dir, capsys) -> None:
	train_file = data_dir / "train.jsonl"
	lines = train_file.read_text().splitlines()
	lines[4] = lines[4][:20]
	train_file.write_text("\n".join(lines) + "\n")

	assert main(["train", "--config", str(tiny_config), "--data", str(data_dir), "--out-dir", str(tmp_path / "run")]) == 2
	assert "line 5" in capsys.readouterr().err


def test_invalid_config_is_a_runtime_error(tmp_path) -> None:
	path = tmp_path / "bad.json"
	path.write_text(json.dumps({"epochs": -1}))

	assert main(["train", "--config", str(path), "--out-dir", str(tmp_path / "run")]) == 2


def test_out_of_range_flag_is_a_usage_error(tmp_path, capsys) -> None:
	assert main(["gen-data", "--c-train", "2", "--out-dir", str(tmp_path / "data")]) == 1
	assert "c_train" in capsys.readouterr().err


def test_invalid_train_flag_over_a_valid_config_is_a_usage_error(tmp_path, tiny_config) -> None:
	assert main(["train", "--config", str(tiny_config), "--epochs=-1", "--out-dir", str(tmp_path / "run")]) == 1
