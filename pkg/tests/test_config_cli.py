"""Config file parsing, artifact formats, and the command-line surface."""

import json

import numpy as np
import pytest

from pier.artifacts import (
    format_float,
    read_jsonl,
    read_params,
    write_params,
)
from pier.cli import main
from pier.config import (
    RunConfig,
    apply_assignments,
    config_from_dict,
    config_to_dict,
    load_config,
    parse_assignment,
)
from pier.errors import ConfigError

TINY_LINES = """\
# miniature run
vocab_size = 64
embed_dim = 16
num_layers = 1
num_heads = 2
seq_len = 16
global_batch = 8
total_iters = 60
sync_interval = 10
lazy_fraction = 0.5
groups = 2
corpus_tokens = 8192
val_tokens = 2048
val_batches = 1
val_batch_size = 8
"""


@pytest.fixture
def tiny_cfg_path(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY_LINES)
    return str(path)


# ---------------------------------------------------------------------------
# config parsing and validation
# ---------------------------------------------------------------------------

def test_defaults_validate():
    cfg = RunConfig().validate()
    assert cfg.total_iters == 3000
    assert cfg.groups == 4


def test_load_file_and_overrides(tiny_cfg_path):
    cfg = load_config(tiny_cfg_path, ["seed=9", "mode=diloco_baseline"])
    assert cfg.vocab_size == 64
    assert cfg.seed == 9
    assert cfg.mode == "diloco_baseline"


def test_parse_assignment_splits_and_typing():
    assert parse_assignment("seed=3") == ("seed", "3")
    with pytest.raises(ConfigError):
        parse_assignment("no_equals_sign")
    cfg = apply_assignments(
        RunConfig(),
        [
            "seed=3",
            "lazy_fraction=0.25",
            "offload_enabled=true",
            "corpus_path=none",
            "mode=pier",
        ],
    )
    assert cfg.seed == 3
    assert cfg.lazy_fraction == 0.25
    assert cfg.offload_enabled is True
    assert cfg.corpus_path is None
    assert cfg.mode == "pier"


def test_unknown_key_rejected():
    with pytest.raises(ConfigError) as e:
        apply_assignments(RunConfig(), ["num_groups=2"])
    assert "num_groups" in str(e.value)


def test_bad_value_names_key():
    with pytest.raises(ConfigError) as e:
        load_config(None, ["total_iters=soon"])
    assert "total_iters" in str(e.value)


def test_lazy_boundary_divisibility_enforced():
    with pytest.raises(ConfigError) as e:
        load_config(None, ["total_iters=1000", "sync_interval=33"])
    msg = str(e.value)
    assert "sync_interval" in msg and "lazy" in msg


def test_batch_divisibility_enforced():
    with pytest.raises(ConfigError) as e:
        load_config(None, ["global_batch=10", "groups=4"])
    assert "global_batch" in str(e.value)


def test_low_lazy_fraction_needs_fixed_outer_lr():
    with pytest.raises(ConfigError):
        load_config(None, ["lazy_fraction=0.0"])
    cfg = load_config(None, ["lazy_fraction=0.0", "outer_lr_fixed=1.0"])
    assert cfg.lazy_fraction == 0.0


def test_round_trip_through_dict():
    cfg = load_config(None, ["seed=4", "embed_dim=32"])
    again = config_from_dict(config_to_dict(cfg))
    assert again == cfg


def test_diloco_fixed_coefficient_defaults():
    cfg = load_config(None, ["mode=diloco_baseline"])
    assert cfg.effective_outer_lr_fixed() == 0.7
    assert cfg.effective_outer_mu_fixed() == 0.9
    pier_cfg = load_config(None)
    assert pier_cfg.effective_outer_lr_fixed() is None


# ---------------------------------------------------------------------------
# artifact formats
# ---------------------------------------------------------------------------

def test_float_serialization_round_trips():
    for x in (0.1, 1.0 / 3.0, 5.567853689333059, 1e-300, -0.0):
        assert float(format_float(x)) == x


def test_params_file_round_trip(tmp_path):
    path = tmp_path / "params.bin"
    theta = np.random.default_rng(0).normal(size=257)
    write_params(path, theta)
    back = read_params(path)
    assert np.array_equal(back, theta)
    assert back.dtype == theta.dtype

    theta32 = theta.astype(np.float32)
    write_params(path, theta32)
    assert np.array_equal(read_params(path), theta32)


def test_params_file_rejects_corruption(tmp_path):
    path = tmp_path / "params.bin"
    write_params(path, np.zeros(4))
    raw = bytearray(path.read_bytes())
    raw[0] = ord("X")
    path.write_bytes(bytes(raw))
    with pytest.raises(Exception):
        read_params(path)


# ---------------------------------------------------------------------------
# command line
# ---------------------------------------------------------------------------

def test_cli_train_writes_artifacts(tiny_cfg_path, tmp_path, capsys):
    out = tmp_path / "run"
    rc = main(["train", "--config", tiny_cfg_path, "--out", str(out)])
    assert rc == 0
    records = read_jsonl(out / "trajectory.jsonl")
    assert records[0]["record"] == "header"
    assert records[0]["mode"] == "pier"
    iters = [r["iter"] for r in records if r["record"] == "iter"]
    assert iters == list(range(0, 61))
    summary = json.loads((out / "summary.json").read_text())
    assert summary["record"] == "summary"
    theta = read_params(out / "params.bin")
    assert theta.shape[0] == summary["param_count"]


def test_cli_rerun_is_byte_identical(tiny_cfg_path, tmp_path):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["train", "--config", tiny_cfg_path, "--out", str(out1)]) == 0
    assert main(["train", "--config", tiny_cfg_path, "--out", str(out2)]) == 0
    for name in ("trajectory.jsonl", "params.bin", "summary.json"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name


def test_header_carries_code_version(tiny_cfg_path, tmp_path):
    import pier

    out = tmp_path / "run"
    main(["train", "--config", tiny_cfg_path, "--out", str(out)])
    header = read_jsonl(out / "trajectory.jsonl")[0]
    assert header["version"] == pier.__version__


def test_rerun_from_embedded_config_is_byte_identical(tiny_cfg_path, tmp_path):
    # the config written into an artifact must regenerate that artifact exactly
    from pier.driver import run_training

    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["train", "--config", tiny_cfg_path, "--out", str(out1)]) == 0
    embedded = json.loads((out1 / "summary.json").read_text())["config"]
    result = run_training(config_from_dict(embedded).validate())
    result.write(out2)
    for name in ("trajectory.jsonl", "params.bin", "summary.json"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name


def test_cli_seed_flag_overrides_config(tiny_cfg_path, tmp_path):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    main(["train", "--config", tiny_cfg_path, "--seed", "5", "--out", str(out1)])
    main(["train", "--config", tiny_cfg_path, "--set", "seed=5", "--out", str(out2)])
    assert (out1 / "params.bin").read_bytes() == (out2 / "params.bin").read_bytes()


def test_cli_config_error_exit_code(capsys):
    assert main(["train", "--set", "mode=sgd"]) == 2
    assert "config error" in capsys.readouterr().err


def test_cli_numeric_error_exit_code(tiny_cfg_path, capsys):
    with np.errstate(all="ignore"):
        rc = main(
            [
                "train",
                "--config",
                tiny_cfg_path,
                "--set",
                "inner_lr_peak=1e200",
                "--set",
                "clip_norm=1e300",
                "--set",
                "weight_decay=0",
            ]
        )
    assert rc == 3
    err = capsys.readouterr().err
    assert "numeric error" in err and "iteration" in err


def test_cli_gradcheck_threshold_exit_code(tiny_cfg_path, capsys):
    ok = main(["gradcheck", "--config", tiny_cfg_path])
    assert ok == 0
    bad = main(["gradcheck", "--config", tiny_cfg_path, "--tolerance", "1e-12"])
    assert bad == 4
    out = capsys.readouterr().out
    assert "PASS" in out and "FAIL" in out


def test_cli_project_runs_and_writes(tmp_path, capsys):
    out = tmp_path / "proj"
    rc = main(
        [
            "project",
            "--preset",
            "a100-node4",
            "--gpus",
            "8,16",
            "--intervals",
            "50,100",
            "--out",
            str(out),
        ]
    )
    assert rc == 0
    rows = read_jsonl(out / "projection.jsonl")
    assert len(rows) == 4
    assert all(r["speedup"] > 1.0 for r in rows)


def test_cli_project_rejects_bad_gpu_count(capsys):
    assert main(["project", "--gpus", "6"]) == 2


def test_cli_compare_writes_summary(tiny_cfg_path, tmp_path, capsys):
    out = tmp_path / "cmp"
    rc = main(["compare", "--config", tiny_cfg_path, "--out", str(out)])
    assert rc == 0
    summary = json.loads((out / "compare_summary.json").read_text())
    assert set(summary["final_val"]) == {"pier", "adamw_baseline", "diloco_baseline"}
    for mode in summary["final_val"]:
        assert (out / mode / "trajectory.jsonl").exists()
    # the aligned series share one iteration axis so curves compare directly
    series = summary["val_series"]
    n = len(series["iters"])
    assert all(len(series[m]) == n for m in summary["modes"])
    assert summary["pier_le_diloco"] in (True, False)
    assert summary["projected"]["speedup"] > 0.0
    assert "pier" in summary["transition_spike"]


def test_cli_compare_mode_subset(tiny_cfg_path, tmp_path):
    out = tmp_path / "cmp"
    rc = main(
        [
            "compare",
            "--config",
            tiny_cfg_path,
            "--modes",
            "pier,adamw_baseline",
            "--out",
            str(out),
        ]
    )
    assert rc == 0
    summary = json.loads((out / "compare_summary.json").read_text())
    assert summary["modes"] == ["pier", "adamw_baseline"]
    assert summary["pier_le_diloco"] is None
    assert not (out / "diloco_baseline").exists()


def test_cli_compare_rejects_single_mode(capsys):
    assert main(["compare", "--modes", "pier"]) == 2
    assert "at least two" in capsys.readouterr().err
    assert main(["compare", "--modes", "pier,sgd"]) == 2
