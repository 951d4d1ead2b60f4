"""Command-line client: argument handling, exit codes, full pipeline runs."""

import hashlib
from pathlib import Path

import pytest

from shiftuq import cli

CFG_TEMPLATE = """
[task]
kind = hetero_linear
n_train = 40
n_test = 40

[model]
embed_dim = 4
pretrain_steps = 40

[train]
num_envs = 3
env_test_size = 5
env_train_size = 30
steps = 3
posterior_samples = 50

[run]
seeds = {seeds}
out_dir = {out_dir}
"""


@pytest.fixture
def cfg_file(tmp_path):
    def write(seeds="0", extra="", out=None):
        out_dir = out or tmp_path / "runs"
        path = tmp_path / "experiment.ini"
        path.write_text(CFG_TEMPLATE.format(seeds=seeds, out_dir=out_dir) + extra)
        return path

    return write


def tree_hashes(root):
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(Path(root).rglob("*"))
        if p.is_file()
    }


def test_missing_config_fails_with_one_line(capsys):
    code = cli.main(["gen-data", "--config", "/nonexistent/experiment.ini"])
    assert code != 0
    err = capsys.readouterr().err
    assert err.startswith("error:")
    assert err.count("\n") == 1


def test_stage_out_of_order_fails_cleanly(cfg_file, capsys):
    path = cfg_file()
    assert cli.main(["gen-data", "--config", str(path)]) == 0
    code = cli.main(["fit", "--config", str(path)])
    assert code != 0
    err = capsys.readouterr().err
    assert err.startswith("error: fit:")
    assert "pretrain" in err


def test_gen_data_runs_all_seeds(cfg_file, tmp_path, capsys):
    path = cfg_file(seeds="0, 1")
    assert cli.main(["gen-data", "--config", str(path)]) == 0
    out = capsys.readouterr().out
    assert "seed=0" in out and "seed=1" in out
    assert (tmp_path / "runs" / "seed-0" / "train.csv").is_file()
    assert (tmp_path / "runs" / "seed-1" / "train.csv").is_file()


def test_seed_flag_limits_to_one_seed(cfg_file, tmp_path):
    path = cfg_file(seeds="0, 1")
    assert cli.main(["gen-data", "--config", str(path), "--seed", "1"]) == 0
    assert (tmp_path / "runs" / "seed-1" / "train.csv").is_file()
    assert not (tmp_path / "runs" / "seed-0").exists()


def test_out_flag_overrides_directory(cfg_file, tmp_path):
    path = cfg_file()
    other = tmp_path / "elsewhere"
    assert cli.main(["gen-data", "--config", str(path), "--out", str(other)]) == 0
    assert (other / "seed-0" / "train.csv").is_file()
    assert not (tmp_path / "runs").exists()


def test_full_pipeline_and_eval(cfg_file, tmp_path, capsys):
    path = cfg_file()
    for stage in ("gen-data", "pretrain", "fit", "predict", "eval"):
        assert cli.main([stage, "--config", str(path)]) == 0, stage
    out = capsys.readouterr().out
    assert "rmse" in out
    assert (tmp_path / "runs" / "metrics.csv").is_file()


def test_rerun_is_byte_identical(cfg_file, tmp_path):
    path = cfg_file()
    run = lambda: [
        cli.main([stage, "--config", str(path)])
        for stage in ("gen-data", "pretrain", "fit", "predict", "eval")
    ]
    assert run() == [0] * 5
    first = tree_hashes(tmp_path / "runs")
    assert run() == [0] * 5
    assert tree_hashes(tmp_path / "runs") == first
    assert len(first) >= 10


def test_envcheck_subcommand(cfg_file, tmp_path, capsys):
    extra = "\n[envcheck]\np = 0.5, 0.5\np_star = 0.5, 0.5\ntrials = 2000\n"
    path = cfg_file(extra=extra)
    assert cli.main(["envcheck", "--config", str(path)]) == 0
    out = capsys.readouterr().out
    assert "required_draws = 74" in out
    assert (tmp_path / "runs" / "seed-0" / "envcheck.csv").is_file()


def test_prior_grid_subcommand(cfg_file, tmp_path):
    path = cfg_file()
    assert cli.main(["prior-grid", "--config", str(path)]) == 0
    assert (tmp_path / "runs" / "seed-0" / "prior_grid_with_test.csv").is_file()


def test_unreachable_server_fails_cleanly(cfg_file, capsys):
    path = cfg_file()
    code = cli.main(["gen-data", "--config", str(path), "--server", "http://127.0.0.1:1"])
    assert code != 0
    err = capsys.readouterr().err
    assert err.startswith("error:")
    assert "unreachable" in err


def test_server_flag_hits_live_instance(cfg_file, tmp_path):
    import socket
    import threading
    import time

    import uvicorn

    from shiftuq.service.app import create_app

    with socket.socket() as probe:
        probe.bind(("127.0.0.1", 0))
        port = probe.getsockname()[1]

    server = uvicorn.Server(
        uvicorn.Config(create_app(), host="127.0.0.1", port=port, log_level="error")
    )
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.time() + 10
    while not server.started:
        if time.time() > deadline:
            pytest.fail("server did not start")
        time.sleep(0.05)
    try:
        path = cfg_file()
        code = cli.main(
            ["gen-data", "--config", str(path), "--server", f"http://127.0.0.1:{port}"]
        )
        assert code == 0
        assert (tmp_path / "runs" / "seed-0" / "train.csv").is_file()
    finally:
        server.should_exit = True
        thread.join(timeout=10)
