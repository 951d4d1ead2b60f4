"""HTTP layer: every stage reachable over POST, errors mapped to 400/422."""

import hashlib
import warnings
from pathlib import Path

import pytest

with warnings.catch_warnings():
    warnings.simplefilter("ignore", DeprecationWarning)
    from fastapi.testclient import TestClient

from shiftuq import stages
from shiftuq.config import ExperimentConfig
from shiftuq.service.app import create_app


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app())


def small_config(out_dir, **extra):
    base = {
        "task": {"kind": "hetero_linear", "n_train": 40, "n_test": 40},
        "model": {"embed_dim": 4, "pretrain_steps": 40},
        "train": {
            "num_envs": 3,
            "env_test_size": 5,
            "env_train_size": 30,
            "steps": 3,
            "posterior_samples": 50,
        },
        "run": {"seeds": [0], "out_dir": str(out_dir)},
    }
    base.update(extra)
    return ExperimentConfig.model_validate(base)


def payload(cfg, seed=None):
    return {"config": cfg.model_dump(mode="json"), "seed": seed}


def tree_hashes(root):
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(Path(root).rglob("*"))
        if p.is_file()
    }


def test_health(client):
    response = client.get("/health")
    assert response.status_code == 200
    body = response.json()
    assert body["status"] == "ok"
    assert body["version"]


def test_gen_data_creates_files_and_reports_them(client, tmp_path):
    cfg = small_config(tmp_path / "runs")
    response = client.post("/stages/gen-data", json=payload(cfg))
    assert response.status_code == 200
    body = response.json()
    assert body["stage"] == "gen-data"
    assert body["seed"] == 0
    assert set(body["outputs"]) == {"train.csv", "test.csv"}
    for path in body["outputs"].values():
        assert Path(path).is_file()
    assert body["values"]["n_train"] == 40


def test_seed_override_beats_config(client, tmp_path):
    cfg = small_config(tmp_path / "runs")
    response = client.post("/stages/gen-data", json=payload(cfg, seed=7))
    assert response.status_code == 200
    assert response.json()["seed"] == 7
    assert (tmp_path / "runs" / "seed-7" / "train.csv").is_file()


def test_full_pipeline_over_http(client, tmp_path):
    cfg = small_config(tmp_path / "runs")
    for stage in ("gen-data", "pretrain", "fit", "predict"):
        response = client.post(f"/stages/{stage}", json=payload(cfg))
        assert response.status_code == 200, response.text
    response = client.post("/stages/eval", json={"config": cfg.model_dump(mode="json"), "seeds": None})
    assert response.status_code == 200
    values = response.json()["values"]
    assert "rmse" in values and "rmse_median" in values
    assert (tmp_path / "runs" / "metrics.csv").is_file()


def test_missing_prerequisite_maps_to_400(client, tmp_path):
    cfg = small_config(tmp_path / "runs")
    client.post("/stages/gen-data", json=payload(cfg))
    response = client.post("/stages/fit", json=payload(cfg))
    assert response.status_code == 400
    message = response.json()["error"]
    assert "pretrain" in message
    assert "\n" not in message


def test_invalid_body_maps_to_422(client):
    response = client.post("/stages/gen-data", json={"config": {"bogus": 1}})
    assert response.status_code == 422


def test_unknown_config_key_maps_to_422(client, tmp_path):
    cfg = small_config(tmp_path / "runs").model_dump(mode="json")
    cfg["train"]["mystery_knob"] = 3
    response = client.post("/stages/gen-data", json={"config": cfg, "seed": None})
    assert response.status_code == 422


def test_envcheck_endpoint(client, tmp_path):
    cfg = small_config(
        tmp_path / "runs",
        envcheck={"p": [0.5, 0.5], "p_star": [0.5, 0.5], "epsilon": 0.5, "trials": 2000},
    )
    response = client.post("/stages/envcheck", json=payload(cfg))
    assert response.status_code == 200
    body = response.json()
    assert body["values"]["required_draws"] == 74
    assert body["values"]["certify_rate"] >= 0.9
    assert Path(body["outputs"]["envcheck.csv"]).is_file()


def test_envcheck_without_section_maps_to_400(client, tmp_path):
    cfg = small_config(tmp_path / "runs")
    response = client.post("/stages/envcheck", json=payload(cfg))
    assert response.status_code == 400
    assert "envcheck" in response.json()["error"]


def test_prior_grid_endpoint(client, tmp_path):
    cfg = small_config(tmp_path / "runs")
    response = client.post("/stages/prior-grid", json=payload(cfg))
    assert response.status_code == 200
    body = response.json()
    assert set(body["outputs"]) == {"prior_grid_train_only.csv", "prior_grid_with_test.csv"}
    assert body["values"]["grid_shape"] == [13, 13]


def test_service_matches_direct_calls_byte_for_byte(client, tmp_path):
    out = tmp_path / "runs"
    cfg = small_config(out)
    for stage in ("gen-data", "pretrain", "fit", "predict"):
        assert client.post(f"/stages/{stage}", json=payload(cfg)).status_code == 200
    via_http = tree_hashes(out)

    for p in sorted(out.rglob("*"), reverse=True):
        p.unlink() if p.is_file() else p.rmdir()
    stages.gen_data(cfg, 0)
    stages.pretrain(cfg, 0)
    stages.fit(cfg, 0)
    stages.predict(cfg, 0)
    assert tree_hashes(out) == via_http
