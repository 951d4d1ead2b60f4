"""Pipeline stages: file-in, file-out steps behind both the CLI and the service.

Each stage reads its prerequisites from a per-seed run directory, writes its
artifacts next to them, and drops a JSON manifest recording the config hash,
the seed, and content hashes of everything read and written.  Reruns with the
same config and seed must reproduce every byte.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import coverage, environments, metrics, prior
from .config import CsvTask, ExperimentConfig, HeteroLinearTask, LogisticGapTask, config_hash
from .data import (
    SplitSpec,
    gen_hetero_linear,
    gen_logistic_gap,
    kmeans_shift_split_indices,
    load_csv,
    save_dataset_csv,
    standardize,
)
from .model import TASK_CLASSIFICATION, TASK_REGRESSION, EmbeddingModel, pretrain_embedding
from .nn import load_checkpoint, save_checkpoint
from .posterior import InferenceNet
from .rngs import SeedTree


class StageError(RuntimeError):
    """A stage cannot run; the message says which stage to run first."""


@dataclass
class StageResult:
    stage: str
    seed: int | None
    outputs: dict[str, str]
    values: dict = field(default_factory=dict)


def seed_dir(cfg: ExperimentConfig, seed: int) -> Path:
    return Path(cfg.run.out_dir) / f"seed-{seed}"


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(directory: Path, stage: str, cfg: ExperimentConfig, seed, inputs, outputs) -> Path:
    manifest = {
        "stage": stage,
        "config_hash": config_hash(cfg),
        "seed": seed,
        "inputs": {name: _sha256(path) for name, path in sorted(inputs.items())},
        "outputs": {name: _sha256(path) for name, path in sorted(outputs.items())},
    }
    path = directory / f"{stage.replace('-', '_')}.json"
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise StageError(f"missing {path.name}; run the {producer} stage first")
    return path


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_format_cell(v) for v in row])


def _format_cell(value):
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (np.floating,)):
        return repr(float(value))
    return value


def _result(stage, seed, outputs, **values) -> StageResult:
    return StageResult(stage, seed, {name: str(p) for name, p in outputs.items()}, dict(values))


def _load_train_test(cfg: ExperimentConfig, seed: int):
    directory = seed_dir(cfg, seed)
    task = cfg.task.task
    train = load_csv(_require(directory / "train.csv", "gen-data"), target="y", task=task)
    test = load_csv(_require(directory / "test.csv", "gen-data"), target="y", task=task)
    return train, test, directory


def gen_data(cfg: ExperimentConfig, seed: int) -> StageResult:
    """Materialize the train/test pair for one seed."""
    directory = seed_dir(cfg, seed)
    directory.mkdir(parents=True, exist_ok=True)
    data_seed = SeedTree(seed).child("data").state
    inputs: dict[str, Path] = {}
    extra_outputs: dict[str, Path] = {}

    if isinstance(cfg.task, HeteroLinearTask):
        train, test = gen_hetero_linear(
            a=cfg.task.a,
            b=cfg.task.b,
            slope=cfg.task.slope,
            n_train=cfg.task.n_train,
            n_test=cfg.task.n_test,
            seed=data_seed,
        )
    elif isinstance(cfg.task, LogisticGapTask):
        train, test = gen_logistic_gap(
            gap=cfg.task.gap,
            n_train=cfg.task.n_train,
            n_test=cfg.task.n_test,
            seed=data_seed,
        )
    else:
        source_path = Path(cfg.task.path)
        if not source_path.exists():
            raise StageError(f"missing source file {source_path}; nothing for gen-data to split")
        inputs["source.csv"] = source_path
        full = load_csv(source_path, target=cfg.task.target, task=cfg.task.task)
        spec = SplitSpec(
            n_clusters=cfg.task.n_clusters,
            train_majority_ratio=cfg.task.train_majority_ratio,
            seed=data_seed,
        )
        idx = kmeans_shift_split_indices(full, spec)
        train, test = full.subset(idx.train_rows), full.subset(idx.test_rows)
        record = None
        if cfg.task.standardize:
            train, test, record = standardize(train, test)
        split_path = directory / "split.json"
        split_payload = {
            "train_rows": idx.train_rows.tolist(),
            "test_rows": idx.test_rows.tolist(),
            "high_spread_cluster": idx.high_spread_cluster,
            "standardize": None
            if record is None
            else {
                "x_median": record.x_median.tolist(),
                "x_scale": record.x_scale.tolist(),
                "y_median": record.y_median,
                "y_scale": record.y_scale,
            },
        }
        split_path.write_text(json.dumps(split_payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")
        extra_outputs["split.json"] = split_path

    train_path = directory / "train.csv"
    test_path = directory / "test.csv"
    save_dataset_csv(train, train_path)
    save_dataset_csv(test, test_path)
    outputs = {"train.csv": train_path, "test.csv": test_path, **extra_outputs}
    _write_manifest(directory, "gen-data", cfg, seed, inputs, outputs)
    return _result("gen-data", seed, outputs, n_train=train.n, n_test=test.n)


def pretrain(cfg: ExperimentConfig, seed: int) -> StageResult:
    """Maximum-likelihood embedding + head on the train split."""
    train, _, directory = _load_train_test(cfg, seed)
    rng = SeedTree(seed).child("pretrain").generator()
    result = pretrain_embedding(
        train,
        embed_dim=cfg.model.embed_dim,
        hidden=cfg.model.embed_hidden,
        steps=cfg.model.pretrain_steps,
        lr=cfg.model.pretrain_lr,
        rng=rng,
    )
    embed_path = directory / "embedding.ckpt"
    head_path = directory / "pretrain_head.csv"
    save_checkpoint(result.embedding.net, embed_path)
    _write_csv(head_path, ["coef"], [[float(v)] for v in result.head])
    inputs = {"train.csv": directory / "train.csv"}
    outputs = {"embedding.ckpt": embed_path, "pretrain_head.csv": head_path}
    _write_manifest(directory, "pretrain", cfg, seed, inputs, outputs)
    final = result.trace[-1] if result.trace else math.nan
    return _result("pretrain", seed, outputs, final_log_lik=final)


def _load_embedding(directory: Path) -> tuple[EmbeddingModel, np.ndarray]:
    embed_path = _require(directory / "embedding.ckpt", "pretrain")
    head_path = _require(directory / "pretrain_head.csv", "pretrain")
    net = load_checkpoint(embed_path)
    with open(head_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        head = np.array([float(row[0]) for row in reader])
    return EmbeddingModel(net), head


def fit(cfg: ExperimentConfig, seed: int) -> StageResult:
    """Train the inference network; emit checkpoint and objective trace."""
    train, test, directory = _load_train_test(cfg, seed)
    embedding, head = _load_embedding(directory)
    prior_cfg = cfg.prior.to_prior_config(train.y, train.task)
    train_cfg = cfg.train.to_train_config(
        seed=seed,
        inference_hidden=cfg.model.inference_hidden,
        log_std_init=cfg.model.log_std_init,
    )
    result = environments.fit(
        train,
        embedding,
        train_cfg,
        head_init=head,
        prior_cfg=prior_cfg,
        rng=SeedTree(seed).child("fit"),
        test_x=test.x if cfg.train.condition_on_test else None,
    )
    ckpt_path = directory / "inference.ckpt"
    trace_path = directory / "fit_trace.csv"
    save_checkpoint(result.inference.net, ckpt_path)
    _write_csv(
        trace_path,
        ["iter", "objective", "var_penalty", "env_loss_min", "env_loss_max"],
        [
            [row.iteration, row.objective, row.var_penalty_term, row.env_loss_min, row.env_loss_max]
            for row in result.trace
        ],
    )
    inputs = {
        "train.csv": directory / "train.csv",
        "test.csv": directory / "test.csv",
        "embedding.ckpt": directory / "embedding.ckpt",
        "pretrain_head.csv": directory / "pretrain_head.csv",
    }
    outputs = {"inference.ckpt": ckpt_path, "fit_trace.csv": trace_path}
    _write_manifest(directory, "fit", cfg, seed, inputs, outputs)
    last = result.trace[-1].objective if result.trace else math.nan
    return _result("fit", seed, outputs, final_objective=last)


def predict(cfg: ExperimentConfig, seed: int) -> StageResult:
    """Posterior-predictive mean and spread at every test covariate."""
    train, test, directory = _load_train_test(cfg, seed)
    embedding, _ = _load_embedding(directory)
    inference = InferenceNet(load_checkpoint(_require(directory / "inference.ckpt", "fit")))
    pred = environments.predict(
        inference,
        embedding,
        train,
        test.x,
        rng=SeedTree(seed).child("predict"),
        n_samples=cfg.train.posterior_samples,
    )
    pred_path = directory / "predictions.csv"
    feature_names = [f"x{j + 1}" for j in range(test.width)]
    rows = [
        [*(float(v) for v in test.x[i]), float(pred.mean[i]), float(pred.std[i])]
        for i in range(test.n)
    ]
    _write_csv(pred_path, feature_names + ["pred_mean", "pred_std"], rows)
    inputs = {
        "train.csv": directory / "train.csv",
        "test.csv": directory / "test.csv",
        "embedding.ckpt": directory / "embedding.ckpt",
        "inference.ckpt": directory / "inference.ckpt",
    }
    outputs = {"predictions.csv": pred_path}
    _write_manifest(directory, "predict", cfg, seed, inputs, outputs)
    return _result("predict", seed, outputs, n_points=test.n)


def _read_predictions(path: Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = np.array([[float(c) for c in row] for row in reader])
    mean_col = header.index("pred_mean")
    std_col = header.index("pred_std")
    return rows[:, :mean_col], rows[:, mean_col], rows[:, std_col]


def _seed_metrics(cfg: ExperimentConfig, seed: int) -> dict[str, float]:
    train, test, directory = _load_train_test(cfg, seed)
    x, mean, std = _read_predictions(_require(directory / "predictions.csv", "predict"))
    if x.shape[0] != test.n:
        raise StageError("predictions and test set disagree on row count; rerun the predict stage")
    out: dict[str, float] = {}
    if test.task == TASK_REGRESSION:
        out["rmse"] = metrics.rmse(mean, test.y)
        if test.y_mean is not None:
            out["rmse_mean"] = metrics.rmse(mean, test.y_mean)
        if isinstance(cfg.task, HeteroLinearTask):
            region = x[:, 0] > cfg.task.a
            if region.sum() >= 2:
                out["spearman_extrapolation"] = metrics.spearman(x[region, 0], std[region])
    else:
        out["accuracy"] = metrics.accuracy(mean, test.y)
        out["ace"] = metrics.ace(mean, test.y, bins=cfg.metrics.ace_bins)
        if isinstance(cfg.task, LogisticGapTask):
            inside = (x[:, 0] > cfg.task.gap) & (x[:, 0] < 1.0 - cfg.task.gap)
            if inside.any() and (~inside).any():
                out["spread_ratio"] = metrics.spread_profile(std, inside, ~inside)
    return out


def evaluate(cfg: ExperimentConfig, seeds: list[int] | None = None) -> StageResult:
    """Score predictions across seeds; emit the aggregate metrics table."""
    if seeds is None:
        seeds = cfg.run.seeds
    per_seed = [_seed_metrics(cfg, s) for s in seeds]
    names = sorted({name for d in per_seed for name in d})
    rows = []
    values = {}
    for name in names:
        vals = np.array([d[name] for d in per_seed if name in d])
        stderr = float(vals.std() / math.sqrt(vals.size)) if vals.size > 1 else 0.0
        rows.append([name, float(vals.mean()), stderr, vals.size])
        rows.append([f"{name}_median", float(np.median(vals)), stderr, vals.size])
        values[name] = float(vals.mean())
        values[f"{name}_median"] = float(np.median(vals))
    root = Path(cfg.run.out_dir)
    root.mkdir(parents=True, exist_ok=True)
    metrics_path = root / "metrics.csv"
    _write_csv(metrics_path, ["metric", "value", "stderr", "n_seeds"], rows)
    inputs = {}
    for s in seeds:
        directory = seed_dir(cfg, s)
        inputs[f"seed-{s}/test.csv"] = directory / "test.csv"
        inputs[f"seed-{s}/predictions.csv"] = directory / "predictions.csv"
    outputs = {"metrics.csv": metrics_path}
    _write_manifest(root, "eval", cfg, None, inputs, outputs)
    return _result("eval", None, outputs, **values)


def envcheck(cfg: ExperimentConfig, seed: int) -> StageResult:
    """Environment-count report: bound chain plus simulated hit rates."""
    if cfg.envcheck is None:
        raise StageError("config has no [envcheck] section; nothing to check")
    spec = cfg.envcheck
    p = coverage.BinnedDistribution(np.asarray(spec.p))
    p_star = coverage.BinnedDistribution(np.asarray(spec.p_star))
    rng_root = SeedTree(seed).child("certify")

    def analyze(mode, p_use, p_star_use, shift, stream):
        m = coverage.draws_per_env(spec.epsilon, p_use.k)
        q = coverage.rounded_target(p_star_use, m)
        try:
            xi = coverage.xi_bound(q, p_use, m)
            kl = coverage.kl_divergence(q, p_use)
        except coverage.SupportViolationError:
            return [mode, p_use.k, m, 0.0, math.inf, math.inf, shift, math.nan, spec.trials], None
        needed = coverage.required_draws(xi, spec.alpha)
        remark = coverage.remark_bound(spec.epsilon, p_use.k, spec.alpha, kl)
        rate = coverage.certify(
            p_use, p_star_use, m, needed, spec.epsilon, spec.trials, stream.generator()
        )
        return [mode, p_use.k, m, xi, needed, remark, shift, rate, spec.trials], needed

    rows = []
    raw_row, raw_needed = analyze("raw", p, p_star, 0.0, rng_root.child("raw"))
    rows.append(raw_row)
    reduced_note = None
    if raw_needed is None:
        try:
            p_red, p_star_red, shift = coverage.support_reduce(p, p_star)
        except ValueError as err:
            raise StageError(f"supports are irreconcilable: {err}") from None
        red_row, _ = analyze("reduced", p_red, p_star_red, shift, rng_root.child("reduced"))
        rows.append(red_row)
        reduced_note = shift

    directory = seed_dir(cfg, seed)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / "envcheck.csv"
    _write_csv(
        path,
        ["mode", "bins", "draws_per_env", "xi", "required_draws", "remark_bound", "support_shift", "certify_rate", "trials"],
        rows,
    )
    outputs = {"envcheck.csv": path}
    _write_manifest(directory, "envcheck", cfg, seed, {}, outputs)
    result_values = {"modes": [r[0] for r in rows]}
    if raw_needed is not None:
        result_values.update(required_draws=raw_needed, certify_rate=raw_row[7])
    if reduced_note is not None:
        result_values.update(support_shift=reduced_note)
    return _result("envcheck", seed, outputs, **result_values)


def prior_grid(cfg: ExperimentConfig, seed: int) -> StageResult:
    """Energy heatmaps for the 2-feature logistic head, with and without a test point."""
    spec = cfg.prior_grid
    rng = SeedTree(seed).child("prior-grid").generator()
    x1 = rng.normal(spec.x1_mean, spec.x1_std, size=spec.n_pool)
    train_x = np.column_stack([x1, np.full(spec.n_pool, spec.x2_train)])
    test_x = np.array([[spec.x1_test, spec.x2_test]])
    intercepts = np.linspace(spec.intercept_min, spec.intercept_max, spec.intercept_steps)
    coefs = np.linspace(spec.coef_min, spec.coef_max, spec.coef_steps)

    directory = seed_dir(cfg, seed)
    directory.mkdir(parents=True, exist_ok=True)
    outputs = {}
    for name, test_part in (("prior_grid_train_only.csv", None), ("prior_grid_with_test.csv", test_x)):
        grid = prior.logistic_grid(train_x, test_part, intercepts, coefs, first_coef=spec.first_coef)
        rows = [
            [float(intercepts[i]), float(coefs[j]), float(grid[i, j])]
            for i in range(intercepts.size)
            for j in range(coefs.size)
        ]
        path = directory / name
        _write_csv(path, ["beta_a", "beta_b", "energy"], rows)
        outputs[name] = path
    _write_manifest(directory, "prior-grid", cfg, seed, {}, outputs)
    return _result("prior-grid", seed, outputs, grid_shape=[intercepts.size, coefs.size])
