import pytest
from pydantic import ValidationError

from shiftuq.config import (
    CsvTask,
    ExperimentConfig,
    HeteroLinearTask,
    LogisticGapTask,
    ModelSpec,
    PriorSpec,
    RunSpec,
    TrainSpec,
    config_hash,
    load_config,
)
from shiftuq.model import TASK_CLASSIFICATION, TASK_REGRESSION

HETERO_INI = """\
[task]
kind = hetero_linear
a = 0.5
b = 1.0

[train]
learning_rate = 0.01
steps = 30

[run]
seeds = 0, 1, 2
out_dir = runs/hetero
"""


def write(tmp_path, text):
    path = tmp_path / "config.ini"
    path.write_text(text)
    return path


class TestLoading:
    def test_round_trip_defaults(self, tmp_path):
        cfg = load_config(write(tmp_path, HETERO_INI))
        assert isinstance(cfg.task, HeteroLinearTask)
        assert cfg.task.n_train == 500
        assert cfg.train.num_envs == 30
        assert cfg.train.env_test_size == 20
        assert cfg.train.var_penalty == 0.001
        assert cfg.train.kl_penalty == 0.005
        assert cfg.run.seeds == [0, 1, 2]

    def test_logistic_task(self, tmp_path):
        cfg = load_config(write(tmp_path, "[task]\nkind = logistic_gap\ngap = 0.3\n"))
        assert isinstance(cfg.task, LogisticGapTask)
        assert cfg.task.task == TASK_CLASSIFICATION

    def test_csv_task(self, tmp_path):
        text = "[task]\nkind = csv\npath = data.csv\ntarget = y\nstandardize = true\n"
        cfg = load_config(write(tmp_path, text))
        assert isinstance(cfg.task, CsvTask)
        assert cfg.task.standardize is True
        assert cfg.task.n_clusters == 2

    def test_unknown_key_rejected(self, tmp_path):
        with pytest.raises(ValidationError, match="typo_key"):
            load_config(write(tmp_path, HETERO_INI + "\n[model]\ntypo_key = 3\n"))

    def test_unknown_section_rejected(self, tmp_path):
        with pytest.raises(ValidationError):
            load_config(write(tmp_path, HETERO_INI + "\n[mystery]\nx = 1\n"))

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_config(tmp_path / "nope.ini")

    def test_missing_kind(self, tmp_path):
        with pytest.raises(ValueError, match="kind"):
            load_config(write(tmp_path, "[task]\na = 0.5\n"))

    def test_layer_lists_parse(self, tmp_path):
        text = HETERO_INI + "\n[model]\nembed_hidden = 16, 8\ninference_hidden = 512 256\n"
        cfg = load_config(write(tmp_path, text))
        assert cfg.model.embed_hidden == (16, 8)
        assert cfg.model.inference_hidden == (512, 256)

    def test_empty_layer_lists(self, tmp_path):
        text = HETERO_INI + "\n[model]\nembed_hidden =\ninference_hidden =\n"
        cfg = load_config(write(tmp_path, text))
        assert cfg.model.embed_hidden == ()
        assert cfg.model.inference_hidden is None


class TestValidation:
    def test_hetero_range(self):
        with pytest.raises(ValidationError, match="a < b"):
            HeteroLinearTask(a=1.0, b=0.5)

    def test_gap_range(self):
        with pytest.raises(ValidationError):
            LogisticGapTask(gap=0.7)

    def test_csv_ratio(self):
        with pytest.raises(ValidationError):
            CsvTask(path="p", target="y", train_majority_ratio=0.4)

    def test_seeds_nonempty_distinct(self):
        with pytest.raises(ValidationError, match="seed"):
            RunSpec(seeds=[])
        with pytest.raises(ValidationError, match="distinct"):
            RunSpec(seeds=[1, 1])

    def test_train_positive(self):
        with pytest.raises(ValidationError):
            TrainSpec(num_envs=0)
        with pytest.raises(ValidationError):
            TrainSpec(learning_rate=0.0)

    def test_prior_spec_needs_both_bounds(self):
        import numpy as np

        spec = PriorSpec(y_min=-1.0)
        with pytest.raises(ValueError, match="both"):
            spec.to_prior_config(np.array([0.0, 1.0]), TASK_REGRESSION)

    def test_prior_spec_auto_range(self):
        import numpy as np

        cfg = PriorSpec().to_prior_config(np.array([0.0, 2.0]), TASK_REGRESSION)
        assert cfg.y_min == -3.0 and cfg.y_max == 5.0

    def test_train_spec_to_train_config(self):
        tc = TrainSpec(steps=7).to_train_config(seed=42)
        assert tc.steps == 7 and tc.seed == 42
        assert tc.num_envs == 30 and tc.learning_rate == 0.01


class TestHashing:
    def test_identical_configs_identical_hash(self, tmp_path):
        a = load_config(write(tmp_path, HETERO_INI))
        b = ExperimentConfig.model_validate(a.model_dump())
        assert config_hash(a) == config_hash(b)
        assert len(config_hash(a)) == 64

    def test_any_field_changes_hash(self, tmp_path):
        a = load_config(write(tmp_path, HETERO_INI))
        b = a.model_copy(deep=True)
        b.train.steps = 31
        assert config_hash(a) != config_hash(b)

    def test_seed_list_changes_hash(self, tmp_path):
        a = load_config(write(tmp_path, HETERO_INI))
        b = a.model_copy(deep=True)
        b.run.seeds = [0]
        assert config_hash(a) != config_hash(b)

    def test_default_equivalence(self):
        # writing a default explicitly must not change the hash
        a = ExperimentConfig(task=HeteroLinearTask())
        b = ExperimentConfig(task=HeteroLinearTask(a=0.5))
        assert config_hash(a) == config_hash(b)

    def test_model_spec_defaults(self):
        m = ModelSpec()
        assert m.embed_dim == 8
        assert m.pretrain_steps == 1500
        assert m.inference_hidden is None
