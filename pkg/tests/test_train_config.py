from __future__ import annotations

import json

import pytest
from pydantic import ValidationError

from models.report import EvalReport, PairReport, TSV_COLUMNS
from models.train_config import TrainConfig
from tests.builders import tiny_config


def test_defaults_follow_published_settings():
    config = TrainConfig()
    assert config.n_seeds == 200
    assert config.d_cut == 7
    assert config.d == 64
    assert (config.n_got, config.n_gfp, config.sinkhorn_iters) == (1, 2, 100)
    assert config.negative_ring == (14, 28)
    assert config.encoding().dim == 48


def test_text_round_trip_is_lossless():
    config = tiny_config(tau=0.07, match_mode="mutual", lr=3e-4)
    again = TrainConfig.from_text(config.to_text())
    assert again == config


def test_file_round_trip_for_both_formats(tmp_path):
    config = tiny_config(epochs=3, seed=11)
    for name in ("run.cfg", "run.json"):
        path = config.to_file(tmp_path / name)
        assert TrainConfig.from_file(path) == config
    payload = json.loads((tmp_path / "run.json").read_text(encoding="utf-8"))
    assert payload["train"]["seed"] == 11


def test_flat_json_is_accepted(tmp_path):
    path = tmp_path / "flat.json"
    path.write_text(json.dumps({"n_seeds": 12, "d": 16}), encoding="utf-8")
    config = TrainConfig.from_file(path)
    assert (config.n_seeds, config.d) == (12, 16)


def test_text_allows_comments_and_bare_strings():
    config = TrainConfig.from_text("# tiny run\nn_seeds = 16  # per shape\nmatch_mode = mutual\n\nd_cut=2.5\n")
    assert config.n_seeds == 16
    assert config.match_mode == "mutual"
    assert config.d_cut == 2.5


def test_malformed_text_line():
    with pytest.raises(ValueError, match="line 2"):
        TrainConfig.from_text("n_seeds=4\nthis is not a setting\n")


@pytest.mark.parametrize(
    "overrides",
    [
        {"n_seeds": 0},
        {"tau": 0.0},
        {"sigma": 1.0},
        {"m": 1},
        {"unknown_key": 3},
        {"match_mode": "greedy"},
        {"negative_min_hops": 5, "negative_max_hops": 3},
    ],
)
def test_invalid_settings_are_rejected(overrides):
    with pytest.raises(ValidationError):
        TrainConfig(**overrides)


def test_config_is_frozen():
    with pytest.raises(ValidationError):
        TrainConfig().seed = 3


def test_missing_config_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        TrainConfig.from_file(tmp_path / "absent.cfg")


def test_with_overrides_skips_none():
    config = tiny_config()
    changed = config.with_overrides(epochs=None, seed=9)
    assert changed.epochs == config.epochs
    assert changed.seed == 9
    with pytest.raises(ValidationError):
        config.with_overrides(epochs=0)


def test_learning_rate_schedule():
    config = TrainConfig()
    assert config.learning_rate(1) == 0.001
    assert config.learning_rate(30) == 0.001
    assert config.learning_rate(31) == 0.0001


def test_loss_weights_schedule_and_ablation():
    config = TrainConfig()
    assert config.loss_weights().at(30) == (1.0, 0.0, 1.0)
    assert config.loss_weights().at(31) == (0.1, 1.0, 1.0)
    ablated = config.with_overrides(use_regularization=False)
    assert ablated.loss_weights().at(1) == (1.0, 0.0, 0.0)
    assert ablated.loss_weights().at(60) == (0.1, 1.0, 0.0)


def test_derived_specs():
    config = tiny_config(n_got=2, n_gfp=1, tau=0.2, use_shape_graph=False)
    got = config.got_config()
    assert (got.n_got, got.n_gfp, got.tau) == (2, 1, 0.2)
    spec = config.model_spec()
    assert spec.d == 8
    assert not spec.use_shape_graph
    assert config.negative_ring == (2, 4)
    assert tiny_config(negative_min_hops=None, negative_max_hops=None).negative_ring == (4, 8)


def _report() -> EvalReport:
    return EvalReport(
        pairs=[
            PairReport(name="pair_000", n=8, error=0.0, br=100.0, error_first=0.1, br_first=50.0, mutual=8),
            PairReport(name="pair_001", n=8, error=0.2, br=50.0, error_first=0.3, br_first=25.0, mutual=4),
        ]
    )


def test_report_means_and_tsv():
    report = _report()
    assert report.error == pytest.approx(0.1)
    assert report.br == pytest.approx(75.0)
    assert report.br_first == pytest.approx(37.5)
    lines = report.to_tsv().splitlines()
    assert lines[0].split("\t") == list(TSV_COLUMNS)
    assert lines[1].split("\t")[0] == "pair_000"
    assert lines[-1].startswith("# pairs=2 error=0.100000 br=75.00")


def test_report_bounds():
    with pytest.raises(ValidationError):
        PairReport(name="x", n=4, error=0.0, br=120.0, error_first=0.0, br_first=0.0, mutual=4)
    assert EvalReport().error == 0.0
