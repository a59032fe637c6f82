import json

import pytest

from gamopt.config import ALPHA_GRID, RHO_GRID, canonical_json, load_config, parse_config
from gamopt.errors import ConfigError

MINIMAL = {"dataset": {"kind": "two_moons", "n": 100}, "model": {"hidden": [8]}, "optimizer": {"kind": "gam"}}


def test_defaults_and_round_trip(tmp_path):
    cfg = parse_config(MINIMAL)
    assert cfg.optimizer.rho == 0.1 and cfg.optimizer.alpha == 0.1
    text = canonical_json(cfg)
    path = tmp_path / "c.json"
    path.write_text(text)
    assert canonical_json(load_config(path)) == text


def test_rho_absent_defaults():
    cfg = parse_config({"dataset": {"kind": "two_moons"}})
    assert cfg.optimizer.rho == 0.1
    assert cfg.optimizer.momentum == 0.9 and cfg.optimizer.lr_schedule == "cosine"


def test_grids():
    assert RHO_GRID == (0.05, 0.1, 0.2, 0.5, 1.0, 2.0)
    assert ALPHA_GRID[:3] == (0.1, 0.2, 0.5) and ALPHA_GRID[-1] == 10.0


def test_batch_size_larger_than_data_rejected():
    with pytest.raises(ConfigError) as exc:
        parse_config({**MINIMAL, "batch_size": 500})
    assert any(p.startswith("batch_size") for p in exc.value.problems)


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError) as exc:
        parse_config({**MINIMAL, "optimiser": {}})
    assert "optimiser" in str(exc.value)


def test_all_violations_listed():
    bad = {"dataset": {"kind": "two_moons", "n": 100}, "optimizer": {"lr": -1, "momentum": 2}, "epochs": 0}
    with pytest.raises(ConfigError) as exc:
        parse_config(bad)
    names = " ".join(exc.value.problems)
    assert "optimizer.lr" in names and "optimizer.momentum" in names and "epochs" in names


def test_parse_error_reports_position(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "dataset": {"kind": "two_moons"},\n  oops\n}')
    with pytest.raises(ConfigError) as exc:
        load_config(p)
    assert ":3:" in str(exc.value)


def test_missing_data_path(tmp_path):
    with pytest.raises(ConfigError) as exc:
        parse_config({"dataset": {"kind": "csv", "path": "nope.csv"}}, base_dir=tmp_path)
    assert "dataset.path" in str(exc.value)


def test_quadratic_dataset_model_pairing():
    with pytest.raises(ConfigError):
        parse_config({"dataset": {"kind": "quadratic", "dim": 3}})
    cfg = parse_config({"dataset": {"kind": "quadratic", "dim": 3}, "model": {"kind": "quadratic"}})
    assert cfg.dataset.diag == [10.0, 5.5, 1.0]


def test_spectrum_epochs_bounded_by_epochs():
    with pytest.raises(ConfigError):
        parse_config({**MINIMAL, "epochs": 5, "diagnostics": {"spectrum_epochs": [6]}})


def test_slice_points_must_be_odd():
    with pytest.raises(ConfigError):
        parse_config({**MINIMAL, "diagnostics": {"slices": [{"points": 4}]}})


def test_manifest_contains_every_default():
    dumped = json.loads(canonical_json(parse_config(MINIMAL)))
    for key in ("lr", "rho", "alpha", "xi", "momentum", "weight_decay", "gam_apply_ratio"):
        assert key in dumped["optimizer"]
    assert "probe" in dumped["diagnostics"] and "num_directions" in dumped["diagnostics"]["probe"]
