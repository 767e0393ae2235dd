"""Config file parsing, override precedence, and validation."""
from __future__ import annotations

import pytest

from gridsynth.config import Config, apply_overrides, load_config
from gridsynth.errors import ValidationError


def test_defaults_are_usable():
    cfg = Config()
    assert cfg.seed == 0
    assert cfg.lambda_m == 50.0
    assert cfg.secondary_cap_kw == 100.0
    assert cfg.primary_cap_kw == 400.0
    assert cfg.feeder_cap_kw == 1000.0
    assert cfg.v_min == 0.95
    assert cfg.residences_per_transformer == 8
    assert cfg.max_load_kw is None


def test_load_parses_comments_blanks_and_quotes(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text(
        "# comment line\n"
        "\n"
        "seed = 7\n"
        "lambda_m = 75.5   \n"
        'spacing_m = "40"\n'
        "max_load_kw = none\n"
    )
    cfg = load_config(p)
    assert cfg.seed == 7
    assert isinstance(cfg.seed, int)
    assert cfg.lambda_m == 75.5
    assert cfg.spacing_m == 40.0
    assert cfg.max_load_kw is None
    # untouched keys keep their defaults
    assert cfg.primary_cap_kw == Config().primary_cap_kw


def test_load_rejects_unknown_duplicate_and_garbage(tmp_path):
    bad_key = tmp_path / "a.cfg"
    bad_key.write_text("voltage = 1\n")
    with pytest.raises(ValidationError, match="unknown config key"):
        load_config(bad_key)

    dup = tmp_path / "b.cfg"
    dup.write_text("seed = 1\nseed = 2\n")
    with pytest.raises(ValidationError, match="duplicate"):
        load_config(dup)

    noeq = tmp_path / "c.cfg"
    noeq.write_text("just words\n")
    with pytest.raises(ValidationError, match="expected key = value"):
        load_config(noeq)

    unparsable = tmp_path / "d.cfg"
    unparsable.write_text("lambda_m = fifty\n")
    with pytest.raises(ValidationError, match="cannot parse"):
        load_config(unparsable)

    with pytest.raises(ValidationError, match="no such config file"):
        load_config(tmp_path / "missing.cfg")


def test_override_precedence():
    base = Config(lambda_m=60.0)
    out = apply_overrides(base, lambda_m=80.0, seed=None)
    assert out.lambda_m == 80.0
    assert out.seed == base.seed  # None means "not given"
    same = apply_overrides(base)
    assert same == base


def test_override_rejects_unknown_key():
    with pytest.raises(ValidationError, match="unknown config overrides"):
        apply_overrides(Config(), lambda_km=1.0)


def test_validation_rejects_bad_values():
    with pytest.raises(ValidationError, match="must be positive"):
        Config(spacing_m=0.0)
    with pytest.raises(ValidationError, match="must be positive"):
        Config(node_limit=-5)
    with pytest.raises(ValidationError, match="v_min"):
        Config(v_min=1.2)
    with pytest.raises(ValidationError, match="max_load_kw"):
        Config(max_load_kw=-1.0)
