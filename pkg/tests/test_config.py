import math

import pytest

from splatfix.config import ConfigError, ExperimentConfig, dump_config, load_config, parse_config


def test_defaults_are_the_stock_benchmark():
    cfg = ExperimentConfig()
    cfg.validate()
    run = cfg.resolved()
    assert run.scene.n_gaussians == 50
    assert run.scene.n_train == 3 and run.scene.n_test == 8
    assert run.scene.n_far >= 1
    assert (run.fixer.kind, run.fixer.gamma, run.fixer.knee) == ("oracle", 0.8, 14.0)
    assert run.train.total_iters == 6000
    assert run.train.distill_interval == 2000
    assert (run.ape.eta, run.ape.m_refs, run.ape.n_iter) == (25.0, 3, 1000)


def test_parse_sections_and_comments():
    cfg = parse_config("""
        # a comment
        method = interval   # trailing comment
        seed = 4
        views = 6
        scene.n_gaussians = 30
        train.total_iters = 100
        train.background = 1,1,1
        loss.lambda_ssim = 0.5
        ape.eta = 20
        fixer.kind = identity
        eval.figures = false
    """)
    assert cfg.method == "interval" and cfg.seed == 4 and cfg.views == 6
    assert cfg.scene.n_gaussians == 30
    assert cfg.train.total_iters == 100
    assert cfg.train.background == (1.0, 1.0, 1.0)
    assert cfg.train.loss.lambda_ssim == 0.5
    assert cfg.ape.eta == 20.0
    assert cfg.fixer.kind == "identity"
    assert cfg.eval.figures is False


@pytest.mark.parametrize("text", ["train.totl_iters = 5", "nope = 1", "train = 3", "scene.n_train = 3",
                                  "train.distill_mode = off", "ape.enabled = true"])
def test_unknown_or_derived_keys_are_rejected(text):
    with pytest.raises(ConfigError, match="unknown config key"):
        parse_config(text)


def test_errors_carry_the_line_number():
    with pytest.raises(ConfigError, match=r"cfg.txt:2:"):
        parse_config("seed = 1\ntrain.total_iters = many\n", source="cfg.txt")
    with pytest.raises(ConfigError, match=r":1: expected"):
        parse_config("just words")


@pytest.mark.parametrize("text", ["method = magic", "views = 4", "fixer.kind = diffusion", "ape.eta = 0",
                                  "train.total_iters = 0", "scene.ring_radius = 0.5"])
def test_invalid_values_fail_validation(text):
    with pytest.raises(ConfigError):
        parse_config(text).validate()


def test_resolved_derives_method_switches():
    for method, mode, ape in [("baseline", "off", False), ("interval", "interval", False),
                              ("continuous", "continuous", False), ("continuous+ape", "continuous", True)]:
        run = ExperimentConfig(method=method, seed=7, views=9).resolved()
        assert run.train.distill_mode == mode
        assert run.ape.enabled is ape
        assert run.train.seed == 7
        assert run.scene.n_train == 9


def test_resolved_does_not_touch_the_original():
    cfg = ExperimentConfig(method="baseline", views=6)
    cfg.resolved()
    assert cfg.scene.n_train == 3
    assert cfg.train.distill_mode == "continuous"


def test_dump_round_trips(tmp_path):
    cfg = parse_config("method = continuous+ape\nseed = 2\ntrain.lr_opacity = 0.0123456789\n"
                       "fixer.knee = -inf\ntrain.background = 0.1,0.2,0.3\nout = somewhere\n")
    text = dump_config(cfg)
    path = tmp_path / "config.txt"
    path.write_text(text)
    again = load_config(path)
    assert again == cfg
    assert dump_config(again) == text
    assert math.isinf(again.fixer.knee)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "absent.txt")
