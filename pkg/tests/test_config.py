import numpy as np
import pytest

from mitoscan.config import Config, load_config, parse_config
from mitoscan.stain import DEFAULT_EOSIN, DEFAULT_HEMATOXYLIN


def test_defaults():
    cfg = Config()
    assert cfg.pipeline.epochs == 60
    assert cfg.pipeline.batch_size == 16
    assert cfg.pipeline.train_images == 30
    assert cfg.pipeline.patch_size == 80
    assert cfg.pipeline.match_radius == 30.0
    assert cfg.pipeline.score_threshold == 0.5
    assert cfg.pipeline.dgsb and cfg.pipeline.se and cfg.pipeline.incdp
    assert cfg.balance.k == 10
    assert cfg.balance.m == 0
    assert cfg.classify.t == 4
    assert cfg.classify.gamma == 2.0
    assert cfg.classify.lam == 0.5
    assert cfg.stain.hematoxylin == DEFAULT_HEMATOXYLIN
    assert cfg.stain.eosin == DEFAULT_EOSIN


def test_parse_scalars_and_comments():
    text = """
    # training
    pipeline.epochs = 12
    pipeline.dgsb = off   # disable balancing
    classify.lambda = 0.25
    balance.k = 4

    synth.images = 3
    """
    cfg = parse_config(text)
    assert cfg.pipeline.epochs == 12
    assert cfg.pipeline.dgsb is False
    assert cfg.classify.lam == 0.25
    assert cfg.balance.k == 4
    assert cfg.synth.images == 3
    # untouched keys keep defaults
    assert cfg.pipeline.batch_size == 16


def test_bool_spellings():
    for word, want in (("true", True), ("1", True), ("yes", True), ("on", True),
                       ("false", False), ("0", False), ("no", False), ("off", False)):
        assert parse_config(f"pipeline.se={word}").pipeline.se is want


def test_stain_vectors():
    cfg = parse_config("stain.h = 0.6, 0.7, 0.3\nstain.e = 0.1 0.9 0.2")
    assert cfg.stain.hematoxylin == (0.6, 0.7, 0.3)
    assert cfg.stain.eosin == (0.1, 0.9, 0.2)
    m = cfg.stain.matrix()
    np.testing.assert_allclose(np.linalg.norm(m.rows, axis=1), 1.0, atol=1e-9)


def test_domain_matrix():
    nums = "0.6,0.8,0.0, 0.0,0.6,0.8, 0.8,0.0,0.6"
    cfg = parse_config(f"stain.domains.alt = {nums}")
    assert set(cfg.stain.domain_matrices()) == {"alt"}
    np.testing.assert_allclose(cfg.stain.domains["alt"].rows[0], [0.6, 0.8, 0.0])


def test_default_domains_when_none_configured():
    assert set(Config().stain.domain_matrices()) == {"d1", "d2", "d3"}


def test_domain_rows_must_be_unit_norm():
    nums = "1,1,1, 0,1,0, 0,0,1"
    with pytest.raises(ValueError, match="unit"):
        parse_config(f"stain.domains.bad = {nums}")


def test_error_messages_carry_line_numbers():
    with pytest.raises(ValueError, match="line 2: unknown config key"):
        parse_config("pipeline.epochs=5\npipeline.epoch=5")
    with pytest.raises(ValueError, match="line 1: expected key=value"):
        parse_config("just words")
    with pytest.raises(ValueError, match="line 3: bad value for pipeline.epochs"):
        parse_config("\n\npipeline.epochs=sixty")
    with pytest.raises(ValueError, match="domain name missing"):
        parse_config("stain.domains. = 1,0,0,0,1,0,0,0,1")


def test_wrong_vector_length():
    with pytest.raises(ValueError, match="expected 3 numbers"):
        parse_config("stain.h = 0.5, 0.5")


def test_base_config_overlay():
    base = parse_config("pipeline.epochs=7\nbalance.k=3")
    over = parse_config("balance.k=5", base=base)
    assert over.pipeline.epochs == 7
    assert over.balance.k == 5


def test_to_flat_dict():
    d = Config().to_flat_dict()
    assert d["pipeline.epochs"] == 60
    assert d["classify.lambda"] == 0.5
    assert d["balance.k"] == 10
    assert d["stain.h"] == list(DEFAULT_HEMATOXYLIN)
    assert d["synth.seed"] == 0
    # every value must be JSON-representable for checkpoint headers
    import json
    json.dumps(d)


def test_load_config(tmp_path):
    assert load_config(None).pipeline.epochs == 60
    p = tmp_path / "run.cfg"
    p.write_text("pipeline.epochs=9\n")
    assert load_config(p).pipeline.epochs == 9
