import warnings

import pytest

from pwdcl.config import SCHEMA, ConfigError, load_config, parse_config


def test_learning_rate_key():
    assert parse_config("train.lr_init = 1e-4\n").train().lr_init == 1e-4
    assert parse_config("train.lr_init = 2e-3").train().lr_init == 2e-3


def test_empty_file_gives_defaults(tmp_path):
    cfg = parse_config("# nothing\n\n")
    assert cfg.values == {k: d for k, (_, d) in SCHEMA.items()}
    assert cfg.explicit == set()
    assert load_config(None).values == cfg.values
    (tmp_path / "e.cfg").write_text("")
    assert load_config(tmp_path / "e.cfg").values == cfg.values


def test_range_error_names_key():
    with pytest.raises(ConfigError, match="range error: beamform.f_number"):
        parse_config("beamform.f_number = -1")
    with pytest.raises(ConfigError, match="net.filters"):
        parse_config("net.filters = 4,8")


@pytest.mark.parametrize("text,line,what", [
    ("probe.f0 = 5e6\nprobe.bogus = 1\n", 2, "unknown key"),
    ("\n\nprobe.f0 5e6\n", 3, "malformed"),
    ("net.levels = three\n", 1, "type mismatch"),
    ("probe.c = nan\n", 1, "type mismatch"),
    ("train.record_time = maybe\n", 1, "type mismatch"),
])
def test_parse_errors_carry_line_numbers(text, line, what):
    with pytest.raises(ConfigError, match=rf"<config>:{line}: .*{what}|<config>:{line}: {what}"):
        parse_config(text)


def test_duplicate_key_overrides_with_warning():
    with pytest.warns(UserWarning, match="duplicate key 'probe.f0' overrides line 1"):
        cfg = parse_config("probe.f0 = 4e6\nprobe.f0 = 6e6 # later wins\n")
    assert cfg["probe.f0"] == 6e6


def test_dump_round_trip():
    cfg = parse_config("net.filters = 4, 8, 16\ntrain.record_time = off\nprobe.pitch = 0.21e-3\n")
    again = parse_config(cfg.dump())
    assert again.values == cfg.values
    assert again.dump() == cfg.dump()
    assert cfg.network().filters == (4, 8, 16) and cfg.train().record_time is False


def test_seed_precedence():
    cfg = parse_config("sim.seed = 3\ntrain.seed = 3\n")
    assert cfg.with_seed(None, env={})["sim.seed"] == 3
    assert cfg.with_seed(None, env={"PWC_SEED": "7"})["train.seed"] == 7
    flagged = cfg.with_seed(9, env={"PWC_SEED": "7"})
    assert flagged["sim.seed"] == flagged["train.seed"] == 9
    with pytest.raises(ConfigError, match="PWC_SEED"):
        cfg.with_seed(None, env={"PWC_SEED": "x"})


def test_missing_phantom_file_rejected(tmp_path):
    with pytest.raises(ConfigError, match="sim.phantom_file"):
        parse_config(f"sim.phantom = file\nsim.phantom_file = {tmp_path / 'none.txt'}\n")
    (tmp_path / "p.txt").write_text("PHANTOM v1 x\n")
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        parse_config(f"sim.phantom = file\nsim.phantom_file = {tmp_path / 'p.txt'}\n")


def test_module_configs_are_built():
    cfg = parse_config("probe.n_elements = 32\nbeamform.window = rectangular\nnet.crop_size = 32\n")
    assert cfg.probe().n_elements == 32
    assert cfg.beamform().apodization_window == "rectangular"
    assert cfg.train().crop_size == 32 == cfg.network().crop_size
