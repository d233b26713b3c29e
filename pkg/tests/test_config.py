import dataclasses

import pytest

from bmlmc.config import OUTPUT_ENV, MaternConfig, RunConfig, emit_config, load_config, parse_config
from bmlmc.errors import ConfigError
from bmlmc.pde.spde import MaternParams


def test_defaults():
    cfg = parse_config("")
    assert cfg == RunConfig()
    assert (cfg.theta, cfg.eta) == (0.5, 0.7)
    assert (cfg.num_units, cfg.memory_budget_mb, cfg.time_budget, cfg.dim, cfg.base_cells) == (8, 2048.0, 60.0, 2, 2)
    assert cfg.init_samples == (8, 4, 2)


def test_non_power_of_two_units():
    with pytest.raises(ConfigError, match="power of two"):
        parse_config("num_units: 3")


def test_matern_defaults_accepted():
    cfg = parse_config("matern: {lam: 0.3, nu: 1.0, sigma: 1.0}\ndim: 2")
    p = MaternParams(cfg.matern.lam, cfg.matern.nu, cfg.matern.sigma, cfg.dim)
    assert p.kappa == pytest.approx(4.714, abs=1e-3)
    assert p.zeta == 1.0


def test_all_problems_reported_together():
    with pytest.raises(ConfigError) as info:
        parse_config("theta: 1.5\neta: 0\nnum_units: 6\nbogus: 1\nmatern: {nu: 2.0}\ndim: 3")
    text = str(info.value)
    for needle in ("theta", "eta", "power of two", "bogus", "dim must be 1 or 2"):
        assert needle in text
    assert len(info.value.problems) >= 5


def test_zeta_rule():
    with pytest.raises(ConfigError, match="zeta"):
        parse_config("dim: 1")
    cfg = parse_config("dim: 1\nmatern: {nu: 1.5}")
    assert cfg.matern == MaternConfig(nu=1.5)


def test_type_and_length_checks():
    with pytest.raises(ConfigError, match="wrong type"):
        parse_config("time_budget: soon")
    with pytest.raises(ConfigError, match="one entry per level"):
        parse_config("initial_levels: 1\ninit_samples: [8, 4, 2]")
    with pytest.raises(ConfigError, match="integer >= 2"):
        parse_config("init_samples: [8, 1, 2]")
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config("transport: {steps: 3}")
    with pytest.raises(ConfigError, match="mapping"):
        parse_config("- 1\n- 2")


def test_round_trip():
    cfg = RunConfig(dim=1, matern=MaternConfig(nu=1.5), init_samples=(16, 8), initial_levels=1, mode="both",
                    cost_mode="virtual", run_seed=42, time_budget=12.5)
    assert parse_config(emit_config(cfg)) == cfg
    assert parse_config(emit_config(RunConfig())) == RunConfig()


def test_load_and_output_env(tmp_path, monkeypatch):
    path = tmp_path / "c.yaml"
    path.write_text("run_seed: 5\noutput_dir: here\n")
    cfg = load_config(path)
    assert cfg.run_seed == 5
    monkeypatch.delenv(OUTPUT_ENV, raising=False)
    assert cfg.resolved_output_dir() == "here"
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "elsewhere"))
    assert cfg.resolved_output_dir() == str(tmp_path / "elsewhere")


def test_validate_after_replace():
    with pytest.raises(ConfigError):
        dataclasses.replace(RunConfig(), mode="fast").validate()
