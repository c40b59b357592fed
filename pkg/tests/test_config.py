"""Run configuration: profiles, environment, TOML files and flag precedence."""

import pytest
from pydantic import ValidationError

from app.core.config import ClusterRunConfig, DeskRunConfig, get_settings, load_run_config


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for name in ("NEATEST_PROFILE", "NEATEST_R_D", "NEATEST_MAX_STEPS", "NEATEST_POPULATION_SIZE"):
        monkeypatch.delenv(name, raising=False)


def test_desk_is_default() -> None:
    config = get_settings()
    assert isinstance(config, DeskRunConfig)
    assert (config.population_size, config.max_generations, config.budget_seconds) == (50, 50, None)


def test_cluster_profile(monkeypatch) -> None:
    monkeypatch.setenv("NEATEST_PROFILE", "cluster")
    config = get_settings()
    assert isinstance(config, ClusterRunConfig)
    assert config.population_size == 300
    assert config.budget_seconds == 23 * 3600.0


def test_environment_prefix(monkeypatch) -> None:
    monkeypatch.setenv("NEATEST_R_D", "4")
    assert get_settings().r_d == 4


def test_file_then_flags(tmp_path, monkeypatch) -> None:
    monkeypatch.setenv("NEATEST_MAX_STEPS", "100")
    path = tmp_path / "run.toml"
    path.write_text('profile = "cluster"\npopulation_size = 12\nr_d = 5\nmax_steps = 200\n')
    config = load_run_config(str(path), {"r_d": 7, "workers": None})
    assert isinstance(config, ClusterRunConfig)
    assert config.population_size == 12
    assert config.r_d == 7
    assert config.max_steps == 200
    assert config.workers == 1


def test_bounds_are_checked() -> None:
    with pytest.raises(ValidationError):
        load_run_config(None, {"r_d": 0})
    with pytest.raises(ValidationError):
        load_run_config(None, {"ground_truth_repetitions": 1})


def test_neat_config_follows_run_config() -> None:
    config = load_run_config(None, {"population_size": 20, "c3": 0.5, "elitism": 2})
    neat = config.neat_config()
    assert (neat.population_size, neat.c3, neat.elitism) == (20, 0.5, 2)
    assert neat.target_species == config.target_species
