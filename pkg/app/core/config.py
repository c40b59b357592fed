from pydantic_settings import BaseSettings, SettingsConfigDict
from pydantic import Field
from typing import Any, Dict, Optional
from pathlib import Path
import os

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from ..schemas.neat import NeatConfig


class RunConfig(BaseSettings):
    model_config = SettingsConfigDict(env_file=".env", env_prefix="NEATEST_", extra="ignore")

    # Application settings
    app_name: str = "Neatest Game Test Generator"
    profile: str = "desk"
    debug: bool = False

    # Program under test
    game_path: Optional[str] = None

    # Budget: whichever limit is hit first
    max_generations: int = Field(50, gt=0)
    budget_seconds: Optional[float] = Field(None, ge=0)

    # Search
    population_size: int = Field(50, gt=0)
    r_d: int = Field(10, gt=0)
    max_steps: int = Field(300, ge=0)  # 10 s at 30 steps per second
    stagnation_limit: int = Field(5, gt=0)
    robustness_early_abort: bool = False

    # NEAT
    target_species: int = Field(10, gt=0)
    initial_threshold: float = Field(3.0, gt=0)
    threshold_step: float = Field(0.3, gt=0)
    c1: float = 1.0
    c2: float = 1.0
    c3: float = 0.4
    fresh_fraction: float = Field(0.10, ge=0, le=1)
    elitism: int = Field(1, ge=0)
    stale_generations: int = Field(15, gt=0)
    survival_share: float = Field(0.2, gt=0, le=1)
    crossover_prob: float = Field(0.75, ge=0, le=1)
    add_connection_prob: float = Field(0.1, ge=0, le=1)
    add_node_prob: float = Field(0.05, ge=0, le=1)
    weight_mutation_prob: float = Field(0.8, ge=0, le=1)
    perturb_prob: float = Field(0.9, ge=0, le=1)
    perturb_sigma: float = Field(0.2, gt=0)
    toggle_prob: float = Field(0.01, ge=0, le=1)
    reenable_prob: float = Field(0.25, ge=0, le=1)
    average_matching: bool = False

    # Oracle
    oracle_threshold: float = Field(30.0, gt=0)
    ground_truth_repetitions: int = Field(100, ge=2)
    min_log_density: float = -1.0e6
    judge_seeds: int = Field(1, gt=0)
    fp_runs: int = Field(10, gt=0)
    mutants_per_operator: int = Field(50, gt=0)

    # Determinism & execution
    master_seed: int = Field(0, ge=0)
    workers: int = Field(1, gt=0)

    # Artifacts & logging
    output_dir: str = "results"
    log_level: str = "INFO"
    log_file: Optional[str] = None

    def neat_config(self) -> NeatConfig:
        """Hyper-parameters consumed by the NEAT service."""
        return NeatConfig(
            population_size=self.population_size,
            target_species=self.target_species,
            initial_threshold=self.initial_threshold,
            threshold_step=self.threshold_step,
            c1=self.c1,
            c2=self.c2,
            c3=self.c3,
            fresh_fraction=self.fresh_fraction,
            elitism=self.elitism,
            stale_generations=self.stale_generations,
            survival_share=self.survival_share,
            crossover_prob=self.crossover_prob,
            add_connection_prob=self.add_connection_prob,
            add_node_prob=self.add_node_prob,
            weight_mutation_prob=self.weight_mutation_prob,
            perturb_prob=self.perturb_prob,
            perturb_sigma=self.perturb_sigma,
            toggle_prob=self.toggle_prob,
            reenable_prob=self.reenable_prob,
            average_matching=self.average_matching,
        )


# Desk-scale settings: small populations, generation cap
class DeskRunConfig(RunConfig):
    profile: str = "desk"
    population_size: int = Field(50, gt=0)
    max_generations: int = Field(50, gt=0)
    ground_truth_repetitions: int = Field(100, ge=2)


# Unattended cluster runs: large population, 23 h wall budget
class ClusterRunConfig(RunConfig):
    profile: str = "cluster"
    population_size: int = Field(300, gt=0)
    max_generations: int = Field(1_000_000, gt=0)
    budget_seconds: Optional[float] = Field(23 * 3600.0, ge=0)
    log_level: str = "WARNING"


PROFILES = {"desk": DeskRunConfig, "cluster": ClusterRunConfig}


def get_settings(**overrides: Any) -> RunConfig:
    profile = overrides.pop("profile", None) or os.getenv("NEATEST_PROFILE", "desk")
    config_cls = PROFILES.get(profile, DeskRunConfig)
    return config_cls(**overrides)


def load_run_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    Build a RunConfig from an optional TOML file plus CLI overrides.

    Precedence: flags > file > environment > profile defaults.
    """
    values: Dict[str, Any] = {}
    if path:
        with open(Path(path), "rb") as handle:
            values.update(tomllib.load(handle))
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    return get_settings(**values)


settings = get_settings()
