"""Shared fixtures: bundled games, small DSL documents and seeded generators."""

from pathlib import Path

import numpy as np
import pytest

from app.schemas.game import GameSpec
from app.schemas.neat import Genome
from app.services.game_spec_service import game_spec_service
from app.services.game_vm_service import game_vm_service
from app.services.neat_service import BIAS_ID, InnovationRegistry, neat_service
from app.services.play_service import play_service

GAMES_DIR = Path(__file__).resolve().parent.parent / "games"

MINIMAL_GAME = """\
game name=Minimal
sprite name=Cat
  costume id=cat radius=10
  script hat=greenFlag id=hat1
    b1 move 10
"""

# Cat walks right while "right" is held; reaching x > 100 covers the win block.
WALKER_GAME = """\
game name=Walker
variable init=0 max=100 min=-100 name=steps
win goal
sprite clonable=false direction=90 name=Cat rotation=all_around size=100 x=0 y=0
  costume id=cat radius=10
  script hat=greenFlag id=start
    w1 forever
      w2 if (keyDown right)
        w3 changeX 10
        w4 changeVar steps 1
      w5 if (> (x) 100)
        goal say "arrived"
        w6 stopAll
sprite clonable=false direction=90 name=Box rotation=fixed size=100 x=200 y=0
  costume id=box radius=10
  script hat=clickSprite id=boxClick
    k1 say "box"
"""


# Banana only burns a random draw; Apple's lane comes from the shared generator,
# so removing Banana changes the lane a seed produces.
ORCHARD_BANANA = """\
sprite name=Banana
  costume id=banana radius=10
  script hat=greenFlag id=drop
    n1 setVar noise (randomInRange 1 100)
"""

ORCHARD_GAME = """\
game name=Orchard
variable init=0 max=100 min=0 name=noise
variable init=0 max=2 min=0 name=lane
variable init=0 max=2 min=0 name=pressed
win caught
""" + ORCHARD_BANANA + """\
sprite name=Apple x=100
  costume id=apple radius=10
  script hat=greenFlag id=grow
    a1 setVar lane (randomInRange 1 2)
    a2 forever
      a3 if (keyDown left)
        a4 setVar pressed 1
      a5 if (keyDown right)
        a6 setVar pressed 2
      a7 if (= (var pressed) (var lane))
        caught say "caught"
        a8 stopAll
"""


def seed_for(spec: GameSpec, registry: InnovationRegistry, seed: int = 0) -> Genome:
    """Seed genome matching the game's interface at step 0"""
    state = game_vm_service.init_vm(spec, seed=0)
    features = play_service.extract_features(state, spec)
    events = play_service.event_inventory(state, spec)
    return neat_service.seed_genome(features.groups(), events, registry, np.random.default_rng(seed))


def always_choose(genome: Genome, registry: InnovationRegistry, tag: str, duration_bias: float = 3.0) -> Genome:
    """Rewire outputs so only the bias decides: `tag` always wins."""
    outputs = {n.id for n in genome.nodes if n.role.value.startswith("output")}
    favourite = registry.output_node(tag)
    duration = registry.regression_node(tag, "duration_steps")
    for connection in genome.connections:
        if connection.out_node not in outputs:
            continue
        connection.weight = 0.0
        if connection.in_node == BIAS_ID:
            if connection.out_node == favourite:
                connection.weight = 3.0
            elif connection.out_node == duration:
                connection.weight = duration_bias
            else:
                connection.weight = -3.0
    return genome


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow search tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running search test")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def games_dir() -> Path:
    return GAMES_DIR


@pytest.fixture
def fruit_spec() -> GameSpec:
    return game_spec_service.load_game(str(GAMES_DIR / "fruit_catching.game"))


@pytest.fixture
def mole_spec() -> GameSpec:
    return game_spec_service.load_game(str(GAMES_DIR / "mole_whacker.game"))


@pytest.fixture
def minimal_spec() -> GameSpec:
    return game_spec_service.parse_game(MINIMAL_GAME)


@pytest.fixture
def walker_spec() -> GameSpec:
    return game_spec_service.parse_game(WALKER_GAME)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
