from pydantic import BaseModel, ConfigDict, Field
from typing import Dict, List, Optional
from enum import Enum

from .episode import StaticTest
from .game import GameSpec
from .neat import Genome
from .oracle import GroundTruthProfile


class MutationOperator(str, Enum):
    KRM = "KRM"  # key replacement
    SBD = "SBD"  # single block deletion
    SDM = "SDM"  # script deletion
    AOR = "AOR"  # arithmetic operator replacement
    LOR = "LOR"  # logical operator replacement
    ROR = "ROR"  # relational operator replacement
    NCM = "NCM"  # negate conditional
    VRM = "VRM"  # variable replacement


class MutationPoint(BaseModel):
    operator: MutationOperator
    # block id, or the script (hat) id for KRM on a hat and for SDM
    block_id: str
    # expression path below the block's arguments; None for hats, scripts and whole blocks
    path: Optional[List[int]] = None
    original: Optional[str] = None
    choices: List[str] = Field(default_factory=list)


class Mutant(BaseModel):
    spec: GameSpec
    point: MutationPoint
    index: int
    replacement: Optional[str] = None

    @property
    def name(self) -> str:
        return f"{self.point.operator.value}.{self.index}"


class SuiteEntry(BaseModel):
    target: str
    genome: Genome
    r_c: int = 0
    seeds: List[int] = Field(default_factory=list)
    generation: int = 0
    # statements this network covered robustly along with its target
    collateral: List[str] = Field(default_factory=list)
    profile: Optional[GroundTruthProfile] = None


class DynamicTestSuite(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    game: str
    master_seed: int = 0
    r_d: int = 10
    max_steps: int = 300
    entries: List[SuiteEntry] = Field(default_factory=list)
    covered: List[str] = Field(default_factory=list)
    statements: int = 0
    generations: int = 0
    budget_exhausted: bool = False

    @property
    def coverage(self) -> float:
        return len(self.covered) / self.statements if self.statements else 0.0


class StaticSuite(BaseModel):
    game: str
    master_seed: int = 0
    max_steps: int = 300
    tests: List[StaticTest] = Field(default_factory=list)
    covered: List[str] = Field(default_factory=list)
    statements: int = 0
    episodes: int = 0

    @property
    def coverage(self) -> float:
        return len(self.covered) / self.statements if self.statements else 0.0


class GenerationLog(BaseModel):
    generation: int
    target: Optional[str] = None
    best_fitness: float = 0.0
    species: int = 0
    threshold: float = 0.0
    covered: int = 0
    statements: int = 0
    admitted: List[str] = Field(default_factory=list)
    switched: bool = False
    elapsed_seconds: float = 0.0


class CoverageRow(BaseModel):
    game: str
    suite: str
    seed: int
    covered: int
    statements: int
    coverage: float
    wins: bool = False


class MutationRow(BaseModel):
    game: str
    operator: str
    generated: int
    killed: int
    structural_kills: int
    kill_rate: float


class MutationReport(BaseModel):
    game: str
    rows: List[MutationRow] = Field(default_factory=list)
    false_positives: int = 0
    fp_runs: int = 0
    # mutant name -> decision reasons summary
    verdicts: Dict[str, str] = Field(default_factory=dict)

    @property
    def false_positive_rate(self) -> float:
        return self.false_positives / self.fp_runs if self.fp_runs else 0.0


class ComparisonResult(BaseModel):
    a12: float
    u: float
    p_value: float
    n_x: int
    n_y: int
    mean_x: float
    mean_y: float
