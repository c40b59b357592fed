from pydantic import BaseModel, Field
from typing import List, Optional

from .harness import MutationOperator


class GameSource(BaseModel):
    source: str = Field(..., min_length=1, description="Game DSL text")


class GameSummary(BaseModel):
    name: str
    sprites: List[str]
    variables: List[str]
    statements: int
    win_statements: List[str]


class CanonicalGame(BaseModel):
    canonical: str
    summary: GameSummary


class ValidationReport(BaseModel):
    valid: bool
    issues: List[dict] = Field(default_factory=list)


class CdgResponse(BaseModel):
    dot: str
    edges: List[List[str]]


class MutantRequest(GameSource):
    seed: int = Field(0, ge=0)
    cap: int = Field(50, gt=0)
    operators: Optional[List[MutationOperator]] = None


class MutantSummary(BaseModel):
    filename: str
    operator: MutationOperator
    block_id: str
    replacement: Optional[str] = None
    source: str


class CompareRequest(BaseModel):
    x: List[float] = Field(..., min_length=1)
    y: List[float] = Field(..., min_length=1)
