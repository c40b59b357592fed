from pydantic import BaseModel, Field
from typing import List, Optional


class FitnessReport(BaseModel):
    approach_level: int = Field(0, ge=0)
    branch_distance: float = Field(0.0, ge=0)
    control_flow_distance: int = Field(0, ge=0)
    f_st: float = Field(0.0, ge=0)
    fitness: float = 0.0

    @property
    def covered(self) -> bool:
        return self.f_st == 0


class RobustnessOutcome(BaseModel):
    r_c: int = Field(0, ge=0)
    seeds: List[int] = Field(default_factory=list)
    # coverage of every reseeded episode that ran, in seed order
    coverages: List[List[str]] = Field(default_factory=list)
    aborted: bool = False


class SearchState(BaseModel):
    """Coverage bookkeeping of one generation run"""
    covered: List[str] = Field(default_factory=list)
    accidental: List[str] = Field(default_factory=list)
    target: Optional[str] = None
    stagnation: int = 0
    best_fitness: float = 0.0
    # targets given up on stagnation, oldest first
    switched: List[str] = Field(default_factory=list)
    stagnation_limit: int = Field(5, gt=0)

    def mark_covered(self, block_ids) -> None:
        for block_id in block_ids:
            if block_id not in self.covered:
                self.covered.append(block_id)
            if block_id in self.accidental:
                self.accidental.remove(block_id)
            if block_id in self.switched:
                self.switched.remove(block_id)

    def mark_accidental(self, block_ids) -> None:
        for block_id in block_ids:
            if block_id not in self.covered and block_id not in self.accidental:
                self.accidental.append(block_id)
