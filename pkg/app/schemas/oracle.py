from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, model_validator
from typing import Dict, List, Optional, Tuple
from enum import Enum


class NodeStepSamples(BaseModel):
    node_id: int
    # None for the node's pooled samples over every step
    step: Optional[int] = None
    samples: List[float]
    bandwidth: float = 0.0
    constant: bool = False


class GroundTruthProfile(BaseModel):
    """Activation samples of one network on the clean program"""
    model_config = ConfigDict(ser_json_inf_nan="constants")

    genome_key: int
    signature: str
    target: Optional[str] = None
    seeds: List[int] = Field(default_factory=list)
    repetitions: int = Field(..., ge=2)
    min_episode_length: int = 0
    entries: List[NodeStepSamples] = Field(default_factory=list)
    pooled: List[NodeStepSamples] = Field(default_factory=list)
    # structural-change flags already seen on the clean program
    known_flags: List[str] = Field(default_factory=list)
    # hidden node id -> input features it reads
    node_sources: Dict[int, List[str]] = Field(default_factory=dict)

    _by_step: Dict[Tuple[int, int], NodeStepSamples] = PrivateAttr(default_factory=dict)
    _by_node: Dict[int, NodeStepSamples] = PrivateAttr(default_factory=dict)

    def model_post_init(self, __context) -> None:
        self._by_step = {(e.node_id, e.step): e for e in self.entries}
        self._by_node = {e.node_id: e for e in self.pooled}

    def lookup(self, node_id: int, step: int) -> Optional[NodeStepSamples]:
        """Per-step samples when recorded, otherwise the node's pooled samples"""
        return self._by_step.get((node_id, step)) or self._by_node.get(node_id)


class Decision(str, Enum):
    CLEAN = "clean"
    MUTANT = "mutant"


class ExceedanceReason(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    kind: str = "lsa"  # "lsa" or "structural"
    seed: int
    node_id: Optional[int] = None
    step: Optional[int] = None
    lsa: Optional[float] = None
    sources: List[str] = Field(default_factory=list)
    flag: Optional[str] = None


class Verdict(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    decision: Decision
    reasons: List[ExceedanceReason] = Field(default_factory=list)
    max_lsa: float = 0.0

    @model_validator(mode="after")
    def check_decision(self):
        if (self.decision == Decision.MUTANT) != bool(self.reasons):
            raise ValueError("a mutant verdict needs at least one reason and a clean one none")
        return self

    @property
    def structural(self) -> bool:
        return any(reason.kind == "structural" for reason in self.reasons)
