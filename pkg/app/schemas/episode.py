from pydantic import BaseModel, Field
from typing import Dict, List, Optional
from enum import Enum

from .neat import Genome


class EventKind(str, Enum):
    KEY_PRESS = "KeyPress"
    CLICK_SPRITE = "ClickSprite"
    CLICK_STAGE = "ClickStage"
    TYPE_TEXT = "TypeText"
    MOUSE_MOVE = "MouseMove"
    MOUSE_MOVE_TO = "MouseMoveTo"
    MOUSE_DOWN = "MouseDown"
    WAIT = "Wait"


TARGETED_KINDS = {EventKind.KEY_PRESS, EventKind.CLICK_SPRITE, EventKind.MOUSE_MOVE_TO}


class InputEvent(BaseModel):
    kind: EventKind
    # key for KeyPress, sprite name for ClickSprite / MouseMoveTo
    target: Optional[str] = None
    duration_steps: int = Field(1, ge=1)
    x: Optional[float] = None
    y: Optional[float] = None
    text: Optional[str] = None
    issued_at: int = 0

    @property
    def tag(self) -> str:
        return event_tag(self.kind, self.target)


def event_tag(kind: EventKind, target: Optional[str] = None) -> str:
    return f"{kind.value}:{target}" if kind in TARGETED_KINDS else kind.value


class ParamSpec(BaseModel):
    name: str
    lo: float
    hi: float
    # "ceil" for step durations, "round" for typed numbers, None for coordinates
    rounding: Optional[str] = None


class EventSpec(BaseModel):
    """An event the game can currently process, with its regression parameters"""
    kind: EventKind
    target: Optional[str] = None
    params: List[ParamSpec] = Field(default_factory=list)

    @property
    def tag(self) -> str:
        return event_tag(self.kind, self.target)


class Feature(BaseModel):
    group: str
    name: str
    value: float = Field(..., ge=-1.0, le=1.0)


class FeatureVector(BaseModel):
    features: List[Feature] = Field(default_factory=list)

    def groups(self) -> Dict[str, List[str]]:
        grouped: Dict[str, List[str]] = {}
        for feature in self.features:
            grouped.setdefault(feature.group, []).append(feature.name)
        return grouped

    def as_dict(self) -> Dict[tuple, float]:
        return {(f.group, f.name): f.value for f in self.features}


class Diagnostic(BaseModel):
    step: int
    block_id: Optional[str] = None
    message: str


class StaticTest(BaseModel):
    seed: int
    event_log: List[InputEvent] = Field(default_factory=list)
    steps: int = 0
    target: Optional[str] = None


class EpisodeResult(BaseModel):
    seed: int
    coverage: List[str] = Field(default_factory=list)
    event_log: List[InputEvent] = Field(default_factory=list)
    # step index -> hidden node id -> activation
    activation_trace: Dict[int, Dict[int, float]] = Field(default_factory=dict)
    steps_executed: int = 0
    target_covered: bool = False
    halted: bool = False
    structural_changes: List[str] = Field(default_factory=list)
    diagnostics: List[Diagnostic] = Field(default_factory=list)
    # conditional block id -> outcomes taken
    outcomes: Dict[str, List[str]] = Field(default_factory=dict)
    # minimum branch distance per sampled conditional block
    branch_distances: Dict[str, float] = Field(default_factory=dict)
    genome: Optional[Genome] = None

    def covers(self, block_id: str) -> bool:
        return block_id in self.coverage
