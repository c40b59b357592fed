from dataclasses import dataclass, field
from typing import Dict, List, Optional, Set, Union

from ..schemas.game import Block, GameSpec, Script, SpriteSpec
from ..services.pcg import Pcg32

Value = Union[float, str]

STEPS_PER_SECOND = 30
MAX_CLONES = 300


@dataclass
class SpriteInstance:
    spec: SpriteSpec
    serial: int
    is_clone: bool = False
    x: float = 0.0
    y: float = 0.0
    size: float = 100.0
    direction: float = 90.0
    costume_index: int = 0
    visible: bool = True
    saying: Optional[str] = None
    deleted: bool = False

    @property
    def name(self) -> str:
        return self.spec.name

    @property
    def radius(self) -> float:
        """Effective collision radius of the selected costume"""
        return self.spec.costumes[self.costume_index].radius * self.size / 100.0


@dataclass
class Frame:
    body: List[Block]
    pc: int = 0
    # loop block owning this frame; None for if/ifElse bodies and the script body
    loop: Optional[Block] = None
    remaining: int = 0
    iteration_done: bool = False


@dataclass
class Thread:
    serial: int
    instance: SpriteInstance
    script: Script
    script_index: int
    ready_at: int
    frames: List[Frame] = field(default_factory=list)
    started: bool = False
    wait_steps: int = 0
    waiting_answer: bool = False
    done: bool = False


@dataclass
class VmDiagnostic:
    step: int
    block_id: str
    message: str


@dataclass
class VmState:
    spec: GameSpec
    seed: int
    rng: Pcg32
    sprites: List[SpriteInstance] = field(default_factory=list)
    variables: Dict[str, Value] = field(default_factory=dict)
    step_index: int = 0
    covered: Set[str] = field(default_factory=set)
    # conditional block id -> outcomes taken ("then", "else", "body", "exit")
    outcomes: Dict[str, Set[str]] = field(default_factory=dict)
    threads: List[Thread] = field(default_factory=list)
    halted: bool = False
    mouse_x: float = 0.0
    mouse_y: float = 0.0
    mouse_down_steps: int = 0
    keys_down: Dict[str, int] = field(default_factory=dict)
    answer: str = ""
    ask_pending: bool = False
    diagnostics: List[VmDiagnostic] = field(default_factory=list)
    next_serial: int = 0
    next_instance_serial: int = 0
    warned_blocks: Set[str] = field(default_factory=set)
    trace_path: Optional[str] = None

    @property
    def mouse_down(self) -> bool:
        return self.mouse_down_steps > 0

    def live_sprites(self) -> List[SpriteInstance]:
        return [s for s in self.sprites if not s.deleted]

    def instances_of(self, name: str) -> List[SpriteInstance]:
        return [s for s in self.sprites if s.name == name and not s.deleted]

    def original(self, name: str) -> Optional[SpriteInstance]:
        return next((s for s in self.sprites if s.name == name and not s.is_clone), None)


@dataclass
class StepResult:
    state: VmState
    newly_covered: List[str]
    halted: bool
