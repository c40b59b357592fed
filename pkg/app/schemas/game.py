from pydantic import BaseModel, Field, ConfigDict
from typing import Iterator, List, Optional, Tuple, Union
from enum import Enum

STAGE_WIDTH = 480
STAGE_HEIGHT = 360
STAGE_X = 240
STAGE_Y = 180
DEFAULT_KEYS = ("left", "right", "up", "down", "space")


class HatKind(str, Enum):
    GREEN_FLAG = "greenFlag"
    KEY_PRESSED = "keyPressed"
    CLICK_SPRITE = "clickSprite"
    CLICK_STAGE = "clickStage"
    START_AS_CLONE = "whenIStartAsClone"
    BROADCAST_RECEIVED = "whenBroadcastReceived"
    ANSWER_RECEIVED = "whenAnswerReceived"


class Opcode(str, Enum):
    # motion
    MOVE = "move"
    SET_XY = "setXY"
    CHANGE_X = "changeX"
    CHANGE_Y = "changeY"
    POINT_DIRECTION = "pointDirection"
    GOTO_RANDOM = "gotoRandom"
    # control
    IF = "if"
    IF_ELSE = "ifElse"
    REPEAT = "repeat"
    REPEAT_UNTIL = "repeatUntil"
    FOREVER = "forever"
    WAIT = "wait"
    STOP_ALL = "stopAll"
    STOP_SCRIPT = "stopScript"
    # data
    SET_VAR = "setVar"
    CHANGE_VAR = "changeVar"
    # looks
    SWITCH_COSTUME = "switchCostume"
    HIDE = "hide"
    SHOW = "show"
    SET_SIZE = "setSize"
    SAY = "say"
    # events
    BROADCAST = "broadcast"
    ASK = "ask"
    # clones
    CREATE_CLONE = "createClone"
    DELETE_CLONE = "deleteClone"


class RotationStyle(str, Enum):
    ALL_AROUND = "all_around"
    FIXED = "fixed"


class ValueType(str, Enum):
    NUM = "num"
    BOOL = "bool"
    TEXT = "text"
    ANY = "any"


CONTROL_OPCODES = {Opcode.IF, Opcode.IF_ELSE, Opcode.REPEAT, Opcode.REPEAT_UNTIL, Opcode.FOREVER}
CONDITIONAL_OPCODES = {Opcode.IF, Opcode.IF_ELSE, Opcode.REPEAT_UNTIL}
ARITHMETIC_OPS = ("+", "-", "*", "/", "mod")
RELATIONAL_OPS = ("<", ">", "=")
LOGICAL_OPS = ("and", "or")
LITERAL_OPS = ("num", "text", "name")


class Expr(BaseModel):
    """
    Expression tree node in prefix form.

    Literals use op "num", "text" or "name" (bare identifier) and carry `value`;
    every other op is an operator applied to `args`.
    """
    op: str
    value: Optional[Union[float, str]] = None
    args: List["Expr"] = Field(default_factory=list)

    @classmethod
    def num(cls, value: float) -> "Expr":
        return cls(op="num", value=float(value))

    @classmethod
    def text(cls, value: str) -> "Expr":
        return cls(op="text", value=value)

    @classmethod
    def name(cls, value: str) -> "Expr":
        return cls(op="name", value=value)

    @classmethod
    def call(cls, op: str, *args: "Expr") -> "Expr":
        return cls(op=op, args=list(args))

    @property
    def is_literal(self) -> bool:
        return self.op in LITERAL_OPS

    def walk(self, path: Tuple[int, ...] = ()) -> Iterator[Tuple[Tuple[int, ...], "Expr"]]:
        yield path, self
        for index, arg in enumerate(self.args):
            yield from arg.walk(path + (index,))


class Block(BaseModel):
    id: str
    opcode: Opcode
    args: List[Expr] = Field(default_factory=list)
    bodies: List[List["Block"]] = Field(default_factory=list)


class Script(BaseModel):
    id: str  # the hat block id
    hat: HatKind
    key: Optional[str] = None
    message: Optional[str] = None
    body: List[Block] = Field(default_factory=list)

    def iter_blocks(self) -> Iterator[Block]:
        yield from iter_block_tree(self.body)


class Costume(BaseModel):
    id: str
    radius: float = Field(..., gt=0)


class SpriteSpec(BaseModel):
    name: str
    costumes: List[Costume] = Field(..., min_length=1)
    init_x: float = 0.0
    init_y: float = 0.0
    init_size: float = 100.0
    init_direction: float = 90.0
    rotation_style: RotationStyle = RotationStyle.ALL_AROUND
    scripts: List[Script] = Field(default_factory=list)
    clonable: bool = False

    def iter_blocks(self) -> Iterator[Block]:
        for script in self.scripts:
            yield from script.iter_blocks()


class ColorRegion(BaseModel):
    color: str
    x0: float
    y0: float
    x1: float
    y1: float


class StageSpec(BaseModel):
    width: int = STAGE_WIDTH
    height: int = STAGE_HEIGHT
    color_regions: List[ColorRegion] = Field(default_factory=list)


class Variable(BaseModel):
    name: str
    init: float = 0.0
    min: float = -100.0
    max: float = 100.0


class GameSpec(BaseModel):
    name: str
    stage: StageSpec = Field(default_factory=StageSpec)
    sprites: List[SpriteSpec] = Field(default_factory=list)
    variables: List[Variable] = Field(default_factory=list)
    win_statements: List[str] = Field(default_factory=list)

    def sprite(self, name: str) -> Optional[SpriteSpec]:
        return next((s for s in self.sprites if s.name == name), None)

    def iter_scripts(self) -> Iterator[Tuple[SpriteSpec, Script]]:
        for sprite in self.sprites:
            for script in sprite.scripts:
                yield sprite, script

    def iter_blocks(self) -> Iterator[Block]:
        for sprite in self.sprites:
            yield from sprite.iter_blocks()

    def statement_ids(self) -> List[str]:
        """All coverable ids: hats and blocks, in document order"""
        ids: List[str] = []
        for _, script in self.iter_scripts():
            ids.append(script.id)
            ids.extend(block.id for block in script.iter_blocks())
        return ids


class ValidationIssue(BaseModel):
    model_config = ConfigDict(frozen=True)

    block_id: Optional[str] = None
    line: Optional[int] = None
    rule: str
    message: str


def iter_block_tree(blocks: List[Block]) -> Iterator[Block]:
    for block in blocks:
        yield block
        for body in block.bodies:
            yield from iter_block_tree(body)


Expr.model_rebuild()
Block.model_rebuild()
