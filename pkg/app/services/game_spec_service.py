import json
import logging
import re
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple

from ..core.exceptions import GameSpecError, SpecValidationError
from ..schemas.game import (
    Block,
    ColorRegion,
    Costume,
    Expr,
    GameSpec,
    HatKind,
    Opcode,
    RotationStyle,
    Script,
    SpriteSpec,
    STAGE_X,
    STAGE_Y,
    ValidationIssue,
    ValueType,
    Variable,
)

logger = logging.getLogger(__name__)

NUM, BOOL, TEXT, ANY = ValueType.NUM, ValueType.BOOL, ValueType.TEXT, ValueType.ANY
NAME = "name"   # argument must be a bare identifier
VALUE = "value"  # any non-boolean value
SPRITE_ATTRIBUTES = ("x", "y", "direction", "size", "costume")
MYSELF = "myself"
ENTRY_ID = "Entry"

# operator -> (argument kinds, result type)
EXPR_SIGNATURES: Dict[str, Tuple[Tuple[str, ...], ValueType]] = {
    "var": ((NAME,), NUM),
    "x": ((), NUM),
    "y": ((), NUM),
    "direction": ((), NUM),
    "size": ((), NUM),
    "costume": ((), NUM),
    "of": ((NAME, NAME), NUM),
    "+": ((NUM, NUM), NUM),
    "-": ((NUM, NUM), NUM),
    "*": ((NUM, NUM), NUM),
    "/": ((NUM, NUM), NUM),
    "mod": ((NUM, NUM), NUM),
    "<": ((NUM, NUM), BOOL),
    ">": ((NUM, NUM), BOOL),
    "=": ((VALUE, VALUE), BOOL),
    "and": ((BOOL, BOOL), BOOL),
    "or": ((BOOL, BOOL), BOOL),
    "not": ((BOOL,), BOOL),
    "randomInRange": ((NUM, NUM), NUM),
    "touching": ((NAME,), BOOL),
    "touchingEdge": ((), BOOL),
    "touchingColor": ((NAME,), BOOL),
    "touchingMouse": ((), BOOL),
    "distanceTo": ((NAME,), NUM),
    "keyDown": ((NAME,), BOOL),
    "mouseX": ((), NUM),
    "mouseY": ((), NUM),
    "mouseDown": ((), BOOL),
    "answer": ((), ANY),
}

# opcode -> (argument kinds, number of bodies)
BLOCK_SIGNATURES: Dict[Opcode, Tuple[Tuple[str, ...], int]] = {
    Opcode.MOVE: ((NUM,), 0),
    Opcode.SET_XY: ((NUM, NUM), 0),
    Opcode.CHANGE_X: ((NUM,), 0),
    Opcode.CHANGE_Y: ((NUM,), 0),
    Opcode.POINT_DIRECTION: ((NUM,), 0),
    Opcode.GOTO_RANDOM: ((), 0),
    Opcode.IF: ((BOOL,), 1),
    Opcode.IF_ELSE: ((BOOL,), 2),
    Opcode.REPEAT: ((NUM,), 1),
    Opcode.REPEAT_UNTIL: ((BOOL,), 1),
    Opcode.FOREVER: ((), 1),
    Opcode.WAIT: ((NUM,), 0),
    Opcode.STOP_ALL: ((), 0),
    Opcode.STOP_SCRIPT: ((), 0),
    Opcode.SET_VAR: ((NAME, NUM), 0),
    Opcode.CHANGE_VAR: ((NAME, NUM), 0),
    Opcode.SWITCH_COSTUME: ((NAME,), 0),
    Opcode.HIDE: ((), 0),
    Opcode.SHOW: ((), 0),
    Opcode.SET_SIZE: ((NUM,), 0),
    Opcode.SAY: ((ANY,), 0),
    Opcode.BROADCAST: ((NAME,), 0),
    Opcode.ASK: ((ANY,), 0),
    Opcode.CREATE_CLONE: ((NAME,), 0),
    Opcode.DELETE_CLONE: ((), 0),
}

_TOKEN_RE = re.compile(r'\s*(?:(\()|(\))|"((?:[^"\\]|\\.)*)"|([^\s()"]+))')
_NUMBER_RE = re.compile(r"^[-+]?(\d+(\.\d*)?|\.\d+)([eE][-+]?\d+)?$")
_IDENT_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_.\-#]*$")
INDENT = "  "


def format_number(value: float) -> str:
    """Shortest round-trip decimal; integral values drop the fraction"""
    value = float(value)
    if value == 0:
        return "0"
    if value.is_integer() and abs(value) < 1e16:
        return str(int(value))
    return repr(value)


_ESCAPES = {"n": "\n", "r": "\r"}


def _quote(text: str) -> str:
    escaped = text.replace("\\", "\\\\").replace('"', '\\"')
    return '"' + escaped.replace("\n", "\\n").replace("\r", "\\r") + '"'


def _unquote(raw: str) -> str:
    return re.sub(r"\\(.)", lambda m: _ESCAPES.get(m.group(1), m.group(1)), raw)


class _Line:
    __slots__ = ("number", "indent", "text")

    def __init__(self, number: int, indent: int, text: str):
        self.number = number
        self.indent = indent
        self.text = text


class _ExprParser:
    """Recursive-descent parser over the tokens of one block line"""

    def __init__(self, text: str, line: int, column_offset: int):
        self.line = line
        self.tokens: List[Tuple[str, str, int]] = []
        pos = 0
        while pos < len(text):
            match = _TOKEN_RE.match(text, pos)
            if not match or match.end() == pos:
                if text[pos:].strip() == "":
                    break
                raise GameSpecError("unexpected character", line, column_offset + pos + 1)
            column = column_offset + match.start() + len(match.group(0)) - len(match.group(0).lstrip()) + 1
            if match.group(1):
                self.tokens.append(("(", "(", column))
            elif match.group(2):
                self.tokens.append((")", ")", column))
            elif match.group(3) is not None:
                raw = match.group(3)
                self.tokens.append(("text", _unquote(raw), column))
            else:
                self.tokens.append(("atom", match.group(4), column))
            pos = match.end()
        self.index = 0

    def at_end(self) -> bool:
        return self.index >= len(self.tokens)

    def parse_expr(self) -> Expr:
        if self.at_end():
            raise GameSpecError("expected expression", self.line, None)
        kind, value, column = self.tokens[self.index]
        self.index += 1
        if kind == "text":
            return Expr.text(value)
        if kind == "atom":
            if _NUMBER_RE.match(value):
                return Expr.num(float(value))
            return Expr.name(value)
        if kind == ")":
            raise GameSpecError("unbalanced ')'", self.line, column)
        # operator application
        if self.at_end():
            raise GameSpecError("expected operator after '('", self.line, column)
        op_kind, op, op_column = self.tokens[self.index]
        self.index += 1
        if op_kind != "atom" or op not in EXPR_SIGNATURES:
            raise GameSpecError(f"unknown operator '{op}'", self.line, op_column)
        args: List[Expr] = []
        while True:
            if self.at_end():
                raise GameSpecError("missing ')'", self.line, column)
            if self.tokens[self.index][0] == ")":
                self.index += 1
                break
            args.append(self.parse_expr())
        expected = len(EXPR_SIGNATURES[op][0])
        if len(args) != expected:
            raise GameSpecError(f"operator '{op}' takes {expected} argument(s), got {len(args)}", self.line, op_column)
        return Expr(op=op, args=args)


class SpecIndex:
    """Lookup tables over an immutable GameSpec"""

    def __init__(self, spec: GameSpec):
        self.spec = spec
        self.blocks: Dict[str, Block] = {}
        self.scripts: Dict[str, Script] = {}
        self.owner: Dict[str, str] = {}
        self.script_of: Dict[str, str] = {}
        self.location: Dict[str, Tuple[List[Block], int]] = {}
        self.parent: Dict[str, str] = {}
        self.sprite_index = {sprite.name: i for i, sprite in enumerate(spec.sprites)}
        for sprite in spec.sprites:
            for script in sprite.scripts:
                self.scripts[script.id] = script
                self.owner[script.id] = sprite.name
                self.script_of[script.id] = script.id
                self._index_body(sprite.name, script.id, script.id, script.body)

    def _index_body(self, sprite: str, script_id: str, parent_id: str, body: List[Block]) -> None:
        for position, block in enumerate(body):
            self.blocks[block.id] = block
            self.owner[block.id] = sprite
            self.script_of[block.id] = script_id
            self.location[block.id] = (body, position)
            self.parent[block.id] = parent_id
            for inner in block.bodies:
                self._index_body(sprite, script_id, block.id, inner)

    def statement_ids(self) -> List[str]:
        return list(self.owner.keys())


class GameSpecService:
    """Parse, validate and serialize the block-structured game DSL"""

    # ------------------------------------------------------------------ parse

    def parse_game(self, text: str) -> GameSpec:
        """
        Parse a DSL document into a validated GameSpec
        """
        spec, lines = self._parse_unchecked(text)
        issues = self.validate_spec(spec)
        if issues:
            issues = [issue.model_copy(update={"line": lines.get(issue.block_id)}) for issue in issues]
            raise SpecValidationError(issues)
        return spec

    def load_game(self, path: str) -> GameSpec:
        text = Path(path).read_text(encoding="utf-8")
        spec = self.parse_game(text)
        logger.info(f"Loaded game '{spec.name}' from {path} ({len(spec.statement_ids())} statements)")
        return spec

    def _split_lines(self, text: str) -> List[_Line]:
        lines: List[_Line] = []
        for number, raw in enumerate(text.splitlines(), start=1):
            stripped = raw.rstrip()
            if not stripped.strip() or stripped.lstrip().startswith("#"):
                continue
            if "\t" in raw[: len(raw) - len(raw.lstrip())]:
                raise GameSpecError("tabs are not allowed in indentation", number, 1)
            width = len(stripped) - len(stripped.lstrip(" "))
            if width % 2:
                raise GameSpecError("indentation must be a multiple of two spaces", number, width + 1)
            lines.append(_Line(number, width // 2, stripped.strip()))
        return lines

    def _fields(self, line: _Line, keyword: str, required: Tuple[str, ...], optional: Tuple[str, ...] = ()) -> Dict[str, str]:
        parts = line.text.split()
        fields: Dict[str, str] = {}
        column = len(keyword) + 2
        for part in parts[1:]:
            if "=" not in part:
                raise GameSpecError(f"expected key=value in '{keyword}' line", line.number, column)
            key, value = part.split("=", 1)
            if key not in required and key not in optional:
                raise GameSpecError(f"unknown key '{key}' in '{keyword}' line", line.number, column)
            if key in fields:
                raise GameSpecError(f"duplicate key '{key}'", line.number, column)
            fields[key] = value
            column += len(part) + 1
        missing = [key for key in required if key not in fields]
        if missing:
            raise GameSpecError(f"missing key(s) {', '.join(missing)} in '{keyword}' line", line.number, 1)
        return fields

    def _number(self, value: str, line: _Line) -> float:
        if not _NUMBER_RE.match(value):
            raise GameSpecError(f"expected number, got '{value}'", line.number, None)
        return float(value)

    def _parse_unchecked(self, text: str) -> Tuple[GameSpec, Dict[Optional[str], int]]:
        lines = self._split_lines(text)
        if not lines or not lines[0].text.startswith("game ") or lines[0].indent != 0:
            raise GameSpecError("document must start with a 'game name=...' line", lines[0].number if lines else 1, 1)
        header = self._fields(lines[0], "game", ("name",))
        spec = GameSpec(name=header["name"])
        positions: Dict[Optional[str], int] = {}
        pos = 1
        while pos < len(lines):
            line = lines[pos]
            if line.indent != 0:
                raise GameSpecError("unexpected indentation", line.number, line.indent * 2 + 1)
            keyword = line.text.split()[0]
            if keyword == "variable":
                fields = self._fields(line, keyword, ("name",), ("init", "min", "max"))
                variable = Variable(name=fields["name"])
                for key in ("init", "min", "max"):
                    if key in fields:
                        setattr(variable, key, self._number(fields[key], line))
                spec.variables.append(variable)
                positions[fields["name"]] = line.number
                pos += 1
            elif keyword == "region":
                fields = self._fields(line, keyword, ("color", "x0", "x1", "y0", "y1"))
                spec.stage.color_regions.append(ColorRegion(
                    color=fields["color"],
                    **{key: self._number(fields[key], line) for key in ("x0", "x1", "y0", "y1")},
                ))
                pos += 1
            elif keyword == "win":
                parts = line.text.split()
                if len(parts) != 2:
                    raise GameSpecError("expected 'win <block id>'", line.number, 1)
                spec.win_statements.append(parts[1])
                pos += 1
            elif keyword == "sprite":
                sprite, pos = self._parse_sprite(lines, pos, positions)
                spec.sprites.append(sprite)
            else:
                raise GameSpecError(f"unknown top-level keyword '{keyword}'", line.number, 1)
        return spec, positions

    def _parse_sprite(self, lines: List[_Line], pos: int, positions: Dict[Optional[str], int]) -> Tuple[SpriteSpec, int]:
        line = lines[pos]
        fields = self._fields(line, "sprite", ("name",), ("clonable", "direction", "rotation", "size", "x", "y"))
        costumes: List[Costume] = []
        scripts: List[Script] = []
        positions[fields["name"]] = line.number
        pos += 1
        while pos < len(lines) and lines[pos].indent >= 1:
            child = lines[pos]
            if child.indent != 1:
                raise GameSpecError("unexpected indentation", child.number, child.indent * 2 + 1)
            keyword = child.text.split()[0]
            if keyword == "costume":
                cfields = self._fields(child, keyword, ("id", "radius"))
                costumes.append(Costume(id=cfields["id"], radius=self._number(cfields["radius"], child)))
                pos += 1
            elif keyword == "script":
                sfields = self._fields(child, keyword, ("hat", "id"), ("key", "message"))
                try:
                    hat = HatKind(sfields["hat"])
                except ValueError:
                    raise GameSpecError(f"unknown hat '{sfields['hat']}'", child.number, 1)
                positions[sfields["id"]] = child.number
                body, pos = self._parse_body(lines, pos + 1, 2, positions)
                scripts.append(Script(
                    id=sfields["id"], hat=hat, key=sfields.get("key"), message=sfields.get("message"), body=body,
                ))
            else:
                raise GameSpecError(f"unknown sprite keyword '{keyword}'", child.number, 3)
        if not costumes:
            raise GameSpecError(f"sprite '{fields['name']}' needs at least one costume", line.number, 1)
        rotation = fields.get("rotation", RotationStyle.ALL_AROUND.value)
        if rotation not in (r.value for r in RotationStyle):
            raise GameSpecError(f"unknown rotation style '{rotation}'", line.number, None)
        clonable = fields.get("clonable", "false")
        if clonable not in ("true", "false"):
            raise GameSpecError("clonable must be true or false", line.number, None)
        sprite = SpriteSpec(
            name=fields["name"],
            costumes=costumes,
            init_x=self._number(fields.get("x", "0"), line),
            init_y=self._number(fields.get("y", "0"), line),
            init_size=self._number(fields.get("size", "100"), line),
            init_direction=self._number(fields.get("direction", "90"), line),
            rotation_style=RotationStyle(rotation),
            scripts=scripts,
            clonable=clonable == "true",
        )
        return sprite, pos

    def _parse_body(self, lines: List[_Line], pos: int, indent: int,
                    positions: Dict[Optional[str], int]) -> Tuple[List[Block], int]:
        body: List[Block] = []
        while pos < len(lines) and lines[pos].indent >= indent:
            line = lines[pos]
            if line.indent > indent:
                raise GameSpecError("unexpected indentation", line.number, line.indent * 2 + 1)
            if line.text == "else":
                break
            block, pos = self._parse_block(lines, pos, indent, positions)
            body.append(block)
        return body, pos

    def _parse_block(self, lines: List[_Line], pos: int, indent: int,
                     positions: Dict[Optional[str], int]) -> Tuple[Block, int]:
        line = lines[pos]
        parts = line.text.split(None, 2)
        if len(parts) < 2:
            raise GameSpecError("expected '<block id> <opcode> <args>'", line.number, indent * 2 + 1)
        block_id, opcode_name = parts[0], parts[1]
        try:
            opcode = Opcode(opcode_name)
        except ValueError:
            raise GameSpecError(f"unknown opcode '{opcode_name}'", line.number, indent * 2 + len(block_id) + 2)
        rest = parts[2] if len(parts) > 2 else ""
        column_offset = indent * 2 + len(block_id) + len(opcode_name) + 2
        parser = _ExprParser(rest, line.number, column_offset)
        args: List[Expr] = []
        while not parser.at_end():
            args.append(parser.parse_expr())
        arg_kinds, body_count = BLOCK_SIGNATURES[opcode]
        if len(args) != len(arg_kinds):
            raise GameSpecError(
                f"opcode '{opcode_name}' takes {len(arg_kinds)} argument(s), got {len(args)}",
                line.number, column_offset + 1,
            )
        positions.setdefault(block_id, line.number)
        pos += 1
        bodies: List[List[Block]] = []
        if body_count:
            first, pos = self._parse_body(lines, pos, indent + 1, positions)
            bodies.append(first)
        if body_count == 2:
            if pos >= len(lines) or lines[pos].indent != indent or lines[pos].text != "else":
                raise GameSpecError("ifElse requires an 'else' line", line.number, indent * 2 + 1)
            second, pos = self._parse_body(lines, pos + 1, indent + 1, positions)
            bodies.append(second)
        return Block(id=block_id, opcode=opcode, args=args, bodies=bodies), pos

    # --------------------------------------------------------------- validate

    def validate_spec(self, spec: GameSpec) -> List[ValidationIssue]:
        """
        Check every GameSpec invariant; returns one issue per violation
        """
        issues: List[ValidationIssue] = []

        def report(block_id: Optional[str], rule: str, message: str) -> None:
            issues.append(ValidationIssue(block_id=block_id, rule=rule, message=message))

        def identifier(block_id: Optional[str], kind: str, name: str) -> None:
            if not _IDENT_RE.match(name):
                report(block_id, "identifier", f"{kind} '{name}' is not an identifier")

        identifier(None, "game name", spec.name)

        variable_names = set()
        for variable in spec.variables:
            identifier(variable.name, "variable", variable.name)
            if variable.name in variable_names:
                report(variable.name, "duplicate-variable", f"variable '{variable.name}' declared twice")
            variable_names.add(variable.name)
            if variable.min >= variable.max:
                report(variable.name, "variable-range", f"variable '{variable.name}' has empty range")

        colors = set()
        for region in spec.stage.color_regions:
            identifier(region.color, "color", region.color)
            colors.add(region.color)
            if not (-STAGE_X <= min(region.x0, region.x1) and max(region.x0, region.x1) <= STAGE_X
                    and -STAGE_Y <= min(region.y0, region.y1) and max(region.y0, region.y1) <= STAGE_Y):
                report(region.color, "region-bounds", f"region of color '{region.color}' leaves the stage")

        sprite_names = set()
        for sprite in spec.sprites:
            identifier(sprite.name, "sprite", sprite.name)
            for costume in sprite.costumes:
                identifier(sprite.name, "costume", costume.id)
            if sprite.name in sprite_names:
                report(sprite.name, "duplicate-sprite", f"sprite '{sprite.name}' declared twice")
            if sprite.name == MYSELF:
                report(sprite.name, "reserved-name", f"'{MYSELF}' is reserved")
            sprite_names.add(sprite.name)
            if not (-STAGE_X <= sprite.init_x <= STAGE_X and -STAGE_Y <= sprite.init_y <= STAGE_Y):
                report(sprite.name, "sprite-bounds", f"sprite '{sprite.name}' starts outside the stage")
            if not -180 <= sprite.init_direction <= 180:
                report(sprite.name, "direction-range", f"sprite '{sprite.name}' direction outside [-180, 180]")
            if sprite.init_size < 0:
                report(sprite.name, "size-range", f"sprite '{sprite.name}' has negative size")
            if not sprite.costumes:
                report(sprite.name, "costumes", f"sprite '{sprite.name}' has no costume")

        seen_ids = set()
        for sprite, script in spec.iter_scripts():
            ids = [script.id] + [block.id for block in script.iter_blocks()]
            for statement_id in ids:
                identifier(statement_id, "block id", statement_id)
                if statement_id == ENTRY_ID:
                    report(statement_id, "reserved-name", f"'{ENTRY_ID}' is reserved")
                if statement_id in seen_ids:
                    report(statement_id, "duplicate-id", f"block id '{statement_id}' is not unique")
                seen_ids.add(statement_id)
            if not script.body:
                report(script.id, "empty-script", "script body must not be empty")
            for label, value in (("key", script.key), ("message", script.message)):
                if value:
                    identifier(script.id, label, value)
            if script.hat == HatKind.KEY_PRESSED and not script.key:
                report(script.id, "hat-key", "keyPressed hat needs a key")
            if script.hat == HatKind.BROADCAST_RECEIVED and not script.message:
                report(script.id, "hat-message", "whenBroadcastReceived hat needs a message")
            if script.hat == HatKind.START_AS_CLONE and not sprite.clonable:
                report(script.id, "clone-hat", f"whenIStartAsClone on non-clonable sprite '{sprite.name}'")
            for block in script.iter_blocks():
                self._validate_block(spec, sprite, block, variable_names, sprite_names, colors, report)

        for statement_id in spec.win_statements:
            if statement_id not in seen_ids:
                report(statement_id, "unresolved-win", f"win statement '{statement_id}' does not exist")
        return issues

    def _validate_block(self, spec: GameSpec, sprite: SpriteSpec, block: Block, variables, sprites, colors, report) -> None:
        arg_kinds, body_count = BLOCK_SIGNATURES[block.opcode]
        if len(block.args) != len(arg_kinds):
            report(block.id, "arity", f"{block.opcode.value} takes {len(arg_kinds)} argument(s)")
            return
        if len(block.bodies) != body_count:
            report(block.id, "bodies", f"{block.opcode.value} needs {body_count} bod(ies)")
        for kind, arg in zip(arg_kinds, block.args):
            if kind == NAME:
                if arg.op != "name":
                    report(block.id, "type", f"{block.opcode.value} expects an identifier")
                    continue
                name = arg.value
                if block.opcode in (Opcode.SET_VAR, Opcode.CHANGE_VAR) and name not in variables:
                    report(block.id, "unresolved-variable", f"unknown variable '{name}'")
                elif block.opcode == Opcode.SWITCH_COSTUME and name not in {c.id for c in sprite.costumes}:
                    report(block.id, "unresolved-costume", f"unknown costume '{name}'")
                elif block.opcode == Opcode.CREATE_CLONE:
                    target = sprite if name == MYSELF else spec.sprite(name)
                    if target is None:
                        report(block.id, "unresolved-sprite", f"unknown sprite '{name}'")
                    elif not target.clonable:
                        report(block.id, "clone-target", f"sprite '{target.name}' is not clonable")
                continue
            found = self._check_expr(arg, sprite, spec, variables, sprites, colors, block.id, report)
            if found is None:
                continue
            if kind == BOOL and found != BOOL:
                report(block.id, "type", f"{block.opcode.value} expects a boolean condition")
            elif kind == NUM and found not in (NUM, ANY):
                report(block.id, "type", f"{block.opcode.value} expects a number")

    def _check_expr(self, expr: Expr, sprite: SpriteSpec, spec: GameSpec, variables, sprites, colors,
                    block_id: str, report) -> Optional[ValueType]:
        """Infer the expression type, reporting problems; None when ill-typed"""
        if expr.op == "num":
            return NUM
        if expr.op == "text":
            return TEXT
        if expr.op == "name":
            report(block_id, "type", f"bare identifier '{expr.value}' is not a value")
            return None
        signature = EXPR_SIGNATURES.get(expr.op)
        if signature is None:
            report(block_id, "operator", f"unknown operator '{expr.op}'")
            return None
        arg_kinds, result = signature
        if len(expr.args) != len(arg_kinds):
            report(block_id, "arity", f"operator '{expr.op}' takes {len(arg_kinds)} argument(s)")
            return None
        ok = True
        for index, (kind, arg) in enumerate(zip(arg_kinds, expr.args)):
            if kind == NAME:
                if arg.op != "name":
                    report(block_id, "type", f"operator '{expr.op}' expects an identifier")
                    ok = False
                    continue
                name = arg.value
                if expr.op == "var" and name not in variables:
                    report(block_id, "unresolved-variable", f"unknown variable '{name}'")
                    ok = False
                elif expr.op in ("touching", "distanceTo") and name not in sprites:
                    report(block_id, "unresolved-sprite", f"unknown sprite '{name}'")
                    ok = False
                elif expr.op == "of":
                    if index == 0 and name not in sprites:
                        report(block_id, "unresolved-sprite", f"unknown sprite '{name}'")
                        ok = False
                    if index == 1 and name not in SPRITE_ATTRIBUTES:
                        report(block_id, "attribute", f"unknown sprite attribute '{name}'")
                        ok = False
                elif expr.op == "touchingColor" and name not in colors:
                    report(block_id, "unresolved-color", f"unknown color '{name}'")
                    ok = False
                continue
            found = self._check_expr(arg, sprite, spec, variables, sprites, colors, block_id, report)
            if found is None:
                ok = False
            elif kind == BOOL and found != BOOL:
                report(block_id, "type", f"operator '{expr.op}' expects boolean operands")
                ok = False
            elif kind == NUM and found not in (NUM, ANY):
                report(block_id, "type", f"operator '{expr.op}' expects numeric operands")
                ok = False
            elif kind == VALUE and found == BOOL:
                report(block_id, "type", f"operator '{expr.op}' cannot compare booleans")
                ok = False
        return result if ok else None

    # -------------------------------------------------------------- serialize

    def serialize_game(self, spec: GameSpec) -> str:
        """
        Canonical DSL text: sorted keys, two-space indentation, shortest numbers
        """
        out: List[str] = [f"game name={spec.name}"]
        for variable in spec.variables:
            out.append(
                f"variable init={format_number(variable.init)} max={format_number(variable.max)} "
                f"min={format_number(variable.min)} name={variable.name}"
            )
        for region in spec.stage.color_regions:
            out.append(
                f"region color={region.color} x0={format_number(region.x0)} x1={format_number(region.x1)} "
                f"y0={format_number(region.y0)} y1={format_number(region.y1)}"
            )
        for statement_id in spec.win_statements:
            out.append(f"win {statement_id}")
        for sprite in spec.sprites:
            out.append(
                f"sprite clonable={'true' if sprite.clonable else 'false'} "
                f"direction={format_number(sprite.init_direction)} name={sprite.name} "
                f"rotation={sprite.rotation_style.value} size={format_number(sprite.init_size)} "
                f"x={format_number(sprite.init_x)} y={format_number(sprite.init_y)}"
            )
            for costume in sprite.costumes:
                out.append(f"{INDENT}costume id={costume.id} radius={format_number(costume.radius)}")
            for script in sprite.scripts:
                header = f"{INDENT}script hat={script.hat.value} id={script.id}"
                if script.key is not None:
                    header += f" key={script.key}"
                if script.message is not None:
                    header += f" message={script.message}"
                out.append(header)
                self._serialize_body(script.body, 2, out)
        return "\n".join(out) + "\n"

    def _serialize_body(self, body: List[Block], depth: int, out: List[str]) -> None:
        for block in body:
            parts = [block.id, block.opcode.value] + [self.format_expr(arg) for arg in block.args]
            out.append(INDENT * depth + " ".join(parts))
            for index, inner in enumerate(block.bodies):
                if index == 1:
                    out.append(INDENT * depth + "else")
                self._serialize_body(inner, depth + 1, out)

    def format_expr(self, expr: Expr) -> str:
        if expr.op == "num":
            return format_number(expr.value)
        if expr.op == "text":
            return _quote(str(expr.value))
        if expr.op == "name":
            return str(expr.value)
        return "(" + " ".join([expr.op] + [self.format_expr(arg) for arg in expr.args]) + ")"

    def write_game(self, spec: GameSpec, path: str) -> str:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.serialize_game(spec), encoding="utf-8")
        return path

    def report_jsonl(self, issues: List[ValidationIssue]) -> str:
        return "".join(
            json.dumps({"block_id": issue.block_id, "rule": issue.rule, "message": issue.message}) + "\n"
            for issue in issues
        )

    # ---------------------------------------------------------------- queries

    def keys_mentioned(self, spec: GameSpec) -> List[str]:
        keys: List[str] = []
        for _, script in spec.iter_scripts():
            if script.hat == HatKind.KEY_PRESSED and script.key and script.key not in keys:
                keys.append(script.key)
            for block in script.iter_blocks():
                for _, expr in iter_block_exprs(block):
                    if expr.op == "keyDown" and expr.args and expr.args[0].value not in keys:
                        keys.append(str(expr.args[0].value))
        return keys


def iter_block_exprs(block: Block) -> Iterator[Tuple[Tuple[int, ...], Expr]]:
    """Every expression node of a block's own arguments, with its path"""
    for index, arg in enumerate(block.args):
        yield from arg.walk((index,))


game_spec_service = GameSpecService()
