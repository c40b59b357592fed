import hashlib
import json
import logging
import math
from typing import Dict, List, Optional, Union

from ..core.exceptions import InvalidRangeError, UnknownColorError, UnknownSpriteError
from ..models.vm_state import (
    MAX_CLONES,
    STEPS_PER_SECOND,
    Frame,
    SpriteInstance,
    StepResult,
    Thread,
    Value,
    VmDiagnostic,
    VmState,
)
from ..schemas.episode import EventKind, InputEvent
from ..schemas.game import STAGE_X, STAGE_Y, Block, Expr, GameSpec, HatKind, Opcode, Script
from .game_spec_service import MYSELF, format_number
from .pcg import Pcg32

logger = logging.getLogger(__name__)

RAY_CAP = 600.0
RAY_DIRECTIONS = (0, 90, 180, -90)


class VmFault(Exception):
    """Runtime error inside one thread; stops that thread only"""


def normalize_direction(direction: float) -> float:
    """Map any angle onto (-180, 180]"""
    wrapped = math.fmod(direction + 180.0, 360.0)
    if wrapped <= 0:
        wrapped += 360.0
    return wrapped - 180.0


def to_number(value: Union[Value, bool]) -> float:
    if isinstance(value, bool):
        raise VmFault("arithmetic on boolean")
    if isinstance(value, (int, float)):
        return float(value)
    try:
        return float(str(value).strip())
    except ValueError:
        raise VmFault(f"arithmetic on text '{value}'")


def to_text(value: Union[Value, bool]) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return format_number(value)
    return str(value)


def _is_numeric(value: Union[Value, bool]) -> bool:
    try:
        to_number(value)
        return True
    except VmFault:
        return False


class GameVmService:
    """Deterministic, headless interpreter for GameSpec programs"""

    # ----------------------------------------------------------------- setup

    def init_vm(self, spec: GameSpec, seed: int, trace_path: Optional[str] = None) -> VmState:
        """
        Fresh run: sprites at their initial attributes, greenFlag threads queued
        """
        state = VmState(spec=spec, seed=seed & ((1 << 64) - 1), rng=Pcg32(seed), trace_path=trace_path)
        for sprite in spec.sprites:
            state.sprites.append(SpriteInstance(
                spec=sprite,
                serial=self._next_instance_serial(state),
                x=sprite.init_x,
                y=sprite.init_y,
                size=sprite.init_size,
                direction=normalize_direction(sprite.init_direction),
            ))
        for variable in spec.variables:
            state.variables[variable.name] = float(variable.init)
        for instance in list(state.sprites):
            self._start_hats(state, instance, HatKind.GREEN_FLAG, ready_at=0)
        if trace_path:
            open(trace_path, "w").close()
        return state

    def _next_instance_serial(self, state: VmState) -> int:
        state.next_instance_serial += 1
        return state.next_instance_serial

    def _start_hats(self, state: VmState, instance: SpriteInstance, hat: HatKind, ready_at: int,
                    key: Optional[str] = None, message: Optional[str] = None, restart: bool = False) -> None:
        for index, script in enumerate(instance.spec.scripts):
            if script.hat != hat:
                continue
            if hat == HatKind.KEY_PRESSED and script.key != key:
                continue
            if hat == HatKind.BROADCAST_RECEIVED and script.message != message:
                continue
            running = next(
                (t for t in state.threads if not t.done and t.instance is instance and t.script is script), None
            )
            if running is not None:
                if not restart:
                    continue
                running.done = True
            state.next_serial += 1
            state.threads.append(Thread(
                serial=state.next_serial,
                instance=instance,
                script=script,
                script_index=index,
                ready_at=ready_at,
                frames=[Frame(body=script.body)],
            ))

    # ---------------------------------------------------------------- events

    def apply_event(self, state: VmState, event: InputEvent) -> VmState:
        """
        Inject one input event; matching hats get threads that run from the next step on
        """
        if state.halted:
            return state
        ready = state.step_index
        live = state.live_sprites()
        if event.kind == EventKind.KEY_PRESS:
            key = event.target or ""
            state.keys_down[key] = max(state.keys_down.get(key, 0), event.duration_steps)
            for instance in live:
                self._start_hats(state, instance, HatKind.KEY_PRESSED, ready, key=key)
        elif event.kind == EventKind.CLICK_SPRITE:
            self._require_sprite(state, event.target)
            instance = next((s for s in state.instances_of(event.target) if s.visible), None)
            if instance is not None:
                self._start_hats(state, instance, HatKind.CLICK_SPRITE, ready)
        elif event.kind == EventKind.CLICK_STAGE:
            for instance in live:
                self._start_hats(state, instance, HatKind.CLICK_STAGE, ready)
        elif event.kind == EventKind.TYPE_TEXT:
            state.answer = event.text or ""
            state.ask_pending = False
            for thread in state.threads:
                thread.waiting_answer = False
            for instance in live:
                self._start_hats(state, instance, HatKind.ANSWER_RECEIVED, ready)
        elif event.kind == EventKind.MOUSE_MOVE:
            state.mouse_x = min(max(event.x or 0.0, -STAGE_X), STAGE_X)
            state.mouse_y = min(max(event.y or 0.0, -STAGE_Y), STAGE_Y)
        elif event.kind == EventKind.MOUSE_MOVE_TO:
            self._require_sprite(state, event.target)
            instances = state.instances_of(event.target)
            instance = next((s for s in instances if s.visible), instances[0] if instances else None)
            if instance is not None:
                state.mouse_x, state.mouse_y = instance.x, instance.y
        elif event.kind == EventKind.MOUSE_DOWN:
            state.mouse_down_steps = max(state.mouse_down_steps, event.duration_steps)
        return state

    def _require_sprite(self, state: VmState, name: Optional[str]) -> None:
        if name is None or state.spec.sprite(name) is None:
            raise UnknownSpriteError(f"unknown sprite '{name}'")

    # ------------------------------------------------------------------ step

    def step(self, state: VmState) -> StepResult:
        """
        One scheduling quantum: every ready thread runs until it yields or ends
        """
        if state.halted:
            return StepResult(state=state, newly_covered=[], halted=True)
        current = state.step_index
        newly: List[str] = []
        executed: List[tuple] = []
        position = {id(instance): i for i, instance in enumerate(state.sprites)}
        runnable = sorted(
            (t for t in state.threads if not t.done and t.ready_at <= current),
            key=lambda t: (position.get(id(t.instance), len(position)), t.script_index, t.serial),
        )
        for thread in runnable:
            if state.halted:
                break
            if thread.done or thread.instance.deleted:
                continue
            self._run_thread(state, thread, current, newly, executed)

        for instance in state.sprites:
            instance.x = min(max(instance.x, -STAGE_X), STAGE_X)
            instance.y = min(max(instance.y, -STAGE_Y), STAGE_Y)
        state.keys_down = {k: n - 1 for k, n in state.keys_down.items() if n > 1}
        state.mouse_down_steps = max(0, state.mouse_down_steps - 1)
        state.sprites = [s for s in state.sprites if not s.deleted]
        state.threads = [t for t in state.threads if not t.done and not t.instance.deleted]
        state.step_index += 1
        if state.trace_path:
            self._write_trace(state, current, executed)
        return StepResult(state=state, newly_covered=newly, halted=state.halted)

    def covered_blocks(self, state: VmState) -> set:
        return set(state.covered)

    def _cover(self, state: VmState, block_id: str, newly: List[str]) -> None:
        if block_id not in state.covered:
            state.covered.add(block_id)
            newly.append(block_id)

    def _outcome(self, state: VmState, block_id: str, outcome: str) -> None:
        state.outcomes.setdefault(block_id, set()).add(outcome)

    def _run_thread(self, state: VmState, thread: Thread, current: int, newly: List[str], executed: List[tuple]) -> None:
        if thread.wait_steps > 0:
            thread.wait_steps -= 1
            if thread.wait_steps > 0:
                return
        if thread.waiting_answer:
            return
        if not thread.started:
            thread.started = True
            self._cover(state, thread.script.id, newly)
            executed.append((thread.serial, thread.script.id))
        block: Optional[Block] = None
        try:
            while thread.frames and not thread.done and not state.halted:
                frame = thread.frames[-1]
                if frame.iteration_done:
                    frame.iteration_done = False
                    block = frame.loop
                    if not self._continue_loop(state, thread, frame):
                        thread.frames.pop()
                        continue
                    frame.pc = 0
                if frame.pc >= len(frame.body):
                    if frame.loop is not None:
                        frame.iteration_done = True
                        return
                    thread.frames.pop()
                    continue
                block = frame.body[frame.pc]
                frame.pc += 1
                yielded = self._execute(state, thread, block, current, newly)
                executed.append((thread.serial, block.id))
                if yielded:
                    return
        except VmFault as fault:
            thread.done = True
            block_id = block.id if block is not None else thread.script.id
            state.diagnostics.append(VmDiagnostic(step=current, block_id=block_id, message=str(fault)))
            if block_id not in state.warned_blocks:
                state.warned_blocks.add(block_id)
                logger.warning(f"Thread fault at block {block_id} (step {current}): {fault}")
            return
        if not thread.frames:
            thread.done = True

    def _continue_loop(self, state: VmState, thread: Thread, frame: Frame) -> bool:
        loop = frame.loop
        if loop.opcode == Opcode.REPEAT:
            frame.remaining -= 1
            proceed = frame.remaining > 0
        elif loop.opcode == Opcode.REPEAT_UNTIL:
            proceed = not self._condition(state, thread.instance, loop.args[0], state.rng)
        else:
            proceed = True
        self._outcome(state, loop.id, "body" if proceed else "exit")
        return proceed

    def _execute(self, state: VmState, thread: Thread, block: Block, current: int, newly: List[str]) -> bool:
        """Apply one block; returns True when the thread yields"""
        instance = thread.instance
        rng = state.rng
        op = block.opcode
        args = block.args

        if op == Opcode.MOVE:
            distance = self._num(state, instance, args[0], rng)
            radians = math.radians(instance.direction)
            instance.x += distance * math.sin(radians)
            instance.y += distance * math.cos(radians)
        elif op == Opcode.SET_XY:
            x = self._num(state, instance, args[0], rng)
            y = self._num(state, instance, args[1], rng)
            instance.x, instance.y = x, y
        elif op == Opcode.CHANGE_X:
            instance.x += self._num(state, instance, args[0], rng)
        elif op == Opcode.CHANGE_Y:
            instance.y += self._num(state, instance, args[0], rng)
        elif op == Opcode.POINT_DIRECTION:
            instance.direction = normalize_direction(self._num(state, instance, args[0], rng))
        elif op == Opcode.GOTO_RANDOM:
            instance.x = self._rand(rng, -STAGE_X, STAGE_X)
            instance.y = self._rand(rng, -STAGE_Y, STAGE_Y)
        elif op in (Opcode.IF, Opcode.IF_ELSE):
            taken = self._condition(state, instance, args[0], rng)
            self._cover(state, block.id, newly)
            self._outcome(state, block.id, "then" if taken else "else")
            if taken:
                thread.frames.append(Frame(body=block.bodies[0]))
            elif op == Opcode.IF_ELSE:
                thread.frames.append(Frame(body=block.bodies[1]))
            return False
        elif op == Opcode.REPEAT:
            times = int(math.floor(self._num(state, instance, args[0], rng) + 0.5))
            self._cover(state, block.id, newly)
            self._outcome(state, block.id, "body" if times > 0 else "exit")
            if times > 0:
                thread.frames.append(Frame(body=block.bodies[0], loop=block, remaining=times))
            return False
        elif op == Opcode.REPEAT_UNTIL:
            done = self._condition(state, instance, args[0], rng)
            self._cover(state, block.id, newly)
            self._outcome(state, block.id, "exit" if done else "body")
            if not done:
                thread.frames.append(Frame(body=block.bodies[0], loop=block))
            return False
        elif op == Opcode.FOREVER:
            self._cover(state, block.id, newly)
            self._outcome(state, block.id, "body")
            thread.frames.append(Frame(body=block.bodies[0], loop=block))
            return False
        elif op == Opcode.WAIT:
            seconds = self._num(state, instance, args[0], rng)
            self._cover(state, block.id, newly)
            steps = math.ceil(STEPS_PER_SECOND * seconds)
            if steps > 0:
                thread.wait_steps = steps
                return True
            return False
        elif op == Opcode.STOP_ALL:
            self._cover(state, block.id, newly)
            state.halted = True
            return True
        elif op == Opcode.STOP_SCRIPT:
            self._cover(state, block.id, newly)
            thread.frames.clear()
            thread.done = True
            return True
        elif op == Opcode.SET_VAR:
            value = self._eval(state, instance, args[1], rng)
            state.variables[args[0].value] = value if isinstance(value, str) else to_number(value)
        elif op == Opcode.CHANGE_VAR:
            name = args[0].value
            delta = self._num(state, instance, args[1], rng)
            state.variables[name] = to_number(state.variables.get(name, 0.0)) + delta
        elif op == Opcode.SWITCH_COSTUME:
            ids = [c.id for c in instance.spec.costumes]
            instance.costume_index = ids.index(args[0].value)
        elif op == Opcode.HIDE:
            instance.visible = False
        elif op == Opcode.SHOW:
            instance.visible = True
        elif op == Opcode.SET_SIZE:
            instance.size = max(0.0, self._num(state, instance, args[0], rng))
        elif op == Opcode.SAY:
            instance.saying = to_text(self._eval(state, instance, args[0], rng))
        elif op == Opcode.BROADCAST:
            self._cover(state, block.id, newly)
            for receiver in state.live_sprites():
                self._start_hats(state, receiver, HatKind.BROADCAST_RECEIVED, current + 1,
                                 message=args[0].value, restart=True)
            return False
        elif op == Opcode.ASK:
            instance.saying = to_text(self._eval(state, instance, args[0], rng))
            self._cover(state, block.id, newly)
            state.ask_pending = True
            thread.waiting_answer = True
            return True
        elif op == Opcode.CREATE_CLONE:
            self._cover(state, block.id, newly)
            name = args[0].value
            source = instance if name == MYSELF else state.original(name)
            clones = sum(1 for s in state.sprites if s.is_clone and not s.deleted)
            if source is not None and clones < MAX_CLONES:
                clone = SpriteInstance(
                    spec=source.spec,
                    serial=self._next_instance_serial(state),
                    is_clone=True,
                    x=source.x,
                    y=source.y,
                    size=source.size,
                    direction=source.direction,
                    costume_index=source.costume_index,
                    visible=source.visible,
                )
                state.sprites.append(clone)
                self._start_hats(state, clone, HatKind.START_AS_CLONE, current + 1)
            return False
        elif op == Opcode.DELETE_CLONE:
            self._cover(state, block.id, newly)
            if instance.is_clone:
                instance.deleted = True
                for other in state.threads:
                    if other.instance is instance:
                        other.done = True
                return True
            return False
        self._cover(state, block.id, newly)
        return False

    # ------------------------------------------------------------ expressions

    def _rand(self, rng: Pcg32, lo: float, hi: float) -> float:
        if lo > hi:
            lo, hi = hi, lo
        if float(lo).is_integer() and float(hi).is_integer():
            return float(rng.randint(int(lo), int(hi)))
        return lo + rng.random_float() * (hi - lo)

    def rand_in_range(self, state: VmState, lo: float, hi: float) -> float:
        """
        Draw from the shared stream: integer when both bounds are integral
        """
        if lo > hi:
            raise InvalidRangeError(f"empty range [{lo}, {hi}]")
        return self._rand(state.rng, lo, hi)

    def _num(self, state: VmState, instance: SpriteInstance, expr: Expr, rng: Pcg32) -> float:
        return to_number(self._eval(state, instance, expr, rng))

    def _condition(self, state: VmState, instance: SpriteInstance, expr: Expr, rng: Pcg32) -> bool:
        return bool(self._eval(state, instance, expr, rng))

    def evaluate(self, state: VmState, instance: SpriteInstance, expr: Expr, rng: Optional[Pcg32] = None):
        """Evaluate without touching the run's RNG unless it is passed explicitly"""
        return self._eval(state, instance, expr, rng if rng is not None else state.rng.copy())

    def _eval(self, state: VmState, instance: SpriteInstance, expr: Expr, rng: Pcg32):
        op = expr.op
        if op == "num":
            return float(expr.value)
        if op == "text":
            return str(expr.value)
        if op == "name":
            return str(expr.value)
        args = expr.args
        if op == "var":
            return state.variables.get(args[0].value, 0.0)
        if op == "x":
            return instance.x
        if op == "y":
            return instance.y
        if op == "direction":
            return instance.direction
        if op == "size":
            return instance.size
        if op == "costume":
            return float(instance.costume_index + 1)
        if op == "of":
            other = state.original(args[0].value)
            if other is None:
                raise VmFault(f"unknown sprite '{args[0].value}'")
            attribute = args[1].value
            return float(other.costume_index + 1) if attribute == "costume" else getattr(other, attribute)
        if op in ("+", "-", "*", "/", "mod"):
            a = self._num(state, instance, args[0], rng)
            b = self._num(state, instance, args[1], rng)
            if op == "+":
                return a + b
            if op == "-":
                return a - b
            if op == "*":
                return a * b
            if b == 0:
                raise VmFault("division by zero" if op == "/" else "modulo by zero")
            return a / b if op == "/" else math.fmod(math.fmod(a, b) + b, b)
        if op in ("<", ">"):
            a = self._num(state, instance, args[0], rng)
            b = self._num(state, instance, args[1], rng)
            return a < b if op == "<" else a > b
        if op == "=":
            a = self._eval(state, instance, args[0], rng)
            b = self._eval(state, instance, args[1], rng)
            if _is_numeric(a) and _is_numeric(b):
                return to_number(a) == to_number(b)
            return to_text(a).lower() == to_text(b).lower()
        if op == "and":
            left = self._condition(state, instance, args[0], rng)
            right = self._condition(state, instance, args[1], rng)
            return left and right
        if op == "or":
            left = self._condition(state, instance, args[0], rng)
            right = self._condition(state, instance, args[1], rng)
            return left or right
        if op == "not":
            return not self._condition(state, instance, args[0], rng)
        if op == "randomInRange":
            lo = self._num(state, instance, args[0], rng)
            hi = self._num(state, instance, args[1], rng)
            return self._rand(rng, lo, hi)
        if op == "touching":
            distance = self.sprite_gap(state, instance, args[0].value)
            return distance is not None and distance <= 0
        if op == "touchingEdge":
            return instance.visible and self.edge_gap(instance) <= 0
        if op == "touchingColor":
            gap = self.color_gap(state, instance, args[0].value)
            return instance.visible and gap is not None and gap <= 0
        if op == "touchingMouse":
            return instance.visible and self.mouse_gap(state, instance) <= 0
        if op == "distanceTo":
            other = state.original(args[0].value)
            if other is None:
                raise VmFault(f"unknown sprite '{args[0].value}'")
            return math.hypot(instance.x - other.x, instance.y - other.y)
        if op == "keyDown":
            return args[0].value in state.keys_down
        if op == "mouseX":
            return state.mouse_x
        if op == "mouseY":
            return state.mouse_y
        if op == "mouseDown":
            return state.mouse_down
        if op == "answer":
            return state.answer
        raise VmFault(f"unknown operator '{op}'")

    # --------------------------------------------------------------- geometry

    def instance_gap(self, a: SpriteInstance, b: SpriteInstance) -> float:
        """Center distance minus the sum of effective radii; <= 0 means touching"""
        return math.hypot(a.x - b.x, a.y - b.y) - (a.radius + b.radius)

    def sprite_gap(self, state: VmState, instance: SpriteInstance, name: str) -> Optional[float]:
        """Smallest gap to any other visible instance of `name`; None if nothing can be touched"""
        if not instance.visible:
            return None
        gaps = [
            self.instance_gap(instance, other)
            for other in state.instances_of(name)
            if other is not instance and other.visible
        ]
        return min(gaps) if gaps else None

    def edge_gap(self, instance: SpriteInstance) -> float:
        return min(STAGE_X - abs(instance.x), STAGE_Y - abs(instance.y)) - instance.radius

    def mouse_gap(self, state: VmState, instance: SpriteInstance) -> float:
        return math.hypot(instance.x - state.mouse_x, instance.y - state.mouse_y) - instance.radius

    def color_gap(self, state: VmState, instance: SpriteInstance, color: str) -> Optional[float]:
        gaps = []
        for region in state.spec.stage.color_regions:
            if region.color != color:
                continue
            x0, x1 = sorted((region.x0, region.x1))
            y0, y1 = sorted((region.y0, region.y1))
            dx = max(x0 - instance.x, 0.0, instance.x - x1)
            dy = max(y0 - instance.y, 0.0, instance.y - y1)
            gaps.append(math.hypot(dx, dy) - instance.radius)
        return min(gaps) if gaps else None

    def touching_distance(self, state: VmState, a: str, b: str) -> float:
        """
        Signed pixel gap between the first instances of two sprites
        """
        first = self._first_instance(state, a)
        second = self._first_instance(state, b)
        return self.instance_gap(first, second)

    def _first_instance(self, state: VmState, name: str) -> SpriteInstance:
        instances = state.instances_of(name)
        if not instances:
            raise UnknownSpriteError(f"unknown sprite '{name}'")
        return instances[0]

    def color_rangefinder(self, state: VmState, sprite: str, color: str, relative_direction: float) -> float:
        """
        Distance along the sprite's heading plus `relative_direction` to the nearest
        region of `color`, capped at 600
        """
        return self.instance_rangefinder(state, self._first_instance(state, sprite), color, relative_direction)

    def instance_rangefinder(self, state: VmState, instance: SpriteInstance, color: str, relative_direction: float) -> float:
        regions = [r for r in state.spec.stage.color_regions if r.color == color]
        if not regions:
            raise UnknownColorError(f"unknown color '{color}'")
        radians = math.radians(instance.direction + relative_direction)
        dx, dy = math.sin(radians), math.cos(radians)
        best = RAY_CAP
        for region in regions:
            hit = self._ray_box(instance.x, instance.y, dx, dy, region)
            if hit is not None:
                best = min(best, hit)
        return best

    def _ray_box(self, x: float, y: float, dx: float, dy: float, region) -> Optional[float]:
        x0, x1 = sorted((region.x0, region.x1))
        y0, y1 = sorted((region.y0, region.y1))
        if x0 <= x <= x1 and y0 <= y <= y1:
            return 0.0
        t_enter, t_exit = -math.inf, math.inf
        for origin, delta, lo, hi in ((x, dx, x0, x1), (y, dy, y0, y1)):
            if abs(delta) < 1e-12:
                if origin < lo or origin > hi:
                    return None
                continue
            t1, t2 = (lo - origin) / delta, (hi - origin) / delta
            t_enter = max(t_enter, min(t1, t2))
            t_exit = min(t_exit, max(t1, t2))
        if t_exit < t_enter or t_exit < 0:
            return None
        return max(t_enter, 0.0)

    # ----------------------------------------------------------- determinism

    def snapshot(self, state: VmState) -> Dict:
        return {
            "step": state.step_index,
            "halted": state.halted,
            "rng": state.rng.get_state(),
            "sprites": [
                [s.name, s.serial, s.is_clone, round(s.x, 9), round(s.y, 9), round(s.size, 9),
                 round(s.direction, 9), s.costume_index, s.visible]
                for s in state.sprites
            ],
            "variables": {k: v for k, v in sorted(state.variables.items())},
            "covered": sorted(state.covered),
            "threads": [
                [t.serial, t.instance.serial, t.script.id, [f.pc for f in t.frames], t.wait_steps, t.waiting_answer]
                for t in state.threads
            ],
            "keys": sorted(state.keys_down.items()),
            "mouse": [state.mouse_x, state.mouse_y, state.mouse_down_steps],
            "answer": state.answer,
        }

    def state_hash(self, state: VmState) -> str:
        canonical = json.dumps(self.snapshot(state), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def _write_trace(self, state: VmState, step: int, executed: List[tuple]) -> None:
        digest = self.state_hash(state)
        with open(state.trace_path, "a", encoding="utf-8") as handle:
            for thread_serial, block_id in executed:
                handle.write(json.dumps({"step": step, "thread": thread_serial, "block": block_id, "hash": digest}) + "\n")
            if not executed:
                handle.write(json.dumps({"step": step, "thread": None, "block": None, "hash": digest}) + "\n")

    def run_until(self, state: VmState, max_steps: int) -> VmState:
        """Step without input until halted or `max_steps` steps were executed"""
        while state.step_index < max_steps and not state.halted:
            self.step(state)
        return state


game_vm_service = GameVmService()
