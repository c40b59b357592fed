import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Set

import numpy as np

from ..core.exceptions import UnknownSpriteError
from ..models.vm_state import SpriteInstance, VmState
from ..schemas.episode import (
    Diagnostic,
    EpisodeResult,
    EventKind,
    EventSpec,
    Feature,
    FeatureVector,
    InputEvent,
    ParamSpec,
    StaticTest,
)
from ..schemas.game import STAGE_X, STAGE_Y, GameSpec, HatKind, Opcode, RotationStyle
from ..schemas.neat import VARIABLES_GROUP, Genome
from .game_spec_service import iter_block_exprs
from .game_vm_service import RAY_CAP, RAY_DIRECTIONS, VmFault, game_vm_service, to_number
from .neat_service import InnovationRegistry
from .network_service import network_service

logger = logging.getLogger(__name__)

MAX_DURATION = 30
TYPE_TEXT_RANGE = (0.0, 100.0)

StepObserver = Callable[[VmState], None]


def _duration() -> ParamSpec:
    return ParamSpec(name="duration_steps", lo=1, hi=MAX_DURATION, rounding="ceil")


@dataclass
class SpritePlan:
    """What a sprite's own code senses, which decides its feature set"""
    rotates: bool = False
    switches_costume: bool = False
    sensed_sprites: List[str] = field(default_factory=list)
    sensed_colors: List[str] = field(default_factory=list)
    keys: List[str] = field(default_factory=list)
    clickable: bool = False
    stage_click: bool = False
    mouse_position: bool = False
    mouse_button: bool = False
    hosts_touching_mouse: bool = False


@dataclass
class FeaturePlan:
    sprites: Dict[str, SpritePlan]
    keys: List[str]


class PlayService:
    """Episode driver: features, event inventory, network-in-the-loop play and replay"""

    def plan(self, spec: GameSpec) -> FeaturePlan:
        sprites: Dict[str, SpritePlan] = {}
        keys: List[str] = []
        for sprite in spec.sprites:
            plan = SpritePlan(rotates=sprite.rotation_style == RotationStyle.ALL_AROUND)
            for script in sprite.scripts:
                if script.hat == HatKind.KEY_PRESSED and script.key not in plan.keys:
                    plan.keys.append(script.key)
                plan.clickable |= script.hat == HatKind.CLICK_SPRITE
                plan.stage_click |= script.hat == HatKind.CLICK_STAGE
                for block in script.iter_blocks():
                    plan.switches_costume |= block.opcode == Opcode.SWITCH_COSTUME
                    for _, expr in iter_block_exprs(block):
                        if expr.op in ("touching", "distanceTo") and expr.args[0].value not in plan.sensed_sprites:
                            plan.sensed_sprites.append(expr.args[0].value)
                        elif expr.op == "touchingColor" and expr.args[0].value not in plan.sensed_colors:
                            plan.sensed_colors.append(expr.args[0].value)
                        elif expr.op == "keyDown" and expr.args[0].value not in plan.keys:
                            plan.keys.append(expr.args[0].value)
                        elif expr.op in ("mouseX", "mouseY"):
                            plan.mouse_position = True
                        elif expr.op == "touchingMouse":
                            plan.mouse_position = True
                            plan.hosts_touching_mouse = True
                        elif expr.op == "mouseDown":
                            plan.mouse_button = True
            sprites[sprite.name] = plan
            keys.extend(k for k in plan.keys if k not in keys)
        return FeaturePlan(sprites=sprites, keys=keys)

    # ---------------------------------------------------------------- features

    def group_names(self, state: VmState) -> Dict[int, str]:
        """Instance serial -> feature group; clones are `<Sprite>#<k>` by live ordinal"""
        names: Dict[int, str] = {}
        ordinals: Dict[str, int] = {}
        for instance in state.live_sprites():
            if instance.is_clone:
                ordinals[instance.name] = ordinals.get(instance.name, 0) + 1
                names[instance.serial] = f"{instance.name}#{ordinals[instance.name]}"
            else:
                names[instance.serial] = instance.name
        return names

    def extract_features(self, state: VmState, spec: GameSpec, plan: Optional[FeaturePlan] = None) -> FeatureVector:
        """
        Per visible sprite instance: position, size and the attributes its code
        makes relevant; then every variable normalized by its declared range
        """
        plan = plan or self.plan(spec)
        names = self.group_names(state)
        features: List[Feature] = []

        def emit(group: str, name: str, value: float) -> None:
            features.append(Feature(group=group, name=name, value=float(np.clip(value, -1.0, 1.0))))

        for instance in state.live_sprites():
            if not instance.visible:
                continue
            group = names[instance.serial]
            sprite_plan = plan.sprites[instance.name]
            emit(group, "x", instance.x / STAGE_X)
            emit(group, "y", instance.y / STAGE_Y)
            emit(group, "size", instance.size / 100.0 - 1.0)
            if sprite_plan.rotates:
                emit(group, "direction", instance.direction / 180.0)
            if sprite_plan.switches_costume:
                emit(group, "costume", instance.costume_index / len(instance.spec.costumes))
            for sensed in sprite_plan.sensed_sprites:
                other = self._nearest(state, instance, sensed)
                if other is not None:
                    emit(group, f"dx:{sensed}", (other.x - instance.x) / RAY_CAP)
                    emit(group, f"dy:{sensed}", (other.y - instance.y) / RAY_CAP)
            for color in sprite_plan.sensed_colors:
                for direction in RAY_DIRECTIONS:
                    distance = game_vm_service.instance_rangefinder(state, instance, color, direction)
                    emit(group, f"ray:{color}:{direction}", distance / RAY_CAP)

        for variable in spec.variables:
            raw = state.variables.get(variable.name, variable.init)
            try:
                value = to_number(raw)
            except VmFault:
                value = variable.init
            span = variable.max - variable.min
            emit(VARIABLES_GROUP, variable.name, 2.0 * (value - variable.min) / span - 1.0)
        return FeatureVector(features=features)

    def _nearest(self, state: VmState, instance: SpriteInstance, name: str) -> Optional[SpriteInstance]:
        candidates = [s for s in state.instances_of(name) if s.visible and s is not instance]
        if not candidates:
            return None
        return min(candidates, key=lambda s: (s.x - instance.x) ** 2 + (s.y - instance.y) ** 2)

    # --------------------------------------------------------------- inventory

    def event_inventory(self, state: VmState, spec: GameSpec, plan: Optional[FeaturePlan] = None) -> List[EventSpec]:
        """
        Events some live script can react to right now; Wait is always available
        """
        plan = plan or self.plan(spec)
        live = state.live_sprites()
        live_names = [name for name in plan.sprites if any(s.name == name for s in live)]
        events: List[EventSpec] = []
        keys: List[str] = []
        for name in live_names:
            keys.extend(k for k in plan.sprites[name].keys if k not in keys)
        events.extend(EventSpec(kind=EventKind.KEY_PRESS, target=k, params=[_duration()]) for k in keys)
        for name in live_names:
            if plan.sprites[name].clickable and any(s.name == name and s.visible for s in live):
                events.append(EventSpec(kind=EventKind.CLICK_SPRITE, target=name))
        if any(plan.sprites[name].stage_click for name in live_names):
            events.append(EventSpec(kind=EventKind.CLICK_STAGE))
        if state.ask_pending:
            events.append(EventSpec(kind=EventKind.TYPE_TEXT, params=[
                ParamSpec(name="value", lo=TYPE_TEXT_RANGE[0], hi=TYPE_TEXT_RANGE[1], rounding="round"),
            ]))
        if any(plan.sprites[name].mouse_position for name in live_names):
            events.append(EventSpec(kind=EventKind.MOUSE_MOVE, params=[
                ParamSpec(name="x", lo=-STAGE_X, hi=STAGE_X),
                ParamSpec(name="y", lo=-STAGE_Y, hi=STAGE_Y),
            ]))
        for name in live_names:
            if plan.sprites[name].hosts_touching_mouse:
                events.append(EventSpec(kind=EventKind.MOUSE_MOVE_TO, target=name))
        if any(plan.sprites[name].mouse_button for name in live_names):
            events.append(EventSpec(kind=EventKind.MOUSE_DOWN, params=[_duration()]))
        events.append(EventSpec(kind=EventKind.WAIT, params=[_duration()]))
        return events

    def make_event(self, spec: EventSpec, params: Dict[str, float], step: int) -> InputEvent:
        event = InputEvent(kind=spec.kind, target=spec.target, issued_at=step)
        if "duration_steps" in params:
            event.duration_steps = max(1, int(params["duration_steps"]))
        if spec.kind == EventKind.MOUSE_MOVE:
            event.x, event.y = params["x"], params["y"]
        if spec.kind == EventKind.TYPE_TEXT:
            event.text = str(int(params["value"]))
        return event

    # ---------------------------------------------------------------- episodes

    def run_episode(self, genome: Genome, spec: GameSpec, seed: int, target: Optional[str], max_steps: int,
                    registry: InnovationRegistry, observer: Optional[StepObserver] = None,
                    record_trace: bool = True) -> EpisodeResult:
        """
        Play one seeded game with the network choosing every input, until the game
        halts, the step budget runs out or the target is covered
        """
        plan = self.plan(spec)
        state = game_vm_service.init_vm(spec, seed)
        rng = np.random.default_rng(seed)
        phenotype = network_service.build_phenotype(genome)
        events: List[InputEvent] = []
        trace: Dict[int, Dict[int, float]] = {}
        changes: List[str] = []

        while not self._finished(state, target, max_steps):
            step = state.step_index
            features = self.extract_features(state, spec, plan)
            available = self.event_inventory(state, spec, plan)
            genome, flags = network_service.adapt_io(genome, features.groups(), available, registry, rng)
            if flags:
                changes.extend(f"{step}:{flag}" for flag in flags)
                phenotype = network_service.build_phenotype(genome)
            activations = network_service.activate(phenotype, features)
            if record_trace:
                trace[step] = {node_id: activations[node_id] for node_id in phenotype.hidden_ids}
            choice, _ = network_service.select_event(phenotype, available)
            event = self.make_event(choice, network_service.regress_params(phenotype, choice), step)
            game_vm_service.apply_event(state, event)
            events.append(event)
            self._advance(state, event, target, max_steps, observer)

        return self._result(state, seed, target, events, trace, changes, genome)

    def run_random_episode(self, spec: GameSpec, seed: int, rng: np.random.Generator, max_steps: int,
                           target: Optional[str] = None) -> EpisodeResult:
        """Uniform choice over the inventory with uniform parameters"""
        plan = self.plan(spec)
        state = game_vm_service.init_vm(spec, seed)
        events: List[InputEvent] = []
        while not self._finished(state, target, max_steps):
            available = self.event_inventory(state, spec, plan)
            choice = available[int(rng.integers(len(available)))]
            params = {
                p.name: network_service.scale(float(rng.uniform(-1.0, 1.0)), p) for p in choice.params
            }
            event = self.make_event(choice, params, state.step_index)
            game_vm_service.apply_event(state, event)
            events.append(event)
            self._advance(state, event, target, max_steps, None)
        return self._result(state, seed, target, events, {}, [], None)

    def _finished(self, state: VmState, target: Optional[str], max_steps: int) -> bool:
        return state.halted or state.step_index >= max_steps or (target is not None and target in state.covered)

    def _advance(self, state: VmState, event: InputEvent, target: Optional[str], max_steps: int,
                 observer: Optional[StepObserver]) -> None:
        steps = event.duration_steps if event.kind == EventKind.WAIT else 1
        for _ in range(steps):
            if self._finished(state, target, max_steps):
                break
            game_vm_service.step(state)
            if observer is not None:
                observer(state)

    def _result(self, state: VmState, seed: int, target: Optional[str], events: List[InputEvent],
                trace: Dict[int, Dict[int, float]], changes: List[str], genome: Optional[Genome]) -> EpisodeResult:
        return EpisodeResult(
            seed=seed,
            coverage=sorted(state.covered),
            event_log=events,
            activation_trace=trace,
            steps_executed=state.step_index,
            target_covered=target is not None and target in state.covered,
            halted=state.halted,
            structural_changes=changes,
            diagnostics=[Diagnostic(step=d.step, block_id=d.block_id, message=d.message) for d in state.diagnostics],
            outcomes={block_id: sorted(outcomes) for block_id, outcomes in state.outcomes.items()},
            genome=genome,
        )

    # ------------------------------------------------------------ static tests

    def extract_static_test(self, result: EpisodeResult, target: Optional[str] = None) -> StaticTest:
        return StaticTest(
            seed=result.seed,
            event_log=[e.model_copy() for e in result.event_log],
            steps=result.steps_executed,
            target=target,
        )

    def replay_static_test(self, test: StaticTest, spec: GameSpec, seed: int,
                           max_steps: Optional[int] = None) -> EpisodeResult:
        """
        Inject the recorded events at their recorded steps, no network involved
        """
        state = game_vm_service.init_vm(spec, seed)
        limit = test.steps if max_steps is None else max_steps
        schedule: Dict[int, List[InputEvent]] = {}
        for event in test.event_log:
            schedule.setdefault(event.issued_at, []).append(event)
        skipped: List[Diagnostic] = []
        while state.step_index < limit and not state.halted:
            for event in schedule.get(state.step_index, []):
                try:
                    game_vm_service.apply_event(state, event)
                except UnknownSpriteError as e:
                    skipped.append(Diagnostic(step=state.step_index, message=f"event skipped: {e}"))
            game_vm_service.step(state)
        result = self._result(state, seed, test.target, list(test.event_log), {}, [], None)
        result.diagnostics.extend(skipped)
        return result

    def coverage_of(self, results: List[EpisodeResult]) -> Set[str]:
        covered: Set[str] = set()
        for result in results:
            covered.update(result.coverage)
        return covered


play_service = PlayService()
