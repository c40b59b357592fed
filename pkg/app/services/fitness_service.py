import logging
import math
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import networkx
import numpy as np

from ..core.exceptions import FitnessError
from ..models.vm_state import SpriteInstance, VmState
from ..schemas.episode import EpisodeResult
from ..schemas.fitness import FitnessReport, RobustnessOutcome, SearchState
from ..schemas.game import Block, Expr, GameSpec, Opcode
from ..schemas.neat import Genome
from .cdg_service import BODY, ELSE, EVENT, SEQUENCE, THEN, Cdg, cdg_service
from .game_spec_service import ENTRY_ID, SpecIndex
from .game_vm_service import RAY_CAP, VmFault, game_vm_service, to_number
from .neat_service import InnovationRegistry
from .play_service import play_service

logger = logging.getLogger(__name__)

# Korel constant for boolean atoms and unsatisfied strict comparisons
K = 1.0

PREDICATE_OPCODES = {Opcode.IF, Opcode.IF_ELSE, Opcode.REPEAT, Opcode.REPEAT_UNTIL, Opcode.FOREVER}


def covers_target(result: EpisodeResult, target: Optional[str]) -> bool:
    """Entry counts as reached by every episode"""
    return target == ENTRY_ID or (target is not None and target in result.coverage)


class BranchDistanceTracker:
    """
    Step observer sampling the branch distance of every control edge that leads
    towards the target; keeps the per-edge minimum over the episode
    """

    def __init__(self, spec: GameSpec, cdg: Cdg, target: Optional[str], index: Optional[SpecIndex] = None):
        self.index = index or SpecIndex(spec)
        self.distances: Dict[Tuple[str, str], float] = {}
        if target is None or target == ENTRY_ID or target not in cdg:
            return
        towards = networkx.single_source_shortest_path_length(cdg.graph.reverse(copy=False), target)
        for parent, child, label in cdg.edges():
            if label in (THEN, ELSE, BODY) and child in towards and parent in self.index.blocks:
                self.distances[(parent, label)] = math.inf

    def observe(self, state: VmState) -> None:
        for key in self.distances:
            if self.distances[key] == 0:
                continue
            block_id, label = key
            sample = fitness_service.branch_distance(state, self.index.blocks[block_id], label, self.index)
            if sample is not None:
                self.distances[key] = min(self.distances[key], sample)

    def distance(self, block_id: str, label: str) -> float:
        value = self.distances.get((block_id, label), math.inf)
        return K if math.isinf(value) else value


class FitnessService:

    # ------------------------------------------------------------- objective

    def alpha_norm(self, x: float) -> float:
        if x < 0:
            raise FitnessError(f"cannot normalize negative distance {x}")
        if math.isinf(x):
            return 1.0
        return x / (1.0 + x)

    def objective_fst(self, approach_level: int, branch_distance: float, control_flow_distance: int) -> float:
        return 2 * approach_level + self.alpha_norm(branch_distance) + self.alpha_norm(control_flow_distance)

    def network_fitness(self, f_st: float, robustness: Optional[RobustnessOutcome] = None) -> float:
        """
        1/(1+f_st) while the target is missed, 1 once covered, 1 + r_c after the
        robustness check
        """
        if f_st < 0:
            raise FitnessError(f"negative objective {f_st}")
        if robustness is not None:
            if f_st > 0:
                raise FitnessError("robustness result supplied for a network that missed its target")
            return 1.0 + robustness.r_c
        if f_st == 0:
            return 1.0
        return 1.0 / (1.0 + f_st)

    def admitted(self, fitness: float, r_d: int) -> bool:
        return fitness == r_d

    # ------------------------------------------------------- branch distance

    def predicate_distance(self, state: VmState, instance: SpriteInstance, expr: Expr, want: bool) -> float:
        """Korel distance for `expr` to evaluate to `want`"""
        op = expr.op
        try:
            if op == "not":
                return self.predicate_distance(state, instance, expr.args[0], not want)
            if op in ("and", "or"):
                left = self.predicate_distance(state, instance, expr.args[0], want)
                right = self.predicate_distance(state, instance, expr.args[1], want)
                # and wanted true / or wanted false: both operands must hold
                if (op == "and") == want:
                    return left + right
                return min(left, right)
            if op in ("<", ">"):
                a = to_number(game_vm_service.evaluate(state, instance, expr.args[0]))
                b = to_number(game_vm_service.evaluate(state, instance, expr.args[1]))
                if op == ">":
                    a, b = b, a
                # now the predicate reads a < b
                if want:
                    return 0.0 if a < b else (a - b) + K
                return 0.0 if a >= b else b - a
            if op == "=":
                holds = bool(game_vm_service.evaluate(state, instance, expr))
                if holds == want:
                    return 0.0
                if not want:
                    return K
                try:
                    a = to_number(game_vm_service.evaluate(state, instance, expr.args[0]))
                    b = to_number(game_vm_service.evaluate(state, instance, expr.args[1]))
                    return abs(a - b)
                except VmFault:
                    return K
            if op in ("touching", "touchingEdge", "touchingColor", "touchingMouse"):
                gap = self._gap(state, instance, expr)
                holds = gap is not None and gap <= 0
                if holds == want:
                    return 0.0
                if want:
                    return RAY_CAP if gap is None else max(0.0, gap)
                return K
            holds = bool(game_vm_service.evaluate(state, instance, expr))
            return 0.0 if holds == want else K
        except VmFault:
            return K

    def _gap(self, state: VmState, instance: SpriteInstance, expr: Expr) -> Optional[float]:
        if not instance.visible:
            return None
        if expr.op == "touching":
            return game_vm_service.sprite_gap(state, instance, expr.args[0].value)
        if expr.op == "touchingEdge":
            return game_vm_service.edge_gap(instance)
        if expr.op == "touchingColor":
            return game_vm_service.color_gap(state, instance, expr.args[0].value)
        return game_vm_service.mouse_gap(state, instance)

    def block_distance(self, state: VmState, instance: SpriteInstance, block: Block, outcome: str) -> float:
        if block.opcode == Opcode.FOREVER:
            return 0.0
        if block.opcode == Opcode.REPEAT:
            try:
                count = to_number(game_vm_service.evaluate(state, instance, block.args[0]))
            except VmFault:
                return K
            return 0.0 if math.floor(count + 0.5) >= 1 else (1.0 - count) + K
        if block.opcode == Opcode.REPEAT_UNTIL:
            # the body runs while the condition is false
            return self.predicate_distance(state, instance, block.args[0], outcome != BODY)
        return self.predicate_distance(state, instance, block.args[0], outcome == THEN)

    def branch_distance(self, state: VmState, block: Block, outcome: str,
                        index: Optional[SpecIndex] = None) -> Optional[float]:
        """
        Distance of a control block to taking `outcome`: 0 once the outcome was
        taken, otherwise the minimum over the owning sprite's live instances.
        None when no instance is alive to evaluate it
        """
        if block.opcode not in PREDICATE_OPCODES:
            raise FitnessError(f"block {block.id} ({block.opcode.value}) is not a predicate")
        if outcome in state.outcomes.get(block.id, ()):
            return 0.0
        index = index or SpecIndex(state.spec)
        instances = state.instances_of(index.owner[block.id])
        if not instances:
            return None
        return min(self.block_distance(state, instance, block, outcome) for instance in instances)

    # ------------------------------------------------------- distance terms

    def control_flow_distance(self, target: str, covered: Iterable[str], index: SpecIndex) -> int:
        """
        Sequence positions between the target and its nearest covered preceding
        sibling; position + 1 when none is covered, 0 for hats and covered targets
        """
        covered = set(covered)
        if target in covered or target not in index.location:
            return 0
        body, position = index.location[target]
        for j in range(position - 1, -1, -1):
            if body[j].id in covered:
                return position - j
        return position + 1

    def frontier_distance(self, cdg: Cdg, covered: Iterable[str], target: str,
                          tracker: Optional[BranchDistanceTracker] = None) -> float:
        """
        Branch distance at the first missed control dependency on the closest
        path from coverage to the target
        """
        towards = networkx.single_source_shortest_path_length(cdg.graph.reverse(copy=False), target)
        sources = {node for node in covered if node in towards} | ({ENTRY_ID} if ENTRY_ID in towards else set())
        if not sources:
            return K
        best = min(towards[node] for node in sources)
        distances: List[float] = []
        for source in sorted(node for node in sources if towards[node] == best):
            for child in cdg.graph.successors(source):
                if child != target and towards.get(child) != best - 1:
                    continue
                label = cdg.label(source, child)
                if label == SEQUENCE:
                    distances.append(0.0)
                elif label == EVENT:
                    distances.append(K)
                else:
                    distances.append(tracker.distance(source, label) if tracker is not None else K)
        return min(distances) if distances else K

    def evaluate_episode(self, result: EpisodeResult, target: str, cdg: Cdg, index: SpecIndex,
                         tracker: Optional[BranchDistanceTracker] = None) -> FitnessReport:
        if covers_target(result, target):
            return FitnessReport(fitness=1.0)
        covered = set(result.coverage)
        approach_level = cdg_service.dependency_distance(cdg, covered, target)
        branch_distance = self.frontier_distance(cdg, covered, target, tracker)
        control_flow_distance = self.control_flow_distance(target, covered, index)
        f_st = self.objective_fst(approach_level, branch_distance, control_flow_distance)
        return FitnessReport(
            approach_level=approach_level,
            branch_distance=branch_distance,
            control_flow_distance=control_flow_distance,
            f_st=f_st,
            fitness=self.network_fitness(f_st),
        )

    # ------------------------------------------------------------ robustness

    def robustness_check(self, genome: Genome, spec: GameSpec, target: str, r_d: int, rng: np.random.Generator,
                         registry: InnovationRegistry, max_steps: int, early_abort: bool = False) -> RobustnessOutcome:
        """
        Replay a covering network on r_d - 1 fresh seeds and count the coverings
        """
        seeds = [int(s) for s in rng.integers(0, 2 ** 31 - 1, size=max(r_d - 1, 0))]
        stop_at = None if target == ENTRY_ID else target
        outcome = RobustnessOutcome(seeds=seeds)
        for seed in seeds:
            result = play_service.run_episode(genome, spec, seed, stop_at, max_steps, registry, record_trace=False)
            outcome.coverages.append(result.coverage)
            if covers_target(result, target):
                outcome.r_c += 1
            elif early_abort:
                outcome.aborted = True
                break
        logger.debug(f"Robustness of genome {genome.key} on {target}: {outcome.r_c}/{len(seeds)}")
        return outcome

    def collateral_robustness(self, coverages: Sequence[Iterable[str]], uncovered: Iterable[str]) -> Set[str]:
        """Uncovered statements reached in every one of the given episodes"""
        if not coverages:
            return set()
        common = set(coverages[0])
        for coverage in coverages[1:]:
            common &= set(coverage)
        return common & set(uncovered)

    # ------------------------------------------------------ target selection

    def select_target(self, cdg: Cdg, state: SearchState, rng: np.random.Generator) -> str:
        """
        Pick the next target among the control dependents of covered statements,
        preferring accidentally reached ones and avoiding recently abandoned ones
        """
        covered = set(state.covered)
        if not covered:
            return ENTRY_ID
        uncovered = set(cdg.nodes()) - covered - {ENTRY_ID}
        if not uncovered:
            raise FitnessError("every statement is already covered")
        frontier: Set[str] = set()
        for node in covered | {ENTRY_ID}:
            if node in cdg:
                frontier |= cdg_service.control_dependents(cdg, node)
        frontier -= covered | {ENTRY_ID}
        if not frontier:
            raise FitnessError(f"{len(uncovered)} statement(s) unreachable from the covered set")

        pool = [node for node in sorted(frontier) if node not in state.switched]
        if not pool:
            oldest = next(node for node in state.switched if node in frontier)
            state.switched.remove(oldest)
            return oldest
        preferred = [node for node in pool if node in state.accidental] or pool
        return preferred[int(rng.integers(len(preferred)))]

    def register_stagnation(self, state: SearchState, best_fitness: float) -> bool:
        """Returns True when the target was given up and moved to the back of the queue"""
        if best_fitness > state.best_fitness:
            state.best_fitness = best_fitness
            state.stagnation = 0
            return False
        state.stagnation += 1
        if state.stagnation < state.stagnation_limit:
            return False
        logger.info(f"Target {state.target} stagnated for {state.stagnation} generation(s), switching")
        if state.target is not None and state.target not in state.switched:
            state.switched.append(state.target)
        state.target = None
        state.stagnation = 0
        state.best_fitness = 0.0
        return True


fitness_service = FitnessService()
