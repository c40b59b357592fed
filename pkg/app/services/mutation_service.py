import logging
from pathlib import Path
from typing import Dict, Iterator, List, Optional

import numpy as np

from ..schemas.game import (
    ARITHMETIC_OPS,
    DEFAULT_KEYS,
    LOGICAL_OPS,
    RELATIONAL_OPS,
    Block,
    Expr,
    GameSpec,
    HatKind,
    Opcode,
)
from ..schemas.harness import Mutant, MutationOperator, MutationPoint
from .game_spec_service import SpecIndex, game_spec_service, iter_block_exprs

logger = logging.getLogger(__name__)

NEGATABLE = {Opcode.IF, Opcode.IF_ELSE, Opcode.REPEAT_UNTIL}
NEGATED = "not"


def _node_at(block: Block, path: List[int]) -> Expr:
    node = block.args[path[0]]
    for index in path[1:]:
        node = node.args[index]
    return node


def _drop_empty_scripts(spec: GameSpec) -> None:
    for sprite in spec.sprites:
        sprite.scripts = [script for script in sprite.scripts if script.body]
    present = set(spec.statement_ids())
    spec.win_statements = [s for s in spec.win_statements if s in present]


class MutationService:
    """First-order mutants of a game, one operator application each"""

    def key_alphabet(self, spec: GameSpec) -> List[str]:
        keys = list(game_spec_service.keys_mentioned(spec))
        keys.extend(k for k in DEFAULT_KEYS if k not in keys)
        return keys

    def _candidates(self, spec: GameSpec, operator: MutationOperator) -> Iterator[MutationPoint]:
        """Structural candidates before checking which replacements keep the game valid"""
        variables = [v.name for v in spec.variables]
        keys = self.key_alphabet(spec)
        for _, script in spec.iter_scripts():
            if operator == MutationOperator.SDM:
                yield MutationPoint(operator=operator, block_id=script.id)
                continue
            if operator == MutationOperator.KRM and script.hat == HatKind.KEY_PRESSED:
                yield MutationPoint(operator=operator, block_id=script.id, original=script.key,
                                    choices=[k for k in keys if k != script.key])
            for block in script.iter_blocks():
                if operator == MutationOperator.SBD:
                    yield MutationPoint(operator=operator, block_id=block.id)
                    continue
                if operator == MutationOperator.NCM:
                    if block.opcode in NEGATABLE:
                        yield MutationPoint(operator=operator, block_id=block.id, path=[0], choices=[NEGATED])
                    continue
                if operator == MutationOperator.VRM and block.opcode in (Opcode.SET_VAR, Opcode.CHANGE_VAR):
                    name = block.args[0].value
                    yield MutationPoint(operator=operator, block_id=block.id, path=[0], original=name,
                                        choices=[v for v in variables if v != name])
                for path, expr in iter_block_exprs(block):
                    point = self._expr_candidate(operator, block, list(path), expr, keys, variables)
                    if point is not None:
                        yield point

    def _expr_candidate(self, operator: MutationOperator, block: Block, path: List[int], expr: Expr,
                        keys: List[str], variables: List[str]) -> Optional[MutationPoint]:
        def point(original: str, pool, target_path: List[int]) -> MutationPoint:
            return MutationPoint(operator=operator, block_id=block.id, path=target_path, original=original,
                                 choices=[c for c in pool if c != original])

        if operator == MutationOperator.KRM and expr.op == "keyDown":
            return point(expr.args[0].value, keys, path + [0])
        if operator == MutationOperator.VRM and expr.op == "var":
            return point(expr.args[0].value, variables, path + [0])
        if operator == MutationOperator.AOR and expr.op in ARITHMETIC_OPS:
            return point(expr.op, ARITHMETIC_OPS, path)
        if operator == MutationOperator.LOR and expr.op in LOGICAL_OPS:
            return point(expr.op, LOGICAL_OPS, path)
        if operator == MutationOperator.ROR and expr.op in RELATIONAL_OPS:
            return point(expr.op, RELATIONAL_OPS, path)
        return None

    def enumerate_points(self, spec: GameSpec, operator: MutationOperator) -> List[MutationPoint]:
        """
        Every place `operator` applies, keeping only replacements whose mutant
        still validates
        """
        points: List[MutationPoint] = []
        for candidate in self._candidates(spec, operator):
            if operator in (MutationOperator.SBD, MutationOperator.SDM):
                legal = not game_spec_service.validate_spec(self._mutate(spec, candidate, None))
                if legal:
                    points.append(candidate)
                continue
            choices = [
                choice for choice in candidate.choices
                if not game_spec_service.validate_spec(self._mutate(spec, candidate, choice))
            ]
            if choices:
                points.append(candidate.model_copy(update={"choices": choices}))
        return points

    def _mutate(self, spec: GameSpec, point: MutationPoint, choice: Optional[str]) -> GameSpec:
        mutated = spec.model_copy(deep=True)
        index = SpecIndex(mutated)
        operator = point.operator

        if operator == MutationOperator.SDM:
            for sprite in mutated.sprites:
                sprite.scripts = [s for s in sprite.scripts if s.id != point.block_id]
            _drop_empty_scripts(mutated)
            return mutated

        if operator == MutationOperator.SBD:
            body, position = index.location[point.block_id]
            removed = body[position]
            spliced = [inner for inner_body in removed.bodies for inner in inner_body]
            body[position:position + 1] = spliced
            _drop_empty_scripts(mutated)
            return mutated

        if operator == MutationOperator.KRM and point.path is None:
            index.scripts[point.block_id].key = choice
            return mutated

        block = index.blocks[point.block_id]
        if operator == MutationOperator.NCM:
            block.args[0] = Expr.call(NEGATED, block.args[0])
            return mutated
        node = _node_at(block, point.path)
        if operator in (MutationOperator.AOR, MutationOperator.LOR, MutationOperator.ROR):
            node.op = choice
        else:
            node.value = choice
        return mutated

    def apply_point(self, spec: GameSpec, point: MutationPoint, rng: np.random.Generator, index: int = 0) -> Mutant:
        """Apply one point, drawing the replacement uniformly from its legal choices"""
        choice = point.choices[int(rng.integers(len(point.choices)))] if point.choices else None
        return Mutant(spec=self._mutate(spec, point, choice), point=point, index=index, replacement=choice)

    def generate_mutant_set(self, spec: GameSpec, rng: np.random.Generator, cap: int = 50,
                            operators: Optional[List[MutationOperator]] = None) -> List[Mutant]:
        """
        All points per operator, or `cap` of them drawn without replacement
        """
        mutants: List[Mutant] = []
        for operator in operators or list(MutationOperator):
            points = self.enumerate_points(spec, operator)
            if len(points) > cap:
                chosen = sorted(int(i) for i in rng.choice(len(points), size=cap, replace=False))
                points = [points[i] for i in chosen]
            for position, point in enumerate(points):
                mutants.append(self.apply_point(spec, point, rng, index=position))
            logger.info(f"{operator.value}: {len(points)} mutant(s) of '{spec.name}'")
        return mutants

    def mutant_filename(self, spec: GameSpec, mutant: Mutant) -> str:
        return f"{spec.name}.{mutant.point.operator.value}.{mutant.index}.game"

    def write_mutants(self, spec: GameSpec, mutants: List[Mutant], directory: str) -> List[str]:
        written: List[str] = []
        for mutant in mutants:
            path = str(Path(directory) / self.mutant_filename(spec, mutant))
            written.append(game_spec_service.write_game(mutant.spec, path))
        return written

    def count_by_operator(self, mutants: List[Mutant]) -> Dict[str, int]:
        counts: Dict[str, int] = {operator.value: 0 for operator in MutationOperator}
        for mutant in mutants:
            counts[mutant.point.operator.value] += 1
        return counts


mutation_service = MutationService()
