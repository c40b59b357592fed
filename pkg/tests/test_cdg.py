"""Tests for the interprocedural control-dependence graph."""

from itertools import count
from typing import Dict, List, Set, Tuple

import networkx
import numpy as np
import pytest

from app.core.exceptions import UnknownNodeError
from app.schemas.game import Block, Costume, Expr, GameSpec, HatKind, Opcode, Script, SpriteSpec
from app.services.cdg_service import BODY, ELSE, EVENT, SEQUENCE, THEN, cdg_service
from app.services.game_spec_service import ENTRY_ID, game_spec_service

EXIT = "__exit__"
LOOPS = (Opcode.REPEAT, Opcode.REPEAT_UNTIL, Opcode.FOREVER)


# ── post-dominator oracle ────────────────────────────────────────────────────

def _wire(cfg: networkx.DiGraph, body: List[Block], follow: str) -> str:
    """Add the CFG of `body` falling through to `follow`; returns the body's first node"""
    if not body:
        return follow
    for index, block in enumerate(body):
        after = body[index + 1].id if index + 1 < len(body) else follow
        cfg.add_node(block.id)
        if block.opcode in (Opcode.IF, Opcode.IF_ELSE):
            cfg.add_edge(block.id, _wire(cfg, block.bodies[0], after))
            if block.opcode == Opcode.IF_ELSE:
                cfg.add_edge(block.id, _wire(cfg, block.bodies[1], after))
            else:
                cfg.add_edge(block.id, after)
        elif block.opcode in LOOPS:
            # forever gets a pseudo exit edge so every node reaches EXIT
            cfg.add_edge(block.id, _wire(cfg, block.bodies[0], block.id))
            cfg.add_edge(block.id, after)
        else:
            cfg.add_edge(block.id, after)
    return body[0].id


def _postdominator_dependences(script: Script) -> Set[Tuple[str, str]]:
    cfg = networkx.DiGraph()
    cfg.add_edge(script.id, _wire(cfg, script.body, EXIT))
    cfg.add_edge(script.id, EXIT)
    ipdom: Dict[str, str] = dict(networkx.immediate_dominators(cfg.reverse(copy=True), EXIT))
    ipdom[EXIT] = EXIT

    def postdominators(node: str) -> Set[str]:
        chain = {node}
        while ipdom[node] != node:
            node = ipdom[node]
            chain.add(node)
        return chain

    deps: Set[Tuple[str, str]] = set()
    for a, b in cfg.edges():
        if b in postdominators(a):
            continue
        runner = b
        while runner != ipdom[a]:
            deps.add((a, runner))
            runner = ipdom[runner]
    return {(a, b) for a, b in deps if a != b and b != EXIT}


def _intra_script_edges(spec: GameSpec) -> Set[Tuple[str, str]]:
    graph = cdg_service.build_cdg(spec)
    return {(a, b) for a, b, label in graph.edges() if label != EVENT}


def _oracle_edges(spec: GameSpec) -> Set[Tuple[str, str]]:
    edges: Set[Tuple[str, str]] = set()
    for _, script in spec.iter_scripts():
        edges |= _postdominator_dependences(script)
    return edges


def _random_spec(rng: np.random.Generator, size: int = 15) -> GameSpec:
    ids = count(1)
    condition = Expr.call("keyDown", Expr.name("space"))

    def body(budget: int, depth: int) -> List[Block]:
        blocks: List[Block] = []
        while budget > 0:
            budget -= 1
            kind = int(rng.integers(0, 6)) if depth < 3 else 0
            block_id = f"n{next(ids)}"
            if kind == 0:
                blocks.append(Block(id=block_id, opcode=Opcode.SAY, args=[Expr.text("hi")]))
                continue
            inner = int(rng.integers(0, min(budget, 4) + 1))
            budget -= inner
            if kind == 1:
                blocks.append(Block(id=block_id, opcode=Opcode.IF, args=[condition], bodies=[body(inner, depth + 1)]))
            elif kind == 2:
                split = int(rng.integers(0, inner + 1))
                blocks.append(Block(id=block_id, opcode=Opcode.IF_ELSE, args=[condition],
                                    bodies=[body(split, depth + 1), body(inner - split, depth + 1)]))
            elif kind == 3:
                blocks.append(Block(id=block_id, opcode=Opcode.REPEAT, args=[Expr.num(2)],
                                    bodies=[body(inner, depth + 1)]))
            elif kind == 4:
                blocks.append(Block(id=block_id, opcode=Opcode.REPEAT_UNTIL, args=[condition],
                                    bodies=[body(inner, depth + 1)]))
            else:
                blocks.append(Block(id=block_id, opcode=Opcode.FOREVER, bodies=[body(inner, depth + 1)]))
        return blocks

    scripts = [
        Script(id="hatA", hat=HatKind.GREEN_FLAG, body=body(size // 2, 0) or [Block(id="solo", opcode=Opcode.SHOW)]),
        Script(id="hatB", hat=HatKind.KEY_PRESSED, key="space", body=body(size - size // 2, 0)),
    ]
    sprite = SpriteSpec(name="Rand", costumes=[Costume(id="c", radius=5)], scripts=scripts)
    return GameSpec(name="Random", sprites=[sprite])


# ── tests ────────────────────────────────────────────────────────────────────

class TestBuild:

    @pytest.mark.parametrize("filename", ["fruit_catching.game", "mole_whacker.game"])
    def test_matches_postdominator_oracle_on_bundled_games(self, games_dir, filename) -> None:
        spec = game_spec_service.load_game(str(games_dir / filename))
        assert _intra_script_edges(spec) == _oracle_edges(spec)

    def test_matches_postdominator_oracle_on_random_specs(self) -> None:
        rng = np.random.default_rng(20)
        for _ in range(50):
            spec = _random_spec(rng)
            if game_spec_service.validate_spec(spec):
                continue
            assert _intra_script_edges(spec) == _oracle_edges(spec)

    def test_straight_line_blocks_depend_on_hat(self) -> None:
        spec = game_spec_service.parse_game(
            "game name=Line\nsprite name=S\n  costume id=c radius=5\n  script hat=greenFlag id=h\n"
            "    a move 1\n    b move 2\n    c move 3\n"
        )
        graph = cdg_service.build_cdg(spec)
        assert cdg_service.control_dependents(graph, "h") == {"a", "b", "c"}
        assert {graph.label("h", x) for x in "abc"} == {SEQUENCE}

    def test_entry_fans_out_to_event_hats(self, fruit_spec) -> None:
        graph = cdg_service.build_cdg(fruit_spec)
        assert cdg_service.control_dependents(graph, ENTRY_ID) == {"bowlStart", "bowlSpace", "appleStart", "clockStart"}
        assert graph.parents(ENTRY_ID) == []

    def test_broadcast_and_clone_links(self, fruit_spec, mole_spec) -> None:
        fruit = cdg_service.build_cdg(fruit_spec)
        assert fruit.parents("bowlCaught") == ["a6"]
        assert fruit.label("a6", "bowlCaught") == EVENT
        mole = cdg_service.build_cdg(mole_spec)
        assert mole.parents("m_go") == ["h4"]
        assert mole.parents("m_clone") == ["m3"]

    def test_outcome_labels(self, fruit_spec) -> None:
        graph = cdg_service.build_cdg(fruit_spec)
        assert graph.label("t4", "won") == THEN
        assert graph.label("t4", "t5") == ELSE
        assert graph.label("t1", "t2") == BODY
        assert graph.label("a4", "a5") == THEN

    def test_every_node_reachable_from_entry(self, mole_spec) -> None:
        graph = cdg_service.build_cdg(mole_spec)
        reachable = networkx.descendants(graph.graph, ENTRY_ID) | {ENTRY_ID}
        assert reachable == set(graph.nodes())
        assert set(mole_spec.statement_ids()) | {ENTRY_ID} == set(graph.nodes())

    def test_build_is_stable(self, fruit_spec) -> None:
        assert sorted(cdg_service.build_cdg(fruit_spec).edges()) == sorted(cdg_service.build_cdg(fruit_spec).edges())

    def test_dot_export(self, walker_spec) -> None:
        dot = cdg_service.to_dot(cdg_service.build_cdg(walker_spec))
        assert dot.startswith("digraph cdg {")
        assert '"Entry" -> "start" [label="event"];' in dot
        assert '"w5" -> "goal" [label="then"];' in dot


class TestQueries:

    def test_leaf_has_no_dependents(self, walker_spec) -> None:
        graph = cdg_service.build_cdg(walker_spec)
        assert cdg_service.control_dependents(graph, "w3") == set()

    def test_unknown_node(self, walker_spec) -> None:
        graph = cdg_service.build_cdg(walker_spec)
        with pytest.raises(UnknownNodeError):
            cdg_service.control_dependents(graph, "nope")

    @pytest.mark.parametrize("covered,expected", [
        ([], 3),
        (["start"], 2),
        (["start", "w1"], 1),
        (["start", "w1", "w5"], 0),
        (["goal"], 0),
    ])
    def test_dependency_distance(self, walker_spec, covered, expected) -> None:
        """Entry -> start -> w1 -> w5 -> goal."""
        graph = cdg_service.build_cdg(walker_spec)
        assert cdg_service.dependency_distance(graph, covered, "goal") == expected

    def test_distance_is_monotone(self, walker_spec) -> None:
        graph = cdg_service.build_cdg(walker_spec)
        covered: List[str] = []
        last = cdg_service.dependency_distance(graph, covered, "w6")
        for node in ["start", "w1", "w5"]:
            covered.append(node)
            current = cdg_service.dependency_distance(graph, covered, "w6")
            assert current <= last
            last = current

    def test_ancestors_chain(self, walker_spec) -> None:
        graph = cdg_service.build_cdg(walker_spec)
        assert cdg_service.ancestors_chain(graph, ["start"], "goal") == ["start", "w1", "w5", "goal"]
