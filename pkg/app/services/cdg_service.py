import logging
from typing import Dict, Iterable, List, Optional, Set, Tuple

import networkx

from ..core.exceptions import UnknownNodeError
from ..schemas.game import Block, GameSpec, HatKind, Opcode
from .game_spec_service import ENTRY_ID, MYSELF

logger = logging.getLogger(__name__)

# edge labels
SEQUENCE = "seq"
THEN = "then"
ELSE = "else"
BODY = "body"
EVENT = "event"

EVENT_HATS = {
    HatKind.GREEN_FLAG,
    HatKind.KEY_PRESSED,
    HatKind.CLICK_SPRITE,
    HatKind.CLICK_STAGE,
    HatKind.ANSWER_RECEIVED,
}


class Cdg:
    """Interprocedural control-dependence graph rooted at the artificial Entry node"""

    def __init__(self, graph: networkx.DiGraph):
        self.graph = graph

    @property
    def entry(self) -> str:
        return ENTRY_ID

    def __contains__(self, node: str) -> bool:
        return node in self.graph

    def nodes(self) -> List[str]:
        return list(self.graph.nodes)

    def edges(self) -> List[Tuple[str, str, str]]:
        return [(a, b, data["label"]) for a, b, data in self.graph.edges(data=True)]

    def parents(self, node: str) -> List[str]:
        self._require(node)
        return sorted(self.graph.predecessors(node))

    def label(self, parent: str, child: str) -> str:
        return self.graph.edges[parent, child]["label"]

    def _require(self, node: str) -> None:
        if node not in self.graph:
            raise UnknownNodeError(f"unknown CDG node '{node}'")


class CdgService:

    def build_cdg(self, spec: GameSpec) -> Cdg:
        """
        Entry fans out to event hats; broadcast and createClone blocks link to the
        hats they trigger; blocks depend on their controlling hat or control block
        """
        graph = networkx.DiGraph()
        graph.add_node(ENTRY_ID)
        broadcasts: Dict[str, List[str]] = {}
        clone_makers: Dict[str, List[str]] = {}

        for sprite, script in spec.iter_scripts():
            graph.add_node(script.id, sprite=sprite.name, hat=script.hat.value)
            self._add_body(graph, script.id, script.body, SEQUENCE)
            for block in script.iter_blocks():
                if block.opcode == Opcode.BROADCAST:
                    broadcasts.setdefault(block.args[0].value, []).append(block.id)
                elif block.opcode == Opcode.CREATE_CLONE:
                    target = block.args[0].value
                    clone_makers.setdefault(sprite.name if target == MYSELF else target, []).append(block.id)

        for sprite, script in spec.iter_scripts():
            if script.hat in EVENT_HATS:
                sources = [ENTRY_ID]
            elif script.hat == HatKind.BROADCAST_RECEIVED:
                sources = broadcasts.get(script.message, []) or [ENTRY_ID]
            else:
                sources = clone_makers.get(sprite.name, []) or [ENTRY_ID]
            for source in sources:
                graph.add_edge(source, script.id, label=EVENT)

        logger.debug(f"Built CDG for '{spec.name}': {graph.number_of_nodes()} nodes, {graph.number_of_edges()} edges")
        return Cdg(graph)

    def _add_body(self, graph: networkx.DiGraph, parent: str, body: List[Block], label: str) -> None:
        for block in body:
            graph.add_node(block.id, opcode=block.opcode.value)
            graph.add_edge(parent, block.id, label=label)
            if block.opcode in (Opcode.IF, Opcode.IF_ELSE):
                self._add_body(graph, block.id, block.bodies[0], THEN)
                if block.opcode == Opcode.IF_ELSE:
                    self._add_body(graph, block.id, block.bodies[1], ELSE)
            elif block.opcode in (Opcode.REPEAT, Opcode.REPEAT_UNTIL, Opcode.FOREVER):
                self._add_body(graph, block.id, block.bodies[0], BODY)

    def control_dependents(self, g: Cdg, node: str) -> Set[str]:
        g._require(node)
        return set(g.graph.successors(node))

    def dependency_distance(self, g: Cdg, covered: Iterable[str], target: str) -> int:
        """
        Edges from the closest covered node to the target's immediate control
        dependency; 0 when the target or one of its dependencies is covered
        """
        g._require(target)
        sources = {node for node in covered if node in g.graph} | {ENTRY_ID}
        if target in sources:
            return 0
        parents = g.parents(target)
        if not parents or any(p in sources for p in parents):
            return 0
        lengths = networkx.multi_source_dijkstra_path_length(g.graph, sources)
        reachable = [lengths[p] for p in parents if p in lengths]
        if reachable:
            return int(min(reachable))
        # unreachable from coverage: fall back to the path from Entry
        from_entry = networkx.single_source_shortest_path_length(g.graph, ENTRY_ID)
        return int(min(from_entry.get(p, len(g.graph)) for p in parents))

    def ancestors_chain(self, g: Cdg, covered: Iterable[str], target: str) -> List[str]:
        """Nodes on a shortest path from the covered set down to the target"""
        sources = {node for node in covered if node in g.graph} | {ENTRY_ID}
        best: Optional[List[str]] = None
        for source in sorted(sources):
            try:
                path = networkx.shortest_path(g.graph, source, target)
            except networkx.NetworkXNoPath:
                continue
            if best is None or len(path) < len(best):
                best = path
        return best or [target]

    def to_dot(self, g: Cdg) -> str:
        lines = ["digraph cdg {"]
        for node in sorted(g.graph.nodes):
            shape = "box" if node == ENTRY_ID or "hat" in g.graph.nodes[node] else "ellipse"
            lines.append(f'  "{node}" [shape={shape}];')
        for a, b, label in sorted(g.edges()):
            lines.append(f'  "{a}" -> "{b}" [label="{label}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


cdg_service = CdgService()
