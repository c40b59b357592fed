import hashlib
import json
import logging
import math
from typing import Dict, List, Sequence, Tuple

import networkx
import numpy as np
from scipy.special import softmax

from ..core.exceptions import CycleError, UnknownNodeError
from ..schemas.episode import EventSpec, FeatureVector, ParamSpec
from ..schemas.neat import Genome, NodeGene, NodeRole
from .neat_service import BIAS_ID, InnovationRegistry, neat_service

logger = logging.getLogger(__name__)


def structural_signature(genome: Genome) -> str:
    payload = sorted((n.id, n.role.value, n.group or "", n.feature or "") for n in genome.nodes)
    return hashlib.sha256(json.dumps(payload).encode("utf-8")).hexdigest()


class Phenotype:
    """Executable form of a genome: dense weight matrix over topologically sorted nodes"""

    def __init__(self, genome: Genome):
        graph = networkx.DiGraph()
        graph.add_nodes_from(genome.node_ids())
        enabled = [c for c in genome.connections if c.enabled]
        graph.add_edges_from(c.key for c in enabled)
        if not networkx.is_directed_acyclic_graph(graph):
            raise CycleError(f"genome {genome.key} is not feed-forward")

        self.genome = genome
        self.order: List[int] = list(networkx.lexicographical_topological_sort(graph))
        self.index: Dict[int, int] = {node_id: i for i, node_id in enumerate(self.order)}
        size = len(self.order)
        self.weights = np.zeros((size, size))
        for connection in enabled:
            self.weights[self.index[connection.in_node], self.index[connection.out_node]] += connection.weight
        self.depth = int(networkx.dag_longest_path_length(graph)) + 1 if graph.number_of_edges() else 1
        self.activations = np.zeros(size)
        self.signature = structural_signature(genome)

        roles = {n.id: n for n in genome.nodes}
        self.input_keys: Dict[Tuple[str, str], int] = {
            (n.group, n.feature): self.index[n.id] for n in genome.nodes if n.role == NodeRole.INPUT
        }
        self.fixed = np.array([roles[node_id].role in (NodeRole.INPUT, NodeRole.BIAS) for node_id in self.order])
        self.bias_index = self.index.get(BIAS_ID)
        self.hidden_ids: List[int] = sorted(n.id for n in genome.nodes if n.role == NodeRole.HIDDEN)
        self.classification: Dict[str, int] = {
            n.group: n.id for n in genome.nodes if n.role == NodeRole.OUTPUT_CLASSIFICATION
        }
        self.regression: Dict[Tuple[str, str], int] = {
            (n.group, n.feature): n.id for n in genome.nodes if n.role == NodeRole.OUTPUT_REGRESSION
        }

    def value(self, node_id: int) -> float:
        return float(self.activations[self.index[node_id]])


class NetworkService:

    def build_phenotype(self, genome: Genome) -> Phenotype:
        return Phenotype(genome)

    def activate(self, phenotype: Phenotype, features: FeatureVector) -> Dict[int, float]:
        """
        Run `depth` synchronous propagation steps from a zero state; returns the
        activations of every hidden and output node
        """
        inputs = np.zeros(len(phenotype.order))
        for feature in features.features:
            position = phenotype.input_keys.get((feature.group, feature.name))
            if position is not None:
                inputs[position] = feature.value
        if phenotype.bias_index is not None:
            inputs[phenotype.bias_index] = 1.0

        current = inputs.copy()
        for _ in range(phenotype.depth):
            current = np.where(phenotype.fixed, inputs, np.tanh(current @ phenotype.weights))
        phenotype.activations = current
        return {
            node_id: float(current[i])
            for node_id, i in phenotype.index.items()
            if not phenotype.fixed[i]
        }

    def select_event(self, phenotype: Phenotype, available: Sequence[EventSpec]) -> Tuple[EventSpec, np.ndarray]:
        """
        Softmax over the available events' outputs; argmax wins, ties go to the
        lowest output node id
        """
        if not available:
            raise UnknownNodeError("no events available")
        node_ids = []
        for event in available:
            node_id = phenotype.classification.get(event.tag)
            if node_id is None:
                raise UnknownNodeError(f"event {event.tag} has no output node")
            node_ids.append(node_id)
        logits = np.array([phenotype.value(node_id) for node_id in node_ids])
        probabilities = softmax(logits)
        best = max(probabilities)
        chosen = min((i for i, p in enumerate(probabilities) if p == best), key=lambda i: node_ids[i])
        return available[chosen], probabilities

    def regress_params(self, phenotype: Phenotype, event: EventSpec) -> Dict[str, float]:
        values: Dict[str, float] = {}
        for param in event.params:
            node_id = phenotype.regression.get((event.tag, param.name))
            if node_id is None:
                raise UnknownNodeError(f"no regression node for {event.tag}.{param.name}")
            values[param.name] = self.scale(phenotype.value(node_id), param)
        return values

    def scale(self, activation: float, param: ParamSpec) -> float:
        """Linear map from [-1, 1] onto the parameter range"""
        value = param.lo + (activation + 1.0) / 2.0 * (param.hi - param.lo)
        if param.rounding == "ceil":
            value = math.ceil(value - 1e-12)
        elif param.rounding == "round":
            value = math.floor(value + 0.5)
        return float(min(max(value, param.lo), param.hi))

    def adapt_io(self, genome: Genome, groups: Dict[str, List[str]], events: Sequence[EventSpec],
                 registry: InnovationRegistry, rng: np.random.Generator) -> Tuple[Genome, List[str]]:
        """
        Grow inputs and outputs for feature groups, features and events the genome
        has not seen; nothing is ever removed. Returns the genome and change flags
        """
        known_inputs = {(n.group, n.feature) for n in genome.nodes if n.role == NodeRole.INPUT}
        known_groups = {group for group, _ in known_inputs}
        known_events = set(genome.output_events())
        new_events = [e for e in events if e.tag not in known_events]
        new_inputs = [(g, f) for g, features in groups.items() for f in features if (g, f) not in known_inputs]
        if not new_events and not new_inputs:
            return genome, []

        adapted = genome.model_copy(deep=True)
        flags: List[str] = []

        if new_events:
            added = neat_service.add_outputs(adapted, new_events, registry)
            hidden = [n.id for n in adapted.nodes if n.role == NodeRole.HIDDEN]
            for node_id in added:
                for hidden_id in hidden:
                    neat_service.connect(adapted, hidden_id, node_id, registry, rng)
                neat_service.connect(adapted, BIAS_ID, node_id, registry, rng)
            flags.extend(f"event:{e.tag}" for e in new_events)

        outputs = [n.id for n in adapted.nodes
                   if n.role in (NodeRole.OUTPUT_CLASSIFICATION, NodeRole.OUTPUT_REGRESSION)]
        for group, features in groups.items():
            fresh = [f for f in features if (group, f) not in known_inputs]
            if not fresh:
                continue
            if group not in known_groups:
                neat_service.add_group(adapted, group, fresh, outputs, registry, rng)
                flags.append(f"group:{group}")
                continue
            hidden_id = registry.seed_hidden_node(group)
            for feature in fresh:
                input_id = registry.input_node(group, feature)
                adapted.nodes.append(NodeGene(id=input_id, role=NodeRole.INPUT, group=group, feature=feature))
                if adapted.node(hidden_id) is not None:
                    neat_service.connect(adapted, input_id, hidden_id, registry, rng)
                else:
                    for output_id in outputs:
                        neat_service.connect(adapted, input_id, output_id, registry, rng)
                flags.append(f"input:{group}.{feature}")
        adapted.sort_genes()
        logger.debug(f"Adapted genome {genome.key}: {', '.join(flags)}")
        return adapted, flags

    def input_sources(self, genome: Genome, node_id: int) -> List[str]:
        """Labels of the input features that feed a node through enabled connections"""
        if genome.node(node_id) is None:
            raise UnknownNodeError(f"unknown node {node_id}")
        graph = networkx.DiGraph()
        graph.add_nodes_from(genome.node_ids())
        graph.add_edges_from(c.key for c in genome.connections if c.enabled)
        upstream = networkx.ancestors(graph, node_id)
        return sorted(
            genome.node(n).label for n in upstream if genome.node(n).role == NodeRole.INPUT
        )


network_service = NetworkService()
