import logging
import math
import threading
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import networkx
import numpy as np

from ..core.exceptions import CycleError, GenomeError
from ..schemas.episode import EventSpec
from ..schemas.neat import (
    BIAS_GROUP,
    ConnectionGene,
    Genome,
    NeatConfig,
    NodeGene,
    NodeRole,
    Population,
    Species,
)

logger = logging.getLogger(__name__)

BIAS_ID = 0

SeedFactory = Callable[[np.random.Generator], Genome]


def _node_key(node: NodeGene) -> tuple:
    if node.role == NodeRole.BIAS:
        return ("bias",)
    if node.role == NodeRole.INPUT:
        return ("input", node.group, node.feature)
    if node.role == NodeRole.OUTPUT_CLASSIFICATION:
        return ("output", node.group)
    if node.role == NodeRole.OUTPUT_REGRESSION:
        return ("regression", node.group, node.feature)
    if node.group is not None:
        return ("seed", node.group)
    # split nodes do not record the connection they replaced
    return ("restored", node.id)


class InnovationRegistry:
    """
    Global bookkeeping of node ids and innovation numbers.

    Keyed nodes (inputs, outputs, regression heads, seed hidden nodes, split nodes)
    always receive the same id, so equal structure means equal genes across genomes.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self.next_node = BIAS_ID + 1
        self.next_innovation = 1
        self.next_genome = 1
        self.node_keys: Dict[tuple, int] = {("bias",): BIAS_ID}
        self.innovations: Dict[Tuple[int, int], int] = {}

    @classmethod
    def from_genomes(cls, genomes: Sequence[Genome]) -> "InnovationRegistry":
        """Rebuild a registry consistent with persisted genomes"""
        registry = cls()
        for genome in genomes:
            for node in genome.nodes:
                registry.node_keys.setdefault(_node_key(node), node.id)
                registry.next_node = max(registry.next_node, node.id + 1)
            for connection in genome.connections:
                registry.innovations.setdefault(connection.key, connection.innovation)
                registry.next_innovation = max(registry.next_innovation, connection.innovation + 1)
            registry.next_genome = max(registry.next_genome, genome.key + 1)
        return registry

    def __getstate__(self):
        state = self.__dict__.copy()
        del state["_lock"]
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._lock = threading.Lock()

    def node_id(self, key: tuple) -> int:
        with self._lock:
            if key not in self.node_keys:
                self.node_keys[key] = self.next_node
                self.next_node += 1
            return self.node_keys[key]

    def input_node(self, group: str, feature: str) -> int:
        return self.node_id(("input", group, feature))

    def output_node(self, tag: str) -> int:
        return self.node_id(("output", tag))

    def regression_node(self, tag: str, param: str) -> int:
        return self.node_id(("regression", tag, param))

    def seed_hidden_node(self, group: str) -> int:
        return self.node_id(("seed", group))

    def split_node(self, innovation: int) -> int:
        return self.node_id(("split", innovation))

    def innovation(self, in_node: int, out_node: int) -> int:
        with self._lock:
            key = (in_node, out_node)
            if key not in self.innovations:
                self.innovations[key] = self.next_innovation
                self.next_innovation += 1
            return self.innovations[key]

    def genome_key(self) -> int:
        with self._lock:
            key = self.next_genome
            self.next_genome += 1
            return key

    def adopt(self, genome: Genome, source: "InnovationRegistry") -> Genome:
        """
        Re-key a genome grown against another registry copy (e.g. in a worker
        process) so its node ids and innovations agree with this registry
        """
        reverse = {value: key for key, value in source.node_keys.items()}
        mapping: Dict[int, int] = {}
        for node in genome.nodes:
            key = reverse.get(node.id)
            if key is None:
                raise GenomeError(f"node {node.id} has no registry key")
            mapping[node.id] = self.node_id(key)
        adopted = genome.model_copy(deep=True)
        for node in adopted.nodes:
            node.id = mapping[node.id]
        for connection in adopted.connections:
            connection.in_node = mapping[connection.in_node]
            connection.out_node = mapping[connection.out_node]
            connection.innovation = self.innovation(connection.in_node, connection.out_node)
        adopted.sort_genes()
        return adopted


class NeatService:
    """NEAT genotype operators: seeding, mutation, crossover, speciation, turnover"""

    # ---------------------------------------------------------------- seeding

    def seed_genome(self, groups: Dict[str, List[str]], outputs: Sequence[EventSpec],
                    registry: InnovationRegistry, rng: np.random.Generator) -> Genome:
        """
        One hidden node per feature group, fully connected to its group's inputs
        and to every output; bias feeds hidden and output nodes
        """
        if not groups or not any(groups.values()):
            raise GenomeError("a genome needs at least one input group")
        if not outputs:
            raise GenomeError("a genome needs at least one output")
        genome = Genome(key=registry.genome_key())
        genome.nodes.append(NodeGene(id=BIAS_ID, role=NodeRole.BIAS, group=BIAS_GROUP))
        output_ids = self.add_outputs(genome, outputs, registry)
        for group, features in groups.items():
            self.add_group(genome, group, features, output_ids, registry, rng)
        for node_id in output_ids:
            self.connect(genome, BIAS_ID, node_id, registry, rng)
        genome.sort_genes()
        return genome

    def add_outputs(self, genome: Genome, outputs: Sequence[EventSpec], registry: InnovationRegistry) -> List[int]:
        added: List[int] = []
        for event in outputs:
            node_id = registry.output_node(event.tag)
            if genome.node(node_id) is None:
                genome.nodes.append(NodeGene(id=node_id, role=NodeRole.OUTPUT_CLASSIFICATION, group=event.tag))
                added.append(node_id)
            for param in event.params:
                reg_id = registry.regression_node(event.tag, param.name)
                if genome.node(reg_id) is None:
                    genome.nodes.append(NodeGene(
                        id=reg_id, role=NodeRole.OUTPUT_REGRESSION, group=event.tag, feature=param.name,
                    ))
                    added.append(reg_id)
        return added

    def add_group(self, genome: Genome, group: str, features: List[str], output_ids: List[int],
                  registry: InnovationRegistry, rng: np.random.Generator) -> int:
        hidden_id = registry.seed_hidden_node(group)
        if genome.node(hidden_id) is None:
            genome.nodes.append(NodeGene(id=hidden_id, role=NodeRole.HIDDEN, group=group))
            self.connect(genome, BIAS_ID, hidden_id, registry, rng)
        for feature in features:
            input_id = registry.input_node(group, feature)
            if genome.node(input_id) is None:
                genome.nodes.append(NodeGene(id=input_id, role=NodeRole.INPUT, group=group, feature=feature))
            self.connect(genome, input_id, hidden_id, registry, rng)
        for output_id in output_ids:
            self.connect(genome, hidden_id, output_id, registry, rng)
        return hidden_id

    def connect(self, genome: Genome, in_node: int, out_node: int, registry: InnovationRegistry,
                rng: np.random.Generator, weight: Optional[float] = None) -> Optional[ConnectionGene]:
        if genome.connection(in_node, out_node) is not None:
            return None
        connection = ConnectionGene(
            in_node=in_node,
            out_node=out_node,
            weight=float(rng.uniform(-1.0, 1.0)) if weight is None else weight,
            innovation=registry.innovation(in_node, out_node),
        )
        genome.connections.append(connection)
        return connection

    # ---------------------------------------------------------------- mutation

    def _graph(self, genome: Genome) -> networkx.DiGraph:
        graph = networkx.DiGraph()
        graph.add_nodes_from(genome.node_ids())
        graph.add_edges_from(c.key for c in genome.connections)
        return graph

    def check_acyclic(self, genome: Genome) -> None:
        if not networkx.is_directed_acyclic_graph(self._graph(genome)):
            raise CycleError(f"genome {genome.key} contains a cycle")

    def legal_new_connections(self, genome: Genome) -> List[Tuple[int, int]]:
        graph = self._graph(genome)
        sources = [n.id for n in genome.nodes if n.role in (NodeRole.INPUT, NodeRole.BIAS, NodeRole.HIDDEN)]
        targets = [n.id for n in genome.nodes
                   if n.role in (NodeRole.HIDDEN, NodeRole.OUTPUT_CLASSIFICATION, NodeRole.OUTPUT_REGRESSION)]
        legal: List[Tuple[int, int]] = []
        for source in sources:
            for target in targets:
                if source == target or graph.has_edge(source, target):
                    continue
                # target must not already reach source
                if networkx.has_path(graph, target, source):
                    continue
                legal.append((source, target))
        return legal

    def add_connection(self, genome: Genome, registry: InnovationRegistry, rng: np.random.Generator) -> bool:
        legal = self.legal_new_connections(genome)
        if not legal:
            return False
        in_node, out_node = legal[int(rng.integers(len(legal)))]
        self.connect(genome, in_node, out_node, registry, rng)
        return True

    def add_node(self, genome: Genome, registry: InnovationRegistry, rng: np.random.Generator) -> bool:
        enabled = [c for c in genome.connections if c.enabled]
        if not enabled:
            return False
        old = enabled[int(rng.integers(len(enabled)))]
        new_id = registry.split_node(old.innovation)
        if genome.node(new_id) is not None:
            return False
        old.enabled = False
        genome.nodes.append(NodeGene(id=new_id, role=NodeRole.HIDDEN))
        self.connect(genome, old.in_node, new_id, registry, rng, weight=1.0)
        self.connect(genome, new_id, old.out_node, registry, rng, weight=old.weight)
        return True

    def mutate_structural(self, genome: Genome, registry: InnovationRegistry, rng: np.random.Generator,
                          config: NeatConfig) -> Genome:
        child = genome.model_copy(deep=True)
        if rng.random() < config.add_node_prob:
            self.add_node(child, registry, rng)
        if rng.random() < config.add_connection_prob:
            self.add_connection(child, registry, rng)
        child.sort_genes()
        self.check_acyclic(child)
        return child

    def mutate_weights(self, genome: Genome, rng: np.random.Generator, config: NeatConfig) -> Genome:
        child = genome.model_copy(deep=True)
        for connection in child.connections:
            if rng.random() < config.perturb_prob:
                if rng.random() < config.reset_prob:
                    connection.weight = float(rng.uniform(-1.0, 1.0))
                else:
                    connection.weight += float(rng.normal(0.0, config.perturb_sigma))
            if rng.random() < config.toggle_prob:
                connection.enabled = not connection.enabled
        return child

    # --------------------------------------------------------------- crossover

    def crossover(self, a: Genome, b: Genome, rng: np.random.Generator, config: NeatConfig) -> Genome:
        """
        Align genes by innovation; disjoint and excess genes come from the fitter
        parent, or from both when fitness is equal
        """
        if a.fitness > b.fitness:
            fitter, other, equal = a, b, False
        elif b.fitness > a.fitness:
            fitter, other, equal = b, a, False
        else:
            fitter, other, equal = a, b, True
        genes_fitter = fitter.by_innovation()
        genes_other = other.by_innovation()
        innovations = sorted(set(genes_fitter) | set(genes_other)) if equal else sorted(genes_fitter)

        child = Genome(key=0)
        nodes: Dict[int, NodeGene] = {n.id: n.model_copy() for n in fitter.nodes}
        if equal:
            for node in other.nodes:
                nodes.setdefault(node.id, node.model_copy())
        graph = networkx.DiGraph()
        graph.add_nodes_from(nodes)

        for innovation in innovations:
            mine = genes_fitter.get(innovation)
            theirs = genes_other.get(innovation)
            if mine is not None and theirs is not None:
                base = mine if rng.random() < 0.5 else theirs
                gene = base.model_copy()
                if config.average_matching:
                    gene.weight = (mine.weight + theirs.weight) / 2.0
                if not (mine.enabled and theirs.enabled):
                    gene.enabled = bool(rng.random() < config.reenable_prob)
            else:
                gene = (mine or theirs).model_copy()
            # a union of two acyclic parents may close a loop
            if networkx.has_path(graph, gene.out_node, gene.in_node):
                continue
            graph.add_edge(gene.in_node, gene.out_node)
            child.connections.append(gene)
        child.nodes = list(nodes.values())
        child.sort_genes()
        return child

    # -------------------------------------------------------------- speciation

    def compatibility(self, a: Genome, b: Genome, config: NeatConfig) -> float:
        genes_a = a.by_innovation()
        genes_b = b.by_innovation()
        if not genes_a and not genes_b:
            return 0.0
        cutoff = min(max(genes_a, default=0), max(genes_b, default=0))
        matching = set(genes_a) & set(genes_b)
        unmatched = set(genes_a) ^ set(genes_b)
        excess = sum(1 for i in unmatched if i > cutoff)
        disjoint = len(unmatched) - excess
        n = max(len(genes_a), len(genes_b), 1)
        mean_diff = (
            sum(abs(genes_a[i].weight - genes_b[i].weight) for i in matching) / len(matching) if matching else 0.0
        )
        return config.c1 * excess / n + config.c2 * disjoint / n + config.c3 * mean_diff

    def speciate(self, population: Population, config: NeatConfig) -> Population:
        """
        First-fit assignment against species representatives, then move the
        threshold one step toward the targeted species count
        """
        for species in population.species:
            species.members = []
        for genome in population.genomes:
            home = next(
                (s for s in population.species
                 if self.compatibility(genome, s.representative, config) < population.threshold),
                None,
            )
            if home is None:
                home = Species(id=population.next_species_id, representative=genome)
                population.next_species_id += 1
                population.species.append(home)
            home.members.append(genome)
            genome.species_id = home.id
        population.species = [s for s in population.species if s.members]
        for species in population.species:
            species.representative = species.members[0]

        count = len(population.species)
        if count < config.target_species:
            population.threshold = max(config.min_threshold, population.threshold - config.threshold_step)
        elif count > config.target_species:
            population.threshold += config.threshold_step
        logger.debug(f"Speciated {len(population.genomes)} genomes into {count} species (threshold {population.threshold:.2f})")
        return population

    # ---------------------------------------------------------------- turnover

    def fresh_count(self, config: NeatConfig) -> int:
        return int(math.floor(config.population_size * config.fresh_fraction + 0.5))

    def allocate_quotas(self, species: List[Species], total: int) -> Dict[int, int]:
        """Offspring per species proportional to adjusted fitness, largest remainder"""
        if not species or total <= 0:
            return {s.id: 0 for s in species}
        sums = [max(0.0, s.adjusted_sum) for s in species]
        grand = sum(sums)
        if grand <= 0:
            sums = [1.0] * len(species)
            grand = float(len(species))
        raw = [total * value / grand for value in sums]
        quotas = [int(math.floor(r)) for r in raw]
        remainder = total - sum(quotas)
        order = sorted(range(len(species)), key=lambda i: (-(raw[i] - quotas[i]), species[i].id))
        for i in order[:remainder]:
            quotas[i] += 1
        return {s.id: q for s, q in zip(species, quotas)}

    def reproduce_generation(self, population: Population, registry: InnovationRegistry,
                             rng: np.random.Generator, config: NeatConfig, seed_factory: SeedFactory) -> Population:
        """
        Next generation: elitism and offspring per species, plus a fresh share of
        seeded genomes; the population size is preserved exactly
        """
        if not population.species:
            self.speciate(population, config)

        for species in population.species:
            best = max(g.fitness for g in species.members)
            if best > species.best_fitness:
                species.best_fitness = best
                species.staleness = 0
            else:
                species.staleness += 1
        surviving = [s for s in population.species if s.staleness < config.stale_generations]
        if not surviving:
            surviving = [max(population.species, key=lambda s: (s.best_fitness, -s.id))]

        for species in surviving:
            for genome in species.members:
                genome.adjusted_fitness = genome.fitness / len(species.members)

        fresh = self.fresh_count(config)
        quotas = self.allocate_quotas(surviving, config.population_size - fresh)
        offspring: List[Genome] = []
        for species in surviving:
            quota = quotas[species.id]
            if quota <= 0:
                continue
            ranked = sorted(species.members, key=lambda g: g.fitness, reverse=True)
            elites = min(config.elitism, quota, len(ranked))
            offspring.extend(g.model_copy(deep=True) for g in ranked[:elites])
            pool = ranked[: max(1, int(math.ceil(config.survival_share * len(ranked))))]
            for _ in range(quota - elites):
                offspring.append(self._breed(pool, registry, rng, config))

        for _ in range(fresh):
            offspring.append(seed_factory(rng))

        for species in surviving:
            species.members = []
        return Population(
            genomes=offspring,
            species=surviving,
            generation=population.generation + 1,
            threshold=population.threshold,
            next_species_id=population.next_species_id,
        )

    def _breed(self, pool: List[Genome], registry: InnovationRegistry, rng: np.random.Generator,
               config: NeatConfig) -> Genome:
        if len(pool) > 1 and rng.random() < config.crossover_prob:
            first, second = rng.choice(len(pool), size=2, replace=False)
            child = self.crossover(pool[int(first)], pool[int(second)], rng, config)
        else:
            child = pool[int(rng.integers(len(pool)))].model_copy(deep=True)
        child = self.mutate_structural(child, registry, rng, config)
        if rng.random() < config.weight_mutation_prob:
            child = self.mutate_weights(child, rng, config)
        child.key = registry.genome_key()
        child.fitness = 0.0
        child.adjusted_fitness = 0.0
        child.species_id = None
        return child

    # ----------------------------------------------------------- persistence

    def dump_genome(self, genome: Genome) -> str:
        return genome.model_dump_json(indent=2)

    def load_genome(self, text: str) -> Genome:
        genome = Genome.model_validate_json(text)
        genome.sort_genes()
        self.check_acyclic(genome)
        return genome


neat_service = NeatService()
