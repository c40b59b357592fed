from pydantic import BaseModel, Field
from typing import Dict, List, Optional, Tuple
from enum import Enum

BIAS_GROUP = "bias"
VARIABLES_GROUP = "variables"


class NodeRole(str, Enum):
    INPUT = "input"
    HIDDEN = "hidden"
    OUTPUT_CLASSIFICATION = "output_classification"
    OUTPUT_REGRESSION = "output_regression"
    BIAS = "bias"


class NodeGene(BaseModel):
    id: int
    role: NodeRole
    # inputs and seed hidden nodes: feature group; outputs: event tag
    group: Optional[str] = None
    # inputs: feature name; regression outputs: parameter name
    feature: Optional[str] = None

    @property
    def label(self) -> str:
        if self.feature is not None:
            return f"{self.group}.{self.feature}"
        return self.group or f"{self.role.value}:{self.id}"


class ConnectionGene(BaseModel):
    in_node: int
    out_node: int
    weight: float
    enabled: bool = True
    innovation: int

    @property
    def key(self) -> Tuple[int, int]:
        return (self.in_node, self.out_node)


class Genome(BaseModel):
    """NEAT genotype: node genes plus connection genes sorted by innovation"""
    key: int = 0
    nodes: List[NodeGene] = Field(default_factory=list)
    connections: List[ConnectionGene] = Field(default_factory=list)
    fitness: float = 0.0
    adjusted_fitness: float = 0.0
    species_id: Optional[int] = None

    def node(self, node_id: int) -> Optional[NodeGene]:
        return next((n for n in self.nodes if n.id == node_id), None)

    def node_ids(self) -> List[int]:
        return [n.id for n in self.nodes]

    def nodes_with_role(self, *roles: NodeRole) -> List[NodeGene]:
        return [n for n in self.nodes if n.role in roles]

    def connection(self, in_node: int, out_node: int) -> Optional[ConnectionGene]:
        return next((c for c in self.connections if c.in_node == in_node and c.out_node == out_node), None)

    def by_innovation(self) -> Dict[int, ConnectionGene]:
        return {c.innovation: c for c in self.connections}

    def sort_genes(self) -> None:
        self.nodes.sort(key=lambda n: n.id)
        self.connections.sort(key=lambda c: c.innovation)

    def input_groups(self) -> List[str]:
        groups: List[str] = []
        for node in self.nodes_with_role(NodeRole.INPUT):
            if node.group not in groups:
                groups.append(node.group)
        return groups

    def output_events(self) -> List[str]:
        return [n.group for n in self.nodes_with_role(NodeRole.OUTPUT_CLASSIFICATION)]


class NeatConfig(BaseModel):
    population_size: int = Field(300, gt=0)
    target_species: int = Field(10, gt=0)
    initial_threshold: float = Field(3.0, gt=0)
    threshold_step: float = Field(0.3, gt=0)
    min_threshold: float = Field(0.1, gt=0)
    c1: float = 1.0
    c2: float = 1.0
    c3: float = 0.4
    fresh_fraction: float = Field(0.10, ge=0, le=1)
    elitism: int = Field(1, ge=0)
    stale_generations: int = Field(15, gt=0)
    survival_share: float = Field(0.2, gt=0, le=1)
    crossover_prob: float = Field(0.75, ge=0, le=1)
    add_connection_prob: float = Field(0.1, ge=0, le=1)
    add_node_prob: float = Field(0.05, ge=0, le=1)
    weight_mutation_prob: float = Field(0.8, ge=0, le=1)
    perturb_prob: float = Field(0.9, ge=0, le=1)
    perturb_sigma: float = Field(0.2, gt=0)
    reset_prob: float = Field(0.1, ge=0, le=1)
    toggle_prob: float = Field(0.01, ge=0, le=1)
    reenable_prob: float = Field(0.25, ge=0, le=1)
    average_matching: bool = False


class Species(BaseModel):
    id: int
    representative: Genome
    members: List[Genome] = Field(default_factory=list)
    best_fitness: float = 0.0
    staleness: int = 0

    @property
    def adjusted_sum(self) -> float:
        return sum(g.adjusted_fitness for g in self.members)


class Population(BaseModel):
    genomes: List[Genome] = Field(default_factory=list)
    species: List[Species] = Field(default_factory=list)
    generation: int = 0
    threshold: float = 3.0
    next_species_id: int = 1
