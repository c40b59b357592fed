"""Tests for NEAT genotype operators."""

import copy

import numpy as np
import pytest

from app.core.exceptions import CycleError, GenomeError
from app.schemas.episode import EventKind, EventSpec, ParamSpec
from app.schemas.neat import ConnectionGene, Genome, NeatConfig, NodeGene, NodeRole, Population, Species
from app.services.neat_service import BIAS_ID, InnovationRegistry, neat_service

FOUR_OUTPUTS = [
    EventSpec(kind=EventKind.CLICK_STAGE),
    EventSpec(kind=EventKind.CLICK_SPRITE, target="A"),
    EventSpec(kind=EventKind.CLICK_SPRITE, target="B"),
    EventSpec(kind=EventKind.MOUSE_MOVE_TO, target="A"),
]
GROUPS = {"A": ["x", "y", "size"], "B": ["x", "y", "size"]}


def _seed(registry=None, seed=0, groups=None, outputs=None) -> Genome:
    return neat_service.seed_genome(
        groups or GROUPS, outputs or FOUR_OUTPUTS, registry or InnovationRegistry(), np.random.default_rng(seed),
    )


def _genes(*specs) -> Genome:
    """Genome with bare connection genes: (innovation, weight)"""
    return Genome(connections=[
        ConnectionGene(in_node=100 + i, out_node=200 + i, weight=w, innovation=i) for i, w in specs
    ])


def _chain(weight: float = 0.7):
    registry = InnovationRegistry()
    genome = Genome(key=registry.genome_key())
    input_id = registry.input_node("Cat", "x")
    output_id = registry.output_node("Wait")
    genome.nodes = [
        NodeGene(id=BIAS_ID, role=NodeRole.BIAS, group="bias"),
        NodeGene(id=input_id, role=NodeRole.INPUT, group="Cat", feature="x"),
        NodeGene(id=output_id, role=NodeRole.OUTPUT_CLASSIFICATION, group="Wait"),
    ]
    neat_service.connect(genome, input_id, output_id, registry, np.random.default_rng(0), weight=weight)
    return genome, registry, input_id, output_id


class TestSeeding:

    def test_seeding_rule(self) -> None:
        """2 groups of 3 features, 4 outputs: 6 + 8 inter-layer connections plus bias links."""
        genome = _seed()
        hidden = genome.nodes_with_role(NodeRole.HIDDEN)
        assert len(hidden) == 2
        assert len(genome.nodes_with_role(NodeRole.INPUT)) == 6
        hidden_ids = {n.id for n in hidden}
        input_to_hidden = [c for c in genome.connections if c.out_node in hidden_ids and c.in_node != BIAS_ID]
        hidden_to_output = [c for c in genome.connections if c.in_node in hidden_ids]
        bias = [c for c in genome.connections if c.in_node == BIAS_ID]
        assert len(input_to_hidden) == 6
        assert len(hidden_to_output) == 8
        assert len(bias) == 2 + 4
        assert all(-1.0 <= c.weight <= 1.0 for c in genome.connections)
        assert [c.innovation for c in genome.connections] == sorted(c.innovation for c in genome.connections)

    def test_single_group_single_output(self) -> None:
        genome = _seed(groups={"A": ["x"]}, outputs=[EventSpec(kind=EventKind.CLICK_STAGE)])
        roles = sorted(n.role.value for n in genome.nodes)
        assert roles == ["bias", "hidden", "input", "output_classification"]

    def test_regression_heads(self) -> None:
        wait = EventSpec(kind=EventKind.WAIT, params=[ParamSpec(name="duration_steps", lo=1, hi=30)])
        genome = _seed(outputs=[wait])
        heads = genome.nodes_with_role(NodeRole.OUTPUT_REGRESSION)
        assert [(n.group, n.feature) for n in heads] == [("Wait", "duration_steps")]

    def test_deterministic(self) -> None:
        assert _seed(seed=5) == _seed(seed=5)

    def test_shared_registry_aligns_genes(self) -> None:
        registry = InnovationRegistry()
        first, second = _seed(registry, seed=1), _seed(registry, seed=2)
        assert [c.key for c in first.connections] == [c.key for c in second.connections]
        assert [c.innovation for c in first.connections] == [c.innovation for c in second.connections]
        assert first.key != second.key

    def test_empty_inputs_rejected(self) -> None:
        with pytest.raises(GenomeError):
            neat_service.seed_genome({}, FOUR_OUTPUTS, InnovationRegistry(), np.random.default_rng(0))
        with pytest.raises(GenomeError):
            neat_service.seed_genome(GROUPS, [], InnovationRegistry(), np.random.default_rng(0))


class TestStructuralMutation:

    def test_add_node_split_rule(self) -> None:
        genome, registry, input_id, output_id = _chain(0.7)
        assert neat_service.add_node(genome, registry, np.random.default_rng(0))
        old = genome.connection(input_id, output_id)
        assert not old.enabled
        new_id = registry.split_node(old.innovation)
        assert genome.connection(input_id, new_id).weight == 1.0
        assert genome.connection(new_id, output_id).weight == 0.7
        neat_service.check_acyclic(genome)

    def test_same_edge_same_innovation(self) -> None:
        registry = InnovationRegistry()
        first, second = _seed(registry, seed=1), _seed(registry, seed=2)
        a_in = registry.input_node("A", "x")
        out = registry.output_node("ClickStage")
        one = neat_service.connect(first, a_in, out, registry, np.random.default_rng(0))
        two = neat_service.connect(second, a_in, out, registry, np.random.default_rng(1))
        assert one.innovation == two.innovation

    def test_saturated_genome(self) -> None:
        genome, registry, _, output_id = _chain()
        neat_service.connect(genome, BIAS_ID, output_id, registry, np.random.default_rng(0))
        assert neat_service.legal_new_connections(genome) == []
        before = genome.model_copy(deep=True)
        assert not neat_service.add_connection(genome, registry, np.random.default_rng(0))
        assert genome == before

    def test_repeated_mutation_stays_acyclic(self) -> None:
        registry = InnovationRegistry()
        rng = np.random.default_rng(3)
        config = NeatConfig(add_node_prob=0.5, add_connection_prob=0.9)
        genome = _seed(registry)
        for _ in range(40):
            genome = neat_service.mutate_structural(genome, registry, rng, config)
        neat_service.check_acyclic(genome)
        keys = [c.key for c in genome.connections]
        assert len(keys) == len(set(keys))

    def test_cycle_rejected_on_load(self) -> None:
        genome, registry, input_id, output_id = _chain()
        hidden = registry.seed_hidden_node("Cat")
        genome.nodes.append(NodeGene(id=hidden, role=NodeRole.HIDDEN, group="Cat"))
        genome.connections.append(ConnectionGene(in_node=output_id, out_node=hidden, weight=1.0, innovation=50))
        genome.connections.append(ConnectionGene(in_node=hidden, out_node=output_id, weight=1.0, innovation=51))
        with pytest.raises(CycleError):
            neat_service.load_genome(neat_service.dump_genome(genome))


class TestWeightMutation:

    def test_disabled_mutation_is_identity(self) -> None:
        genome = _seed()
        config = NeatConfig(perturb_prob=0.0, toggle_prob=0.0)
        assert neat_service.mutate_weights(genome, np.random.default_rng(0), config) == genome

    def test_topology_preserved(self) -> None:
        genome = _seed()
        child = neat_service.mutate_weights(genome, np.random.default_rng(0), NeatConfig(perturb_prob=1.0))
        assert [c.key for c in child.connections] == [c.key for c in genome.connections]
        assert child.connections != genome.connections

    def test_mean_shift_near_zero(self) -> None:
        genome, _, _, _ = _chain(0.0)
        config = NeatConfig(perturb_prob=1.0, reset_prob=0.0, toggle_prob=0.0)
        rng = np.random.default_rng(11)
        shifts = [neat_service.mutate_weights(genome, rng, config).connections[0].weight for _ in range(10_000)]
        assert abs(np.mean(shifts)) < 0.01


class TestCrossover:

    def test_identical_parents(self) -> None:
        genome = _seed()
        child = neat_service.crossover(genome, genome.model_copy(deep=True), np.random.default_rng(0), NeatConfig())
        assert [(c.innovation, c.key, c.enabled) for c in child.connections] == \
            [(c.innovation, c.key, c.enabled) for c in genome.connections]

    def test_excess_gene_from_weaker_parent_dropped(self) -> None:
        fitter = _seed()
        weaker = fitter.model_copy(deep=True)
        a_in = next(n.id for n in fitter.nodes if n.role == NodeRole.INPUT)
        out = next(n.id for n in fitter.nodes if n.role == NodeRole.OUTPUT_CLASSIFICATION)
        weaker.connections.append(ConnectionGene(in_node=a_in, out_node=out, weight=0.5, innovation=9_999))
        fitter.fitness, weaker.fitness = 2.0, 1.0
        child = neat_service.crossover(weaker, fitter, np.random.default_rng(0), NeatConfig())
        assert 9_999 not in child.by_innovation()
        assert set(child.by_innovation()) == set(fitter.by_innovation())

    def test_equal_fitness_takes_union(self) -> None:
        a = _seed()
        b = a.model_copy(deep=True)
        a_in = next(n.id for n in a.nodes if n.role == NodeRole.INPUT)
        out = next(n.id for n in a.nodes if n.role == NodeRole.OUTPUT_CLASSIFICATION)
        b.connections.append(ConnectionGene(in_node=a_in, out_node=out, weight=0.5, innovation=9_999))
        child = neat_service.crossover(a, b, np.random.default_rng(0), NeatConfig())
        assert 9_999 in child.by_innovation()

    def test_averaging_mode(self) -> None:
        a, _, _, _ = _chain(0.2)
        b, _, _, _ = _chain(0.6)
        child = neat_service.crossover(a, b, np.random.default_rng(0), NeatConfig(average_matching=True))
        assert child.connections[0].weight == pytest.approx(0.4)


class TestSpeciation:

    def test_identical_genomes_compatibility_zero(self) -> None:
        genome = _seed()
        assert neat_service.compatibility(genome, genome, NeatConfig()) == 0.0

    def test_compatibility_hand_example(self) -> None:
        """A = 1..5, B = 1,2,3,6: 3 matching (mean dw 0.5), 2 disjoint, 1 excess, N = 5."""
        a = _genes((1, 1.0), (2, 1.0), (3, 1.0), (4, 0.0), (5, 0.0))
        b = _genes((1, 0.5), (2, 0.5), (3, 0.5), (6, 0.0))
        config = NeatConfig()
        expected = 1.0 * 1 / 5 + 1.0 * 2 / 5 + 0.4 * 0.5
        assert neat_service.compatibility(a, b, config) == pytest.approx(expected)
        assert neat_service.compatibility(b, a, config) == pytest.approx(expected)

    def test_one_species_and_threshold_drop(self) -> None:
        genome = _seed()
        population = Population(genomes=[genome.model_copy(deep=True) for _ in range(10)], threshold=3.0)
        neat_service.speciate(population, NeatConfig(target_species=10))
        assert len(population.species) == 1
        assert population.threshold == pytest.approx(2.7)
        assert all(g.species_id == population.species[0].id for g in population.genomes)

    def test_threshold_kept_at_target(self) -> None:
        population = Population(genomes=[_seed()], threshold=3.0)
        neat_service.speciate(population, NeatConfig(target_species=1))
        assert population.threshold == 3.0

    def test_partition(self) -> None:
        registry = InnovationRegistry()
        rng = np.random.default_rng(2)
        config = NeatConfig(add_node_prob=0.8, add_connection_prob=0.8)
        genomes = [neat_service.mutate_structural(_seed(registry, seed=i), registry, rng, config) for i in range(30)]
        population = Population(genomes=genomes, threshold=0.5)
        neat_service.speciate(population, config)
        members = [g.key for s in population.species for g in s.members]
        assert sorted(members) == sorted(g.key for g in genomes)


class TestReproduction:

    def test_fresh_count(self) -> None:
        assert neat_service.fresh_count(NeatConfig(population_size=300, fresh_fraction=0.10)) == 30

    def test_quotas_largest_remainder(self) -> None:
        first = Species(id=1, representative=Genome(), members=[Genome(adjusted_fitness=3.0)])
        second = Species(id=2, representative=Genome(), members=[Genome(adjusted_fitness=1.0)])
        assert neat_service.allocate_quotas([first, second], 10) == {1: 8, 2: 2}

    def test_quotas_uniform_when_fitness_is_zero(self) -> None:
        species = [Species(id=i, representative=Genome(), members=[Genome()]) for i in (1, 2, 3)]
        assert neat_service.allocate_quotas(species, 9) == {1: 3, 2: 3, 3: 3}

    def test_generation_size_elites_and_fresh(self) -> None:
        registry = InnovationRegistry()
        rng = np.random.default_rng(8)
        config = NeatConfig(population_size=20, fresh_fraction=0.1, elitism=1)
        genomes = [_seed(registry, seed=i) for i in range(20)]
        for genome in genomes:
            genome.fitness = float(rng.random())
        best = max(genomes, key=lambda g: g.fitness)
        population = neat_service.speciate(Population(genomes=genomes), config)

        def factory(r):
            return neat_service.seed_genome(GROUPS, FOUR_OUTPUTS, registry, r)

        nxt = neat_service.reproduce_generation(population, registry, rng, config, factory)
        assert len(nxt.genomes) == 20
        assert nxt.generation == 1
        elite = next(g for g in nxt.genomes if g.key == best.key)
        assert elite.connections == best.connections
        fresh_keys = {g.key for g in nxt.genomes[-2:]}
        assert all(k > max(g.key for g in genomes) for k in fresh_keys)


class TestRegistry:

    def test_rebuilt_registry_reuses_ids(self) -> None:
        registry = InnovationRegistry()
        genome = _seed(registry)
        genome = neat_service.mutate_structural(genome, registry, np.random.default_rng(0),
                                                NeatConfig(add_node_prob=1.0, add_connection_prob=1.0))
        rebuilt = InnovationRegistry.from_genomes([genome])
        assert rebuilt.input_node("A", "x") == registry.input_node("A", "x")
        assert rebuilt.output_node("ClickStage") == registry.output_node("ClickStage")
        for connection in genome.connections:
            assert rebuilt.innovation(connection.in_node, connection.out_node) == connection.innovation
        assert rebuilt.genome_key() > genome.key

    def test_adopt_from_worker_copy(self) -> None:
        registry = InnovationRegistry()
        _seed(registry)
        worker = copy.deepcopy(registry)
        grown = _seed(worker, seed=3, groups={"C": ["x"]})
        adopted = registry.adopt(grown, worker)
        assert {n.id for n in adopted.nodes} == {n.id for n in grown.nodes}
        assert [c.innovation for c in adopted.connections] == [c.innovation for c in grown.connections]


def _pool(registry: InnovationRegistry, rng: np.random.Generator, size: int = 60):
    """Seeded genomes grown apart by random structural and weight mutation, with tied and untied fitness"""
    config = NeatConfig(add_node_prob=0.6, add_connection_prob=0.8, perturb_prob=1.0, toggle_prob=0.05)
    groups = {"A": ["x", "y"], "B": ["x"]}
    genomes = []
    for i in range(size):
        genome = neat_service.seed_genome(groups, FOUR_OUTPUTS[:2], registry, rng)
        for _ in range(int(rng.integers(0, 7))):
            genome = neat_service.mutate_structural(genome, registry, rng, config)
        genome = neat_service.mutate_weights(genome, rng, config)
        genome.fitness = float(rng.choice([0.5, 1.0, 1.5]))
        genomes.append(genome)
    return genomes


class TestRandomPairs:

    def test_crossover_and_compatibility(self) -> None:
        registry = InnovationRegistry()
        rng = np.random.default_rng(31)
        pool = _pool(registry, rng)
        config = NeatConfig()
        for genome in pool:
            for connection in genome.connections:
                assert registry.innovation(connection.in_node, connection.out_node) == connection.innovation

        for _ in range(10_000):
            a, b = (pool[int(i)] for i in rng.integers(len(pool), size=2))
            genes_a, genes_b = a.by_innovation(), b.by_innovation()
            for innovation in set(genes_a) & set(genes_b):
                assert genes_a[innovation].key == genes_b[innovation].key

            child = neat_service.crossover(a, b, rng, config)
            genes = child.by_innovation()
            neat_service.check_acyclic(child)
            if a.fitness == b.fitness:
                assert set(genes) <= set(genes_a) | set(genes_b)
            else:
                fitter = genes_a if a.fitness > b.fitness else genes_b
                assert set(genes) == set(fitter)
            for innovation, gene in genes.items():
                parents = [g for g in (genes_a.get(innovation), genes_b.get(innovation)) if g is not None]
                assert gene.key == parents[0].key
                assert gene.weight in {p.weight for p in parents}
                if all(p.enabled for p in parents):
                    assert gene.enabled
            node_ids = set(child.node_ids())
            assert all(c.in_node in node_ids and c.out_node in node_ids for c in child.connections)

            distance = neat_service.compatibility(a, b, config)
            assert distance >= 0.0
            assert distance == pytest.approx(neat_service.compatibility(b, a, config))
            assert neat_service.compatibility(a, a, config) == 0.0

    def test_speciation_partitions_and_moves_threshold(self) -> None:
        registry = InnovationRegistry()
        rng = np.random.default_rng(32)
        pool = _pool(registry, rng)
        for _ in range(300):
            picks = rng.choice(len(pool), size=int(rng.integers(1, 41)), replace=True)
            genomes = [pool[int(i)].model_copy(deep=True) for i in picks]
            for position, genome in enumerate(genomes):
                genome.key = position
            config = NeatConfig(target_species=int(rng.integers(1, 16)))
            before = float(rng.uniform(0.1, 4.0))
            population = neat_service.speciate(Population(genomes=genomes, threshold=before), config)

            members = sorted(g.key for s in population.species for g in s.members)
            assert members == list(range(len(genomes)))
            ids = [s.id for s in population.species]
            assert len(ids) == len(set(ids))
            for species in population.species:
                assert species.members
                assert species.representative.key == species.members[0].key
                assert all(g.species_id == species.id for g in species.members)

            count = len(population.species)
            if count < config.target_species:
                assert population.threshold == pytest.approx(max(config.min_threshold,
                                                                 before - config.threshold_step))
            elif count > config.target_species:
                assert population.threshold == pytest.approx(before + config.threshold_step)
            else:
                assert population.threshold == before

    def test_species_count_settles_near_target(self) -> None:
        """Ten structural clusters drifting in weight space: the count must reach 7..13 for a target of 10."""
        registry = InnovationRegistry()
        rng = np.random.default_rng(33)
        drift = NeatConfig(perturb_prob=1.0, perturb_sigma=0.02, reset_prob=0.0, toggle_prob=0.0)
        config = NeatConfig(target_species=10)
        genomes = []
        for cluster in range(10):
            base = neat_service.seed_genome({f"G{cluster}": ["x", "y"]}, FOUR_OUTPUTS, registry, rng)
            for _ in range(10):
                member = neat_service.mutate_weights(base, rng, drift)
                member.key = registry.genome_key()
                genomes.append(member)
        order = rng.permutation(len(genomes))
        population = Population(genomes=[genomes[int(i)] for i in order], threshold=config.initial_threshold)

        counts = []
        for _ in range(50):
            neat_service.speciate(population, config)
            counts.append(len(population.species))
            population.genomes = [neat_service.mutate_weights(g, rng, drift) for g in population.genomes]
        assert 7 <= counts[-1] <= 13, counts
