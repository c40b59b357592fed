import copy
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..core.config import RunConfig
from ..core.exceptions import FitnessError
from ..schemas.episode import EpisodeResult
from ..schemas.fitness import FitnessReport, RobustnessOutcome, SearchState
from ..schemas.game import GameSpec
from ..schemas.harness import (
    CoverageRow,
    DynamicTestSuite,
    GenerationLog,
    MutationReport,
    MutationRow,
    StaticSuite,
    SuiteEntry,
)
from ..schemas.neat import Genome, NeatConfig, Population
from ..schemas.oracle import Decision
from .cdg_service import cdg_service
from .fitness_service import BranchDistanceTracker, fitness_service
from .game_spec_service import ENTRY_ID, SpecIndex
from .game_vm_service import game_vm_service
from .mutation_service import mutation_service
from .neat_service import InnovationRegistry, neat_service
from .oracle_service import oracle_service
from .play_service import play_service

logger = logging.getLogger(__name__)

SEED_LIMIT = 2 ** 31 - 1


@dataclass
class EvaluationTask:
    genome: Genome
    spec: GameSpec
    target: str
    seed: int
    robustness_seed: int
    registry: InnovationRegistry
    r_d: int
    max_steps: int
    early_abort: bool = False


@dataclass
class EvaluationOutcome:
    genome: Genome
    report: FitnessReport
    coverage: List[str]
    registry: InnovationRegistry
    robustness: Optional[RobustnessOutcome] = None
    seed: int = 0

    @property
    def coverages(self) -> List[List[str]]:
        """Coverage of the original episode followed by every reseeded one"""
        return [self.coverage] + (self.robustness.coverages if self.robustness else [])


def evaluate_task(task: EvaluationTask) -> EvaluationOutcome:
    """Play, score and, when the target was hit, robustness-check one network"""
    cdg = cdg_service.build_cdg(task.spec)
    index = SpecIndex(task.spec)
    tracker = BranchDistanceTracker(task.spec, cdg, task.target, index)
    stop_at = None if task.target == ENTRY_ID else task.target
    result = play_service.run_episode(task.genome, task.spec, task.seed, stop_at, task.max_steps, task.registry,
                                      observer=tracker.observe, record_trace=False)
    report = fitness_service.evaluate_episode(result, task.target, cdg, index, tracker)
    robustness = None
    if report.covered:
        robustness = fitness_service.robustness_check(
            result.genome, task.spec, task.target, task.r_d, np.random.default_rng(task.robustness_seed),
            task.registry, task.max_steps, task.early_abort,
        )
        report.fitness = fitness_service.network_fitness(0.0, robustness)
    return EvaluationOutcome(genome=result.genome, report=report, coverage=result.coverage,
                             registry=task.registry, robustness=robustness, seed=task.seed)


@dataclass
class GenerationRun:
    suite: DynamicTestSuite
    logs: List[GenerationLog] = field(default_factory=list)
    registry: Optional[InnovationRegistry] = None


class SearchService:
    """Test generation loop, random baseline, suite execution and mutation analysis"""

    # ----------------------------------------------------------------- helpers

    def _seeds(self, rng: np.random.Generator, count: int) -> List[int]:
        return [int(s) for s in rng.integers(0, SEED_LIMIT, size=count)]

    def _budget_left(self, config: RunConfig, started: float, generation: int) -> bool:
        if generation >= config.max_generations:
            return False
        if config.budget_seconds is not None and time.monotonic() - started >= config.budget_seconds:
            return False
        return True

    def _seed_factory(self, spec: GameSpec, registry: InnovationRegistry, seed: int):
        state = game_vm_service.init_vm(spec, seed)
        plan = play_service.plan(spec)
        groups = play_service.extract_features(state, spec, plan).groups()
        events = play_service.event_inventory(state, spec, plan)
        return lambda rng: neat_service.seed_genome(groups, events, registry, rng)

    def generate_population(self, solutions: Sequence[Genome], registry: InnovationRegistry,
                            rng: np.random.Generator, neat_config: NeatConfig, seed_factory) -> Population:
        """
        Mutated clones of earlier solutions plus a fresh share of seeded networks;
        all fresh while nothing was admitted yet
        """
        fresh = neat_service.fresh_count(neat_config) if solutions else neat_config.population_size
        parents = list(reversed(solutions))
        genomes: List[Genome] = []
        for i in range(neat_config.population_size - fresh):
            child = neat_service.mutate_structural(parents[i % len(parents)], registry, rng, neat_config)
            child = neat_service.mutate_weights(child, rng, neat_config)
            child.key = registry.genome_key()
            child.fitness = 0.0
            child.adjusted_fitness = 0.0
            child.species_id = None
            genomes.append(child)
        genomes.extend(seed_factory(rng) for _ in range(fresh))
        return Population(genomes=genomes, threshold=neat_config.initial_threshold)

    def evaluate_population(self, genomes: List[Genome], spec: GameSpec, target: str, config: RunConfig,
                            rng: np.random.Generator, registry: InnovationRegistry) -> List[EvaluationOutcome]:
        """Evaluate every network; outcomes come back in genome order whatever the worker count"""
        seeds = self._seeds(rng, 2 * len(genomes))
        tasks = [
            EvaluationTask(
                genome=genome, spec=spec, target=target, seed=seeds[2 * i], robustness_seed=seeds[2 * i + 1],
                registry=copy.deepcopy(registry), r_d=config.r_d, max_steps=config.max_steps,
                early_abort=config.robustness_early_abort,
            )
            for i, genome in enumerate(genomes)
        ]
        if config.workers <= 1:
            return [evaluate_task(task) for task in tasks]
        with ProcessPoolExecutor(max_workers=config.workers) as executor:
            return list(executor.map(evaluate_task, tasks))

    # ---------------------------------------------------------------- generate

    def cmd_generate(self, spec: GameSpec, config: RunConfig) -> GenerationRun:
        """
        Evolve one network per target until it covers the target on r_d seeds,
        then move on; stops when the budget runs out or nothing reachable is left
        """
        started = time.monotonic()
        rng = np.random.default_rng(config.master_seed)
        neat_config = config.neat_config()
        registry = InnovationRegistry()
        cdg = cdg_service.build_cdg(spec)
        statements = spec.statement_ids()
        state = SearchState(stagnation_limit=config.stagnation_limit)
        suite = DynamicTestSuite(game=spec.name, master_seed=config.master_seed, r_d=config.r_d,
                                 max_steps=config.max_steps, statements=len(statements))
        run = GenerationRun(suite=suite, registry=registry)
        seed_factory = self._seed_factory(spec, registry, config.master_seed)
        solutions: List[Genome] = []
        population: Optional[Population] = None
        generation = 0

        while True:
            uncovered = [s for s in statements if s not in state.covered]
            if not uncovered:
                break
            if not self._budget_left(config, started, generation):
                suite.budget_exhausted = True
                logger.warning(f"Budget exhausted after {generation} generation(s); "
                               f"{len(uncovered)} statement(s) left uncovered")
                break
            if state.target is None:
                try:
                    state.target = fitness_service.select_target(cdg, state, rng)
                except FitnessError as e:
                    logger.warning(f"Stopping search: {e}")
                    break
                state.stagnation = 0
                state.best_fitness = 0.0
                population = self.generate_population(solutions, registry, rng, neat_config, seed_factory)

            outcomes = self.evaluate_population(population.genomes, spec, state.target, config, rng, registry)
            genomes: List[Genome] = []
            for outcome in outcomes:
                genome = registry.adopt(outcome.genome, outcome.registry)
                genome.fitness = outcome.report.fitness
                genomes.append(genome)
            population.genomes = genomes
            reached = {s for outcome in outcomes for s in outcome.coverage}
            state.mark_accidental(sorted(reached - set(state.covered)))

            log = GenerationLog(generation=generation, target=state.target, statements=len(statements),
                                best_fitness=max((g.fitness for g in genomes), default=0.0))
            admitted = next(
                (i for i, g in enumerate(genomes) if fitness_service.admitted(g.fitness, config.r_d)), None,
            )
            if admitted is not None:
                outcome, genome = outcomes[admitted], genomes[admitted]
                still_uncovered = [s for s in statements if s not in state.covered and s != state.target]
                collateral = sorted(fitness_service.collateral_robustness(outcome.coverages, still_uncovered))
                suite.entries.append(SuiteEntry(
                    target=state.target, genome=genome, r_c=outcome.robustness.r_c,
                    seeds=[outcome.seed] + outcome.robustness.seeds, generation=generation, collateral=collateral,
                ))
                state.mark_covered([state.target] + collateral)
                solutions.append(genome)
                log.admitted = [state.target] + collateral
                logger.info(f"Generation {generation}: network {genome.key} covers {state.target} robustly "
                            f"(+{len(collateral)} collateral)")
                state.target = None
            else:
                neat_service.speciate(population, neat_config)
                log.species = len(population.species)
                log.threshold = population.threshold
                log.switched = fitness_service.register_stagnation(state, log.best_fitness)
                if not log.switched:
                    population = neat_service.reproduce_generation(population, registry, rng, neat_config,
                                                                   seed_factory)

            suite.covered = [s for s in statements if s in state.covered]
            log.covered = len(suite.covered)
            log.elapsed_seconds = time.monotonic() - started
            run.logs.append(log)
            logger.info(f"Generation {generation}: target {log.target}, best f {log.best_fitness:.4f}, "
                        f"species {log.species}, threshold {log.threshold:.2f}, "
                        f"coverage {log.covered}/{len(statements)}")
            generation += 1

        suite.generations = generation
        return run

    # ------------------------------------------------------------------ random

    def cmd_random_baseline(self, spec: GameSpec, config: RunConfig) -> StaticSuite:
        """
        Uniformly random inputs recorded as static tests; a statement counts once
        its recorded test re-covers it on r_d - 1 further seeds
        """
        started = time.monotonic()
        rng = np.random.default_rng(config.master_seed)
        statements = spec.statement_ids()
        suite = StaticSuite(game=spec.name, master_seed=config.master_seed, max_steps=config.max_steps,
                            statements=len(statements))
        robust: set = set()
        budget = config.max_generations * config.population_size
        while suite.episodes < budget and len(robust) < len(statements):
            if config.budget_seconds is not None and time.monotonic() - started >= config.budget_seconds:
                break
            seed = int(rng.integers(0, SEED_LIMIT))
            result = play_service.run_random_episode(spec, seed, rng, config.max_steps)
            suite.episodes += 1
            fresh = set(result.coverage) - robust
            if not fresh:
                continue
            test = play_service.extract_static_test(result)
            for replay_seed in self._seeds(rng, config.r_d - 1):
                fresh &= set(play_service.replay_static_test(test, spec, replay_seed).coverage)
                if not fresh:
                    break
            if fresh:
                robust |= fresh
                suite.tests.append(test)
                logger.debug(f"Random episode {suite.episodes} robustly covers {len(fresh)} new statement(s)")
        suite.covered = [s for s in statements if s in robust]
        logger.info(f"Random baseline: {suite.episodes} episode(s), {len(suite.tests)} test(s), "
                    f"coverage {len(suite.covered)}/{len(statements)}")
        return suite

    # --------------------------------------------------------------- run suite

    def run_dynamic(self, suite: DynamicTestSuite, spec: GameSpec, seed: int,
                    registry: Optional[InnovationRegistry] = None) -> List[EpisodeResult]:
        registry = registry or InnovationRegistry.from_genomes([e.genome for e in suite.entries])
        return [
            play_service.run_episode(entry.genome, spec, seed, None if entry.target == ENTRY_ID else entry.target,
                                     suite.max_steps, registry, record_trace=False)
            for entry in suite.entries
        ]

    def run_static(self, suite: StaticSuite, spec: GameSpec, seed: int) -> List[EpisodeResult]:
        return [play_service.replay_static_test(test, spec, seed) for test in suite.tests]

    def extract_static_suite(self, suite: DynamicTestSuite, spec: GameSpec) -> StaticSuite:
        """
        Record the input sequence each network plays on the seed it was admitted
        with; the static suite covers what those recordings cover on their own seeds
        """
        registry = InnovationRegistry.from_genomes([e.genome for e in suite.entries])
        statements = spec.statement_ids()
        static = StaticSuite(game=suite.game, master_seed=suite.master_seed, max_steps=suite.max_steps,
                             statements=len(statements))
        covered: set = set()
        for entry in suite.entries:
            seed = entry.seeds[0] if entry.seeds else suite.master_seed
            stop_at = None if entry.target == ENTRY_ID else entry.target
            result = play_service.run_episode(entry.genome, spec, seed, stop_at, suite.max_steps, registry,
                                              record_trace=False)
            test = play_service.extract_static_test(result, entry.target)
            static.tests.append(test)
            covered |= set(play_service.replay_static_test(test, spec, seed).coverage)
        static.covered = [s for s in statements if s in covered]
        logger.info(f"Extracted {len(static.tests)} static test(s) from the '{suite.game}' suite")
        return static

    def cmd_run_suite(self, suite, spec: GameSpec, seeds: Sequence[int]) -> List[CoverageRow]:
        """One coverage row per seed; a statement counts when reached at least once"""
        statements = spec.statement_ids()
        kind = "dynamic" if isinstance(suite, DynamicTestSuite) else "static"
        registry = (InnovationRegistry.from_genomes([e.genome for e in suite.entries])
                    if kind == "dynamic" else None)
        rows: List[CoverageRow] = []
        for seed in seeds:
            if kind == "dynamic":
                results = self.run_dynamic(suite, spec, seed, registry)
            else:
                results = self.run_static(suite, spec, seed)
            covered = play_service.coverage_of(results) & set(statements)
            rows.append(CoverageRow(
                game=spec.name, suite=kind, seed=seed, covered=len(covered), statements=len(statements),
                coverage=len(covered) / len(statements) if statements else 0.0,
                wins=any(w in covered for w in spec.win_statements),
            ))
        return rows

    # ---------------------------------------------------------------- mutation

    def ensure_profiles(self, suite: DynamicTestSuite, spec: GameSpec, config: RunConfig,
                        rng: np.random.Generator, registry: InnovationRegistry) -> None:
        for entry in suite.entries:
            if entry.profile is None:
                entry.profile = oracle_service.collect_ground_truth(
                    entry.genome, spec, config.ground_truth_repetitions, rng, registry, suite.max_steps, entry.target,
                )

    def judge_suite(self, suite: DynamicTestSuite, spec: GameSpec, config: RunConfig,
                    rng: np.random.Generator, registry: InnovationRegistry) -> Tuple[bool, bool, List[str]]:
        """(killed, structurally killed, reason summaries) over every suite entry"""
        killed = structural = False
        summaries: List[str] = []
        for entry in suite.entries:
            seeds = self._seeds(rng, config.judge_seeds)
            verdict = oracle_service.judge(entry.genome, spec, entry.profile, config.oracle_threshold, seeds,
                                           registry, suite.max_steps, config.min_log_density)
            if verdict.decision == Decision.MUTANT:
                killed = True
                structural = structural or verdict.structural
                summaries.append(f"{entry.target}: {len(verdict.reasons)} reason(s), max LSA {verdict.max_lsa:.2f}")
        return killed, structural, summaries

    def cmd_mutation_analysis(self, suite: DynamicTestSuite, spec: GameSpec, config: RunConfig) -> MutationReport:
        """
        Judge every mutant with every network of the suite, then judge the clean
        program `fp_runs` times to estimate false positives
        """
        rng = np.random.default_rng(config.master_seed)
        registry = InnovationRegistry.from_genomes([e.genome for e in suite.entries])
        self.ensure_profiles(suite, spec, config, rng, registry)
        mutants = mutation_service.generate_mutant_set(spec, rng, config.mutants_per_operator)
        report = MutationReport(game=spec.name, fp_runs=config.fp_runs)
        tallies = {op: [0, 0, 0] for op in mutation_service.count_by_operator([])}
        for mutant in mutants:
            killed, structural, summaries = self.judge_suite(suite, mutant.spec, config, rng, registry)
            tally = tallies[mutant.point.operator.value]
            tally[0] += 1
            tally[1] += int(killed)
            tally[2] += int(structural)
            report.verdicts[mutant.name] = "; ".join(summaries) if killed else "survived"
        for _ in range(config.fp_runs):
            flagged, _, _ = self.judge_suite(suite, spec, config, rng, registry)
            report.false_positives += int(flagged)
        report.rows = [
            MutationRow(game=spec.name, operator=op, generated=generated, killed=killed,
                        structural_kills=structural, kill_rate=killed / generated if generated else 0.0)
            for op, (generated, killed, structural) in tallies.items()
        ]
        logger.info(f"Mutation analysis of '{spec.name}': {sum(r.killed for r in report.rows)}/{len(mutants)} "
                    f"killed, false positives {report.false_positives}/{report.fp_runs}")
        return report


search_service = SearchService()
