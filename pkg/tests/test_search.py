"""Tests for the generation loop, the random baseline, suite runs and mutation analysis."""

import numpy as np
import pytest

from app.core.config import RunConfig
from app.schemas.harness import DynamicTestSuite, MutationOperator, StaticSuite, SuiteEntry
from app.services.game_spec_service import ENTRY_ID, game_spec_service
from app.services.neat_service import InnovationRegistry
from app.services.search_service import EvaluationTask, evaluate_task, search_service
from app.services.statistics_service import statistics_service

from .conftest import GAMES_DIR, always_choose, seed_for


def _config(**overrides) -> RunConfig:
    values = dict(population_size=8, max_generations=3, r_d=2, max_steps=40, workers=1, master_seed=7,
                  ground_truth_repetitions=2, mutants_per_operator=1, fp_runs=2, judge_seeds=1)
    values.update(overrides)
    return RunConfig(**values)


@pytest.fixture
def generated(walker_spec):
    return search_service.cmd_generate(walker_spec, _config())


class TestEvaluate:

    def test_entry_target_always_admitted(self, walker_spec) -> None:
        registry = InnovationRegistry()
        task = EvaluationTask(genome=seed_for(walker_spec, registry), spec=walker_spec, target=ENTRY_ID, seed=1,
                              robustness_seed=2, registry=registry, r_d=3, max_steps=20)
        outcome = evaluate_task(task)
        assert outcome.report.covered
        assert outcome.robustness.r_c == 2
        assert outcome.report.fitness == 3.0
        assert len(outcome.coverages) == 3

    def test_missed_target_scored_below_one(self, walker_spec) -> None:
        registry = InnovationRegistry()
        genome = always_choose(seed_for(walker_spec, registry), registry, "Wait")
        task = EvaluationTask(genome=genome, spec=walker_spec, target="goal", seed=1, robustness_seed=2,
                              registry=registry, r_d=3, max_steps=20)
        outcome = evaluate_task(task)
        assert outcome.robustness is None
        assert 0.0 < outcome.report.fitness < 1.0
        assert outcome.report.branch_distance == pytest.approx(101.0)


class TestPopulation:

    def test_all_fresh_without_solutions(self, walker_spec) -> None:
        registry = InnovationRegistry()
        neat_config = _config().neat_config()
        factory = search_service._seed_factory(walker_spec, registry, 0)
        population = search_service.generate_population([], registry, np.random.default_rng(0), neat_config, factory)
        assert len(population.genomes) == 8
        assert len({g.key for g in population.genomes}) == 8

    def test_solutions_seed_the_next_target(self, walker_spec) -> None:
        registry = InnovationRegistry()
        neat_config = _config(population_size=20).neat_config()
        factory = search_service._seed_factory(walker_spec, registry, 0)
        solution = factory(np.random.default_rng(1))
        population = search_service.generate_population([solution], registry, np.random.default_rng(0),
                                                        neat_config, factory)
        assert len(population.genomes) == 20
        derived = [g for g in population.genomes
                   if {c.innovation for c in solution.connections} <= {c.innovation for c in g.connections}]
        assert len(derived) >= 20 - 2


class TestGenerate:

    def test_first_network_targets_entry(self, generated, walker_spec) -> None:
        suite = generated.suite
        assert suite.entries[0].target == ENTRY_ID
        assert suite.entries[0].r_c == 1
        assert len(suite.entries[0].seeds) == 2
        assert {"start", "w1", "w2", "w5"} <= set(suite.covered)
        assert set(suite.entries[0].collateral) >= {"start", "w1", "w2", "w5"}

    def test_logs_follow_generations(self, generated) -> None:
        suite = generated.suite
        assert suite.generations == len(generated.logs) <= 3
        assert [log.generation for log in generated.logs] == list(range(suite.generations))
        assert generated.logs[0].admitted[0] == ENTRY_ID
        assert [log.covered for log in generated.logs] == sorted(log.covered for log in generated.logs)

    def test_budget_flag(self, generated, walker_spec) -> None:
        suite = generated.suite
        assert suite.budget_exhausted == (len(suite.covered) < len(walker_spec.statement_ids()))

    def test_deterministic(self, generated, walker_spec) -> None:
        again = search_service.cmd_generate(walker_spec, _config())
        assert again.suite.covered == generated.suite.covered
        assert [e.target for e in again.suite.entries] == [e.target for e in generated.suite.entries]
        assert [e.genome for e in again.suite.entries] == [e.genome for e in generated.suite.entries]

    @pytest.mark.slow
    def test_fruit_game_beyond_entry(self, fruit_spec) -> None:
        run = search_service.cmd_generate(fruit_spec, _config(population_size=30, max_generations=15, r_d=3,
                                                              max_steps=150))
        assert len(run.suite.entries) > 1
        assert run.suite.coverage > 0.5


class TestBaselineAndRuns:

    def test_random_baseline(self, walker_spec) -> None:
        suite = search_service.cmd_random_baseline(walker_spec, _config(max_generations=2, population_size=5))
        assert suite.episodes <= 10
        assert suite.tests
        assert "start" in suite.covered
        assert set(suite.covered) <= set(walker_spec.statement_ids())

    def test_run_static_suite(self, walker_spec) -> None:
        suite = search_service.cmd_random_baseline(walker_spec, _config(max_generations=1, population_size=3))
        rows = search_service.cmd_run_suite(suite, walker_spec, [11, 12])
        assert [r.seed for r in rows] == [11, 12]
        assert all(r.suite == "static" for r in rows)
        assert all(r.coverage >= len(suite.covered) / 10 for r in rows)

    def test_run_dynamic_suite(self, generated, walker_spec) -> None:
        rows = search_service.cmd_run_suite(generated.suite, walker_spec, [3, 4, 5])
        assert len(rows) == 3
        assert all(r.suite == "dynamic" for r in rows)
        assert all(r.covered >= len(generated.suite.covered) for r in rows)

    def test_empty_suites(self, walker_spec) -> None:
        rows = search_service.cmd_run_suite(StaticSuite(game="Walker"), walker_spec, [1])
        assert rows[0].covered == 0
        rows = search_service.cmd_run_suite(DynamicTestSuite(game="Walker"), walker_spec, [1])
        assert rows[0].suite == "dynamic"

    def test_extracted_static_suite(self, generated, walker_spec) -> None:
        static = search_service.extract_static_suite(generated.suite, walker_spec)
        assert len(static.tests) == len(generated.suite.entries)
        assert static.statements == len(walker_spec.statement_ids())
        assert [t.target for t in static.tests] == [e.target for e in generated.suite.entries]
        # the walker game draws no random numbers, so recordings replay everywhere
        assert set(static.covered) >= set(generated.suite.covered)
        rows = search_service.cmd_run_suite(static, walker_spec, [21])
        assert rows[0].covered == len(static.covered)


class TestMutationAnalysis:

    def test_report_rows_and_false_positives(self, generated, walker_spec) -> None:
        suite = generated.suite
        report = search_service.cmd_mutation_analysis(suite, walker_spec, _config())
        assert [row.operator for row in report.rows] == [op.value for op in MutationOperator]
        assert all(row.generated <= 1 for row in report.rows)
        assert sum(row.generated for row in report.rows) == len(report.verdicts)
        assert report.fp_runs == 2
        # the walker game is deterministic, so the clean program never surprises
        assert report.false_positives == 0
        assert all(entry.profile is not None for entry in suite.entries)

    def test_deleting_the_moving_script_is_killed(self, walker_spec) -> None:
        registry = InnovationRegistry()
        walker = always_choose(seed_for(walker_spec, registry), registry, "KeyPress:right")
        suite = DynamicTestSuite(game="Walker", max_steps=40, entries=[SuiteEntry(target="goal", genome=walker)])
        report = search_service.cmd_mutation_analysis(suite, walker_spec, _config(mutants_per_operator=50))
        sdm = next(row for row in report.rows if row.operator == "SDM")
        assert sdm.generated == 2
        assert sdm.killed == 1
        assert report.verdicts["SDM.0"] != "survived"
        assert report.verdicts["SDM.1"] == "survived"
        assert report.false_positives == 0


def _protocol_config(seed: int) -> RunConfig:
    return _config(population_size=50, max_generations=50, budget_seconds=1800.0, r_d=10, max_steps=300,
                   master_seed=seed, ground_truth_repetitions=100, mutants_per_operator=50, fp_runs=10)


def _wins(covered, spec) -> bool:
    return any(w in covered for w in spec.win_statements)


@pytest.fixture(scope="module")
def fruit_runs():
    spec = game_spec_service.load_game(str(GAMES_DIR / "fruit_catching.game"))
    generated = [search_service.cmd_generate(spec, _protocol_config(seed)) for seed in range(10)]
    random = [search_service.cmd_random_baseline(spec, _protocol_config(seed)) for seed in range(10)]
    return spec, generated, random


@pytest.mark.slow
class TestProtocols:

    def test_networks_beat_random_inputs(self, fruit_runs) -> None:
        spec, generated, random = fruit_runs
        assert sum(_wins(run.suite.covered, spec) for run in generated) >= 7
        assert sum(_wins(suite.covered, spec) for suite in random) == 0
        result = statistics_service.compare([run.suite.coverage for run in generated],
                                            [suite.coverage for suite in random])
        assert result.p_value < 0.05
        assert result.a12 > 0.7

    def test_dynamic_suites_survive_fresh_seeds(self, fruit_runs) -> None:
        spec, generated, _ = fruit_runs
        seeds = [int(s) for s in np.random.default_rng(99).integers(0, 2 ** 31 - 1, size=10)]
        dynamic, static, dynamic_drops, static_drops = [], [], [], []
        for run in generated:
            extracted = search_service.extract_static_suite(run.suite, spec)
            dynamic_rows = search_service.cmd_run_suite(run.suite, spec, seeds)
            static_rows = search_service.cmd_run_suite(extracted, spec, seeds)
            dynamic.append(float(np.mean([r.coverage for r in dynamic_rows])))
            static.append(float(np.mean([r.coverage for r in static_rows])))
            dynamic_drops.append(run.suite.coverage - dynamic[-1])
            static_drops.append(extracted.coverage - static[-1])
        assert np.mean(static_drops) > np.mean(dynamic_drops)
        assert np.mean(dynamic_drops) <= 0.01
        result = statistics_service.compare(dynamic, static)
        assert result.a12 > 0.7
        assert result.p_value < 0.05

    def test_mutation_analysis_on_bundled_games(self) -> None:
        killed, generated = {}, {}
        for name in ("fruit_catching", "mole_whacker"):
            spec = game_spec_service.load_game(str(GAMES_DIR / f"{name}.game"))
            config = _protocol_config(0)
            run = search_service.cmd_generate(spec, config)
            report = search_service.cmd_mutation_analysis(run.suite, spec, config)
            assert report.false_positive_rate <= 0.2
            for row in report.rows:
                killed[row.operator] = killed.get(row.operator, 0) + row.killed
                generated[row.operator] = generated.get(row.operator, 0) + row.generated
        assert sum(killed.values()) / sum(generated.values()) >= 0.5
        rates = {op: killed[op] / generated[op] for op in generated if generated[op]}
        assert rates["KRM"] == max(rates.values())
