import copy
import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from ..core.exceptions import GenomeError
from ..schemas.episode import EpisodeResult
from ..schemas.game import GameSpec
from ..schemas.neat import Genome, NodeRole
from ..schemas.oracle import Decision, ExceedanceReason, GroundTruthProfile, NodeStepSamples, Verdict
from .game_spec_service import ENTRY_ID
from .neat_service import InnovationRegistry
from .network_service import network_service, structural_signature
from .play_service import play_service

logger = logging.getLogger(__name__)

MIN_BANDWIDTH = 1e-3
CONSTANT_TOLERANCE = 1e-12
LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def first_change_step(result: EpisodeResult) -> Optional[int]:
    steps = [int(flag.split(":", 1)[0]) for flag in result.structural_changes]
    return min(steps) if steps else None


def change_flags(result: EpisodeResult) -> List[str]:
    return [flag.split(":", 1)[1] for flag in result.structural_changes]


class OracleService:
    """Activation-based regression oracle: ground truth, surprise scores, verdicts"""

    def silverman_bandwidth(self, samples: Sequence[float]) -> float:
        values = np.asarray(samples, dtype=float)
        if values.size < 2:
            return MIN_BANDWIDTH
        sigma = float(np.std(values, ddof=1))
        q75, q25 = np.percentile(values, [75, 25])
        iqr = float(q75 - q25)
        spread = min(sigma, iqr / 1.34)
        return max(0.9 * spread * values.size ** (-0.2), MIN_BANDWIDTH)

    def kde_log_density(self, samples: Sequence[float], bandwidth: float, query: float,
                        floor: float = -1.0e6) -> float:
        """log((1/(n*h)) * sum(phi((query - x_i)/h))) with a Gaussian kernel"""
        values = np.asarray(samples, dtype=float)
        z = (query - values) / bandwidth
        log_kernels = -0.5 * z * z - LOG_SQRT_2PI
        density = float(logsumexp(log_kernels)) - math.log(values.size * bandwidth)
        return max(density, floor)

    def lsa(self, profile: GroundTruthProfile, node_id: int, step: int, activation: float,
            floor: float = -1.0e6) -> float:
        entry = profile.lookup(node_id, step)
        if entry is None:
            return 0.0
        if entry.constant:
            return 0.0 if abs(activation - entry.samples[0]) <= CONSTANT_TOLERANCE else math.inf
        return max(0.0, -self.kde_log_density(entry.samples, entry.bandwidth, activation, floor))

    def _samples(self, node_id: int, step: Optional[int], samples: List[float]) -> NodeStepSamples:
        constant = max(samples) - min(samples) <= CONSTANT_TOLERANCE
        return NodeStepSamples(
            node_id=node_id,
            step=step,
            samples=samples,
            constant=constant,
            bandwidth=0.0 if constant else self.silverman_bandwidth(samples),
        )

    def _stop_at(self, target: Optional[str]) -> Optional[str]:
        return None if target in (None, ENTRY_ID) else target

    def collect_ground_truth(self, genome: Genome, spec: GameSpec, repetitions: int, rng: np.random.Generator,
                             registry: InnovationRegistry, max_steps: int,
                             target: Optional[str] = None) -> GroundTruthProfile:
        """
        Record hidden activations over `repetitions` fresh seeds on the clean
        program; steps from a structural change onwards are dropped
        """
        if repetitions < 2:
            raise ValueError("ground truth needs at least two repetitions")
        seeds = [int(s) for s in rng.integers(0, 2 ** 31 - 1, size=repetitions)]
        per_step: Dict[Tuple[int, int], List[float]] = {}
        per_node: Dict[int, List[float]] = {}
        lengths: List[int] = []
        known_flags: List[str] = []
        local = copy.deepcopy(registry)

        for seed in seeds:
            result = play_service.run_episode(genome, spec, seed, self._stop_at(target), max_steps, local)
            cut = first_change_step(result)
            if cut is not None:
                logger.warning(f"Network {genome.key} changed structure on the clean program "
                               f"(seed {seed}, step {cut}); later steps are not profiled")
                known_flags.extend(flag for flag in change_flags(result) if flag not in known_flags)
            length = result.steps_executed if cut is None else min(cut, result.steps_executed)
            lengths.append(length)
            for step, activations in result.activation_trace.items():
                if step >= length:
                    continue
                for node_id, value in activations.items():
                    per_step.setdefault((node_id, step), []).append(value)
                    per_node.setdefault(node_id, []).append(value)

        shortest = min(lengths) if lengths else 0
        entries = [
            self._samples(node_id, step, samples)
            for (node_id, step), samples in sorted(per_step.items())
            if len(samples) >= 2 and step < shortest
        ]
        pooled = [self._samples(node_id, None, samples) for node_id, samples in sorted(per_node.items())]
        sources = {
            node.id: network_service.input_sources(genome, node.id) for node in genome.nodes_with_role(NodeRole.HIDDEN)
        }
        logger.info(f"Ground truth for network {genome.key}: {len(seeds)} runs, {len(entries)} node/step "
                    f"profiles, {len(pooled)} pooled nodes")
        return GroundTruthProfile(
            genome_key=genome.key,
            signature=structural_signature(genome),
            target=target,
            seeds=seeds,
            repetitions=repetitions,
            min_episode_length=shortest,
            entries=entries,
            pooled=pooled,
            known_flags=known_flags,
            node_sources=sources,
        )

    def judge(self, genome: Genome, spec: GameSpec, profile: GroundTruthProfile, threshold: float,
              seeds: Sequence[int], registry: InnovationRegistry, max_steps: int,
              floor: float = -1.0e6) -> Verdict:
        """
        Mutant when any single node activation is more surprising than `threshold`
        or the program forces the network to grow unseen inputs or outputs
        """
        if structural_signature(genome) != profile.signature:
            raise GenomeError(f"profile was recorded for a different structure than network {genome.key}")
        local = copy.deepcopy(registry)
        reasons: List[ExceedanceReason] = []
        max_lsa = 0.0
        for seed in seeds:
            result = play_service.run_episode(genome, spec, seed, self._stop_at(profile.target), max_steps, local)
            for flag in change_flags(result):
                if flag not in profile.known_flags:
                    reasons.append(ExceedanceReason(kind="structural", seed=seed, flag=flag))
            for step in sorted(result.activation_trace):
                for node_id, value in sorted(result.activation_trace[step].items()):
                    score = self.lsa(profile, node_id, step, value, floor)
                    max_lsa = max(max_lsa, score)
                    if score > threshold:
                        reasons.append(ExceedanceReason(
                            seed=seed, node_id=node_id, step=step, lsa=score,
                            sources=profile.node_sources.get(node_id, []),
                        ))
        decision = Decision.MUTANT if reasons else Decision.CLEAN
        logger.debug(f"Verdict for network {genome.key} on '{spec.name}': {decision.value} "
                     f"({len(reasons)} reason(s), max LSA {max_lsa:.2f})")
        return Verdict(decision=decision, reasons=reasons, max_lsa=max_lsa)

    def save_profile(self, profile: GroundTruthProfile, path: str) -> str:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(profile.model_dump_json(), encoding="utf-8")
        return path

    def load_profile(self, path: str) -> GroundTruthProfile:
        return GroundTruthProfile.model_validate_json(Path(path).read_text(encoding="utf-8"))


oracle_service = OracleService()
