from typing import List

import numpy as np
from fastapi import APIRouter

from ..schemas.api import MutantRequest, MutantSummary
from ..services.game_spec_service import game_spec_service
from ..services.mutation_service import mutation_service

router = APIRouter()


@router.post("", response_model=List[MutantSummary])
async def generate_mutants(payload: MutantRequest):
    """
    First-order mutants of the posted game, at most `cap` per operator
    """
    spec = game_spec_service.parse_game(payload.source)
    mutants = mutation_service.generate_mutant_set(
        spec, np.random.default_rng(payload.seed), payload.cap, payload.operators,
    )
    return [
        MutantSummary(
            filename=mutation_service.mutant_filename(spec, mutant),
            operator=mutant.point.operator,
            block_id=mutant.point.block_id,
            replacement=mutant.replacement,
            source=game_spec_service.serialize_game(mutant.spec),
        )
        for mutant in mutants
    ]
