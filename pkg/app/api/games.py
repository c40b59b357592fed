from fastapi import APIRouter

from ..core.exceptions import SpecValidationError
from ..schemas.api import CanonicalGame, CdgResponse, GameSource, GameSummary, ValidationReport
from ..services.cdg_service import cdg_service
from ..services.game_spec_service import game_spec_service

router = APIRouter()


@router.post("/validate", response_model=ValidationReport)
async def validate_game(payload: GameSource):
    """
    Parse and check a game; syntax errors are answered with 422
    """
    try:
        game_spec_service.parse_game(payload.source)
    except SpecValidationError as e:
        return ValidationReport(
            valid=False,
            issues=[issue.model_dump() for issue in e.issues],
        )
    return ValidationReport(valid=True)


@router.post("/canonical", response_model=CanonicalGame)
async def canonical_game(payload: GameSource):
    spec = game_spec_service.parse_game(payload.source)
    return CanonicalGame(
        canonical=game_spec_service.serialize_game(spec),
        summary=GameSummary(
            name=spec.name,
            sprites=[s.name for s in spec.sprites],
            variables=[v.name for v in spec.variables],
            statements=len(spec.statement_ids()),
            win_statements=spec.win_statements,
        ),
    )


@router.post("/cdg", response_model=CdgResponse)
async def game_cdg(payload: GameSource):
    """
    Control-dependence graph as DOT text plus a sorted edge list
    """
    spec = game_spec_service.parse_game(payload.source)
    graph = cdg_service.build_cdg(spec)
    return CdgResponse(
        dot=cdg_service.to_dot(graph),
        edges=[list(edge) for edge in sorted(graph.edges())],
    )
