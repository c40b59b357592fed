from fastapi import APIRouter

from ..schemas.api import CompareRequest
from ..schemas.harness import ComparisonResult
from ..services.statistics_service import statistics_service

router = APIRouter()


@router.post("/compare", response_model=ComparisonResult)
async def compare_samples(payload: CompareRequest):
    """
    Vargha-Delaney A12 and two-sided Mann-Whitney U of x against y
    """
    return statistics_service.compare(payload.x, payload.y)
