import logging
import traceback
from functools import lru_cache
from typing import List

from fastapi import APIRouter, Depends, HTTPException

from ..core.can_core import CanFrame
from ..core.errors import CanIdsError
from ..core.metrics import ConfusionMatrix, compute
from ..core.registry import ModelRegistry
from ..core.stream_bench import predictor_kind, stream
from ..core.trace_io import Trace, TraceSource
from ..models.schemas import ClassifyRequest, ClassifyResponse, MetricsResponse, RegistryEntry, VerdictOut
from ..utils.config import get_settings

logger = logging.getLogger(__name__)
router = APIRouter()


@lru_cache()
def get_registry() -> ModelRegistry:
    return ModelRegistry(get_settings().model_dir)


def _parse_ids(ids: List[str]) -> List[int]:
    parsed = []
    for position, text in enumerate(ids):
        try:
            parsed.append(int(text, 16))
        except ValueError:
            raise HTTPException(status_code=400, detail=f"ids[{position}]: {text!r} is not a hex CAN id")
    return parsed


@router.get("/health")
async def health_check():
    """
    Health check endpoint.
    """
    return {"status": "healthy", "service": "canids-api"}


@router.post("/metrics", response_model=MetricsResponse)
async def score_confusion(confusion: ConfusionMatrix):
    """
    Derive precision, recall, F1, FPR, FNR and accuracy from confusion counts.
    """
    try:
        return MetricsResponse(confusion=confusion, metrics=compute(confusion))
    except CanIdsError as e:
        raise HTTPException(status_code=400, detail=str(e))


@router.post("/classify", response_model=ClassifyResponse)
def classify_ids(request: ClassifyRequest, registry: ModelRegistry = Depends(get_registry)):
    """
    Classify an ordered run of CAN ids; one verdict per id once the window is full.
    """
    ids = _parse_ids(request.ids)
    try:
        predictor = registry.get(request.attack)
        frames = tuple(CanFrame(timestamp=float(i), id=can_id, dlc=0, extended=can_id > 0x7FF) for i, can_id in enumerate(ids))
        trace = Trace(frames=frames, source=TraceSource.FILE)
        verdicts = [
            VerdictOut(
                index=v.index,
                can_id=f"{ids[v.index]:04x}",
                label=v.label.value,
                p_attack=v.p_attack,
            )
            for v in stream(trace, predictor)
        ]
        return ClassifyResponse(
            attack=request.attack,
            model_kind=predictor_kind(predictor),
            n=predictor.meta.n,
            verdicts=verdicts,
        )
    except FileNotFoundError as e:
        raise HTTPException(status_code=404, detail=str(e))
    except CanIdsError as e:
        raise HTTPException(status_code=400, detail=str(e))
    except Exception as e:
        logger.error(f"Error classifying ids: {str(e)}")
        logger.error(f"Full traceback: {traceback.format_exc()}")
        raise HTTPException(status_code=500, detail=f"Internal server error: {str(e)}")


@router.get("/models", response_model=List[RegistryEntry])
def list_models(registry: ModelRegistry = Depends(get_registry)):
    """
    Classifiers available in the model directory.
    """
    try:
        return registry.entries()
    except CanIdsError as e:
        raise HTTPException(status_code=500, detail=str(e))
