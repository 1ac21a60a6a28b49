from pydantic import BaseModel, ConfigDict, Field
from typing import List, Literal, Optional

from ..core.metrics import ConfusionMatrix, Metrics
from ..core.trace_io import AttackKind


class TrainingHyperparams(BaseModel):
    learning_rate: float = Field(1e-4, gt=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    epsilon: float = Field(1e-8, gt=0)
    epochs: int = Field(20, ge=0)
    batch_size: int = Field(64, ge=2)


class ModelMeta(BaseModel):
    """Architecture header stored at the top of every model file."""

    model_config = ConfigDict(frozen=True)

    format_version: int = 1
    attack: AttackKind = AttackKind.NONE
    n: int = Field(4, ge=1, description="Window length (ids per input)")
    width: Literal[16, 32] = 16
    profile: Literal["paper", "tiny", "custom"] = "tiny"
    filters: List[int] = Field(default_factory=list, description="Conv filters per block; empty means dense-only")
    dropout_rate: float = Field(0.2, ge=0, lt=1)
    dropout_after: List[int] = Field(default_factory=list, description="1-based conv blocks followed by dropout")
    bn_momentum: float = Field(0.9, gt=0, lt=1)
    bn_epsilon: float = Field(1e-5, gt=0)
    seed: int = 0
    hyperparams: TrainingHyperparams = Field(default_factory=TrainingHyperparams)


class QuantMeta(BaseModel):
    model_config = ConfigDict(frozen=True)

    format_version: int = 1
    model: ModelMeta
    calibration: Literal["minmax", "percentile"] = "minmax"
    percentile: Optional[float] = None
    calib_windows: int = 0


class EpochRecord(BaseModel):
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: Optional[float] = None
    val_accuracy: Optional[float] = None


class TrainingHistory(BaseModel):
    epochs: List[EpochRecord] = Field(default_factory=list)
    best_epoch: Optional[int] = None


class VerdictOut(BaseModel):
    index: int = Field(..., description="Frame index within the request")
    can_id: str
    label: Literal["normal", "attack"]
    p_attack: float


class ClassifyRequest(BaseModel):
    attack: AttackKind = Field(..., description="Which per-attack classifier to use")
    ids: List[str] = Field(..., description="CAN ids in arrival order, hex without 0x")


class ClassifyResponse(BaseModel):
    model_config = ConfigDict(protected_namespaces=())

    attack: AttackKind
    model_kind: Literal["float", "int8"]
    n: int
    verdicts: List[VerdictOut] = Field(default_factory=list)


class MetricsResponse(BaseModel):
    confusion: ConfusionMatrix
    metrics: Metrics


class RegistryEntry(BaseModel):
    model_config = ConfigDict(protected_namespaces=())

    attack: AttackKind
    path: str
    model_kind: Literal["float", "int8"]
    n: int
    width: int
