from typing import Any, Dict, List, Literal, Optional, Tuple
from pathlib import Path
from functools import lru_cache

from dotenv import dotenv_values
from pydantic import Field, ValidationError, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from ..core.errors import ConfigError
from ..core.trace_io import (
    AttackKind,
    DosParams,
    FuzzyParams,
    GeneratorConfig,
    IdSpec,
    SpoofParams,
)

# Normal traffic modelled on a passenger-car capture: (id, period seconds)
DEFAULT_ID_POOL: List[Tuple[int, float]] = [
    (0x002, 0.010), (0x080, 0.010), (0x081, 0.010), (0x130, 0.010),
    (0x131, 0.010), (0x140, 0.010), (0x153, 0.010), (0x165, 0.010),
    (0x18F, 0.010), (0x260, 0.010), (0x2A0, 0.010), (0x2C0, 0.020),
    (0x316, 0.010), (0x329, 0.010), (0x350, 0.020), (0x370, 0.010),
    (0x43F, 0.010), (0x440, 0.010), (0x4B1, 0.010), (0x4F0, 0.010),
    (0x4F1, 0.100), (0x545, 0.010), (0x5A0, 1.000), (0x5A2, 1.000),
    (0x5F0, 0.200), (0x690, 0.100),
]


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_prefix="CANIDS_",
        extra="forbid",
        protected_namespaces=(),
    )

    # Logging
    log_level: str = "INFO"

    # Common pipeline options
    seed: int = 7
    width: Literal[16, 32] = 16
    profile: Literal["paper", "tiny"] = "tiny"

    # Training
    epochs: int = Field(20, ge=0)
    batch_size: int = Field(64, ge=2)
    learning_rate: float = Field(1e-4, gt=0)
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    dropout_rate: float = Field(0.2, ge=0, lt=1)
    bn_momentum: float = 0.9
    bn_epsilon: float = 1e-5
    split_train: float = 0.80
    split_val: float = 0.15
    split_test: float = 0.05

    # Quantization
    calib_windows: int = Field(2000, ge=1)
    calib_percentile: Optional[float] = Field(None, gt=50, le=100)

    # Streaming / benchmarking
    bench_repeats: int = Field(1, ge=1)
    bench_min_windows: int = Field(1000, ge=1)
    queue_depth: int = Field(1, ge=1)

    # Synthetic traffic
    duration: float = Field(60.0, ge=0)
    jitter: float = Field(0.05, ge=0, lt=1)
    start_time: float = 0.0
    dos_id: int = Field(0x000, ge=0, le=0x7FF)
    dos_period: float = Field(0.0005, gt=0)
    fuzzy_period: float = Field(0.0005, gt=0)
    fuzzy_id_min: int = Field(0x000, ge=0, le=0x7FF)
    fuzzy_id_max: int = Field(0x7FF, ge=0, le=0x7FF)
    rpm_id: int = Field(0x316, ge=0, le=0x7FF)
    gear_id: int = Field(0x43F, ge=0, le=0x7FF)
    spoof_period: float = Field(0.001, gt=0)
    rpm_payload: str = "ffffffffffffffff"
    gear_payload: str = "0000000000000000"
    burst_on: Optional[float] = Field(None, gt=0)
    burst_off: Optional[float] = Field(None, ge=0)

    # HTTP service
    api_title: str = "canids API"
    api_version: str = "1.0.0"
    api_prefix: str = "/api"
    host: str = "0.0.0.0"
    port: int = 8001
    model_dir: str = "models"
    cors_origins: List[str] = ["http://localhost:3000", "http://localhost:5173"]
    cors_origin_regex: Optional[str] = None

    @field_validator("dos_id", "fuzzy_id_min", "fuzzy_id_max", "rpm_id", "gear_id", mode="before")
    @classmethod
    def _id_literal(cls, value: Any) -> Any:
        # accepts "0x316" as well as "790"
        return int(value, 0) if isinstance(value, str) else value

    @field_validator("rpm_payload", "gear_payload")
    @classmethod
    def _hex_payload(cls, value: str) -> str:
        data = bytes.fromhex(value)
        if len(data) > 8:
            raise ValueError("forged payload longer than 8 bytes")
        return value.lower()

    @property
    def split_ratios(self) -> Tuple[float, float, float]:
        return (self.split_train, self.split_val, self.split_test)

    def default_n(self, attack: AttackKind) -> int:
        return 8 if attack.is_spoof else 4

    def attack_params(self, attack: AttackKind):
        if attack is AttackKind.DOS:
            return DosParams(flood_id=self.dos_id, period=self.dos_period)
        if attack is AttackKind.FUZZY:
            return FuzzyParams(period=self.fuzzy_period, id_min=self.fuzzy_id_min, id_max=self.fuzzy_id_max)
        if attack is AttackKind.RPM:
            return SpoofParams(target_id=self.rpm_id, payload=bytes.fromhex(self.rpm_payload), period=self.spoof_period)
        if attack is AttackKind.GEAR:
            return SpoofParams(target_id=self.gear_id, payload=bytes.fromhex(self.gear_payload), period=self.spoof_period)
        return None

    def generator_config(self, attack: AttackKind) -> GeneratorConfig:
        return GeneratorConfig(
            normal_id_pool=tuple(IdSpec(can_id, period, self.jitter) for can_id, period in DEFAULT_ID_POOL),
            duration=self.duration,
            attack_kind=attack,
            attack_params=self.attack_params(attack),
            rng_seed=self.seed,
            start_time=self.start_time,
            burst_on=self.burst_on,
            burst_off=self.burst_off,
        )


def load_settings(config_path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> Settings:
    """Flags > config file > environment > defaults."""
    values: Dict[str, Any] = {}
    if config_path:
        path = Path(config_path)
        if not path.is_file():
            raise ConfigError(f"config file {config_path} not found")
        values.update({k.strip().lower(): v for k, v in dotenv_values(path).items() if v is not None})
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return Settings(**values)
    except ValidationError as e:
        first = e.errors()[0]
        loc = ".".join(str(p) for p in first["loc"])
        raise ConfigError(f"invalid setting {loc}: {first['msg']}") from None


@lru_cache()
def get_settings() -> Settings:
    return Settings()
