from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Tuple

import numpy as np

from .errors import ConfigError, IdOverflow

STANDARD_ID_BITS = 11
EXTENDED_ID_BITS = 29
MAX_DLC = 8

# encoded width -> identifier field width
ID_FIELD_BITS = {16: STANDARD_ID_BITS, 32: EXTENDED_ID_BITS}


class Label(str, Enum):
    NORMAL = "normal"
    ATTACK = "attack"
    UNLABELED = "unlabeled"

    @property
    def is_attack(self) -> bool:
        return self is Label.ATTACK


@dataclass(frozen=True, slots=True)
class CanFrame:
    """One CAN message as it appears in a capture."""

    timestamp: float
    id: int
    dlc: int
    data: bytes = b""
    label: Label = Label.UNLABELED
    extended: bool = False

    def __post_init__(self) -> None:
        id_bits = EXTENDED_ID_BITS if self.extended else STANDARD_ID_BITS
        if not 0 <= self.id < (1 << id_bits):
            raise IdOverflow(self.id, id_bits)
        if not 0 <= self.dlc <= MAX_DLC:
            raise ValueError(f"DLC {self.dlc} outside 0..{MAX_DLC}")
        if len(self.data) != self.dlc:
            raise ValueError(f"payload has {len(self.data)} bytes but DLC is {self.dlc}")


@dataclass(frozen=True, slots=True)
class IdBits:
    """MSB-first bit expansion of an identifier, right-aligned and zero padded."""

    bits: Tuple[int, ...]

    @property
    def width(self) -> int:
        return len(self.bits)

    def __str__(self) -> str:
        return "".join(str(b) for b in self.bits)

    @classmethod
    def from_string(cls, text: str) -> "IdBits":
        return cls(tuple(int(ch) for ch in text))


def _id_field_bits(width: int) -> int:
    try:
        return ID_FIELD_BITS[width]
    except KeyError:
        raise ConfigError(f"unsupported id width {width}; expected one of {sorted(ID_FIELD_BITS)}") from None


def encode_id(frame: CanFrame, width: int = 16) -> IdBits:
    id_bits = _id_field_bits(width)
    if frame.id >= (1 << id_bits):
        raise IdOverflow(frame.id, id_bits)
    return IdBits(tuple((frame.id >> shift) & 1 for shift in range(width - 1, -1, -1)))


def decode_id(bits: IdBits) -> int:
    value = 0
    for bit in bits.bits:
        value = (value << 1) | bit
    return value


def encode_ids(ids: Iterable[int] | np.ndarray, width: int = 16) -> np.ndarray:
    """Vectorised encode_id: (N,) identifiers -> (N, width) uint8 bit matrix."""
    id_bits = _id_field_bits(width)
    arr = np.asarray(ids, dtype=np.int64).reshape(-1)
    if arr.size and (arr.min() < 0 or arr.max() >= (1 << id_bits)):
        bad = int(arr[(arr < 0) | (arr >= (1 << id_bits))][0])
        raise IdOverflow(bad, id_bits)
    shifts = np.arange(width - 1, -1, -1, dtype=np.int64)
    return ((arr[:, None] >> shifts[None, :]) & 1).astype(np.uint8)
