"""Affine int8 parameters and the fixed-point requantization arithmetic."""

from __future__ import annotations

import math
from typing import Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

INT8_MIN = -128
INT8_MAX = 127
INT32_MIN = -(1 << 31)
INT32_MAX = (1 << 31) - 1
SCALE_FLOOR = 1e-8
MULTIPLIER_BITS = 31
MAX_SHIFT = 62


class QuantParams(BaseModel):
    """real = scale * (q - zero_point)"""

    model_config = ConfigDict(frozen=True)

    scale: float = Field(..., gt=0)
    zero_point: int = Field(0, ge=INT8_MIN, le=INT8_MAX)

    def quantize(self, x: np.ndarray) -> np.ndarray:
        q = np.round(np.asarray(x, dtype=np.float64) / self.scale) + self.zero_point
        return np.clip(q, INT8_MIN, INT8_MAX).astype(np.int8)

    def dequantize(self, q: np.ndarray) -> np.ndarray:
        return (np.asarray(q, dtype=np.float64) - self.zero_point) * self.scale


def params_from_range(lo: float, hi: float) -> QuantParams:
    """Asymmetric int8 params for [lo, hi], widened so real 0 is exactly on the grid."""
    lo = min(float(lo), 0.0)
    hi = max(float(hi), 0.0)
    scale = max((hi - lo) / (INT8_MAX - INT8_MIN), SCALE_FLOOR)
    zero_point = int(np.clip(round(INT8_MIN - lo / scale), INT8_MIN, INT8_MAX))
    return QuantParams(scale=scale, zero_point=zero_point)


def symmetric_scales(weights: np.ndarray, axis: int = -1) -> np.ndarray:
    """Per-output-channel symmetric scales mapping max |w| to 127."""
    reduce_axes = tuple(i for i in range(weights.ndim) if i != axis % weights.ndim)
    max_abs = np.abs(weights.astype(np.float64)).max(axis=reduce_axes)
    return np.maximum(max_abs / INT8_MAX, SCALE_FLOOR)


def quantize_symmetric(weights: np.ndarray, scales: np.ndarray) -> np.ndarray:
    q = np.round(weights.astype(np.float64) / scales)
    return np.clip(q, -INT8_MAX, INT8_MAX).astype(np.int8)


def quantize_multiplier(multiplier: float) -> Tuple[int, int]:
    """Decompose a positive real multiplier M into (m, k) with M ~= m * 2**-k and m in [2**30, 2**31).

    Multipliers too small to survive a 62-bit shift collapse to (0, 0).
    """
    if multiplier <= 0:
        return 0, 0
    fraction, exponent = math.frexp(multiplier)
    m = int(round(fraction * (1 << MULTIPLIER_BITS)))
    if m == 1 << MULTIPLIER_BITS:
        m //= 2
        exponent += 1
    k = MULTIPLIER_BITS - exponent
    if k > MAX_SHIFT:
        return 0, 0
    return m, k


def requantize(acc: np.ndarray, m: np.ndarray, k: np.ndarray) -> np.ndarray:
    """round(acc * m * 2**-k) with round-half-up, per output channel (last axis)."""
    acc = np.clip(np.asarray(acc, dtype=np.int64), INT32_MIN, INT32_MAX)
    m = np.asarray(m, dtype=np.int64)
    k = np.asarray(k, dtype=np.int64)
    prod = acc * m
    right = np.maximum(k, 0)
    rounding = np.where(right > 0, np.left_shift(np.int64(1), np.maximum(right - 1, 0)), 0)
    shifted = np.right_shift(prod + rounding, right)
    return np.where(k >= 0, shifted, np.left_shift(prod, np.maximum(-k, 0)))
