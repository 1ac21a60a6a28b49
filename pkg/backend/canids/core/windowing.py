from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Deque, List, Optional, Tuple

import numpy as np

from .can_core import CanFrame, IdBits, Label, encode_id, encode_ids
from .errors import ConfigError
from .trace_io import Trace


def window_label(label: Label) -> Label:
    """Unlabelled captures are attack-free; their windows count as Normal."""
    return Label.ATTACK if label is Label.ATTACK else Label.NORMAL


@dataclass(frozen=True)
class IdWindow:
    rows: Tuple[IdBits, ...]
    label: Label

    @property
    def n(self) -> int:
        return len(self.rows)

    @property
    def width(self) -> int:
        return self.rows[0].width


class WindowBuffer:
    """The n-deep FIFO of encoded ids; single owner, one push per received frame."""

    def __init__(self, n: int, width: int = 16):
        if n < 1:
            raise ConfigError(f"window length must be >= 1, got {n}")
        self.n = n
        self.width = width
        self._rows: Deque[IdBits] = deque(maxlen=n)
        self.seen = 0

    def push(self, frame: CanFrame) -> Optional[IdWindow]:
        bits = encode_id(frame, self.width)
        self._rows.append(bits)
        self.seen += 1
        if len(self._rows) < self.n:
            return None
        return IdWindow(rows=tuple(self._rows), label=window_label(frame.label))

    def reset(self) -> None:
        self._rows.clear()
        self.seen = 0


def windows_from_trace(trace: Trace, n: int, width: int = 16) -> List[IdWindow]:
    buffer = WindowBuffer(n, width)
    windows = []
    for frame in trace.frames:
        window = buffer.push(frame)
        if window is not None:
            windows.append(window)
    return windows


def to_tensor(window: IdWindow) -> np.ndarray:
    """(n, W, 1) float32 binary image; row i is the i-th oldest id."""
    return np.asarray([w.bits for w in window.rows], dtype=np.float32)[:, :, None]


def window_tensors(trace: Trace, n: int, width: int = 16) -> Tuple[np.ndarray, np.ndarray]:
    """All stride-1 windows of a trace as a batch.

    Returns ``x`` with shape (len - n + 1, n, width, 1) and ``y`` with 1 for
    windows whose newest frame is an attack. Equivalent to stacking
    ``to_tensor`` over ``windows_from_trace``.
    """
    count = max(0, len(trace) - n + 1)
    if count == 0:
        return np.zeros((0, n, width, 1), dtype=np.float32), np.zeros((0,), dtype=np.int64)
    bits = encode_ids(trace.ids, width).astype(np.float32)
    x = np.lib.stride_tricks.sliding_window_view(bits, n, axis=0)  # (count, width, n)
    x = np.ascontiguousarray(x.transpose(0, 2, 1))[:, :, :, None]
    y = trace.attack_mask[n - 1 :].astype(np.int64)
    return x, y
