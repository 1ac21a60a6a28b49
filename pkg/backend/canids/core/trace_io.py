"""Car-Hacking-style trace files and a seeded synthetic traffic generator."""

from __future__ import annotations

import csv
import io
import logging
import math
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..utils.fileio import atomic_write
from .can_core import EXTENDED_ID_BITS, STANDARD_ID_BITS, CanFrame, Label
from .errors import ConfigError, IdOverflow, ParseError

logger = logging.getLogger(__name__)

DEFAULT_SPLIT = (0.80, 0.15, 0.05)
HEADER_PREFIX = "# canids-trace"


class AttackKind(str, Enum):
    DOS = "dos"
    FUZZY = "fuzzy"
    RPM = "rpm"
    GEAR = "gear"
    NONE = "none"

    @property
    def is_spoof(self) -> bool:
        return self in (AttackKind.RPM, AttackKind.GEAR)


class TraceSource(str, Enum):
    FILE = "file"
    SYNTHETIC = "synthetic"


@dataclass(frozen=True)
class Trace:
    frames: Tuple[CanFrame, ...]
    attack_kind: AttackKind = AttackKind.NONE
    source: TraceSource = TraceSource.FILE

    def __post_init__(self) -> None:
        object.__setattr__(self, "frames", tuple(self.frames))
        if self.attack_kind is AttackKind.NONE and any(f.label is Label.ATTACK for f in self.frames):
            raise ConfigError("attack-free trace contains attack-labelled frames")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def ids(self) -> np.ndarray:
        return np.fromiter((f.id for f in self.frames), dtype=np.int64, count=len(self.frames))

    @property
    def attack_mask(self) -> np.ndarray:
        return np.fromiter((f.label is Label.ATTACK for f in self.frames), dtype=bool, count=len(self.frames))


# ---------------------------------------------------------------------------
# Reading and writing


def _parse_row(fields: List[str], row: int, has_labels: Optional[bool]) -> CanFrame:
    if len(fields) < 3:
        raise ParseError(row, f"expected at least 3 fields, got {len(fields)}")
    try:
        timestamp = float(fields[0])
    except ValueError:
        raise ParseError(row, f"bad timestamp {fields[0]!r}") from None
    try:
        can_id = int(fields[1], 16)
        dlc = int(fields[2])
    except ValueError:
        raise ParseError(row, f"bad id/dlc {fields[1]!r}/{fields[2]!r}") from None
    if not 0 <= dlc <= 8:
        raise ParseError(row, f"DLC {dlc} outside 0..8")

    expected = 3 + dlc
    if len(fields) == expected:
        if has_labels:
            raise ParseError(row, "missing label column")
        label = Label.UNLABELED
    elif len(fields) == expected + 1:
        if has_labels is False:
            raise ParseError(row, "unexpected trailing field")
        flag = fields[-1].upper()
        if flag == "R":
            label = Label.NORMAL
        elif flag == "T":
            label = Label.ATTACK
        else:
            raise ParseError(row, f"unknown label flag {fields[-1]!r}")
    else:
        raise ParseError(row, f"DLC {dlc} needs {expected} fields (+1 label), got {len(fields)}")

    payload = fields[3 : 3 + dlc]
    if any(len(b) != 2 for b in payload):
        raise ParseError(row, "payload bytes must be two hex digits")
    try:
        data = bytes.fromhex("".join(payload))
    except ValueError:
        raise ParseError(row, "bad payload byte") from None

    extended = len(fields[1]) > 4 or can_id >= (1 << STANDARD_ID_BITS)
    if can_id >= (1 << EXTENDED_ID_BITS):
        raise IdOverflow(can_id, EXTENDED_ID_BITS)
    return CanFrame(timestamp=timestamp, id=can_id, dlc=dlc, data=data, label=label, extended=extended)


def _header_attack(line: str) -> Optional[AttackKind]:
    match = re.search(r"attack=(\w+)", line)
    if not match:
        return None
    try:
        return AttackKind(match.group(1).lower())
    except ValueError:
        return None


def parse_lines(
    lines: Iterable[str],
    has_labels: Optional[bool] = None,
    attack_kind: Optional[AttackKind] = None,
) -> Trace:
    """Parse CSV trace rows.

    ``has_labels=None`` accepts rows with or without the flag column; a
    ``# canids-trace attack=<kind>`` header supplies the attack kind when the
    caller does not.
    """
    frames: List[CanFrame] = []
    header_kind: Optional[AttackKind] = None
    last_ts = -math.inf
    for row, fields in enumerate(csv.reader(lines), start=1):
        if not fields or all(not f.strip() for f in fields):
            continue
        first = fields[0].strip()
        if first.startswith("#"):
            header_kind = header_kind or _header_attack(",".join(fields))
            continue
        if not frames and first.lower().startswith("timestamp"):
            continue
        frame = _parse_row([f.strip() for f in fields], row, has_labels)
        if frame.timestamp < last_ts:
            raise ParseError(row, f"timestamp {frame.timestamp} goes backwards")
        last_ts = frame.timestamp
        frames.append(frame)

    kind = attack_kind or header_kind or AttackKind.NONE
    if kind is AttackKind.NONE and any(f.label is Label.ATTACK for f in frames):
        raise ParseError(0, "attack-labelled frames in a trace with no attack kind")
    return Trace(frames=tuple(frames), attack_kind=kind, source=TraceSource.FILE)


def parse_trace(
    path: Union[str, Path],
    has_labels: Optional[bool] = None,
    attack_kind: Optional[AttackKind] = None,
) -> Trace:
    with open(path, newline="") as handle:
        trace = parse_lines(handle, has_labels=has_labels, attack_kind=attack_kind)
    logger.info(f"Parsed {len(trace)} frames from {path}")
    return trace


_TEXT_LOG_LINE = re.compile(
    r"Timestamp:\s*(?P<ts>[\d.]+)\s+ID:\s*(?P<id>[0-9a-fA-F]+)\s+\d+\s+DLC:\s*(?P<dlc>\d)\s*(?P<data>(?:[0-9a-fA-F]{2}\s*)*)$"
)


def parse_text_log(path: Union[str, Path]) -> Trace:
    """Read the attack-free capture's ``Timestamp: .. ID: .. DLC: ..`` layout; every frame is Normal."""
    frames: List[CanFrame] = []
    with open(path) as handle:
        for row, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            match = _TEXT_LOG_LINE.match(line)
            if not match:
                raise ParseError(row, "line does not match the text log layout")
            data = bytes.fromhex("".join(match.group("data").split()))
            dlc = int(match.group("dlc"))
            if len(data) != dlc:
                raise ParseError(row, f"DLC {dlc} but {len(data)} payload bytes")
            frames.append(
                CanFrame(
                    timestamp=float(match.group("ts")),
                    id=int(match.group("id"), 16),
                    dlc=dlc,
                    data=data,
                    label=Label.NORMAL,
                )
            )
    logger.info(f"Parsed {len(frames)} frames from text log {path}")
    return Trace(frames=tuple(frames), attack_kind=AttackKind.NONE, source=TraceSource.FILE)


def format_frame(frame: CanFrame) -> str:
    """Shortest exact timestamp with at least microsecond digits, so parsing gives back the same float."""
    id_hex = f"{frame.id:08x}" if frame.extended else f"{frame.id:04x}"
    parts = [np.format_float_positional(frame.timestamp, unique=True, min_digits=6), id_hex, str(frame.dlc)]
    parts.extend(f"{b:02x}" for b in frame.data)
    if frame.label is Label.NORMAL:
        parts.append("R")
    elif frame.label is Label.ATTACK:
        parts.append("T")
    return ",".join(parts)


def format_trace(trace: Trace) -> str:
    buf = io.StringIO()
    buf.write(f"{HEADER_PREFIX} attack={trace.attack_kind.value}\n")
    for frame in trace.frames:
        buf.write(format_frame(frame))
        buf.write("\n")
    return buf.getvalue()


def write_trace(trace: Trace, path: Union[str, Path]) -> None:
    atomic_write(path, format_trace(trace))
    logger.info(f"Wrote {len(trace)} frames to {path}")


# ---------------------------------------------------------------------------
# Synthetic generation


@dataclass(frozen=True)
class IdSpec:
    id: int
    period: float
    jitter: float = 0.05


@dataclass(frozen=True)
class DosParams:
    flood_id: int = 0x000
    period: float = 0.0005


@dataclass(frozen=True)
class FuzzyParams:
    period: float = 0.0005
    id_min: int = 0x000
    id_max: int = 0x7FF


@dataclass(frozen=True)
class SpoofParams:
    target_id: int
    payload: bytes
    period: float = 0.001


AttackParams = Union[DosParams, FuzzyParams, SpoofParams, None]


@dataclass(frozen=True)
class GeneratorConfig:
    normal_id_pool: Tuple[IdSpec, ...]
    duration: float
    attack_kind: AttackKind = AttackKind.NONE
    attack_params: AttackParams = None
    rng_seed: int = 0
    start_time: float = 0.0
    burst_on: Optional[float] = None
    burst_off: Optional[float] = None

    def validate(self) -> None:
        if self.duration < 0:
            raise ConfigError(f"duration must be >= 0, got {self.duration}")
        if self.duration > 0 and not self.normal_id_pool:
            raise ConfigError("normal id pool is empty")
        for spec in self.normal_id_pool:
            if spec.period <= 0:
                raise ConfigError(f"period for id 0x{spec.id:03x} must be > 0")
            if not 0 <= spec.jitter < 1:
                raise ConfigError(f"jitter for id 0x{spec.id:03x} must be in [0, 1)")
        if self.attack_kind is not AttackKind.NONE:
            params = self.attack_params
            if params is None:
                raise ConfigError(f"attack kind {self.attack_kind.value} needs attack parameters")
            if params.period <= 0:
                raise ConfigError("injection period must be > 0")
            if isinstance(params, SpoofParams) and len(params.payload) > 8:
                raise ConfigError("forged payload longer than 8 bytes")
            if isinstance(params, FuzzyParams) and not 0 <= params.id_min <= params.id_max < (1 << STANDARD_ID_BITS):
                raise ConfigError("fuzzy id range must lie within 0..0x7FF")
        if (self.burst_on is None) != (self.burst_off is None):
            raise ConfigError("burst_on and burst_off must be set together")
        if self.burst_on is not None and (self.burst_on <= 0 or self.burst_off < 0):
            raise ConfigError("burst durations must be positive")


def _injection_times(cfg: GeneratorConfig, period: float) -> np.ndarray:
    times = np.arange(0.0, cfg.duration, period)
    if cfg.burst_on is not None:
        cycle = cfg.burst_on + cfg.burst_off
        times = times[np.mod(times, cycle) < cfg.burst_on]
    return times


def generate_trace(cfg: GeneratorConfig) -> Trace:
    cfg.validate()
    rng = np.random.default_rng(cfg.rng_seed)
    # (timestamp, sequence, frame) sorted on the first two keys
    events: List[Tuple[float, int, CanFrame]] = []
    seq = 0

    for spec in cfg.normal_id_pool:
        t = rng.uniform(0.0, spec.period)
        while t < cfg.duration:
            ts = round(cfg.start_time + t, 6)
            payload = rng.integers(0, 256, size=8, dtype=np.uint8).tobytes()
            events.append((ts, seq, CanFrame(ts, spec.id, 8, payload, Label.NORMAL)))
            seq += 1
            t += spec.period * (1.0 + rng.uniform(-spec.jitter, spec.jitter))

    params = cfg.attack_params
    if cfg.attack_kind is not AttackKind.NONE and cfg.duration > 0:
        for t in _injection_times(cfg, params.period):
            ts = round(cfg.start_time + float(t), 6)
            if isinstance(params, DosParams):
                frame = CanFrame(ts, params.flood_id, 8, bytes(8), Label.ATTACK)
            elif isinstance(params, FuzzyParams):
                can_id = int(rng.integers(params.id_min, params.id_max + 1))
                payload = rng.integers(0, 256, size=8, dtype=np.uint8).tobytes()
                frame = CanFrame(ts, can_id, 8, payload, Label.ATTACK)
            else:
                frame = CanFrame(ts, params.target_id, len(params.payload), params.payload, Label.ATTACK)
            events.append((ts, seq, frame))
            seq += 1

    events.sort(key=lambda e: (e[0], e[1]))
    trace = Trace(
        frames=tuple(e[2] for e in events),
        attack_kind=cfg.attack_kind,
        source=TraceSource.SYNTHETIC,
    )
    logger.info(
        f"Generated {len(trace)} frames ({int(trace.attack_mask.sum())} attack) "
        f"for attack={cfg.attack_kind.value} seed={cfg.rng_seed}"
    )
    return trace


# ---------------------------------------------------------------------------
# Splitting


def split_sizes(total: int, ratios: Sequence[float] = DEFAULT_SPLIT) -> Tuple[int, int, int]:
    """Floor the validation and test shares; the remainder goes to training."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must be three non-negative values summing to 1, got {tuple(ratios)}")
    n_val = int(math.floor(total * ratios[1] + 1e-9))
    n_test = int(math.floor(total * ratios[2] + 1e-9))
    return total - n_val - n_test, n_val, n_test


def split_trace(trace: Trace, ratios: Sequence[float] = DEFAULT_SPLIT) -> Tuple[Trace, Trace, Trace]:
    """Contiguous chronological split; no shuffling across the boundaries."""
    n_train, n_val, _ = split_sizes(len(trace), ratios)
    cuts = (0, n_train, n_train + n_val, len(trace))
    return tuple(
        Trace(frames=trace.frames[a:b], attack_kind=trace.attack_kind, source=trace.source)
        for a, b in zip(cuts, cuts[1:])
    )
