"""Per-message receive path emulation and the inference latency bench.

The feeder owns the window FIFO and hands each snapshot to an inference
worker; verdicts are emitted in frame order as inferences complete.
"""

from __future__ import annotations

import logging
import platform
import time
from collections import deque
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass
from typing import Deque, Iterator, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .can_core import Label
from .errors import ConfigError, InsufficientSamples, ShapeMismatch, WorkerPanic
from .model import Model
from .quant import QuantizedModel
from .trace_io import Trace
from .windowing import WindowBuffer, to_tensor, window_tensors

logger = logging.getLogger(__name__)

Predictor = Union[Model, QuantizedModel]
BenchMode = Literal["per_message", "batch"]
ReportMode = Literal["per_message", "batch", "stream"]

DEFAULT_MIN_WINDOWS = 1000


@dataclass(frozen=True)
class StreamVerdict:
    index: int  # frame index in the trace
    label: Label
    p_attack: float
    latency_ns: int


class LatencyReport(BaseModel):
    model_config = ConfigDict(protected_namespaces=())

    count: int = Field(..., description="Windows evaluated per pass")
    mean_ms: float
    median_ms: float
    p95_ms: float
    p99_ms: float
    min_ms: float
    max_ms: float
    throughput: float = Field(..., description="Messages per second at the mean latency")
    mode: ReportMode = "per_message"
    batch_size: Optional[int] = None
    queue_depth: Optional[int] = None
    repeats: int = 1
    model_kind: Literal["float", "int8"] = "float"
    platform: str = ""


def predictor_kind(predictor: Predictor) -> str:
    return "int8" if isinstance(predictor, QuantizedModel) else "float"


def platform_label() -> str:
    return "-".join(part.lower() for part in (platform.system(), platform.machine(), "cpu") if part)


def _check_predictor(predictor: Predictor, n: Optional[int], width: Optional[int]) -> Tuple[int, int]:
    meta = predictor.meta
    n = meta.n if n is None else n
    width = meta.width if width is None else width
    if (meta.n, meta.width) != (n, width):
        raise ShapeMismatch(f"model expects n={meta.n} width={meta.width}, stream configured for n={n} width={width}")
    return n, width


def _infer(predictor: Predictor, tensor: np.ndarray) -> Tuple[float, float, int]:
    p_normal, p_attack = predictor.predict(tensor)
    return p_normal, p_attack, time.perf_counter_ns()


def stream(
    trace: Trace,
    predictor: Predictor,
    n: Optional[int] = None,
    width: Optional[int] = None,
    queue_depth: int = 1,
) -> Iterator[StreamVerdict]:
    """Yield one verdict per post-warm-up frame, in frame order.

    Up to ``queue_depth`` inferences are in flight; the feeder only waits
    when the handoff queue is full.
    """
    n, width = _check_predictor(predictor, n, width)
    if queue_depth < 1:
        raise ConfigError(f"queue depth must be >= 1, got {queue_depth}")

    buffer = WindowBuffer(n, width)
    pending: Deque[Tuple[int, int, Future]] = deque()

    def complete(index: int, enqueued: int, future: Future) -> StreamVerdict:
        try:
            p_normal, p_attack, done = future.result()
        except Exception as e:
            logger.error(f"Inference for frame {index} failed: {e}")
            raise WorkerPanic(index, e) from e
        return StreamVerdict(
            index=index,
            label=Label.ATTACK if p_attack > p_normal else Label.NORMAL,
            p_attack=p_attack,
            latency_ns=max(done - enqueued, 1),
        )

    with ThreadPoolExecutor(max_workers=queue_depth, thread_name_prefix="canids-infer") as executor:
        for index, frame in enumerate(trace.frames):
            window = buffer.push(frame)
            if window is None:
                continue
            if len(pending) >= queue_depth:
                yield complete(*pending.popleft())
            tensor = to_tensor(window)
            enqueued = time.perf_counter_ns()
            pending.append((index, enqueued, executor.submit(_infer, predictor, tensor)))
        while pending:
            yield complete(*pending.popleft())


def bench(
    source: Union[Trace, np.ndarray],
    predictor: Predictor,
    mode: BenchMode = "per_message",
    repeats: int = 1,
    min_windows: int = DEFAULT_MIN_WINDOWS,
) -> LatencyReport:
    """Time model execution only; windows are built before the clock starts.

    ``per_message`` runs each window back to back and averages every window's
    latency over the passes. ``batch`` runs all windows as one grouped call
    per pass and divides by the window count.
    """
    if repeats < 1:
        raise ConfigError(f"repeats must be >= 1, got {repeats}")
    if mode not in ("per_message", "batch"):
        raise ConfigError(f"unknown bench mode {mode!r}")
    meta = predictor.meta
    if isinstance(source, Trace):
        x, _ = window_tensors(source, meta.n, meta.width)
    else:
        x = np.asarray(source)
    if len(x) < min_windows:
        raise InsufficientSamples(f"bench needs at least {min_windows} windows, got {len(x)}")
    count = len(x)

    if mode == "per_message":
        totals = np.zeros(count, dtype=np.float64)
        for _ in range(repeats):
            for i in range(count):
                tensor = x[i]
                start = time.perf_counter_ns()
                predictor.predict(tensor)
                totals[i] += time.perf_counter_ns() - start
        samples_ns = totals / repeats
    else:
        samples_ns = np.zeros(repeats, dtype=np.float64)
        for r in range(repeats):
            start = time.perf_counter_ns()
            predictor.predict_proba(x)
            samples_ns[r] = (time.perf_counter_ns() - start) / count

    report = summarize(
        samples_ns / 1e6,
        mode=mode,
        count=count,
        model_kind=predictor_kind(predictor),
        repeats=repeats,
        batch_size=count if mode == "batch" else None,
    )
    logger.info(
        f"bench {mode} {report.model_kind}: {count} windows x {repeats} -> mean {report.mean_ms:.4f} ms, "
        f"p99 {report.p99_ms:.4f} ms"
    )
    return report


def summarize(samples_ms: np.ndarray, mode: str, model_kind: str, count: Optional[int] = None, **extra) -> LatencyReport:
    samples_ms = np.asarray(samples_ms, dtype=np.float64)
    p95, p99 = np.percentile(samples_ms, [95, 99])
    mean_ms = float(samples_ms.mean())
    return LatencyReport(
        count=len(samples_ms) if count is None else count,
        mean_ms=mean_ms,
        median_ms=float(np.median(samples_ms)),
        p95_ms=float(p95),
        p99_ms=float(p99),
        min_ms=float(samples_ms.min()),
        max_ms=float(samples_ms.max()),
        throughput=1000.0 / mean_ms if mean_ms > 0 else float("inf"),
        mode=mode,
        model_kind=model_kind,
        platform=platform_label(),
        **extra,
    )


def stream_report(
    trace: Trace,
    predictor: Predictor,
    queue_depth: int = 1,
    min_windows: int = DEFAULT_MIN_WINDOWS,
) -> Tuple[List[StreamVerdict], LatencyReport]:
    """Enqueue-to-verdict latency through the full receive pipeline."""
    expected = max(0, len(trace) - predictor.meta.n + 1)
    if expected < max(min_windows, 1):
        raise InsufficientSamples(f"stream bench needs at least {min_windows} windows, got {expected}")
    verdicts = list(stream(trace, predictor, queue_depth=queue_depth))
    latencies = np.array([v.latency_ns for v in verdicts], dtype=np.float64)
    report = summarize(
        latencies / 1e6,
        mode="stream",
        model_kind=predictor_kind(predictor),
        queue_depth=queue_depth,
    )
    logger.info(f"stream {report.model_kind} depth={queue_depth}: {len(verdicts)} verdicts, mean {report.mean_ms:.4f} ms")
    return verdicts, report
