"""Plain-text report tables and key=value rows for eval and bench output."""

from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

from .metrics import UNDEFINED, ConfusionMatrix, Metrics, average_accuracy, compute
from .stream_bench import LatencyReport

METRIC_HEADER = ("Attack", "Model", "Precision", "Recall", "F1", "FPR(%)", "FNR(%)")
MODEL_LABELS = {"float": "Pre-Q", "int8": "INT8"}


@dataclass(frozen=True)
class AttackResult:
    """Evaluation of one attack's classifier; either path may be missing."""

    attack: str
    float_confusion: Optional[ConfusionMatrix] = None
    quant_confusion: Optional[ConfusionMatrix] = None
    agreement: Optional[float] = None

    def paths(self) -> List[Tuple[str, ConfusionMatrix]]:
        found = []
        if self.float_confusion is not None:
            found.append(("float", self.float_confusion))
        if self.quant_confusion is not None:
            found.append(("int8", self.quant_confusion))
        return found

    @property
    def primary(self) -> Optional[ConfusionMatrix]:
        """The deployed path: integer when present."""
        return self.quant_confusion if self.quant_confusion is not None else self.float_confusion


def _fraction(value: Optional[float]) -> str:
    return UNDEFINED if value is None else f"{value:.4f}"


def _percent(value: Optional[float]) -> str:
    return UNDEFINED if value is None else f"{value * 100:.2f}"


def metric_cells(attack: str, model_kind: str, metrics: Metrics) -> Tuple[str, ...]:
    return (
        attack,
        MODEL_LABELS.get(model_kind, model_kind),
        _fraction(metrics.precision),
        _fraction(metrics.recall),
        _fraction(metrics.f1),
        _percent(metrics.fpr),
        _percent(metrics.fnr),
    )


def _align(rows: Sequence[Sequence[str]]) -> List[str]:
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    return ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]


def confusion_block(attack: str, model_kind: str, cm: ConfusionMatrix) -> List[str]:
    """Rows are the true class, columns the predicted class, Attack first."""
    return [
        f"{attack} ({MODEL_LABELS.get(model_kind, model_kind)})  predicted: Attack  Normal",
        f"  true Attack  {cm.tp}  {cm.fn}",
        f"  true Normal  {cm.fp}  {cm.tn}",
    ]


def report_tables(results: Iterable[AttackResult]) -> str:
    results = list(results)
    rows: List[Tuple[str, ...]] = [METRIC_HEADER]
    for result in results:
        for kind, cm in result.paths():
            rows.append(metric_cells(result.attack, kind, compute(cm)))
    lines = _align(rows)
    if not results:
        return "\n".join(lines) + "\n"

    lines.append("")
    lines.append("Confusion matrices")
    for result in results:
        for kind, cm in result.paths():
            lines.extend(confusion_block(result.attack, kind, cm))
    agreements = [r for r in results if r.agreement is not None]
    if agreements:
        lines.append("")
        for r in agreements:
            lines.append(f"{r.attack} float/int8 label agreement: {r.agreement:.4f}")
    primaries = [compute(r.primary) for r in results if r.primary is not None]
    if primaries:
        lines.append("")
        lines.append(f"average accuracy: {average_accuracy(primaries):.4f}")
    return "\n".join(lines) + "\n"


def _kv(value) -> str:
    if value is None:
        return UNDEFINED
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def key_value_rows(results: Iterable[AttackResult]) -> str:
    """One machine-readable line per (attack, model path)."""
    lines = []
    for result in results:
        for kind, cm in result.paths():
            metrics = compute(cm)
            fields = {"attack": result.attack, "model": kind, **cm.model_dump(), **metrics.model_dump()}
            lines.append(" ".join(f"{k}={_kv(v)}" for k, v in fields.items()))
    return "\n".join(lines) + ("\n" if lines else "")


LATENCY_HEADER = ("Platform", "Model", "Mode", "Windows", "Mean(ms)", "Median(ms)", "P95(ms)", "P99(ms)", "Min(ms)", "Max(ms)", "Msg/s")


def _mode_label(report: LatencyReport) -> str:
    if report.batch_size is not None:
        return f"batch[{report.batch_size}]"
    if report.queue_depth is not None:
        return f"stream[depth={report.queue_depth}]"
    return report.mode


def latency_table(report: LatencyReport) -> str:
    row = (
        report.platform,
        report.model_kind,
        _mode_label(report),
        str(report.count),
        f"{report.mean_ms:.4f}",
        f"{report.median_ms:.4f}",
        f"{report.p95_ms:.4f}",
        f"{report.p99_ms:.4f}",
        f"{report.min_ms:.4f}",
        f"{report.max_ms:.4f}",
        f"{report.throughput:.1f}",
    )
    return "\n".join(_align([LATENCY_HEADER, row])) + "\n"


def latency_key_values(report: LatencyReport) -> str:
    return " ".join(f"{k}={_kv(v)}" for k, v in report.model_dump().items()) + "\n"
