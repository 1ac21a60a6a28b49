"""canids command line: gen, train, quantize, eval, bench, stream."""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .core.errors import CanIdsError, ConfigError
from .core.metrics import confusion_from_arrays
from .core.model import Model, build_model, load_model, make_meta, param_count, save_model
from .core.quant import calibrate, compare_models, fold_batchnorm, load_qmodel, quantize_model, save_qmodel, weight_roundtrip_error
from .core.reporting import AttackResult, key_value_rows, latency_key_values, latency_table, report_tables
from .core.stream_bench import Predictor, bench, predictor_kind, stream, stream_report
from .core.trace_io import AttackKind, Trace, generate_trace, parse_trace, split_trace, write_trace
from .core.training import train
from .core.windowing import window_tensors
from .models.schemas import TrainingHyperparams
from .utils.config import Settings, load_settings
from .utils.fileio import atomic_write

logger = logging.getLogger("canids")

ATTACK_CHOICES = ["dos", "fuzzy", "rpm", "gear"]


# ---------------------------------------------------------------------------
# Argument parsing


def _common(parser: argparse.ArgumentParser, attack_required: bool = False, attack: bool = True) -> None:
    if attack:
        parser.add_argument("--attack", choices=ATTACK_CHOICES, required=attack_required, help="Attack kind")
    parser.add_argument("--n", type=int, help="Window length (default 4 for dos/fuzzy, 8 for rpm/gear)")
    parser.add_argument("--width", type=int, choices=[16, 32], help="Encoded id width in bits")
    parser.add_argument("--seed", type=int, help="Random seed")
    parser.add_argument("--profile", choices=["paper", "tiny"], help="Architecture profile")
    parser.add_argument("--config", help="Flat key=value settings file")
    parser.add_argument("--log-level", dest="log_level", help="Logging level (INFO, DEBUG, ...)")


def _predictor_args(parser: argparse.ArgumentParser, required: bool = True) -> None:
    group = parser.add_mutually_exclusive_group(required=required)
    group.add_argument("--model", help="Float model file")
    group.add_argument("--qmodel", help="Quantized model file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="canids",
        description="CAN-bus intrusion detection: traces, CNN training, INT8 quantization and latency bench",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  canids gen --attack dos --duration 60 --seed 7 -o dos.csv
  canids train --attack dos --trace dos.csv --profile tiny -o dos.model --test-out dos_test.csv
  canids quantize --model dos.model --trace dos.csv -o dos.qmodel
  canids eval --qmodel dos.qmodel --trace dos_test.csv
  canids bench --qmodel dos.qmodel --trace dos.csv --mode per_message
        """,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="Generate a labelled synthetic trace")
    kind = gen.add_mutually_exclusive_group(required=True)
    kind.add_argument("--attack", choices=ATTACK_CHOICES, help="Attack kind to inject")
    kind.add_argument("--attack-free", action="store_true", help="Normal traffic only")
    _common(gen, attack=False)
    gen.add_argument("--duration", type=float, help="Trace length in seconds")
    gen.add_argument("--start-time", dest="start_time", type=float, help="Timestamp of the first frame")
    gen.add_argument("--jitter", type=float, help="Relative jitter on every period")
    gen.add_argument("--burst-on", dest="burst_on", type=float, help="Seconds of injection per burst")
    gen.add_argument("--burst-off", dest="burst_off", type=float, help="Seconds of silence between bursts")
    gen.add_argument("--dos-id", dest="dos_id", help="Flooding id, e.g. 0x000")
    gen.add_argument("--dos-period", dest="dos_period", type=float, help="Seconds between flooding frames")
    gen.add_argument("--fuzzy-period", dest="fuzzy_period", type=float, help="Seconds between fuzzing frames")
    gen.add_argument("--fuzzy-id-min", dest="fuzzy_id_min", help="Lowest fuzzed id")
    gen.add_argument("--fuzzy-id-max", dest="fuzzy_id_max", help="Highest fuzzed id")
    gen.add_argument("--rpm-id", dest="rpm_id", help="Spoofed RPM id")
    gen.add_argument("--gear-id", dest="gear_id", help="Spoofed gear id")
    gen.add_argument("--spoof-period", dest="spoof_period", type=float, help="Seconds between spoofed frames")
    gen.add_argument("--rpm-payload", dest="rpm_payload", help="Forged RPM payload as hex")
    gen.add_argument("--gear-payload", dest="gear_payload", help="Forged gear payload as hex")
    gen.add_argument("-o", "--out", required=True, help="Output trace file")

    tr = sub.add_parser("train", help="Train a classifier for one attack kind")
    _common(tr, attack_required=True)
    tr.add_argument("--trace", required=True, help="Labelled trace file")
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--batch-size", dest="batch_size", type=int)
    tr.add_argument("--lr", dest="learning_rate", type=float, help="Adam learning rate")
    tr.add_argument("--test-out", dest="test_out", help="Write the held-out test split as a trace")
    tr.add_argument("-o", "--out", required=True, help="Output model file")

    qz = sub.add_parser("quantize", help="Fold batch norm, calibrate and emit an INT8 model")
    _common(qz)
    qz.add_argument("--model", required=True, help="Float model file")
    qz.add_argument("--trace", required=True, help="Trace whose training split supplies calibration windows")
    qz.add_argument("--calib-windows", dest="calib_windows", type=int)
    qz.add_argument("--percentile", dest="calib_percentile", type=float, help="Clip activation ranges at this percentile")
    qz.add_argument("-o", "--out", required=True, help="Output quantized model file")

    ev = sub.add_parser("eval", help="Score float and/or quantized models on a labelled trace")
    _common(ev)
    ev.add_argument("--model", help="Float model file")
    ev.add_argument("--qmodel", help="Quantized model file")
    ev.add_argument("--trace", required=True, help="Labelled trace file")
    ev.add_argument("--report", help="Write key=value metric rows here")
    ev.add_argument("-o", "--out", help="Write the report tables here")

    bn = sub.add_parser("bench", help="Measure per-message inference latency")
    _common(bn)
    _predictor_args(bn)
    bn.add_argument("--trace", required=True, help="Trace supplying the windows")
    bn.add_argument("--mode", choices=["per_message", "batch", "stream"], default="per_message")
    bn.add_argument("--repeats", dest="bench_repeats", type=int)
    bn.add_argument("--min-windows", dest="bench_min_windows", type=int)
    bn.add_argument("--queue-depth", dest="queue_depth", type=int, help="In-flight inferences in stream mode")
    bn.add_argument("-o", "--out", help="Write the latency table and key=value line here")

    st = sub.add_parser("stream", help="Replay a trace through the receive pipeline")
    _common(st)
    _predictor_args(st)
    st.add_argument("--trace", required=True, help="Trace to replay")
    st.add_argument("--queue-depth", dest="queue_depth", type=int)
    st.add_argument("-o", "--out", required=True, help="Output verdict file")
    return parser


SETTING_FLAGS = (
    "seed", "width", "profile", "log_level", "duration", "burst_on", "burst_off", "epochs", "batch_size",
    "learning_rate", "calib_windows", "calib_percentile", "bench_repeats", "bench_min_windows", "queue_depth",
    "start_time", "jitter", "dos_id", "dos_period", "fuzzy_period", "fuzzy_id_min", "fuzzy_id_max", "rpm_id",
    "gear_id", "spoof_period", "rpm_payload", "gear_payload",
)


def _settings(args: argparse.Namespace) -> Settings:
    overrides = {name: getattr(args, name) for name in SETTING_FLAGS if getattr(args, name, None) is not None}
    return load_settings(args.config, overrides)


# ---------------------------------------------------------------------------
# Helpers


def _require_file(path: Optional[str], what: str) -> Optional[Path]:
    if path is None:
        return None
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{what} {path} does not exist")
    return p


def _require_out(path: Optional[str]) -> Optional[Path]:
    if path is None:
        return None
    p = Path(path)
    if not p.parent.is_dir():
        raise ConfigError(f"output directory {p.parent} does not exist")
    return p


def _attack(args: argparse.Namespace) -> Optional[AttackKind]:
    return AttackKind(args.attack) if args.attack else None


def _check_meta(predictor: Predictor, args: argparse.Namespace, source: str) -> None:
    """Refuse a model whose embedded attack kind or window length disagrees with the flags."""
    meta = predictor.meta
    attack = _attack(args)
    if attack is not None and meta.attack is not attack:
        raise ConfigError(f"{source} was trained for attack={meta.attack.value}, not {attack.value}")
    if args.n is not None and meta.n != args.n:
        raise ConfigError(f"{source} uses n={meta.n}, not n={args.n}")
    if args.width is not None and meta.width != args.width:
        raise ConfigError(f"{source} uses width={meta.width}, not width={args.width}")


def _load_predictor(args: argparse.Namespace) -> Tuple[Predictor, str]:
    if args.qmodel:
        path = _require_file(args.qmodel, "quantized model")
        predictor = load_qmodel(path)
    else:
        path = _require_file(args.model, "model")
        predictor = load_model(path)
    _check_meta(predictor, args, str(path))
    return predictor, str(path)


def _load_trace(path: Path, predictor: Predictor) -> Trace:
    kind = predictor.meta.attack
    return parse_trace(path, attack_kind=None if kind is AttackKind.NONE else kind)


def _calibration_subset(x: np.ndarray, limit: int) -> np.ndarray:
    if len(x) <= limit:
        return x
    idx = np.linspace(0, len(x) - 1, limit).round().astype(np.int64)
    return x[idx]


# ---------------------------------------------------------------------------
# Subcommands


def cmd_gen(args: argparse.Namespace, settings: Settings) -> int:
    out = _require_out(args.out)
    kind = AttackKind.NONE if args.attack_free else AttackKind(args.attack)
    trace = generate_trace(settings.generator_config(kind))
    write_trace(trace, out)
    print(f"{out}: {len(trace)} frames, {int(trace.attack_mask.sum())} attack")
    return 0


def cmd_train(args: argparse.Namespace, settings: Settings) -> int:
    trace_path = _require_file(args.trace, "trace")
    out = _require_out(args.out)
    test_out = _require_out(args.test_out)
    attack = AttackKind(args.attack)
    n = args.n if args.n is not None else settings.default_n(attack)
    if n < 1:
        raise ConfigError(f"window length must be >= 1, got {n}")

    trace = parse_trace(trace_path, attack_kind=attack)
    train_trace, val_trace, test_trace = split_trace(trace, settings.split_ratios)
    logger.info(f"Split {len(trace)} frames into train={len(train_trace)} val={len(val_trace)} test={len(test_trace)}")

    hyperparams = TrainingHyperparams(
        learning_rate=settings.learning_rate,
        beta1=settings.beta1,
        beta2=settings.beta2,
        epsilon=settings.adam_epsilon,
        epochs=settings.epochs,
        batch_size=settings.batch_size,
    )
    meta = make_meta(
        profile=settings.profile,
        n=n,
        width=settings.width,
        attack=attack,
        seed=settings.seed,
        dropout_rate=settings.dropout_rate,
        hyperparams=hyperparams,
        bn_momentum=settings.bn_momentum,
        bn_epsilon=settings.bn_epsilon,
    )
    model = build_model(meta)
    logger.info(f"Training {settings.profile} model ({param_count(model)} parameters) for {attack.value}, n={n}")
    result = train(
        model,
        window_tensors(train_trace, n, settings.width),
        window_tensors(val_trace, n, settings.width),
    )

    save_model(result.model, out)
    atomic_write(f"{out}.history.json", result.history.model_dump_json(indent=2))
    if test_out is not None:
        write_trace(test_trace, test_out)
    print(f"{out}: best epoch {result.history.best_epoch}, {len(result.history.epochs)} epochs")
    return 0


def cmd_quantize(args: argparse.Namespace, settings: Settings) -> int:
    model_path = _require_file(args.model, "model")
    trace_path = _require_file(args.trace, "trace")
    out = _require_out(args.out)

    model = load_model(model_path)
    _check_meta(model, args, str(model_path))
    trace = _load_trace(trace_path, model)
    train_trace, _, _ = split_trace(trace, settings.split_ratios)
    calib_x, _ = window_tensors(train_trace, model.meta.n, model.meta.width)
    calib_x = _calibration_subset(calib_x, settings.calib_windows)

    folded = fold_batchnorm(model)
    calib = calibrate(folded, calib_x, percentile=settings.calib_percentile)
    qmodel = quantize_model(folded, calib)
    for layer, excess in weight_roundtrip_error(folded, qmodel).items():
        logger.debug(f"{layer}: weight round-trip excess over half scale {excess:.3g}")
    save_qmodel(qmodel, out)
    print(f"{out}: {len(calib_x)} calibration windows ({calib.method})")
    return 0


def cmd_eval(args: argparse.Namespace, settings: Settings) -> int:
    model_path = _require_file(args.model, "model")
    qmodel_path = _require_file(args.qmodel, "quantized model")
    trace_path = _require_file(args.trace, "trace")
    out = _require_out(args.out)
    report_path = _require_out(args.report)

    model: Optional[Model] = load_model(model_path) if model_path else None
    qmodel = load_qmodel(qmodel_path) if qmodel_path else None
    if model is not None:
        _check_meta(model, args, str(model_path))
    if qmodel is not None:
        _check_meta(qmodel, args, str(qmodel_path))
    if model is not None and qmodel is not None:
        if (model.meta.attack, model.meta.n, model.meta.width) != (qmodel.meta.attack, qmodel.meta.n, qmodel.meta.width):
            raise ConfigError(f"{model_path} and {qmodel_path} were built for different attacks or window shapes")

    reference = qmodel if qmodel is not None else model
    trace = _load_trace(trace_path, reference)
    x, y = window_tensors(trace, reference.meta.n, reference.meta.width)
    if len(x) == 0:
        raise ConfigError(f"{trace_path} holds fewer than n={reference.meta.n} frames")

    if model is not None and qmodel is not None:
        comparison = compare_models(model, qmodel, x, y)
        result = AttackResult(
            attack=reference.meta.attack.value,
            float_confusion=comparison.float_confusion,
            quant_confusion=comparison.quant_confusion,
            agreement=comparison.agreement,
        )
    elif qmodel is not None:
        result = AttackResult(attack=qmodel.meta.attack.value, quant_confusion=confusion_from_arrays(qmodel.classify(x), y))
    else:
        result = AttackResult(attack=model.meta.attack.value, float_confusion=confusion_from_arrays(model.classify(x), y))

    text = report_tables([result])
    print(text, end="")
    if out is not None:
        atomic_write(out, text)
    if report_path is not None:
        atomic_write(report_path, key_value_rows([result]))
    return 0


def cmd_bench(args: argparse.Namespace, settings: Settings) -> int:
    predictor, _ = _load_predictor(args)
    trace_path = _require_file(args.trace, "trace")
    out = _require_out(args.out)
    trace = _load_trace(trace_path, predictor)

    if args.mode == "stream":
        _, report = stream_report(trace, predictor, settings.queue_depth, settings.bench_min_windows)
    else:
        report = bench(trace, predictor, args.mode, settings.bench_repeats, settings.bench_min_windows)
    text = latency_table(report) + latency_key_values(report)
    print(text, end="")
    if out is not None:
        atomic_write(out, text)
    return 0


def cmd_stream(args: argparse.Namespace, settings: Settings) -> int:
    predictor, _ = _load_predictor(args)
    trace_path = _require_file(args.trace, "trace")
    out = _require_out(args.out)
    trace = _load_trace(trace_path, predictor)

    lines = ["index,label,p_attack,latency_ns"]
    predicted, actual = [], []
    for verdict in stream(trace, predictor, queue_depth=settings.queue_depth):
        lines.append(f"{verdict.index},{verdict.label.value},{verdict.p_attack:.6f},{verdict.latency_ns}")
        predicted.append(verdict.label.is_attack)
        actual.append(trace.frames[verdict.index].label.is_attack)
    atomic_write(out, "\n".join(lines) + "\n")
    summary = f"{out}: {len(predicted)} verdicts from {predictor_kind(predictor)} model"
    if predicted:
        cm = confusion_from_arrays(predicted, actual)
        summary += f", {cm.tp + cm.fp} flagged as attack"
    print(summary)
    return 0


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "quantize": cmd_quantize,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "stream": cmd_stream,
}


def run(argv: Optional[List[str]] = None) -> int:
    """Exit status: 0 success, 1 runtime failure, 2 usage error."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "eval" and not args.model and not args.qmodel:
            parser.error("eval needs --model and/or --qmodel")
    except SystemExit as e:
        return int(e.code or 0)

    try:
        settings = _settings(args)
        logging.basicConfig(
            level=settings.log_level.upper(),
            format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        )
        return COMMANDS[args.command](args, settings)
    except (CanIdsError, OSError) as e:
        print(f"canids {args.command}: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        logger.debug("unexpected failure", exc_info=True)
        print(f"canids {args.command}: unexpected error: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())
