"""Post-training INT8 quantization and the integer-only inference path.

Weights are symmetric per output channel, activations asymmetric per tensor,
biases and accumulators int32. Convolution and dense layers run on integers
only; the two output logits are dequantized for a float softmax.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from ..models.schemas import ModelMeta, QuantMeta
from ..utils.fileio import atomic_write
from . import container
from .errors import EmptyCalibrationSet, MissingRunningStats, ModelFormatError, ShapeMismatch
from .fixed_point import (
    INT8_MAX,
    INT8_MIN,
    INT32_MAX,
    INT32_MIN,
    QuantParams,
    params_from_range,
    quantize_multiplier,
    quantize_symmetric,
    requantize,
    symmetric_scales,
)
from .layers import BatchNorm2D, Conv2D, Dense, Dropout, Flatten, Layer, ReLU, im2col, conv2d_forward, softmax
from .metrics import ConfusionMatrix, Metrics, compute, confusion_from_arrays
from .model import PREDICT_CHUNK, Model

logger = logging.getLogger(__name__)

QMODEL_MAGIC = b"CANIDS-QMODEL"

# 0 and 1 both land on the grid: q(0) = -128, q(1) = 127
BINARY_INPUT = QuantParams(scale=1.0 / 255.0, zero_point=-128)


# ---------------------------------------------------------------------------
# Batch-norm folding


def fold_batchnorm(model: Model) -> Model:
    """Merge every BatchNorm into the preceding conv; the result has no BN layers."""
    folded: List[Layer] = []
    layers = model.copy().layers
    i = 0
    while i < len(layers):
        layer = layers[i]
        nxt = layers[i + 1] if i + 1 < len(layers) else None
        if isinstance(layer, Conv2D) and isinstance(nxt, BatchNorm2D):
            if not nxt.has_running_stats:
                raise MissingRunningStats(f"{nxt.name} has no running statistics; train the model first")
            gamma = nxt.params["gamma"].astype(np.float64)
            beta = nxt.params["beta"].astype(np.float64)
            mean = nxt.buffers["running_mean"].astype(np.float64)
            var = nxt.buffers["running_var"].astype(np.float64)
            factor = gamma / np.sqrt(var + nxt.eps)
            dtype = layer.params["kernel"].dtype
            layer.params["kernel"] = (layer.params["kernel"].astype(np.float64) * factor).astype(dtype)
            layer.params["bias"] = ((layer.params["bias"].astype(np.float64) - mean) * factor + beta).astype(dtype)
            folded.append(layer)
            i += 2
            continue
        if isinstance(layer, BatchNorm2D):
            raise MissingRunningStats(f"{layer.name} does not follow a convolution and cannot be folded")
        folded.append(layer)
        i += 1
    return Model(model.meta, folded)


# ---------------------------------------------------------------------------
# Fused op view of a folded model


@dataclass
class _FusedOp:
    kind: str  # "conv" | "flatten" | "dense"
    layer: Optional[Layer] = None
    relu: bool = False


def _fused_ops(folded: Model) -> List[_FusedOp]:
    ops: List[_FusedOp] = []
    for layer in folded.layers:
        if isinstance(layer, Conv2D):
            ops.append(_FusedOp("conv", layer))
        elif isinstance(layer, ReLU):
            if not ops or ops[-1].kind != "conv":
                raise ShapeMismatch(f"{layer.name} does not follow a convolution")
            ops[-1].relu = True
        elif isinstance(layer, Dense):
            ops.append(_FusedOp("dense", layer))
        elif isinstance(layer, Flatten):
            ops.append(_FusedOp("flatten"))
        elif isinstance(layer, Dropout):
            continue
        else:
            raise MissingRunningStats(f"{layer.name} ({layer.kind}) must be folded before quantization")
    return ops


def _float_op(op: _FusedOp, x: np.ndarray) -> np.ndarray:
    if op.kind == "conv":
        out = conv2d_forward(x, op.layer.params["kernel"], op.layer.params["bias"])
        return np.maximum(out, 0) if op.relu else out
    if op.kind == "flatten":
        return x.reshape(x.shape[0], -1)
    return x @ op.layer.params["weight"] + op.layer.params["bias"]


# ---------------------------------------------------------------------------
# Calibration


@dataclass(frozen=True)
class Calibration:
    input: QuantParams
    outputs: Dict[str, QuantParams]  # keyed by conv/dense layer name
    method: str = "minmax"
    percentile: Optional[float] = None
    windows: int = 0


def calibrate(
    folded: Model,
    calib_x: np.ndarray,
    percentile: Optional[float] = None,
    chunk: int = PREDICT_CHUNK,
) -> Calibration:
    """Observe per-boundary activation ranges over the calibration windows.

    Global min/max by default; ``percentile`` (e.g. 99.99) clips both tails.
    """
    if len(calib_x) == 0:
        raise EmptyCalibrationSet("calibration needs at least one window")
    ops = _fused_ops(folded)
    names = [op.layer.name for op in ops if op.kind != "flatten"]
    lows = {name: np.inf for name in names}
    highs = {name: -np.inf for name in names}
    samples: Dict[str, List[np.ndarray]] = {name: [] for name in names}

    for start in range(0, len(calib_x), chunk):
        x = calib_x[start : start + chunk].astype(folded.dtype)
        for op in ops:
            x = _float_op(op, x)
            if op.kind == "flatten":
                continue
            name = op.layer.name
            if percentile is None:
                lows[name] = min(lows[name], float(x.min()))
                highs[name] = max(highs[name], float(x.max()))
            else:
                samples[name].append(x.ravel())

    outputs = {}
    for name in names:
        if percentile is not None:
            values = np.concatenate(samples[name])
            lo, hi = np.percentile(values, [100.0 - percentile, percentile])
        else:
            lo, hi = lows[name], highs[name]
        outputs[name] = params_from_range(lo, hi)
        logger.debug(f"calibrated {name}: range [{lo:.5g}, {hi:.5g}] -> {outputs[name]}")
    return Calibration(
        input=BINARY_INPUT,
        outputs=outputs,
        method="minmax" if percentile is None else "percentile",
        percentile=percentile,
        windows=len(calib_x),
    )


# ---------------------------------------------------------------------------
# Quantized model


@dataclass(frozen=True)
class QuantizedLayer:
    kind: str  # "conv" | "dense" | "flatten"
    name: str
    weight: Optional[np.ndarray] = None  # int8, HWIO for conv, (in, out) for dense
    weight_scale: Optional[np.ndarray] = None
    bias: Optional[np.ndarray] = None  # int32, scale = in_scale * weight_scale
    m: Optional[np.ndarray] = None
    k: Optional[np.ndarray] = None
    in_q: Optional[QuantParams] = None
    out_q: Optional[QuantParams] = None
    relu: bool = False


def _integer_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a.astype(np.int64) @ b.astype(np.int64)


class QuantizedModel:
    def __init__(self, qmeta: QuantMeta, input_q: QuantParams, layers: List[QuantizedLayer]):
        self.qmeta = qmeta
        self.input_q = input_q
        self.layers = layers

    @property
    def meta(self) -> ModelMeta:
        return self.qmeta.model

    @property
    def input_shape(self) -> Tuple[int, int, int]:
        return (self.meta.n, self.meta.width, 1)

    def quantize_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        if x.ndim != 4 or tuple(x.shape[1:]) != self.input_shape:
            raise ShapeMismatch(f"model expects (N, {self.meta.n}, {self.meta.width}, 1) input, got {x.shape}")
        return self.input_q.quantize(x)

    def forward_int(self, xq: np.ndarray, accumulators: Optional[List[np.ndarray]] = None) -> np.ndarray:
        """int8 input -> int8 logits. Optionally records each layer's int32 accumulator."""
        x = xq
        for layer in self.layers:
            if layer.kind == "flatten":
                x = x.reshape(x.shape[0], -1)
                continue
            centered = x.astype(np.int32) - layer.in_q.zero_point
            if layer.kind == "conv":
                kh, kw, cin, cout = layer.weight.shape
                cols, (n, ho, wo) = im2col(centered, kh, kw, 1, (kh - 1) // 2)
                acc = _integer_matmul(cols, layer.weight.reshape(kh * kw * cin, cout)).reshape(n, ho, wo, cout)
            else:
                acc = _integer_matmul(centered, layer.weight)
            acc = np.clip(acc + layer.bias, INT32_MIN, INT32_MAX).astype(np.int32)
            if accumulators is not None:
                accumulators.append(acc)
            out = requantize(acc, layer.m, layer.k) + layer.out_q.zero_point
            lower = layer.out_q.zero_point if layer.relu else INT8_MIN
            x = np.clip(out, lower, INT8_MAX).astype(np.int8)
        return x

    def logits(self, x: np.ndarray) -> np.ndarray:
        xq = self.quantize_input(x)
        return self.layers[-1].out_q.dequantize(self.forward_int(xq))

    def predict_proba(self, x: np.ndarray, chunk: int = PREDICT_CHUNK) -> np.ndarray:
        x = np.asarray(x)
        if len(x) == 0:
            self.quantize_input(x)
            return np.zeros((0, 2))
        return np.concatenate([softmax(self.logits(x[i : i + chunk])) for i in range(0, len(x), chunk)], axis=0)

    def predict(self, tensor: np.ndarray) -> Tuple[float, float]:
        probs = self.predict_proba(np.asarray(tensor)[None])[0]
        return float(probs[0]), float(probs[1])

    def classify(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_proba(x), axis=1)


def quantize_model(folded: Model, calib: Calibration) -> QuantizedModel:
    ops = _fused_ops(folded)
    layers: List[QuantizedLayer] = []
    in_q = calib.input
    for op in ops:
        if op.kind == "flatten":
            layers.append(QuantizedLayer(kind="flatten", name="flatten"))
            continue
        layer = op.layer
        weight = layer.params["kernel" if op.kind == "conv" else "weight"]
        bias = layer.params["bias"].astype(np.float64)
        # the stored (float32) scale is the one the integer weights are computed against
        w_scale = symmetric_scales(weight, axis=-1).astype(np.float32).astype(np.float64)
        w_q = quantize_symmetric(weight, w_scale)
        bias_scale = in_q.scale * w_scale
        b_q = np.clip(np.round(bias / bias_scale), INT32_MIN, INT32_MAX).astype(np.int32)
        out_q = calib.outputs[layer.name]
        pairs = [quantize_multiplier(s / out_q.scale) for s in bias_scale]
        layers.append(
            QuantizedLayer(
                kind=op.kind,
                name=layer.name,
                weight=w_q,
                weight_scale=w_scale.astype(np.float32),
                bias=b_q,
                m=np.array([p[0] for p in pairs], dtype=np.int32),
                k=np.array([p[1] for p in pairs], dtype=np.int32),
                in_q=in_q,
                out_q=out_q,
                relu=op.relu,
            )
        )
        logger.debug(
            f"quantized {layer.name}: weight scale [{w_scale.min():.3g}, {w_scale.max():.3g}] "
            f"in={in_q.scale:.3g}/{in_q.zero_point} out={out_q.scale:.3g}/{out_q.zero_point}"
        )
        in_q = out_q
    qmeta = QuantMeta(
        model=folded.meta,
        calibration=calib.method,
        percentile=calib.percentile,
        calib_windows=calib.windows,
    )
    return QuantizedModel(qmeta, calib.input, layers)


def weight_roundtrip_error(folded: Model, qmodel: QuantizedModel) -> Dict[str, float]:
    """Per layer, the largest amount by which |w - dequant(quant(w))| exceeds half its channel scale."""
    report = {}
    floats = {op.layer.name: op.layer for op in _fused_ops(folded) if op.layer is not None}
    for layer in qmodel.layers:
        if layer.kind == "flatten":
            continue
        source = floats[layer.name]
        w = source.params["kernel" if layer.kind == "conv" else "weight"].astype(np.float64)
        scale = layer.weight_scale.astype(np.float64)
        err = np.abs(w - layer.weight.astype(np.float64) * scale)
        report[layer.name] = float((err - scale / 2).max())
    return report


# ---------------------------------------------------------------------------
# Float vs integer comparison


@dataclass(frozen=True)
class ModelComparison:
    float_confusion: ConfusionMatrix
    quant_confusion: ConfusionMatrix
    float_metrics: Metrics
    quant_metrics: Metrics
    agreement: float


def compare_models(model: Model, qmodel: QuantizedModel, x: np.ndarray, y: np.ndarray) -> ModelComparison:
    """Run both paths on identical windows."""
    float_pred = model.classify(x)
    quant_pred = qmodel.classify(x)
    float_cm = confusion_from_arrays(float_pred, y)
    quant_cm = confusion_from_arrays(quant_pred, y)
    return ModelComparison(
        float_confusion=float_cm,
        quant_confusion=quant_cm,
        float_metrics=compute(float_cm),
        quant_metrics=compute(quant_cm),
        agreement=float(np.mean(float_pred == quant_pred)) if len(x) else 1.0,
    )


# ---------------------------------------------------------------------------
# Serialization


def qmodel_to_bytes(qmodel: QuantizedModel) -> bytes:
    header = {
        "meta": json.loads(qmodel.qmeta.model_dump_json()),
        "input": qmodel.input_q.model_dump(),
        "layers": [
            {
                "kind": layer.kind,
                "name": layer.name,
                "relu": layer.relu,
                "in": layer.in_q.model_dump() if layer.in_q else None,
                "out": layer.out_q.model_dump() if layer.out_q else None,
            }
            for layer in qmodel.layers
        ],
    }
    blobs = []
    for layer in qmodel.layers:
        if layer.kind == "flatten":
            continue
        for field_name in ("weight", "weight_scale", "bias", "m", "k"):
            blobs.append((f"{layer.name}.{field_name}", getattr(layer, field_name)))
    return container.pack(QMODEL_MAGIC, json.dumps(header, sort_keys=True), blobs)


def _expected_qshapes(meta: ModelMeta, kind: str, index: int, channels: int) -> Tuple[Tuple[int, ...], int]:
    """(weight shape, output channels) for the index-th compute layer given the input channel count."""
    if kind == "conv":
        cout = meta.filters[index]
        return (3, 3, channels, cout), cout
    return (meta.n * meta.width * channels, 2), 2


def qmodel_from_bytes(data: bytes) -> QuantizedModel:
    header_text, blobs = container.unpack(QMODEL_MAGIC, data)
    try:
        header = json.loads(header_text)
        qmeta = QuantMeta.model_validate(header["meta"])
        input_q = QuantParams.model_validate(header["input"])
        entries = header["layers"]
    except (ValueError, KeyError) as e:
        raise ModelFormatError(f"bad quantized model header: {e}") from None

    meta = qmeta.model
    expected_kinds = ["conv"] * len(meta.filters) + ["flatten", "dense"]
    if [e.get("kind") for e in entries] != expected_kinds:
        raise ModelFormatError(f"layer kinds {[e.get('kind') for e in entries]} do not match the architecture")

    layers: List[QuantizedLayer] = []
    channels = 1
    compute_index = 0
    for entry in entries:
        if entry["kind"] == "flatten":
            layers.append(QuantizedLayer(kind="flatten", name=entry["name"]))
            continue
        w_shape, cout = _expected_qshapes(meta, entry["kind"], compute_index, channels)
        name = entry["name"]
        layers.append(
            QuantizedLayer(
                kind=entry["kind"],
                name=name,
                weight=container.expect_blob(blobs, f"{name}.weight", w_shape),
                weight_scale=container.expect_blob(blobs, f"{name}.weight_scale", (cout,)),
                bias=container.expect_blob(blobs, f"{name}.bias", (cout,)),
                m=container.expect_blob(blobs, f"{name}.m", (cout,)),
                k=container.expect_blob(blobs, f"{name}.k", (cout,)),
                in_q=QuantParams.model_validate(entry["in"]),
                out_q=QuantParams.model_validate(entry["out"]),
                relu=bool(entry["relu"]),
            )
        )
        channels = cout
        compute_index += 1
    return QuantizedModel(qmeta, input_q, layers)


def save_qmodel(qmodel: QuantizedModel, path: Union[str, Path]) -> None:
    atomic_write(path, qmodel_to_bytes(qmodel))
    logger.info(f"Saved quantized model for attack={qmodel.meta.attack.value} to {path}")


def load_qmodel(path: Union[str, Path]) -> QuantizedModel:
    return qmodel_from_bytes(Path(path).read_bytes())
