"""The deep-CNN classifier: layer stack, inference, and the model file format."""

from __future__ import annotations

import copy
import logging
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from ..models.schemas import ModelMeta, TrainingHyperparams
from ..utils.fileio import atomic_write
from . import container
from .errors import ConfigError, ModelFormatError, NonFiniteValue, ShapeMismatch
from .layers import BatchNorm2D, Conv2D, Dense, Dropout, Flatten, Layer, ReLU, softmax
from .trace_io import AttackKind

logger = logging.getLogger(__name__)

MODEL_MAGIC = b"CANIDS-MODEL"

FULL_FILTERS = [40, 80, 120, 160, 200, 240, 256, 512]
TINY_FILTERS = [8, 16, 16, 32]
NUM_CLASSES = 2
PREDICT_CHUNK = 1024


def profile_filters(profile: str) -> List[int]:
    if profile == "paper":
        return list(FULL_FILTERS)
    if profile == "tiny":
        return list(TINY_FILTERS)
    raise ConfigError(f"unknown architecture profile {profile!r}")


def make_meta(
    profile: str = "tiny",
    n: int = 4,
    width: int = 16,
    attack: AttackKind = AttackKind.NONE,
    seed: int = 0,
    dropout_rate: float = 0.2,
    hyperparams: Optional[TrainingHyperparams] = None,
    **extra,
) -> ModelMeta:
    """Meta for a named profile; dropout follows every second conv block."""
    filters = profile_filters(profile)
    return ModelMeta(
        attack=attack,
        n=n,
        width=width,
        profile=profile,
        filters=filters,
        dropout_rate=dropout_rate,
        dropout_after=list(range(2, len(filters) + 1, 2)),
        seed=seed,
        hyperparams=hyperparams or TrainingHyperparams(),
        **extra,
    )


class Model:
    """Conv -> BN -> ReLU blocks, then Flatten -> Dense(2); softmax applied on output."""

    def __init__(self, meta: ModelMeta, layers: List[Layer]):
        self.meta = meta
        self.layers = layers

    @property
    def input_shape(self) -> Tuple[int, int, int]:
        return (self.meta.n, self.meta.width, 1)

    @property
    def dtype(self):
        return self.layers[-1].params["weight"].dtype

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 4 or tuple(x.shape[1:]) != self.input_shape:
            raise ShapeMismatch(f"model expects (N, {self.meta.n}, {self.meta.width}, 1) input, got {x.shape}")
        return x.astype(self.dtype, copy=False)

    def forward(self, x: np.ndarray, training: bool = False, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        """Logits for a batch; raises NonFiniteValue on NaN/Inf activations."""
        out = self._check_input(x)
        for layer in self.layers:
            out = layer.forward(out, training=training, rng=rng)
            if not np.isfinite(out).all():
                raise NonFiniteValue(f"non-finite activation after {layer.name}")
        return out

    def backward(self, dlogits: np.ndarray) -> np.ndarray:
        grad = dlogits
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def predict_proba(self, x: np.ndarray, chunk: int = PREDICT_CHUNK) -> np.ndarray:
        """(N, 2) class probabilities [p_normal, p_attack] in inference mode."""
        x = self._check_input(x)
        if len(x) == 0:
            return np.zeros((0, NUM_CLASSES), dtype=self.dtype)
        parts = [softmax(self.forward(x[i : i + chunk])) for i in range(0, len(x), chunk)]
        return np.concatenate(parts, axis=0)

    def predict(self, tensor: np.ndarray) -> Tuple[float, float]:
        """(p_normal, p_attack) for a single (n, W, 1) tensor."""
        probs = self.predict_proba(np.asarray(tensor)[None])[0]
        return float(probs[0]), float(probs[1])

    def classify(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_proba(x), axis=1)

    # parameter access -------------------------------------------------------

    def named_params(self) -> Dict[str, np.ndarray]:
        return {f"{l.name}.{k}": v for l in self.layers for k, v in l.params.items()}

    def named_grads(self) -> Dict[str, np.ndarray]:
        return {f"{l.name}.{k}": v for l in self.layers for k, v in l.grads.items()}

    def named_buffers(self) -> Dict[str, np.ndarray]:
        return {f"{l.name}.{k}": v for l in self.layers for k, v in l.buffers.items()}

    def state(self) -> Dict[str, np.ndarray]:
        return {k: v.copy() for k, v in {**self.named_params(), **self.named_buffers()}.items()}

    def load_state(self, state: Dict[str, np.ndarray]) -> None:
        for layer in self.layers:
            for store in (layer.params, layer.buffers):
                for key in store:
                    full = f"{layer.name}.{key}"
                    if full in state:
                        store[key] = state[full].astype(store[key].dtype).copy()

    def layer(self, name: str) -> Layer:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)

    def copy(self) -> "Model":
        return copy.deepcopy(self)


def build_layers(meta: ModelMeta, dtype=np.float32) -> List[Layer]:
    rng = np.random.default_rng(meta.seed)
    layers: List[Layer] = []
    channels = 1
    for block, filters in enumerate(meta.filters, start=1):
        layers.append(Conv2D(f"conv{block}", channels, filters, rng, dtype))
        layers.append(BatchNorm2D(f"bn{block}", filters, meta.bn_momentum, meta.bn_epsilon, dtype))
        layers.append(ReLU(f"relu{block}"))
        if block in meta.dropout_after:
            layers.append(Dropout(f"dropout{block}", meta.dropout_rate))
        channels = filters
    layers.append(Flatten("flatten"))
    layers.append(Dense("dense", meta.n * meta.width * channels, NUM_CLASSES, rng, dtype))
    return layers


def build_model(meta: ModelMeta, dtype=np.float32) -> Model:
    return Model(meta, build_layers(meta, dtype))


def param_count(model: Model) -> int:
    """Learnable scalars only; BN running statistics are not counted."""
    return int(sum(v.size for v in model.named_params().values()))


# ---------------------------------------------------------------------------
# Serialization


def model_to_bytes(model: Model) -> bytes:
    blobs = [(name, arr) for name, arr in model.named_params().items()]
    blobs += [(name, arr) for name, arr in model.named_buffers().items()]
    return container.pack(MODEL_MAGIC, model.meta.model_dump_json(), blobs)


def model_from_bytes(data: bytes) -> Model:
    header, blobs = container.unpack(MODEL_MAGIC, data)
    try:
        meta = ModelMeta.model_validate_json(header)
    except ValueError as e:
        raise ModelFormatError(f"bad model header: {e}") from None
    model = build_model(meta)
    expected = {**model.named_params(), **model.named_buffers()}
    state = {name: container.expect_blob(blobs, name, arr.shape) for name, arr in expected.items()}
    unexpected = set(blobs) - set(expected)
    if unexpected:
        raise ModelFormatError(f"unexpected blobs {sorted(unexpected)}")
    model.load_state(state)
    return model


def save_model(model: Model, path: Union[str, Path]) -> None:
    atomic_write(path, model_to_bytes(model))
    logger.info(f"Saved model ({param_count(model)} parameters) to {path}")


def load_model(path: Union[str, Path]) -> Model:
    model = model_from_bytes(Path(path).read_bytes())
    logger.info(f"Loaded {model.meta.profile} model for attack={model.meta.attack.value} n={model.meta.n} from {path}")
    return model
