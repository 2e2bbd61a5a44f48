"""Model descriptions and the parameterized model itself.

A ModelSpec is a declarative layer list that validates shape chaining up
front; a Model binds a spec to parameter tensors. Snapshots are immutable
copies used by the tester and evaluator while training mutates the live
parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError, ValidationError
from . import functional as F
from .tensor import Tensor, no_grad


@dataclass(frozen=True)
class Conv2d:
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0


@dataclass(frozen=True)
class Dense:
    out_features: int


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class MaxPool2d:
    kernel: int = 2


@dataclass(frozen=True)
class Flatten:
    pass


_LAYER_TYPES = {"conv2d": Conv2d, "dense": Dense, "relu": ReLU, "maxpool2d": MaxPool2d, "flatten": Flatten}


def _layer_to_dict(layer) -> dict:
    for name, cls in _LAYER_TYPES.items():
        if isinstance(layer, cls):
            d = {"type": name}
            d.update({k: getattr(layer, k) for k in layer.__dataclass_fields__})
            return d
    raise ConfigurationError(f"unknown layer {layer!r}")


def _layer_from_dict(d: dict):
    kind = d.get("type")
    if kind not in _LAYER_TYPES:
        raise ConfigurationError(f"unknown layer type {kind!r}")
    kwargs = {k: v for k, v in d.items() if k != "type"}
    return _LAYER_TYPES[kind](**kwargs)


@dataclass(frozen=True)
class ModelSpec:
    """Input shape [C,H,W], class count, and an ordered layer list."""

    input_shape: tuple
    num_classes: int
    layers: tuple

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.num_classes < 2:
            raise ConfigurationError("num_classes must be at least 2")
        if len(self.input_shape) != 3:
            raise ConfigurationError("input_shape must be [channels, height, width]")
        out = self.output_shape()
        if out != (self.num_classes,):
            raise ConfigurationError(f"layers produce shape {out}, expected ({self.num_classes},)")

    def output_shape(self) -> tuple:
        shape = tuple(self.input_shape)
        for i, layer in enumerate(self.layers):
            shape = _propagate(shape, layer, i)
        return shape

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "num_classes": self.num_classes,
            "layers": [_layer_to_dict(l) for l in self.layers],
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelSpec":
        return ModelSpec(
            input_shape=tuple(d["input_shape"]),
            num_classes=int(d["num_classes"]),
            layers=tuple(_layer_from_dict(l) for l in d["layers"]),
        )


def _propagate(shape: tuple, layer, index: int) -> tuple:
    where = f"layer {index} ({type(layer).__name__})"
    if isinstance(layer, Conv2d):
        if len(shape) != 3:
            raise ConfigurationError(f"{where}: expects [C,H,W], got {shape}")
        c, h, w = shape
        hp, wp = h + 2 * layer.padding, w + 2 * layer.padding
        if hp < layer.kernel or wp < layer.kernel:
            raise ConfigurationError(f"{where}: kernel {layer.kernel} exceeds padded input {hp}x{wp}")
        return (
            layer.out_channels,
            (hp - layer.kernel) // layer.stride + 1,
            (wp - layer.kernel) // layer.stride + 1,
        )
    if isinstance(layer, MaxPool2d):
        if len(shape) != 3:
            raise ConfigurationError(f"{where}: expects [C,H,W], got {shape}")
        c, h, w = shape
        if h % layer.kernel or w % layer.kernel:
            raise ConfigurationError(f"{where}: {h}x{w} not divisible by kernel {layer.kernel}")
        return (c, h // layer.kernel, w // layer.kernel)
    if isinstance(layer, Flatten):
        return (int(np.prod(shape)),)
    if isinstance(layer, Dense):
        if len(shape) != 1:
            raise ConfigurationError(f"{where}: expects flattened input, got {shape}")
        return (layer.out_features,)
    if isinstance(layer, ReLU):
        return shape
    raise ConfigurationError(f"{where}: unsupported layer")


@dataclass(frozen=True)
class ModelSnapshot:
    """Frozen parameter state; equal version ids imply bitwise-equal params."""

    spec: ModelSpec
    params: tuple  # ((name, readonly ndarray), ...)
    version: int

    def param_dict(self) -> dict:
        return dict(self.params)


class Model:
    """A ModelSpec bound to parameter tensors, with forward and snapshotting."""

    def __init__(self, spec: ModelSpec, seed: int = 0, dtype=np.float32):
        self.spec = spec
        self.version = 0
        self._params: dict[str, Tensor] = {}
        self._init_params(seed, dtype)

    def _init_params(self, seed: int, dtype) -> None:
        # Kaiming-uniform weights (bound sqrt(6/fan_in)), zero biases.
        rng = np.random.default_rng(seed)
        shape = tuple(self.spec.input_shape)
        for i, layer in enumerate(self.spec.layers):
            if isinstance(layer, Conv2d):
                fan_in = shape[0] * layer.kernel * layer.kernel
                bound = float(np.sqrt(6.0 / fan_in))
                w = rng.uniform(-bound, bound, size=(layer.out_channels, shape[0], layer.kernel, layer.kernel))
                self._params[f"{i}.weight"] = Tensor(w.astype(dtype), requires_grad=True, name=f"{i}.weight")
                self._params[f"{i}.bias"] = Tensor(
                    np.zeros(layer.out_channels, dtype=dtype), requires_grad=True, name=f"{i}.bias"
                )
            elif isinstance(layer, Dense):
                fan_in = shape[0]
                bound = float(np.sqrt(6.0 / fan_in))
                w = rng.uniform(-bound, bound, size=(layer.out_features, fan_in))
                self._params[f"{i}.weight"] = Tensor(w.astype(dtype), requires_grad=True, name=f"{i}.weight")
                self._params[f"{i}.bias"] = Tensor(
                    np.zeros(layer.out_features, dtype=dtype), requires_grad=True, name=f"{i}.bias"
                )
            shape = _propagate(shape, layer, i)

    # -- parameter access --------------------------------------------------

    def parameters(self) -> list[Tensor]:
        return list(self._params.values())

    def named_parameters(self) -> list[tuple]:
        return list(self._params.items())

    def trainable_parameters(self) -> list[Tensor]:
        return [p for p in self._params.values() if p.requires_grad]

    def zero_grads(self) -> None:
        for p in self._params.values():
            p.zero_grad()

    def set_trainable_last(self, k: int | None) -> None:
        """Freeze all but the last `k` parameterized layers (None = all trainable)."""
        param_layers = sorted({name.split(".")[0] for name in self._params}, key=int)
        trainable = set(param_layers if k is None else param_layers[len(param_layers) - min(k, len(param_layers)) :])
        for name, p in self._params.items():
            p.requires_grad = name.split(".")[0] in trainable

    def load_param_dict(self, arrays: dict, strict_dtype: bool = False) -> None:
        for name, p in self._params.items():
            if name not in arrays:
                raise ConfigurationError(f"missing parameter {name!r}")
            arr = np.asarray(arrays[name])
            if arr.shape != p.data.shape:
                raise ConfigurationError(f"parameter {name!r} shape {arr.shape} != {p.data.shape}")
            p.data = arr.astype(arr.dtype if strict_dtype else p.data.dtype).copy()

    # -- forward -------------------------------------------------------------

    def forward(self, x: Tensor) -> Tensor:
        if x.data.ndim != 4 or x.data.shape[1:] != tuple(self.spec.input_shape):
            raise ConfigurationError(
                f"input shape {x.data.shape} does not match model input {self.spec.input_shape}"
            )
        out = x
        for i, layer in enumerate(self.spec.layers):
            if isinstance(layer, Conv2d):
                out = F.conv2d(out, self._params[f"{i}.weight"], self._params[f"{i}.bias"], layer.stride, layer.padding)
            elif isinstance(layer, MaxPool2d):
                out = F.maxpool2d(out, layer.kernel)
            elif isinstance(layer, Flatten):
                out = out.reshape(out.data.shape[0], -1)
            elif isinstance(layer, Dense):
                out = F.dense(out, self._params[f"{i}.weight"], self._params[f"{i}.bias"])
            elif isinstance(layer, ReLU):
                out = out.relu()
        return out

    def predict_logits(self, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
        """Graph-free forward over an ndarray [N,C,H,W]; returns [N,num_classes]."""
        images = np.asarray(images)
        if images.ndim != 4:
            raise ValidationError("predict_logits expects [N,C,H,W]")
        outs = []
        with no_grad():
            for start in range(0, images.shape[0], batch_size):
                chunk = Tensor(images[start : start + batch_size].astype(np.float32))
                outs.append(self.forward(chunk).data)
        if not outs:
            return np.zeros((0, self.spec.num_classes), dtype=np.float32)
        return np.concatenate(outs, axis=0)

    # -- snapshots & versioning ----------------------------------------------

    def bump_version(self) -> None:
        self.version += 1

    def snapshot(self) -> ModelSnapshot:
        frozen = []
        for name, p in self._params.items():
            arr = p.data.copy()
            arr.flags.writeable = False
            frozen.append((name, arr))
        return ModelSnapshot(spec=self.spec, params=tuple(frozen), version=self.version)

    @staticmethod
    def from_snapshot(snap: ModelSnapshot) -> "Model":
        model = Model(snap.spec, seed=0)
        model.load_param_dict(snap.param_dict(), strict_dtype=True)
        model.version = snap.version
        return model


def backward(model: Model, loss: Tensor) -> None:
    """Backpropagate `loss` and materialize zero grads for untouched params."""
    loss.backward()
    for p in model.parameters():
        if p.requires_grad and p.grad is None:
            p.grad = np.zeros_like(p.data)


# -- model registry ------------------------------------------------------------


def model_spec(name: str, input_shape, num_classes: int) -> ModelSpec:
    """Named desk-scale architectures; `name` is the config-facing identifier."""
    c, h, w = input_shape
    if name == "cnn_small":
        layers = (
            Conv2d(8, 3, padding=1),
            ReLU(),
            MaxPool2d(2),
            Conv2d(16, 3, padding=1),
            ReLU(),
            MaxPool2d(2),
            Flatten(),
            Dense(num_classes),
        )
    elif name == "mlp_small":
        layers = (Flatten(), Dense(64), ReLU(), Dense(num_classes))
    elif name == "linear":
        layers = (Flatten(), Dense(num_classes))
    else:
        raise ValidationError(f"unknown model name {name!r} (choose cnn_small, mlp_small, linear)")
    return ModelSpec(input_shape=tuple(input_shape), num_classes=num_classes, layers=layers)
