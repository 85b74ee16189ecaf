"""Fusion model: CNN image branch + static-feature branch + binary head.

A ModelSpec is a declarative, ordered description of both branches and the
head; Model is its instantiated form with named parameter tensors. Specs
serialize to a small INI-style text format (see to_text/from_text) so that
experiments and the external checkpoint exporter agree on architecture.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DimensionError, SpecError
from .init import kaiming_init

IMAGE_FC_WIDTH = 64
STATIC_FC_WIDTH = 16


@dataclass(frozen=True)
class LayerDef:
    """One layer in a branch: kind plus its integer/float arguments."""

    kind: str  # conv | maxpool | relu | flatten | dropout | linear
    filters: int = 0
    kernel: int = 0
    stride: int = 1
    padding: int = 0
    window: int = 0
    rate: float = 0.0
    out: int = 0
    in_width: int = 0  # optional declared input width for linear layers (0 = inferred)


def conv(filters: int, kernel: int, stride: int = 1, padding: int = 0) -> LayerDef:
    return LayerDef("conv", filters=filters, kernel=kernel, stride=stride, padding=padding)


def maxpool(window: int) -> LayerDef:
    return LayerDef("maxpool", window=window)


def relu() -> LayerDef:
    return LayerDef("relu")


def flatten() -> LayerDef:
    return LayerDef("flatten")


def dropout(rate: float) -> LayerDef:
    return LayerDef("dropout", rate=rate)


def linear(out: int, in_width: int = 0) -> LayerDef:
    return LayerDef("linear", out=out, in_width=in_width)


@dataclass(frozen=True)
class StandardCnnConfig:
    """Hyperparameters of the standard CNN; defaults are the tuned values."""

    num_conv_layers: int = 5
    kernel_size: int = 4
    pool_size: int = 3
    filters_per_layer: int = 11
    dropout: float = 0.4

    def validate(self) -> None:
        checks = [
            ("num_conv_layers", self.num_conv_layers, 5, 10),
            ("kernel_size", self.kernel_size, 2, 5),
            ("pool_size", self.pool_size, 3, 4),
            ("filters_per_layer", self.filters_per_layer, 6, 12),
            ("dropout", self.dropout, 0.0, 0.5),
        ]
        for name, value, lo, hi in checks:
            if not lo <= value <= hi:
                raise ConfigError(f"{name}={value} outside allowed range [{lo}, {hi}]")


@dataclass
class ModelSpec:
    """Ordered layer lists for both branches plus the one-logit head."""

    image_branch: list[tuple[str, LayerDef]]
    static_branch: list[tuple[str, LayerDef]]
    head: tuple[str, LayerDef]
    input_image_shape: tuple[int, int, int] = (3, 224, 224)
    static_dim: int = 3

    def layer_names(self) -> list[str]:
        names = [n for n, _ in self.image_branch] + [n for n, _ in self.static_branch]
        names.append(self.head[0])
        return names


def _walk_conv_shape(shape: tuple, layer: LayerDef, name: str) -> tuple:
    c, h, w = shape
    if layer.kind == "conv":
        hp, wp = h + 2 * layer.padding, w + 2 * layer.padding
        if layer.kernel > hp or layer.kernel > wp:
            raise SpecError(f"layer {name!r}: kernel {layer.kernel} exceeds padded input {(hp, wp)}")
        ho = (hp - layer.kernel) // layer.stride + 1
        wo = (wp - layer.kernel) // layer.stride + 1
        return (layer.filters, ho, wo)
    if layer.kind == "maxpool":
        if layer.window > h or layer.window > w:
            raise SpecError(f"layer {name!r}: pool window {layer.window} exceeds input {(h, w)}")
        return (c, h // layer.window, w // layer.window)
    if layer.kind in ("relu", "dropout"):
        return shape
    raise SpecError(f"layer {name!r}: kind {layer.kind!r} not usable before flatten")


def walk_shapes(spec: ModelSpec) -> dict:
    """Infer every parameter shape and both branch output widths.

    Returns {"params": {layer_name: (weight_shape, bias_shape)},
             "image_width": int, "static_width": int, "head_in": int}.
    """
    names = spec.layer_names()
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise SpecError(f"layer names must be unique, duplicated: {dupes}")
    if spec.static_dim != 3:
        raise SpecError(f"static_dim must be 3 (age, sex, site), got {spec.static_dim}")
    if len(spec.input_image_shape) != 3 or spec.input_image_shape[0] != 3:
        raise SpecError(f"input_image_shape must be (3,H,W), got {spec.input_image_shape}")

    params: dict[str, tuple] = {}

    shape: tuple = spec.input_image_shape
    flat: Optional[int] = None
    for name, layer in spec.image_branch:
        if flat is None and layer.kind == "flatten":
            flat = int(np.prod(shape))
            continue
        if flat is None:
            if layer.kind == "linear":
                raise SpecError(f"layer {name!r}: linear requires a flatten first")
            if layer.kind == "conv":
                params[name] = ((layer.filters, shape[0], layer.kernel, layer.kernel), (layer.filters,))
            shape = _walk_conv_shape(shape, layer, name)
        else:
            if layer.kind == "linear":
                if layer.in_width and layer.in_width != flat:
                    raise SpecError(f"layer {name!r}: declared input width {layer.in_width} "
                                    f"but branch provides {flat}")
                params[name] = ((layer.out, flat), (layer.out,))
                flat = layer.out
            elif layer.kind in ("relu", "dropout"):
                pass
            else:
                raise SpecError(f"layer {name!r}: kind {layer.kind!r} not usable after flatten")
    if flat is None:
        raise SpecError("image branch must end with flatten (optionally followed by linear layers)")
    image_width = flat

    static_width = 0
    if spec.static_branch:
        width = spec.static_dim
        for name, layer in spec.static_branch:
            if layer.kind == "linear":
                if layer.in_width and layer.in_width != width:
                    raise SpecError(f"layer {name!r}: declared input width {layer.in_width} "
                                    f"but branch provides {width}")
                params[name] = ((layer.out, width), (layer.out,))
                width = layer.out
            elif layer.kind in ("relu", "dropout"):
                pass
            else:
                raise SpecError(f"layer {name!r}: kind {layer.kind!r} not allowed in static branch")
        static_width = width

    head_name, head_layer = spec.head
    if head_layer.kind != "linear" or head_layer.out != 1:
        raise SpecError(f"head {head_name!r} must be a linear layer with out=1")
    head_in = image_width + static_width
    if head_layer.in_width and head_layer.in_width != head_in:
        raise SpecError(f"head width mismatch: declared {head_layer.in_width}, "
                        f"branches provide {head_in} ({image_width} image + {static_width} static)")
    params[head_name] = ((1, head_in), (1,))

    return {"params": params, "image_width": image_width,
            "static_width": static_width, "head_in": head_in}


@dataclass
class Model:
    spec: ModelSpec
    params: dict[str, dict[str, Tensor]] = field(default_factory=dict)

    def parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for name, tensors in self.params.items():
            out.append((f"{name}.weight", tensors["weight"]))
            out.append((f"{name}.bias", tensors["bias"]))
        return out

    def num_parameters(self) -> int:
        return sum(t.size for _, t in self.parameters())

    def set_trainable(self, trainable: bool, freeze: Sequence[str] = ()) -> None:
        """Toggle requires_grad; layer names in ``freeze`` stay frozen."""
        for name, tensors in self.params.items():
            flag = trainable and name not in freeze
            tensors["weight"].requires_grad = flag
            tensors["bias"].requires_grad = flag


def build(spec: ModelSpec, seed: int) -> Model:
    """Instantiate a spec: He-initialized weights, zero biases, deterministic per seed."""
    walked = walk_shapes(spec)
    rng = np.random.default_rng(seed)
    model = Model(spec=spec)
    order = [n for n, _ in spec.image_branch] + [n for n, _ in spec.static_branch] + [spec.head[0]]
    for name in order:
        if name not in walked["params"]:
            continue
        w_shape, b_shape = walked["params"][name]
        model.params[name] = {
            "weight": Tensor(kaiming_init(w_shape, rng=rng), requires_grad=True, name=f"{name}.weight"),
            "bias": Tensor(np.zeros(b_shape), requires_grad=True, name=f"{name}.bias"),
        }
    return model


def _apply_branch(x: Tensor, layers, params, train_mode, rng, flat_seen=False) -> Tensor:
    for name, layer in layers:
        if layer.kind == "conv":
            p = params[name]
            x = ad.conv2d(x, p["weight"], p["bias"], stride=layer.stride, padding=layer.padding)
        elif layer.kind == "maxpool":
            x = ad.max_pool2d(x, layer.window)
        elif layer.kind == "relu":
            x = ad.relu(x)
        elif layer.kind == "flatten":
            x = ad.flatten(x)
        elif layer.kind == "dropout":
            x = ad.dropout(x, layer.rate, train_mode, rng)
        elif layer.kind == "linear":
            p = params[name]
            x = ad.linear(x, p["weight"], p["bias"])
        else:
            raise SpecError(f"unknown layer kind {layer.kind!r}")
    return x


def forward(model: Model, image, static, train_mode: bool = False,
            rng: Optional[np.random.Generator] = None) -> Tensor:
    """Run the fusion model on one sample; returns the (1,) logit tensor."""
    img = image if isinstance(image, Tensor) else Tensor(image)
    st = static if isinstance(static, Tensor) else Tensor(static)
    expect = model.spec.input_image_shape
    if img.shape != expect:
        raise DimensionError(f"image shape {img.shape} does not match spec {expect}")
    if st.shape != (model.spec.static_dim,):
        raise DimensionError(f"static shape {st.shape} does not match ({model.spec.static_dim},)")

    x = _apply_branch(img, model.spec.image_branch, model.params, train_mode, rng)
    if model.spec.static_branch:
        s = _apply_branch(st, model.spec.static_branch, model.params, train_mode, rng)
        x = ad.concat(x, s)
    head_name, _ = model.spec.head
    p = model.params[head_name]
    return ad.linear(x, p["weight"], p["bias"])


def predict_proba(model: Model, samples) -> np.ndarray:
    """Eval-mode probabilities for a list of samples, order preserving."""
    probs = np.empty(len(samples), dtype=np.float64)
    for i, sample in enumerate(samples):
        logit = forward(model, sample.image, sample.static, train_mode=False)
        probs[i] = ad.sigmoid(logit).data[0]
    return probs


def make_standard_spec(config: StandardCnnConfig = StandardCnnConfig(),
                       image_size: int = 224) -> ModelSpec:
    """The standard CNN wired into the fusion layout.

    Convolutions use padding (kernel-1)//2 so every configuration in the
    allowed hyperparameter ranges stays constructible; pooling follows the
    first two conv blocks only.
    """
    config.validate()
    pad = (config.kernel_size - 1) // 2
    image_layers: list[tuple[str, LayerDef]] = []
    for i in range(1, config.num_conv_layers + 1):
        image_layers.append((f"conv{i}", conv(config.filters_per_layer, config.kernel_size,
                                              stride=1, padding=pad)))
        image_layers.append((f"relu{i}", relu()))
        if i <= 2:
            image_layers.append((f"pool{i}", maxpool(config.pool_size)))
    image_layers.append(("flatten", flatten()))
    image_layers.append(("drop", dropout(config.dropout)))
    image_layers.append(("fc_img", linear(IMAGE_FC_WIDTH)))
    static_layers = [("fc_static", linear(STATIC_FC_WIDTH)), ("relu_static", relu())]
    head = ("head", linear(1, in_width=IMAGE_FC_WIDTH + STATIC_FC_WIDTH))
    spec = ModelSpec(image_branch=image_layers, static_branch=static_layers, head=head,
                     input_image_shape=(3, image_size, image_size))
    walk_shapes(spec)  # fail fast if the geometry is impossible at this size
    return spec


# ---------------------------------------------------------------------------
# spec file serialization

_LAYER_ARGS = {
    "conv": {"filters", "kernel", "stride", "padding"},
    "maxpool": {"window"},
    "relu": set(),
    "flatten": set(),
    "dropout": {"rate"},
    "linear": {"out", "in"},
}


def _layer_to_text(layer: LayerDef) -> str:
    if layer.kind == "conv":
        return f"conv filters={layer.filters} kernel={layer.kernel} stride={layer.stride} padding={layer.padding}"
    if layer.kind == "maxpool":
        return f"maxpool window={layer.window}"
    if layer.kind == "dropout":
        return f"dropout rate={layer.rate:g}"
    if layer.kind == "linear":
        extra = f" in={layer.in_width}" if layer.in_width else ""
        return f"linear out={layer.out}{extra}"
    return layer.kind


def _layer_from_text(name: str, text: str) -> LayerDef:
    tokens = text.split()
    if not tokens:
        raise SpecError(f"layer {name!r}: empty definition")
    kind, args = tokens[0], tokens[1:]
    if kind not in _LAYER_ARGS:
        raise SpecError(f"layer {name!r}: unknown kind {kind!r}")
    kwargs = {}
    for tok in args:
        if "=" not in tok:
            raise SpecError(f"layer {name!r}: malformed argument {tok!r}")
        key, val = tok.split("=", 1)
        if key not in _LAYER_ARGS[kind]:
            raise SpecError(f"layer {name!r}: argument {key!r} not valid for {kind}")
        kwargs[key] = val
    try:
        if kind == "conv":
            return conv(int(kwargs["filters"]), int(kwargs["kernel"]),
                        int(kwargs.get("stride", 1)), int(kwargs.get("padding", 0)))
        if kind == "maxpool":
            return maxpool(int(kwargs["window"]))
        if kind == "dropout":
            return dropout(float(kwargs["rate"]))
        if kind == "linear":
            return linear(int(kwargs["out"]), int(kwargs.get("in", 0)))
        return LayerDef(kind)
    except (KeyError, ValueError) as exc:
        raise SpecError(f"layer {name!r}: {exc}") from exc


def to_text(spec: ModelSpec) -> str:
    lines = ["[model]"]
    c, h, w = spec.input_image_shape
    lines.append(f"input_image_shape = {c},{h},{w}")
    lines.append(f"static_dim = {spec.static_dim}")
    for section, layers in (("image_branch", spec.image_branch),
                            ("static_branch", spec.static_branch)):
        lines.append("")
        lines.append(f"[{section}]")
        for name, layer in layers:
            lines.append(f"{name} = {_layer_to_text(layer)}")
    lines.append("")
    lines.append("[head]")
    lines.append(f"{spec.head[0]} = {_layer_to_text(spec.head[1])}")
    return "\n".join(lines) + "\n"


def from_text(text: str) -> ModelSpec:
    import configparser

    parser = configparser.ConfigParser()
    parser.optionxform = str  # keep layer-name case
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise SpecError(f"unparseable model spec: {exc}") from exc
    for required in ("model", "image_branch", "head"):
        if required not in parser:
            raise SpecError(f"model spec missing [{required}] section")
    model_section = parser["model"]
    try:
        dims = tuple(int(v) for v in model_section["input_image_shape"].split(","))
    except (KeyError, ValueError) as exc:
        raise SpecError(f"bad input_image_shape: {exc}") from exc
    if len(dims) != 3:
        raise SpecError(f"input_image_shape must have 3 dims, got {dims}")
    static_dim = int(model_section.get("static_dim", "3"))

    def read_branch(section: str) -> list[tuple[str, LayerDef]]:
        if section not in parser:
            return []
        return [(name, _layer_from_text(name, value)) for name, value in parser[section].items()]

    head_items = read_branch("head")
    if len(head_items) != 1:
        raise SpecError(f"[head] must contain exactly one layer, got {len(head_items)}")
    spec = ModelSpec(image_branch=read_branch("image_branch"),
                     static_branch=read_branch("static_branch"),
                     head=head_items[0],
                     input_image_shape=dims, static_dim=static_dim)
    walk_shapes(spec)
    return spec


def save_spec(spec: ModelSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(to_text(spec))


def load_spec(path) -> ModelSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return from_text(fh.read())


def clone_config(config: StandardCnnConfig, **changes) -> StandardCnnConfig:
    return replace(config, **changes)
