"""Declarative pipeline specs: a YAML tree format, a layer registry, and a
builder that materializes layers only when asked.

A spec node is a mapping with a ``type`` resolved in the registry, an
optional ``name``, kind-specific scalar fields inline, and ``children`` for
combinators::

    type: serial
    name: encoder
    children:
      - {type: conv1d, filters: 5, kernel_size: 3, stride: 2, padding: causal}
      - {type: conv1d, filters: 8, kernel_size: 5, stride: 3, padding: causal}

Specs allocate nothing; ``build`` walks the tree, propagates channel specs
through ``get_output_spec``, derives a deterministic RNG per layer path from
the build seed, and optionally reads parameters from a named-tensor archive
instead. Validation errors carry the path of the offending node
(``serial.children[2].kernel_size``).

A spec file may be a bare node, or a document with ``pipeline:`` plus an
optional ``input_spec:`` (e.g. ``f32[8]``).
"""

from __future__ import annotations

import dataclasses
import io
import zlib
from fractions import Fraction
from typing import Any, Callable, Mapping

import numpy as np
import yaml

from . import dense, recurrent, temporal
from .attention import DotProductSelfAttention
from .combinators import Bidirectional, Blockwise, Parallel, Repeat, Residual, Serial
from .errors import PipelineError, SpecParseError
from .layer import SequenceLayer
from .sequence import ChannelSpec
from . import tensor


@dataclasses.dataclass(frozen=True)
class PipelineSpec:
    type: str
    name: str | None = None
    params: Mapping[str, Any] = dataclasses.field(default_factory=dict)
    children: "tuple[PipelineSpec, ...]" = ()

    def __post_init__(self):
        object.__setattr__(self, "params", dict(self.params))
        object.__setattr__(self, "children", tuple(self.children))


@dataclasses.dataclass(frozen=True)
class RunManifest:
    """Inputs and switches for one CLI execution.

    ``training`` is mandatory in the file; there is no default on purpose.
    """

    input: str
    training: bool
    output: str | None = None
    params: str | None = None
    seed: int = 0
    constants: Mapping[str, str] = dataclasses.field(default_factory=dict)
    block: int | None = None


# --- registry ----------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class Field:
    name: str
    kind: str  # int | float | bool | str | number | shape | key
    required: bool = False
    default: Any = None
    choices: tuple | None = None
    aliases: tuple = ()


@dataclasses.dataclass(frozen=True)
class LayerDef:
    fields: tuple
    build: Callable
    children: str = "none"  # none | many | one | two


def _coerce(field: Field, value, path: str):
    kind = field.kind
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise PipelineError(f"{path}: expected an integer, got {value!r}")
        return value
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise PipelineError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if kind == "number":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise PipelineError(f"{path}: expected a number, got {value!r}")
        return value
    if kind == "bool":
        if not isinstance(value, bool):
            raise PipelineError(f"{path}: expected a boolean, got {value!r}")
        return value
    if kind == "str":
        if not isinstance(value, str):
            raise PipelineError(f"{path}: expected a string, got {value!r}")
        if field.choices and value not in field.choices:
            raise PipelineError(
                f"{path}: expected one of {list(field.choices)}, got {value!r}"
            )
        return value
    if kind == "shape":
        if not isinstance(value, (list, tuple)) or not all(
            isinstance(v, int) and not isinstance(v, bool) for v in value
        ):
            raise PipelineError(f"{path}: expected a list of integers, got {value!r}")
        return tuple(value)
    raise AssertionError(f"unknown field kind {kind}")


def _validate_params(definition: LayerDef, spec: PipelineSpec, path: str) -> dict:
    known = {}
    for f in definition.fields:
        known[f.name] = f
        for alias in f.aliases:
            known[alias] = f
    out = {}
    for key, value in spec.params.items():
        if key not in known:
            raise PipelineError(
                f"{path}.{key}: unknown parameter for layer type {spec.type!r} "
                f"(known: {sorted(f.name for f in definition.fields)})"
            )
        f = known[key]
        if f.name in out:
            raise PipelineError(f"{path}.{key}: duplicate value for {f.name!r}")
        out[f.name] = _coerce(f, value, f"{path}.{key}")
    for f in definition.fields:
        if f.name not in out:
            if f.required:
                raise PipelineError(f"{path}: missing required parameter {f.name!r}")
            out[f.name] = f.default
    return out


@dataclasses.dataclass
class BuildContext:
    path: str
    name: str
    input_spec: ChannelSpec
    seed: int
    archive: Mapping[str, np.ndarray] | None
    params: dict
    spec: PipelineSpec
    builder: Callable

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(
            np.random.SeedSequence([self.seed & 0xFFFFFFFF, zlib.crc32(self.path.encode())])
        )

    def layer_params(self) -> dict | None:
        """Archive entries for this layer, or None to initialize randomly."""
        if self.archive is None:
            return None
        prefix = f"{self.path}/"
        local = {
            key[len(prefix) :]: value
            for key, value in self.archive.items()
            if key.startswith(prefix) and "/" not in key[len(prefix) :]
        }
        return local

    def build_child(
        self,
        child: PipelineSpec,
        index: int,
        input_spec: ChannelSpec,
        parent_path: str | None = None,
        name: str | None = None,
    ):
        name = name or child.name or f"{child.type}_{index}"
        return self.builder(child, input_spec, parent_path or self.path, name)

    def require_channel_rank(self, rank: int):
        if len(self.input_spec.shape) != rank:
            raise PipelineError(
                f"{self.path}: layer type {self.spec.type!r} requires channel rank "
                f"{rank}, got input spec {self.input_spec}"
            )


_REGISTRY: dict[str, LayerDef] = {}


def register(type_name: str, definition: LayerDef):
    if type_name in _REGISTRY:
        raise ValueError(f"layer type {type_name!r} already registered")
    _REGISTRY[type_name] = definition


def registered_types() -> list[str]:
    return sorted(_REGISTRY)


def _simple(build):
    return LayerDef(fields=(), build=build)


def _dense_build(ctx):
    ctx.require_channel_rank(1)
    return dense.Dense(
        ctx.input_spec.shape[-1],
        ctx.params["units"],
        use_bias=ctx.params["use_bias"],
        params=ctx.layer_params(),
        rng=ctx.rng(),
        name=ctx.name,
    )


def _conv_build(ctx):
    ctx.require_channel_rank(1)
    return temporal.Conv1D(
        ctx.input_spec.shape[0],
        ctx.params["filters"],
        ctx.params["kernel_size"],
        stride=ctx.params["stride"],
        dilation=ctx.params["dilation"],
        padding=ctx.params["padding"],
        use_bias=ctx.params["use_bias"],
        params=ctx.layer_params(),
        rng=ctx.rng(),
        name=ctx.name,
    )


def _tconv_build(ctx):
    ctx.require_channel_rank(1)
    return temporal.Conv1DTranspose(
        ctx.input_spec.shape[0],
        ctx.params["filters"],
        ctx.params["kernel_size"],
        stride=ctx.params["stride"],
        padding=ctx.params["padding"],
        use_bias=ctx.params["use_bias"],
        params=ctx.layer_params(),
        rng=ctx.rng(),
        name=ctx.name,
    )


def _attention_build(ctx):
    ctx.require_channel_rank(1)
    return DotProductSelfAttention(
        ctx.input_spec.shape[0],
        ctx.params["num_heads"],
        ctx.params["units_per_head"],
        max_past_horizon=ctx.params["max_past_horizon"],
        max_future_horizon=ctx.params["max_future_horizon"],
        params=ctx.layer_params(),
        rng=ctx.rng(),
        name=ctx.name,
    )


def _norm_build(cls):
    def build(ctx):
        return cls(
            ctx.input_spec.shape,
            epsilon=ctx.params["epsilon"],
            params=ctx.layer_params(),
            rng=ctx.rng(),
            name=ctx.name,
        )

    return build


def _derived_seed(ctx) -> int:
    return int(ctx.rng().integers(0, 2**63))


_PADDING = Field("padding", "str", default="causal", choices=temporal.PADDING_MODES)

register(
    "identity", _simple(lambda ctx: dense.Identity(name=ctx.name))
)
register("emit", _simple(lambda ctx: dense.Emit(name=ctx.name)))
register(
    "dense",
    LayerDef(
        fields=(Field("units", "int", required=True), Field("use_bias", "bool", default=True)),
        build=_dense_build,
    ),
)
register(
    "scale",
    LayerDef(
        fields=(Field("value", "number", required=True),),
        build=lambda ctx: dense.Scale(ctx.params["value"], name=ctx.name),
    ),
)
register(
    "add",
    LayerDef(
        fields=(Field("value", "number", required=True),),
        build=lambda ctx: dense.Add(ctx.params["value"], name=ctx.name),
    ),
)

for _kind in ("relu", "gelu", "sigmoid", "tanh", "swish", "softplus", "abs", "exp", "log"):
    register(
        _kind,
        _simple(lambda ctx, _kind=_kind: dense.Pointwise(_kind, name=ctx.name)),
    )

register(
    "leaky_relu",
    LayerDef(
        fields=(Field("alpha", "float", default=0.2),),
        build=lambda ctx: dense.Pointwise("leaky_relu", ctx.params["alpha"], name=ctx.name),
    ),
)
register(
    "elu",
    LayerDef(
        fields=(Field("alpha", "float", default=1.0),),
        build=lambda ctx: dense.Pointwise("elu", ctx.params["alpha"], name=ctx.name),
    ),
)
register(
    "power",
    LayerDef(
        fields=(Field("exponent", "number", required=True),),
        build=lambda ctx: dense.Pointwise("power", ctx.params["exponent"], name=ctx.name),
    ),
)
register(
    "maximum",
    LayerDef(
        fields=(Field("value", "number", required=True),),
        build=lambda ctx: dense.Pointwise("maximum", ctx.params["value"], name=ctx.name),
    ),
)
register(
    "minimum",
    LayerDef(
        fields=(Field("value", "number", required=True),),
        build=lambda ctx: dense.Pointwise("minimum", ctx.params["value"], name=ctx.name),
    ),
)
register(
    "mod",
    LayerDef(
        fields=(Field("divisor", "number", required=True),),
        build=lambda ctx: dense.Pointwise("mod", ctx.params["divisor"], name=ctx.name),
    ),
)
register(
    "softmax",
    LayerDef(
        fields=(Field("axis", "int", default=-1),),
        build=lambda ctx: dense.Softmax(ctx.params["axis"], name=ctx.name),
    ),
)
register(
    "layer_norm",
    LayerDef(fields=(Field("epsilon", "float", default=1e-6),), build=_norm_build(dense.LayerNormalization)),
)
register(
    "rms_norm",
    LayerDef(fields=(Field("epsilon", "float", default=1e-6),), build=_norm_build(dense.RMSNormalization)),
)
register(
    "dropout",
    LayerDef(
        fields=(Field("rate", "float", required=True), Field("seed", "int", default=None)),
        build=lambda ctx: dense.Dropout(
            ctx.params["rate"],
            seed=ctx.params["seed"] if ctx.params["seed"] is not None else _derived_seed(ctx),
            name=ctx.name,
        ),
    ),
)
register(
    "reshape",
    LayerDef(
        fields=(Field("shape", "shape", required=True),),
        build=lambda ctx: dense.Reshape(ctx.params["shape"], name=ctx.name),
    ),
)
register("flatten", _simple(lambda ctx: dense.Flatten(name=ctx.name)))
register(
    "expand_dims",
    LayerDef(
        fields=(Field("axis", "int", default=0),),
        build=lambda ctx: dense.ExpandDims(ctx.params["axis"], name=ctx.name),
    ),
)
register(
    "squeeze",
    LayerDef(
        fields=(Field("axis", "int", required=True),),
        build=lambda ctx: dense.Squeeze(ctx.params["axis"], name=ctx.name),
    ),
)
register(
    "move_axis",
    LayerDef(
        fields=(
            Field("source", "int", required=True),
            Field("destination", "int", required=True),
        ),
        build=lambda ctx: dense.MoveAxis(
            ctx.params["source"], ctx.params["destination"], name=ctx.name
        ),
    ),
)
register(
    "transpose_channels",
    LayerDef(
        fields=(Field("perm", "shape", required=True),),
        build=lambda ctx: dense.TransposeChannels(ctx.params["perm"], name=ctx.name),
    ),
)
register(
    "conditioning",
    LayerDef(
        fields=(
            Field("key", "str", required=True),
            Field("mode", "str", default="add", choices=dense.Conditioning.MODES),
        ),
        build=lambda ctx: dense.Conditioning(
            ctx.params["key"], ctx.params["mode"], name=ctx.name
        ),
    ),
)
register(
    "conv1d",
    LayerDef(
        fields=(
            Field("filters", "int", required=True),
            Field("kernel_size", "int", required=True),
            Field("stride", "int", default=1, aliases=("strides",)),
            Field("dilation", "int", default=1),
            _PADDING,
            Field("use_bias", "bool", default=True),
        ),
        build=_conv_build,
    ),
)
register(
    "conv1d_transpose",
    LayerDef(
        fields=(
            Field("filters", "int", required=True),
            Field("kernel_size", "int", required=True),
            Field("stride", "int", default=1, aliases=("strides",)),
            Field("padding", "str", default="causal", choices=("causal", "same")),
            Field("use_bias", "bool", default=True),
        ),
        build=_tconv_build,
    ),
)
register(
    "self_attention",
    LayerDef(
        fields=(
            Field("num_heads", "int", required=True),
            Field("units_per_head", "int", required=True),
            Field("max_past_horizon", "int", default=-1),
            Field("max_future_horizon", "int", default=0),
        ),
        build=_attention_build,
    ),
)
register(
    "lstm",
    LayerDef(
        fields=(Field("units", "int", required=True),),
        build=lambda ctx: (
            ctx.require_channel_rank(1),
            recurrent.LSTM(
                ctx.input_spec.shape[0],
                ctx.params["units"],
                params=ctx.layer_params(),
                rng=ctx.rng(),
                name=ctx.name,
            ),
        )[1],
    ),
)
register(
    "downsample1d",
    LayerDef(
        fields=(Field("rate", "int", required=True),),
        build=lambda ctx: temporal.Downsample1D(ctx.params["rate"], name=ctx.name),
    ),
)
register(
    "upsample1d",
    LayerDef(
        fields=(Field("rate", "int", required=True),),
        build=lambda ctx: temporal.Upsample1D(ctx.params["rate"], name=ctx.name),
    ),
)
register(
    "delay",
    LayerDef(
        fields=(Field("length", "int", required=True),),
        build=lambda ctx: temporal.Delay(ctx.params["length"], name=ctx.name),
    ),
)
register(
    "step_delay",
    LayerDef(
        fields=(Field("length", "int", required=True),),
        build=lambda ctx: temporal.StepDelay(ctx.params["length"], name=ctx.name),
    ),
)
register(
    "lookahead",
    LayerDef(
        fields=(Field("length", "int", required=True),),
        build=lambda ctx: temporal.Lookahead(ctx.params["length"], name=ctx.name),
    ),
)
for _pool_name, _pool_cls in (
    ("max_pool1d", temporal.MaxPooling1D),
    ("min_pool1d", temporal.MinPooling1D),
    ("avg_pool1d", temporal.AveragePooling1D),
):
    register(
        _pool_name,
        LayerDef(
            fields=(
                Field("window", "int", required=True),
                Field("stride", "int", default=1, aliases=("strides",)),
                _PADDING,
            ),
            build=lambda ctx, cls=_pool_cls: cls(
                ctx.params["window"],
                stride=ctx.params["stride"],
                padding=ctx.params["padding"],
                name=ctx.name,
            ),
        ),
    )
register(
    "frame",
    LayerDef(
        fields=(Field("frame_length", "int", required=True), Field("hop", "int", required=True)),
        build=lambda ctx: temporal.Frame(
            ctx.params["frame_length"], ctx.params["hop"], name=ctx.name
        ),
    ),
)
register(
    "overlap_add",
    LayerDef(
        fields=(Field("frame_length", "int", required=True), Field("hop", "int", required=True)),
        build=lambda ctx: temporal.OverlapAdd(
            ctx.params["frame_length"], ctx.params["hop"], name=ctx.name
        ),
    ),
)
register(
    "window",
    LayerDef(
        fields=(
            Field("kind", "str", default="hann", choices=temporal._WINDOW_KINDS),
            Field("axis", "int", default=0),
        ),
        build=lambda ctx: temporal.Window(ctx.params["kind"], ctx.params["axis"], name=ctx.name),
    ),
)


def _build_serial(ctx):
    spec = ctx.input_spec
    children = []
    for i, child in enumerate(ctx.spec.children):
        layer = ctx.build_child(child, i, spec)
        spec = layer.get_output_spec(spec)
        children.append(layer)
    return Serial(children, name=ctx.name)


def _build_parallel(ctx):
    children = [ctx.build_child(c, i, ctx.input_spec) for i, c in enumerate(ctx.spec.children)]
    return Parallel(children, combine=ctx.params["combine"], name=ctx.name)


def _build_residual(ctx):
    spec = ctx.input_spec
    children = []
    wrap = len(ctx.spec.children) > 1
    body_path = f"{ctx.path}/body" if wrap else None
    for i, child in enumerate(ctx.spec.children):
        layer = ctx.build_child(child, i, spec, parent_path=body_path)
        spec = layer.get_output_spec(spec)
        children.append(layer)
    body = children[0] if not wrap else Serial(children, name="body")
    return Residual(body, name=ctx.name)


def _build_repeat(ctx):
    template = ctx.spec.children[0]

    def make(i):
        return ctx.build_child(template, i, ctx.input_spec, name=f"iter_{i}")

    return Repeat(make, ctx.params["num_repeats"], name=ctx.name)


def _build_bidirectional(ctx):
    fwd = ctx.build_child(ctx.spec.children[0], 0, ctx.input_spec, name="forward")
    bwd = ctx.build_child(ctx.spec.children[1], 1, ctx.input_spec, name="backward")
    return Bidirectional(fwd, bwd, combine=ctx.params["combine"], name=ctx.name)


def _build_blockwise(ctx):
    child = ctx.build_child(ctx.spec.children[0], 0, ctx.input_spec)
    return Blockwise(child, ctx.params["block_size"], name=ctx.name)


register("serial", LayerDef(fields=(), build=_build_serial, children="many"))
register(
    "parallel",
    LayerDef(
        fields=(Field("combine", "str", default="stack", choices=("stack", "concat", "add", "mean")),),
        build=_build_parallel,
        children="many",
    ),
)
register("residual", LayerDef(fields=(), build=_build_residual, children="many"))
register(
    "repeat",
    LayerDef(
        fields=(Field("num_repeats", "int", required=True),),
        build=_build_repeat,
        children="one",
    ),
)
register(
    "bidirectional",
    LayerDef(
        fields=(Field("combine", "str", default="stack", choices=("stack", "concat", "add", "mean")),),
        build=_build_bidirectional,
        children="two",
    ),
)
register(
    "blockwise",
    LayerDef(
        fields=(Field("block_size", "int", required=True),),
        build=_build_blockwise,
        children="one",
    ),
)


def _register_sabotage():
    from . import sabotage

    for check_name, factory in sabotage.FIXTURES.items():
        short = {
            "layer_step_equal_1x": "sabotage_step_state",
            "layer_step_equal_2x": "sabotage_double_block",
            "metadata_consistency": "sabotage_metadata",
            "receptive_field_empirical": "sabotage_rf",
            "batching_invariance": "sabotage_batch_mixing",
            "padding_invariance": "sabotage_padding_leak",
            "emits_consistency": "sabotage_emits",
            "rng_equivalence": "sabotage_rng",
        }[check_name]

        def build(ctx, factory=factory):
            ctx.require_channel_rank(1)
            made = factory(ctx.input_spec.shape[0], ctx.rng())
            made.name = ctx.name
            return made

        register(short, LayerDef(fields=(), build=build))


_register_sabotage()


# --- parsing / rendering ------------------------------------------------------

_RESERVED = ("type", "name", "children")


def _node_from_data(data, path: str) -> PipelineSpec:
    if not isinstance(data, dict):
        raise PipelineError(f"{path}: expected a mapping, got {type(data).__name__}")
    if "type" not in data:
        raise PipelineError(f"{path}: missing 'type'")
    type_name = data["type"]
    if not isinstance(type_name, str):
        raise PipelineError(f"{path}.type: expected a string, got {type_name!r}")
    name = data.get("name")
    if name is not None and not isinstance(name, str):
        raise PipelineError(f"{path}.name: expected a string, got {name!r}")
    raw_children = data.get("children", [])
    if raw_children is None:
        raw_children = []
    if not isinstance(raw_children, list):
        raise PipelineError(f"{path}.children: expected a list")
    children = tuple(
        _node_from_data(c, f"{path}.children[{i}]") for i, c in enumerate(raw_children)
    )
    params = {k: v for k, v in data.items() if k not in _RESERVED}
    return PipelineSpec(type=type_name, name=name, params=params, children=children)


def parse_spec(text: str) -> PipelineSpec:
    """Parses spec text into a PipelineSpec tree; no layers are created."""
    try:
        data = yaml.safe_load(io.StringIO(text))
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f"line {mark.line + 1}, column {mark.column + 1}: " if mark else ""
        raise SpecParseError(f"{where}{exc.problem or exc}") from exc
    except yaml.YAMLError as exc:
        raise SpecParseError(str(exc)) from exc
    if isinstance(data, dict) and "pipeline" in data:
        data = data["pipeline"]
    root_type = data.get("type", "pipeline") if isinstance(data, dict) else "pipeline"
    return _node_from_data(data, root_type)


def _node_to_data(spec: PipelineSpec) -> dict:
    out: dict = {"type": spec.type}
    if spec.name is not None:
        out["name"] = spec.name
    for key in sorted(spec.params):
        value = spec.params[key]
        if isinstance(value, tuple):
            value = list(value)
        out[key] = value
    if spec.children:
        out["children"] = [_node_to_data(c) for c in spec.children]
    return out


def render_spec(spec: PipelineSpec) -> str:
    """Canonical text for a spec; parse(render(s)) == canonicalized s."""
    return yaml.safe_dump(_node_to_data(spec), sort_keys=False, default_flow_style=False)


def load_spec_file(path) -> tuple[PipelineSpec, ChannelSpec | None]:
    with open(path, "r", encoding="utf-8") as fp:
        text = fp.read()
    input_spec = None
    try:
        data = yaml.safe_load(io.StringIO(text))
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f"line {mark.line + 1}, column {mark.column + 1}: " if mark else ""
        raise SpecParseError(f"{path}: {where}{exc.problem or exc}") from exc
    if isinstance(data, dict) and "pipeline" in data:
        if "input_spec" in data:
            input_spec = parse_channel_spec(data["input_spec"])
        node = _node_from_data(data["pipeline"], "pipeline")
    else:
        node = _node_from_data(data, data.get("type", "pipeline") if isinstance(data, dict) else "pipeline")
    return node, input_spec


_DTYPE_NAMES = {"f32": tensor.FLOAT32, "i32": tensor.INT32, "bool": tensor.BOOL}


def parse_channel_spec(text: str) -> ChannelSpec:
    """Parses 'f32[8]' / 'i32[2,3]' / 'bool[]' into a ChannelSpec."""
    text = text.strip()
    if "[" not in text or not text.endswith("]"):
        raise PipelineError(f"bad channel spec {text!r}; expected e.g. 'f32[8]'")
    dtype_name, dims = text[:-1].split("[", 1)
    if dtype_name not in _DTYPE_NAMES:
        raise PipelineError(
            f"bad channel spec dtype {dtype_name!r}; expected one of {sorted(_DTYPE_NAMES)}"
        )
    shape = tuple(int(d) for d in dims.split(",") if d.strip() != "")
    return ChannelSpec(shape, _DTYPE_NAMES[dtype_name])


def load_manifest(path) -> RunManifest:
    with open(path, "r", encoding="utf-8") as fp:
        try:
            data = yaml.safe_load(fp)
        except yaml.YAMLError as exc:
            raise SpecParseError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise PipelineError(f"{path}: manifest must be a mapping")
    if "input" not in data:
        raise PipelineError(f"{path}: manifest is missing 'input'")
    if "training" not in data:
        raise PipelineError(
            f"{path}: manifest is missing 'training'; it is required and has no default"
        )
    if not isinstance(data["training"], bool):
        raise PipelineError(f"{path}: 'training' must be true or false")
    known = {"input", "training", "output", "params", "seed", "constants", "block"}
    unknown = set(data) - known
    if unknown:
        raise PipelineError(f"{path}: unknown manifest keys {sorted(unknown)}")
    constants = data.get("constants") or {}
    if not isinstance(constants, dict):
        raise PipelineError(f"{path}: 'constants' must map keys to SLS1 paths")
    return RunManifest(
        input=str(data["input"]),
        training=data["training"],
        output=data.get("output"),
        params=data.get("params"),
        seed=int(data.get("seed", 0)),
        constants={str(k): str(v) for k, v in constants.items()},
        block=data.get("block"),
    )


# --- building -----------------------------------------------------------------

_CHILD_COUNT_RULES = {"none": (0, 0), "many": (0, None), "one": (1, 1), "two": (2, 2)}


def validate_spec(spec: PipelineSpec, path: str | None = None) -> None:
    """Structural validation without materializing anything."""
    path = path or spec.type
    if spec.type not in _REGISTRY:
        raise PipelineError(
            f"{path}: unknown layer type {spec.type!r}; known types: {registered_types()}"
        )
    definition = _REGISTRY[spec.type]
    _validate_params(definition, spec, path)
    lo, hi = _CHILD_COUNT_RULES[definition.children]
    n = len(spec.children)
    if n < lo or (hi is not None and n > hi):
        expected = {"none": "no children", "one": "exactly 1 child", "two": "exactly 2 children"}.get(
            definition.children, "children"
        )
        raise PipelineError(f"{path}: layer type {spec.type!r} takes {expected}, got {n}")
    names = [c.name for c in spec.children if c.name is not None]
    dupes = {n for n in names if names.count(n) > 1}
    if dupes:
        raise PipelineError(f"{path}: duplicate child names {sorted(dupes)}")
    for i, child in enumerate(spec.children):
        validate_spec(child, f"{path}.children[{i}]")


def build(
    spec: PipelineSpec,
    input_spec: ChannelSpec,
    seed: int = 0,
    archive: Mapping[str, np.ndarray] | None = None,
) -> SequenceLayer:
    """Materializes the layer tree described by a validated spec.

    Parameters come from the archive when given, otherwise from a
    deterministic per-path RNG derived from the seed: building the same spec
    twice with the same seed yields identical parameters.
    """
    validate_spec(spec)

    def builder(node: PipelineSpec, node_input: ChannelSpec, parent_path: str | None, name: str):
        definition = _REGISTRY[node.type]
        path = name if parent_path is None else f"{parent_path}/{name}"
        display = path.replace("/", ".")
        params = _validate_params(definition, node, display)
        ctx = BuildContext(
            path=path,
            name=name,
            input_spec=node_input,
            seed=seed,
            archive=archive,
            params=params,
            spec=node,
            builder=builder,
        )
        try:
            layer = definition.build(ctx)
        except PipelineError:
            raise
        except (ValueError, TypeError) as exc:
            raise PipelineError(f"{display}: {exc}") from exc
        layer.name = name
        return layer

    return builder(spec, input_spec, None, spec.name or spec.type)
