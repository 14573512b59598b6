"""Feed-forward ReLU network model, evaluation, normalization, and file I/O.

Two text formats are read: the NNet interchange format used by the ACAS Xu
benchmark family, and this package's own line-based "URVNET v1" format
(canonical grammar in the README).  Parsed networks are immutable.
"""

from dataclasses import dataclass
from enum import Enum
from typing import List, NamedTuple, Optional, Tuple

import numpy as np

from .errors import ConfigError, ParseError


class Activation(Enum):
    RELU = "relu"
    IDENTITY = "identity"


@dataclass(frozen=True)
class Layer:
    weights: np.ndarray  # n_out x n_in
    bias: np.ndarray  # n_out
    activation: Activation

    def __post_init__(self):
        W = np.asarray(self.weights, dtype=float)
        b = np.asarray(self.bias, dtype=float)
        if W.ndim != 2:
            raise ConfigError(f"layer weights must be 2-D, got shape {W.shape}")
        if b.shape != (W.shape[0],):
            raise ConfigError(
                f"bias length {b.shape} does not match weight rows {W.shape[0]}"
            )
        if not (np.isfinite(W).all() and np.isfinite(b).all()):
            raise ConfigError("layer parameters contain non-finite entries")
        W = W.copy()
        b = b.copy()
        W.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "bias", b)

    @property
    def is_relu(self) -> bool:
        return self.activation is Activation.RELU


@dataclass(frozen=True)
class Normalization:
    """Per-input clamp+scale statistics and a single output mean/range."""

    input_min: np.ndarray
    input_max: np.ndarray
    input_mean: np.ndarray
    input_range: np.ndarray
    output_mean: float
    output_range: float

    def __post_init__(self):
        arrays = {}
        n = None
        for name in ("input_min", "input_max", "input_mean", "input_range"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.ndim != 1:
                raise ConfigError(f"{name} must be a 1-D vector")
            if n is None:
                n = arr.shape[0]
            elif arr.shape[0] != n:
                raise ConfigError("normalization vectors disagree on input size")
            if not np.isfinite(arr).all():
                raise ConfigError(f"{name} contains non-finite entries")
            arr = arr.copy()
            arr.flags.writeable = False
            arrays[name] = arr
        for name, arr in arrays.items():
            object.__setattr__(self, name, arr)
        if np.any(self.input_min > self.input_max):
            raise ConfigError("normalization input_min exceeds input_max")
        if np.any(self.input_range <= 0) or self.output_range <= 0:
            raise ConfigError("normalization ranges must be positive")


class NormalizedInput(NamedTuple):
    values: np.ndarray
    clamped: np.ndarray  # per-coordinate flag: raw value was outside [min, max]


@dataclass(frozen=True)
class Network:
    layers: Tuple[Layer, ...]
    normalization: Optional[Normalization] = None

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ConfigError("network needs at least one layer")
        for a, b in zip(layers, layers[1:]):
            if b.weights.shape[1] != a.weights.shape[0]:
                raise ConfigError(
                    f"layer dims do not chain: {a.weights.shape} then {b.weights.shape}"
                )
        if layers[-1].activation is not Activation.IDENTITY:
            raise ConfigError("final layer must have identity activation")
        if any(l.activation is not Activation.RELU for l in layers[:-1]):
            raise ConfigError("hidden layers must use ReLU activation")
        if self.normalization is not None:
            if self.normalization.input_min.shape[0] != layers[0].weights.shape[1]:
                raise ConfigError("normalization size does not match input dim")
        object.__setattr__(self, "layers", layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].weights.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weights.shape[0]


def evaluate(net: Network, x) -> np.ndarray:
    """Forward pass for a single (already normalized) input point."""
    h = np.asarray(x, dtype=float)
    if h.shape != (net.input_dim,):
        raise ConfigError(f"input dim {h.shape} does not match network {net.input_dim}")
    for layer in net.layers:
        h = layer.weights @ h + layer.bias
        if layer.is_relu:
            h = np.maximum(h, 0.0)
    return h


def evaluate_many(net: Network, xs) -> np.ndarray:
    """Forward pass for a batch of rows."""
    H = np.asarray(xs, dtype=float)
    if H.ndim != 2 or H.shape[1] != net.input_dim:
        raise ConfigError(f"batch shape {H.shape} does not match input dim {net.input_dim}")
    for layer in net.layers:
        H = H @ layer.weights.T + layer.bias
        if layer.is_relu:
            H = np.maximum(H, 0.0)
    return H


def normalize(net: Network, raw) -> NormalizedInput:
    """Clamp a raw-unit input into the training box and scale it."""
    norm = net.normalization
    if norm is None:
        raise ConfigError("network carries no normalization statistics")
    x = np.asarray(raw, dtype=float)
    if x.shape != (net.input_dim,):
        raise ConfigError(f"input dim {x.shape} does not match network {net.input_dim}")
    clamped = (x < norm.input_min) | (x > norm.input_max)
    clipped = np.clip(x, norm.input_min, norm.input_max)
    return NormalizedInput((clipped - norm.input_mean) / norm.input_range, clamped)


def denormalize_input(net: Network, values) -> np.ndarray:
    norm = net.normalization
    if norm is None:
        raise ConfigError("network carries no normalization statistics")
    return np.asarray(values, dtype=float) * norm.input_range + norm.input_mean


def denormalize_output(net: Network, values) -> np.ndarray:
    norm = net.normalization
    if norm is None:
        raise ConfigError("network carries no normalization statistics")
    return np.asarray(values, dtype=float) * norm.output_range + norm.output_mean


def _parse_floats(text: str, lineno: int, sep: Optional[str] = ",", expect: Optional[int] = None) -> List[float]:
    if sep == ",":
        tokens = [t.strip() for t in text.split(",")]
        tokens = [t for t in tokens if t]  # NNet lines end with a trailing comma
    else:
        tokens = text.split(sep)
        if any(t == "" for t in tokens):
            raise ParseError("empty field (check for doubled separators)", lineno)
    values = []
    for tok in tokens:
        try:
            v = float(tok)
        except ValueError:
            raise ParseError(f"not a number: {tok!r}", lineno) from None
        if not np.isfinite(v):
            raise ParseError(f"non-finite number: {tok!r}", lineno)
        values.append(v)
    if expect is not None and len(values) != expect:
        raise ParseError(f"expected {expect} values, got {len(values)}", lineno)
    return values


class _Lines:
    def __init__(self, text: str):
        self.raw = text.splitlines()
        self.pos = 0

    def next(self, skip_comments: bool = False) -> Tuple[int, str]:
        while self.pos < len(self.raw):
            self.pos += 1
            line = self.raw[self.pos - 1].strip()
            if not line:
                continue
            if skip_comments and line.startswith("//"):
                continue
            return self.pos, line
        raise ParseError("unexpected end of file", len(self.raw))

    def exhausted(self) -> bool:
        return all(not l.strip() for l in self.raw[self.pos :])


def parse_nnet(text: str) -> Network:
    """Read the NNet subset: header, sizes, stats, then row-major weights."""
    lines = _Lines(text)
    lineno, header = lines.next(skip_comments=True)
    head = _parse_floats(header, lineno)
    if len(head) != 4:
        raise ParseError(f"header needs 4 fields, got {len(head)}", lineno)
    num_layers, input_size, output_size, _max_layer_size = (int(v) for v in head)
    if num_layers < 1 or input_size < 1 or output_size < 1:
        raise ParseError("header sizes must be positive", lineno)

    lineno, sizes_line = lines.next()
    sizes = [int(v) for v in _parse_floats(sizes_line, lineno, expect=num_layers + 1)]
    if sizes[0] != input_size or sizes[-1] != output_size:
        raise ParseError("layer sizes disagree with header input/output sizes", lineno)

    lines.next()  # deprecated flag line, ignored

    lineno, mins_line = lines.next()
    in_min = _parse_floats(mins_line, lineno, expect=input_size)
    lineno, maxes_line = lines.next()
    in_max = _parse_floats(maxes_line, lineno, expect=input_size)
    lineno, means_line = lines.next()
    means = _parse_floats(means_line, lineno, expect=input_size + 1)
    lineno, ranges_line = lines.next()
    ranges = _parse_floats(ranges_line, lineno, expect=input_size + 1)

    layers = []
    for l in range(num_layers):
        n_in, n_out = sizes[l], sizes[l + 1]
        rows = []
        for _ in range(n_out):
            lineno, row_line = lines.next()
            rows.append(_parse_floats(row_line, lineno, expect=n_in))
        bias = []
        for _ in range(n_out):
            lineno, b_line = lines.next()
            bias.extend(_parse_floats(b_line, lineno, expect=1))
        act = Activation.IDENTITY if l == num_layers - 1 else Activation.RELU
        layers.append(Layer(np.array(rows), np.array(bias), act))

    norm = Normalization(
        input_min=np.array(in_min),
        input_max=np.array(in_max),
        input_mean=np.array(means[:-1]),
        input_range=np.array(ranges[:-1]),
        output_mean=means[-1],
        output_range=ranges[-1],
    )
    try:
        return Network(tuple(layers), norm)
    except ConfigError as exc:
        raise ParseError(str(exc), lineno) from exc


def parse_urvnet(text: str) -> Network:
    """Read the URVNET v1 format (single-space separated, see README)."""
    lines = _Lines(text)
    lineno, header = lines.next()
    if header != "urvnet 1":
        raise ParseError(f"expected 'urvnet 1' header, got {header!r}", lineno)
    lineno, dims_line = lines.next()
    parts = dims_line.split(" ")
    if parts[0] != "dims" or len(parts) < 3:
        raise ParseError("expected 'dims d0 d1 ... dL' with at least one layer", lineno)
    try:
        dims = [int(p) for p in parts[1:]]
    except ValueError:
        raise ParseError("dims entries must be integers", lineno) from None
    if any(d < 1 for d in dims):
        raise ParseError("dims entries must be positive", lineno)

    num_layers = len(dims) - 1
    layers = []
    for l in range(num_layers):
        n_in, n_out = dims[l], dims[l + 1]
        lineno, tag = lines.next()
        if tag != "W":
            raise ParseError(f"expected 'W', got {tag!r}", lineno)
        rows = []
        for _ in range(n_out):
            lineno, row_line = lines.next()
            rows.append(_parse_floats(row_line, lineno, sep=" ", expect=n_in))
        lineno, tag = lines.next()
        if tag != "b":
            raise ParseError(f"expected 'b', got {tag!r}", lineno)
        lineno, b_line = lines.next()
        bias = _parse_floats(b_line, lineno, sep=" ", expect=n_out)
        act = Activation.IDENTITY if l == num_layers - 1 else Activation.RELU
        layers.append(Layer(np.array(rows), np.array(bias), act))

    norm = None
    if not lines.exhausted():
        lineno, tag = lines.next()
        if tag != "norm":
            raise ParseError(f"expected 'norm' block or end of file, got {tag!r}", lineno)
        n = dims[0]
        fields = {}
        for key, count in (("min", n), ("max", n), ("mean", n + 1), ("range", n + 1)):
            lineno, line = lines.next()
            name, _, rest = line.partition(" ")
            if name != key:
                raise ParseError(f"expected '{key}' line, got {name!r}", lineno)
            fields[key] = _parse_floats(rest, lineno, sep=" ", expect=count)
        if not lines.exhausted():
            lineno, extra = lines.next()
            raise ParseError(f"unexpected trailing content: {extra!r}", lineno)
        norm = Normalization(
            input_min=np.array(fields["min"]),
            input_max=np.array(fields["max"]),
            input_mean=np.array(fields["mean"][:-1]),
            input_range=np.array(fields["range"][:-1]),
            output_mean=fields["mean"][-1],
            output_range=fields["range"][-1],
        )
    try:
        return Network(tuple(layers), norm)
    except ConfigError as exc:
        raise ParseError(str(exc), lineno) from exc


def parse_network(data) -> Network:
    """Parse network bytes/text, auto-detecting URVNET v1 vs NNet."""
    if isinstance(data, bytes):
        text = data.decode("utf-8")
    else:
        text = data
    for line in text.splitlines():
        stripped = line.strip()
        if not stripped or stripped.startswith("//"):
            continue
        if stripped.startswith("urvnet"):
            return parse_urvnet(text)
        return parse_nnet(text)
    raise ParseError("empty network file", 1)


def _fmt(v: float) -> str:
    return repr(float(v))


def serialize_urvnet(net: Network) -> str:
    """Canonical URVNET v1 text; parsing it back reproduces the network."""
    dims = [net.input_dim] + [l.weights.shape[0] for l in net.layers]
    out = ["urvnet 1", "dims " + " ".join(str(d) for d in dims)]
    for layer in net.layers:
        out.append("W")
        for row in layer.weights:
            out.append(" ".join(_fmt(v) for v in row))
        out.append("b")
        out.append(" ".join(_fmt(v) for v in layer.bias))
    norm = net.normalization
    if norm is not None:
        out.append("norm")
        out.append("min " + " ".join(_fmt(v) for v in norm.input_min))
        out.append("max " + " ".join(_fmt(v) for v in norm.input_max))
        means = list(norm.input_mean) + [norm.output_mean]
        ranges = list(norm.input_range) + [norm.output_range]
        out.append("mean " + " ".join(_fmt(v) for v in means))
        out.append("range " + " ".join(_fmt(v) for v in ranges))
    return "\n".join(out) + "\n"
