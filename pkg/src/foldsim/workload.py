"""Convolution layer definitions, benchmark suites, and the brute-force oracle.

Everything downstream (fold planning, the PE-array simulator, the analytical
model) is checked against `reference_convolution`, a deliberately naive
seven-loop implementation that is kept free of any mapping logic.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

# A dense 4-D tensor in (image, channel, row, column) order, single precision.
Tensor4D = np.ndarray


@dataclass(frozen=True)
class ConvLayerSpec:
    """One convolution layer: tensor dimensions plus stride and padding."""

    name: str
    batch_n: int
    in_channels: int
    in_height: int
    in_width: int
    num_filters: int
    kern_height: int
    kern_width: int
    stride: int = 1
    pad: int = 0

    def __post_init__(self):
        for field in ("batch_n", "in_channels", "in_height", "in_width",
                      "num_filters", "kern_height", "kern_width", "stride"):
            if getattr(self, field) < 1:
                raise ValueError(f"layer '{self.name}': {field} must be >= 1")
        if self.pad < 0:
            raise ValueError(f"layer '{self.name}': pad must be >= 0")
        for extent, kern, axis in ((self.in_height, self.kern_height, "height"),
                                   (self.in_width, self.kern_width, "width")):
            span = extent + 2 * self.pad - kern
            if span < 0:
                raise ValueError(
                    f"layer '{self.name}': kernel {axis} exceeds padded input {axis}")
            if span % self.stride != 0:
                raise ValueError(
                    f"layer '{self.name}': stride {self.stride} does not evenly "
                    f"divide the padded {axis} span {span}")

    @property
    def input_shape(self) -> tuple[int, int, int, int]:
        return (self.batch_n, self.in_channels, self.in_height, self.in_width)

    @property
    def filter_shape(self) -> tuple[int, int, int, int]:
        return (self.num_filters, self.in_channels, self.kern_height, self.kern_width)


@dataclass(frozen=True)
class OutputDims:
    """Derived output spatial extents: out_height indexes rows, out_width columns."""

    out_height: int
    out_width: int


def derive_output_dims(layer: ConvLayerSpec) -> OutputDims:
    """Output height follows (in_height, kern_height); width follows the width pair."""
    h_span = layer.in_height + 2 * layer.pad - layer.kern_height
    w_span = layer.in_width + 2 * layer.pad - layer.kern_width
    # Revalidated here so hand-built layer objects get the same rejection.
    if h_span < 0 or w_span < 0 or h_span % layer.stride or w_span % layer.stride:
        raise ValueError(
            f"layer '{layer.name}': stride {layer.stride} incompatible with "
            f"padded spans ({h_span}, {w_span})")
    return OutputDims(h_span // layer.stride + 1, w_span // layer.stride + 1)


def zero_pad(input: Tensor4D, pad: int) -> Tensor4D:
    """Symmetric zero padding of the two spatial axes."""
    if pad == 0:
        return input
    return np.pad(input, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def check_shapes(input: Tensor4D, filters: Tensor4D, layer: ConvLayerSpec) -> None:
    if tuple(input.shape) != layer.input_shape:
        raise ValueError(
            f"input shape {tuple(input.shape)} does not match layer "
            f"'{layer.name}' expecting {layer.input_shape}")
    if tuple(filters.shape) != layer.filter_shape:
        raise ValueError(
            f"filter shape {tuple(filters.shape)} does not match layer "
            f"'{layer.name}' expecting {layer.filter_shape}")


def reference_convolution(input: Tensor4D, filters: Tensor4D,
                          layer: ConvLayerSpec) -> Tensor4D:
    """Ground-truth convolution: seven nested loops, no transformation.

    Accumulates each output in a float64 scalar (left to right over channels,
    then kernel rows, then kernel columns) and stores the result as float32.
    """
    check_shapes(input, filters, layer)
    dims = derive_output_dims(layer)
    q_n, p_n = dims.out_height, dims.out_width
    stride = layer.stride
    out = np.zeros((layer.batch_n, layer.num_filters, q_n, p_n), dtype=np.float32)
    padded = zero_pad(np.asarray(input, dtype=np.float32), layer.pad).tolist()
    weights = np.asarray(filters, dtype=np.float32).tolist()
    for n in range(layer.batch_n):
        image = padded[n]
        for f in range(layer.num_filters):
            kernel = weights[f]
            for q in range(q_n):
                for p in range(p_n):
                    acc = 0.0
                    for c in range(layer.in_channels):
                        plane = image[c]
                        taps = kernel[c]
                        for r in range(layer.kern_height):
                            row = plane[q * stride + r]
                            tap_row = taps[r]
                            for s in range(layer.kern_width):
                                acc += tap_row[s] * row[p * stride + s]
                    out[n, f, q, p] = acc
    return out


def synthetic_suite() -> list[ConvLayerSpec]:
    """Four 56x56 3x3 workloads with matched channel and filter counts."""
    return [
        ConvLayerSpec(name=f"3x3x{d}x{d}", batch_n=1, in_channels=d,
                      in_height=56, in_width=56, num_filters=d,
                      kern_height=3, kern_width=3, stride=1, pad=1)
        for d in (64, 128, 256, 512)
    ]


# (name, in_channels, spatial, num_filters); all 3x3, stride 1, pad 1, batch 1.
_VGG16_CONV = [
    ("1.1", 3, 224, 64),
    ("1.2", 64, 224, 64),
    ("2.1", 64, 112, 128),
    ("2.2", 128, 112, 128),
    ("3.1", 128, 56, 256),
    ("3.2", 256, 56, 256),
    ("3.3", 256, 56, 256),
    ("4.1", 256, 28, 512),
    ("4.2", 512, 28, 512),
    ("4.3", 512, 28, 512),
    ("5.1", 512, 14, 512),
    ("5.2", 512, 14, 512),
    ("5.3", 512, 14, 512),
]


def vgg16_suite() -> list[ConvLayerSpec]:
    """The 13 VGG-16 convolution layers at batch 1."""
    return [
        ConvLayerSpec(name=name, batch_n=1, in_channels=c, in_height=size,
                      in_width=size, num_filters=nf, kern_height=3,
                      kern_width=3, stride=1, pad=1)
        for name, c, size, nf in _VGG16_CONV
    ]


_SUITES = {"synthetic": synthetic_suite, "vgg16": vgg16_suite}


def get_suite(name: str) -> list[ConvLayerSpec]:
    try:
        return _SUITES[name]()
    except KeyError:
        raise ValueError(f"unknown suite '{name}' (available: {sorted(_SUITES)})") from None


def layer_ops(layer: ConvLayerSpec) -> int:
    """Multiply and add counted separately over exact output dims."""
    dims = derive_output_dims(layer)
    return (2 * dims.out_width * dims.out_height * layer.num_filters
            * layer.in_channels * layer.kern_height * layer.kern_width)


def total_ops(layers: list[ConvLayerSpec]) -> int:
    return sum(layer_ops(layer) for layer in layers)


def random_int_tensor(rng: np.random.Generator, shape) -> Tensor4D:
    # Integers in [-8, 8]: float32 sums over these stay exact for any order.
    return rng.integers(-8, 9, size=shape).astype(np.float32)


def random_fp32_tensor(rng: np.random.Generator, shape) -> Tensor4D:
    return rng.uniform(-1.0, 1.0, size=shape).astype(np.float32)


def random_tensors(layer: ConvLayerSpec, seed: int,
                   mode: str = "int") -> tuple[Tensor4D, Tensor4D]:
    """Seeded (input, filters) pair in the requested data mode."""
    rng = np.random.default_rng(seed)
    if mode == "int":
        gen = random_int_tensor
    elif mode == "fp32":
        gen = random_fp32_tensor
    else:
        raise ValueError(f"unknown data mode '{mode}' (expected 'int' or 'fp32')")
    return gen(rng, layer.input_shape), gen(rng, layer.filter_shape)


def format_layer_line(layer: ConvLayerSpec) -> str:
    return (f"{layer.name}, {layer.batch_n}, {layer.in_channels}, "
            f"{layer.in_height}, {layer.in_width}, {layer.num_filters}, "
            f"{layer.kern_height}, {layer.kern_width}, {layer.stride}, {layer.pad}")


def parse_layer_fields(fields: list[str], name: str | None = None) -> ConvLayerSpec:
    """Build a layer from its nine numeric fields (N, C, X, Y, N_F, R, S, stride, pad)."""
    if len(fields) != 9:
        raise ValueError(f"expected 9 numeric fields, got {len(fields)}")
    try:
        n, c, x, y, nf, r, s, stride, pad = (int(v.strip()) for v in fields)
    except ValueError:
        raise ValueError(f"non-integer layer field in {fields!r}") from None
    if name is None:
        name = f"{r}x{s}x{c}x{nf}"
    return ConvLayerSpec(name=name, batch_n=n, in_channels=c, in_height=x,
                         in_width=y, num_filters=nf, kern_height=r,
                         kern_width=s, stride=stride, pad=pad)


def parse_layer_line(line: str) -> ConvLayerSpec:
    """One layer per line: name, N, C, X, Y, N_F, R, S, stride, pad."""
    fields = [f.strip() for f in line.split(",")]
    if len(fields) != 10:
        raise ValueError(
            f"expected 'name, N, C, X, Y, N_F, R, S, stride, pad', got {line!r}")
    return parse_layer_fields(fields[1:], name=fields[0])


def load_layer_file(path: str | Path) -> list[ConvLayerSpec]:
    layers = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            layers.append(parse_layer_line(line))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
    return layers


def save_layer_file(path: str | Path, layers: list[ConvLayerSpec]) -> None:
    lines = [format_layer_line(layer) for layer in layers]
    Path(path).write_text("\n".join(lines) + "\n")
