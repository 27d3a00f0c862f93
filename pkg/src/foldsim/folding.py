"""Decomposition of a convolution layer into filter folds, image blocks and
image folds sized for a rectangular PE array.

The filter tensor is flattened into a 2-D matrix in depth-major order; within
each channel the kernel columns are emitted in reverse, each as a group of
`kern_height` weights followed by one reserved accumulation column.  The
flattened matrix is then tiled into folds no larger than the array, and the
input tensor is partitioned into matching image blocks whose folds carry only
the padded-input columns not already delivered by an earlier fold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import MappingError
from .workload import ConvLayerSpec, Tensor4D, derive_output_dims

IDLE, WEIGHT, RESERVED = 0, 1, 2


@dataclass(frozen=True)
class PEArrayConfig:
    """Rectangular processing-element array geometry."""

    rows: int
    cols: int

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError(f"PE array dims must be >= 1, got {self.rows}x{self.cols}")

    @property
    def size(self) -> int:
        return self.rows * self.cols

    def label(self) -> str:
        return f"{self.rows}x{self.cols}"


def channel_width(layer: ConvLayerSpec) -> int:
    """PE columns one flattened channel occupies: kern_width groups of
    (kern_height weights + 1 reserved column)."""
    return layer.kern_width * (layer.kern_height + 1)


@dataclass(frozen=True)
class Weight:
    """Identity of one filter weight inside the flattened matrix."""

    filt: int
    chan: int
    row: int
    col: int


class FlatFilterMatrix:
    """2-D view of the filter tensor: one row per filter, channels side by side.

    Reserved cells hold zero in `values`; `entry_at` returns None for them.
    """

    def __init__(self, layer: ConvLayerSpec, values: np.ndarray):
        self.layer = layer
        self.values = values
        self.n_rows = layer.num_filters
        self.channel_width = channel_width(layer)
        self.n_cols = layer.in_channels * self.channel_width

    def col_meta(self, col: int) -> tuple[int, int, int | None]:
        """(channel, kernel column s, kernel row r) for a matrix column;
        r is None for reserved columns."""
        if not 0 <= col < self.n_cols:
            raise IndexError(f"column {col} out of range 0..{self.n_cols - 1}")
        r_n, s_n = self.layer.kern_height, self.layer.kern_width
        chan, offset = divmod(col, self.channel_width)
        group, pos = divmod(offset, r_n + 1)
        s = s_n - 1 - group
        return (chan, s, None) if pos == r_n else (chan, s, pos)

    def entry_at(self, row: int, col: int) -> Weight | None:
        chan, s, r = self.col_meta(col)
        if r is None:
            return None
        return Weight(filt=row, chan=chan, row=r, col=s)

    def fold_values(self, fold: "FilterFold") -> np.ndarray:
        c0 = fold.channel_lo * self.channel_width
        return self.values[fold.filter_lo:fold.filter_hi, c0:c0 + fold.width]


def flatten_filters(filters: Tensor4D, layer: ConvLayerSpec) -> FlatFilterMatrix:
    """Flatten (N_F, C, R, S) filters into the reserved-column 2-D layout."""
    if tuple(filters.shape) != layer.filter_shape:
        raise ValueError(
            f"filter shape {tuple(filters.shape)} does not match layer "
            f"'{layer.name}' expecting {layer.filter_shape}")
    nf, c, r_n, s_n = layer.filter_shape
    # Kernel columns reversed, then transposed so each group reads its R
    # weights top to bottom; a zero column after each group is the reserved
    # accumulation site.
    grouped = np.asarray(filters, dtype=np.float32)[:, :, :, ::-1].transpose(0, 1, 3, 2)
    padded = np.zeros((nf, c, s_n, r_n + 1), dtype=np.float32)
    padded[:, :, :, :r_n] = grouped
    return FlatFilterMatrix(layer, padded.reshape(nf, c * s_n * (r_n + 1)))


@dataclass(frozen=True)
class FilterFold:
    """One tile of the flattened filter matrix, sized to fit the PE array."""

    row_index: int
    col_index: int
    filter_lo: int
    filter_hi: int
    channel_lo: int
    channel_hi: int
    height: int
    width: int
    is_partial: bool

    @property
    def channels(self) -> int:
        return self.channel_hi - self.channel_lo


@dataclass(frozen=True)
class ImageFold:
    """Padded-input columns introduced at one output-column position.

    `columns` lists 0-indexed padded coordinates in delivery order (window
    reversed, previously delivered columns dropped).
    """

    block_id: int
    image_index: int
    origin_p: int
    columns: tuple[int, ...]
    channel_lo: int
    channel_hi: int


@dataclass
class ImageBlock:
    """Input-channel slice matching one column split of the filter folds."""

    block_id: int
    channel_lo: int
    channel_hi: int
    layer: ConvLayerSpec
    block_length: int = field(init=False)

    def __post_init__(self):
        dims = derive_output_dims(self.layer)
        self.block_length = dims.out_width * self.layer.batch_n

    @cached_property
    def folds(self) -> list[ImageFold]:
        return enumerate_image_folds(self, self.layer)


@dataclass
class FoldPlan:
    """Complete decomposition of one layer for one PE array."""

    layer: ConvLayerSpec
    array: PEArrayConfig
    w_ch: int
    channels_per_fold: int
    fold_rows: int
    fold_cols: int
    n_ft_row: int
    n_ft_col: int
    total_folds: int
    filter_folds: list[FilterFold]
    image_blocks: list[ImageBlock]

    @property
    def block_count(self) -> int:
        return self.n_ft_col

    @property
    def folds_per_block(self) -> int:
        dims = derive_output_dims(self.layer)
        return dims.out_width * self.layer.batch_n

    @property
    def shifts_per_fold(self) -> int:
        return derive_output_dims(self.layer).out_height

    def fills_array(self) -> bool:
        """True when every fold covers the whole array (Table-style 'Full')."""
        return all(f.height == self.array.rows and f.width == self.array.cols
                   for f in self.filter_folds)

    def summary_record(self) -> dict:
        return {
            "name": self.layer.name,
            "array": self.array.label(),
            "w_ch": self.w_ch,
            "channels_per_fold": self.channels_per_fold,
            "n_ft_row": self.n_ft_row,
            "n_ft_col": self.n_ft_col,
            "total_folds": self.total_folds,
            "block_count": self.block_count,
            "folds_per_block": self.folds_per_block,
            "shifts": self.shifts_per_fold,
            "fold_type": "Full" if self.fills_array() else "Partial",
        }


def fold_geometry(layer: ConvLayerSpec,
                  array: PEArrayConfig) -> tuple[int, int, int]:
    """(fold_rows, fold_cols, channels_per_fold) for a layer on an array."""
    w_ch = channel_width(layer)
    if array.cols < w_ch:
        raise MappingError(
            f"layer '{layer.name}' is unmappable: PE array has {array.cols} "
            f"columns but one channel span needs at least {w_ch}")
    channels_per_fold = array.cols // w_ch
    fold_rows = min(array.rows, layer.num_filters)
    return fold_rows, channels_per_fold * w_ch, channels_per_fold


def enumerate_filter_folds(layer: ConvLayerSpec, array: PEArrayConfig) -> FoldPlan:
    """Tile the flattened filter matrix into folds (filter side of the plan)."""
    fold_rows, fold_cols, cpf = fold_geometry(layer, array)
    w_ch = channel_width(layer)
    n_ft_row = math.ceil(layer.num_filters / array.rows)
    n_ft_col = math.ceil(layer.in_channels / cpf)
    folds = []
    for i in range(n_ft_row):
        f_lo = i * array.rows
        f_hi = min(f_lo + array.rows, layer.num_filters)
        for j in range(n_ft_col):
            c_lo = j * cpf
            c_hi = min(c_lo + cpf, layer.in_channels)
            height = f_hi - f_lo
            chans = c_hi - c_lo
            folds.append(FilterFold(
                row_index=i, col_index=j,
                filter_lo=f_lo, filter_hi=f_hi,
                channel_lo=c_lo, channel_hi=c_hi,
                height=height, width=chans * w_ch,
                is_partial=(height < array.rows or chans < cpf)))
    return FoldPlan(layer=layer, array=array, w_ch=w_ch,
                    channels_per_fold=cpf, fold_rows=fold_rows,
                    fold_cols=fold_cols, n_ft_row=n_ft_row, n_ft_col=n_ft_col,
                    total_folds=n_ft_row * n_ft_col, filter_folds=folds,
                    image_blocks=[])


def enumerate_image_blocks(layer: ConvLayerSpec, array: PEArrayConfig,
                           plan: FoldPlan) -> FoldPlan:
    """Attach one image block per column split, channel ranges matching."""
    blocks = []
    for j in range(plan.n_ft_col):
        c_lo = j * plan.channels_per_fold
        c_hi = min(c_lo + plan.channels_per_fold, layer.in_channels)
        blocks.append(ImageBlock(block_id=j, channel_lo=c_lo, channel_hi=c_hi,
                                 layer=layer))
    plan.image_blocks = blocks
    return plan


def enumerate_image_folds(block: ImageBlock, layer: ConvLayerSpec) -> list[ImageFold]:
    """Window columns per output position, reversed, deduplicated per image."""
    dims = derive_output_dims(layer)
    s_n, stride = layer.kern_width, layer.stride
    folds = []
    for n in range(layer.batch_n):
        used: set[int] = set()
        for p in range(dims.out_width):
            window = range(p * stride, p * stride + s_n)
            fresh = tuple(col for col in reversed(window) if col not in used)
            used.update(window)
            folds.append(ImageFold(block_id=block.block_id, image_index=n,
                                   origin_p=p, columns=fresh,
                                   channel_lo=block.channel_lo,
                                   channel_hi=block.channel_hi))
    return folds


def build_fold_plan(layer: ConvLayerSpec, array: PEArrayConfig) -> FoldPlan:
    """Full decomposition: filter folds plus matching image blocks."""
    plan = enumerate_filter_folds(layer, array)
    return enumerate_image_blocks(layer, array, plan)


def split_counts(layer: ConvLayerSpec, array: PEArrayConfig) -> tuple[int, int]:
    """(row splits, column splits) without enumerating the folds."""
    _, _, cpf = fold_geometry(layer, array)
    return (math.ceil(layer.num_filters / array.rows),
            math.ceil(layer.in_channels / cpf))


def delivered_rows(layer: ConvLayerSpec) -> int:
    """Distinct padded rows one delivered column feeds across all shift steps."""
    dims = derive_output_dims(layer)
    r_n, stride = layer.kern_height, layer.stride
    return len({q * stride + r
                for q in range(dims.out_height) for r in range(r_n)})


def emit_schedule(plan: FoldPlan) -> str:
    """Render the plan as a tiled loop nest and as data-centric directives."""
    layer = plan.layer
    dims = derive_output_dims(layer)
    p_n, q_n = dims.out_width, dims.out_height
    per_block = plan.folds_per_block
    lines = [
        f"schedule: layer '{layer.name}' on {plan.array.label()} "
        f"({plan.channels_per_fold} channels per fold, span {plan.w_ch} cols)",
        "",
        "loop-nest view:",
        f"  parallel_for ff_row in 0..{plan.n_ft_row - 1}:"
        f"        # {plan.n_ft_row} spatial filter-fold groups",
        f"    for ff_col in 0..{plan.n_ft_col - 1}:"
        f"            # {plan.n_ft_col} temporal image blocks",
        "      program stationary filter fold (ff_row, ff_col)",
        f"      for image_fold in 0..{per_block - 1}:"
        f"       # {per_block} image folds per block",
        f"        for shift in 0..{q_n - 1}:"
        f"           # {q_n} shifts per image fold, stride {layer.stride}",
        "          multicast fresh columns; multiply; reduce; advance window",
        "",
        "data-centric view:",
        "  loop 1: produce partial-sum folds",
        f"    spatial_map   filter folds across PE clusters "
        f"# {plan.total_folds} filter folds",
        f"    temporal_map  image folds through each cluster "
        f"# {per_block} per block, {q_n} shifts each",
    ]
    if plan.n_ft_col == 1:
        lines += [
            "  loop 2: single partial-sum fold per output (copy, no reduction)",
        ]
    else:
        lines += [
            "  loop 2: accumulate partial-sum folds over depth groups",
            f"    temporal_reduce over {plan.n_ft_col} partial-sum folds per output",
        ]
    lines += [
        "",
        f"outputs: {p_n * q_n} indices per filter per image block "
        f"({p_n} folds x {q_n} shifts)",
    ]
    return "\n".join(lines)
