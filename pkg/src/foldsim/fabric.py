"""Functional, event-counting simulation of the fold interaction pipeline.

A filter fold is programmed once onto the PE grid and stays resident while
the matching image block streams through: each image fold delivers its fresh
padded-input columns (overlapping columns are lateral forwards, not reloads),
then every shift step multiplies the resident weights with the aligned input
window and reduces hierarchically - within each weight group, across the
groups of one channel, and across the fold's channels - leaving one partial
value per resident filter.  Partial-sum folds from all blocks are finally
accumulated in ascending block order.

Counting is data independent: two inputs of the same shape produce identical
counters.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import MappingError, SimulationError
from .folding import (FilterFold, FlatFilterMatrix, FoldPlan, ImageBlock,
                      IDLE, RESERVED, WEIGHT, PEArrayConfig, build_fold_plan,
                      delivered_rows, flatten_filters, split_counts)
from .workload import (ConvLayerSpec, Tensor4D, check_shapes,
                       derive_output_dims, random_tensors,
                       reference_convolution, zero_pad)

FP32_REL_TOL = 1e-5


@dataclass
class EventCounters:
    """Tallies of the simulated fabric events; merging is componentwise."""

    weight_loads: int = 0
    multicasts: int = 0
    forwards: int = 0
    macs: int = 0
    stage1_reductions: int = 0
    stage2_reductions: int = 0
    stage3_reductions: int = 0
    shifts: int = 0
    active_pe_per_cycle: Counter = field(default_factory=Counter)

    def merge(self, other: "EventCounters") -> "EventCounters":
        merged = EventCounters()
        for f in fields(EventCounters):
            setattr(merged, f.name, getattr(self, f.name) + getattr(other, f.name))
        return merged

    __add__ = merge

    @property
    def peak_active_pes(self) -> int:
        return max(self.active_pe_per_cycle) if self.active_pe_per_cycle else 0

    @property
    def total_messages(self) -> int:
        """Streamed input deliveries plus all reduction hops."""
        return (self.multicasts + self.forwards + self.stage1_reductions
                + self.stage2_reductions + self.stage3_reductions)

    def as_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(EventCounters)
               if f.name != "active_pe_per_cycle"}
        out["active_pe_per_cycle"] = {
            str(k): v for k, v in sorted(self.active_pe_per_cycle.items())}
        out["peak_active_pes"] = self.peak_active_pes
        return out


@dataclass(frozen=True)
class PEState:
    """Snapshot of one processing element."""

    kind: int                 # IDLE, WEIGHT or RESERVED
    weight: float | None
    latest_product: float | None
    group_id: int | None      # channel-slot * kern_width + group


class PEGrid:
    """PE array with a stationary filter fold resident at origin (0, 0)."""

    def __init__(self, array: PEArrayConfig, fold: FilterFold,
                 flat: FlatFilterMatrix):
        self.array = array
        self.fold = fold
        self.layer = flat.layer
        self.weights = np.zeros((array.rows, array.cols), dtype=np.float32)
        self.kind = np.full((array.rows, array.cols), IDLE, dtype=np.int8)
        r_n = self.layer.kern_height
        s_n = self.layer.kern_width
        self.weights[:fold.height, :fold.width] = flat.fold_values(fold)
        for j in range(fold.width):
            pos = j % (r_n + 1)
            self.kind[:fold.height, j] = RESERVED if pos == r_n else WEIGHT
        # Resident weights regrouped as (height, channels, group, tap) for the
        # shift-step pipeline; reserved columns drop out of the last axis.
        self.weight_tensor = (
            self.weights[:fold.height, :fold.width]
            .reshape(fold.height, fold.channels, s_n, r_n + 1)[..., :r_n])
        self.last_products: np.ndarray | None = None

    def active_cells(self) -> int:
        return int(np.count_nonzero(self.kind != IDLE))

    def state_at(self, row: int, col: int) -> PEState:
        kind = int(self.kind[row, col])
        if kind == IDLE:
            return PEState(IDLE, None, None, None)
        r_n = self.layer.kern_height
        s_n = self.layer.kern_width
        chan_slot, offset = divmod(col, (r_n + 1) * s_n)
        group, pos = divmod(offset, r_n + 1)
        group_id = chan_slot * s_n + group
        weight = float(self.weights[row, col]) if kind == WEIGHT else None
        product = None
        if self.last_products is not None and kind == WEIGHT:
            product = float(self.last_products[row, chan_slot, group, pos])
        return PEState(kind, weight, product, group_id)


class PartialSumStore:
    """Partial outputs keyed by (image, filter, out_row, out_col, block)."""

    def __init__(self):
        self.entries: dict[tuple[int, int, int, int, int], np.float32] = {}

    def add(self, key: tuple[int, int, int, int, int], value: np.float32) -> None:
        self.entries[key] = self.entries.get(key, np.float32(0.0)) + value

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, key) -> bool:
        return key in self.entries

    def __getitem__(self, key) -> np.float32:
        return self.entries[key]


def program_filter_fold(array: PEArrayConfig, fold: FilterFold,
                        flat: FlatFilterMatrix,
                        counters: EventCounters) -> PEGrid:
    """Place a fold at the array origin; cells outside it stay idle."""
    if fold.height > array.rows or fold.width > array.cols:
        raise MappingError(
            f"fold {fold.height}x{fold.width} exceeds PE array "
            f"{array.rows}x{array.cols}")
    grid = PEGrid(array, fold, flat)
    counters.weight_loads += (fold.height * fold.channels
                              * flat.layer.kern_height * flat.layer.kern_width)
    return grid


def interact_block(grid: PEGrid, block: ImageBlock, input: Tensor4D,
                   counters: EventCounters,
                   store: PartialSumStore | None = None) -> PartialSumStore:
    """Stream an image block through the resident fold, one image fold at a
    time, writing one partial value per resident filter per shift step."""
    fold = grid.fold
    layer = grid.layer
    if (block.channel_lo, block.channel_hi) != (fold.channel_lo, fold.channel_hi):
        raise MappingError(
            f"image block channels [{block.channel_lo}, {block.channel_hi}) do "
            f"not match fold channels [{fold.channel_lo}, {fold.channel_hi})")
    if tuple(input.shape) != layer.input_shape:
        raise ValueError(
            f"input shape {tuple(input.shape)} does not match layer "
            f"'{layer.name}' expecting {layer.input_shape}")
    if store is None:
        store = PartialSumStore()

    dims = derive_output_dims(layer)
    q_n = dims.out_height
    stride = layer.stride
    r_n, s_n = layer.kern_height, layer.kern_width
    height, chans = fold.height, fold.channels
    c_lo, c_hi = fold.channel_lo, fold.channel_hi
    padded = zero_pad(np.asarray(input, dtype=np.float32), layer.pad)
    n_rows_fed = delivered_rows(layer)
    active = fold.height * fold.width
    w = grid.weight_tensor

    for image_fold in block.folds:
        n, p = image_fold.image_index, image_fold.origin_p
        # Column delivery: every channel slot receives the fold's window; only
        # the fresh columns are injected, the rest ride laterally from the
        # neighbouring group.  One event per element per receiving PE row.
        fresh = len(image_fold.columns)
        counters.multicasts += fresh * chans * n_rows_fed * height
        counters.forwards += (s_n - fresh) * chans * n_rows_fed * height
        for q in range(q_n):
            window = padded[n, c_lo:c_hi,
                            q * stride:q * stride + r_n,
                            p * stride:p * stride + s_n]
            # Align the window to group order: group g holds kernel column
            # kern_width-1-g, taps run down the kernel rows.
            aligned = window[:, :, ::-1].transpose(0, 2, 1)
            products = w * aligned[np.newaxis, :, :, :]
            group_sums = products.sum(axis=3)      # into each reserved column
            chan_sums = group_sums.sum(axis=2)     # across one channel's groups
            fold_sums = chan_sums.sum(axis=1)      # across the fold's channels
            counters.macs += height * chans * r_n * s_n
            counters.stage1_reductions += height * chans * s_n
            counters.stage2_reductions += height * chans
            counters.stage3_reductions += height
            counters.shifts += 1
            counters.active_pe_per_cycle[active] += 1
            for i in range(height):
                store.add((n, fold.filter_lo + i, q, p, block.block_id),
                          fold_sums[i])
            grid.last_products = products
    return store


def accumulate_partials(store: PartialSumStore, plan: FoldPlan) -> Tensor4D:
    """Sum per-block partials in ascending block order into the output tensor."""
    layer = plan.layer
    dims = derive_output_dims(layer)
    q_n, p_n = dims.out_height, dims.out_width
    out = np.zeros((layer.batch_n, layer.num_filters, q_n, p_n), dtype=np.float32)
    for b in range(plan.n_ft_col):
        for n in range(layer.batch_n):
            for f in range(layer.num_filters):
                for q in range(q_n):
                    for p in range(p_n):
                        key = (n, f, q, p, b)
                        if key not in store:
                            raise SimulationError(
                                f"incomplete simulation: missing partial sum "
                                f"for image={n} filter={f} row={q} col={p} "
                                f"block={b}")
                        out[n, f, q, p] += store[key]
    return out


def simulate_layer(layer: ConvLayerSpec, array: PEArrayConfig,
                   input: Tensor4D, filters: Tensor4D
                   ) -> tuple[Tensor4D, EventCounters]:
    """Run every (row split, column split) fold instance and accumulate."""
    check_shapes(input, filters, layer)
    plan = build_fold_plan(layer, array)
    flat = flatten_filters(filters, layer)
    counters = EventCounters()
    store = PartialSumStore()
    for fold in plan.filter_folds:
        grid = program_filter_fold(array, fold, flat, counters)
        interact_block(grid, plan.image_blocks[fold.col_index], input,
                       counters, store)
    return accumulate_partials(store, plan), counters


@dataclass(frozen=True)
class OracleVerdict:
    """Outcome of one simulator-versus-oracle comparison."""

    layer_name: str
    array: str
    mode: str
    matched: bool
    max_abs_dev: float
    max_rel_dev: float
    fold_instances: int
    counters: EventCounters

    def as_dict(self) -> dict:
        return {
            "layer": self.layer_name,
            "array": self.array,
            "mode": self.mode,
            "matched": self.matched,
            "max_abs_dev": self.max_abs_dev,
            "max_rel_dev": self.max_rel_dev,
            "fold_instances": self.fold_instances,
            "counters": self.counters.as_dict(),
        }


def verify_against_oracle(layer: ConvLayerSpec, array: PEArrayConfig,
                          seed: int = 0, mode: str = "int") -> OracleVerdict:
    """Simulate seeded random tensors and compare with the reference loops.

    Integer mode demands bit-identical outputs.  FP32 mode measures the
    maximum deviation relative to the reference tensor's magnitude and
    passes when it stays within FP32_REL_TOL.
    """
    input, filters = random_tensors(layer, seed, mode)
    simulated, counters = simulate_layer(layer, array, input, filters)
    expected = reference_convolution(input, filters, layer)
    abs_dev = float(np.max(np.abs(simulated - expected))) if expected.size else 0.0
    scale = float(np.max(np.abs(expected))) if expected.size else 0.0
    rel_dev = abs_dev / scale if scale > 0.0 else abs_dev
    if mode == "int":
        matched = bool(np.array_equal(simulated, expected))
    else:
        matched = rel_dev <= FP32_REL_TOL
    n_row, n_col = split_counts(layer, array)
    return OracleVerdict(layer_name=layer.name, array=array.label(), mode=mode,
                         matched=matched, max_abs_dev=abs_dev,
                         max_rel_dev=rel_dev, fold_instances=n_row * n_col,
                         counters=counters)


def random_mappable_pair(rng: np.random.Generator
                         ) -> tuple[ConvLayerSpec, PEArrayConfig]:
    """Random small (layer, array) pair with the array wide enough to map it.

    Dims: N <= 2, C <= 8, X = Y <= 12, N_F <= 8, R = S in {1, 3, 5},
    stride in {1, 2, 3}, pad in {0, 1, 2}.
    """
    while True:
        kern = int(rng.choice([1, 3, 5]))
        stride = int(rng.integers(1, 4))
        pad = int(rng.integers(0, 3))
        size = int(rng.integers(1, 13))
        span = size + 2 * pad - kern
        if span < 0 or span % stride:
            continue
        layer = ConvLayerSpec(
            name=f"rand{kern}x{kern}", batch_n=int(rng.integers(1, 3)),
            in_channels=int(rng.integers(1, 9)), in_height=size, in_width=size,
            num_filters=int(rng.integers(1, 9)), kern_height=kern,
            kern_width=kern, stride=stride, pad=pad)
        w_ch = kern * (kern + 1)
        array = PEArrayConfig(rows=int(rng.integers(1, 9)),
                              cols=int(rng.integers(w_ch, 3 * w_ch + 5)))
        return layer, array
