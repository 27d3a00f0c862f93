"""Analytical performance model: utilization, reuse, cycles and throughput.

All closed forms are evaluated from the fold plan alone, so full-size
workloads are modelled without functional simulation.  The communication
cycle components can either be computed from documented sub-models or
supplied directly; each reported field carries a provenance flag so the two
routes stay distinguishable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigError
from .folding import (FoldPlan, PEArrayConfig, build_fold_plan, channel_width,
                      delivered_rows, split_counts)
from .workload import ConvLayerSpec, derive_output_dims, total_ops

PE_PER_TILE = 256


@dataclass(frozen=True)
class SystemConfig:
    """Array geometry plus clock, bandwidth and model constants.

    Bandwidths are bytes per second.  Injection rates are messages per cycle
    per tile; the effective device rate is the per-tile rate times the tile
    count.  `tiles` defaults to rows*cols/256 (one tile per 256 PEs);
    `k_log_base` defaults to the reduction-tree arity kern_width + 1 of the
    layer being modelled.
    """

    array: PEArrayConfig
    clock_ghz: float = 1.0
    tiles: int | None = None
    pcie_bw: float = 126e9
    mem_bw: float = 4.5e9
    batches: int = 1
    bytes_per_element: int = 4
    shift_stage_factor: int = 4
    add_ccs: int = 1
    k_log_base: int | None = None
    wl_inject_rate: float = 16.0
    mt_inject_rate: float = 1.0

    def __post_init__(self):
        positive = {
            "clock_ghz": self.clock_ghz, "pcie_bw": self.pcie_bw,
            "mem_bw": self.mem_bw, "batches": self.batches,
            "bytes_per_element": self.bytes_per_element,
            "shift_stage_factor": self.shift_stage_factor,
            "add_ccs": self.add_ccs, "wl_inject_rate": self.wl_inject_rate,
            "mt_inject_rate": self.mt_inject_rate,
        }
        if self.tiles is not None:
            positive["tiles"] = self.tiles
        if self.k_log_base is not None and self.k_log_base < 2:
            raise ConfigError("k_log_base must be >= 2")
        for name, value in positive.items():
            if value <= 0:
                raise ConfigError(f"{name} must be positive, got {value}")

    @property
    def effective_tiles(self) -> int:
        if self.tiles is not None:
            return self.tiles
        return max(1, self.array.size // PE_PER_TILE)

    @property
    def clock_hz(self) -> float:
        return self.clock_ghz * 1e9


@dataclass(frozen=True)
class ReuseMetrics:
    """Closed-form reuse and parallelism counts for one layer on one array."""

    temporal_weight_reuse: int
    spatial_input_reuse: int
    spatial_parallelism: int
    spatial_reduction: int

    def as_dict(self) -> dict:
        return {
            "temporal_weight_reuse": self.temporal_weight_reuse,
            "spatial_input_reuse": self.spatial_input_reuse,
            "spatial_parallelism": self.spatial_parallelism,
            "spatial_reduction": self.spatial_reduction,
        }


@dataclass(frozen=True)
class CyclesBreakdown:
    """Total cycle budget split into transfer, load, message and compute."""

    t_pcie: int
    t_wl: int
    t_mt: int
    t_ops: int
    provenance: tuple[tuple[str, str], ...] = (
        ("t_pcie", "computed"), ("t_wl", "computed"),
        ("t_mt", "computed"), ("t_ops", "computed"))

    @property
    def t_total(self) -> int:
        return self.t_pcie + self.t_wl + self.t_mt + self.t_ops

    def as_dict(self) -> dict:
        prov = dict(self.provenance)
        return {
            "t_pcie": {"cycles": self.t_pcie, "provenance": prov["t_pcie"]},
            "t_wl": {"cycles": self.t_wl, "provenance": prov["t_wl"]},
            "t_mt": {"cycles": self.t_mt, "provenance": prov["t_mt"]},
            "t_ops": {"cycles": self.t_ops, "provenance": prov["t_ops"]},
            "t_total": self.t_total,
        }


@dataclass(frozen=True)
class LayerPerf:
    """Per-layer model outputs plus the fold summary they derive from."""

    name: str
    util_pct: float
    t_ops: int
    gflops: float
    reuse: ReuseMetrics
    n_ft_row: int
    n_ft_col: int
    total_folds: int
    block_length: int
    shifts: int
    note: str | None = None


@dataclass(frozen=True)
class PerfReport:
    """Per-layer records and the aggregate system view."""

    array: PEArrayConfig
    layers: tuple[LayerPerf, ...]
    total_ops: int
    util_avg_pct: float
    cycles: CyclesBreakdown
    ops_inf: float
    ops_sec: float
    kips: float

    CSV_HEADER = ("layer,util_pct,t_ops,gflops,weight_reuse,input_reuse,"
                  "parallelism,reduction")

    def layer_csv_rows(self) -> list[str]:
        rows = []
        for lp in self.layers:
            rows.append(f"{lp.name},{lp.util_pct:.2f},{lp.t_ops},"
                        f"{lp.gflops:.3f},{lp.reuse.temporal_weight_reuse},"
                        f"{lp.reuse.spatial_input_reuse},"
                        f"{lp.reuse.spatial_parallelism},"
                        f"{lp.reuse.spatial_reduction}")
        return rows

    def aggregate_dict(self) -> dict:
        return {
            "array": self.array.label(),
            "total_ops": self.total_ops,
            "util_avg_pct": round(self.util_avg_pct, 4),
            "cycles": self.cycles.as_dict(),
            "ops_inf": self.ops_inf,
            "ops_sec": self.ops_sec,
            "kips": round(self.kips, 4),
        }


def utilization_avg(plan: FoldPlan) -> float:
    """Mean spatial packing over all folds, reserved cells counted as busy."""
    array_cells = plan.array.size
    used = [fold.height * fold.width / array_cells for fold in plan.filter_folds]
    return 100.0 * sum(used) / len(used)


def reuse_metrics(layer: ConvLayerSpec, array: PEArrayConfig) -> ReuseMetrics:
    dims = derive_output_dims(layer)
    p_n, q_n = dims.out_width, dims.out_height
    r_n, s_n = layer.kern_height, layer.kern_width
    w_ch = channel_width(layer)
    cpf = array.cols // w_ch
    base = array.rows * cpf
    return ReuseMetrics(
        temporal_weight_reuse=p_n * q_n * base * r_n * s_n,
        spatial_input_reuse=q_n * base * r_n * s_n,
        spatial_parallelism=base * w_ch,
        spatial_reduction=p_n * q_n * base * s_n,
    )


def _int_log_floor(value: int, base: int) -> int:
    """Largest k with base**k <= value, exact for integers."""
    k = 0
    while base ** (k + 1) <= value:
        k += 1
    return k


def routing_tree_depth(layer: ConvLayerSpec, array: PEArrayConfig,
                       cfg: SystemConfig) -> int:
    base = cfg.k_log_base or (layer.kern_width + 1)
    return _int_log_floor(array.cols, base) + 1


def exec_cycles(layer: ConvLayerSpec, array: PEArrayConfig,
                cfg: SystemConfig) -> int:
    """Compute cycles for one layer: per column split, one programming slot
    plus the staged shift traffic, the reduction-tree latency, and the
    depth-wise accumulation, all replicated across row splits."""
    n_ft_row, n_ft_col = split_counts(layer, array)
    dims = derive_output_dims(layer)
    shifts = dims.out_height
    n_dt = dims.out_width * layer.batch_n
    k = routing_tree_depth(layer, array, cfg)
    add_ops = n_ft_col - 1
    bracket = (n_ft_col
               + cfg.shift_stage_factor * shifts * n_dt * n_ft_col
               + k
               + add_ops * cfg.add_ccs)
    return bracket * n_ft_row


def gflops(layer: ConvLayerSpec, array: PEArrayConfig,
           cfg: SystemConfig) -> tuple[float, str | None]:
    """Peak compute throughput in GFLOPs/sec at the configured clock.

    Uses the padded-size output estimate (in_size + 2*pad/stride)^2 rather
    than the exact output dims; non-square inputs fall back to the product of
    the two padded extents and carry a note.
    """
    note = None
    est_h = layer.in_height + 2 * layer.pad / layer.stride
    est_w = layer.in_width + 2 * layer.pad / layer.stride
    if layer.in_height != layer.in_width:
        note = "non-square input: padded-size estimate uses both extents"
    outputs = est_h * est_w
    work = (layer.num_filters * layer.in_channels
            * layer.kern_height * layer.kern_width)
    cycles = exec_cycles(layer, array, cfg)
    return 2.0 * outputs * work / cycles * cfg.clock_ghz, note


def stream_message_count(layer: ConvLayerSpec) -> int:
    """Exact total multicast+forward events implied by the fabric model."""
    dims = derive_output_dims(layer)
    return (dims.out_width * layer.batch_n * layer.kern_width
            * layer.num_filters * layer.in_channels * delivered_rows(layer))


def reduction_message_count(layer: ConvLayerSpec, array: PEArrayConfig) -> int:
    """Exact total reduction events (all three stages) over all fold instances."""
    _, n_ft_col = split_counts(layer, array)
    dims = derive_output_dims(layer)
    per_shift = ((layer.kern_width + 1) * layer.num_filters * layer.in_channels
                 + layer.num_filters * n_ft_col)
    return dims.out_width * layer.batch_n * dims.out_height * per_shift


def comm_cycles(layers: list[ConvLayerSpec], cfg: SystemConfig,
                supplied: tuple[float, float, float] | None = None
                ) -> tuple[int, int, int, tuple[tuple[str, str], ...]]:
    """(t_pcie, t_wl, t_mt) plus provenance flags.

    Computed mode treats the layer list as one inference pipeline: all weights
    plus the first layer's input cross PCIe, weights are injected at
    wl_inject_rate per tile, and the streamed message total (multicasts,
    forwards and reduction hops, identical to the fabric counters) drains at
    mt_inject_rate per tile.  Supplied values override all three.
    """
    if supplied is not None:
        t_pcie, t_wl, t_mt = (int(round(v)) for v in supplied)
        prov = (("t_pcie", "supplied"), ("t_wl", "supplied"),
                ("t_mt", "supplied"))
        return t_pcie, t_wl, t_mt, prov
    prov = (("t_pcie", "computed"), ("t_wl", "computed"), ("t_mt", "computed"))
    if not layers:
        return 0, 0, 0, prov
    weight_elems = sum(l.num_filters * l.in_channels * l.kern_height
                       * l.kern_width for l in layers)
    input_elems = math.prod(layers[0].input_shape)
    tiles = cfg.effective_tiles
    t_pcie = math.ceil((weight_elems + input_elems) * cfg.bytes_per_element
                       / cfg.pcie_bw * cfg.clock_hz)
    t_wl = math.ceil(weight_elems / (cfg.wl_inject_rate * tiles))
    messages = sum(stream_message_count(l)
                   + reduction_message_count(l, cfg.array) for l in layers)
    t_mt = math.ceil(messages / (cfg.mt_inject_rate * tiles))
    return t_pcie, t_wl, t_mt, prov


@dataclass(frozen=True)
class KipsResult:
    ops_inf: float
    ops_sec: float
    kips: float


def kips(layers: list[ConvLayerSpec], cfg: SystemConfig,
         cycles: CyclesBreakdown, util_avg_pct: float) -> KipsResult:
    """System throughput in kilo-inferences per second."""
    if cycles.t_total <= 0:
        raise ConfigError("total cycle count must be positive to compute KIPS")
    ops = total_ops(layers)
    images = cfg.batches * (layers[0].batch_n if layers else 1)
    ops_inf = ops / images
    ops_sec = ((ops / cycles.t_total) * (cfg.effective_tiles * PE_PER_TILE)
               * (util_avg_pct / 100.0) * cfg.clock_hz)
    return KipsResult(ops_inf=ops_inf, ops_sec=ops_sec,
                      kips=ops_sec / (ops_inf * 1e3))


def model_suite(layers: list[ConvLayerSpec], cfg: SystemConfig,
                supplied_comm: tuple[float, float, float] | None = None
                ) -> PerfReport:
    """Evaluate the full model for a layer suite on one array."""
    per_layer = []
    t_ops_sum = 0
    for layer in layers:
        plan = build_fold_plan(layer, cfg.array)
        cycles = exec_cycles(layer, cfg.array, cfg)
        gf, note = gflops(layer, cfg.array, cfg)
        per_layer.append(LayerPerf(
            name=layer.name, util_pct=utilization_avg(plan), t_ops=cycles,
            gflops=gf, reuse=reuse_metrics(layer, cfg.array),
            n_ft_row=plan.n_ft_row, n_ft_col=plan.n_ft_col,
            total_folds=plan.total_folds, block_length=plan.folds_per_block,
            shifts=plan.shifts_per_fold, note=note))
        t_ops_sum += cycles
    util_avg = (sum(lp.util_pct for lp in per_layer) / len(per_layer)
                if per_layer else 0.0)
    t_pcie, t_wl, t_mt, prov = comm_cycles(layers, cfg, supplied_comm)
    breakdown = CyclesBreakdown(t_pcie=t_pcie, t_wl=t_wl, t_mt=t_mt,
                                t_ops=t_ops_sum,
                                provenance=prov + (("t_ops", "computed"),))
    if layers:
        result = kips(layers, cfg, breakdown, util_avg)
    else:
        result = KipsResult(0.0, 0.0, 0.0)
    return PerfReport(array=cfg.array, layers=tuple(per_layer),
                      total_ops=total_ops(layers), util_avg_pct=util_avg,
                      cycles=breakdown, ops_inf=result.ops_inf,
                      ops_sec=result.ops_sec, kips=result.kips)


def model_vgg16(cfg: SystemConfig,
                supplied_comm: tuple[float, float, float] | None = None
                ) -> PerfReport:
    from .workload import vgg16_suite
    return model_suite(vgg16_suite(), cfg, supplied_comm)


def config_for_array(array: PEArrayConfig, **overrides) -> SystemConfig:
    """SystemConfig with tiles derived from the array unless overridden."""
    return SystemConfig(array=array, **overrides)
