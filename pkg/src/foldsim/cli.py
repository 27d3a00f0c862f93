"""Command-line front end: mapping dumps, oracle verification, model reports
and benchmark regeneration.

Exit codes: 0 success, 1 verification mismatch or unmappable layer,
2 configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import fabric, folding, perfmodel, workload
from .errors import ConfigError, FoldsimError, MappingError

BENCH_ARRAYS = ("16x16", "32x32", "64x64")
# Layers above this many multiplies are skipped in `simulate` without --full.
FULL_SIM_MAC_LIMIT = 1 << 24

_CONFIG_FIELDS = {
    "clock_ghz": float, "tiles": int, "pcie_bw": float, "mem_bw": float,
    "batches": int, "bytes_per_element": int, "shift_stage_factor": int,
    "add_ccs": int, "k_log_base": int, "wl_inject_rate": float,
    "mt_inject_rate": float,
}


@dataclass
class RunConfig:
    """Parsed invocation: one suite source, arrays, overrides and output."""

    subcommand: str
    suite: str | None = None
    layer_file: str | None = None
    layer_spec: str | None = None
    arrays: tuple[folding.PEArrayConfig, ...] = ()
    overrides: dict = dataclasses.field(default_factory=dict)
    supply_comm: tuple[float, float, float] | None = None
    seed: int = 0
    mode: str = "int"
    out_dir: str | None = None
    out_format: str = "table"
    schedule: bool = False
    full: bool = False
    pairs: int = 20
    dump_layers: str | None = None


def parse_array(text: str) -> folding.PEArrayConfig:
    parts = text.lower().split("x")
    if len(parts) != 2:
        raise ConfigError(f"array must be RxC, e.g. 64x64, got {text!r}")
    try:
        rows, cols = int(parts[0]), int(parts[1])
    except ValueError:
        raise ConfigError(f"array dims must be integers, got {text!r}") from None
    try:
        return folding.PEArrayConfig(rows=rows, cols=cols)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config_file(path: str) -> dict:
    """key=value lines for SystemConfig fields; '#' starts a comment."""
    overrides = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _CONFIG_FIELDS:
            raise ConfigError(f"{path}:{lineno}: unknown config key '{key}'")
        try:
            overrides[key] = _CONFIG_FIELDS[key](value)
        except ValueError:
            raise ConfigError(
                f"{path}:{lineno}: bad value {value!r} for '{key}'") from None
    return overrides


def apply_set_overrides(overrides: dict, pairs: list[str]) -> dict:
    for item in pairs:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = (part.strip() for part in item.split("=", 1))
        if key not in _CONFIG_FIELDS:
            raise ConfigError(f"unknown config key '{key}'")
        try:
            overrides[key] = _CONFIG_FIELDS[key](value)
        except ValueError:
            raise ConfigError(f"bad value {value!r} for '{key}'") from None
    return overrides


def resolve_layers(cfg: RunConfig) -> list[workload.ConvLayerSpec]:
    sources = [s for s in (cfg.suite, cfg.layer_file, cfg.layer_spec) if s]
    if len(sources) > 1:
        raise ConfigError("give exactly one of --suite, --layer-file, --layer")
    if cfg.suite:
        try:
            return workload.get_suite(cfg.suite)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    if cfg.layer_file:
        try:
            return workload.load_layer_file(cfg.layer_file)
        except (OSError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
    if cfg.layer_spec:
        try:
            return [workload.parse_layer_fields(cfg.layer_spec.split(","))]
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    return []


def _system_config(cfg: RunConfig,
                   array: folding.PEArrayConfig) -> perfmodel.SystemConfig:
    try:
        return perfmodel.config_for_array(array, **cfg.overrides)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _table(rows: list[dict], columns: list[str]) -> str:
    widths = {c: max(len(c), *(len(str(r[c])) for r in rows)) if rows else len(c)
              for c in columns}
    header = "  ".join(c.ljust(widths[c]) for c in columns)
    sep = "  ".join("-" * widths[c] for c in columns)
    body = ["  ".join(str(r[c]).ljust(widths[c]) for c in columns) for r in rows]
    return "\n".join([header, sep, *body])


def cmd_map(cfg: RunConfig) -> int:
    layers = resolve_layers(cfg)
    if not layers:
        raise ConfigError("map needs --suite, --layer-file or --layer")
    if not cfg.arrays:
        raise ConfigError("map needs at least one --array RxC")
    if cfg.dump_layers:
        workload.save_layer_file(cfg.dump_layers, layers)
    records = []
    status = 0
    for array in cfg.arrays:
        for layer in layers:
            try:
                plan = folding.build_fold_plan(layer, array)
            except MappingError as exc:
                print(f"error: {exc}", file=sys.stderr)
                status = 1
                continue
            records.append((plan, plan.summary_record()))
    rows = [rec for _, rec in records]
    if cfg.out_format == "json":
        for rec in rows:
            print(json.dumps(rec))
    elif cfg.out_format == "csv":
        cols = list(rows[0]) if rows else []
        print(",".join(cols))
        for rec in rows:
            print(",".join(str(rec[c]) for c in cols))
    elif rows:
        print(_table(rows, list(rows[0])))
        for rec in rows:  # machine-readable record alongside the table
            print(json.dumps(rec))
    if cfg.schedule:
        for plan, _ in records:
            print()
            print(folding.emit_schedule(plan))
    return status


def _corpus_pairs(cfg: RunConfig):
    rng = np.random.default_rng(cfg.seed)
    for _ in range(cfg.pairs):
        layer, array = fabric.random_mappable_pair(rng)
        if cfg.arrays:
            # Keep drawing until the layer fits the requested array.
            while folding.channel_width(layer) > cfg.arrays[0].cols:
                layer, _ = fabric.random_mappable_pair(rng)
            array = cfg.arrays[0]
        yield layer, array


def cmd_simulate(cfg: RunConfig) -> int:
    layers = resolve_layers(cfg)
    if layers:
        if not cfg.arrays:
            raise ConfigError("simulate needs --array RxC with an explicit suite")
        pairs = [(layer, array) for array in cfg.arrays for layer in layers]
    else:
        pairs = list(_corpus_pairs(cfg))
    status = 0
    for layer, array in pairs:
        macs = (workload.layer_ops(layer) // 2)
        if macs > FULL_SIM_MAC_LIMIT and not cfg.full:
            print(f"{layer.name} on {array.label()}: skipped "
                  f"({macs} multiplies; rerun with --full)")
            continue
        try:
            verdict = fabric.verify_against_oracle(layer, array,
                                                   seed=cfg.seed, mode=cfg.mode)
        except MappingError as exc:
            print(f"error: {exc}", file=sys.stderr)
            status = 1
            continue
        if cfg.out_format == "json":
            print(json.dumps(verdict.as_dict()))
        else:
            tag = "match" if verdict.matched else "MISMATCH"
            print(f"{layer.name} on {array.label()} [{verdict.mode}]: {tag}  "
                  f"max_rel_dev={verdict.max_rel_dev:.3g}  "
                  f"folds={verdict.fold_instances}")
            counts = verdict.counters.as_dict()
            counts["active_pe_per_cycle"] = ";".join(
                f"{k}:{v}" for k, v in counts["active_pe_per_cycle"].items())
            print(_table([{"event": k, "count": v} for k, v in counts.items()],
                         ["event", "count"]))
        if not verdict.matched:
            status = 1
    return status


def cmd_model(cfg: RunConfig) -> int:
    layers = resolve_layers(cfg)
    if not layers:
        raise ConfigError("model needs --suite, --layer-file or --layer")
    if not cfg.arrays:
        raise ConfigError("model needs at least one --array RxC")
    status = 0
    for array in cfg.arrays:
        syscfg = _system_config(cfg, array)
        try:
            report = perfmodel.model_suite(layers, syscfg, cfg.supply_comm)
        except MappingError as exc:
            print(f"error: {exc}", file=sys.stderr)
            status = 1
            continue
        csv_text = "\n".join([perfmodel.PerfReport.CSV_HEADER,
                              *report.layer_csv_rows()]) + "\n"
        agg_text = json.dumps(report.aggregate_dict(), indent=2) + "\n"
        if cfg.out_dir:
            out = Path(cfg.out_dir)
            out.mkdir(parents=True, exist_ok=True)
            (out / f"model_layers_{array.label()}.csv").write_text(csv_text)
            (out / f"model_aggregate_{array.label()}.json").write_text(agg_text)
            print(f"wrote model_layers_{array.label()}.csv and "
                  f"model_aggregate_{array.label()}.json to {out}")
        else:
            print(csv_text, end="")
            print(agg_text, end="")
    return status


def _bench_rows(cfg: RunConfig):
    """One model evaluation per (workload, array) over both suites."""
    synth = workload.synthetic_suite()
    vgg = workload.vgg16_suite()
    for label in BENCH_ARRAYS:
        array = parse_array(label)
        syscfg = _system_config(cfg, array)
        synth_report = perfmodel.model_suite(synth, syscfg)
        vgg_report = perfmodel.model_suite(vgg, syscfg)
        yield label, synth, synth_report, vgg_report


def cmd_bench(cfg: RunConfig) -> int:
    out = Path(cfg.out_dir or "bench_out")
    out.mkdir(parents=True, exist_ok=True)
    table3 = ["workload,array,fold_count,fold_type,block_length,shifts"]
    util = ["workload,array,util_pct"]
    cycles = ["workload,array,t_ops"]
    gflops_rows = ["workload,array,gflops"]
    reuse = ["workload,array,weight_reuse,input_reuse,parallelism,reduction"]
    vgg_rows = ["layer,array,util_pct,t_ops"]
    for label, synth, synth_report, vgg_report in _bench_rows(cfg):
        for layer, lp in zip(synth, synth_report.layers):
            plan = folding.build_fold_plan(layer, parse_array(label))
            rec = plan.summary_record()
            table3.append(f"{layer.name},{label},{rec['total_folds']},"
                          f"{rec['fold_type']},{rec['folds_per_block']},"
                          f"{rec['shifts']}")
            util.append(f"{layer.name},{label},{lp.util_pct:.2f}")
            cycles.append(f"{layer.name},{label},{lp.t_ops}")
            gflops_rows.append(f"{layer.name},{label},{lp.gflops:.3f}")
            reuse.append(f"{layer.name},{label},"
                         f"{lp.reuse.temporal_weight_reuse},"
                         f"{lp.reuse.spatial_input_reuse},"
                         f"{lp.reuse.spatial_parallelism},"
                         f"{lp.reuse.spatial_reduction}")
        for lp in vgg_report.layers:
            vgg_rows.append(f"{lp.name},{label},{lp.util_pct:.2f},{lp.t_ops}")
    files = {
        "table3.csv": table3, "fig7_util.csv": util,
        "fig7_cycles.csv": cycles, "fig7_gflops.csv": gflops_rows,
        "fig8_reuse.csv": reuse, "fig9_vgg.csv": vgg_rows,
    }
    for name, lines in files.items():
        (out / name).write_text("\n".join(lines) + "\n")
    print(f"wrote {', '.join(files)} to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="foldsim",
        description="Convolution fold mapping, simulation and performance model")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p, arrays=True):
        p.add_argument("--suite", help="built-in suite: synthetic or vgg16")
        p.add_argument("--layer-file", help="plain-text layer file")
        p.add_argument("--layer", dest="layer_spec",
                       help="inline layer 'N,C,X,Y,N_F,R,S,stride,pad'")
        if arrays:
            p.add_argument("--array", action="append", default=[],
                           help="PE array as RxC (repeatable)")
        p.add_argument("--config", help="key=value SystemConfig file")
        p.add_argument("--set", action="append", default=[],
                       metavar="KEY=VALUE", help="override one config key")
        p.add_argument("--out", dest="out_dir", help="output directory")
        p.add_argument("--format", dest="out_format", default="table",
                       choices=["table", "csv", "json"])

    p_map = sub.add_parser("map", help="print fold plans")
    common(p_map)
    p_map.add_argument("--schedule", action="store_true",
                       help="also emit the schedule views")
    p_map.add_argument("--dump-layers", help="write the layer suite to a file")

    p_sim = sub.add_parser("simulate", help="verify the simulator against the oracle")
    common(p_sim)
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--mode", default="int", choices=["int", "fp32"])
    p_sim.add_argument("--full", action="store_true",
                       help="also simulate large layers functionally")
    p_sim.add_argument("--pairs", type=int, default=20,
                       help="random (layer, array) pairs when no suite is given")

    p_model = sub.add_parser("model", help="evaluate the analytical model")
    common(p_model)
    p_model.add_argument("--supply-comm", metavar="PCIE,WL,MT",
                         help="supplied communication cycles, e.g. 7.6e6,0.64e6,260.7e6")

    p_bench = sub.add_parser("bench", help="regenerate the benchmark data files")
    p_bench.add_argument("--config", help="key=value SystemConfig file")
    p_bench.add_argument("--set", action="append", default=[],
                         metavar="KEY=VALUE")
    p_bench.add_argument("--out", dest="out_dir", help="output directory")
    return parser


def run_config_from_args(args: argparse.Namespace) -> RunConfig:
    overrides = {}
    if getattr(args, "config", None):
        overrides.update(load_config_file(args.config))
    apply_set_overrides(overrides, getattr(args, "set", []))
    supply = None
    if getattr(args, "supply_comm", None):
        parts = args.supply_comm.split(",")
        if len(parts) != 3:
            raise ConfigError("--supply-comm expects three values: pcie,wl,mt")
        try:
            supply = tuple(float(p) for p in parts)
        except ValueError:
            raise ConfigError(f"bad --supply-comm value {args.supply_comm!r}") from None
    return RunConfig(
        subcommand=args.subcommand,
        suite=getattr(args, "suite", None),
        layer_file=getattr(args, "layer_file", None),
        layer_spec=getattr(args, "layer_spec", None),
        arrays=tuple(parse_array(a) for a in getattr(args, "array", [])),
        overrides=overrides,
        supply_comm=supply,
        seed=getattr(args, "seed", 0),
        mode=getattr(args, "mode", "int"),
        out_dir=getattr(args, "out_dir", None),
        out_format=getattr(args, "out_format", "table"),
        schedule=getattr(args, "schedule", False),
        full=getattr(args, "full", False),
        pairs=getattr(args, "pairs", 20),
        dump_layers=getattr(args, "dump_layers", None),
    )


_COMMANDS = {"map": cmd_map, "simulate": cmd_simulate,
             "model": cmd_model, "bench": cmd_bench}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = run_config_from_args(args)
        return _COMMANDS[cfg.subcommand](cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except FoldsimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
