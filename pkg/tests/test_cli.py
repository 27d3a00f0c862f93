import json

import pytest

from foldsim.cli import (RunConfig, cmd_bench, load_config_file, main,
                         parse_array)
from foldsim.errors import ConfigError
from foldsim.workload import load_layer_file, vgg16_suite

DEMO_LAYER_SPEC = "1,4,5,5,4,3,3,1,1"


def run(capsys, *argv):
    status = main(list(argv))
    captured = capsys.readouterr()
    return status, captured.out, captured.err


def json_lines(out):
    return [json.loads(line) for line in out.splitlines() if line.strip()]


class TestParseArray:
    def test_ok(self):
        array = parse_array("64x64")
        assert (array.rows, array.cols) == (64, 64)
        assert parse_array("4X24").cols == 24

    def test_bad(self):
        for text in ("64by64", "64", "0x4", "axb"):
            with pytest.raises(ConfigError):
                parse_array(text)


class TestMap:
    def test_synthetic_64(self, capsys):
        status, out, err = run(capsys, "map", "--suite", "synthetic",
                               "--array", "64x64", "--format", "json")
        assert status == 0
        records = json_lines(out)
        assert [r["total_folds"] for r in records] == [13, 52, 208, 824]
        assert all(r["fold_type"] == "Partial" for r in records)
        assert all(r["shifts"] == 56 for r in records)

    def test_synthetic_16(self, capsys):
        status, out, err = run(capsys, "map", "--suite", "synthetic",
                               "--array", "16x16", "--format", "json")
        assert status == 0
        assert [r["total_folds"] for r in json_lines(out)] == \
            [256, 1024, 4096, 16384]

    def test_unmappable_layer(self, capsys):
        status, out, err = run(capsys, "map", "--layer", "1,1,1,1,1,1,1,1,0",
                               "--array", "4x1")
        assert status == 1
        assert "at least 2" in err

    def test_schedule_flag(self, capsys):
        status, out, err = run(capsys, "map", "--layer", DEMO_LAYER_SPEC,
                               "--array", "4x24", "--schedule")
        assert status == 0
        assert "2 temporal image blocks" in out
        assert "loop-nest view" in out

    def test_dump_layers_round_trip(self, capsys, tmp_path):
        path = tmp_path / "suite.txt"
        status, out, err = run(capsys, "map", "--suite", "vgg16",
                               "--array", "64x64", "--dump-layers", str(path))
        assert status == 0
        assert load_layer_file(path) == vgg16_suite()

    def test_missing_suite_is_config_error(self, capsys):
        status, out, err = run(capsys, "map", "--array", "64x64")
        assert status == 2

    def test_bad_array_is_config_error(self, capsys):
        status, out, err = run(capsys, "map", "--suite", "synthetic",
                               "--array", "64by64")
        assert status == 2


class TestSimulate:
    def test_demo_layer_verdict(self, capsys):
        status, out, err = run(capsys, "simulate", "--layer", DEMO_LAYER_SPEC,
                               "--array", "4x24", "--seed", "3",
                               "--format", "json")
        assert status == 0
        record = json_lines(out)[0]
        assert record["matched"] is True
        assert record["counters"]["weight_loads"] == 144
        assert record["fold_instances"] == 2

    def test_corpus_mode(self, capsys):
        status, out, err = run(capsys, "simulate", "--pairs", "6", "--seed", "1")
        assert status == 0
        assert out.count("match") == 6

    def test_fp32_mode(self, capsys):
        status, out, err = run(capsys, "simulate", "--layer", DEMO_LAYER_SPEC,
                               "--array", "4x24", "--mode", "fp32",
                               "--format", "json")
        assert status == 0
        record = json_lines(out)[0]
        assert record["matched"] is True
        assert record["max_rel_dev"] <= 1e-5

    def test_large_layers_skipped_without_full(self, capsys):
        status, out, err = run(capsys, "simulate", "--suite", "vgg16",
                               "--array", "64x64")
        assert status == 0
        assert out.count("skipped") == 13


class TestModel:
    def test_vgg_supplied_comm(self, capsys, tmp_path):
        status, out, err = run(capsys, "model", "--suite", "vgg16",
                               "--array", "64x64",
                               "--supply-comm", "7.6e6,0.64e6,260.7e6",
                               "--out", str(tmp_path))
        assert status == 0
        agg = json.loads((tmp_path / "model_aggregate_64x64.json").read_text())
        assert agg["kips"] == pytest.approx(12.7, abs=0.4)
        assert agg["total_ops"] == 30_693_261_312
        assert agg["cycles"]["t_mt"]["provenance"] == "supplied"
        assert agg["cycles"]["t_ops"]["provenance"] == "computed"
        csv_text = (tmp_path / "model_layers_64x64.csv").read_text()
        assert csv_text.splitlines()[0].startswith("layer,util_pct,t_ops,gflops")
        assert len(csv_text.splitlines()) == 14

    def test_synthetic_16_utilization_column(self, capsys):
        status, out, err = run(capsys, "model", "--suite", "synthetic",
                               "--array", "16x16")
        assert status == 0
        rows = [line for line in out.splitlines()
                if line and line[0].isdigit()]
        assert len(rows) == 4
        assert all(row.split(",")[1] == "75.00" for row in rows)

    def test_synthetic_64_gflops(self, capsys):
        status, out, err = run(capsys, "model", "--suite", "synthetic",
                               "--array", "64x64")
        assert status == 0
        rows = [line for line in out.splitlines()
                if line.startswith("3x3x512x512")]
        gf = float(rows[0].split(",")[3])
        assert gf == pytest.approx(1560.0, rel=0.05)
        assert gf == pytest.approx(1535.447, abs=0.01)

    def test_bad_supply_comm(self, capsys):
        status, out, err = run(capsys, "model", "--suite", "vgg16",
                               "--array", "64x64", "--supply-comm", "1,2")
        assert status == 2

    def test_config_file(self, capsys, tmp_path):
        cfgfile = tmp_path / "sys.cfg"
        cfgfile.write_text("clock_ghz = 2.0\ntiles = 8  # half machine\n")
        status, out, err = run(capsys, "model", "--suite", "synthetic",
                               "--array", "64x64", "--config", str(cfgfile),
                               "--out", str(tmp_path))
        assert status == 0

    def test_bad_config_file(self, capsys, tmp_path):
        cfgfile = tmp_path / "sys.cfg"
        cfgfile.write_text("clock_ghz = 1.0\nnot a pair\n")
        status, out, err = run(capsys, "model", "--suite", "synthetic",
                               "--array", "64x64", "--config", str(cfgfile))
        assert status == 2
        assert "sys.cfg:2" in err

    def test_unknown_config_key(self, tmp_path):
        cfgfile = tmp_path / "sys.cfg"
        cfgfile.write_text("warp_factor = 9\n")
        with pytest.raises(ConfigError, match="unknown config key"):
            load_config_file(str(cfgfile))


class TestBench:
    def test_outputs_and_determinism(self, capsys, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(["bench", "--out", str(out1)]) == 0
        assert main(["bench", "--out", str(out2)]) == 0
        capsys.readouterr()
        names = ["table3.csv", "fig7_util.csv", "fig7_cycles.csv",
                 "fig7_gflops.csv", "fig8_reuse.csv", "fig9_vgg.csv"]
        for name in names:
            a, b = (out1 / name).read_bytes(), (out2 / name).read_bytes()
            assert a == b, name
        table3 = (out1 / "table3.csv").read_text().splitlines()
        counts = [int(row.split(",")[2]) for row in table3[1:]]
        assert counts == [256, 1024, 4096, 16384,
                          64, 256, 1024, 4096,
                          13, 52, 208, 824]

    def test_fig7_shapes(self, capsys, tmp_path):
        assert main(["bench", "--out", str(tmp_path)]) == 0
        capsys.readouterr()
        util_rows = (tmp_path / "fig7_util.csv").read_text().splitlines()[1:]
        by_workload = {}
        for row in util_rows:
            name, array, value = row.split(",")
            by_workload.setdefault(name, {})[array] = float(value)
        for name, values in by_workload.items():
            assert values["16x16"] == 75.0
            assert values["32x32"] == 75.0
            assert values["64x64"] > 92.0
        cycle_rows = (tmp_path / "fig7_cycles.csv").read_text().splitlines()[1:]
        cycles = {}
        for row in cycle_rows:
            name, array, value = row.split(",")
            cycles.setdefault(name, {})[array] = int(value)
        for name, values in cycles.items():
            assert values["16x16"] > values["32x32"] > values["64x64"]
