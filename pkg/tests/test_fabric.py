import numpy as np
import pytest

from foldsim.errors import MappingError, SimulationError
from foldsim.fabric import (IDLE, RESERVED, WEIGHT, EventCounters,
                            PartialSumStore, interact_block,
                            program_filter_fold, random_mappable_pair,
                            accumulate_partials, simulate_layer,
                            verify_against_oracle)
from foldsim.folding import (PEArrayConfig, build_fold_plan, delivered_rows,
                             flatten_filters)
from foldsim.workload import (ConvLayerSpec, derive_output_dims,
                              random_tensors, reference_convolution)


def make_layer(**kw):
    base = dict(name="t", batch_n=1, in_channels=4, in_height=5, in_width=5,
                num_filters=4, kern_height=3, kern_width=3, stride=1, pad=1)
    base.update(kw)
    return ConvLayerSpec(**base)


DEMO_LAYER = make_layer()
DEMO_ARRAY = PEArrayConfig(4, 24)


def programmed_grid(layer, array, seed=0, fold_index=0):
    x, w = random_tensors(layer, seed=seed)
    plan = build_fold_plan(layer, array)
    flat = flatten_filters(w, layer)
    counters = EventCounters()
    grid = program_filter_fold(array, plan.filter_folds[fold_index], flat, counters)
    return grid, plan, x, w, counters


class TestProgramFold:
    def test_full_fold_occupancy(self):
        grid, plan, x, w, counters = programmed_grid(DEMO_LAYER, DEMO_ARRAY)
        assert grid.active_cells() == 96
        assert int(np.count_nonzero(grid.kind == WEIGHT)) == 72
        assert int(np.count_nonzero(grid.kind == RESERVED)) == 24
        assert counters.weight_loads == 72

    def test_single_weight_fold(self):
        layer = make_layer(in_channels=1, num_filters=1, kern_height=1,
                           kern_width=1, pad=0, in_height=3, in_width=3)
        grid, plan, x, w, counters = programmed_grid(layer, DEMO_ARRAY)
        assert grid.active_cells() == 2  # one weight plus one reserved cell
        assert int(np.count_nonzero(grid.kind == IDLE)) == 94
        assert counters.weight_loads == 1

    def test_trailing_fold_idle_columns(self):
        layer = make_layer(in_channels=64, num_filters=64, in_height=56,
                           in_width=56)
        array = PEArrayConfig(64, 64)
        grid, plan, x, w, counters = programmed_grid(layer, array,
                                                     fold_index=12)
        assert plan.filter_folds[12].channels == 4
        assert not (grid.kind[:, :48] == IDLE).any()
        assert (grid.kind[:, 48:] == IDLE).all()
        assert counters.weight_loads == 64 * 4 * 9

    def test_oversized_fold_rejected(self):
        layer = make_layer(num_filters=8)
        x, w = random_tensors(layer, seed=0)
        plan = build_fold_plan(layer, PEArrayConfig(8, 24))
        flat = flatten_filters(w, layer)
        with pytest.raises(MappingError, match="exceeds"):
            program_filter_fold(PEArrayConfig(4, 24), plan.filter_folds[0],
                                flat, EventCounters())

    def test_weights_readable_from_grid(self):
        grid, plan, x, w, counters = programmed_grid(DEMO_LAYER, DEMO_ARRAY)
        state = grid.state_at(1, 0)
        assert state.kind == WEIGHT
        assert state.weight == w[1, 0, 0, 2]  # first group holds the last kernel column
        assert state.group_id == 0
        assert grid.state_at(0, 11).kind == RESERVED

    def test_latest_product_after_interaction(self):
        grid, plan, x, w, counters = programmed_grid(DEMO_LAYER, DEMO_ARRAY)
        interact_block(grid, plan.image_blocks[0], x, counters)
        # Cell (1, 0) holds w[1,0,0,2]; the final shift (q=4) of the final
        # fold (p=4) multiplies it with padded input (0, 0, 4, 6) = x[0,0,3,5]
        # which is outside the 5-wide image, hence a zero pad element.
        state = grid.state_at(1, 0)
        assert state.latest_product == 0.0
        # Cell (1, 1) holds w[1,0,1,2], aligned with padded (0,0,5,6): also pad.
        # Cell (2, 4) holds w[2,0,0,1], group 1, aligned with padded row 4,
        # col 5 = x[0, 0, 3, 4].
        state = grid.state_at(2, 4)
        assert state.latest_product == pytest.approx(
            float(w[2, 0, 0, 1]) * float(x[0, 0, 3, 4]))


class TestInteractBlock:
    def test_first_shift_partials_match_channel_slice(self):
        grid, plan, x, w, counters = programmed_grid(DEMO_LAYER, DEMO_ARRAY)
        store = interact_block(grid, plan.image_blocks[0], x, counters)
        # Restricted oracle: same conv over the block's channels only.
        sliced = make_layer(in_channels=2)
        expected = reference_convolution(
            np.ascontiguousarray(x[:, 0:2]), np.ascontiguousarray(w[:, 0:2]),
            sliced)
        for f in range(4):
            assert (0, f, 0, 0, 0) in store
            assert store[(0, f, 0, 0, 0)] == expected[0, f, 0, 0]

    def test_full_block_yields_all_output_indices(self):
        grid, plan, x, w, counters = programmed_grid(DEMO_LAYER, DEMO_ARRAY)
        store = interact_block(grid, plan.image_blocks[0], x, counters)
        assert len(store) == 4 * 25  # 25 output indices per filter per block

    def test_counting_is_data_independent(self):
        grid1, plan, x, w, c1 = programmed_grid(DEMO_LAYER, DEMO_ARRAY)
        interact_block(grid1, plan.image_blocks[0], x, c1)
        grid2, plan2, x2, w2, c2 = programmed_grid(DEMO_LAYER, DEMO_ARRAY)
        zero = np.zeros_like(x2)
        store = interact_block(grid2, plan2.image_blocks[0], zero, c2)
        assert all(v == 0.0 for v in store.entries.values())
        assert c1.as_dict() == c2.as_dict()

    def test_channel_mismatch_rejected(self):
        grid, plan, x, w, counters = programmed_grid(DEMO_LAYER, DEMO_ARRAY)
        with pytest.raises(MappingError, match="not match fold channels"):
            interact_block(grid, plan.image_blocks[1], x, counters)

    def test_input_shape_rejected(self):
        grid, plan, x, w, counters = programmed_grid(DEMO_LAYER, DEMO_ARRAY)
        with pytest.raises(ValueError, match="shape"):
            interact_block(grid, plan.image_blocks[0], x[:, :, :4, :], counters)

    def test_multicast_forward_conservation(self):
        grid, plan, x, w, counters = programmed_grid(DEMO_LAYER, DEMO_ARRAY)
        interact_block(grid, plan.image_blocks[0], x, counters)
        dims = derive_output_dims(DEMO_LAYER)
        fanout = delivered_rows(DEMO_LAYER) * 4  # rows fed x fold height
        delivered_cols = dims.out_width * 3 * 2  # P windows x S cols x 2 channels
        assert counters.multicasts + counters.forwards == delivered_cols * fanout
        # Fold 0 injects 3 fresh columns, later folds one each; the rest ride
        # laterally.
        assert counters.multicasts == (3 + 1 + 1 + 1 + 1) * 2 * fanout

    def test_no_forwards_when_stride_covers_kernel(self):
        layer = make_layer(in_height=9, in_width=9, pad=0, stride=3)
        grid, plan, x, w, counters = programmed_grid(layer, DEMO_ARRAY)
        interact_block(grid, plan.image_blocks[0], x, counters)
        assert counters.forwards == 0
        assert counters.multicasts > 0


class TestAccumulate:
    def test_two_block_sum(self):
        x, w = random_tensors(DEMO_LAYER, seed=2)
        plan = build_fold_plan(DEMO_LAYER, DEMO_ARRAY)
        flat = flatten_filters(w, DEMO_LAYER)
        counters = EventCounters()
        store = PartialSumStore()
        for fold in plan.filter_folds:
            grid = program_filter_fold(DEMO_ARRAY, fold, flat, counters)
            interact_block(grid, plan.image_blocks[fold.col_index], x,
                           counters, store)
        out = accumulate_partials(store, plan)
        for f in range(4):
            for q in range(5):
                for p in range(5):
                    total = store[(0, f, q, p, 0)] + store[(0, f, q, p, 1)]
                    assert out[0, f, q, p] == total
        assert np.array_equal(out, reference_convolution(x, w, DEMO_LAYER))

    def test_single_block_copies(self):
        layer = make_layer(in_channels=2)
        x, w = random_tensors(layer, seed=3)
        plan = build_fold_plan(layer, DEMO_ARRAY)
        flat = flatten_filters(w, layer)
        counters = EventCounters()
        grid = program_filter_fold(DEMO_ARRAY, plan.filter_folds[0], flat, counters)
        store = interact_block(grid, plan.image_blocks[0], x, counters)
        out = accumulate_partials(store, plan)
        for key, value in store.entries.items():
            n, f, q, p, _ = key
            assert out[n, f, q, p] == value

    def test_missing_entry_names_gap(self):
        x, w = random_tensors(DEMO_LAYER, seed=4)
        out, counters = simulate_layer(DEMO_LAYER, DEMO_ARRAY, x, w)
        plan = build_fold_plan(DEMO_LAYER, DEMO_ARRAY)
        flat = flatten_filters(w, DEMO_LAYER)
        store = PartialSumStore()
        grid = program_filter_fold(DEMO_ARRAY, plan.filter_folds[0], flat,
                                   EventCounters())
        interact_block(grid, plan.image_blocks[0], x, EventCounters(), store)
        with pytest.raises(SimulationError, match="block=1"):
            accumulate_partials(store, plan)


class TestSimulateLayer:
    def test_two_fold_example_totals(self):
        x, w = random_tensors(DEMO_LAYER, seed=5)
        out, counters = simulate_layer(DEMO_LAYER, DEMO_ARRAY, x, w)
        assert counters.weight_loads == 144  # 2 folds x 72 weights
        assert np.array_equal(out, reference_convolution(x, w, DEMO_LAYER))

    def test_identity_kernel(self):
        layer = make_layer(in_channels=1, num_filters=1, kern_height=1,
                           kern_width=1, pad=0, in_height=6, in_width=6,
                           batch_n=2)
        x, _ = random_tensors(layer, seed=6)
        w = np.ones(layer.filter_shape, dtype=np.float32)
        out, counters = simulate_layer(layer, PEArrayConfig(2, 8), x, w)
        assert np.array_equal(out[:, 0], x[:, 0])
        assert counters.macs == 2 * 1 * 6 * 6  # N*C*X*Y

    def test_batched_and_strided(self):
        layer = make_layer(batch_n=2, in_channels=3, num_filters=5, stride=2)
        x, w = random_tensors(layer, seed=7)
        out, counters = simulate_layer(layer, PEArrayConfig(2, 12), x, w)
        assert np.array_equal(out, reference_convolution(x, w, layer))

    def test_active_histogram(self):
        x, w = random_tensors(DEMO_LAYER, seed=8)
        out, counters = simulate_layer(DEMO_LAYER, DEMO_ARRAY, x, w)
        # Both folds fill the whole 4x24 array; every shift cycle runs at 96.
        assert counters.active_pe_per_cycle == {96: 50}
        assert counters.peak_active_pes == 96
        assert counters.shifts == 50


class TestCounterFormulas:
    def test_full_fold_counters_match_closed_forms(self):
        # N_F = array rows and C = channels-per-fold: a single full fold.
        for kern, rows, cpf in [(3, 4, 2), (1, 2, 3), (5, 3, 1)]:
            w_ch = kern * (kern + 1)
            layer = make_layer(in_channels=cpf, num_filters=rows,
                               kern_height=kern, kern_width=kern,
                               in_height=kern + 4, in_width=kern + 4, pad=0)
            array = PEArrayConfig(rows, cpf * w_ch)
            x, w = random_tensors(layer, seed=9)
            out, counters = simulate_layer(layer, array, x, w)
            dims = derive_output_dims(layer)
            p_n, q_n = dims.out_width, dims.out_height
            assert counters.macs == p_n * q_n * rows * cpf * kern * kern
            per_fold, rem = divmod(counters.macs, p_n * layer.batch_n)
            assert rem == 0
            assert per_fold == q_n * rows * cpf * kern * kern
            assert counters.peak_active_pes == rows * cpf * w_ch
            assert counters.stage1_reductions == p_n * q_n * rows * cpf * kern


class TestOracleVerification:
    def test_int_mode_exact(self):
        verdict = verify_against_oracle(DEMO_LAYER, DEMO_ARRAY, seed=11)
        assert verdict.matched and verdict.max_abs_dev == 0.0
        assert verdict.fold_instances == 2

    def test_fp32_mode_within_tolerance(self):
        layer = make_layer(in_channels=6, num_filters=5, in_height=8,
                           in_width=8)
        verdict = verify_against_oracle(layer, PEArrayConfig(3, 30), seed=12,
                                        mode="fp32")
        assert verdict.matched
        assert verdict.max_rel_dev <= 1e-5

    def test_unmappable_layer_raises(self):
        with pytest.raises(MappingError, match="unmappable"):
            verify_against_oracle(DEMO_LAYER, PEArrayConfig(4, 11), seed=0)

    def test_determinism(self):
        a = verify_against_oracle(DEMO_LAYER, DEMO_ARRAY, seed=13)
        b = verify_against_oracle(DEMO_LAYER, DEMO_ARRAY, seed=13)
        assert a.as_dict() == b.as_dict()

    def test_randomized_pairs(self):
        rng = np.random.default_rng(99)
        for i in range(25):
            layer, array = random_mappable_pair(rng)
            verdict = verify_against_oracle(layer, array, seed=i)
            assert verdict.matched, (layer, array)


class TestEventCounters:
    def test_merge_is_componentwise(self):
        a = EventCounters(macs=3, shifts=1)
        a.active_pe_per_cycle[8] = 2
        b = EventCounters(macs=4, forwards=5)
        b.active_pe_per_cycle[8] = 1
        b.active_pe_per_cycle[16] = 3
        merged = a + b
        assert merged.macs == 7 and merged.forwards == 5 and merged.shifts == 1
        assert merged.active_pe_per_cycle == {8: 3, 16: 3}
        assert merged.peak_active_pes == 16

    def test_as_dict_round_trips_histogram(self):
        c = EventCounters()
        c.active_pe_per_cycle[96] = 50
        d = c.as_dict()
        assert d["active_pe_per_cycle"] == {"96": 50}
        assert d["peak_active_pes"] == 96
