"""foldsim: convolution fold mapping, PE-array simulation and performance model."""

from .errors import ConfigError, FoldsimError, MappingError, SimulationError
from .fabric import (EventCounters, OracleVerdict, PartialSumStore, PEGrid,
                     accumulate_partials, interact_block, program_filter_fold,
                     random_mappable_pair, simulate_layer, verify_against_oracle)
from .folding import (FilterFold, FlatFilterMatrix, FoldPlan, ImageBlock,
                      ImageFold, PEArrayConfig, Weight, build_fold_plan,
                      channel_width, emit_schedule, enumerate_filter_folds,
                      enumerate_image_blocks, enumerate_image_folds,
                      flatten_filters, fold_geometry)
from .perfmodel import (CyclesBreakdown, LayerPerf, PerfReport, ReuseMetrics,
                        SystemConfig, comm_cycles, config_for_array,
                        exec_cycles, gflops, kips, model_suite, model_vgg16,
                        reuse_metrics, utilization_avg)
from .workload import (ConvLayerSpec, OutputDims, Tensor4D, derive_output_dims,
                       get_suite, layer_ops, load_layer_file,
                       parse_layer_fields, parse_layer_line,
                       reference_convolution, save_layer_file, synthetic_suite,
                       total_ops, vgg16_suite)

__version__ = "0.1.0"
