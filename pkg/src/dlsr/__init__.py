"""Differentiable architecture search for extremely lightweight image
super-resolution: relaxed cell/network search spaces, complexity-regularized
bi-level optimization, genotype extraction, retraining, and evaluation."""

from .search_space import (ArchParams, OPERATIONS, OP_NAMES, OperationSpec,
                           Supernet, SupernetConfig, get_operation_spec,
                           instantiate_operation)
from .complexity import (ComplexityReport, genotype_complexity, op_multiadds,
                         op_params, search_space_cardinality,
                         supernet_complexity)
from .losses import (LoGKernel, LossWeights, hfen_loss, l1_loss,
                     param_regularizer, total_loss)
from .genotype import (DerivedNetwork, Genotype, GenotypeError,
                       build_derived_network, extract_genotype, load_genotype,
                       parse, save_genotype, serialize)
from .data_pipeline import (SRDataset, SRSample, SRSource, augment,
                            bicubic_downsample, bicubic_upsample, make_batches,
                            sample_patch, synthetic_images)
from .search_engine import (SearchConfig, SearchState, arch_step, run_search,
                            snapshot_entropy, split_dataset, theta_step)
from .trainer import (TrainConfig, TrainState, checkpoint_load,
                      checkpoint_save, train)
from .evaluation import (EvalReport, emit_scatter_data, evaluate_model, hfen,
                         psnr, rgb_to_y, ssim)

__version__ = "0.1.0"
