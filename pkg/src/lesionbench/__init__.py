"""lesionbench: a desk-scale melanoma-classification benchmark harness.

Reverse-mode autodiff tensor core, a CNN + static-feature fusion model,
bit-exact weight archives for transfer learning, a seeded data pipeline
with a synthetic lesion generator, plateau-scheduled Adam training,
run-averaged metrics with significance testing, integrated-gradients
attribution, and random hyperparameter search.
"""

from .archive import (ArchiveEntry, WeightArchive, load_model, load_with_new_head,
                      restore_into, save)
from .attribution import (AttributionMap, dump_phi, integrated_gradients, load_phi,
                          read_pgm, render_map, write_pgm)
from .autodiff import (Tape, Tensor, add, backward, bce_with_logits, concat, conv2d,
                       dropout, flatten, linear, max_pool2d, mean_of, mul, relu,
                       reshape, scale, sigmoid, tsum)
from .data import (SITES, AugmentationPolicy, DatasetSplit, Sample, augment,
                   decode_static, hflip, identity_policy, ingest, load_image,
                   read_dataset, read_split, select, split, synth_generate, vflip,
                   write_dataset, write_split)
from .errors import (ConfigError, DataError, DimensionError, FormatError,
                     LesionbenchError, MetricError, NumericsError, SpecError,
                     TrainingError)
from .hyperopt import (SearchEntry, SearchSpace, TrialResult, default_space,
                       read_trial_log, sample, search, standard_config_from)
from .init import fan_in_of, kaiming_init
from .kernels import BACKEND, backend_name
from .metrics import (AggregateReport, MetricsReport, SignificanceResult, accuracy_f1,
                      aggregate, auprc, auroc, evaluate_scores, one_tailed_t_test,
                      pr_points, read_aggregate, read_curve, read_report, roc_points,
                      write_aggregate, write_curve, write_report)
from .models import (IMAGE_FC_WIDTH, STATIC_FC_WIDTH, LayerDef, Model, ModelSpec,
                     StandardCnnConfig, build, clone_config, forward, load_spec,
                     make_standard_spec, predict_proba, save_spec, walk_shapes)
from .training import (AdamState, EpochRecord, MultiRunResult, PlateauSchedule,
                       RunResult, TrainConfig, adam_step, fit, multi_run,
                       read_epoch_log, write_epoch_log)

__version__ = "0.1.0"
