"""Continual learning over frozen embeddings with task-specific adapters,
representation statistics, and a numerical verifier for the underlying
loss-decomposition bounds."""

from .backbone import BackboneConfig, BackboneSurrogate, init_backbone
from .data_io import (EmbeddingDataset, RunConfig, SynthSpec, Task,
                      TaskStream, load_embeddings, load_state, load_stream,
                      save_state, save_stream, synth_episode, synth_stream,
                      write_embeddings)
from .engine import (FewShotConfig, ModelState, Prediction, TrainConfig,
                     few_shot_eval, predict, predict_dil, predict_til,
                     train_sequence, train_task)
from .errors import (ConfigError, DataError, DimensionError, FormatError,
                     HiclError, MetricUndefinedError, NotFittedError,
                     NumericError, ScenarioError, StateError)
from .estimator import ContinualPeftClassifier
from .evaluation import AccuracyMatrix, average_accuracy, caa, evaluate_scenario, faa, ffm
from .objectives import CRConfig, cr_loss, tap_loss, tii_loss, wtp_loss
from .peft import PeftConfig, PeftParams, init_peft
from .stats import (ClassStatistics, StatStore, class_mean,
                    fit_class_statistics, sample_pseudo)
from .theory import (BoundReport, ProbTable, check_cil_identity,
                     check_necessity, check_theorem_cil, check_theorem_dil,
                     check_til_reduction, component_entropies,
                     empirical_bounds_from_model, random_prob_table)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
