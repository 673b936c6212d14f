"""Locally specialized CNN for face anti-spoofing, in numpy.

Nine PatchNets are trained on the cells of a 3x3 face grid, composed
block-diagonally into one large network and fine-tuned on whole faces.
"""
from .arch import build_lscnn, build_nuaa_variant, build_patchnet
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .compose import PatchGrid, compose, verify_block_independence
from .data import AugmentConfig, NormalizationStats, Sample, augment, load_folder, normalize
from .errors import (CompositionError, ConfigError, DataError, FormatError, LscnnError,
                     NumericError, UndefinedMetricError)
from .evaluation import EvalReport, ScoredItem, evaluate, hter, roc_eer, video_vote
from .kernels import BACKEND
from .synth import synth_generate, write_dataset
from .training import TrainConfig, finetune, train_baseline, train_patchnets

__version__ = "0.1.0"
