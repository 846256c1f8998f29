"""Masked facial-video autoencoding with a temporal-pyramid, spatial-bottleneck
transformer encoder: models, training loops, metrics, synthetic data, and an
analytic parameter/FLOP counter."""

from .config import ArchConfig, TrainConfig, finetune_defaults, preset, \
    pretrain_defaults, validate
from .complexity import CostReport, count, measured_flops, reduction, \
    token_ledger, variant_grid
from .data import ClipDataset, Manifest, SynthSpec, load_manifest, \
    synth_generate
from .decoder import ReconstructionDecoder, reconstruction_loss
from .encoder import TPSBTEncoder
from .estimators import MaskedVideoPretrainer, VideoClassifier, VideoRegressor
from .heads import PredictionHead, ce_loss, mse_loss, two_clip_inference
from .masking import TubeMask, make_tube_mask
from .metrics import acc_personality, ccc, pcc, uar, war, weighted_f1
from .tokenizer import patchify, positions, unpatchify
from .trainer import FinetunePredictor, MaskedAutoencoder, evaluate, \
    run_finetune, run_pretrain

__version__ = "0.1.0"

__all__ = [
    "ArchConfig", "TrainConfig", "preset", "pretrain_defaults",
    "finetune_defaults", "validate",
    "CostReport", "count", "measured_flops", "reduction", "token_ledger",
    "variant_grid",
    "ClipDataset", "Manifest", "SynthSpec", "load_manifest", "synth_generate",
    "ReconstructionDecoder", "reconstruction_loss", "TPSBTEncoder",
    "MaskedVideoPretrainer", "VideoClassifier", "VideoRegressor",
    "PredictionHead", "ce_loss", "mse_loss", "two_clip_inference",
    "TubeMask", "make_tube_mask",
    "acc_personality", "ccc", "pcc", "uar", "war", "weighted_f1",
    "patchify", "positions", "unpatchify",
    "FinetunePredictor", "MaskedAutoencoder", "evaluate", "run_finetune",
    "run_pretrain",
    "__version__",
]
