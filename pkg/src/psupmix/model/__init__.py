"""Conditional sequence network with hand-derived reverse-mode gradients."""

from .network import ModelConfig, SeqModel, embed_input, forward, sinusoidal_encoding
from .training import (
    Batch,
    PatchSampler,
    TrainConfig,
    ce_weight,
    fit,
    learning_rate,
    loss_and_grad,
    make_training_masks,
    spectral_features,
    train_step,
)
from .checkpoint import load_model, save_model

__all__ = [
    "Batch",
    "ModelConfig",
    "PatchSampler",
    "SeqModel",
    "TrainConfig",
    "ce_weight",
    "embed_input",
    "fit",
    "forward",
    "learning_rate",
    "load_model",
    "loss_and_grad",
    "make_training_masks",
    "save_model",
    "sinusoidal_encoding",
    "spectral_features",
    "train_step",
]
