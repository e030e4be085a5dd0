"""Mono-to-stereo upmixing through parametric-stereo parameter generation."""

from .audio_io import AudioBuffer, PatchSpec, downmix, load_wav, make_patch, save_wav
from .decorr import IcProfile, decorr_upmix
from .generators import (
    ArSampleConfig,
    MtmSampleConfig,
    SampleConfig,
    ar_sample,
    cfg_logits,
    mtm_sample,
    mtm_schedule_count,
    reg_predict,
    upmix,
)
from .metrics import MetricConfig, delta, e_min, frechet
from .model import ModelConfig, SeqModel, TrainConfig
from .ps_codec import (
    DecorrConfig,
    PsParams,
    PsTokens,
    QuantGrids,
    decode,
    decorrelate,
    dequantize,
    encode,
    mixing_matrices,
    quantize,
)
from .retrieval import NnConfig, NnIndex, build_index, nn_generate
from .spectral import BandMap, StftConfig, cross_spectrogram, istft, make_band_map, stft

__version__ = "0.1.0"
