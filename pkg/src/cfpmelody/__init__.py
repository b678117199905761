"""Vocal melody extraction with a CFP representation and a patch-level CNN."""

from cfpmelody.signal_io import (
    AudioClip,
    MelodyContour,
    load_wav,
    normalize_input,
    parse_annotation,
    write_contour,
)
from cfpmelody.cfp import CfpParams, TimeFreqRep, compute_cfp
from cfpmelody.decode import DecodeConfig, bin_to_hz, decode, score_peaks
from cfpmelody.evaluation import EvalConfig, EvalReport, aggregate, evaluate
from cfpmelody.net import CnnModel, TrainConfig, load_model, save_model, train
from cfpmelody.patches import build_training_set, extract_patch, pick_peaks

__version__ = "0.1.0"

__all__ = [
    "AudioClip",
    "CfpParams",
    "CnnModel",
    "DecodeConfig",
    "EvalConfig",
    "EvalReport",
    "MelodyContour",
    "TimeFreqRep",
    "TrainConfig",
    "aggregate",
    "bin_to_hz",
    "build_training_set",
    "compute_cfp",
    "decode",
    "evaluate",
    "extract_patch",
    "load_model",
    "load_wav",
    "normalize_input",
    "parse_annotation",
    "pick_peaks",
    "save_model",
    "score_peaks",
    "train",
    "write_contour",
]
