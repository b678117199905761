"""End-to-end helpers shared by the CLI, the benchmark and the tests."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from cfpmelody.cfp import CfpParams, CfpResult, compute_cfp
from cfpmelody.decode import CFP_MAX, DecodeConfig, SalienceMap, decode, score_peaks
from cfpmelody.errors import ManifestError
from cfpmelody.net import CnnModel
from cfpmelody.patches import PatchSet, build_training_set, pick_peaks
from cfpmelody.signal_io import (
    AudioClip,
    ManifestEntry,
    MelodyContour,
    load_wav,
    normalize_input,
    parse_annotation,
)

logger = logging.getLogger(__name__)


@dataclass
class Extraction:
    contour: MelodyContour
    cfp: CfpResult
    peaks: List[np.ndarray]
    salience: Optional[SalienceMap]


def load_clip(path, start: Optional[float] = None, duration: Optional[float] = None) -> AudioClip:
    clip = normalize_input(load_wav(path))
    if start is not None or duration is not None:
        clip = clip.slice(start or 0.0, duration)
    return clip


def extract(clip: AudioClip, model: Optional[CnnModel] = None,
            config: DecodeConfig = DecodeConfig(), params: CfpParams = CfpParams(),
            dtype=np.float64, keep_layers: bool = False) -> Extraction:
    """Normalised clip -> CFP -> peaks -> (CNN scores) -> contour."""
    result = compute_cfp(clip, params, keep_layers=keep_layers)
    y = result.y
    peaks = pick_peaks(y)
    salience = None
    if config.mode != CFP_MAX:
        if model is None:
            raise ValueError(f"mode {config.mode} requires a model")
        salience = score_peaks(y, peaks, model, dtype=dtype)
    contour = decode(y, salience, config)
    return Extraction(contour, result, peaks, salience)


def reference_for(entry: ManifestEntry, n_frames: int, hop_seconds: float,
                  frame_offset: float = 0.0, unit: str = "hz") -> MelodyContour:
    if not entry.annotation_path.exists():
        raise ManifestError(f"annotation missing for entry {entry.audio_path}: {entry.annotation_path}")
    return parse_annotation(entry.annotation_path, hop_seconds, n_frames=n_frames, unit=unit,
                            offset=(entry.start or 0.0) + frame_offset)


def clip_for(entry: ManifestEntry) -> AudioClip:
    if not entry.audio_path.exists():
        raise ManifestError(f"audio missing for entry {entry.audio_path}")
    return load_clip(entry.audio_path, entry.start, entry.duration)


def _entry_patches(args) -> PatchSet:
    entry, params, seed, unit = args
    y = compute_cfp(clip_for(entry), params).y
    ref = reference_for(entry, y.n_frames, y.hop_seconds, y.frame_offset, unit)
    return build_training_set(y, pick_peaks(y), ref, rng_seed=seed)


def clip_seed(seed: int, index: int) -> int:
    """Independent per-clip seed for negative subsampling."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1, np.uint32)[0])


def map_jobs(func, items: Sequence, jobs: int = 1) -> list:
    """Order-preserving map, optionally across processes."""
    if jobs <= 1 or len(items) <= 1:
        return [func(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(func, items))


def training_patches(entries: Sequence[ManifestEntry], params: CfpParams = CfpParams(),
                     seed: int = 0, unit: str = "hz", jobs: int = 1) -> PatchSet:
    """Labelled, negative-subsampled patches from every manifest entry."""
    for e in entries:
        if not e.audio_path.exists():
            raise ManifestError(f"audio missing for entry {e.audio_path}")
        if not e.annotation_path.exists():
            raise ManifestError(f"annotation missing for entry {e.audio_path}: {e.annotation_path}")
    args = [(e, params, clip_seed(seed, i), unit) for i, e in enumerate(entries)]
    return PatchSet.concatenate(map_jobs(_entry_patches, args, jobs))
