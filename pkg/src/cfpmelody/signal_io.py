"""Audio decoding, input normalisation and melody annotation I/O.

Audio enters the pipeline as 16 kHz mono. Multi-channel files are mixed down
by the channel mean and resampled with a polyphase windowed-sinc filter.

Annotations are two-column text files (time in seconds, f0 in Hz). Any f0 that
is zero or negative marks an unvoiced frame.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import scipy.io.wavfile
import scipy.signal

from cfpmelody.errors import (
    AnnotationFormatError,
    AudioReadError,
    EmptyAudioError,
    ManifestError,
    NotWavError,
    UnsupportedEncodingError,
)

logger = logging.getLogger(__name__)

TARGET_SR = 16000
# taps per polyphase branch of the anti-aliasing filter
RESAMPLE_TAPS = 64
KAISER_BETA = 8.6


@dataclass
class AudioClip:
    """Sample array plus its rate.

    ``samples`` is 1-D for mono audio or ``(n_samples, n_channels)``.
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    @property
    def n_channels(self) -> int:
        return 1 if self.samples.ndim == 1 else self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.samples.shape[0] / self.sample_rate

    def slice(self, start: float = 0.0, duration: Optional[float] = None) -> "AudioClip":
        """Return the ``[start, start + duration)`` excerpt in seconds."""
        i0 = int(round(start * self.sample_rate))
        i1 = None if duration is None else i0 + int(round(duration * self.sample_rate))
        return AudioClip(self.samples[i0:i1], self.sample_rate)


@dataclass
class MelodyContour:
    """Per-frame f0 in Hz on a uniform grid; 0.0 marks unvoiced frames."""

    f0: np.ndarray
    hop_seconds: float

    def __post_init__(self):
        self.f0 = np.asarray(self.f0, dtype=np.float64).reshape(-1)
        if not self.hop_seconds > 0:
            raise ValueError("hop_seconds must be positive")
        if not np.all(np.isfinite(self.f0)) or np.any(self.f0 < 0):
            raise ValueError("f0 values must be 0 (unvoiced) or finite positive Hz")

    def __len__(self):
        return self.f0.shape[0]

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self)) * self.hop_seconds

    @property
    def voiced(self) -> np.ndarray:
        return self.f0 > 0


@dataclass
class ManifestEntry:
    audio_path: Path
    annotation_path: Path
    start: Optional[float] = None
    duration: Optional[float] = None


# --------------------------------------------------------------------------- #
# audio
# --------------------------------------------------------------------------- #

def load_wav(path) -> AudioClip:
    """Decode a PCM or IEEE-float WAV file into an :class:`AudioClip`.

    Integer samples are scaled so that full scale maps to [-1, 1). Channels
    are preserved; use :func:`normalize_input` to mix down and resample.

    Raises
    ------
    AudioReadError
        The file cannot be opened.
    NotWavError
        The file is not a RIFF/WAVE container.
    UnsupportedEncodingError
        The encoding is not 8/16/24/32-bit integer or 32/64-bit float.
    """
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            header = fh.read(12)
    except OSError as exc:
        raise AudioReadError(f"cannot read {path}: {exc.strerror or exc}") from exc
    if len(header) < 12 or header[:4] not in (b"RIFF", b"RF64") or header[8:12] != b"WAVE":
        raise NotWavError(f"{path} is not a RIFF/WAVE file")

    try:
        rate, data = scipy.io.wavfile.read(path)
    except (ValueError, NotImplementedError) as exc:
        raise UnsupportedEncodingError(f"{path}: {exc}") from exc
    except OSError as exc:
        raise AudioReadError(f"cannot read {path}: {exc}") from exc

    if data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        # scipy left-justifies 24-bit samples into int32
        samples = data.astype(np.float64) / 2.0**31
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise UnsupportedEncodingError(f"{path}: unsupported sample type {data.dtype}")

    if samples.shape[0] == 0:
        raise EmptyAudioError(f"{path} contains no samples")
    if not np.all(np.isfinite(samples)):
        raise UnsupportedEncodingError(f"{path}: non-finite sample values")
    return AudioClip(samples, int(rate))


def write_wav(clip: AudioClip, path, bits: int = 16) -> None:
    """Write ``clip`` as integer PCM (16 or 24 bit) or 32-bit float (``bits=32``)."""
    x = np.clip(clip.samples, -1.0, 1.0)
    if bits == 16:
        data = np.round(x * 32767.0).astype(np.int16)
    elif bits == 32:
        data = x.astype(np.float32)
    else:
        raise ValueError("bits must be 16 or 32")
    scipy.io.wavfile.write(path, clip.sample_rate, data)


def _resample_filter(up: int, down: int) -> np.ndarray:
    n = max(up, down)
    taps = RESAMPLE_TAPS * n + 1
    h = scipy.signal.firwin(taps, 1.0 / n, window=("kaiser", KAISER_BETA))
    # unit DC gain after upsampling by ``up``
    return h * (up / h.sum())


def resample(x: np.ndarray, sr_in: int, sr_out: int) -> np.ndarray:
    """Band-limited polyphase resampling of a 1-D signal."""
    if sr_in == sr_out:
        return x
    ratio = Fraction(sr_out, sr_in)
    up, down = ratio.numerator, ratio.denominator
    return scipy.signal.resample_poly(x, up, down, window=_resample_filter(up, down))


def normalize_input(clip: AudioClip) -> AudioClip:
    """Mix down to mono (channel mean) and resample to 16 kHz.

    A clip that is already 16 kHz mono is returned with identical samples,
    which makes the operation idempotent.
    """
    if clip.samples.shape[0] == 0:
        raise EmptyAudioError("cannot normalise an empty clip")
    x = clip.samples
    if x.ndim == 2:
        x = x[:, 0] if x.shape[1] == 1 else x.mean(axis=1)
    x = resample(x, clip.sample_rate, TARGET_SR)
    return AudioClip(np.array(x, dtype=np.float64), TARGET_SR)


# --------------------------------------------------------------------------- #
# annotations
# --------------------------------------------------------------------------- #

_SPLIT = re.compile(r"[,\s]+")


def midi_to_hz(semitones):
    """Convert MIDI-style semitone numbers to Hz; non-positive values stay 0."""
    s = np.asarray(semitones, dtype=np.float64)
    return np.where(s > 0, 440.0 * 2.0 ** ((s - 69.0) / 12.0), 0.0)


def read_annotation_rows(path):
    """Return ``(times, f0)`` arrays exactly as stored in an annotation file."""
    times: List[float] = []
    values: List[float] = []
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise AnnotationFormatError(f"cannot read {path}: {exc.strerror or exc}") from exc
    for row, line in enumerate(text.splitlines()):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = [f for f in _SPLIT.split(line) if f]
        if len(fields) < 2:
            raise AnnotationFormatError(f"{path}: row {row}: expected 2 columns, got {len(fields)}")
        try:
            t, f = float(fields[0]), float(fields[1])
        except ValueError:
            raise AnnotationFormatError(f"{path}: row {row}: non-numeric value in {line!r}") from None
        if not (np.isfinite(t) and np.isfinite(f)):
            raise AnnotationFormatError(f"{path}: row {row}: non-finite value")
        if times and t <= times[-1]:
            raise AnnotationFormatError(
                f"{path}: row {row}: timestamp {t} does not increase (previous {times[-1]})")
        times.append(t)
        values.append(f)
    return np.array(times), np.array(values)


def contour_from_rows(times, f0, hop_seconds: float, n_frames: Optional[int] = None,
                      offset: float = 0.0) -> MelodyContour:
    """Nearest-neighbour resampling of annotation rows onto ``k * hop_seconds``.

    ``offset`` is subtracted from the row times first (for excerpted clips).
    Grid points farther than half a row spacing outside the annotated range
    are unvoiced.
    """
    times = np.asarray(times, dtype=np.float64) - offset
    f0 = np.where(np.asarray(f0, dtype=np.float64) > 0, f0, 0.0)
    if n_frames is None:
        n_frames = int(np.floor(times[-1] / hop_seconds + 1e-9)) + 1 if times.size else 0
    grid = np.arange(max(n_frames, 0)) * hop_seconds
    out = np.zeros(grid.shape[0])
    if times.size == 0 or grid.size == 0:
        return MelodyContour(out, hop_seconds)

    idx = np.searchsorted(times, grid)
    lo = np.clip(idx - 1, 0, times.size - 1)
    hi = np.clip(idx, 0, times.size - 1)
    # ties go to the earlier row
    nearest = np.where(np.abs(grid - times[lo]) <= np.abs(times[hi] - grid), lo, hi)
    spacing = np.median(np.diff(times)) if times.size > 1 else hop_seconds
    slack = 0.5 * spacing + 1e-9
    inside = (grid >= times[0] - slack) & (grid <= times[-1] + slack)
    out[inside] = f0[nearest[inside]]
    return MelodyContour(out, hop_seconds)


def parse_annotation(path, hop_seconds: float, n_frames: Optional[int] = None,
                     unit: str = "hz", offset: float = 0.0) -> MelodyContour:
    """Read a two-column melody annotation onto the pipeline frame grid.

    Parameters
    ----------
    path : path-like
        Whitespace- or comma-delimited ``time f0`` rows; ``#`` starts a comment.
    hop_seconds : float
        Target frame hop.
    n_frames : int, optional
        Length of the output grid. Defaults to the last annotated time.
    unit : {"hz", "midi"}
        ``"midi"`` treats the second column as semitone numbers.
    offset : float
        Seconds subtracted from every timestamp before alignment.

    Raises
    ------
    AnnotationFormatError
        Malformed row (the row index is reported) or timestamps that do not
        strictly increase.
    """
    times, values = read_annotation_rows(path)
    if unit == "midi":
        values = midi_to_hz(values)
    elif unit != "hz":
        raise ValueError(f"unknown annotation unit {unit!r}")
    return contour_from_rows(times, values, hop_seconds, n_frames=n_frames, offset=offset)


def write_contour(contour: MelodyContour, path) -> None:
    """Write one ``time<TAB>f0`` row per frame with six decimals."""
    lines = [f"{i * contour.hop_seconds:.6f}\t{f:.6f}" for i, f in enumerate(contour.f0)]
    try:
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))
    except OSError as exc:
        raise AudioReadError(f"cannot write {path}: {exc.strerror or exc}") from exc


# --------------------------------------------------------------------------- #
# manifests
# --------------------------------------------------------------------------- #

def read_manifest(path) -> List[ManifestEntry]:
    """Parse ``audio<TAB>annotation[<TAB>start<TAB>duration]`` lines.

    Relative paths are resolved against the manifest's directory.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc.strerror or exc}") from exc
    base = path.parent
    entries: List[ManifestEntry] = []
    for row, line in enumerate(text.splitlines()):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.rstrip("\n").split("\t")
        if len(fields) not in (2, 4):
            raise ManifestError(f"{path}: row {row}: expected 2 or 4 tab-separated fields")
        audio, ann = (base / fields[0].strip(), base / fields[1].strip())
        if audio == ann:
            raise ManifestError(f"{path}: row {row}: audio and annotation paths coincide")
        start = dur = None
        if len(fields) == 4:
            try:
                start, dur = float(fields[2]), float(fields[3])
            except ValueError:
                raise ManifestError(f"{path}: row {row}: bad start/duration") from None
            if dur <= 0 or start < 0:
                raise ManifestError(f"{path}: row {row}: duration must be > 0 and start >= 0")
        entries.append(ManifestEntry(audio, ann, start, dur))
    return entries


def write_manifest(entries: Sequence[ManifestEntry], path) -> None:
    lines = []
    for e in entries:
        fields = [str(e.audio_path), str(e.annotation_path)]
        if e.duration is not None:
            fields += [repr(float(e.start or 0.0)), repr(float(e.duration))]
        lines.append("\t".join(fields))
    Path(path).write_text("\n".join(lines) + "\n")
