"""Combined frequency and periodicity (CFP) representation.

The cascade works on full ``N``-point magnitude spectra, frame by frame::

    Z0 = relu(Wf |X|) ** g0          power-scaled spectrogram
    Z1 = relu(Wt ifft(Z0)) ** g1     generalized cepstrum (quefrency axis)
    Z2 = relu(Wf fft(Z1)) ** g2      generalized cepstrum of spectrum

``Wf`` and ``Wt`` are binary high-pass masks. ``Z1`` and ``Z2`` are then
projected onto a shared log-frequency pitch axis with triangular filterbanks
and multiplied: peaks at harmonics (strong in ``Z2`` only) and at
sub-harmonics (strong in ``Z1`` only) cancel, the fundamental survives.
"""

from __future__ import annotations

import functools
import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
import scipy.signal
import scipy.sparse

from cfpmelody.errors import ClipTooShortError
from cfpmelody.signal_io import AudioClip

logger = logging.getLogger(__name__)

FREQUENCY = "frequency"
QUEFRENCY = "quefrency"
PITCH = "pitch"


@dataclass(frozen=True)
class CfpParams:
    window_size: int = 2048
    hop: int = 320
    gamma: Tuple[float, float, float] = (0.24, 0.6, 1.0)
    freq_cutoff_hz: float = 80.0
    quef_cutoff_s: float = 1.0 / 800.0
    fb_low_hz: float = 80.0
    fb_bins: int = 159
    fb_bins_per_octave: int = 48
    # pad half a window on both sides so frame t is centred on t * hop
    center: bool = True
    # widen a triangle to the source-bin spacing where that spacing is
    # coarser than the pitch grid; otherwise such filters have empty support
    broaden_filters: bool = True

    def __post_init__(self):
        object.__setattr__(self, "gamma", tuple(float(g) for g in self.gamma))
        self.validate()

    def validate(self, sample_rate: Optional[int] = None) -> None:
        if len(self.gamma) != 3 or not all(0 < g <= 1 for g in self.gamma):
            raise ValueError("every gamma must lie in (0, 1]")
        if self.window_size < 2 or self.window_size % 2:
            raise ValueError("window_size must be an even integer >= 2")
        if not 0 < self.hop <= self.window_size:
            raise ValueError("hop must satisfy 0 < hop <= window_size")
        if self.fb_bins < 1 or self.fb_bins_per_octave < 1 or self.fb_low_hz <= 0:
            raise ValueError("filterbank sizes and fb_low_hz must be positive")
        if self.freq_cutoff_hz < 0 or self.quef_cutoff_s < 0:
            raise ValueError("cutoffs must be non-negative")
        if sample_rate is not None and self.fb_high_hz > sample_rate / 2:
            raise ValueError(
                f"top filter at {self.fb_high_hz:.2f} Hz exceeds Nyquist {sample_rate / 2} Hz")

    @property
    def fb_high_hz(self) -> float:
        return self.fb_low_hz * 2.0 ** ((self.fb_bins - 1) / self.fb_bins_per_octave)

    def center_freqs(self) -> np.ndarray:
        return pitch_centers(self.fb_low_hz, self.fb_bins, self.fb_bins_per_octave)


@dataclass
class TimeFreqRep:
    """Non-negative ``(bins, frames)`` matrix with a labelled bin axis."""

    values: np.ndarray
    axis_kind: str
    axis_values: np.ndarray
    hop_seconds: float
    frame_offset: float = 0.0
    name: str = ""

    @property
    def n_bins(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.frame_offset + np.arange(self.n_frames) * self.hop_seconds


@dataclass
class FilterBank:
    """Sparse ``(n_filters, n_source_bins)`` projection onto the pitch axis."""

    weights: scipy.sparse.csr_matrix
    source_axis: str
    center_freqs_hz: np.ndarray
    empty_rows: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def apply(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(self.weights @ values)


@dataclass
class CfpResult:
    y: TimeFreqRep
    z1_pitch: TimeFreqRep
    z2_pitch: TimeFreqRep
    layers: Optional[Tuple[TimeFreqRep, TimeFreqRep, TimeFreqRep]] = None


def pitch_centers(low_hz: float = 80.0, n_bins: int = 159, bins_per_octave: int = 48) -> np.ndarray:
    """Centre frequencies ``low_hz * 2 ** (p / bins_per_octave)`` for p = 0..n_bins-1."""
    return low_hz * 2.0 ** (np.arange(n_bins) / bins_per_octave)


# --------------------------------------------------------------------------- #
# transforms
# --------------------------------------------------------------------------- #

def dft(x: np.ndarray, axis: int = 0) -> np.ndarray:
    """Forward DFT, ``sum_n x[n] exp(-2j pi k n / N)`` (no scaling)."""
    return np.fft.fft(x, axis=axis)


def idft(x: np.ndarray, axis: int = 0) -> np.ndarray:
    """Inverse of :func:`dft` (scaled by ``1/N``)."""
    return np.fft.ifft(x, axis=axis)


def root_power(z: np.ndarray, gamma: float) -> np.ndarray:
    """Rectified root-power activation ``max(z, 0) ** gamma``."""
    z = np.maximum(z, 0.0)
    return z if gamma == 1.0 else np.power(z, gamma)


def frequency_mask(n: int, sample_rate: int, cutoff_hz: float) -> np.ndarray:
    """High-pass mask over a full ``n``-bin spectrum (mirrored bins included)."""
    k = np.arange(n)
    freqs = np.minimum(k, n - k) * sample_rate / n
    return (freqs >= cutoff_hz).astype(np.float64)


def quefrency_mask(n: int, sample_rate: int, cutoff_s: float) -> np.ndarray:
    q = np.arange(n)
    quef = np.minimum(q, n - q) / sample_rate
    # small slack so that a cutoff equal to a bin's quefrency keeps that bin
    return (quef >= cutoff_s - 1e-12).astype(np.float64)


# --------------------------------------------------------------------------- #
# pipeline stages
# --------------------------------------------------------------------------- #

def frame_signal(x: np.ndarray, window_size: int, hop: int) -> np.ndarray:
    """``(n_frames, window_size)`` frames; the last partial frame is zero-padded."""
    if x.shape[0] < window_size:
        raise ClipTooShortError(
            f"signal has {x.shape[0]} samples, fewer than one {window_size}-sample window")
    n_frames = 1 + int(np.ceil((x.shape[0] - window_size) / hop))
    needed = (n_frames - 1) * hop + window_size
    if needed > x.shape[0]:
        x = np.concatenate([x, np.zeros(needed - x.shape[0])])
    frames = np.lib.stride_tricks.sliding_window_view(x, window_size)[::hop]
    return frames[:n_frames]


def stft_magnitude(clip: AudioClip, params: CfpParams = CfpParams()) -> TimeFreqRep:
    """Full ``N``-point Hann-windowed magnitude spectrogram, shape ``(N, frames)``.

    All ``N`` bins are kept so the spectrum stays real and symmetric, which
    the cepstral stage relies on.
    """
    x = clip.samples
    if x.ndim != 1:
        raise ValueError("stft_magnitude expects a mono clip; call normalize_input first")
    n, fs = params.window_size, clip.sample_rate
    offset = n / (2.0 * fs)
    if params.center:
        if x.shape[0] == 0:
            raise ClipTooShortError("empty clip")
        x = np.concatenate([np.zeros(n // 2), x, np.zeros(n // 2)])
        offset = 0.0
    frames = frame_signal(x, n, params.hop)
    window = scipy.signal.get_window("hann", n)
    spec = np.abs(dft(frames * window, axis=1)).T
    return TimeFreqRep(
        values=np.ascontiguousarray(spec),
        axis_kind=FREQUENCY,
        axis_values=np.arange(n) * fs / n,
        hop_seconds=params.hop / fs,
        frame_offset=offset,
        name="X",
    )


def cfp_layers(spec: TimeFreqRep, params: CfpParams = CfpParams(),
               sample_rate: int = 16000) -> Tuple[TimeFreqRep, TimeFreqRep, TimeFreqRep]:
    """Spectrogram ``Z0``, generalized cepstrum ``Z1`` and GCoS ``Z2``."""
    n = spec.n_bins
    g0, g1, g2 = params.gamma
    wf = frequency_mask(n, sample_rate, params.freq_cutoff_hz)[:, None]
    wt = quefrency_mask(n, sample_rate, params.quef_cutoff_s)[:, None]

    z0 = root_power(wf * spec.values, g0)
    z1 = root_power(wt * idft(z0, axis=0).real, g1)
    z2 = root_power(wf * dft(z1, axis=0).real, g2)

    def rep(values, kind, axis, name):
        return TimeFreqRep(values, kind, axis, spec.hop_seconds, spec.frame_offset, name)

    return (
        rep(z0, FREQUENCY, np.arange(n) * sample_rate / n, "Z0"),
        rep(z1, QUEFRENCY, np.arange(n) / sample_rate, "Z1"),
        rep(z2, FREQUENCY, np.arange(n) * sample_rate / n, "Z2"),
    )


def _triangle_rows(source_pos: np.ndarray, n_filters: int, broaden: bool):
    """Triangular weights over source bins located at ``source_pos`` pitch units.

    ``source_pos`` may be unsorted and may contain ``nan`` for bins that have
    no pitch (DC, zero quefrency).
    """
    valid = np.flatnonzero(np.isfinite(source_pos))
    order = valid[np.argsort(source_pos[valid])]
    pos_sorted = source_pos[order]

    rows, cols, vals = [], [], []
    empty = []
    for p in range(n_filters):
        half = 1.0
        if broaden:
            j = np.searchsorted(pos_sorted, p)
            if 0 < j < pos_sorted.size:
                half = max(half, pos_sorted[j] - pos_sorted[j - 1])
        lo = np.searchsorted(pos_sorted, p - half, side="right")
        hi = np.searchsorted(pos_sorted, p + half, side="left")
        w = 1.0 - np.abs(pos_sorted[lo:hi] - p) / half
        keep = w > 0
        w = w[keep]
        if w.size == 0:
            empty.append(p)
            continue
        rows.append(np.full(w.size, p))
        cols.append(order[lo:hi][keep])
        vals.append(w / w.sum())
    return rows, cols, vals, np.array(empty, dtype=int)


@functools.lru_cache(maxsize=16)
def build_filterbank(source_axis: str, params: CfpParams = CfpParams(),
                     n: int = 2048, sample_rate: int = 16000) -> FilterBank:
    """Triangular log-frequency filterbank reading the physical half-axis.

    Filter ``p`` peaks at ``f_p = fb_low_hz * 2 ** (p / bins_per_octave)`` and
    falls to zero at the neighbouring centres (a quarter semitone away on the
    default grid). For a quefrency source, bin ``q`` sits at pitch
    ``sample_rate / q``. Triangles are evaluated in log-frequency coordinates
    and each row is L1-normalised.

    A filter whose support contains no source bin becomes a zero row and a
    warning is issued. With ``params.broaden_filters`` the triangle is instead
    widened to the spacing of the two source bins that bracket its centre,
    which amounts to linear interpolation in log frequency.
    """
    half_n = n // 2 + 1
    idx = np.arange(half_n, dtype=np.float64)
    with np.errstate(divide="ignore"):
        if source_axis == FREQUENCY:
            hz = idx * sample_rate / n
        elif source_axis == QUEFRENCY:
            hz = sample_rate / idx
        else:
            raise ValueError(f"unknown source axis {source_axis!r}")
        pos = params.fb_bins_per_octave * np.log2(hz / params.fb_low_hz)
    pos[~np.isfinite(pos)] = np.nan

    rows, cols, vals, empty = _triangle_rows(pos, params.fb_bins, params.broaden_filters)
    weights = scipy.sparse.csr_matrix(
        (np.concatenate(vals) if vals else np.zeros(0),
         (np.concatenate(rows) if rows else np.zeros(0, int),
          np.concatenate(cols) if cols else np.zeros(0, int))),
        shape=(params.fb_bins, half_n),
    )
    if empty.size:
        warnings.warn(
            f"{empty.size} {source_axis} filters have empty support (first: bin {empty[0]}); "
            "their outputs are zero", RuntimeWarning, stacklevel=2)
    return FilterBank(weights, source_axis, params.center_freqs(), empty)


def compute_cfp(clip: AudioClip, params: CfpParams = CfpParams(),
                keep_layers: bool = False) -> CfpResult:
    """Run the whole cascade on a normalised clip and fuse on the pitch axis.

    Returns the fused representation ``y = z1_pitch * z2_pitch`` together
    with both projections; ``keep_layers`` also retains ``Z0, Z1, Z2``.
    """
    params.validate(clip.sample_rate)
    spec = stft_magnitude(clip, params)
    z0, z1, z2 = cfp_layers(spec, params, clip.sample_rate)

    n, fs = params.window_size, clip.sample_rate
    half = n // 2 + 1
    fb_q = build_filterbank(QUEFRENCY, params, n, fs)
    fb_f = build_filterbank(FREQUENCY, params, n, fs)
    z1p = fb_q.apply(z1.values[:half])
    z2p = fb_f.apply(z2.values[:half])

    centers = params.center_freqs()

    def rep(values, name):
        return TimeFreqRep(values, PITCH, centers, spec.hop_seconds, spec.frame_offset, name)

    return CfpResult(
        y=rep(z1p * z2p, "Y"),
        z1_pitch=rep(z1p, "Z1_pitch"),
        z2_pitch=rep(z2p, "Z2_pitch"),
        layers=(z0, z1, z2) if keep_layers else None,
    )
