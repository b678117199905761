"""Synthetic test material: harmonic tones, vibrato voices over flat
accompaniment, and toy 25x25 patches with vibrato or flat ridges."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from cfpmelody.patches import HALF, PATCH_SIZE, PatchSet
from cfpmelody.signal_io import AudioClip, MelodyContour

SR = 16000


def harmonic_tone(f0, duration: float, sr: int = SR, amps: Sequence[float] = (1.0,),
                  phases: Optional[Sequence[float]] = None, tilt=None) -> np.ndarray:
    """Sum of harmonics ``h * f0`` with amplitudes ``amps``.

    ``f0`` is a constant or a function of time (seconds) giving the
    instantaneous fundamental; phase is accumulated so glides stay smooth.
    ``tilt`` optionally maps a frequency in Hz to an extra gain factor.
    Harmonics at or above Nyquist are dropped.
    """
    n = int(round(duration * sr))
    t = np.arange(n) / sr
    inst = np.full(n, float(f0)) if np.isscalar(f0) else np.asarray(f0(t), dtype=float)
    phase = 2 * np.pi * np.cumsum(inst) / sr
    if phases is None:
        phases = np.zeros(len(amps))
    x = np.zeros(n)
    for h, (a, ph) in enumerate(zip(amps, phases), start=1):
        if h * inst.max() >= sr / 2:
            break
        gain = a if tilt is None else a * tilt(h * inst)
        x += gain * np.sin(h * phase + ph)
    return x


def glide_vibrato(start_hz: float, end_hz: float, duration: float, rate_hz: float = 5.0,
                  depth_cents: float = 30.0, vib_phase: float = 0.0):
    """Exponential glide from ``start_hz`` to ``end_hz`` with sinusoidal vibrato."""
    def f0(t):
        t = np.asarray(t, dtype=float)
        base = start_hz * (end_hz / start_hz) ** (t / duration)
        return base * 2.0 ** (depth_cents / 1200.0 * np.sin(2 * np.pi * rate_hz * t + vib_phase))
    return f0


def activity_envelope(n: int, sr: int, segments: Sequence[Tuple[float, float]],
                      ramp: float = 0.01) -> np.ndarray:
    """0/1 gate over ``segments`` (seconds) with raised-cosine ramps."""
    env = np.zeros(n)
    t = np.arange(n) / sr
    for a, b in segments:
        inside = (t >= a) & (t < b)
        g = np.ones(inside.sum())
        tt = t[inside]
        up = tt < a + ramp
        g[up] = 0.5 - 0.5 * np.cos(np.pi * (tt[up] - a) / ramp)
        down = tt > b - ramp
        g[down] = 0.5 - 0.5 * np.cos(np.pi * (b - tt[down]) / ramp)
        env[inside] = np.maximum(env[inside], g)
    return env


@dataclass
class SyntheticClip:
    clip: AudioClip
    reference: MelodyContour


def voice_over_accompaniment(duration: float = 10.0, sr: int = SR, hop_seconds: float = 0.02,
                             voice_start_hz: float = 200.0, voice_end_hz: float = 300.0,
                             vibrato_rate: float = 5.0, vibrato_cents: float = 30.0,
                             vib_phase: float = 0.0,
                             voice_amps: Sequence[float] = (1.0, 0.8, 0.6, 0.4),
                             segments: Sequence[Tuple[float, float]] = ((1.0, 4.0), (6.0, 9.0)),
                             accomp_notes: Sequence[Tuple[float, float, float]] = ((0.0, 10.0, 150.0),),
                             accomp_amps: Sequence[float] = (0.5, 0.4, 0.3, 0.2),
                             noise: float = 0.0, seed: int = 0) -> SyntheticClip:
    """A vibrato 'voice' over flat-pitch harmonic 'accompaniment' notes.

    ``accomp_notes`` holds ``(start, end, hz)`` triples. The reference contour
    samples the voice's instantaneous f0 at ``k * hop_seconds`` and is
    unvoiced outside ``segments``.
    """
    rng = np.random.default_rng(seed)
    n = int(round(duration * sr))
    f0 = glide_vibrato(voice_start_hz, voice_end_hz, duration, vibrato_rate, vibrato_cents, vib_phase)
    voice = harmonic_tone(f0, duration, sr, voice_amps) * activity_envelope(n, sr, segments)
    accomp = np.zeros(n)
    for a, b, hz in accomp_notes:
        note = harmonic_tone(hz, duration, sr, accomp_amps, phases=rng.uniform(0, 2 * np.pi, len(accomp_amps)))
        accomp += note * activity_envelope(n, sr, [(a, b)], ramp=0.02)
    x = voice + accomp
    if noise > 0:
        x = x + noise * rng.standard_normal(n)
    x = 0.9 * x / max(np.max(np.abs(x)), 1e-12)

    n_frames = int(np.floor(duration / hop_seconds)) + 1
    times = np.arange(n_frames) * hop_seconds
    active = np.zeros(n_frames, bool)
    for a, b in segments:
        active |= (times >= a) & (times < b)
    ref = np.where(active, f0(times), 0.0)
    return SyntheticClip(AudioClip(x, sr), MelodyContour(ref, hop_seconds))


def random_training_clip(seed: int, duration: float = 10.0) -> SyntheticClip:
    """Randomised variant of :func:`voice_over_accompaniment` for training."""
    rng = np.random.default_rng([seed, 7])
    start = rng.uniform(150, 320)
    end = start * 2.0 ** rng.uniform(-0.7, 0.7)
    end = float(np.clip(end, 110, 500))
    n_seg = rng.integers(1, 4)
    edges = np.sort(rng.uniform(0.3, duration - 0.3, 2 * n_seg))
    segments = [(edges[2 * i], edges[2 * i + 1]) for i in range(n_seg) if edges[2 * i + 1] - edges[2 * i] > 0.5]
    n_notes = rng.integers(1, 4)
    bounds = np.linspace(0, duration, n_notes + 1)
    notes = [(bounds[i], bounds[i + 1], rng.uniform(100, 400)) for i in range(n_notes)]
    nh = rng.integers(3, 7)
    return voice_over_accompaniment(
        duration=duration,
        voice_start_hz=start, voice_end_hz=end,
        vibrato_rate=rng.uniform(4.0, 7.0), vibrato_cents=rng.uniform(20, 60),
        vib_phase=rng.uniform(0, 2 * np.pi),
        voice_amps=tuple(rng.uniform(0.3, 1.0, rng.integers(3, 7))),
        segments=segments or [(1.0, duration - 1.0)],
        accomp_notes=notes,
        accomp_amps=tuple(rng.uniform(0.15, 0.6, nh)),
        seed=seed,
    )


# --------------------------------------------------------------------------- #
# toy patches
# --------------------------------------------------------------------------- #

def _render_ridge(rows: np.ndarray, width: float = 0.8, level: float = 1.0) -> np.ndarray:
    grid = np.arange(PATCH_SIZE)[:, None]
    return level * np.exp(-0.5 * ((grid - rows[None, :]) / width) ** 2)


def ridge_patch(kind: str, rng: np.random.Generator) -> np.ndarray:
    """One synthetic patch. ``kind`` is 'vibrato', 'flat' or 'offcenter'."""
    t = np.arange(PATCH_SIZE) - HALF
    if kind == "flat":
        rows = np.full(PATCH_SIZE, HALF + rng.uniform(-0.3, 0.3))
    else:
        period = rng.uniform(8, 14)
        depth = rng.uniform(1.2, 3.0)
        phase = rng.uniform(0, 2 * np.pi)
        rows = depth * np.sin(2 * np.pi * t / period + phase)
        # pin the ridge to the centre pixel
        rows = rows - rows[HALF] + HALF
        if kind == "offcenter":
            rows = rows + rng.choice([-1, 1]) * rng.uniform(4, 9)
    patch = _render_ridge(rows, level=rng.uniform(0.5, 2.0))
    # a weaker flat distractor somewhere else
    if rng.random() < 0.5:
        patch += _render_ridge(np.full(PATCH_SIZE, rng.uniform(0, PATCH_SIZE - 1)), level=rng.uniform(0.1, 0.6))
    patch += 0.05 * rng.random(patch.shape)
    return patch


def ridge_patch_set(n: int, seed: int) -> PatchSet:
    """Balanced toy set: half vibrato-through-centre (label 1), half flat or
    off-centre (label 0)."""
    rng = np.random.default_rng([seed, 11])
    labels = np.zeros(n, np.int64)
    labels[: n // 2] = 1
    labels = rng.permutation(labels)
    values = np.empty((n, PATCH_SIZE, PATCH_SIZE))
    for i, lab in enumerate(labels):
        kind = "vibrato" if lab else ("flat" if rng.random() < 0.5 else "offcenter")
        values[i] = ridge_patch(kind, rng)
    return PatchSet(values, np.full(n, HALF), np.full(n, HALF), labels)
