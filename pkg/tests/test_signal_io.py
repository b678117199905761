import struct

import numpy as np
import pytest
import scipy.io.wavfile
from hypothesis import given, settings, strategies as st

from cfpmelody.errors import AnnotationFormatError, NotWavError, UnsupportedEncodingError, AudioReadError
from cfpmelody.signal_io import (
    AudioClip,
    MelodyContour,
    load_wav,
    midi_to_hz,
    normalize_input,
    parse_annotation,
    read_manifest,
    write_contour,
)


def brute_force_dft_peak(x, sr):
    """Index and frequency of the largest |DFT| bin, computed by direct summation."""
    n = x.shape[0]
    k = np.arange(n // 2 + 1)
    t = np.arange(n)
    mags = np.array([abs(np.sum(x * np.exp(-2j * np.pi * kk * t / n))) for kk in k])
    best = int(np.argmax(mags))
    return best, best * sr / n, mags[best]


def _write_24bit(path, samples_int, sr):
    raw = b"".join(struct.pack("<i", int(v))[:3] for v in samples_int)
    fmt = struct.pack("<HHIIHH", 1, 1, sr, sr * 3, 3, 24)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(raw)) + raw
    path.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)


class TestLoadWav:
    def test_full_scale_int16(self, tmp_path):
        p = tmp_path / "a.wav"
        scipy.io.wavfile.write(p, 16000, np.full(100, 32767, np.int16))
        clip = load_wav(p)
        np.testing.assert_allclose(clip.samples, 32767 / 32768)
        assert clip.samples[0] == pytest.approx(0.99997, abs=1e-5)

    def test_uint8_and_float(self, tmp_path):
        scipy.io.wavfile.write(tmp_path / "u8.wav", 8000, np.array([0, 128, 255], np.uint8))
        np.testing.assert_allclose(load_wav(tmp_path / "u8.wav").samples, [-1.0, 0.0, 127 / 128])
        scipy.io.wavfile.write(tmp_path / "f.wav", 8000, np.array([0.25, -0.5], np.float32))
        np.testing.assert_allclose(load_wav(tmp_path / "f.wav").samples, [0.25, -0.5])

    def test_24bit(self, tmp_path):
        p = tmp_path / "24.wav"
        _write_24bit(p, [2**23 - 1, -(2**23), 0, 2**22], 22050)
        clip = load_wav(p)
        assert clip.sample_rate == 22050
        np.testing.assert_allclose(clip.samples, [(2**23 - 1) / 2**23, -1.0, 0.0, 0.5])

    def test_stereo_preserved_then_cancelled(self, tmp_path):
        a = (np.sin(np.arange(4000) * 0.1) * 10000).astype(np.int16)
        p = tmp_path / "st.wav"
        scipy.io.wavfile.write(p, 16000, np.stack([a, -a], axis=1))
        clip = load_wav(p)
        assert clip.n_channels == 2
        np.testing.assert_array_equal(normalize_input(clip).samples, 0.0)

    def test_errors_are_distinct(self, tmp_path):
        with pytest.raises(AudioReadError) as missing:
            load_wav(tmp_path / "missing.wav")
        assert type(missing.value) is AudioReadError

        (tmp_path / "x.mp3").write_bytes(b"ID3\x03\x00" + b"\x00" * 64)
        with pytest.raises(NotWavError):
            load_wav(tmp_path / "x.mp3")

        # RIFF/WAVE header with an a-law (format 6) fmt chunk
        fmt = struct.pack("<HHIIHH", 6, 1, 8000, 8000, 1, 8)
        body = b"WAVE" + b"fmt " + struct.pack("<I", 16) + fmt + b"data" + struct.pack("<I", 4) + b"\x00" * 4
        (tmp_path / "alaw.wav").write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
        with pytest.raises(UnsupportedEncodingError):
            load_wav(tmp_path / "alaw.wav")


class TestNormalize:
    def test_identity_at_16k_mono(self):
        x = np.random.default_rng(0).uniform(-1, 1, 5000)
        out = normalize_input(AudioClip(x, 16000))
        assert out.sample_rate == 16000
        assert np.array_equal(out.samples, x)

    def test_idempotent(self):
        x = np.random.default_rng(1).uniform(-1, 1, (9000, 2))
        once = normalize_input(AudioClip(x, 44100))
        twice = normalize_input(once)
        assert np.array_equal(once.samples, twice.samples)

    def test_dc_invariance(self):
        out = normalize_input(AudioClip(np.full(32000, 0.5), 32000))
        assert out.samples.shape[0] == 16000
        interior = out.samples[200:-200]
        np.testing.assert_allclose(interior, 0.5, atol=1e-3)

    def test_44k_sine_peak_at_440(self):
        sr = 44100
        x = np.sin(2 * np.pi * 440 * np.arange(sr // 2) / sr)
        out = normalize_input(AudioClip(x, sr))
        seg = out.samples[1000:1000 + 4000]
        _, freq, _ = brute_force_dft_peak(seg, 16000)
        assert abs(freq - 440) <= 16000 / 4000

    def test_48k_sine_matches_direct_synthesis(self):
        t48 = np.arange(48000) / 48000
        out = normalize_input(AudioClip(np.sin(2 * np.pi * 1000 * t48), 48000))
        direct = np.sin(2 * np.pi * 1000 * np.arange(16000) / 16000)
        seg = slice(2000, 2000 + 1600)
        _, f_a, m_a = brute_force_dft_peak(out.samples[seg], 16000)
        _, f_b, m_b = brute_force_dft_peak(direct[seg], 16000)
        assert f_a == f_b == 1000
        assert m_a == pytest.approx(m_b, rel=0.01)

    @settings(max_examples=15, deadline=None)
    @given(freq=st.floats(100, 800), sr=st.sampled_from([8000, 22050, 32000, 44100, 48000]))
    def test_tone_frequency_preserved(self, freq, sr):
        x = np.sin(2 * np.pi * freq * np.arange(int(0.4 * sr)) / sr)
        out = normalize_input(AudioClip(x, sr)).samples
        seg = out[800:800 + 4096]
        spec = np.abs(np.fft.rfft(seg))
        assert abs(np.argmax(spec) - freq * 4096 / 16000) <= 1


class TestAnnotations:
    def test_exact_grid(self, tmp_path):
        p = tmp_path / "a.txt"
        p.write_text("0.00 220\n0.02 220\n")
        np.testing.assert_array_equal(parse_annotation(p, 0.02).f0, [220, 220])

    def test_zero_and_negative_unvoiced(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("0.00,0\n0.02,330\n0.04,-110\n")
        np.testing.assert_array_equal(parse_annotation(p, 0.02).f0, [0, 330, 0])

    def test_nearest_neighbour_matches_row_oracle(self, tmp_path):
        rng = np.random.default_rng(3)
        times = np.round(np.arange(0, 2.0, 0.01), 6)
        f0 = np.where(rng.random(times.size) < 0.3, 0.0, rng.uniform(100, 500, times.size))
        p = tmp_path / "ann.txt"
        p.write_text("".join(f"{t:.6f}\t{f:.6f}\n" for t, f in zip(times, f0)))
        hop = 0.02
        contour = parse_annotation(p, hop)
        for k, g in enumerate(contour.times):
            d = [abs(t - g) for t in times]
            expected = f0[int(np.argmin(d))]
            assert contour.f0[k] == pytest.approx(expected, abs=1e-6)

    def test_beyond_range_unvoiced(self, tmp_path):
        p = tmp_path / "a.txt"
        p.write_text("0.1 200\n0.12 200\n")
        c = parse_annotation(p, 0.02, n_frames=12)
        np.testing.assert_array_equal(c.f0, [0, 0, 0, 0, 0, 200, 200, 0, 0, 0, 0, 0])

    def test_malformed_row_reports_index(self, tmp_path):
        p = tmp_path / "a.txt"
        p.write_text("0.0 100\n0.01 abc\n")
        with pytest.raises(AnnotationFormatError, match="row 1"):
            parse_annotation(p, 0.01)

    def test_non_monotonic(self, tmp_path):
        p = tmp_path / "a.txt"
        p.write_text("0.0 100\n0.02 100\n0.01 100\n")
        with pytest.raises(AnnotationFormatError, match="does not increase"):
            parse_annotation(p, 0.01)

    def test_midi_unit(self, tmp_path):
        p = tmp_path / "a.txt"
        p.write_text("0.0 69\n0.02 0\n0.04 57\n")
        np.testing.assert_allclose(parse_annotation(p, 0.02, unit="midi").f0, [440, 0, 220])
        assert midi_to_hz(81) == pytest.approx(880)


class TestWriteContour:
    def test_single_frame_text(self, tmp_path):
        p = tmp_path / "c.txt"
        write_contour(MelodyContour([220.0], 0.02), p)
        assert p.read_text().strip() == "0.000000\t220.000000"

    def test_unvoiced_rows(self, tmp_path):
        p = tmp_path / "c.txt"
        write_contour(MelodyContour([0, 440, 0], 0.02), p)
        rows = p.read_text().splitlines()
        assert rows == ["0.000000\t0.000000", "0.020000\t440.000000", "0.040000\t0.000000"]

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.one_of(st.just(0.0), st.floats(50, 2000)), min_size=1, max_size=60),
           st.sampled_from([0.01, 0.02, 0.0058, 0.032]))
    def test_round_trip(self, tmp_path_factory, f0, hop):
        p = tmp_path_factory.mktemp("rt") / "c.txt"
        c = MelodyContour(f0, hop)
        write_contour(c, p)
        back = parse_annotation(p, hop, n_frames=len(c))
        np.testing.assert_allclose(back.f0, c.f0, atol=1e-5)


def test_manifest(tmp_path):
    (tmp_path / "m.tsv").write_text("a.wav\ta.txt\nsub/b.wav\tsub/b.txt\t1.5\t3\n")
    entries = read_manifest(tmp_path / "m.tsv")
    assert entries[0].audio_path == tmp_path / "a.wav"
    assert entries[1].start == 1.5 and entries[1].duration == 3.0
    (tmp_path / "bad.tsv").write_text("a.wav\ta.txt\t0\t0\n")
    with pytest.raises(Exception, match="duration"):
        read_manifest(tmp_path / "bad.tsv")
