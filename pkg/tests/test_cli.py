import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from cfpmelody import cli
from cfpmelody.dumps import read_matrix
from cfpmelody.net import CnnModel, save_model
from cfpmelody.signal_io import AudioClip, parse_annotation, write_wav
from cfpmelody.synth import harmonic_tone


@pytest.fixture
def tone_wav(tmp_path):
    path = tmp_path / "tone.wav"
    write_wav(AudioClip(0.5 * harmonic_tone(220.0, 2.0, 16000, (1, 0.6, 0.4)), 16000), path)
    return path


@pytest.fixture(scope="module")
def small_set(tmp_path_factory):
    out = tmp_path_factory.mktemp("small")
    assert cli.main(["synth", "--clips", "2", "--duration", "3", "--seed", "5", "-o", str(out)]) == 0
    return out


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    cap = capsys.readouterr()
    return code, cap.out, cap.err


def test_missing_audio_exit_1(tmp_path, capsys):
    code, _, err = run(["extract", tmp_path / "nope.wav", "--mode", "cfp-max", "-o", tmp_path], capsys)
    assert code == 1
    assert err.startswith("error: AudioReadError:") and "nope.wav" in err
    assert len(err.strip().splitlines()) == 1


def test_bad_mode_exit_2(tone_wav, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["extract", str(tone_wav), "--mode", "viterbi"])
    assert exc.value.code == 2


def test_model_required(tone_wav, tmp_path, capsys):
    code, _, err = run(["extract", tone_wav, "--mode", "cnn-maxin", "-o", tmp_path], capsys)
    assert code == 2 and "UsageError" in err


def test_extract_cfp_max_on_tone(tone_wav, tmp_path, capsys):
    code, out, _ = run(["extract", tone_wav, "--mode", "cfp-max", "-o", tmp_path / "o", "--plot"], capsys)
    assert code == 0 and "tone.f0.txt" in out
    contour = parse_annotation(tmp_path / "o" / "tone.f0.txt", 0.02)
    assert len(contour) == 101
    np.testing.assert_allclose(contour.f0[4:-4], 80 * 2 ** (70 / 48), rtol=1e-6)
    assert (tmp_path / "o" / "tone.png").exists()
    cfg = json.loads((tmp_path / "o" / "config.json").read_text())
    assert cfg["decode"]["mode"] == "cfp-max" and cfg["cfp"]["hop"] == 320


def test_extract_zero_model_all_unvoiced(tone_wav, tmp_path, capsys):
    save_model(CnnModel.zeros(), tmp_path / "zero.cnn")
    code, _, _ = run(["extract", tone_wav, "--model", tmp_path / "zero.cnn", "-o", tmp_path,
                      "--dump-salience"], capsys)
    assert code == 0
    assert not parse_annotation(tmp_path / "tone.f0.txt", 0.02).voiced.any()
    sal = read_matrix(tmp_path / "salience.cfpmat").values
    assert set(np.unique(sal)) <= {0.0, 0.5}


def test_cfp_dump(tone_wav, tmp_path, capsys):
    code, _, _ = run(["cfp-dump", tone_wav, "-o", tmp_path / "d", "--duration", "1"], capsys)
    assert code == 0
    for name in ("Z0", "Z1", "Z2", "Z1_pitch", "Z2_pitch", "Y"):
        assert (tmp_path / "d" / f"{name}.cfpmat").exists()
    y = read_matrix(tmp_path / "d" / "Y.cfpmat")
    assert y.values.shape == (159, 51)
    assert (tmp_path / "d" / "cfp.png").stat().st_size > 0


def test_evaluate_copies_of_references(small_set, tmp_path, capsys):
    est = tmp_path / "est"
    est.mkdir()
    for ref in small_set.glob("synth_*.csv"):
        shutil.copy(ref, est / f"{ref.stem}.f0.txt")
    code, out, _ = run(["evaluate", small_set / "manifest.tsv", "--estimates", est, "-o", tmp_path / "r"],
                       capsys)
    assert code == 0
    rows = [r.split("\t") for r in (tmp_path / "r" / "report.tsv").read_text().splitlines()]
    assert rows[0][:6] == ["clip", "oa", "rpa", "rca", "vr", "vfa"]
    assert [r[0] for r in rows[1:]] == ["synth_000", "synth_001", "frame-weighted", "clip-mean"]
    for r in rows[1:]:
        assert float(r[2]) == 1.0 and float(r[1]) == 1.0 and float(r[5]) == 0.0
    assert "rpa=1.000000" in (tmp_path / "r" / "report.txt").read_text()
    assert (tmp_path / "r" / "report.png").exists()


def test_evaluate_cfp_max_runs(small_set, tmp_path, capsys):
    code, out, _ = run(["evaluate", small_set / "manifest.tsv", "--mode", "cfp-max", "-o", tmp_path,
                        "--no-plot", "--jobs", "2"], capsys)
    assert code == 0 and "clip-mean" in out


def test_empty_manifest(tmp_path, capsys):
    (tmp_path / "m.tsv").write_text("")
    for cmd in ("evaluate", "train"):
        code, _, err = run([cmd, tmp_path / "m.tsv", "--mode" if cmd == "evaluate" else "--epochs",
                            "cfp-max" if cmd == "evaluate" else "1", "-o", tmp_path], capsys)
        assert code == 1 and "ManifestError" in err


def test_missing_annotation_names_entry(small_set, tmp_path, capsys):
    shutil.copy(small_set / "synth_000.wav", tmp_path / "a.wav")
    (tmp_path / "m.tsv").write_text("a.wav\tmissing.csv\n")
    code, _, err = run(["train", tmp_path / "m.tsv", "-o", tmp_path / "o"], capsys)
    assert code == 1 and "missing.csv" in err


def test_train_with_patch_cache(small_set, tmp_path, capsys):
    argv = ["train", small_set / "manifest.tsv", "--epochs", "1", "--limit", "1", "--patch-cache",
            tmp_path / "p.cfppat", "-o", tmp_path / "t", "--no-plot"]
    assert run(argv, capsys)[0] == 0
    first = (tmp_path / "t" / "model.cnn").read_bytes()
    assert (tmp_path / "p.cfppat").exists()
    assert run(argv, capsys)[0] == 0
    assert (tmp_path / "t" / "model.cnn").read_bytes() == first
    log = [json.loads(line) for line in (tmp_path / "t" / "train_log.jsonl").read_text().splitlines()]
    assert log[0]["epoch"] == 1


def test_config_precedence(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"cfp": {"hop": 160, "window_size": 1024},
                                                 "decode": {"threshold": 0.7}}))
    parser = cli.build_parser()
    cfg = cli.build_config(parser.parse_args(["extract", "x.wav", "--config", str(tmp_path / "c.json"),
                                              "--hop", "320"]))
    assert cfg.cfp.hop == 320            # flag beats file
    assert cfg.cfp.window_size == 1024   # file beats default
    assert cfg.decode.threshold == 0.7
    assert cfg.cfp.gamma == (0.24, 0.6, 1.0)
    (tmp_path / "bad.json").write_text(json.dumps({"cfp": {"hopp": 1}}))
    with pytest.raises(cli.UsageError):
        cli.build_config(parser.parse_args(["extract", "x.wav", "--config", str(tmp_path / "bad.json")]))
    with pytest.raises(cli.UsageError):
        cli.build_config(parser.parse_args(["extract", "x.wav", "--threshold", "1.5"]))


def test_output_env_var(tone_wav, tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "envout"))
    code, _, _ = run(["extract", tone_wav, "--mode", "cfp-max"], capsys)
    assert code == 0
    assert (tmp_path / "envout" / "tone.f0.txt").exists()
    assert (tmp_path / "envout" / "config.json").exists()


def test_bench_small(tone_wav, tmp_path, capsys):
    save_model(CnnModel.init(0), tmp_path / "m.cnn")
    code, out, _ = run(["bench", tone_wav, "--model", tmp_path / "m.cnn", "--repeats", "1", "-o", tmp_path],
                       capsys)
    assert code == 0
    rows = dict(line.split("\t")[:2] for line in (tmp_path / "bench.tsv").read_text().splitlines()[1:])
    assert set(rows) == {"cfp-max", "cnn-maxout"}
    assert all(float(v) > 0 for v in rows.values())
    assert (tmp_path / "bench.png").exists()


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "cfpmelody.cli", "extract", str(tmp_path / "x.wav"),
                           "--mode", "cfp-max", "-o", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 1
    assert proc.stderr.startswith("error: AudioReadError")
