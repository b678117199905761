"""Command-line interface.

Subcommands: ``cfp-dump``, ``train``, ``extract``, ``evaluate``, ``bench``
and ``synth`` (writes a synthetic dataset with a manifest).

Exit codes: 0 success, 1 domain error, 2 usage error. Failures print one
line ``error: <ErrorClass>: <message>`` on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import statistics
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from cfpmelody import __version__
from cfpmelody.cfp import CfpParams
from cfpmelody.decode import CFP_MAX, MODES, DecodeConfig
from cfpmelody.errors import CfpMelodyError, DatasetError, ManifestError
from cfpmelody.evaluation import METRICS, EvalConfig, aggregate, evaluate
from cfpmelody.net import TrainConfig, load_model, save_model, train
from cfpmelody.signal_io import parse_annotation, read_manifest, write_contour

logger = logging.getLogger("cfpmelody")

OUTPUT_ENV = "CFPMELODY_OUTPUT_DIR"
DEFAULT_OUTPUT = "cfpmelody_out"


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------- #
# configuration
# --------------------------------------------------------------------------- #

# section -> (dataclass, {flag dest: field name})
SECTIONS = {
    "cfp": (CfpParams, {
        "window_size": "window_size", "hop": "hop", "gamma": "gamma",
        "freq_cutoff_hz": "freq_cutoff_hz", "quef_cutoff_s": "quef_cutoff_s",
        "fb_low_hz": "fb_low_hz", "fb_bins": "fb_bins",
        "fb_bins_per_octave": "fb_bins_per_octave", "center": "center",
        "broaden_filters": "broaden_filters",
    }),
    "train": (TrainConfig, {
        "lr": "lr", "beta1": "beta1", "beta2": "beta2", "eps": "eps",
        "batch_size": "batch_size", "epochs": "epochs", "seed": "rng_seed",
        "validation_fraction": "validation_fraction", "standardize": "standardize",
    }),
    "decode": (DecodeConfig, {"mode": "mode", "threshold": "threshold"}),
    "eval": (EvalConfig, {"tolerance_cents": "pitch_tolerance_cents"}),
}


@dataclasses.dataclass
class RunConfig:
    command: str
    cfp: CfpParams
    train: TrainConfig
    decode: DecodeConfig
    eval: EvalConfig
    output_dir: Path
    seed: int = 0

    def to_json(self) -> str:
        body = {
            "command": self.command,
            "version": __version__,
            "seed": self.seed,
            **{name: dataclasses.asdict(getattr(self, name)) for name in SECTIONS},
        }
        return json.dumps(body, indent=2, sort_keys=True) + "\n"


def build_config(args) -> RunConfig:
    """Defaults, then the ``--config`` JSON file, then explicit flags."""
    file_cfg: Dict[str, dict] = {}
    if getattr(args, "config", None):
        try:
            file_cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot load config {args.config}: {exc}") from exc
        unknown = set(file_cfg) - set(SECTIONS) - {"seed"}
        if unknown:
            raise UsageError(f"unknown config sections: {sorted(unknown)}")

    built = {}
    for section, (cls, flags) in SECTIONS.items():
        values = dict(file_cfg.get(section, {}))
        fields = {f.name for f in dataclasses.fields(cls)}
        bad = set(values) - fields
        if bad:
            raise UsageError(f"unknown keys in config section {section!r}: {sorted(bad)}")
        for dest, fname in flags.items():
            v = getattr(args, dest, None)
            if v is not None:
                values[fname] = v
        if section == "train" and "rng_seed" not in values and "seed" in file_cfg:
            values["rng_seed"] = file_cfg["seed"]
        if "gamma" in values:
            values["gamma"] = tuple(values["gamma"])
        try:
            built[section] = cls(**values)
        except (TypeError, ValueError, CfpMelodyError) as exc:
            raise UsageError(f"invalid {section} setting: {exc}") from exc

    out = getattr(args, "out", None) or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT
    return RunConfig(args.command, built["cfp"], built["train"], built["decode"], built["eval"],
                     Path(out), seed=built["train"].rng_seed)


def _prepare_output(cfg: RunConfig) -> Path:
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    (cfg.output_dir / "config.json").write_text(cfg.to_json())
    return cfg.output_dir


# --------------------------------------------------------------------------- #
# commands
# --------------------------------------------------------------------------- #

def cmd_cfp_dump(args, cfg: RunConfig) -> int:
    from cfpmelody import dumps
    from cfpmelody.cfp import compute_cfp
    from cfpmelody.pipeline import load_clip

    clip = load_clip(args.audio, args.start, args.duration)
    out = _prepare_output(cfg)
    result = compute_cfp(clip, cfg.cfp, keep_layers=True)
    z0, z1, z2 = result.layers
    for rep in (z0, z1, z2, result.z1_pitch, result.z2_pitch, result.y):
        dumps.write_matrix(rep, out / f"{rep.name}.cfpmat")
    if not args.no_plot:
        from cfpmelody.plots import plot_cfp_layers
        plot_cfp_layers(result, out / "cfp.png")
    print(f"wrote {result.y.n_bins}x{result.y.n_frames} CFP dump to {out}")
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    from cfpmelody import dumps
    from cfpmelody.pipeline import training_patches

    entries = read_manifest(args.manifest)
    if args.limit:
        entries = entries[: args.limit]
    if not entries:
        raise ManifestError(f"manifest {args.manifest} has no entries")
    out = _prepare_output(cfg)
    cache = Path(args.patch_cache) if args.patch_cache else None
    if cache is not None and cache.exists():
        data = dumps.read_patches(cache)
    else:
        data = training_patches(entries, cfg.cfp, seed=cfg.seed, unit=args.annotation_unit, jobs=args.jobs)
        if cache is not None:
            dumps.write_patches(data, cache)
    if len(data) == 0:
        raise DatasetError("no peaks found in the training clips")
    print(f"training on {len(data)} patches ({int(data.labels.sum())} positive)")
    model, log = train(data, cfg.train, log_path=out / "train_log.jsonl")
    model_path = Path(args.model_out) if args.model_out else out / "model.cnn"
    save_model(model, model_path)
    if not args.no_plot and log:
        from cfpmelody.plots import plot_training
        plot_training(log, out / "training.png")
    best = max((e["val_acc"] for e in log), default=float("nan"))
    print(f"saved {model_path} (best validation accuracy {best:.4f})")
    return 0


def _load_model_for(mode: str, model_path: Optional[str]):
    if mode == CFP_MAX:
        return load_model(model_path) if model_path else None
    if not model_path:
        raise UsageError(f"--model is required for mode {mode}")
    return load_model(model_path)


def cmd_extract(args, cfg: RunConfig) -> int:
    from cfpmelody.pipeline import extract, load_clip

    model = _load_model_for(cfg.decode.mode, args.model)
    clip = load_clip(args.audio, args.start, args.duration)
    dtype = np.float32 if args.fast else np.float64
    res = extract(clip, model, cfg.decode, cfg.cfp, dtype=dtype)
    out = _prepare_output(cfg)
    path = Path(args.output) if args.output else out / (Path(args.audio).stem + ".f0.txt")
    write_contour(res.contour, path)
    if args.dump_salience and res.salience is not None:
        from cfpmelody import dumps
        from cfpmelody.cfp import TimeFreqRep
        y = res.cfp.y
        dumps.write_matrix(TimeFreqRep(res.salience.probs, y.axis_kind, y.axis_values, y.hop_seconds,
                                       y.frame_offset, "salience"), out / "salience.cfpmat")
    if args.plot:
        from cfpmelody.plots import plot_extraction
        plot_extraction(res.cfp.y, res.salience, res.contour, out / (Path(args.audio).stem + ".png"))
    voiced = float(np.mean(res.contour.voiced)) if len(res.contour) else 0.0
    print(f"wrote {path} ({len(res.contour)} frames, {100 * voiced:.1f}% voiced)")
    return 0


def _evaluate_entry(job):
    entry, estimates_dir, model_path, cfg, unit, fast = job
    from cfpmelody.pipeline import clip_for, extract, reference_for

    hop = cfg.cfp.hop / 16000.0
    label = entry.audio_path.stem
    if estimates_dir is not None:
        est_path = Path(estimates_dir) / f"{label}.f0.txt"
        if not est_path.exists():
            raise ManifestError(f"no estimate for {label} in {estimates_dir}")
        est = parse_annotation(est_path, hop)
        ref = reference_for(entry, len(est), hop, unit=unit)
    else:
        model = load_model(model_path) if model_path else None
        res = extract(clip_for(entry), model, cfg.decode, cfg.cfp,
                      dtype=np.float32 if fast else np.float64)
        est = res.contour
        ref = reference_for(entry, len(est), est.hop_seconds, res.cfp.y.frame_offset, unit)
    return evaluate(ref, est, cfg.eval, label=label)


def cmd_evaluate(args, cfg: RunConfig) -> int:
    from cfpmelody.pipeline import map_jobs

    entries = read_manifest(args.manifest)
    if not entries:
        raise ManifestError(f"manifest {args.manifest} has no entries")
    if args.estimates is None and cfg.decode.mode != CFP_MAX and not args.model:
        raise UsageError("give --estimates DIR, or --model (or --mode cfp-max)")
    out = _prepare_output(cfg)
    jobs = [(e, args.estimates, args.model, cfg, args.annotation_unit, args.fast) for e in entries]
    reports = map_jobs(_evaluate_entry, jobs, args.jobs)
    agg = aggregate(reports)

    rows = ["clip\t" + "\t".join(METRICS) + "\tn_frames\tn_ref_voiced\tn_ref_unvoiced"]
    for r in reports + [agg.weighted, agg.unweighted]:
        rows.append(f"{r.label}\t" + "\t".join(f"{getattr(r, m):.6f}" for m in METRICS)
                    + f"\t{r.n_frames}\t{r.n_ref_voiced}\t{r.n_ref_unvoiced}")
    (out / "report.tsv").write_text("\n".join(rows) + "\n")
    blocks = [r.to_text() for r in reports + [agg.weighted, agg.unweighted]]
    (out / "report.txt").write_text("\n\n".join(blocks) + "\n")
    if not args.no_plot:
        from cfpmelody.plots import plot_report
        plot_report(reports + [agg.weighted, agg.unweighted], out / "report.png")
    print("\n".join(rows))
    return 0


def cmd_bench(args, cfg: RunConfig) -> int:
    from cfpmelody.pipeline import extract, load_clip
    from cfpmelody.signal_io import load_wav

    if not args.audio:
        raise UsageError("bench needs at least one audio file")
    modes = args.modes or [CFP_MAX, "cnn-maxout"]
    model = None
    if any(m != CFP_MAX for m in modes):
        model = _load_model_for("cnn-maxout", args.model)
    dtype = np.float64 if args.precise else np.float32
    rtf: Dict[str, float] = {}
    rows = ["mode\tmedian_rtf\tper_clip"]
    for mode in modes:
        dcfg = DecodeConfig(mode, cfg.decode.threshold)
        per_clip = []
        for path in args.audio:
            duration = load_wav(path).duration

            def run():
                t0 = time.perf_counter()
                extract(load_clip(path), model, dcfg, cfg.cfp, dtype=dtype)
                return time.perf_counter() - t0

            run()  # warm-up
            times = [run() for _ in range(max(args.repeats, 1))]
            per_clip.append(statistics.median(times) / duration)
        rtf[mode] = statistics.median(per_clip)
        rows.append(f"{mode}\t{rtf[mode]:.4f}\t" + ",".join(f"{v:.4f}" for v in per_clip))
    out = _prepare_output(cfg)
    (out / "bench.tsv").write_text("\n".join(rows) + "\n")
    if not args.no_plot:
        from cfpmelody.plots import plot_bench
        plot_bench(rtf, out / "bench.png")
    print("\n".join(rows))
    return 0


def cmd_synth(args, cfg: RunConfig) -> int:
    from cfpmelody.signal_io import ManifestEntry, write_manifest, write_wav
    from cfpmelody.synth import random_training_clip, voice_over_accompaniment

    out = Path(args.out or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT)
    out.mkdir(parents=True, exist_ok=True)
    entries: List[ManifestEntry] = []
    for i in range(args.clips):
        s = voice_over_accompaniment() if args.canonical else random_training_clip(args.seed * 100003 + i,
                                                                                  args.duration)
        stem = f"synth_{i:03d}"
        write_wav(s.clip, out / f"{stem}.wav", bits=32)
        write_contour(s.reference, out / f"{stem}.csv")
        entries.append(ManifestEntry(Path(f"{stem}.wav"), Path(f"{stem}.csv")))
    write_manifest(entries, out / "manifest.tsv")
    print(f"wrote {len(entries)} clips and {out / 'manifest.tsv'}")
    return 0


COMMANDS = {
    "cfp-dump": cmd_cfp_dump,
    "train": cmd_train,
    "extract": cmd_extract,
    "evaluate": cmd_evaluate,
    "bench": cmd_bench,
    "synth": cmd_synth,
}


# --------------------------------------------------------------------------- #
# argument parsing
# --------------------------------------------------------------------------- #

def _add_cfp_flags(p):
    g = p.add_argument_group("CFP representation")
    g.add_argument("--window-size", type=int)
    g.add_argument("--hop", type=int, help="hop in samples at 16 kHz")
    g.add_argument("--gamma", type=float, nargs=3, metavar=("G0", "G1", "G2"))
    g.add_argument("--freq-cutoff-hz", type=float)
    g.add_argument("--quef-cutoff-s", type=float)
    g.add_argument("--fb-low-hz", type=float)
    g.add_argument("--fb-bins", type=int)
    g.add_argument("--fb-bins-per-octave", type=int)
    g.add_argument("--no-center", dest="center", action="store_const", const=False,
                   help="frames start at t*hop instead of being centred on it")
    g.add_argument("--strict-filters", dest="broaden_filters", action="store_const", const=False,
                   help="do not widen filters narrower than the source resolution")


def _add_train_flags(p):
    g = p.add_argument_group("training")
    g.add_argument("--lr", type=float)
    g.add_argument("--beta1", type=float)
    g.add_argument("--beta2", type=float)
    g.add_argument("--eps", type=float)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--epochs", type=int)
    g.add_argument("--validation-fraction", type=float)
    g.add_argument("--no-standardize", dest="standardize", action="store_const", const=False)


def _add_decode_flags(p):
    g = p.add_argument_group("decoding")
    g.add_argument("--mode", choices=MODES)
    g.add_argument("--threshold", type=float)
    g.add_argument("--fast", action="store_true", help="float32 inference")


def _add_common(p):
    p.add_argument("--config", help="JSON file with cfp/train/decode/eval sections")
    p.add_argument("-o", "--out", help=f"output directory (default ${OUTPUT_ENV} or ./{DEFAULT_OUTPUT})")
    p.add_argument("--seed", type=int)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cfpmelody", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cfp-dump", help="write Z0/Z1/Z2/Y matrix dumps and a figure")
    p.add_argument("audio")
    p.add_argument("--start", type=float)
    p.add_argument("--duration", type=float)
    p.add_argument("--no-plot", action="store_true")
    _add_common(p)
    _add_cfp_flags(p)

    p = sub.add_parser("train", help="train the patch classifier from a manifest")
    p.add_argument("manifest")
    p.add_argument("--model-out")
    p.add_argument("--patch-cache", help="reuse/write a patch-set dump at this path")
    p.add_argument("--limit", type=int, help="use only the first N manifest entries")
    p.add_argument("--annotation-unit", choices=("hz", "midi"), default="hz")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--no-plot", action="store_true")
    _add_common(p)
    _add_cfp_flags(p)
    _add_train_flags(p)

    p = sub.add_parser("extract", help="write the melody contour of one file")
    p.add_argument("audio")
    p.add_argument("--model")
    p.add_argument("--output", help="contour path (default <out>/<stem>.f0.txt)")
    p.add_argument("--start", type=float)
    p.add_argument("--duration", type=float)
    p.add_argument("--dump-salience", action="store_true")
    p.add_argument("--plot", action="store_true")
    _add_common(p)
    _add_cfp_flags(p)
    _add_decode_flags(p)

    p = sub.add_parser("evaluate", help="OA/RPA/RCA/VR/VFA over a manifest")
    p.add_argument("manifest")
    p.add_argument("--estimates", help="directory of <stem>.f0.txt contours")
    p.add_argument("--model")
    p.add_argument("--annotation-unit", choices=("hz", "midi"), default="hz")
    p.add_argument("--tolerance-cents", type=float)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--no-plot", action="store_true")
    _add_common(p)
    _add_cfp_flags(p)
    _add_decode_flags(p)

    p = sub.add_parser("bench", help="real-time factor per decoding mode")
    p.add_argument("audio", nargs="*")
    p.add_argument("--modes", nargs="+", choices=MODES)
    p.add_argument("--model")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--precise", action="store_true", help="float64 inference")
    p.add_argument("--no-plot", action="store_true")
    _add_common(p)
    _add_cfp_flags(p)
    _add_decode_flags(p)

    p = sub.add_parser("synth", help="write synthetic voice-over-accompaniment clips")
    p.add_argument("--clips", type=int, default=10)
    p.add_argument("--duration", type=float, default=10.0)
    p.add_argument("--canonical", action="store_true",
                   help="the fixed 200->300 Hz vibrato voice over a 150 Hz note")
    _add_common(p)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth":
            if args.seed is None:
                args.seed = 0
            return cmd_synth(args, None)
        cfg = build_config(args)
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"error: UsageError: {exc}", file=sys.stderr)
        return 2
    except CfpMelodyError as exc:
        msg = str(exc).replace("\n", " ")
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
