"""Frame-level melody metrics: OA, RPA, RCA, VR and VFA.

Reference and estimate must share one frame grid. A frame counts as a pitch
hit when both are voiced and the estimate is within ``pitch_tolerance_cents``
of the reference; the chroma variant folds the distance onto one octave.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from cfpmelody.errors import ShapeError
from cfpmelody.signal_io import MelodyContour

METRICS = ("oa", "rpa", "rca", "vr", "vfa")


@dataclass
class EvalConfig:
    pitch_tolerance_cents: float = 50.0

    def __post_init__(self):
        if not self.pitch_tolerance_cents > 0:
            raise ValueError("pitch tolerance must be positive")


@dataclass
class EvalReport:
    oa: float
    rpa: float
    rca: float
    vr: float
    vfa: float
    n_frames: int
    n_ref_voiced: int
    n_ref_unvoiced: int
    # metrics whose denominator was empty (reported as 0)
    empty: List[str] = field(default_factory=list)
    label: str = ""

    def as_dict(self) -> Dict[str, object]:
        return asdict(self)

    def to_text(self) -> str:
        """``key=value`` lines."""
        lines = [f"label={self.label}"] if self.label else []
        lines += [f"{m}={getattr(self, m):.6f}" for m in METRICS]
        lines += [f"n_frames={self.n_frames}", f"n_ref_voiced={self.n_ref_voiced}",
                  f"n_ref_unvoiced={self.n_ref_unvoiced}",
                  f"empty={','.join(self.empty) if self.empty else '-'}"]
        return "\n".join(lines)


@dataclass
class AggregateReport:
    weighted: EvalReport
    unweighted: EvalReport
    n_clips: int


def cents_distance(ref_hz: np.ndarray, est_hz: np.ndarray) -> np.ndarray:
    return 1200.0 * np.abs(np.log2(est_hz / ref_hz))


def chroma_distance(cents: np.ndarray) -> np.ndarray:
    """Fold a cents distance onto [0, 600]."""
    return np.abs(cents - 1200.0 * np.round(cents / 1200.0))


def _ratio(num: int, den: int, name: str, empty: List[str]) -> float:
    if den == 0:
        empty.append(name)
        return 0.0
    return num / den


def evaluate(ref: MelodyContour, est: MelodyContour, cfg: EvalConfig = EvalConfig(),
             label: str = "") -> EvalReport:
    """Compare two contours sampled on the same grid."""
    if len(ref) != len(est):
        raise ShapeError(f"reference has {len(ref)} frames, estimate {len(est)}")
    if not np.isclose(ref.hop_seconds, est.hop_seconds, rtol=1e-9, atol=1e-12):
        raise ShapeError(f"hop mismatch: {ref.hop_seconds} vs {est.hop_seconds}")

    rv, ev = ref.voiced, est.voiced
    both = rv & ev
    cents = np.full(len(ref), np.inf)
    cents[both] = cents_distance(ref.f0[both], est.f0[both])
    pitch_hit = both & (cents <= cfg.pitch_tolerance_cents)
    chroma_hit = both & (chroma_distance(np.where(both, cents, 0.0)) <= cfg.pitch_tolerance_cents)

    n_v, n_u = int(rv.sum()), int((~rv).sum())
    empty: List[str] = []
    rpa = _ratio(int(pitch_hit.sum()), n_v, "rpa", empty)
    rca = _ratio(int(chroma_hit.sum()), n_v, "rca", empty)
    vr = _ratio(int(both.sum()), n_v, "vr", empty)
    vfa = _ratio(int((~rv & ev).sum()), n_u, "vfa", empty)
    correct = int(pitch_hit.sum()) + int((~rv & ~ev).sum())
    oa = _ratio(correct, len(ref), "oa", empty)
    return EvalReport(oa, rpa, rca, vr, vfa, len(ref), n_v, n_u, empty, label)


def aggregate(reports: Sequence[EvalReport], weights: Optional[Sequence[float]] = None) -> AggregateReport:
    """Frame-weighted and plain-mean summaries over clips.

    Each metric is weighted by the frame count of its own denominator
    (reference-voiced frames for RPA/RCA/VR, reference-unvoiced for VFA,
    all frames for OA) unless explicit per-clip ``weights`` are given.
    """
    reports = list(reports)
    if not reports:
        raise ShapeError("cannot aggregate an empty list of reports")
    denominators = {
        "oa": np.array([r.n_frames for r in reports], float),
        "rpa": np.array([r.n_ref_voiced for r in reports], float),
        "rca": np.array([r.n_ref_voiced for r in reports], float),
        "vr": np.array([r.n_ref_voiced for r in reports], float),
        "vfa": np.array([r.n_ref_unvoiced for r in reports], float),
    }
    totals = dict(
        n_frames=sum(r.n_frames for r in reports),
        n_ref_voiced=sum(r.n_ref_voiced for r in reports),
        n_ref_unvoiced=sum(r.n_ref_unvoiced for r in reports),
    )
    weighted, mean = {}, {}
    empty_w: List[str] = []
    for m in METRICS:
        vals = np.array([getattr(r, m) for r in reports])
        w = denominators[m] if weights is None else np.asarray(weights, float)
        weighted[m] = float(np.dot(w, vals) / w.sum()) if w.sum() > 0 else 0.0
        if w.sum() == 0:
            empty_w.append(m)
        mean[m] = float(vals.mean())
    return AggregateReport(
        weighted=EvalReport(**weighted, **totals, empty=empty_w, label="frame-weighted"),
        unweighted=EvalReport(**mean, **totals, empty=[], label="clip-mean"),
        n_clips=len(reports),
    )
