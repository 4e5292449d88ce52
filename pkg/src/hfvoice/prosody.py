"""Suprasegmental descriptors over voiced segments of sentences and vowels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dsp
from .audio import AudioSegment, SectionId, resample
from .config import ExtractionConfig
from .errors import WrongSection
from .phonation import voiced_runs

PROSODY_SECTIONS = (SectionId.S1_Sentences, SectionId.S2_VowelA, SectionId.S3_VowelI)
# functional prefixes are glued to the descriptor, e.g. "skwtiltEvoiced"
PREFIXES = ("avg", "std", "max", "min", "skw", "kurt")
# per-segment: F0 slope (Hz/s), F0 line-fit MSE (Hz^2), energy slope (dB/s)
SEGMENT_DESCRIPTORS = ("tiltf0", "mseEvoiced", "tiltEvoiced")
SCALARS = ("Efirstvoiced", "Elastvoiced", "Vrate", "avgdurvoiced", "stddurvoiced",
           "avgdurunvoiced", "stddurunvoiced", "Vfraction")


def feature_suffixes() -> list[str]:
    """The 26 per-section prosody names, in registry order."""
    return [p + d for d in SEGMENT_DESCRIPTORS for p in PREFIXES] + list(SCALARS)


@dataclass(frozen=True, eq=False)
class VoicedSegment:
    start_s: float
    end_s: float
    f0_track: np.ndarray
    energy_track: np.ndarray
    times: np.ndarray  # frame centres

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


def voiced_segments(f0: dsp.F0Contour, energy=None, min_frames: int = 3) -> list[VoicedSegment]:
    """Maximal runs of voiced frames at least ``min_frames`` long.

    A run of n frames spans n hops centred on its frame centres.
    """
    energy = f0.energy_db if energy is None else np.asarray(energy, dtype=np.float64)
    if energy is None or len(energy) < len(f0):
        raise ValueError("need one energy value per contour frame")
    t = f0.times
    h = f0.hop_s
    out = []
    for a, b in voiced_runs(f0.voiced):
        if b - a < min_frames:
            continue
        out.append(VoicedSegment(float(t[a] - h / 2), float(t[b - 1] + h / 2),
                                 f0.f0_hz[a:b].copy(), energy[a:b].copy(), t[a:b].copy()))
    return out


def _named(prefix, desc, values):
    fn = dsp.functionals(values) if len(values) else dsp.nan_functionals()
    return {f"{prefix}{p}{desc}": v for p, v in zip(PREFIXES, fn.as_tuple())}


def prosody_features(seg: AudioSegment, config: ExtractionConfig = ExtractionConfig(),
                     contour: dsp.F0Contour | None = None) -> dict[str, float]:
    """26 named values for a sentence or vowel section.

    Every value is NaN when the section has no voiced segment.  Pause
    statistics are taken over the gaps between voiced segments and are 0
    when there is a single segment.
    """
    if seg.section not in PROSODY_SECTIONS:
        raise WrongSection(f"prosody features are not defined for {seg.section.filename}",
                           section=int(seg.section))
    seg = resample(seg, config.analysis_rate)
    if contour is None:
        contour = dsp.estimate_f0(seg, config=config.f0)
    prefix = f"{seg.section.filename}/prosody/"
    segs = voiced_segments(contour, min_frames=config.min_voiced_frames)
    if not segs:
        return {prefix + s: float("nan") for s in feature_suffixes()}

    tilt_f0, mse_f0, tilt_e = [], [], []
    for s in segs:
        slope, _, mse = dsp.linear_fit(s.times, s.f0_track)
        tilt_f0.append(slope)
        mse_f0.append(mse)
        tilt_e.append(dsp.linear_fit(s.times, s.energy_track)[0])
    out = {}
    for desc, vals in zip(SEGMENT_DESCRIPTORS, (tilt_f0, mse_f0, tilt_e)):
        out.update(_named(prefix, desc, vals))

    dur = np.array([s.duration_s for s in segs])
    gaps = np.array([b.start_s - a.end_s for a, b in zip(segs[:-1], segs[1:])])
    total = seg.duration_s
    out[prefix + "Efirstvoiced"] = float(np.mean(segs[0].energy_track))
    out[prefix + "Elastvoiced"] = float(np.mean(segs[-1].energy_track))
    out[prefix + "Vrate"] = len(segs) / total
    out[prefix + "avgdurvoiced"] = float(dur.mean())
    out[prefix + "stddurvoiced"] = float(dur.std())
    out[prefix + "avgdurunvoiced"] = float(gaps.mean()) if gaps.size else 0.0
    out[prefix + "stddurunvoiced"] = float(gaps.std()) if gaps.size else 0.0
    out[prefix + "Vfraction"] = float(dur.sum() / total)
    return {prefix + s: out[prefix + s] for s in feature_suffixes()}
