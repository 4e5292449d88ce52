"""Source-filter voice and cohort generator.

A glottal pulse train with controllable period and amplitude perturbation
is differentiated (lip radiation), passed through cascaded formant
resonators and mixed with white noise.  Every random draw comes from a
seeded generator, so output bytes are a pure function of the spec.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy.signal import lfilter

from .audio import AudioSegment, Cohort, PatientRecord, SectionId, write_manifest, write_wav
from .errors import InvalidSpec

VOWEL_A = ((730.0, 90.0), (1090.0, 110.0), (2440.0, 170.0))
VOWEL_I = ((270.0, 60.0), (2290.0, 100.0), (3010.0, 150.0))
VOWEL_E = ((530.0, 70.0), (1840.0, 100.0), (2480.0, 160.0))

PULSE_SHAPES = ("lf_triangular", "raised_cosine")


@dataclass(frozen=True)
class SynthSpec:
    f0_hz: float = 150.0
    jitter_pct: float = 0.0
    shimmer_pct: float = 0.0
    oq: float = 0.6
    formants: tuple = VOWEL_A
    duration_s: float = 2.0
    pause_pattern: tuple = ()
    snr_db: float | None = 40.0
    seed: int = 0
    sample_rate: int = 16000
    f0_end_hz: float | None = None
    pulse_shape: str = "lf_triangular"
    level: float = 0.5
    section: SectionId = SectionId.S2_VowelA

    def validate(self):
        if not 60.0 <= self.f0_hz <= 400.0:
            raise InvalidSpec(f"f0_hz {self.f0_hz} outside [60, 400]")
        if self.f0_end_hz is not None and not 60.0 <= self.f0_end_hz <= 400.0:
            raise InvalidSpec(f"f0_end_hz {self.f0_end_hz} outside [60, 400]")
        if self.jitter_pct < 0 or self.shimmer_pct < 0:
            raise InvalidSpec("jitter_pct and shimmer_pct must be >= 0")
        if not 0.0 < self.oq < 1.0:
            raise InvalidSpec(f"oq {self.oq} outside (0, 1)")
        if not self.pause_pattern and self.duration_s <= 0:
            raise InvalidSpec("duration_s must be > 0")
        if any(v <= 0 or s < 0 for v, s in self.pause_pattern):
            raise InvalidSpec("pause_pattern entries need voiced_s > 0 and silent_s >= 0")
        if self.pulse_shape not in PULSE_SHAPES:
            raise InvalidSpec(f"unknown pulse shape {self.pulse_shape!r}")
        if self.sample_rate <= 2 * 400:
            raise InvalidSpec("sample_rate too low")
        for fc, bw in self.formants:
            if not (0 < fc < self.sample_rate / 2 and bw > 0):
                raise InvalidSpec(f"bad formant ({fc}, {bw})")


@dataclass
class SynthTruth:
    """Ground truth of a rendered voice, times in seconds."""

    onsets: np.ndarray  # glottal opening instants
    gci: np.ndarray  # glottal closure instants
    periods: np.ndarray
    amplitudes: np.ndarray
    flow: np.ndarray
    dflow: np.ndarray
    voiced_spans: list


def closing_fraction(oq: float) -> float:
    """Closing-phase fraction of the period paired with an opening quotient."""
    return min(oq / 3.0, (1.0 - oq) / 2.0)


def closure_fraction(oq: float, shape: str = "lf_triangular") -> float:
    """Phase of the glottal closure instant, the most negative flow slope.

    For the triangular pulse that is the end of the closing phase; for the
    raised cosine it is three quarters of the pulse.
    """
    if shape == "raised_cosine":
        return 0.75 * oq
    return oq + closing_fraction(oq)


def pulse_shape(phase: np.ndarray, oq: float, shape: str = "lf_triangular") -> np.ndarray:
    """One glottal flow cycle evaluated at phase in [0, 1).

    ``lf_triangular``: linear rise over ``oq`` of the cycle (flow minimum to
    flow peak), quarter-cosine closure whose derivative is most negative at
    the closure instant, then a closed phase.  ``raised_cosine``: a smooth
    pulse 0.5 * (1 - cos(2 pi phase / oq)) over ``oq`` of the cycle, then
    closed; oq = 1 gives a pure sinusoid.  Its flow peak sits at oq / 2.
    """
    phase = np.asarray(phase, dtype=np.float64)
    if shape == "raised_cosine":
        g = np.zeros_like(phase)
        inside = phase < oq
        g[inside] = 0.5 * (1.0 - np.cos(2 * np.pi * phase[inside] / oq))
        return g
    cq = closing_fraction(oq)
    g = np.zeros_like(phase)
    rise = phase < oq
    g[rise] = phase[rise] / oq
    fall = (phase >= oq) & (phase < oq + cq)
    g[fall] = np.cos(0.5 * np.pi * (phase[fall] - oq) / cq)
    return g


def resonator_cascade(x: np.ndarray, formants, rate: int) -> np.ndarray:
    y = np.asarray(x, dtype=np.float64)
    for fc, bw in formants:
        r = np.exp(-np.pi * bw / rate)
        c = 2 * r * np.cos(2 * np.pi * fc / rate)
        a = [1.0, -c, r * r]
        y = lfilter([1.0 - c + r * r], a, y)
    return y


def _spans(spec: SynthSpec) -> list[tuple[float, float]]:
    if not spec.pause_pattern:
        return [(0.0, float(spec.duration_s))]
    spans, t = [], 0.0
    for voiced_s, silent_s in spec.pause_pattern:
        spans.append((t, t + voiced_s))
        t += voiced_s + silent_s
    return spans


def _total_duration(spec: SynthSpec) -> float:
    if not spec.pause_pattern:
        return float(spec.duration_s)
    return float(sum(v + s for v, s in spec.pause_pattern))


def render_flow(onsets, periods, amplitudes, n_samples: int, rate: int, oq: float,
                shape: str = "lf_triangular", fade_s: float = 0.01, spans=None) -> np.ndarray:
    """Sample the pulse train at continuous time (sub-sample accurate)."""
    t = np.arange(n_samples) / rate
    flow = np.zeros(n_samples)
    if len(onsets) == 0:
        return flow
    idx = np.searchsorted(onsets, t, side="right") - 1
    ok = idx >= 0
    ii = idx[ok]
    phase = (t[ok] - onsets[ii]) / periods[ii]
    inside = phase < 1.0
    vals = np.zeros(ok.sum())
    vals[inside] = amplitudes[ii[inside]] * pulse_shape(phase[inside], oq, shape)
    flow[ok] = vals
    if spans and fade_s > 0:
        env = np.zeros(n_samples)
        for a, b in spans:
            rise = np.clip((t - a) / fade_s, 0, 1)
            fall = np.clip((b - t) / fade_s, 0, 1)
            seg = (t >= a) & (t < b)
            env[seg] = np.minimum(rise[seg], fall[seg])
        env = 0.5 - 0.5 * np.cos(np.pi * env)
        flow *= env
    return flow


def synth_voice_with_truth(spec: SynthSpec) -> tuple[AudioSegment, SynthTruth]:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    rate = spec.sample_rate
    total = _total_duration(spec)
    n = int(round(total * rate))
    f0_end = spec.f0_hz if spec.f0_end_hz is None else spec.f0_end_hz
    spans = _spans(spec)
    j, s = spec.jitter_pct / 100.0, spec.shimmer_pct / 100.0

    onsets, periods, amps, nominal = [], [], [], []
    for a, b in spans:
        t = a + 0.002
        while True:
            f0_t = spec.f0_hz + (f0_end - spec.f0_hz) * (t / total)
            T0 = 1.0 / f0_t
            T = T0 * (1.0 + j * rng.standard_normal()) if j > 0 else T0
            T = min(max(T, 0.5 * T0), 1.5 * T0)
            A = 1.0 + s * rng.standard_normal() if s > 0 else 1.0
            A = max(A, 0.1)
            if t + T > b:
                break
            onsets.append(t)
            periods.append(T)
            amps.append(A)
            nominal.append(T0)
            t += T
    onsets, periods, amps, nominal = map(np.asarray, (onsets, periods, amps, nominal))
    # flow height follows the period so the closure excitation, and with it
    # the radiated cycle peak, carries only the injected amplitude factor
    heights = amps * periods / nominal if len(periods) else amps
    return _finish(spec, rng, n, onsets, periods, amps, spans, heights=heights)


def synth_from_cycles(periods, amplitudes, oq: float = 0.6, formants=VOWEL_A,
                      rate: int = 16000, snr_db: float | None = None, seed: int = 0,
                      shape: str = "lf_triangular", lead_s: float = 0.002,
                      section=SectionId.S2_VowelA, level: float = 0.5,
                      amplitude_stage: str = "source"):
    """Render an explicit cycle sequence (periods in seconds).

    With ``amplitude_stage="source"`` the amplitudes scale the glottal
    excitation, so vocal-tract ringing carries part of each cycle into the
    next.  With ``"output"`` a unit-excitation voice is rendered and each
    radiated cycle, taken from a tenth of a period before its closure
    instant to the same point of the next cycle, is multiplied by its
    amplitude.
    """
    if amplitude_stage not in ("source", "output"):
        raise InvalidSpec(f"unknown amplitude_stage {amplitude_stage!r}")
    periods = np.asarray(periods, dtype=np.float64)
    amps = np.asarray(amplitudes, dtype=np.float64)
    onsets = lead_s + np.concatenate([[0.0], np.cumsum(periods)[:-1]])
    total = lead_s + periods.sum() + 0.01
    spec = SynthSpec(f0_hz=float(np.clip(1 / periods.mean(), 60, 400)), oq=oq,
                     formants=tuple(formants), duration_s=total, snr_db=snr_db,
                     seed=seed, sample_rate=rate, pulse_shape=shape, section=section,
                     level=level)
    spec.validate()
    rng = np.random.default_rng(seed)
    heights = amps * periods / periods.mean()
    out_gain = None
    if amplitude_stage == "output":
        heights = periods / periods.mean()
        out_gain = amps
    return _finish(spec, rng, int(round(total * rate)), onsets, periods, amps,
                   [(0.0, float(onsets[-1] + periods[-1]))], heights=heights,
                   out_gain=out_gain)


def _finish(spec, rng, n, onsets, periods, amps, spans, heights=None, out_gain=None):
    rate = spec.sample_rate
    heights = amps if heights is None else heights
    flow = render_flow(onsets, periods, heights, n, rate, spec.oq, spec.pulse_shape,
                       spans=spans if spec.pause_pattern else None)
    dflow = np.diff(flow, prepend=0.0) * rate
    speech = resonator_cascade(dflow, spec.formants, rate)
    if out_gain is not None:
        edges = onsets + (closure_fraction(spec.oq, spec.pulse_shape) - 0.1) * periods
        idx = np.searchsorted(edges, np.arange(n) / rate, side="right") - 1
        speech = speech * np.asarray(out_gain)[np.clip(idx, 0, len(onsets) - 1)]
    peak = np.abs(speech).max()
    gain = spec.level / peak if peak > 0 else 0.0
    speech = speech * gain
    if spec.snr_db is not None and np.isfinite(spec.snr_db):
        t = np.arange(n) / rate
        voiced = np.zeros(n, dtype=bool)
        for a, b in spans:
            voiced |= (t >= a) & (t < b)
        p_sig = np.mean(speech[voiced] ** 2) if voiced.any() else np.mean(speech ** 2)
        sigma = np.sqrt(p_sig / 10 ** (spec.snr_db / 10.0))
        speech = speech + sigma * rng.standard_normal(n)
    speech = np.clip(speech, -1.0, 1.0 - 1.0 / 32768)
    truth = SynthTruth(
        onsets=onsets,
        gci=onsets + closure_fraction(spec.oq, spec.pulse_shape) * periods,
        periods=periods,
        amplitudes=amps,
        flow=flow * gain,
        dflow=dflow * gain,
        voiced_spans=spans,
    )
    return AudioSegment(speech, rate, spec.section), truth


def synth_voice(spec: SynthSpec) -> AudioSegment:
    return synth_voice_with_truth(spec)[0]


# ---------------------------------------------------------------- cohorts

@dataclass(frozen=True)
class ClassSpec:
    """Per-parameter (mean, sd) of one class; values are drawn per patient."""

    f0_hz: tuple = (130.0, 15.0)
    jitter_pct: tuple = (1.0, 0.2)
    shimmer_pct: tuple = (3.0, 0.5)
    oq: tuple = (0.6, 0.03)
    snr_db: tuple = (35.0, 3.0)
    pause_s: tuple = (0.35, 0.08)
    nt_probnp: tuple | None = (8000.0, 8000.0)


@dataclass(frozen=True)
class CohortSpec:
    n_patients: int = 29
    class0: ClassSpec = ClassSpec()
    class1: ClassSpec = ClassSpec(
        jitter_pct=(1.6, 0.3), shimmer_pct=(4.0, 0.6), oq=(0.66, 0.03),
        pause_s=(0.5, 0.1), nt_probnp=(19800.0, 15000.0),
    )
    label_balance: float = 14 / 29
    seed: int = 0
    sample_rate: int = 16000
    full_scale: bool = False

    def validate(self):
        if self.n_patients < 4:
            raise InvalidSpec("n_patients must be >= 4")
        if not 0.0 < self.label_balance < 1.0:
            raise InvalidSpec("label_balance must be in (0, 1)")

    @property
    def n_positive(self) -> int:
        n1 = int(round(self.n_patients * self.label_balance))
        return min(max(n1, 1), self.n_patients - 1)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CohortSpec":
        d = dict(d)
        for key in ("class0", "class1"):
            if key in d and isinstance(d[key], dict):
                cd = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d[key].items()}
                d[key] = ClassSpec(**cd)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidSpec(f"unknown CohortSpec keys: {sorted(unknown)}")
        return cls(**d)


def mix_seed(seed: int, index: int) -> int:
    """seed XOR splitmix64(index), truncated to 63 bits."""
    z = (index + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    z ^= z >> 31
    return (int(seed) ^ z) & 0x7FFFFFFFFFFFFFFF


def _draw(rng, mean_sd, lo, hi):
    m, sd = mean_sd
    return float(np.clip(m + sd * rng.standard_normal(), lo, hi))


def _stream_pattern(rng, n_bursts, voiced_range, pause_mean):
    pattern = []
    for _ in range(n_bursts):
        v = float(rng.uniform(*voiced_range))
        p = float(max(0.08, pause_mean * (0.6 + 0.8 * rng.random())))
        pattern.append((round(v, 4), round(p, 4)))
    return tuple(pattern)


def synth_patient(class_spec: ClassSpec, seed: int, label: int, patient_id: str = "P000",
                  sample_rate: int = 16000, full_scale: bool = False) -> PatientRecord:
    """Four protocol sections for one synthetic patient.

    Desk scale: ~4 s of phrases, 2 s per sustained vowel, ~5 s of
    conversation-like bursts.  ``full_scale`` uses the protocol's average
    durations (about 35, 5, 5 and 47 s).
    """
    rng = np.random.default_rng(seed)
    f0 = _draw(rng, class_spec.f0_hz, 70.0, 350.0)
    jit = _draw(rng, class_spec.jitter_pct, 0.0, 15.0)
    shim = _draw(rng, class_spec.shimmer_pct, 0.0, 40.0)
    oq = _draw(rng, class_spec.oq, 0.2, 0.85)
    snr = _draw(rng, class_spec.snr_db, 10.0, 80.0)
    pause = _draw(rng, class_spec.pause_s, 0.08, 3.0)
    nt = None
    if class_spec.nt_probnp is not None:
        nt = round(_draw(rng, class_spec.nt_probnp, 50.0, 1e6), 2)

    scale = 8 if full_scale else 1
    vowel_s = 5.0 if full_scale else 2.0
    base = dict(jitter_pct=jit, shimmer_pct=shim, oq=oq, snr_db=snr, sample_rate=sample_rate)
    sub = rng.integers(0, 2**31, size=4)
    specs = {
        SectionId.S1_Sentences: SynthSpec(
            f0_hz=f0 * 1.05, f0_end_hz=f0 * 0.9, formants=VOWEL_E,
            pause_pattern=_stream_pattern(rng, 4 * scale, (0.5, 0.8), pause),
            seed=int(sub[0]), section=SectionId.S1_Sentences, **base),
        SectionId.S2_VowelA: SynthSpec(
            f0_hz=f0, formants=VOWEL_A, duration_s=vowel_s, seed=int(sub[1]),
            section=SectionId.S2_VowelA, **base),
        SectionId.S3_VowelI: SynthSpec(
            f0_hz=f0 * 1.03, formants=VOWEL_I, duration_s=vowel_s, seed=int(sub[2]),
            section=SectionId.S3_VowelI, **base),
        SectionId.S4_Conversation: SynthSpec(
            f0_hz=f0, f0_end_hz=f0 * 0.92, formants=VOWEL_A,
            pause_pattern=_stream_pattern(rng, 5 * scale, (0.4, 0.9), pause * 1.5),
            seed=int(sub[3]), section=SectionId.S4_Conversation, **base),
    }
    sections = {sec: synth_voice(sp) for sec, sp in specs.items()}
    return PatientRecord(patient_id, sections, int(label), nt)


def cohort_labels(spec: CohortSpec) -> np.ndarray:
    rng = np.random.default_rng(mix_seed(spec.seed, 2**32))
    labels = np.zeros(spec.n_patients, dtype=int)
    labels[: spec.n_positive] = 1
    return labels[rng.permutation(spec.n_patients)]


def synth_cohort(spec: CohortSpec, out_dir=None) -> Cohort:
    """Generate a cohort; when ``out_dir`` is given also write WAVs and
    ``manifest.jsonl`` (paths relative to the manifest)."""
    spec.validate()
    labels = cohort_labels(spec)
    patients = []
    for i, lab in enumerate(labels):
        cls = spec.class1 if lab == 1 else spec.class0
        pid = f"P{i + 1:03d}"
        patients.append(synth_patient(cls, mix_seed(spec.seed, i), int(lab), pid,
                                      spec.sample_rate, spec.full_scale))
    manifest = ""
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        rows = []
        for p in patients:
            pdir = os.path.join(out_dir, p.patient_id)
            os.makedirs(pdir, exist_ok=True)
            secs = {}
            for sec, seg in p.sections.items():
                write_wav(os.path.join(pdir, sec.filename), seg)
                secs[str(int(sec))] = f"{p.patient_id}/{sec.filename}"
            rows.append({"patient_id": p.patient_id, "sections": secs,
                         "label": p.label, "nt_probnp": p.nt_probnp})
        manifest = os.path.join(out_dir, "manifest.jsonl")
        write_manifest(manifest, rows)
        with open(os.path.join(out_dir, "cohort_spec.json"), "w", encoding="utf-8") as fh:
            json.dump(spec.to_dict(), fh, indent=2)
            fh.write("\n")
    return Cohort(tuple(patients), manifest)
