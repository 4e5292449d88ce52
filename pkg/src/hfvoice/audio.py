"""WAV loading, resampling and cohort manifests.

Recordings are 16-bit linear PCM.  Samples are scaled by 1/32768 and never
peak-normalised, so amplitude perturbation measures see the recorded
dynamics.
"""

from __future__ import annotations

import enum
import json
import math
import os
import wave
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

import numpy as np
from scipy.signal import resample_poly

from .errors import (
    CorruptHeader,
    DuplicatePatientId,
    EmptyAudio,
    InvalidRate,
    LabelOutOfRange,
    ManifestError,
    MissingSection,
    UnsupportedFormat,
)

PCM_SCALE = 32768.0


class SectionId(enum.IntEnum):
    """The four parts of the recording protocol, numbered 1..4."""

    S1_Sentences = 1
    S2_VowelA = 2
    S3_VowelI = 3
    S4_Conversation = 4

    @property
    def filename(self) -> str:
        return f"Section{int(self)}.wav"

    @classmethod
    def parse(cls, value) -> "SectionId":
        if isinstance(value, SectionId):
            return value
        if isinstance(value, str):
            v = value.strip()
            if v.startswith("Section"):
                v = v[len("Section"):].split(".")[0]
            if v in cls.__members__:
                return cls[v]
            value = v
        try:
            return cls(int(value))
        except (TypeError, ValueError):
            raise ValueError(f"unknown section {value!r}") from None


@dataclass(frozen=True, eq=False)
class AudioSegment:
    samples: np.ndarray
    sample_rate: int
    section: SectionId

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)
        if int(self.sample_rate) <= 0:
            raise InvalidRate(f"sample rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "sample_rate", int(self.sample_rate))
        object.__setattr__(self, "section", SectionId.parse(self.section))

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate

    def __len__(self):
        return len(self.samples)


@dataclass(frozen=True)
class PatientRecord:
    patient_id: str
    sections: Mapping[SectionId, AudioSegment]
    label: int
    nt_probnp: float | None = None

    def __post_init__(self):
        if self.label not in (0, 1):
            raise LabelOutOfRange(
                f"label must be 0 or 1, got {self.label!r}", patient_id=self.patient_id
            )
        for sec in SectionId:
            if sec not in self.sections:
                raise MissingSection(
                    f"patient {self.patient_id} lacks {sec.filename}",
                    patient_id=self.patient_id,
                    section=int(sec),
                )
        if self.nt_probnp is not None:
            v = float(self.nt_probnp)
            if not math.isfinite(v) or v < 0:
                raise ManifestError(
                    f"nt_probnp must be finite and >= 0, got {self.nt_probnp!r}",
                    patient_id=self.patient_id,
                )


@dataclass(frozen=True)
class Cohort:
    patients: tuple[PatientRecord, ...]
    source_manifest: str = ""
    _ids: tuple[str, ...] = field(init=False, repr=False, default=())

    def __post_init__(self):
        object.__setattr__(self, "patients", tuple(self.patients))
        ids = tuple(p.patient_id for p in self.patients)
        seen = set()
        for pid in ids:
            if pid in seen:
                raise DuplicatePatientId(f"duplicate patient_id {pid!r}", patient_id=pid)
            seen.add(pid)
        object.__setattr__(self, "_ids", ids)

    @property
    def patient_ids(self) -> list[str]:
        return list(self._ids)

    @property
    def labels(self) -> np.ndarray:
        return np.array([p.label for p in self.patients], dtype=int)

    def __len__(self):
        return len(self.patients)

    def __iter__(self):
        return iter(self.patients)


def load_wav(path, section) -> AudioSegment:
    """Read a 16-bit PCM WAV file (mono or stereo) into a segment.

    Stereo is averaged to mono.  Raises UnsupportedFormat for non-PCM or
    non-16-bit data, CorruptHeader for unreadable RIFF structure and
    EmptyAudio when the file holds no frames.
    """
    section = SectionId.parse(section)
    try:
        with wave.open(os.fspath(path), "rb") as w:
            nch = w.getnchannels()
            width = w.getsampwidth()
            rate = w.getframerate()
            nframes = w.getnframes()
            raw = w.readframes(nframes)
    except wave.Error as exc:
        msg = str(exc)
        if "unknown format" in msg:
            raise UnsupportedFormat(f"{path}: {msg}", path=str(path)) from None
        raise CorruptHeader(f"{path}: {msg}", path=str(path)) from None
    except EOFError:
        raise CorruptHeader(f"{path}: truncated header", path=str(path)) from None
    if width != 2:
        raise UnsupportedFormat(f"{path}: {8 * width}-bit samples, need 16-bit", path=str(path))
    if nch not in (1, 2):
        raise UnsupportedFormat(f"{path}: {nch} channels", path=str(path))
    if rate <= 0:
        raise CorruptHeader(f"{path}: sample rate {rate}", path=str(path))
    data = np.frombuffer(raw[: len(raw) - len(raw) % (2 * nch)], dtype="<i2")
    if data.size == 0:
        raise EmptyAudio(f"{path}: no samples", path=str(path))
    x = data.reshape(-1, nch).astype(np.float64) / PCM_SCALE
    if nch == 2:
        x = x.mean(axis=1)
    else:
        x = x[:, 0]
    return AudioSegment(x, rate, section)


def write_wav(path, seg_or_samples, sample_rate: int | None = None) -> None:
    """Write mono 16-bit PCM.  Values are clipped to the int16 range."""
    if isinstance(seg_or_samples, AudioSegment):
        x, rate = seg_or_samples.samples, seg_or_samples.sample_rate
    else:
        x, rate = np.asarray(seg_or_samples, dtype=np.float64), int(sample_rate)
    pcm = np.clip(np.round(x * PCM_SCALE), -32768, 32767).astype("<i2")
    with wave.open(os.fspath(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(rate)
        w.writeframes(pcm.tobytes())


def resample(seg: AudioSegment, target_rate: int) -> AudioSegment:
    """Band-limited rate conversion (polyphase Kaiser-windowed sinc)."""
    if target_rate is None or int(target_rate) <= 0:
        raise InvalidRate(f"target rate must be positive, got {target_rate}")
    target_rate = int(target_rate)
    if target_rate == seg.sample_rate:
        return seg
    ratio = Fraction(target_rate, seg.sample_rate)
    y = resample_poly(seg.samples, ratio.numerator, ratio.denominator)
    return AudioSegment(y, target_rate, seg.section)


def _resolve(base: str, p: str) -> str:
    return p if os.path.isabs(p) else os.path.join(base, p)


def parse_manifest(manifest_path) -> list[dict]:
    """Parse the JSON-lines manifest without touching audio files."""
    base = os.path.dirname(os.path.abspath(manifest_path))
    entries = []
    with open(manifest_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"line {lineno}: {exc}", line=lineno) from None
            pid = str(obj.get("patient_id", ""))
            if not pid:
                raise ManifestError(f"line {lineno}: missing patient_id", line=lineno)
            label = obj.get("label")
            if isinstance(label, bool) or label not in (0, 1):
                raise LabelOutOfRange(
                    f"patient {pid}: label {label!r} not in {{0, 1}}", patient_id=pid
                )
            secs = obj.get("sections") or {}
            paths = {}
            for sec in SectionId:
                p = secs.get(str(int(sec)))
                if p is None:
                    raise MissingSection(
                        f"patient {pid} lacks section {int(sec)} ({sec.filename})",
                        patient_id=pid,
                        section=int(sec),
                    )
                paths[sec] = _resolve(base, p)
            nt = obj.get("nt_probnp")
            entries.append(
                {"patient_id": pid, "paths": paths, "label": int(label),
                 "nt_probnp": None if nt is None else float(nt)}
            )
    return entries


def load_cohort(manifest_path) -> Cohort:
    """Load every patient of a JSON-lines manifest, in file order."""
    entries = parse_manifest(manifest_path)
    seen = set()
    patients = []
    for e in entries:
        if e["patient_id"] in seen:
            raise DuplicatePatientId(
                f"duplicate patient_id {e['patient_id']!r}", patient_id=e["patient_id"]
            )
        seen.add(e["patient_id"])
        sections = {}
        for sec, path in e["paths"].items():
            if not os.path.exists(path):
                raise MissingSection(
                    f"patient {e['patient_id']}: {path} not found",
                    patient_id=e["patient_id"], section=int(sec),
                )
            sections[sec] = load_wav(path, sec)
        patients.append(
            PatientRecord(e["patient_id"], sections, e["label"], e["nt_probnp"])
        )
    return Cohort(tuple(patients), os.fspath(manifest_path))


def write_manifest(path, rows) -> None:
    """Write manifest rows (dicts in the JSON-lines schema)."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
