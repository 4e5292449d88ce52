"""Feature registry, per-patient extraction and the cohort feature matrix.

Names follow "SectionN.wav/<family>/<functional> <descriptor>".  Glottal
features come from the two sustained vowels, phonation features from every
section and prosody features from every section but conversation.  Values
that cannot be measured (silence, too little voicing) are NaN until the
matrix is imputed with column medians.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import dsp, glottal, phonation, prosody
from .audio import Cohort, PatientRecord, SectionId, resample
from .config import ExtractionConfig
from .errors import (
    DegenerateFrame,
    HFVoiceError,
    InsufficientVoicing,
    LengthMismatch,
    SingleClassCohort,
    TooFewCycles,
    UnknownFeature,
)

FAMILIES = ("glottal", "phonation", "prosody")
ROUTING = {
    "glottal": (SectionId.S2_VowelA, SectionId.S3_VowelI),
    "phonation": tuple(SectionId),
    "prosody": (SectionId.S1_Sentences, SectionId.S2_VowelA, SectionId.S3_VowelI),
}
CLINICAL_PREFIX = "clinical/"
# measurement failures that become missing values rather than errors
_MISSING = (InsufficientVoicing, TooFewCycles, DegenerateFrame)


def _family_vocab(family):
    """(functional, descriptor) pairs of a family in registry order."""
    if family == "glottal":
        return [(f, d) for d in glottal.DESCRIPTORS for f in glottal.FUNCTIONAL_NAMES]
    if family == "phonation":
        return [(f, d) for d in phonation.DESCRIPTORS for f in dsp.FUNCTIONAL_NAMES]
    pairs = [(p, d) for d in prosody.SEGMENT_DESCRIPTORS for p in prosody.PREFIXES]
    return pairs + [("", s) for s in prosody.SCALARS]


@dataclass(frozen=True, order=True)
class FeatureName:
    section: int
    family: str
    functional: str
    descriptor: str

    def render(self) -> str:
        sep = "" if self.family == "prosody" else " "
        return f"Section{self.section}.wav/{self.family}/{self.functional}{sep}{self.descriptor}"

    __str__ = render

    @classmethod
    def parse(cls, name: str) -> "FeatureName":
        try:
            head, family, rest = name.split("/", 2)
        except ValueError:
            raise UnknownFeature(f"not a feature name: {name!r}", feature=name) from None
        if not (head.startswith("Section") and head.endswith(".wav")):
            raise UnknownFeature(f"bad section in {name!r}", feature=name)
        try:
            section = SectionId.parse(head)
        except ValueError:
            raise UnknownFeature(f"bad section in {name!r}", feature=name) from None
        if family not in FAMILIES or section not in ROUTING[family]:
            raise UnknownFeature(f"no {family!r} features for {head}", feature=name)
        for functional, descriptor in _family_vocab(family):
            fn = cls(int(section), family, functional, descriptor)
            if fn.render() == name:
                return fn
        raise UnknownFeature(f"unknown feature {name!r}", feature=name)


def registry(config: ExtractionConfig | None = None) -> list[str]:
    """Every feature name, ordered by section, then family, then descriptor."""
    names = []
    for sec in SectionId:
        for family in FAMILIES:
            if sec in ROUTING[family]:
                names += [FeatureName(int(sec), family, f, d).render()
                          for f, d in _family_vocab(family)]
    return names


def _section_features(seg, sec, config):
    seg = resample(seg, config.analysis_rate)
    contour = dsp.estimate_f0(seg, config=config.f0)
    out = {}
    for family, fn in (("glottal", glottal.glottal_features),
                       ("phonation", phonation.phonation_features),
                       ("prosody", prosody.prosody_features)):
        if sec not in ROUTING[family]:
            continue
        try:
            out.update(fn(seg, config, contour))
        except _MISSING:
            pass
    return out


def extract_patient(record: PatientRecord, config: ExtractionConfig = ExtractionConfig()) -> np.ndarray:
    """Feature vector in registry order; NaN marks unmeasurable values."""
    values = {}
    for sec in SectionId:
        try:
            values.update(_section_features(record.sections[sec], sec, config))
        except HFVoiceError as exc:
            exc.details.setdefault("patient_id", record.patient_id)
            exc.details.setdefault("section", int(sec))
            raise
    return np.array([values.get(n, np.nan) for n in registry(config)], dtype=np.float64)


def _extract_job(args):
    record, config = args
    return extract_patient(record, config)


def impute(raw: np.ndarray, rows=None) -> tuple[np.ndarray, np.ndarray]:
    """Replace NaN by the column median over ``rows`` (all rows if None).

    A column with no measured value among those rows is filled with 0.
    Returns (imputed copy, medians).
    """
    raw = np.asarray(raw, dtype=np.float64)
    ref = raw if rows is None else raw[np.asarray(rows)]
    med = np.zeros(raw.shape[1])
    for j in range(raw.shape[1]):
        col = ref[:, j]
        col = col[~np.isnan(col)]
        if col.size:
            med[j] = float(np.median(col))
    out = np.where(np.isnan(raw), med, raw)
    return out, med


@dataclass
class FeatureMatrix:
    names: list
    raw: np.ndarray  # with NaN sentinels
    labels: np.ndarray
    patient_ids: list
    values: np.ndarray = field(default=None, repr=False)
    medians: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.names = list(self.names)
        self.raw = np.asarray(self.raw, dtype=np.float64).reshape(len(self.patient_ids), len(self.names))
        self.labels = np.asarray(self.labels, dtype=int)
        self.patient_ids = list(self.patient_ids)
        if len(self.labels) != len(self.patient_ids):
            raise LengthMismatch("labels and patient_ids differ in length")
        if self.values is None:
            self.values, self.medians = impute(self.raw)

    @property
    def shape(self):
        return self.raw.shape

    def reimpute(self, rows) -> "FeatureMatrix":
        """Copy whose missing values use medians of ``rows`` only."""
        vals, med = impute(self.raw, rows)
        return FeatureMatrix(self.names, self.raw, self.labels, self.patient_ids, vals, med)

    def rows(self, idx) -> "FeatureMatrix":
        """Row subset; imputed values and medians are carried over unchanged."""
        idx = np.asarray(idx, dtype=int)
        return FeatureMatrix(self.names, self.raw[idx], self.labels[idx],
                             [self.patient_ids[i] for i in idx], self.values[idx], self.medians)

    def column_index(self, name) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise UnknownFeature(f"feature {name!r} not in matrix", feature=name) from None

    def columns(self, names) -> "FeatureMatrix":
        idx = [self.column_index(n) for n in names]
        return FeatureMatrix(names, self.raw[:, idx], self.labels, self.patient_ids,
                             self.values[:, idx], self.medians[idx])

    @property
    def acoustic_names(self) -> list:
        return [n for n in self.names if not n.startswith(CLINICAL_PREFIX)]

    @property
    def clinical_names(self) -> list:
        return [n for n in self.names if n.startswith(CLINICAL_PREFIX)]


def build_matrix(cohort: Cohort, config: ExtractionConfig = ExtractionConfig(),
                 train_mask=None, jobs: int = 1) -> FeatureMatrix:
    """Extract every patient (in cohort order) and impute missing values.

    Medians come from the rows flagged in ``train_mask`` when given.
    """
    labels = cohort.labels
    if len(cohort) < 2 or len(set(labels.tolist())) < 2:
        raise SingleClassCohort("need at least two patients covering both labels",
                                n=len(cohort))
    if jobs and jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(_extract_job, [(p, config) for p in cohort.patients]))
    else:
        rows = [extract_patient(p, config) for p in cohort.patients]
    fm = FeatureMatrix(registry(config), np.vstack(rows), labels, cohort.patient_ids)
    if train_mask is not None:
        fm = fm.reimpute(np.nonzero(np.asarray(train_mask, dtype=bool))[0])
    return fm


def append_clinical(matrix: FeatureMatrix, name: str, values) -> FeatureMatrix:
    """Add a final column "clinical/<name>" (values must be finite)."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if len(v) != matrix.shape[0]:
        raise LengthMismatch(f"{len(v)} values for {matrix.shape[0]} rows",
                             expected=matrix.shape[0], got=len(v))
    if not np.all(np.isfinite(v)):
        raise ValueError("clinical values must be finite")
    col = name if name.startswith(CLINICAL_PREFIX) else CLINICAL_PREFIX + name
    if col in matrix.names:
        raise ValueError(f"column {col!r} already present")
    return FeatureMatrix(matrix.names + [col], np.column_stack([matrix.raw, v]),
                         matrix.labels, matrix.patient_ids,
                         np.column_stack([matrix.values, v]), np.append(matrix.medians, np.median(v)))


def remove_column(matrix: FeatureMatrix, name: str) -> FeatureMatrix:
    j = matrix.column_index(name)
    keep = [i for i in range(len(matrix.names)) if i != j]
    return FeatureMatrix([matrix.names[i] for i in keep], matrix.raw[:, keep], matrix.labels,
                         matrix.patient_ids, matrix.values[:, keep], matrix.medians[keep])


def cohort_clinical(cohort: Cohort, name: str = "nt_probnp") -> np.ndarray:
    """Per-patient clinical value from the manifest, NaN where absent."""
    return np.array([np.nan if getattr(p, name) is None else float(getattr(p, name))
                     for p in cohort.patients])


def _fmt(v: float) -> str:
    return "" if math.isnan(v) else repr(float(v))


def matrix_to_csv(matrix: FeatureMatrix, path=None) -> str:
    """Raw values (missing as empty cells) with patient_id and label first."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["patient_id", "label"] + matrix.names)
    for pid, y, row in zip(matrix.patient_ids, matrix.labels, matrix.raw):
        w.writerow([pid, int(y)] + [_fmt(v) for v in row])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


def matrix_from_csv(path) -> FeatureMatrix:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["patient_id", "label"]:
        raise ValueError(f"{path}: expected a header starting with patient_id,label")
    names = rows[0][2:]
    for n in names:
        if not n.startswith(CLINICAL_PREFIX):
            FeatureName.parse(n)
    pids, labels, data = [], [], []
    for r in rows[1:]:
        if not r:
            continue
        if len(r) != len(names) + 2:
            raise LengthMismatch(f"{path}: row for {r[0]!r} has {len(r) - 2} values")
        pids.append(r[0])
        labels.append(int(r[1]))
        data.append([float(v) if v != "" else np.nan for v in r[2:]])
    return FeatureMatrix(names, np.array(data, dtype=np.float64).reshape(len(pids), len(names)),
                         labels, pids)
