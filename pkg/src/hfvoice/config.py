"""Extraction settings shared by the three feature families."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

from .dsp import F0Config


@dataclass(frozen=True)
class GlottalConfig:
    window_s: float = 0.2
    hop_s: float = 0.1
    lpc_frame_s: float = 0.04
    lpc_hop_s: float = 0.01
    glottal_order: int = 4
    leak: float = 0.999
    highpass_hz: float = 40.0
    gci_search: float = 0.3
    min_voiced_s: float = 0.5
    n_harmonics: int = 10
    # rising-edge levels (fractions of the cycle's flow range) whose
    # crossings are extrapolated back to the minimum to time the opening
    opening_levels: tuple = (0.2, 0.8)


@dataclass(frozen=True)
class ExtractionConfig:
    analysis_rate: int = 16000
    f0: F0Config = field(default_factory=F0Config)
    glottal: GlottalConfig = field(default_factory=GlottalConfig)
    perturbation_k: int = 5
    min_voiced_frames: int = 3
    min_cycle_corr: float = 0.5

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict | None) -> "ExtractionConfig":
        d = dict(d or {})
        if "f0" in d:
            d["f0"] = F0Config(**d["f0"])
        if "glottal" in d:
            g = dict(d["glottal"])
            if "opening_levels" in g:
                g["opening_levels"] = tuple(g["opening_levels"])
            d["glottal"] = GlottalConfig(**g)
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown extraction settings: {unknown}")
        return cls(**d)
