"""Voice-biomarker risk prediction from four-section voice recordings."""

__version__ = "0.1.0"
