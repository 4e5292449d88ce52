"""Exception hierarchy.

Every error carries a machine-readable ``code`` (the class name) and an
optional ``details`` mapping so the CLI can emit it as JSON.
"""


class HFVoiceError(Exception):
    def __init__(self, message="", **details):
        super().__init__(message)
        self.details = details

    @property
    def code(self):
        return type(self).__name__

    def to_dict(self):
        return {"error": self.code, "message": str(self), **self.details}


# audio-io
class AudioError(HFVoiceError):
    pass


class UnsupportedFormat(AudioError):
    pass


class CorruptHeader(AudioError):
    pass


class EmptyAudio(AudioError):
    pass


class InvalidRate(AudioError):
    pass


class ManifestError(HFVoiceError):
    pass


class MissingSection(ManifestError):
    pass


class DuplicatePatientId(ManifestError):
    pass


class LabelOutOfRange(ManifestError):
    pass


# signal analysis
class InvalidBand(HFVoiceError):
    pass


class DegenerateFrame(HFVoiceError):
    pass


class DegenerateAbscissa(HFVoiceError):
    pass


class EmptyInput(HFVoiceError):
    pass


class TooFewCycles(HFVoiceError):
    pass


class InvalidAmplitude(TooFewCycles):
    pass


class InsufficientVoicing(HFVoiceError):
    pass


class WrongSection(HFVoiceError):
    pass


# features / selection / model / evaluation
class SingleClassCohort(HFVoiceError):
    pass


class LengthMismatch(HFVoiceError):
    pass


class DegenerateInput(HFVoiceError):
    pass


class TooFewSurvivors(HFVoiceError):
    pass


class NonConvergence(HFVoiceError):
    pass


class SingleClass(HFVoiceError):
    pass


class DimensionMismatch(HFVoiceError):
    pass


class UnknownFeature(HFVoiceError):
    pass


class VersionMismatch(HFVoiceError):
    pass


class CorruptModel(HFVoiceError):
    pass


class DegenerateSplit(HFVoiceError):
    pass


class InfeasibleFolds(HFVoiceError):
    pass


class DegenerateGroups(HFVoiceError):
    pass


class InvalidSpec(HFVoiceError):
    pass


class FoldFailure(HFVoiceError):
    pass
