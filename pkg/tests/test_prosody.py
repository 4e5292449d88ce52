import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hfvoice import dsp, prosody
from hfvoice.audio import AudioSegment, SectionId
from hfvoice.errors import WrongSection
from hfvoice.synth import SynthSpec, synth_voice


def contour(pattern, f0=150.0):
    f = np.where(np.asarray(pattern, dtype=bool), f0, 0.0)
    return dsp.F0Contour(f, 0.02, 0.04, None, np.full(len(f), -20.0))


def test_segments_examples():
    segs = prosody.voiced_segments(contour([1] * 20))
    assert len(segs) == 1
    assert segs[0].start_s == pytest.approx(0.01) and segs[0].end_s == pytest.approx(0.41)
    assert len(prosody.voiced_segments(contour([1] * 5 + [0] * 5 + [1] * 5))) == 2
    assert prosody.voiced_segments(contour([1, 1])) == []


@given(st.lists(st.booleans(), min_size=1, max_size=200))
def test_segments_are_maximal_runs(pattern):
    segs = prosody.voiced_segments(contour(pattern))
    for s in segs:
        assert s.end_s > s.start_s and np.all(s.f0_track > 0) and len(s.f0_track) >= 3
    runs = [b - a for a, b in prosody.voiced_runs(np.asarray(pattern))] if any(pattern) else []
    assert len(segs) == sum(r >= 3 for r in runs)


def test_conversation_rejected():
    seg = AudioSegment(np.zeros(1600), 16000, SectionId.S4_Conversation)
    with pytest.raises(WrongSection):
        prosody.prosody_features(seg)


def test_falling_glide():
    seg = synth_voice(SynthSpec(f0_hz=180, f0_end_hz=120, duration_s=1.0))
    f = prosody.prosody_features(seg)
    assert abs(f["Section2.wav/prosody/avgtiltf0"] + 60) <= 6
    assert f["Section2.wav/prosody/avgmseEvoiced"] <= 4


def test_burst_rate():
    seg = synth_voice(SynthSpec(pause_pattern=((0.3, 0.2),) * 4, section=SectionId.S1_Sentences))
    assert seg.duration_s == pytest.approx(2.0)
    assert abs(prosody.prosody_features(seg)["Section1.wav/prosody/Vrate"] - 2.0) <= 0.5


def test_names_and_registry_order():
    f = prosody.prosody_features(synth_voice(SynthSpec(seed=1)))
    assert list(f) == ["Section2.wav/prosody/" + s for s in prosody.feature_suffixes()]
    assert len(f) == 26 and "Section2.wav/prosody/skwtiltEvoiced" in f


def test_silence_is_missing():
    f = prosody.prosody_features(AudioSegment(np.zeros(16000), 16000, SectionId.S3_VowelI))
    assert all(np.isnan(v) for v in f.values())


def test_f0_offset_leaves_fit_unchanged():
    seg = synth_voice(SynthSpec(f0_hz=170, f0_end_hz=130, jitter_pct=1.0, seed=3, duration_s=1.5))
    c = dsp.estimate_f0(seg)
    shifted = dsp.F0Contour(np.where(c.voiced, c.f0_hz + 20.0, 0.0), c.hop_s, c.frame_len_s,
                            c.strength, c.energy_db)
    a = prosody.prosody_features(seg, contour=c)
    b = prosody.prosody_features(seg, contour=shifted)
    for k in ("avgmseEvoiced", "stdmseEvoiced", "avgtiltf0"):
        key = "Section2.wav/prosody/" + k
        assert b[key] == pytest.approx(a[key], rel=1e-9, abs=1e-9)


def test_constant_vowel_energy_tilt_flat():
    f = prosody.prosody_features(synth_voice(SynthSpec(duration_s=2.0, seed=4)))
    assert abs(f["Section2.wav/prosody/avgtiltEvoiced"]) <= 1.0


@settings(max_examples=10, deadline=None)
@given(st.lists(st.tuples(st.floats(0.2, 0.6), st.floats(0.15, 0.5)), min_size=1, max_size=5),
       st.integers(0, 1000))
def test_rate_times_duration_counts_segments(pattern, seed):
    spec = SynthSpec(pause_pattern=tuple(pattern), seed=seed, section=SectionId.S1_Sentences)
    seg = synth_voice(spec)
    c = dsp.estimate_f0(seg)
    n = len(prosody.voiced_segments(c))
    f = prosody.prosody_features(seg, contour=c)
    if n:
        assert f["Section1.wav/prosody/Vrate"] * seg.duration_s == pytest.approx(n)
    assert abs(n - len(pattern)) <= 1
