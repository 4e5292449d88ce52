import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hfvoice import dsp, phonation
from hfvoice.audio import AudioSegment, SectionId
from hfvoice.errors import InvalidAmplitude, TooFewCycles
from hfvoice.synth import SynthSpec, synth_from_cycles, synth_voice

positive = st.floats(0.01, 100.0, allow_nan=False)
KEY = "Section2.wav/phonation/"


def feats(spec):
    return phonation.phonation_features(synth_voice(spec))


def test_jitter_examples():
    assert phonation.jitter([0.01] * 8) == 0.0
    assert phonation.jitter([0.0099, 0.0101, 0.0099, 0.0101]) == pytest.approx(2.0)
    with pytest.raises(TooFewCycles):
        phonation.jitter([0.01])


def test_shimmer_examples():
    assert phonation.shimmer([0.7] * 6) == 0.0
    assert phonation.shimmer([0.9, 1.1, 0.9, 1.1]) == pytest.approx(20.0)
    with pytest.raises(InvalidAmplitude):
        phonation.shimmer([0.9, 0.0, 1.1])
    assert issubclass(InvalidAmplitude, TooFewCycles)


def test_quotient_examples():
    assert phonation.apq([0.5] * 9) == 0.0 and phonation.ppq([0.01] * 9) == 0.0
    seq = [1, 1, 1, 1, 2, 1, 1, 1, 1]
    a = phonation.apq(seq, 5)
    assert 0 < a < phonation.shimmer(seq)
    with pytest.raises(TooFewCycles):
        phonation.apq([1, 1, 1, 1], 5)
    with pytest.raises(TooFewCycles):
        phonation.ppq([0.01] * 4, 5)


@given(st.lists(positive, min_size=2, max_size=50), st.floats(0.001, 1000))
def test_ratio_measures_scale_invariant(v, c):
    assert phonation.jitter(np.multiply(v, c)) == pytest.approx(phonation.jitter(v), rel=1e-9, abs=1e-9)
    assert phonation.shimmer(np.multiply(v, c)) == pytest.approx(phonation.shimmer(v), rel=1e-9, abs=1e-9)


@given(st.lists(positive, min_size=5, max_size=50))
def test_apq_within_twice_shimmer(v):
    assert phonation.apq(v, 5) <= 2 * phonation.shimmer(v) + 1e-9


def test_jitter_recovered_from_synthetic_vowel():
    for s in range(10):
        f = feats(SynthSpec(f0_hz=150, jitter_pct=3.0, seed=s))
        assert 2.0 <= f[KEY + "avg Jitter"] <= 4.0


@pytest.mark.xfail(strict=True, reason="period jitter shifts the phase of formant ringing "
                   "carried into the next cycle, which reads as ~3% amplitude shimmer")
def test_jittered_vowel_shows_little_shimmer():
    for s in range(5):
        assert feats(SynthSpec(f0_hz=150, jitter_pct=3.0, seed=s))[KEY + "avg Shimmer"] <= 1.0


def test_periodic_vowel_has_no_perturbation():
    f = feats(SynthSpec(f0_hz=150, duration_s=5.0, snr_db=None))
    assert f[KEY + "avg Jitter"] <= 0.2 and f[KEY + "avg Shimmer"] <= 0.2


def test_alternating_shimmer_on_extracted_cycles():
    amps = np.tile([0.9, 1.1], 100)
    seg, _ = synth_from_cycles(np.full(200, 1 / 150), amps, amplitude_stage="output")
    runs = phonation.extract_cycles(seg.samples, 16000, dsp.estimate_f0(seg))
    a = np.concatenate([r.amplitudes for r in runs])
    assert abs(phonation.shimmer(a) - 20.0) <= 2.0


def test_silent_section_is_all_missing():
    f = phonation.phonation_features(AudioSegment(np.zeros(32000), 16000, SectionId.S4_Conversation))
    assert len(f) == 42 and all(np.isnan(v) for v in f.values())
    assert all(k.startswith("Section4.wav/phonation/") for k in f)


def test_feature_names_and_signs():
    f = feats(SynthSpec(jitter_pct=1.5, shimmer_pct=3.0, seed=7))
    assert len(f) == 42 and KEY + "avg apq" in f
    for d in ("Jitter", "Shimmer", "apq", "ppq"):
        assert f[KEY + f"min {d}"] >= 0


def test_jitter_monotone_in_injection():
    for s in range(10):
        lo = feats(SynthSpec(jitter_pct=1.0, seed=s))[KEY + "avg Jitter"]
        hi = feats(SynthSpec(jitter_pct=4.0, seed=s))[KEY + "avg Jitter"]
        assert hi > lo


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_quotients_non_negative_on_synthetic(seed):
    rng = np.random.default_rng(seed)
    f = feats(SynthSpec(f0_hz=float(rng.uniform(90, 250)), jitter_pct=float(rng.uniform(0, 3)),
                        shimmer_pct=float(rng.uniform(0, 6)), seed=seed, duration_s=1.0))
    for d in ("Jitter", "Shimmer", "apq", "ppq"):
        v = f[KEY + f"min {d}"]
        assert np.isnan(v) or v >= 0
