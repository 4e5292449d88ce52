"""Shared builders for the test suite."""

import io
import wave

import numpy as np

from hfvoice.features import FeatureMatrix
from hfvoice.synth import ClassSpec, CohortSpec

RATE = 16000

# class-separated jitter and open quotient: the separable cohort
SEPARABLE = CohortSpec(
    n_patients=30, seed=3, label_balance=0.5,
    class0=ClassSpec(jitter_pct=(1.0, 0.2), oq=(0.5, 0.03)),
    class1=ClassSpec(jitter_pct=(4.0, 0.4), oq=(0.75, 0.03)),
)


def null_spec(seed, n=30):
    return CohortSpec(n_patients=n, seed=seed, label_balance=0.5,
                      class0=ClassSpec(), class1=ClassSpec())


# weak class difference only: LOOCV well short of perfect
MARGINAL = CohortSpec(
    n_patients=30, seed=11, label_balance=0.5,
    class0=ClassSpec(jitter_pct=(1.0, 0.3), oq=(0.6, 0.04)),
    class1=ClassSpec(jitter_pct=(1.3, 0.3), oq=(0.63, 0.04)),
)


def sine(freq, dur=1.0, rate=RATE, amp=0.5, phase=0.0):
    t = np.arange(int(round(dur * rate))) / rate
    return amp * np.sin(2 * np.pi * freq * t + phase)


def wav_bytes(frames: np.ndarray, rate: int, nch: int = 1, width: int = 2) -> bytes:
    buf = io.BytesIO()
    with wave.open(buf, "wb") as w:
        w.setnchannels(nch)
        w.setsampwidth(width)
        w.setframerate(rate)
        w.writeframes(frames.tobytes())
    return buf.getvalue()


def float32_wav(x: np.ndarray, rate: int) -> bytes:
    """Minimal IEEE-float (format tag 3) WAV file."""
    data = np.asarray(x, dtype="<f4").tobytes()
    fmt = (np.array([3, 1], "<u2").tobytes() + np.array([rate, rate * 4], "<u4").tobytes()
           + np.array([4, 32], "<u2").tobytes())
    body = b"WAVE" + b"fmt " + len(fmt).to_bytes(4, "little") + fmt
    body += b"data" + len(data).to_bytes(4, "little") + data
    return b"RIFF" + len(body).to_bytes(4, "little") + body


def planted(seed, n=30, n_cols=200, n_planted=12, d=2.0):
    """n x n_cols standard-normal matrix; the first n_planted columns are
    shifted by d in class 1.  Returns (X, y, names, planted names)."""
    rng = np.random.default_rng(seed)
    y = np.zeros(n, dtype=int)
    y[: n // 2] = 1
    y = y[rng.permutation(n)]
    X = rng.standard_normal((n, n_cols))
    X[:, :n_planted] += d * y[:, None]
    names = [f"Section1.wav/phonation/avg c{j:03d}" for j in range(n_cols)]
    return X, y, names, set(names[:n_planted])


def planted_matrix(seed, **kw) -> FeatureMatrix:
    X, y, names, _ = planted(seed, **kw)
    return FeatureMatrix(names, X, y, [f"P{i:03d}" for i in range(len(y))])


def clinical_column(labels, seed=0, target_std=9800.0):
    """Class-dependent values whose population std is exactly target_std."""
    rng = np.random.default_rng(seed)
    y = np.asarray(labels)
    v = np.where(y == 1, 3.0, 0.0) + rng.standard_normal(len(y))
    v = (v - v.mean()) / v.std()
    return 25000.0 + target_std * v
