"""Shared signal primitives: framing, pitch tracking, energy, LPC, line fits
and the six summary functionals."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import butter, sosfiltfilt

from .errors import DegenerateAbscissa, DegenerateFrame, EmptyInput, InvalidBand

ENERGY_EPS = 1e-10
REFLECTION_CLAMP = 1.0 - 1e-6
FUNCTIONAL_NAMES = ("avg", "std", "max", "min", "skewness", "kurtosis")


@dataclass(frozen=True)
class F0Config:
    frame_len_s: float = 0.04
    hop_s: float = 0.02
    f0_min: float = 60.0
    f0_max: float = 400.0
    voicing_threshold: float = 0.45
    silence_floor_db: float = -60.0
    silence_rel_db: float = 30.0
    # among local autocorrelation maxima, the shortest lag within this
    # fraction of the best peak wins (guards against period doubling)
    octave_ratio: float = 0.85
    # zero-phase low-pass applied before autocorrelation; None disables
    lowpass_hz: float | None = 900.0
    # frames off the median of their voiced neighbours (within a
    # smooth_frames window) by more than outlier_tol are re-picked near the
    # median lag or unvoiced; smooth_frames = 0 disables
    smooth_frames: int = 7
    outlier_tol: float = 0.2


@dataclass(frozen=True, eq=False)
class F0Contour:
    f0_hz: np.ndarray
    hop_s: float
    frame_len_s: float
    strength: np.ndarray | None = None
    energy_db: np.ndarray | None = None

    @property
    def voiced(self) -> np.ndarray:
        return self.f0_hz > 0

    @property
    def times(self) -> np.ndarray:
        """Frame centre times in seconds."""
        return np.arange(len(self.f0_hz)) * self.hop_s + self.frame_len_s / 2

    def __len__(self):
        return len(self.f0_hz)


@dataclass(frozen=True)
class Functionals:
    avg: float
    std: float
    max: float
    min: float
    skewness: float
    kurtosis: float

    def as_tuple(self):
        return (self.avg, self.std, self.max, self.min, self.skewness, self.kurtosis)


def _samples_and_rate(seg, rate=None):
    if hasattr(seg, "samples"):
        return seg.samples, seg.sample_rate
    if rate is None:
        raise ValueError("sample rate required for raw arrays")
    return np.asarray(seg, dtype=np.float64), int(rate)


def frame_lengths(rate: int, frame_len_s: float, hop_s: float) -> tuple[int, int]:
    return int(round(frame_len_s * rate)), max(1, int(round(hop_s * rate)))


def frame_signal(seg, frame_len_s: float, hop_s: float, rate: int | None = None) -> np.ndarray:
    """Split into overlapping frames; returns a read-only (n_frames, L) view.

    Frame count is floor((N - L) / H) + 1 when N >= L, else zero.
    """
    if not (frame_len_s >= hop_s > 0):
        raise ValueError("need frame_len_s >= hop_s > 0")
    x, rate = _samples_and_rate(seg, rate)
    L, H = frame_lengths(rate, frame_len_s, hop_s)
    if len(x) < L:
        return np.empty((0, L))
    return sliding_window_view(x, L)[::H]


def short_time_log_energy(frame) -> float:
    """10*log10(mean(x^2) + 1e-10), so digital silence reads -100 dB."""
    x = np.asarray(frame, dtype=np.float64)
    if x.size == 0:
        raise EmptyInput("empty frame")
    return float(10.0 * np.log10(np.mean(x * x) + ENERGY_EPS))


def frame_energies(frames: np.ndarray) -> np.ndarray:
    return 10.0 * np.log10(np.mean(frames * frames, axis=1) + ENERGY_EPS)


def _parabolic(y_m, y_0, y_p):
    """Vertex offset and height of the parabola through three points."""
    denom = y_m - 2.0 * y_0 + y_p
    if denom >= 0:
        return 0.0, y_0
    d = 0.5 * (y_m - y_p) / denom
    return d, y_0 - 0.25 * (y_m - y_p) * d


def estimate_f0(seg, f0_min: float | None = None, f0_max: float | None = None,
                config: F0Config = F0Config(), rate: int | None = None) -> F0Contour:
    """Frame-wise autocorrelation pitch tracker with a voicing decision.

    The signal is low-passed (``lowpass_hz``) to keep formant structure
    from decorrelating neighbouring cycles.  Each frame is mean-removed,
    Hann-windowed and its autocorrelation is
    divided by the window's own autocorrelation.  The pitch lag is the
    shortest-lag local maximum within ``octave_ratio`` of the strongest one
    inside [rate/f0_max, rate/f0_min], refined parabolically.  A frame is
    voiced when that peak reaches ``voicing_threshold`` and the frame energy
    is above max(silence_floor_db, median energy - silence_rel_db).
    A voiced frame whose F0 is more than ``outlier_tol`` away from the
    median of its voiced neighbours (``smooth_frames`` window) is re-picked
    at the strongest peak within that tolerance of the median lag, or
    unvoiced if no peak there passes the voicing test.
    """
    x, rate = _samples_and_rate(seg, rate)
    f0_min = config.f0_min if f0_min is None else f0_min
    f0_max = config.f0_max if f0_max is None else f0_max
    if not (0 < f0_min < f0_max < rate / 2):
        raise InvalidBand(f"invalid F0 band [{f0_min}, {f0_max}] at {rate} Hz")
    frames = frame_signal(x, config.frame_len_s, config.hop_s, rate=rate)
    n_frames, L = frames.shape
    f0 = np.zeros(n_frames)
    strength = np.zeros(n_frames)
    if n_frames == 0:
        return F0Contour(f0, config.hop_s, config.frame_len_s, strength, np.zeros(0))

    energy = frame_energies(frames)
    if config.lowpass_hz and config.lowpass_hz < rate / 2 and len(x) > 30:
        sos = butter(4, config.lowpass_hz, fs=rate, output="sos")
        frames = frame_signal(sosfiltfilt(sos, x), config.frame_len_s, config.hop_s, rate=rate)
    floor = max(config.silence_floor_db, float(np.median(energy)) - config.silence_rel_db)

    lag_lo = max(2, int(np.floor(rate / f0_max)))
    lag_hi = min(L - 2, int(np.ceil(rate / f0_min)))
    win = np.hanning(L + 2)[1:-1]
    nfft = 1 << int(np.ceil(np.log2(2 * L)))
    xw = (frames - frames.mean(axis=1, keepdims=True)) * win
    acf = np.fft.irfft(np.abs(np.fft.rfft(xw, nfft, axis=1)) ** 2, nfft, axis=1)[:, : lag_hi + 2]
    wacf = np.fft.irfft(np.abs(np.fft.rfft(win, nfft)) ** 2, nfft)[: lag_hi + 2]
    r0 = acf[:, :1]
    with np.errstate(invalid="ignore", divide="ignore"):
        r = (acf / np.where(r0 > 0, r0, 1.0)) / (wacf / wacf[0])

    def local_peaks(ri, lo, hi):
        band = ri[lo - 1: hi + 2]
        inner = band[1:-1]
        is_peak = (inner > band[:-2]) & (inner >= band[2:])
        return np.nonzero(is_peak)[0] + lo

    def refine(ri, lag):
        d, height = _parabolic(ri[lag - 1], ri[lag], ri[lag + 1])
        return rate / (lag + d), height

    active = (energy >= floor) & (r0[:, 0] > 0)
    for i in np.nonzero(active)[0]:
        ri = r[i]
        peaks = local_peaks(ri, lag_lo, lag_hi)
        if peaks.size == 0:
            continue
        best = ri[peaks].max()
        if best <= 0:
            continue
        lag = int(peaks[np.nonzero(ri[peaks] >= config.octave_ratio * best)[0][0]])
        freq, height = refine(ri, lag)
        strength[i] = min(height, 1.0)
        if height >= config.voicing_threshold and f0_min <= freq <= f0_max:
            f0[i] = freq

    h = config.smooth_frames // 2
    if h > 0:
        idx = np.nonzero(f0 > 0)[0]
        fixed = f0.copy()
        for i in idx:
            near = idx[(idx >= i - h) & (idx <= i + h) & (idx != i)]
            if near.size < 2:
                continue
            med = float(np.median(f0[near]))
            if abs(np.log2(f0[i] / med)) <= np.log2(1.0 + config.outlier_tol):
                continue
            # octave slips and stray edge frames: re-pick near the median
            # lag, or drop the frame when nothing acceptable is there
            fixed[i] = 0.0
            tol = np.log2(1.0 + config.outlier_tol)
            lo = max(lag_lo, int(np.ceil(rate / med / (1.0 + config.outlier_tol))))
            hi = min(lag_hi, int(np.floor(rate / med * (1.0 + config.outlier_tol))))
            if lo > hi:
                continue
            peaks = local_peaks(r[i], lo, hi)
            if peaks.size == 0:
                continue
            lag = int(peaks[np.argmax(r[i][peaks])])
            freq, height = refine(r[i], lag)
            if (height >= config.voicing_threshold and f0_min <= freq <= f0_max
                    and abs(np.log2(freq / med)) <= tol):
                fixed[i] = freq
                strength[i] = min(height, 1.0)
        f0 = fixed
    return F0Contour(f0, config.hop_s, config.frame_len_s, strength, energy)


def levinson(r: np.ndarray, order: int):
    """Levinson-Durbin recursion.

    Returns (a, err, k): inverse-filter polynomial a with a[0] = 1, final
    prediction error power and the reflection coefficients.  Reflection
    coefficients are clamped to |k| <= 1 - 1e-6 so the synthesis filter
    stays minimum phase.
    """
    r = np.asarray(r, dtype=np.float64)
    if not np.isfinite(r[0]) or r[0] <= np.finfo(float).tiny:
        raise DegenerateFrame("zero-energy frame")
    a = np.zeros(order + 1)
    a[0] = 1.0
    k = np.zeros(order)
    err = r[0]
    for m in range(1, order + 1):
        acc = r[m] + np.dot(a[1:m], r[m - 1:0:-1])
        km = -acc / err
        km = min(max(km, -REFLECTION_CLAMP), REFLECTION_CLAMP)
        k[m - 1] = km
        a[1:m] = a[1:m] + km * a[m - 1:0:-1]
        a[m] = km
        err *= 1.0 - km * km
    return a, err, k


def levinson_batch(R: np.ndarray, order: int) -> np.ndarray:
    """Levinson-Durbin over rows of autocorrelations ``R`` (n, >= order+1).

    Same recursion and reflection clamp as :func:`levinson`; rows with no
    energy give NaN polynomials.
    """
    R = np.asarray(R, dtype=np.float64)
    n = R.shape[0]
    ok = np.isfinite(R[:, 0]) & (R[:, 0] > np.finfo(float).tiny)
    a = np.zeros((n, order + 1))
    a[:, 0] = 1.0
    err = np.where(ok, R[:, 0], 1.0)
    for m in range(1, order + 1):
        acc = R[:, m] + np.einsum("ij,ij->i", a[:, 1:m], R[:, m - 1:0:-1])
        km = np.clip(-acc / err, -REFLECTION_CLAMP, REFLECTION_CLAMP)
        a[:, 1:m] = a[:, 1:m] + km[:, None] * a[:, m - 1:0:-1]
        a[:, m] = km
        err = err * (1.0 - km * km)
    a[~ok] = np.nan
    return a


def autocorr(x: np.ndarray, maxlag: int) -> np.ndarray:
    n = len(x)
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    X = np.fft.rfft(x, nfft)
    return np.fft.irfft(X * np.conj(X), nfft)[: maxlag + 1]


def lpc(frame, order: int, lag_window_hz: float | None = None,
        rate: int | None = None) -> np.ndarray:
    """Autocorrelation-method linear prediction.

    The caller applies any analysis window.  Returns ``a`` with a[0] = 1 so
    that ``scipy.signal.lfilter(a, 1, x)`` is the prediction residual.
    ``lag_window_hz`` applies a Gaussian lag window of that spectral
    smoothing width (needs ``rate``), which keeps resonances from locking
    onto individual harmonics of voiced frames.
    """
    x = np.asarray(frame, dtype=np.float64)
    if order < 1:
        raise ValueError("order must be >= 1")
    if len(x) <= order:
        raise ValueError(f"frame of {len(x)} samples too short for order {order}")
    r = autocorr(x, order)
    if lag_window_hz:
        if not rate:
            raise ValueError("lag window needs the sample rate")
        k = np.arange(order + 1)
        r = r * np.exp(-0.5 * (2 * np.pi * lag_window_hz * k / rate) ** 2)
    return levinson(r, order)[0]


def linear_fit(xs, ys) -> tuple[float, float, float]:
    """Least-squares line; returns (slope, intercept, mean squared residual)."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError("xs and ys differ in length")
    if x.size < 2 or np.ptp(x) == 0:
        raise DegenerateAbscissa("need at least two distinct abscissae")
    xm, ym = x.mean(), y.mean()
    dx = x - xm
    slope = float(np.dot(dx, y - ym) / np.dot(dx, dx))
    intercept = float(ym - slope * xm)
    resid = y - (slope * x + intercept)
    return slope, intercept, float(np.mean(resid * resid))


def functionals(values) -> Functionals:
    """Mean, population std, max, min, skewness and excess kurtosis.

    Skewness and kurtosis are 0 for constant input.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise EmptyInput("functionals of an empty sequence")
    mu = v.mean()
    d = v - mu
    m2 = np.mean(d * d)
    # rounding in the mean leaves m2 ~ eps^2 for constant input
    if m2 <= (4 * np.finfo(float).eps * np.abs(v).max()) ** 2:
        std = skew = kurt = 0.0
    else:
        skew = float(np.mean(d ** 3) / m2 ** 1.5)
        kurt = float(np.mean(d ** 4) / m2 ** 2 - 3.0)
        std = float(np.sqrt(m2))
    return Functionals(float(mu), std, float(v.max()), float(v.min()), skew, kurt)


def nan_functionals() -> Functionals:
    nan = float("nan")
    return Functionals(nan, nan, nan, nan, nan, nan)
