"""Vocal-fold stability descriptors: F0 derivatives, jitter, shimmer, the
period/amplitude perturbation quotients and log-energy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import dsp
from .audio import resample
from .config import ExtractionConfig
from .errors import InvalidAmplitude, TooFewCycles

DESCRIPTORS = ("DF0", "DDF0", "Jitter", "Shimmer", "apq", "ppq", "logE")


def _positive(values, name, err=TooFewCycles, minimum=2):
    v = np.asarray(values, dtype=np.float64)
    if v.size < minimum:
        raise TooFewCycles(f"{name}: need at least {minimum} cycles, got {v.size}")
    if np.any(~np.isfinite(v)) or np.any(v <= 0):
        raise err(f"{name}: values must be finite and > 0")
    return v


def local_perturbation(values) -> np.ndarray:
    """Per-cycle |v_i - v_{i-1}| / mean(v) * 100 for i >= 1."""
    v = np.asarray(values, dtype=np.float64)
    return np.abs(np.diff(v)) / v.mean() * 100.0


def quotient_perturbation(values, k: int = 5) -> np.ndarray:
    """Per-cycle |v_i - mean(k-neighbourhood of i)| / mean(v) * 100.

    The neighbourhood is centred on i, includes i, and is clipped at the
    sequence ends, so every cycle gets a value.
    """
    v = np.asarray(values, dtype=np.float64)
    if k < 1 or k % 2 == 0:
        raise ValueError("k must be a positive odd integer")
    h = k // 2
    # differences to the neighbours rather than a running sum, so a
    # constant sequence gives exactly zero
    pad = np.pad(v, h, constant_values=np.nan)
    win = sliding_window_view(pad, 2 * h + 1) - v[:, None]
    dev = np.nanmean(win, axis=1)
    return np.abs(dev) / v.mean() * 100.0


def jitter(periods_s) -> float:
    """Local jitter in percent: mean |T_i - T_{i-1}| / mean(T) * 100."""
    return float(local_perturbation(_positive(periods_s, "jitter")).mean())


def shimmer(amplitudes) -> float:
    """Local shimmer in percent: mean |A_i - A_{i-1}| / mean(A) * 100."""
    return float(local_perturbation(_positive(amplitudes, "shimmer", InvalidAmplitude)).mean())


def apq(amplitudes, k: int = 5) -> float:
    """Amplitude perturbation quotient over a k-cycle neighbourhood, percent."""
    v = _positive(amplitudes, "apq", InvalidAmplitude, minimum=k)
    return float(quotient_perturbation(v, k).mean())


def ppq(periods_s, k: int = 5) -> float:
    """Period perturbation quotient over a k-cycle neighbourhood, percent."""
    v = _positive(periods_s, "ppq", minimum=k)
    return float(quotient_perturbation(v, k).mean())


@dataclass
class CycleRun:
    onsets: np.ndarray  # seconds
    periods: np.ndarray  # seconds
    amplitudes: np.ndarray  # peak |x| per cycle


def voiced_runs(voiced: np.ndarray) -> list[tuple[int, int]]:
    """Maximal [start, stop) index ranges where ``voiced`` is true."""
    v = np.concatenate([[False], np.asarray(voiced, dtype=bool), [False]])
    d = np.diff(v.astype(np.int8))
    return list(zip(np.nonzero(d == 1)[0].tolist(), np.nonzero(d == -1)[0].tolist()))


def extract_cycles(x: np.ndarray, rate: int, contour: dsp.F0Contour,
                   min_corr: float = 0.5) -> list[CycleRun]:
    """Pitch cycles inside each voiced run of the contour.

    The first marker sits on the largest |x| of the run's first period,
    which for voiced speech is the excitation at glottal closure.  Each
    cycle length is the lag (within +/-25 % of the local 1/f0) that best
    aligns the waveform around the marker (-0.15 to +0.5 periods) with the
    next cycle, refined parabolically, so periods carry sub-sample
    precision.  The cycle amplitude is the maximum |x| over the cycle
    window, which starts 0.15 periods before the marker.
    """
    x = np.asarray(x, dtype=np.float64)
    hop = contour.hop_s * rate
    flen = contour.frame_len_s * rate
    centers = contour.times * rate
    runs = []
    for a, b in voiced_runs(contour.voiced):
        start = int(round(a * hop))
        stop = min(len(x), int(round((b - 1) * hop + flen)))
        fc = centers[a:b]
        per = rate / contour.f0_hz[a:b]

        def local_period(pos):
            return float(np.interp(pos, fc, per))

        T = local_period(start)
        Ti = int(round(T))
        if start + 3 * Ti >= stop:
            continue
        mf = float(start + Ti // 4 + int(np.argmax(np.abs(x[start + Ti // 4:start + Ti // 4 + Ti]))))
        onsets, periods, amps = [], [], []
        while True:
            # the marker is kept fractional so rounding does not drift its phase
            m = int(round(mf))
            T = local_period(m)
            pre = int(round(0.15 * T))
            post = int(round(0.5 * T))
            lmin = max(2, int(np.floor(0.75 * T)))
            lmax = int(np.ceil(1.25 * T))
            if m - pre < 0 or m + lmax + post + 1 > stop or m + int(round(T)) > stop:
                break
            tpl = x[m - pre:m + post]
            base = m - pre + lmin - 1
            cand = sliding_window_view(x[base:base + lmax - lmin + 3 + pre + post - 1], pre + post)
            num = cand @ tpl
            den = np.sqrt(np.einsum("ij,ij->i", cand, cand) * np.dot(tpl, tpl))
            corr = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
            j = int(np.argmax(corr[1:-1])) + 1
            if corr[j] < min_corr:
                if len(periods) >= 2:
                    runs.append(CycleRun(np.array(onsets), np.array(periods), np.array(amps)))
                onsets, periods, amps = [], [], []
                mf += T
                continue
            d, _ = dsp._parabolic(corr[j - 1], corr[j], corr[j + 1])
            # lag of the best match relative to the integer marker
            P = lmin - 1 + j + d
            onsets.append((mf - pre) / rate)
            periods.append(P / rate)
            amps.append(float(np.abs(x[m - pre:m - pre + int(round(P))]).max()))
            mf += P
        if len(periods) >= 2:
            runs.append(CycleRun(np.array(onsets), np.array(periods), np.array(amps)))
    return runs


def frame_descriptors(seg, config: ExtractionConfig = ExtractionConfig(),
                      contour: dsp.F0Contour | None = None) -> np.ndarray:
    """(n_voiced_frames, 7) matrix in DESCRIPTORS order; NaN where a
    descriptor is undefined for a frame (e.g. DF0 at a run start)."""
    seg = resample(seg, config.analysis_rate)
    x, rate = seg.samples, seg.sample_rate
    if contour is None:
        contour = dsp.estimate_f0(seg, config=config.f0)
    f0 = contour.f0_hz
    voiced = f0 > 0
    n = len(f0)
    out = np.full((n, len(DESCRIPTORS)), np.nan)
    if not voiced.any():
        return out[:0]

    df0 = np.full(n, np.nan)
    both = voiced[1:] & voiced[:-1]
    df0[1:][both] = np.diff(f0)[both]
    ddf0 = np.full(n, np.nan)
    ddf0[1:] = np.diff(df0)
    out[:, 0] = df0
    out[:, 1] = ddf0

    k = config.perturbation_k
    cyc_on, cyc_vals = [], []
    for run in extract_cycles(x, rate, contour, config.min_cycle_corr):
        jit = np.concatenate([[np.nan], local_perturbation(run.periods)])
        shim = np.concatenate([[np.nan], local_perturbation(run.amplitudes)])
        if len(run.periods) >= k:
            a = quotient_perturbation(run.amplitudes, k)
            p = quotient_perturbation(run.periods, k)
        else:
            a = p = np.full(len(run.periods), np.nan)
        cyc_on.append(run.onsets)
        cyc_vals.append(np.column_stack([jit, shim, a, p]))
    if cyc_on:
        on = np.concatenate(cyc_on)
        vals = np.vstack(cyc_vals)
        frame_idx = np.floor(on / contour.hop_s).astype(int)
        # a cycle belongs to every frame whose window contains its onset
        span = int(np.ceil(contour.frame_len_s / contour.hop_s))
        sums = np.zeros((n, 4))
        counts = np.zeros((n, 4))
        fin = np.isfinite(vals)
        v0 = np.where(fin, vals, 0.0)
        for back in range(span):
            fi = frame_idx - back
            inside = (fi >= 0) & (fi < n) & (on < fi * contour.hop_s + contour.frame_len_s)
            np.add.at(sums, fi[inside], v0[inside])
            np.add.at(counts, fi[inside], fin[inside])
        with np.errstate(invalid="ignore"):
            out[:, 2:6] = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)

    frames = dsp.frame_signal(x, contour.frame_len_s, contour.hop_s, rate=rate)
    out[:, 6] = dsp.frame_energies(frames)[:n]
    return out[voiced]


def phonation_features(seg, config: ExtractionConfig = ExtractionConfig(),
                       contour: dsp.F0Contour | None = None) -> dict[str, float]:
    """Six functionals of each of the 7 descriptors over voiced frames.

    Keys are "<Section>.wav/phonation/<functional> <descriptor>".  A
    descriptor with no defined value (e.g. an all-silent section) yields NaN
    for its six entries.
    """
    prefix = f"{seg.section.filename}/phonation/"
    mat = frame_descriptors(seg, config, contour)
    out = {}
    for j, desc in enumerate(DESCRIPTORS):
        col = mat[:, j]
        col = col[np.isfinite(col)]
        fn = dsp.functionals(col) if col.size else dsp.nan_functionals()
        for fname, val in zip(dsp.FUNCTIONAL_NAMES, fn.as_tuple()):
            out[f"{prefix}{fname} {desc}"] = val
    return out
