"""Glottal-source descriptors of sustained vowels.

The source is recovered by iterative adaptive inverse filtering (IAIF) with
frame-wise filters; glottal closure instants (GCIs) are the most negative
peaks of the vocal-tract inverse-filtered signal, i.e. of the estimated flow
derivative.  Per-cycle opening quotient, normalized amplitude quotient,
harmonic richness factor and flow peak are summarised per analysis window
and then across windows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import butter, lfilter, sosfiltfilt

from . import dsp
from .audio import AudioSegment, SectionId, resample
from .config import ExtractionConfig, GlottalConfig
from .errors import DegenerateFrame, InsufficientVoicing, WrongSection
from .phonation import voiced_runs

DESCRIPTORS = ("var GCI", "avg OQ", "var OQ", "avg NAQ", "var NAQ",
               "avg HRF", "var HRF", "avg flowpeak", "var flowpeak")
FUNCTIONAL_NAMES = tuple(f"global {f}" for f in dsp.FUNCTIONAL_NAMES)
VOWEL_SECTIONS = (SectionId.S2_VowelA, SectionId.S3_VowelI)


@dataclass(frozen=True, eq=False)
class GlottalCycleParams:
    gci_times_s: np.ndarray
    oq: np.ndarray  # per cycle, between consecutive GCIs
    naq: np.ndarray
    hrf_db: np.ndarray
    flow_peak: np.ndarray


def _frame_filters(x, rate, order, frame_s, hop_s, pre=None, lag_window_hz=None):
    """LPC polynomials of Hann-windowed frames centred every hop.

    ``pre`` optionally maps the raw signal before analysis.  Frames with no
    energy inherit the nearest usable filter; if none is usable the signal
    is degenerate.
    """
    L, H = dsp.frame_lengths(rate, frame_s, hop_s)
    y = x if pre is None else pre
    n_blocks = int(np.ceil(len(x) / H))
    pad = np.pad(y, (L // 2, L))
    win = np.hanning(L + 2)[1:-1]
    frames = sliding_window_view(pad, L)[H // 2:H // 2 + n_blocks * H:H] * win
    nfft = 1 << int(np.ceil(np.log2(2 * L)))
    F = np.fft.rfft(frames, nfft, axis=1)
    R = np.fft.irfft(F * np.conj(F), nfft, axis=1)[:, :order + 1]
    if lag_window_hz:
        k = np.arange(order + 1)
        R = R * np.exp(-0.5 * (2 * np.pi * lag_window_hz * k / rate) ** 2)
    coefs = dsp.levinson_batch(R, order)
    coefs[np.einsum("ij,ij->i", frames, frames) <= 1e-12 * L] = np.nan
    good = np.nonzero(np.isfinite(coefs[:, 0]))[0]
    if good.size == 0:
        raise DegenerateFrame("no frame with usable energy for linear prediction")
    nearest = good[np.clip(np.searchsorted(good, np.arange(n_blocks)), 0, good.size - 1)]
    prev = good[np.clip(np.searchsorted(good, np.arange(n_blocks)) - 1, 0, good.size - 1)]
    pick = np.where(np.abs(prev - np.arange(n_blocks)) < np.abs(nearest - np.arange(n_blocks)),
                    prev, nearest)
    return coefs[pick], H


def _apply_varying_fir(x, coefs, hop):
    """FIR filtering where block b of ``hop`` samples uses coefs[b]."""
    order = coefs.shape[1] - 1
    past = sliding_window_view(np.pad(x, (order, 0)), order + 1)[:, ::-1]
    block = np.minimum(np.arange(len(x)) // hop, len(coefs) - 1)
    return np.einsum("ij,ij->i", past, coefs[block])


def _integrate(x, leak):
    return lfilter([1.0], [1.0, -leak], x)


def iaif(seg, config: GlottalConfig = GlottalConfig(), rate: int | None = None):
    """Iterative adaptive inverse filtering.

    Returns (flow, flow_derivative) at the input rate.  Per analysis frame:
    an order-1 fit of the speech estimates the glottal tilt, which is
    removed before a vocal-tract fit of order rate/1000 + 2; inverse
    filtering and leaky integration give a first flow estimate, whose
    order-``glottal_order`` fit is removed from the speech for the final
    vocal-tract fit.  The final vocal-tract inverse filter yields the flow
    derivative, and its leaky integral, high-passed at ``highpass_hz``, the
    flow.
    """
    x, rate = dsp._samples_and_rate(seg, rate)
    if len(x) == 0 or not np.any(x):
        raise DegenerateFrame("silent input")
    sos = butter(2, config.highpass_hz, btype="highpass", fs=rate, output="sos")
    x = sosfiltfilt(sos, x) if len(x) > 15 else x - x.mean()
    p_vt = int(rate // 1000) + 2
    fr, hp, leak = config.lpc_frame_s, config.lpc_hop_s, config.leak

    g1, H = _frame_filters(x, rate, 1, fr, hp)
    y1 = _apply_varying_fir(x, g1, H)
    vt1, _ = _frame_filters(x, rate, p_vt, fr, hp, pre=y1)
    flow1 = _integrate(_apply_varying_fir(x, vt1, H), leak)
    g2, _ = _frame_filters(x, rate, config.glottal_order, fr, hp, pre=flow1)
    y2 = _integrate(_apply_varying_fir(x, g2, H), leak)
    vt2, _ = _frame_filters(x, rate, p_vt, fr, hp, pre=y2)
    dflow = _apply_varying_fir(x, vt2, H)
    flow = _integrate(dflow, leak)
    if len(flow) > 15:
        flow = sosfiltfilt(sos, flow)
    return flow, dflow


def _voiced_seconds(contour: dsp.F0Contour) -> float:
    return float(contour.voiced.sum() * contour.hop_s)


def detect_gci(seg, f0: dsp.F0Contour | None = None, config: GlottalConfig = GlottalConfig(),
               dflow: np.ndarray | None = None, rate: int | None = None) -> np.ndarray:
    """Glottal closure instants in seconds, strictly increasing.

    Within each voiced run the first GCI is the most negative residual
    sample of the first local period; each next one is the most negative
    sample within +/- ``gci_search`` of one local period after it, refined
    by a parabola through the neighbouring samples.
    """
    x, rate = dsp._samples_and_rate(seg, rate)
    if f0 is None:
        f0 = dsp.estimate_f0(x, rate=rate)
    if _voiced_seconds(f0) < config.min_voiced_s:
        raise InsufficientVoicing(
            f"{_voiced_seconds(f0):.3f} s voiced, need {config.min_voiced_s} s")
    if dflow is None:
        dflow = iaif(x, config, rate=rate)[1]
    e = np.asarray(dflow, dtype=np.float64)

    hop = f0.hop_s * rate
    centers = f0.times * rate
    gcis = []
    for a, b in voiced_runs(f0.voiced):
        start = int(round(a * hop))
        stop = min(len(e), int(round((b - 1) * hop + f0.frame_len_s * rate)))
        fc = centers[a:b]
        per = rate / f0.f0_hz[a:b]
        T = float(np.interp(start, fc, per))
        if start + 2 * T >= stop:
            continue
        pos = start + int(np.argmin(e[start:start + int(round(T))]))
        while True:
            if 0 < pos < len(e) - 1:
                d, _ = dsp._parabolic(-e[pos - 1], -e[pos], -e[pos + 1])
            else:
                d = 0.0
            t = (pos + d) / rate
            if not gcis or t > gcis[-1]:
                gcis.append(t)
            T = float(np.interp(pos, fc, per))
            lo = pos + int(np.ceil((1 - config.gci_search) * T))
            hi = pos + int(np.floor((1 + config.gci_search) * T)) + 1
            if hi > stop:
                break
            pos = lo + int(np.argmin(e[lo:hi]))
    return np.asarray(gcis)


def _harmonic_richness(flow, rate, start, stop, T, n_harmonics):
    """HRF in dB from a Hann window over three cycles centred on one."""
    c = 0.5 * (start + stop)
    half = 1.5 * T
    lo, hi = int(np.floor(c - half)), int(np.ceil(c + half))
    if lo < 0 or hi > len(flow):
        return np.nan
    seg = flow[lo:hi] - flow[lo:hi].mean()
    seg = seg * np.hanning(len(seg) + 2)[1:-1]
    nfft = max(4096, 1 << int(np.ceil(np.log2(8 * len(seg)))))
    mag = np.abs(np.fft.rfft(seg, nfft))
    f0 = rate / T
    amps = []
    for k in range(1, n_harmonics + 1):
        if k * f0 >= rate / 2:
            break
        bin_ = int(round(k * f0 * nfft / rate))
        if not 1 <= bin_ < len(mag) - 1:
            break
        _, h = dsp._parabolic(mag[bin_ - 1], mag[bin_], mag[bin_ + 1])
        amps.append(max(h, 0.0))
    if len(amps) < 2 or amps[0] <= 0:
        return np.nan
    rest = sum(amps[1:])
    if rest <= 0:
        return np.nan
    return float(20.0 * np.log10(rest / amps[0]))


def _last_crossing(y, level):
    """Fractional index where y last rises through ``level``."""
    below = np.nonzero(y[:-1] < level)[0]
    if below.size == 0:
        return None
    k = int(below[-1])
    if y[k + 1] < level:
        return None
    return k + (level - y[k]) / (y[k + 1] - y[k])


def cycle_params(flow, dflow, gci_s, rate, config: GlottalConfig = GlottalConfig()) -> GlottalCycleParams:
    """OQ, NAQ, HRF and peak-to-peak flow for each pair of consecutive GCIs.

    A cycle runs from one closure to the next.  The flow peak is its
    maximum.  The opening instant, where the flow leaves its minimum, is
    found on the rising edge before the peak: the line through the
    crossings of the two ``opening_levels`` (fractions of the flow range
    above the minimum) is extrapolated down to the closed-phase level (the
    median flow before the edge), so ripple left in the closed phase does
    not move it.  Cycles longer than twice the
    median spacing (run breaks) are skipped.
    """
    g = np.asarray(gci_s) * rate
    lo_lv, hi_lv = config.opening_levels
    keep_t, oq, naq, hrf, fp = [], [], [], [], []
    if len(g) < 2:
        empty = np.zeros(0)
        return GlottalCycleParams(np.asarray(gci_s, dtype=float), empty, empty, empty, empty)
    med = float(np.median(np.diff(g)))
    for i in range(len(g) - 1):
        a, b = int(np.ceil(g[i])), int(np.floor(g[i + 1]))
        T = g[i + 1] - g[i]
        if T > 2 * med or b - a < 8 or b >= len(flow):
            continue
        f = flow[a:b + 1]
        ipk = int(np.argmax(f))
        if ipk < 2:
            continue
        fmax = f[ipk]
        fmin = f[:ipk + 1].min()
        span = fmax - fmin
        dmin = dflow[a:b + 1].min()
        if span <= 0 or dmin >= 0:
            continue
        rise = (f[:ipk + 1] - fmin) / span
        t_lo = _last_crossing(rise, lo_lv)
        t_hi = _last_crossing(rise, hi_lv)
        if t_lo is None or t_hi is None or t_hi <= t_lo:
            continue
        # closed-phase level: median of the flow before the rising edge
        base = float(np.median(rise[:max(1, int(t_lo))]))
        t_open = max(0.0, t_lo - (lo_lv - base) * (t_hi - t_lo) / (hi_lv - lo_lv))
        q = (ipk - t_open) / T
        if not 0 < q <= 1:
            continue
        keep_t.append(g[i] / rate)
        oq.append(q)
        naq.append(span / (abs(dmin) * T))
        hrf.append(_harmonic_richness(flow, rate, g[i], g[i + 1], T, config.n_harmonics))
        fp.append(span)
    arr = np.asarray
    return GlottalCycleParams(arr(keep_t), arr(oq), arr(naq), arr(hrf), arr(fp))


def window_descriptors(gci_s, params: GlottalCycleParams, duration_s: float,
                       config: GlottalConfig = GlottalConfig()) -> np.ndarray:
    """(n_windows, 9) matrix in DESCRIPTORS order.

    Cycles are assigned to windows of ``window_s`` every ``hop_s`` by their
    starting GCI.  "var" descriptors are standard deviations; the GCI one is
    the std of consecutive GCI differences in milliseconds.  Windows with
    fewer than three GCIs or two cycles are dropped.
    """
    gci_s = np.asarray(gci_s)
    t = params.gci_times_s
    rows = []
    n_win = max(1, int(np.floor((duration_s - config.window_s) / config.hop_s)) + 1)
    for w in range(n_win):
        a = w * config.hop_s
        b = a + config.window_s
        g = gci_s[(gci_s >= a) & (gci_s < b)]
        sel = (t >= a) & (t < b)
        if len(g) < 3 or sel.sum() < 2:
            continue
        d = np.diff(g) * 1000.0
        row = [np.std(d)]
        for v in (params.oq[sel], params.naq[sel], params.hrf_db[sel], params.flow_peak[sel]):
            v = v[np.isfinite(v)]
            row += [np.mean(v), np.std(v)] if v.size else [np.nan, np.nan]
        rows.append(row)
    return np.asarray(rows, dtype=np.float64).reshape(-1, len(DESCRIPTORS))


def glottal_features(seg: AudioSegment, config: ExtractionConfig = ExtractionConfig(),
                     contour: dsp.F0Contour | None = None) -> dict[str, float]:
    """54 named values: six across-window functionals of nine descriptors.

    Keys look like "Section2.wav/glottal/global avg avg HRF".  Only the
    sustained-vowel sections are accepted.
    """
    if seg.section not in VOWEL_SECTIONS:
        raise WrongSection(f"glottal features need a sustained vowel, got {seg.section.filename}",
                           section=int(seg.section))
    seg = resample(seg, config.analysis_rate)
    x, rate = seg.samples, seg.sample_rate
    gc = config.glottal
    if contour is None:
        contour = dsp.estimate_f0(seg, config=config.f0)
    if _voiced_seconds(contour) < gc.min_voiced_s:
        raise InsufficientVoicing(
            f"{_voiced_seconds(contour):.3f} s voiced, need {gc.min_voiced_s} s",
            section=int(seg.section))
    flow, dflow = iaif(x, gc, rate=rate)
    gci = detect_gci(x, contour, gc, dflow=dflow, rate=rate)
    params = cycle_params(flow, dflow, gci, rate, gc)
    mat = window_descriptors(gci, params, seg.duration_s, gc)
    prefix = f"{seg.section.filename}/glottal/"
    out = {}
    for j, desc in enumerate(DESCRIPTORS):
        col = mat[:, j]
        col = col[np.isfinite(col)]
        fn = dsp.functionals(col) if col.size else dsp.nan_functionals()
        for fname, val in zip(FUNCTIONAL_NAMES, fn.as_tuple()):
            out[f"{prefix}{fname} {desc}"] = val
    return out
