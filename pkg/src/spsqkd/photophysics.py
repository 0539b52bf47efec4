"""
Emitter characterisation estimators.

* pulsed g2(0) from an HBT coincidence histogram, by fitting a Lorentzian to
  every peak of the comb and taking the ratio of the zero-delay peak area to
  the mean side-peak area;
* three-level saturation fit, I = I_sat * P / (P + P_sat);
* photostability statistics of a long intensity trace.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .errors import EstimationError
from .fitting import levenberg_marquardt

DEFAULT_SIDE_PEAKS = 6
DEFAULT_BLINK_THRESHOLD = 0.3
BASELINE_MODES = ("fit", "valley", "none")


# -- HBT histogramming -------------------------------------------------------

@dataclass(frozen=True)
class HBTHistogram:
    """Coincidence counts versus delay (ns)."""

    bin_centers: np.ndarray
    counts: np.ndarray
    rep_period: float
    dropped: int = 0

    def __post_init__(self) -> None:
        t = np.asarray(self.bin_centers, dtype=float)
        c = np.asarray(self.counts, dtype=float)
        object.__setattr__(self, "bin_centers", t)
        object.__setattr__(self, "counts", c)
        if t.ndim != 1 or t.size != c.size or t.size < 8:
            raise ValueError("need matching 1-D arrays of at least 8 bins")
        steps = np.diff(t)
        if np.any(steps <= 0):
            raise ValueError("bin centers must be strictly increasing")
        w = steps.mean()
        if np.max(np.abs(steps - w)) > 1e-9 * abs(w) + 1e-12 * np.max(np.abs(t)):
            raise ValueError("bin centers must be uniformly spaced")
        if np.any(c < 0) or not np.all(np.isfinite(c)):
            raise ValueError("counts must be finite and non-negative")
        if not self.rep_period >= 4 * w:
            raise ValueError(
                f"rep_period {self.rep_period!r} ns is shorter than 4 bin widths ({w!r} ns)")

    @property
    def bin_width(self) -> float:
        return float(np.mean(np.diff(self.bin_centers)))

    def scaled(self, k: float) -> "HBTHistogram":
        return HBTHistogram(self.bin_centers, self.counts * k, self.rep_period, self.dropped)


def bin_coincidences(delay_events: Sequence[float], bin_width: float, window: float,
                     rep_period: Optional[float] = None) -> HBTHistogram:
    """Histogram start-stop delays into bins centred on multiples of
    ``bin_width`` covering ``[-window, +window]``.

    Events with ``|delay| > window`` are dropped and tallied in
    ``HBTHistogram.dropped``.  ``rep_period`` defaults to the full window.
    """
    d = np.asarray(delay_events, dtype=float).ravel()
    if d.size == 0:
        raise ValueError("no coincidence events")
    if not (bin_width > 0 and window > 0):
        raise ValueError("bin_width and window must be positive")
    if 2 * window / bin_width < 8:
        raise ValueError("[-window, window] must span at least 8 bin widths")
    half = int(math.floor(window / bin_width + 0.5))
    keep = np.abs(d) <= window
    idx = np.clip(np.rint(d[keep] / bin_width).astype(np.int64), -half, half) + half
    counts = np.bincount(idx, minlength=2 * half + 1)
    centers = np.arange(-half, half + 1) * bin_width
    return HBTHistogram(centers, counts, rep_period if rep_period else 2 * window,
                        dropped=int(d.size - keep.sum()))


# -- pulsed g2(0) ------------------------------------------------------------

def lorentzian(t, amplitude, half_width, center):
    return amplitude * half_width ** 2 / ((t - center) ** 2 + half_width ** 2)


def lorentzian_area(amplitude: float, half_width: float) -> float:
    return math.pi * amplitude * abs(half_width)


@dataclass
class PeakFit:
    order: int          # multiple of the repetition period
    amplitude: float
    half_width: float
    center: float
    area: float


@dataclass
class G2FitResult:
    g2_zero: float
    g2_uncertainty: float
    peaks: List[PeakFit]
    baseline: float
    baseline_mode: str
    residual_norm: float
    side_peaks_per_side: int
    shared_width: bool
    n_iter: int
    comb_aligned: bool

    @property
    def peak_areas(self):
        return [(p.center, p.area) for p in self.peaks]

    def as_dict(self) -> dict:
        return {
            "g2_zero": self.g2_zero,
            "g2_uncertainty": self.g2_uncertainty,
            "baseline": self.baseline,
            "baseline_mode": self.baseline_mode,
            "residual_norm": self.residual_norm,
            "side_peaks_per_side": self.side_peaks_per_side,
            "shared_width": self.shared_width,
            "n_iter": self.n_iter,
            "comb_aligned": self.comb_aligned,
            "peaks": [vars(p).copy() for p in self.peaks],
        }


def _hwhm_guess(t, y, center, half_window, bin_width):
    sel = np.abs(t - center) < half_window
    if not np.any(sel):
        return bin_width
    ys = y[sel]
    above = np.count_nonzero(ys >= 0.5 * ys.max()) if ys.max() > 0 else 0
    return max(0.5 * above * bin_width, bin_width)


def fit_pulsed_g2(hist: HBTHistogram, side_peaks: int = DEFAULT_SIDE_PEAKS, *,
                  shared_width: bool = False, baseline: str = "fit",
                  xtol: float = 1e-10, max_iter: int = 200) -> G2FitResult:
    """Estimate g2(0) from a pulsed coincidence comb.

    Every peak whose center lies inside the histogram is fitted jointly as a
    Lorentzian (amplitude, half-width, center) on top of one global constant
    background, so neighbouring tails are not mistaken for signal.
    ``baseline`` selects how that constant is found: ``"fit"`` jointly with the
    peaks, ``"valley"`` as the median of the bins half-way between peaks
    (then held fixed), or ``"none"`` for zero.  The reference area is the mean
    of the ``side_peaks`` nearest peaks on each side.
    """
    if baseline not in BASELINE_MODES:
        raise ValueError(f"baseline must be one of {BASELINE_MODES}, got {baseline!r}")
    if side_peaks < 3:
        raise ValueError("need at least 3 side peaks per side")
    t, y = hist.bin_centers, hist.counts
    T, w = hist.rep_period, hist.bin_width
    k_lo = int(math.ceil(t[0] / T))
    k_hi = int(math.floor(t[-1] / T))
    if -k_lo < 3 or k_hi < 3:
        raise EstimationError(
            f"histogram holds {-k_lo} negative and {k_hi} positive side peaks; need 3 each",
            {"negative": -k_lo, "positive": k_hi})
    orders = np.arange(k_lo, k_hi + 1)
    n_pk = orders.size

    valley = np.zeros_like(t, dtype=bool)
    for k in range(k_lo - 1, k_hi + 1):
        valley |= np.abs(t - (k + 0.5) * T) <= max(T / 10, w / 2)
    b_valley = float(np.median(y[valley])) if np.any(valley) else 0.0

    ref = max(orders, key=lambda k: y[np.abs(t - k * T) < T / 2].max(initial=0) if k else -1)
    gamma0 = _hwhm_guess(t, y - b_valley, ref * T, T / 2, w)
    amps0 = []
    for k in orders:
        sel = np.abs(t - k * T) < T / 2
        amps0.append(max(float(y[sel].max(initial=0.0)) - b_valley, 0.0))
    amp_floor = 1e-3 * max(max(amps0), 1.0)
    amps0 = [max(a, amp_floor) for a in amps0]

    fit_b = baseline == "fit"
    b_fixed = {"valley": b_valley, "none": 0.0}.get(baseline, 0.0)
    n_w = 1 if shared_width else n_pk
    # x = [amplitudes..., widths..., centers..., (baseline)]
    x0 = np.concatenate([amps0, np.full(n_w, gamma0), orders * T,
                         [b_valley] if fit_b else []])

    def unpack(x):
        amps = x[:n_pk]
        gams = np.broadcast_to(x[n_pk:n_pk + n_w], (n_pk,))
        cens = x[n_pk + n_w:2 * n_pk + n_w]
        b = x[-1] if fit_b else b_fixed
        return amps, gams, cens, b

    def model(x):
        amps, gams, cens, b = unpack(x)
        out = np.full_like(t, b, dtype=float)
        for a, g, c in zip(amps, gams, cens):
            out += lorentzian(t, a, g, c)
        return out

    def resid(x):
        return model(x) - y

    def jac(x):
        amps, gams, cens, _ = unpack(x)
        J = np.zeros((t.size, x.size))
        for i, (a, g, c) in enumerate(zip(amps, gams, cens)):
            u = t - c
            den = u * u + g * g
            J[:, i] = g * g / den
            dg = a * 2 * g * u * u / (den * den)
            if shared_width:
                J[:, n_pk] += dg
            else:
                J[:, n_pk + i] = dg
            J[:, n_pk + n_w + i] = a * g * g * 2 * u / (den * den)
        if fit_b:
            J[:, -1] = 1.0
        return J

    res = levenberg_marquardt(resid, x0, jac, xtol=xtol, max_iter=max_iter)
    amps, gams, cens, b = unpack(res.x)
    peaks = [PeakFit(int(k), float(a), float(abs(g)), float(c), lorentzian_area(a, g))
             for k, a, g, c in zip(orders, amps, gams, cens)]
    if not res.converged or not np.all(np.isfinite(res.x)):
        raise EstimationError(f"g2 comb fit did not converge: {res.message}",
                              {"peaks": [vars(p) for p in peaks], "n_iter": res.n_iter})

    by_order = {p.order: p for p in peaks}
    side = [by_order[k] for k in range(1, side_peaks + 1) if k in by_order]
    side += [by_order[-k] for k in range(1, side_peaks + 1) if -k in by_order]
    side_areas = np.array([p.area for p in side])
    mean_side = float(side_areas.mean())
    if not mean_side > 0:
        raise EstimationError("side peaks have no area", {"peaks": [vars(p) for p in peaks]})
    center_area = by_order[0].area if 0 in by_order else 0.0
    g2 = max(center_area, 0.0) / mean_side
    ratios = max(center_area, 0.0) / side_areas
    spread = float(np.std(ratios, ddof=1)) if ratios.size > 1 else 0.0
    aligned = all(abs(p.center - p.order * T) <= w / 2 for p in peaks
                  if p.order != 0 and p.area > 0)
    return G2FitResult(
        g2_zero=g2, g2_uncertainty=spread, peaks=peaks, baseline=float(b),
        baseline_mode=baseline, residual_norm=res.residual_norm,
        side_peaks_per_side=side_peaks, shared_width=shared_width,
        n_iter=res.n_iter, comb_aligned=aligned)


def synthetic_comb(rep_period: float = 25.0, bin_width: float = 0.25,
                   half_width: float = 1.0, amplitude: float = 1000.0,
                   center_fraction: float = 1.0, n_side: int = 6,
                   background: float = 0.0, rng=None) -> HBTHistogram:
    """Pulsed comb of identical Lorentzians; the zero-delay peak has
    ``center_fraction`` of the side-peak area.  Poisson noise if ``rng``."""
    span = (n_side + 0.5) * rep_period
    half = int(round(span / bin_width))
    t = np.arange(-half, half + 1) * bin_width
    y = np.full_like(t, background, dtype=float)
    for k in range(-n_side, n_side + 1):
        a = amplitude * (center_fraction if k == 0 else 1.0)
        y += lorentzian(t, a, half_width, k * rep_period)
    if rng is not None:
        y = rng.poisson(y).astype(float)
    return HBTHistogram(t, y, rep_period)


# -- saturation --------------------------------------------------------------

@dataclass(frozen=True)
class SaturationData:
    """Count rate (counts/s) versus excitation power (uW)."""

    powers: np.ndarray
    rates: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.powers, dtype=float)
        r = np.asarray(self.rates, dtype=float)
        object.__setattr__(self, "powers", p)
        object.__setattr__(self, "rates", r)
        if p.ndim != 1 or p.size != r.size:
            raise ValueError("powers and rates must be matching 1-D arrays")
        if p.size < 4:
            raise ValueError("need at least 4 saturation points")
        if np.any(p < 0) or np.any(np.diff(p) <= 0):
            raise ValueError("powers must be non-negative and strictly increasing")
        if np.any(r < 0) or not np.all(np.isfinite(r)):
            raise ValueError("rates must be finite and non-negative")


@dataclass
class SaturationFit:
    i_sat: float
    p_sat: float
    residual_norm: float
    covariance: np.ndarray
    n_iter: int
    weighting: str = "none"

    def model(self, power):
        return saturation_model(power, self.i_sat, self.p_sat)

    def as_dict(self) -> dict:
        return {
            "i_sat": self.i_sat, "p_sat": self.p_sat,
            "i_sat_err": float(math.sqrt(max(self.covariance[0, 0], 0.0))),
            "p_sat_err": float(math.sqrt(max(self.covariance[1, 1], 0.0))),
            "covariance": self.covariance.tolist(),
            "residual_norm": self.residual_norm, "n_iter": self.n_iter,
            "weighting": self.weighting,
        }


def saturation_model(power, i_sat, p_sat):
    return i_sat * power / (power + p_sat)


def saturation_residuals(data: SaturationData, i_sat: float, p_sat: float,
                         weighting: str = "none") -> np.ndarray:
    r = saturation_model(data.powers, i_sat, p_sat) - data.rates
    if weighting == "poisson":
        r = r / np.sqrt(np.maximum(data.rates, 1.0))
    return r


def fit_saturation(data: SaturationData, weighting: str = "none", *,
                   xtol: float = 1e-8, max_iter: int = 200) -> SaturationFit:
    """Least-squares fit of the three-level saturation curve.

    Starts from I_sat = 2 max(rates), P_sat = median(powers).  Optional
    ``weighting="poisson"`` divides residuals by sqrt(counts).
    """
    if weighting not in ("none", "poisson"):
        raise ValueError(f"unknown weighting {weighting!r}")
    P, R = data.powers, data.rates
    if np.ptp(R) <= 1e-12 * max(float(np.max(R)), 1.0):
        raise EstimationError("all rates equal: saturation curve is unidentifiable")
    i0, p0 = 2.0 * float(R.max()), float(np.median(P))
    if p0 <= 0:
        p0 = float(P[P > 0].min())
    wts = 1.0 / np.sqrt(np.maximum(R, 1.0)) if weighting == "poisson" else 1.0

    # fit in units of the starting point to keep the normal equations balanced
    def resid(x):
        return saturation_residuals(data, x[0] * i0, x[1] * p0, weighting)

    def jac(x):
        den = P + x[1] * p0
        J = np.empty((P.size, 2))
        J[:, 0] = i0 * P / den
        J[:, 1] = -x[0] * i0 * P * p0 / (den * den)
        return J * (wts if np.ndim(wts) == 0 else wts[:, None])

    res = levenberg_marquardt(resid, [1.0, 1.0], jac, xtol=xtol, max_iter=max_iter)
    i_sat, p_sat = res.x[0] * i0, res.x[1] * p0
    if not res.converged:
        raise EstimationError(f"saturation fit did not converge: {res.message}",
                              {"i_sat": i_sat, "p_sat": p_sat, "n_iter": res.n_iter})
    if not (i_sat > 0 and p_sat > 0):
        raise EstimationError("saturation fit left the physical region",
                              {"i_sat": i_sat, "p_sat": p_sat})
    units = np.diag([i0, p0])
    cov = units @ res.covariance() @ units
    return SaturationFit(float(i_sat), float(p_sat), res.residual_norm, cov,
                         res.n_iter, weighting)


# -- photostability ----------------------------------------------------------

@dataclass(frozen=True)
class StabilityTrace:
    timestamps: np.ndarray
    intensities: np.ndarray

    def __post_init__(self) -> None:
        t = np.asarray(self.timestamps, dtype=float)
        x = np.asarray(self.intensities, dtype=float)
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "intensities", x)
        if t.ndim != 1 or t.size != x.size or t.size < 2:
            raise ValueError("need matching 1-D arrays with at least 2 samples")
        dt = np.diff(t)
        if np.any(dt <= 0):
            raise ValueError("timestamps must be strictly increasing")
        if np.max(np.abs(dt - dt.mean())) > 0.01 * dt.mean():
            raise ValueError("sampling jitter exceeds 1%")
        if np.any(x < 0):
            raise ValueError("intensities must be non-negative")

    @property
    def sample_period(self) -> float:
        return float(np.mean(np.diff(self.timestamps)))

    @property
    def duration(self) -> float:
        return float(self.timestamps[-1] - self.timestamps[0]) + self.sample_period


@dataclass
class StabilityReport:
    mean: float
    rel_std: float
    window_s: float
    n_windows: int
    max_window_mean: float
    min_window_mean: float
    max_rel_deviation: float
    threshold: float
    blinking: bool
    duration_s: float

    def as_dict(self) -> dict:
        return dict(vars(self))


def stability_stats(trace: StabilityTrace, window_s: float,
                    threshold: float = DEFAULT_BLINK_THRESHOLD) -> StabilityReport:
    """Summarise intensity stability over consecutive windows.

    Blinking is flagged when any full window's mean departs from the global
    mean by more than ``threshold`` (relative).
    """
    if not window_s > 0:
        raise ValueError("window_s must be positive")
    if trace.duration < 10 * window_s:
        raise ValueError(
            f"trace lasts {trace.duration:g} s, need at least 10 windows of {window_s:g} s")
    t = trace.timestamps - trace.timestamps[0]
    x = trace.intensities
    n_full = int(math.floor(trace.duration / window_s + 1e-9))
    idx = np.floor(t / window_s + 1e-9).astype(np.int64)
    keep = idx < n_full
    sums = np.bincount(idx[keep], weights=x[keep], minlength=n_full)
    hits = np.bincount(idx[keep], minlength=n_full)
    wmeans = sums[hits > 0] / hits[hits > 0]
    mean = float(x.mean())
    rel_std = float(x.std(ddof=1) / mean) if mean > 0 else 0.0
    dev = float(np.max(np.abs(wmeans - mean)) / mean) if mean > 0 else 0.0
    return StabilityReport(
        mean=mean, rel_std=rel_std, window_s=float(window_s), n_windows=int(wmeans.size),
        max_window_mean=float(wmeans.max()), min_window_mean=float(wmeans.min()),
        max_rel_deviation=dev, threshold=float(threshold), blinking=dev > threshold,
        duration_s=trace.duration)
