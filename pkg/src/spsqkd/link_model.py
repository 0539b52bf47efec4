"""Source and fibre-channel model feeding the finite-key core."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

from .finitekey import KeyRateResult, ProtocolParams, evaluate_key_rate

# Detector and source values the reference link setup leaves open.  Always
# reported in output metadata.
DEFAULT_ETA_DET = 0.6
DEFAULT_P_DARK = 1e-6
DEFAULT_P1 = 0.5


@dataclass(frozen=True)
class SourceModel:
    """Per-trigger photon-number statistics of the emitter.

    The multi-photon bucket is treated as exactly two photons.  ``g2_zero``
    is carried along as metadata only; nothing is inferred from it.
    """

    p1: float = DEFAULT_P1
    p_m: float = 0.07
    r_s: float = 2e7
    g2_zero: Optional[float] = None

    def __post_init__(self) -> None:
        if not (0.0 <= self.p1 <= 1.0):
            raise ValueError(f"p1 must be in [0, 1], got {self.p1!r}")
        if not (0.0 <= self.p_m <= 1.0):
            raise ValueError(f"p_m must be in [0, 1], got {self.p_m!r}")
        if self.p1 + self.p_m > 1.0 + 1e-12:
            raise ValueError(f"p1 + p_m = {self.p1 + self.p_m!r} exceeds 1")
        if not self.r_s > 0.0:
            raise ValueError(f"r_s must be > 0, got {self.r_s!r}")

    @property
    def p0(self) -> float:
        return max(0.0, 1.0 - self.p1 - self.p_m)


@dataclass(frozen=True)
class ChannelModel:
    alpha_db_per_km: float = 3.5
    distance_km: float = 0.0
    eta_det: float = DEFAULT_ETA_DET
    p_dark: float = DEFAULT_P_DARK

    def __post_init__(self) -> None:
        if not self.alpha_db_per_km >= 0.0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha_db_per_km!r}")
        if not self.distance_km >= 0.0:
            raise ValueError(f"distance must be >= 0, got {self.distance_km!r}")
        if not (0.0 < self.eta_det <= 1.0):
            raise ValueError(f"eta_det must be in (0, 1], got {self.eta_det!r}")
        if not (0.0 <= self.p_dark < 1.0):
            raise ValueError(f"p_dark must be in [0, 1), got {self.p_dark!r}")

    @property
    def eta_channel(self) -> float:
        return transmittance(self.alpha_db_per_km, self.distance_km)

    @property
    def eta(self) -> float:
        """Total per-photon survival probability, fibre times detector."""
        return self.eta_channel * self.eta_det


def transmittance(alpha: float, d: float) -> float:
    """Fibre transmittance for ``alpha`` dB/km over ``d`` km."""
    if alpha < 0.0 or d < 0.0:
        raise ValueError("alpha and d must be non-negative")
    return 10.0 ** (-alpha * d / 10.0)


def detection_probability(src: SourceModel, ch: ChannelModel,
                          eta: Optional[float] = None) -> float:
    """Probability of at least one click per pulse.

    ``eta`` overrides the channel's fibre-times-detector efficiency.
    """
    if eta is None:
        eta = ch.eta
    miss = 1.0 - eta
    no_photon_click = src.p0 + src.p1 * miss + src.p_m * miss * miss
    return 1.0 - no_photon_click * (1.0 - ch.p_dark)


def multiphoton_probability_after_channel(src: SourceModel,
                                          ch: Optional[ChannelModel] = None) -> float:
    """Multi-photon probability entering the correction term.

    Multi-photon pulses are counted as insecure whatever the loss, so this
    is the source-side value.
    """
    return src.p_m


def keyrate_point(params: ProtocolParams, src: SourceModel, ch: ChannelModel, *,
                  ec_leak_scaled_by_q: bool = False,
                  config_hash: Optional[str] = None) -> KeyRateResult:
    return evaluate_key_rate(
        params, detection_probability(src, ch),
        multiphoton_probability_after_channel(src, ch), src.r_s,
        ec_leak_scaled_by_q=ec_leak_scaled_by_q, config_hash=config_hash)


def keyrate_curve(params: ProtocolParams, src: SourceModel, ch_template: ChannelModel,
                  distances: Sequence[float], *, ec_leak_scaled_by_q: bool = False,
                  workers: int = 1) -> List[Tuple[float, KeyRateResult]]:
    """Key rate versus fibre length.

    ``ch_template`` supplies everything but the distance.  Output is in input
    order regardless of ``workers``.
    """
    ds = [float(d) for d in distances]
    if not ds:
        raise ValueError("distances must be non-empty")
    if any(d < 0.0 for d in ds):
        raise ValueError("distances must be non-negative")
    if any(b <= a for a, b in zip(ds, ds[1:])):
        raise ValueError("distances must be strictly increasing")

    def one(d):
        ch = replace(ch_template, distance_km=d)
        return d, keyrate_point(params, src, ch, ec_leak_scaled_by_q=ec_leak_scaled_by_q)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, ds))
    return [one(d) for d in ds]


def cutoff_distance(curve: Sequence[Tuple[float, KeyRateResult]]) -> Optional[float]:
    """First distance on the curve where the key rate has dropped to zero.

    None if the key stays positive over the whole sweep.
    """
    seen_positive = False
    for d, res in curve:
        if res.k_rate > 0.0:
            seen_positive = True
        elif seen_positive or d == curve[0][0]:
            return d
    return None


def saturation_ratio(numerator, denominator) -> float:
    """Ratio of two saturation count rates.

    Accepts plain numbers or fit results exposing ``i_sat``.
    """
    numerator = float(getattr(numerator, "i_sat", numerator))
    denominator = float(getattr(denominator, "i_sat", denominator))
    if not (numerator > 0.0 and denominator > 0.0):
        raise ValueError("saturation rates must be positive")
    if not (math.isfinite(numerator) and math.isfinite(denominator)):
        raise ValueError("saturation rates must be finite")
    return numerator / denominator


def sil_enhancement(i_sat_with, i_sat_without) -> float:
    """Brightness gain of the lens-integrated emitter over the bare one."""
    return saturation_ratio(i_sat_with, i_sat_without)


def coupling_efficiency(i_sat_free_space, i_sat_fibre) -> float:
    """Single-mode fibre coupling: fibre rate over free-space rate."""
    return saturation_ratio(i_sat_fibre, i_sat_free_space)
