"""
Finite-key secret fraction for BB84 with a single-photon source.

The secret fraction per detected pulse is

    S = q * A * (1 - h(e_tilde / A)) - f_EC * h(e) - Delta(n)

with q = 0.5 n / (n + m) the share of measured bits left after sifting and
parameter estimation, A = (P_det - P_m) / P_det the multi-photon
correction, e_tilde the QBER upper confidence bound from m sampled bits and
Delta(n) the finite-size penalty of privacy amplification.  The key rate in
bits per second is K = S * R_s.

Everything here is a pure function of its arguments.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .errors import NoDetectionError

EQUAL_SPLIT = (0.25, 0.25, 0.25, 0.25)


def _check_prob(name: str, x: float, lo_open=False, hi_open=False) -> None:
    bad_lo = x <= 0.0 if lo_open else x < 0.0
    bad_hi = x >= 1.0 if hi_open else x > 1.0
    if not math.isfinite(x) or bad_lo or bad_hi:
        lo = "(" if lo_open else "["
        hi = ")" if hi_open else "]"
        raise ValueError(f"{name}={x!r} outside {lo}0, 1{hi}")


def binary_entropy(x: float) -> float:
    """Shannon entropy of a Bernoulli(x) variable, in bits."""
    _check_prob("x", x)
    if x == 0.0 or x == 1.0:
        return 0.0
    return -(x * math.log(x) + (1.0 - x) * math.log1p(-x)) / math.log(2.0)


def split_epsilon(eps_total: float, weights: Optional[Sequence[float]] = None):
    """Split the total failure probability into
    ``(eps_smooth, eps_pa, eps_ec, eps_pe)``.

    Equal quarters by default.  The last component absorbs the floating
    point remainder so the four always re-sum to ``eps_total``.
    """
    if not (0.0 < eps_total < 1.0):
        raise ValueError(f"eps_total must be in (0, 1), got {eps_total!r}")
    w = EQUAL_SPLIT if weights is None else tuple(float(v) for v in weights)
    if len(w) != 4:
        raise ValueError("exactly four weights are required")
    if any(v <= 0.0 for v in w):
        raise ValueError(f"weights must be positive, got {w}")
    if not math.isclose(math.fsum(w), 1.0, rel_tol=0.0, abs_tol=1e-12):
        raise ValueError(f"weights must sum to 1, got {math.fsum(w)!r}")
    head = [eps_total * v for v in w[:3]]
    return (*head, eps_total - math.fsum(head))


@dataclass(frozen=True)
class ProtocolParams:
    """Finite-key post-processing parameters.

    ``n`` bits go to privacy amplification, ``m`` bits are sacrificed for
    parameter estimation.  ``e`` is the true QBER.  The four epsilon
    components must add up to ``eps_total``.
    """

    n: float
    m: float
    f_ec: float
    e: float
    eps_total: float
    eps_smooth: float
    eps_pa: float
    eps_ec: float
    eps_pe: float

    def __post_init__(self) -> None:
        if not self.n >= 1:
            raise ValueError(f"n must be >= 1, got {self.n!r}")
        if not self.m >= 1:
            raise ValueError(f"m must be >= 1, got {self.m!r}")
        if not self.f_ec >= 1.0:
            raise ValueError(f"f_ec must be >= 1, got {self.f_ec!r}")
        if not (0.0 <= self.e < 0.5):
            raise ValueError(f"e must be in [0, 0.5), got {self.e!r}")
        for name in ("eps_total", "eps_smooth", "eps_pa", "eps_ec", "eps_pe"):
            _check_prob(name, getattr(self, name), lo_open=True, hi_open=True)
        parts = math.fsum((self.eps_smooth, self.eps_pa, self.eps_ec, self.eps_pe))
        if not math.isclose(parts, self.eps_total, rel_tol=1e-12, abs_tol=0.0):
            raise ValueError(
                f"epsilon components sum to {parts!r}, expected {self.eps_total!r}")

    @classmethod
    def from_total(cls, n, m, f_ec, e, eps_total, weights=None) -> "ProtocolParams":
        s, pa, ec, pe = split_epsilon(eps_total, weights)
        return cls(n=n, m=m, f_ec=f_ec, e=e, eps_total=eps_total,
                   eps_smooth=s, eps_pa=pa, eps_ec=ec, eps_pe=pe)

    @property
    def q(self) -> float:
        return q_ratio(self.n, self.m)


def q_ratio(n: float, m: float) -> float:
    """Share of measured bits that survive sifting and parameter estimation."""
    return 0.5 * n / (n + m)


def qber_upper_bound(e: float, m: float, eps_pe: float) -> float:
    """Upper confidence bound on the QBER from ``m`` sampled bits.

    One-sided Hoeffding width ``sqrt(ln(2/eps_pe) / (2 m))``; capped at 0.5.
    """
    if not m >= 1:
        raise ValueError(f"m must be >= 1, got {m!r}")
    if not (0.0 <= e < 0.5):
        raise ValueError(f"e must be in [0, 0.5), got {e!r}")
    _check_prob("eps_pe", eps_pe, lo_open=True, hi_open=True)
    xi = math.sqrt(math.log(2.0 / eps_pe) / (2.0 * m))
    return min(e + xi, 0.5)


def finite_size_delta(n: float, eps_smooth: float, eps_pa: float) -> float:
    """Finite-size penalty of the smooth min-entropy bound.

    ``7 sqrt(log2(2/eps_smooth) / n) + (2/n) log2(1/eps_pa)``.
    """
    if not n >= 1:
        raise ValueError(f"n must be >= 1, got {n!r}")
    _check_prob("eps_smooth", eps_smooth, lo_open=True, hi_open=True)
    _check_prob("eps_pa", eps_pa, lo_open=True, hi_open=True)
    if math.isinf(n):
        return 0.0
    return (7.0 * math.sqrt(math.log2(2.0 / eps_smooth) / n)
            + 2.0 / n * math.log2(1.0 / eps_pa))


def multiphoton_correction(p_det: float, p_m: float) -> float:
    """Fraction of detections attributable to single-photon pulses,
    ``(P_det - P_m) / P_det``.

    Raises NoDetectionError when ``p_det == 0`` and ValueError when the
    multi-photon probability exceeds the detection probability.
    """
    if p_det == 0.0:
        raise NoDetectionError("p_det is zero: no detections, no key")
    _check_prob("p_det", p_det)
    _check_prob("p_m", p_m)
    if p_m > p_det:
        raise ValueError(f"p_m={p_m!r} exceeds p_det={p_det!r}")
    return (p_det - p_m) / p_det


def secret_fraction(params: ProtocolParams, a_corr: float, e_tilde: float,
                    delta_n: float, ec_leak_scaled_by_q: bool = False):
    """Return ``(s_finite, raw_s, diagnostic)``.

    ``raw_s`` is the unclamped formula value, ``s_finite = max(raw_s, 0)``.
    With ``ec_leak_scaled_by_q`` the error-correction leak is multiplied by
    q as well.  ``diagnostic`` is None unless something short-circuited.
    """
    if not (0.0 <= a_corr <= 1.0):
        raise ValueError(f"a_corr must be in [0, 1], got {a_corr!r}")
    q = params.q
    leak = params.f_ec * binary_entropy(params.e)
    if ec_leak_scaled_by_q:
        leak *= q
    diagnostic = None
    if a_corr == 0.0:
        privacy = 0.0
        diagnostic = "a_corr is zero; privacy term dropped"
    else:
        ratio = e_tilde / a_corr
        if ratio >= 0.5:
            diagnostic = "e_tilde/A >= 0.5; entropy term saturated"
        privacy = q * a_corr * (1.0 - binary_entropy(min(ratio, 0.5)))
    raw = privacy - leak - delta_n
    return max(raw, 0.0), raw, diagnostic


def key_rate(s_finite: float, r_s: float) -> float:
    """Secret bits per second from bits per pulse and the repetition rate."""
    if s_finite < 0.0:
        raise ValueError(f"s_finite must be >= 0, got {s_finite!r}")
    if not r_s > 0.0:
        raise ValueError(f"r_s must be > 0, got {r_s!r}")
    return s_finite * r_s


@dataclass(frozen=True)
class KeyRateResult:
    p_det: float
    p_m: float
    a_corr: float
    q_ratio: float
    e_tilde: float
    delta_n: float
    s_finite: float
    raw_s: float
    r_s: float
    k_rate: float
    ec_leak_scaled_by_q: bool = False
    diagnostic: Optional[str] = None
    config_hash: Optional[str] = field(default=None, compare=False)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


DeltaFn = Callable[[float, float, float], float]


def evaluate_key_rate(params: ProtocolParams, p_det: float, p_m: float,
                      r_s: float, *, ec_leak_scaled_by_q: bool = False,
                      delta_fn: DeltaFn = finite_size_delta,
                      config_hash: Optional[str] = None) -> KeyRateResult:
    """Run the whole finite-key chain for one operating point.

    Zero detections or a vanishing correction term yield a zero key with a
    diagnostic rather than an exception.  ``delta_fn(n, eps_smooth, eps_pa)``
    swaps in an alternative finite-size penalty.
    """
    e_tilde = qber_upper_bound(params.e, params.m, params.eps_pe)
    delta_n = delta_fn(params.n, params.eps_smooth, params.eps_pa)
    note = None
    if p_det == 0.0:
        a_corr, note = 0.0, "no detections"
    elif p_m >= p_det:
        # every click could stem from a multi-photon pulse
        a_corr, note = 0.0, "p_m >= p_det; no single-photon share left"
    else:
        a_corr = multiphoton_correction(p_det, p_m)
    s, raw, diag = secret_fraction(params, a_corr, e_tilde, delta_n,
                                   ec_leak_scaled_by_q)
    diag = note or diag
    return KeyRateResult(
        p_det=p_det, p_m=p_m, a_corr=a_corr, q_ratio=params.q,
        e_tilde=e_tilde, delta_n=delta_n, s_finite=s, raw_s=raw, r_s=r_s,
        k_rate=key_rate(s, r_s), ec_leak_scaled_by_q=ec_leak_scaled_by_q,
        diagnostic=diag, config_hash=config_hash)
