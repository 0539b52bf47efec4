"""
Seeded Monte Carlo of the BB84 link, used as an independent check on the
analytic key-rate pipeline.

Pulses are simulated in fixed-size blocks.  Block ``i`` draws from
``PCG64(SeedSequence(seed, spawn_key=(i,)))`` so its stream depends only on
the seed and the block index; block tallies are integer sums, so the result
is identical whatever order or thread the blocks run in.
"""
from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .finitekey import KeyRateResult, ProtocolParams, evaluate_key_rate
from .link_model import (ChannelModel, SourceModel, detection_probability,
                         multiphoton_probability_after_channel)

DEFAULT_BLOCK = 1 << 20
Z_THRESHOLD = 3.0
REL_THRESHOLD = 0.05
# stream id reserved for the parameter-estimation sampling
_PE_STREAM = 0xFFFF_FFFF


@dataclass(frozen=True)
class SimConfig:
    src: SourceModel
    ch: ChannelModel
    params: ProtocolParams
    num_pulses: int
    seed: int
    block_size: int = DEFAULT_BLOCK
    ec_leak_scaled_by_q: bool = False

    def __post_init__(self) -> None:
        if self.num_pulses < 10_000:
            raise ValueError(f"num_pulses must be >= 1e4, got {self.num_pulses}")
        if not (0 <= self.seed < 2 ** 64):
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.block_size < 1:
            raise ValueError("block_size must be positive")

    def as_dict(self) -> dict:
        d = asdict(self)
        d.pop("block_size")  # execution detail; does not change the result
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


_COUNT_FIELDS = ("vacuum", "single", "multi", "detected", "dark_only", "sifted",
                 "errors")


def _block(cfg: SimConfig, index: int, size: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(cfg.seed, spawn_key=(index,))))
    src, ch = cfg.src, cfg.ch
    eta = ch.eta

    u = rng.random(size)
    photons = np.where(u < src.p0, 0, np.where(u < src.p0 + src.p1, 1, 2))
    # photons that survive fibre and detector
    arrived = rng.binomial(photons, eta)
    signal = arrived > 0
    dark = rng.random(size) < ch.p_dark
    clicked = signal | dark

    alice_bit = rng.random(size) < 0.5
    alice_basis = rng.random(size) < 0.5
    bob_basis = rng.random(size) < 0.5
    flip = rng.random(size) < cfg.params.e
    coin = rng.random(size) < 0.5
    dark_det = rng.random(size) < 0.5

    matched = alice_basis == bob_basis
    # signal click: correct bit in the matching basis, flipped with prob e;
    # in the wrong basis the outcome is random (discarded at sifting anyway)
    sig_bit = np.where(matched, alice_bit ^ flip, coin)
    bob_bit = np.where(signal, sig_bit, dark_det)
    # photon and dark click on opposite detectors: squash to a random bit
    conflict = signal & dark & (dark_det != sig_bit)
    bob_bit = np.where(conflict, coin ^ dark_det, bob_bit)

    sifted = clicked & matched
    errors = sifted & (bob_bit != alice_bit)
    return np.array([
        np.count_nonzero(photons == 0), np.count_nonzero(photons == 1),
        np.count_nonzero(photons == 2), np.count_nonzero(clicked),
        np.count_nonzero(dark & ~signal), np.count_nonzero(sifted),
        np.count_nonzero(errors)], dtype=np.int64)


@dataclass
class SimResult:
    num_pulses: int
    seed: int
    config_hash: str
    emitted_counts: dict
    detected_count: int
    dark_only_count: int
    sifted_count: int
    error_count: int
    pe_count: int
    pe_error_count: int
    key_count: int
    empirical_qber: float
    empirical_p_det: float
    empirical_p_m_among_emissions: float
    empirical_key: KeyRateResult
    final_key_bits: int
    analytic_comparison: dict = field(default_factory=dict)
    zero_detections: bool = False

    @property
    def sifted_fraction(self) -> float:
        return self.sifted_count / self.detected_count if self.detected_count else 0.0

    def as_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["empirical_key"] = self.empirical_key.as_dict()
        d["sifted_fraction"] = self.sifted_fraction
        return d


def simulate(cfg: SimConfig, workers: int = 1) -> SimResult:
    """Run ``cfg.num_pulses`` BB84 rounds and distil the finite-key output
    from the observed counts.

    Sifted bits are split into a parameter-estimation sample (fraction
    m/(n+m)) and key bits; the QBER is measured on the sample.  The
    empirical key fraction reuses the configured block sizes n and m with
    the observed detection rate, multi-photon rate and QBER, while
    ``final_key_bits`` applies the finite-key formula to the block sizes
    actually obtained in this run.
    """
    n_blocks = -(-cfg.num_pulses // cfg.block_size)
    sizes = [min(cfg.block_size, cfg.num_pulses - i * cfg.block_size)
             for i in range(n_blocks)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda a: _block(cfg, *a), enumerate(sizes)))
    else:
        parts = [_block(cfg, i, s) for i, s in enumerate(sizes)]
    tot = dict(zip(_COUNT_FIELDS, (int(v) for v in np.sum(parts, axis=0))))

    params = cfg.params
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(cfg.seed, spawn_key=(_PE_STREAM,))))
    sifted, errs = tot["sifted"], tot["errors"]
    pe = int(round(sifted * params.m / (params.n + params.m)))
    pe_err = int(rng.hypergeometric(errs, sifted - errs, pe)) if pe > 0 else 0
    qber = pe_err / pe if pe else 0.0

    N = cfg.num_pulses
    p_det = tot["detected"] / N
    p_m = tot["multi"] / N
    h = cfg.config_hash()
    zero = tot["detected"] == 0

    emp_params = _with_qber(params, qber)
    emp_key = evaluate_key_rate(emp_params, p_det, min(p_m, p_det), cfg.src.r_s,
                                ec_leak_scaled_by_q=cfg.ec_leak_scaled_by_q,
                                config_hash=h)
    key_bits = 0
    if pe >= 1 and sifted - pe >= 1:
        run_params = ProtocolParams(
            n=sifted - pe, m=pe, f_ec=params.f_ec, e=emp_params.e,
            eps_total=params.eps_total, eps_smooth=params.eps_smooth,
            eps_pa=params.eps_pa, eps_ec=params.eps_ec, eps_pe=params.eps_pe)
        run_key = evaluate_key_rate(run_params, p_det, min(p_m, p_det), cfg.src.r_s,
                                    ec_leak_scaled_by_q=cfg.ec_leak_scaled_by_q)
        key_bits = int(math.floor(run_key.s_finite * tot["detected"]))

    res = SimResult(
        num_pulses=N, seed=cfg.seed, config_hash=h,
        emitted_counts={"0": tot["vacuum"], "1": tot["single"], "2": tot["multi"]},
        detected_count=tot["detected"], dark_only_count=tot["dark_only"],
        sifted_count=sifted, error_count=errs, pe_count=pe, pe_error_count=pe_err,
        key_count=sifted - pe, empirical_qber=qber, empirical_p_det=p_det,
        empirical_p_m_among_emissions=p_m, empirical_key=emp_key,
        final_key_bits=key_bits, zero_detections=zero)
    res.analytic_comparison = compare_to_analytic(res, analytic_for(cfg), cfg)
    return res


def _with_qber(params: ProtocolParams, e: float) -> ProtocolParams:
    # the QBER can be observed >= 0.5 on tiny samples; keep it inside the domain
    e = min(e, 0.5 - 1e-12)
    return ProtocolParams(n=params.n, m=params.m, f_ec=params.f_ec, e=e,
                          eps_total=params.eps_total, eps_smooth=params.eps_smooth,
                          eps_pa=params.eps_pa, eps_ec=params.eps_ec,
                          eps_pe=params.eps_pe)


def expected_qber(cfg: SimConfig) -> float:
    """QBER the simulator should observe: signal errors at rate e, dark-only
    clicks at 1/2."""
    src, ch = cfg.src, cfg.ch
    p_det = detection_probability(src, ch)
    if p_det == 0.0:
        return 0.0
    p_signal = detection_probability(src, ChannelModel(
        ch.alpha_db_per_km, ch.distance_km, ch.eta_det, 0.0))
    p_dark_only = p_det - p_signal
    return (cfg.params.e * p_signal + 0.5 * p_dark_only) / p_det


def analytic_for(cfg: SimConfig, e: Optional[float] = None) -> KeyRateResult:
    """Analytic key-rate result for the configuration.

    ``e`` replaces the configured QBER, which is how the comparison puts the
    observed QBER on both sides.
    """
    params = cfg.params if e is None else _with_qber(cfg.params, e)
    return evaluate_key_rate(
        params, detection_probability(cfg.src, cfg.ch),
        multiphoton_probability_after_channel(cfg.src, cfg.ch), cfg.src.r_s,
        ec_leak_scaled_by_q=cfg.ec_leak_scaled_by_q, config_hash=cfg.config_hash())


def _z(observed: float, expected: float, trials: int) -> float:
    var = expected * (1.0 - expected) / trials if trials else 0.0
    if var == 0.0:
        return 0.0 if observed == expected else math.inf
    return (observed - expected) / math.sqrt(var)


def _rel(a: float, b: float) -> float:
    if a == b:
        return 0.0
    return abs(a - b) / max(abs(a), abs(b))


def compare_to_analytic(sim: SimResult, analytic: KeyRateResult,
                        cfg: Optional[SimConfig] = None) -> dict:
    """Score the simulation against the analytic pipeline.

    The QBER is tested against the analytic expectation (configured e
    diluted by dark-only clicks).  The secret-fraction check evaluates the
    analytic chain with the observed QBER, so only the detection and
    multi-photon statistics differ between the two sides; it compares the
    unclamped values, which stay informative where the key is zero.
    """
    if analytic.config_hash is not None and analytic.config_hash != sim.config_hash:
        raise ValueError("simulation and analytic result come from different configs")
    N = sim.num_pulses
    p_m_expected = analytic.p_m
    e_expected = expected_qber(cfg) if cfg is not None else None
    out = {
        "p_det": {"analytic": analytic.p_det, "empirical": sim.empirical_p_det,
                  "z": _z(sim.empirical_p_det, analytic.p_det, N)},
        "p_m": {"analytic": p_m_expected, "empirical": sim.empirical_p_m_among_emissions,
                "z": _z(sim.empirical_p_m_among_emissions, p_m_expected, N)},
    }
    if e_expected is not None:
        out["qber"] = {"analytic": e_expected, "empirical": sim.empirical_qber,
                       "z": _z(sim.empirical_qber, e_expected, sim.pe_count)}
        same_e = analytic_for(cfg, e=sim.empirical_qber)
    else:
        same_e = analytic
    out["raw_secret_fraction"] = {
        "analytic": same_e.raw_s, "empirical": sim.empirical_key.raw_s,
        "rel_diff": _rel(same_e.raw_s, sim.empirical_key.raw_s)}
    out["secret_fraction"] = {
        "analytic": same_e.s_finite, "empirical": sim.empirical_key.s_finite,
        "rel_diff": _rel(same_e.s_finite, sim.empirical_key.s_finite)}
    z_ok = all(abs(v["z"]) < Z_THRESHOLD for k, v in out.items() if "z" in v)
    rel_ok = out["raw_secret_fraction"]["rel_diff"] < REL_THRESHOLD
    out["thresholds"] = {"z": Z_THRESHOLD, "rel": REL_THRESHOLD}
    out["passed"] = bool(z_ok and rel_ok)
    return out
