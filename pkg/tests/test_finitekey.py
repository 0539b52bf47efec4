import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spsqkd.errors import NoDetectionError
from spsqkd.finitekey import (ProtocolParams, binary_entropy, evaluate_key_rate,
                              finite_size_delta, key_rate, multiphoton_correction,
                              qber_upper_bound, secret_fraction, split_epsilon)

# frozen from a 40-digit mpmath evaluation of the closed forms
H_002 = 0.14144054254182064
E_TILDE_BASE = 0.025010518183942684
DELTA_BASE = 0.04219815825445656
RAW_S_EXAMPLE = 0.13060188902339041

probs = st.floats(0.0, 1.0, allow_nan=False)


@pytest.fixture
def base():
    return ProtocolParams.from_total(1e6, 5e5, 1.1, 0.02, 1e-10)


# -- binary entropy ----------------------------------------------------------

@pytest.mark.parametrize("x, expected", [(0.5, 1.0), (0.0, 0.0), (1.0, 0.0)])
def test_binary_entropy_trivial(x, expected):
    assert binary_entropy(x) == expected


def test_binary_entropy_derived():
    assert binary_entropy(0.02) == pytest.approx(H_002, rel=1e-14)


@pytest.mark.parametrize("x", [-0.1, 1.0001, math.nan])
def test_binary_entropy_domain(x):
    with pytest.raises(ValueError):
        binary_entropy(x)


@given(probs)
def test_binary_entropy_symmetric(x):
    assert binary_entropy(x) == pytest.approx(binary_entropy(1.0 - x), abs=1e-12)


@given(probs, probs, st.floats(0.0, 1.0))
def test_binary_entropy_concave(a, b, lam):
    mid = lam * a + (1 - lam) * b
    assert binary_entropy(mid) >= lam * binary_entropy(a) + (1 - lam) * binary_entropy(b) - 1e-12


@given(probs)
def test_binary_entropy_max_at_half(x):
    assert 0.0 <= binary_entropy(x) <= 1.0


# -- epsilon split -----------------------------------------------------------

def test_split_equal():
    assert split_epsilon(1e-10) == pytest.approx((2.5e-11,) * 4, rel=1e-15)


def test_split_weighted():
    assert split_epsilon(0.4, (0.5, 0.25, 0.125, 0.125)) == pytest.approx((0.2, 0.1, 0.05, 0.05))


def test_split_resums_exactly():
    assert math.fsum(split_epsilon(1e-10)) == 1e-10


@pytest.mark.parametrize("eps, w", [(0.0, None), (-1e-3, None), (1.0, None),
                                    (1e-3, (0.5, 0.5, 0.5, 0.5)), (1e-3, (1.0, 0, 0, 0))])
def test_split_errors(eps, w):
    with pytest.raises(ValueError):
        split_epsilon(eps, w)


@given(st.floats(1e-30, 0.999), st.lists(st.floats(0.01, 1.0), min_size=4, max_size=4))
def test_split_resum_property(eps, raw_w):
    tot = math.fsum(raw_w)
    w = [v / tot for v in raw_w[:3]]
    w.append(1.0 - math.fsum(w))
    if w[3] <= 0:
        return
    parts = split_epsilon(eps, w)
    assert math.fsum(parts) == pytest.approx(eps, rel=1e-12)


def test_protocol_params_rejects_bad_budget():
    with pytest.raises(ValueError):
        ProtocolParams(1e6, 5e5, 1.1, 0.02, 1e-10, 2.5e-11, 2.5e-11, 2.5e-11, 3e-11)
    with pytest.raises(ValueError):
        ProtocolParams.from_total(1e6, 5e5, 0.9, 0.02, 1e-10)
    with pytest.raises(ValueError):
        ProtocolParams.from_total(1e6, 5e5, 1.1, 0.5, 1e-10)


# -- QBER bound --------------------------------------------------------------

def test_qber_bound_large_m():
    assert qber_upper_bound(0.02, 1e12, 2.5e-11) == pytest.approx(0.02, abs=1e-5)


def test_qber_bound_derived():
    assert qber_upper_bound(0.02, 5e5, 2.5e-11) == pytest.approx(E_TILDE_BASE, rel=1e-14)


def test_qber_bound_cap():
    assert qber_upper_bound(0.49, 10, 0.01) == 0.5


@pytest.mark.parametrize("m, e, eps", [(40, 0.1, 0.05), (100, 0.05, 0.01), (250, 0.2, 1e-3)])
def test_qber_bound_covers_binomial_tail(m, e, eps):
    # exact binomial: probability that the observed error fraction
    # undershoots the true rate by more than the Hoeffding width
    xi = qber_upper_bound(e, m, eps) - e
    tail = math.fsum(math.comb(m, k) * e ** k * (1 - e) ** (m - k)
                     for k in range(m + 1) if k / m < e - xi)
    assert tail <= eps / 2


def test_qber_bound_monotone():
    base = qber_upper_bound(0.02, 1e4, 1e-6)
    assert qber_upper_bound(0.02, 1e4, 0.5e-6) > base
    assert 0.02 < qber_upper_bound(0.02, 2e4, 1e-6) < base


# -- finite-size penalty -----------------------------------------------------

def test_delta_limit():
    assert finite_size_delta(math.inf, 1e-10, 1e-10) == 0.0
    assert finite_size_delta(1e30, 1e-10, 1e-10) < 1e-12


def test_delta_derived():
    assert finite_size_delta(1e6, 2.5e-11, 2.5e-11) == pytest.approx(DELTA_BASE, rel=1e-14)


@given(st.floats(1.0, 1e15))
def test_delta_decreasing(n):
    assert finite_size_delta(2 * n, 1e-10, 1e-10) < finite_size_delta(n, 1e-10, 1e-10)


# -- multi-photon correction -------------------------------------------------

@pytest.mark.parametrize("p_det, p_m, expected", [(0.5, 0.0, 1.0), (0.07, 0.07, 0.0),
                                                  (0.2, 0.07, 0.65)])
def test_multiphoton_correction(p_det, p_m, expected):
    assert multiphoton_correction(p_det, p_m) == pytest.approx(expected, abs=1e-15)


def test_multiphoton_correction_errors():
    with pytest.raises(NoDetectionError):
        multiphoton_correction(0.0, 0.0)
    with pytest.raises(ValueError):
        multiphoton_correction(0.05, 0.07)


@given(st.floats(1e-9, 1.0), st.floats(0.0, 1.0))
def test_multiphoton_correction_bounds(p_det, frac):
    a = multiphoton_correction(p_det, p_det * frac)
    assert 0.0 <= a <= 1.0


# -- secret fraction ---------------------------------------------------------

def test_secret_fraction_derived(base):
    s, raw, diag = secret_fraction(base, 1.0, 0.02, 0.0)
    assert raw == pytest.approx(RAW_S_EXAMPLE, rel=1e-13)
    assert s == raw and diag is None


def test_secret_fraction_error_free_limit():
    p = ProtocolParams.from_total(1e6, 5e5, 1.1, 0.0, 1e-10)
    s, raw, _ = secret_fraction(p, 1.0, 0.0, 0.0)
    assert raw == pytest.approx(1 / 3, rel=1e-15)


def test_secret_fraction_clamps(base):
    s, raw, diag = secret_fraction(base, 0.1, 0.06, 0.04)
    assert s == 0.0 and raw < 0 and "saturated" in diag


def test_secret_fraction_zero_a(base):
    s, raw, diag = secret_fraction(base, 0.0, 0.025, 0.04)
    assert s == 0.0 and diag is not None


def test_ec_leak_flag(base):
    _, raw_plain, _ = secret_fraction(base, 1.0, 0.02, 0.0)
    _, raw_scaled, _ = secret_fraction(base, 1.0, 0.02, 0.0, ec_leak_scaled_by_q=True)
    assert raw_scaled - raw_plain == pytest.approx(1.1 * H_002 * (1 - 1 / 3), rel=1e-12)


@settings(max_examples=200)
@given(st.floats(0.0, 0.2), st.floats(0.0, 0.2), st.floats(0.0, 0.1), st.floats(0.0, 0.1),
       st.floats(1.0, 1.5), st.floats(1.0, 1.5), st.floats(0.05, 1.0), st.floats(0.05, 1.0))
def test_secret_fraction_monotone(e1, e2, d1, d2, f1, f2, a1, a2):
    def raw(e, d, f, a):
        p = ProtocolParams.from_total(1e6, 5e5, f, e, 1e-10)
        return secret_fraction(p, a, qber_upper_bound(e, 5e5, p.eps_pe), d)[1]
    lo_e, hi_e = sorted((e1, e2))
    lo_d, hi_d = sorted((d1, d2))
    lo_f, hi_f = sorted((f1, f2))
    lo_a, hi_a = sorted((a1, a2))
    assert raw(hi_e, 0.01, 1.1, 0.8) <= raw(lo_e, 0.01, 1.1, 0.8) + 1e-15
    assert raw(0.02, hi_d, 1.1, 0.8) <= raw(0.02, lo_d, 1.1, 0.8) + 1e-15
    assert raw(0.02, 0.01, hi_f, 0.8) <= raw(0.02, 0.01, lo_f, 0.8) + 1e-15
    assert raw(0.02, 0.01, 1.1, hi_a) >= raw(0.02, 0.01, 1.1, lo_a) - 1e-15


# -- key rate ----------------------------------------------------------------

@pytest.mark.parametrize("s, r, expected", [(0.0, 2e7, 0.0), (0.05, 2e7, 1e6),
                                            (RAW_S_EXAMPLE, 2e7, 2612037.7804678082)])
def test_key_rate(s, r, expected):
    assert key_rate(s, r) == pytest.approx(expected, rel=1e-14)


@given(st.floats(0.0, 1.0), st.floats(1.0, 1e10), st.floats(0.1, 10.0))
def test_key_rate_linear(s, r, k):
    assert key_rate(s, r * k) == pytest.approx(k * key_rate(s, r), rel=1e-12)


def test_evaluate_key_rate_chain(base):
    res = evaluate_key_rate(base, 0.2, 0.07, 2e7)
    assert res.a_corr == pytest.approx(0.65)
    assert res.e_tilde == pytest.approx(E_TILDE_BASE, rel=1e-14)
    assert res.delta_n == pytest.approx(DELTA_BASE, rel=1e-14)
    assert res.k_rate == res.s_finite * res.r_s
    assert res.s_finite == max(res.raw_s, 0.0)


def test_evaluate_key_rate_no_detection(base):
    res = evaluate_key_rate(base, 0.0, 0.07, 2e7)
    assert res.k_rate == 0.0 and res.diagnostic == "no detections"
    below = evaluate_key_rate(base, 0.05, 0.07, 2e7)
    assert below.k_rate == 0.0 and below.a_corr == 0.0


def test_delta_strategy_hook(base):
    res = evaluate_key_rate(base, 0.5, 0.0, 2e7, delta_fn=lambda n, a, b: 0.0)
    assert res.delta_n == 0.0
    base = evaluate_key_rate(base, 0.5, 0.0, 2e7)
    assert res.raw_s - base.raw_s == pytest.approx(DELTA_BASE, rel=1e-12)
