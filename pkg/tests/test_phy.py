"""Physical-layer unit tests with independent in-test oracles."""

import math

import numpy as np
import pytest

from noma_urllc import phy
from noma_urllc.phy import (PhyConfig, PilotOverloadError, channel_uses,
                            coherence_time, cross_interference, decode_frame,
                            decoding_order, draw_initial_fading, evolve_fading,
                            fbl_error_probability, invert_error_for_power,
                            jakes_coefficient, link_budget, path_gain,
                            path_loss_db, pilot_count, received_power, sic_sinr)


def bessel_j0_series(x: float) -> float:
    """Independent J0 oracle: power series sum_m (-1)^m (x/2)^(2m) / (m!)^2."""
    total = 0.0
    term = 1.0
    m = 0
    while abs(term) > 1e-18:
        total += term
        m += 1
        term *= -((x / 2.0) ** 2) / (m * m)
        if m > 200:
            break
    return total


def fbl_oracle(sinr, n, bits):
    """Independent transcription using the stdlib erfc."""
    if sinr <= 0:
        return 1.0
    c = math.log2(1.0 + sinr)
    v = sinr / 2.0 * (sinr + 2.0) / (sinr + 1.0) ** 2 * math.log2(math.e) ** 2
    arg = math.sqrt(n / v) * (c - bits / n)
    return min(1.0, max(0.0, 0.5 * math.erfc(arg / math.sqrt(2.0))))


# ======================================================================
# Fading
# ======================================================================

def test_jakes_coefficient_matches_bessel_series():
    cfg = PhyConfig()
    for speed in (0.1, 0.8333333333, 3.0, 20.0):
        for tf in (142.68e-6, 178.35e-6, 1e-3):
            x = 2 * math.pi * speed * cfg.carrier_frequency * tf / phy.C_LIGHT
            got = jakes_coefficient(speed, cfg.carrier_frequency, tf)
            assert got == pytest.approx(bessel_j0_series(x), abs=1e-12)


def test_jakes_zero_speed_is_one():
    assert jakes_coefficient(0.0, 4e9, 178.35e-6) == 1.0


def test_jakes_rejects_bad_args():
    with pytest.raises(ValueError):
        jakes_coefficient(-1.0, 4e9, 1e-4)
    with pytest.raises(ValueError):
        jakes_coefficient(1.0, 4e9, 0.0)


def test_coherence_time_formula_and_zero_speed():
    assert coherence_time(4e9, 2.0) == pytest.approx(phy.C_LIGHT / (8 * 4e9 * 2.0), rel=1e-15)
    with pytest.raises(ValueError):
        coherence_time(4e9, 0.0)


def test_initial_fading_is_unit_variance_circular():
    rng = np.random.default_rng(7)
    st = draw_initial_fading(4, 6, 0.9, rng)
    assert st.coefficients.shape == (4, 6)
    assert st.correlation.shape == (6,)
    big = draw_initial_fading(64, 2000, 0.9, np.random.default_rng(8))
    power = np.abs(big.coefficients) ** 2
    assert power.mean() == pytest.approx(1.0, abs=0.01)
    assert big.coefficients.real.mean() == pytest.approx(0.0, abs=0.01)


def test_evolve_fading_replay_oracle():
    # the recursion h' = a h + sqrt(1 - a^2) z is reproduced exactly
    rng = np.random.default_rng(3)
    st = draw_initial_fading(2, 3, [0.5, 0.9, 0.99], rng)
    rng_clone = np.random.default_rng(3)
    draw_initial_fading(2, 3, [0.5, 0.9, 0.99], rng_clone)  # consume the same draws
    nxt = evolve_fading(st, rng)
    z = (rng_clone.standard_normal((2, 3)) + 1j * rng_clone.standard_normal((2, 3))) \
        * math.sqrt(0.5)
    a = st.correlation
    expected = a * st.coefficients + np.sqrt(1 - a ** 2) * z
    assert np.array_equal(nxt.coefficients, expected)


def test_evolve_fading_statistics():
    rng = np.random.default_rng(11)
    a = 0.8
    st = draw_initial_fading(1, 2000, a, rng)
    prev = st.coefficients.copy()
    lag_prod = 0.0
    power = 0.0
    steps = 200
    for _ in range(steps):
        st = evolve_fading(st, rng)
        lag_prod += (prev.conj() * st.coefficients).real.sum()
        power += (np.abs(st.coefficients) ** 2).sum()
        prev = st.coefficients.copy()
    n = steps * 2000
    assert power / n == pytest.approx(1.0, abs=0.02)
    assert lag_prod / n == pytest.approx(a, abs=0.01)


# ======================================================================
# Path loss and link budget
# ======================================================================

def test_path_loss_matches_independent_transcription():
    f_ghz = 4.0
    for d in (2.0, 5.0, 20.0, 50.0):
        los = 32.4 + 17.3 * math.log10(d) + 20.0 * math.log10(f_ghz)
        nlos = 17.3 + 38.3 * math.log10(d) + 24.9 * math.log10(f_ghz)
        assert path_loss_db(d, 4e9) == pytest.approx(max(los, nlos), abs=1e-12)


def test_path_loss_los_floor_at_short_range():
    # below the crossover (~3.8 m at 4 GHz) the LOS curve dominates
    los = 32.4 + 17.3 * math.log10(2.0) + 20.0 * math.log10(4.0)
    assert path_loss_db(2.0, 4e9) == pytest.approx(los, abs=1e-12)
    with pytest.raises(ValueError):
        path_loss_db(0.0, 4e9)


def test_path_gain_formula_and_bounds():
    cfg = PhyConfig()
    pos = np.array([35.0, 60.0, 1.5])  # 10 m from the BS in the plane
    d = math.sqrt(10.0 ** 2 + 1.5 ** 2)
    expected = cfg.bs_antenna_gain * cfg.device_antenna_gain \
        * 10.0 ** (-path_loss_db(d, cfg.carrier_frequency) / 10.0)
    assert path_gain(pos, cfg) == pytest.approx(expected, rel=1e-12)
    with pytest.raises(ValueError):
        path_gain(np.array([200.0, 60.0, 1.5]), cfg)


def test_path_gain_zero_distance_error():
    cfg = PhyConfig(bs_height=1.5)  # same height as the device
    with pytest.raises(ValueError):
        path_gain(np.array([25.0, 60.0, 1.5]), cfg)


def test_shadowing_needs_rng_and_perturbs_gain():
    cfg = PhyConfig(shadowing_enabled=True)
    pos = np.array([30.0, 60.0, 1.5])
    with pytest.raises(ValueError):
        path_gain(pos, cfg)
    g1 = path_gain(pos, cfg, np.random.default_rng(0))
    g2 = path_gain(pos, cfg, np.random.default_rng(1))
    assert g1 != g2
    base = path_gain(pos, PhyConfig())
    draws = [path_gain(pos, cfg, np.random.default_rng(s)) for s in range(200)]
    spread_db = np.std([10 * math.log10(g / base) for g in draws])
    assert spread_db == pytest.approx(cfg.shadowing_std_db, rel=0.2)


def test_link_budget_shapes():
    cfg = PhyConfig()
    pos = np.array([[10.0, 10.0, 1.5], [25.0, 60.0 + 20.0, 1.5]])
    lb = link_budget(pos, cfg)
    assert lb.distances.shape == (2,) and lb.gains.shape == (2,)
    assert lb.distances[1] == pytest.approx(math.sqrt(20.0 ** 2 + 1.5 ** 2))


# ======================================================================
# Reception, ordering, SIC
# ======================================================================

def test_received_power_is_mrc_sum():
    h = np.array([1.0 + 1.0j, 2.0, 0.5j])
    assert received_power(2.0, 0.25, h) == pytest.approx(2.0 * 0.25 * (2.0 + 4.0 + 0.25))


def test_decoding_order_spec_example_and_ties():
    assert decoding_order([3.0, 1.0, 2.0]).tolist() == [0, 2, 1]
    assert decoding_order([1.0, 1.0, 2.0]).tolist() == [2, 0, 1]
    assert decoding_order([5.0, 1.0], devices=np.array([7, 4])).tolist() == [7, 4]
    with pytest.raises(ValueError):
        decoding_order([])


def test_cross_interference_extremes():
    hk = np.array([1.0, 1.0j])
    hj_orth = np.array([1.0, -1.0j]) / math.sqrt(2)
    # <hk, hj> = conj(1)*1/sqrt2 + conj(1j)*(-1j)/sqrt2 = (1 - 1)/sqrt2 = 0
    assert cross_interference(hk, hj_orth, 2.0, 3.0) == pytest.approx(0.0, abs=1e-15)
    assert cross_interference(hk, hk, 2.0, 3.0) == pytest.approx(2.0 * 3.0 * 2.0)
    with pytest.raises(ValueError):
        cross_interference(np.zeros(2, dtype=complex), hk, 1.0, 1.0)


def test_sic_sinr_two_user_hand_example():
    # device 0 stronger, decoded first; device 1 then sees a clean channel
    received = np.array([4.0, 1.0])
    cross = np.array([[0.0, 0.3], [0.2, 0.0]])
    order = np.array([0, 1])
    noise = 0.5
    none_decoded = np.zeros(2, dtype=bool)
    g0 = sic_sinr(0, order, none_decoded, received, cross, noise)
    assert g0 == pytest.approx(4.0 / (0.2 + 0.5))
    g1_blocked = sic_sinr(1, order, none_decoded, received, cross, noise)
    assert g1_blocked == pytest.approx(1.0 / (0.3 + 0.5))
    g1_clean = sic_sinr(1, order, np.array([True, False]), received, cross, noise)
    assert g1_clean == pytest.approx(1.0 / 0.5)
    with pytest.raises(ValueError):
        sic_sinr(5, order, none_decoded, received, cross, noise)


# ======================================================================
# Frame geometry
# ======================================================================

def test_pilot_count_values():
    assert pilot_count(38.16e6, 100e-9) == 8
    assert pilot_count(5e6, 100e-9) == 1
    assert pilot_count(38.16e6, 1e-15) == 1
    with pytest.raises(ValueError):
        pilot_count(38.16e6, 0.0)


def test_channel_uses_values_and_overload():
    assert channel_uses(38.16e6, 8, 0, 30e3, 33.33e-6) == math.floor(38.16e6 * 33.33e-6)
    assert channel_uses(38.16e6, 8, 3, 30e3, 33.33e-6) == \
        math.floor((38.16e6 - 8 * 3 * 30e3) * 33.33e-6)
    with pytest.raises(PilotOverloadError):
        channel_uses(38.16e6, 8, 200, 30e3, 33.33e-6)
    with pytest.raises(ValueError):
        channel_uses(38.16e6, 8, -1, 30e3, 33.33e-6)


# ======================================================================
# Finite-blocklength error
# ======================================================================

def test_fbl_matches_independent_transcription():
    for sinr in (0.01, 0.1, 0.64, 1.0, 3.0, 10.0, 100.0):
        for n, bits in ((1271, 736), (1247, 736), (500, 400)):
            got = fbl_error_probability(sinr, n, bits)
            want = fbl_oracle(sinr, n, bits)
            assert got == pytest.approx(want, abs=1e-9)


def test_fbl_edge_cases():
    assert fbl_error_probability(0.0, 1271, 736) == 1.0
    assert fbl_error_probability(-1.0, 1271, 736) == 1.0
    assert fbl_error_probability(1e-12, 1271, 736) == pytest.approx(1.0, abs=1e-9)
    # capacity equal to the rate puts the argument exactly at zero
    assert fbl_error_probability(1.0, 736, 736) == 0.5
    assert fbl_error_probability(1e6, 1271, 736) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        fbl_error_probability(1.0, 0, 736)


def test_fbl_monotone_in_sinr():
    grid = np.geomspace(0.01, 100.0, 300)
    eps = [fbl_error_probability(g, 1247, 736) for g in grid]
    assert all(a >= b for a, b in zip(eps, eps[1:]))


def test_invert_error_round_trip():
    noise = 4.804059371412377e-13
    for target in (1e-5, 1e-3, 0.1, 0.4):
        eta = invert_error_for_power(target, 1247, 736, noise)
        back = fbl_error_probability(eta / noise, 1247, 736)
        assert abs(back - target) / target < 1e-9


def test_invert_error_scales_with_noise():
    eta1 = invert_error_for_power(1e-5, 1247, 736, 1e-13)
    eta2 = invert_error_for_power(1e-5, 1247, 736, 2e-13)
    assert eta2 / eta1 == pytest.approx(2.0, rel=1e-12)


def test_invert_error_rejects_bad_targets():
    for bad in (0.0, 0.5, 0.9, -0.1):
        with pytest.raises(ValueError):
            invert_error_for_power(bad, 1247, 736, 1e-13)


# ======================================================================
# decode_frame
# ======================================================================

def _close_ring_setup(num_devices, num_antennas=8, sic_limit=2, seed=0):
    cfg = PhyConfig(num_antennas=num_antennas, sic_limit=sic_limit)
    rng = np.random.default_rng(seed)
    center = cfg.bs_position[:2]
    ang = 2 * np.pi * np.arange(num_devices) / num_devices
    pos = np.column_stack([center[0] + 10 * np.cos(ang), center[1] + 10 * np.sin(ang),
                           np.full(num_devices, cfg.device_height)])
    budget = link_budget(pos, cfg)
    fading = draw_initial_fading(num_antennas, num_devices, 0.999, rng)
    return cfg, budget, fading, rng


def test_decode_frame_empty_active():
    cfg, budget, fading, rng = _close_ring_setup(4)
    out = decode_frame([], fading, budget, cfg, 0, rng)
    assert out.order.size == 0 and not out.decoded.any()


def test_decode_frame_single_strong_user():
    cfg, budget, fading, rng = _close_ring_setup(4)
    out = decode_frame([2], fading, budget, cfg, 2, rng)
    assert out.order.tolist() == [2]
    assert out.error_prob[0] < 1e-9
    assert out.decoded[2] and out.decoded.sum() == 1


def test_decode_frame_overload_kills_frame():
    cfg, budget, fading, rng = _close_ring_setup(4, sic_limit=2)
    out = decode_frame([0, 1, 2], fading, budget, cfg, 3, rng)
    assert not out.decoded.any()
    assert out.sinr.shape == (3,) and out.error_prob.shape == (3,)
    # overload SINRs include every other active device's interference
    assert (out.sinr > 0).all()


def test_decode_frame_decoded_subset_of_active():
    cfg, budget, fading, rng = _close_ring_setup(6, sic_limit=3)
    for _ in range(50):
        out = decode_frame([0, 3, 5], fading, budget, cfg, 3, rng)
        assert set(np.flatnonzero(out.decoded)) <= {0, 3, 5}
        fading = evolve_fading(fading, rng)


def test_decode_frame_polled_fewer_than_active_rejected():
    cfg, budget, fading, rng = _close_ring_setup(4)
    with pytest.raises(ValueError):
        decode_frame([0, 1], fading, budget, cfg, 1, rng)


def test_decode_frame_deterministic_replay():
    cfg, budget, fading, _ = _close_ring_setup(4)
    out1 = decode_frame([0, 1], fading, budget, cfg, 2, np.random.default_rng(42))
    out2 = decode_frame([0, 1], fading, budget, cfg, 2, np.random.default_rng(42))
    assert np.array_equal(out1.decoded, out2.decoded)
    assert np.array_equal(out1.sinr, out2.sinr)
