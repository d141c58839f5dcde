"""Physical layer for a NOMA uplink with SIC at a multi-antenna base station.

Covers time-correlated Rayleigh fading (Gauss-Markov with a Jakes lag-1
coefficient), 3GPP indoor-office NLOS path loss, pilot and channel-use
accounting for short frames, finite-blocklength decoding error, and the
per-frame SIC decode pass. Functions are pure; every random draw goes
through an explicit numpy Generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfc, j0

C_LIGHT = 299792458.0  # speed of light [m/s]
LOG2E = math.log2(math.e)


class PilotOverloadError(ValueError):
    """Raised when pilot overhead of the polled set leaves no data symbols."""


@dataclass
class PhyConfig:
    """Radio parameters. Defaults are the 4 GHz indoor factory-cell setup.

    All values are SI / linear unless the name says otherwise.
    """

    carrier_frequency: float = 4e9        # f_c [Hz]
    bandwidth: float = 38.16e6            # W [Hz]
    subcarrier_spacing: float = 30e3      # [Hz]
    delay_spread: float = 100e-9          # T_d [s]
    symbol_info_duration: float = 33.33e-6   # OFDM symbol, information part [s]
    cyclic_prefix_duration: float = 2.34e-6  # [s]
    frame_slots: int = 5                  # symbols per radio frame (5 polled, 4 grant-free)
    num_antennas: int = 4                 # base-station antennas
    sic_limit: int = 3                    # max simultaneous decodable uplinks (B)
    packet_bits: int = 736                # payload incl. headers [bit]
    tx_power: float = 0.19953             # device transmit power [W] (23 dBm)
    noise_psd: float = 3.9810717055e-21   # N_0 [W/Hz] (-174 dBm/Hz)
    noise_figure: float = 3.1622776602    # linear (5 dB)
    bs_antenna_gain: float = 3.1622776602  # linear (5 dBi)
    device_antenna_gain: float = 1.0      # linear (0 dBi)
    bs_height: float = 3.0                # [m]
    device_height: float = 1.5            # [m]
    layout: tuple = (50.0, 120.0)         # room extent [m]
    device_speed: float = 0.8333333333    # [m/s] (3 km/h)
    shadowing_std_db: float = 8.03        # log-normal shadowing sigma [dB]
    shadowing_enabled: bool = False

    def __post_init__(self):
        positive = (
            "carrier_frequency", "bandwidth", "subcarrier_spacing", "delay_spread",
            "symbol_info_duration", "cyclic_prefix_duration", "tx_power",
            "noise_psd", "noise_figure", "bs_antenna_gain", "device_antenna_gain",
            "bs_height", "device_height",
        )
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"phy.{name} must be > 0")
        if self.frame_slots not in (4, 5):
            raise ValueError("phy.frame_slots must be 4 or 5")
        if self.num_antennas < 1:
            raise ValueError("phy.num_antennas must be >= 1")
        if self.sic_limit < 0:
            raise ValueError("phy.sic_limit must be >= 0")
        if self.packet_bits < 1:
            raise ValueError("phy.packet_bits must be >= 1")
        if self.device_speed < 0:
            raise ValueError("phy.device_speed must be >= 0")
        if len(self.layout) != 2 or self.layout[0] <= 0 or self.layout[1] <= 0:
            raise ValueError("phy.layout must be two positive extents")

    @property
    def symbol_duration(self) -> float:
        return self.symbol_info_duration + self.cyclic_prefix_duration

    @property
    def frame_duration(self) -> float:
        return self.frame_slots * self.symbol_duration

    @property
    def noise_power(self) -> float:
        """Thermal noise power over the full band, noise figure included [W]."""
        return self.noise_psd * self.bandwidth * self.noise_figure

    @property
    def bs_position(self) -> np.ndarray:
        return np.array([self.layout[0] / 2.0, self.layout[1] / 2.0, self.bs_height])


# ======================================================================
# Fading
# ======================================================================

@dataclass
class FadingMatrix:
    """Per-antenna complex channel coefficients and their lag-1 correlation.

    coefficients: (num_antennas, num_devices) complex
    correlation:  (num_devices,) Gauss-Markov coefficient in [0, 1]
    """

    coefficients: np.ndarray
    correlation: np.ndarray


def jakes_coefficient(speed: float, carrier_frequency: float, frame_duration: float) -> float:
    """Lag-1 fading correlation J0(2 pi f_d T_f) for Doppler f_d = v f_c / c."""
    if speed < 0 or carrier_frequency <= 0 or frame_duration <= 0:
        raise ValueError("speed >= 0 and positive carrier/frame duration required")
    return float(j0(2.0 * math.pi * speed * carrier_frequency * frame_duration / C_LIGHT))


def coherence_time(carrier_frequency: float, speed: float) -> float:
    """Channel coherence time c / (8 f_c v) [s]."""
    if speed <= 0:
        raise ValueError("coherence time undefined for zero speed")
    if carrier_frequency <= 0:
        raise ValueError("carrier_frequency must be > 0")
    return C_LIGHT / (8.0 * carrier_frequency * speed)


def draw_initial_fading(num_antennas: int, num_devices: int, correlation,
                        rng: np.random.Generator) -> FadingMatrix:
    """Stationary start: unit-variance circular complex Gaussian entries."""
    corr = np.broadcast_to(np.asarray(correlation, dtype=float), (num_devices,)).copy()
    shape = (num_antennas, num_devices)
    h = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * math.sqrt(0.5)
    return FadingMatrix(coefficients=h, correlation=corr)


def evolve_fading(state: FadingMatrix, rng: np.random.Generator) -> FadingMatrix:
    """One Gauss-Markov step h' = a h + z, z ~ CN(0, (1 - a^2) I).

    Innovations are independent across antennas and devices, so the
    stationary per-entry variance stays 1.
    """
    a = state.correlation
    shape = state.coefficients.shape
    z = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * math.sqrt(0.5)
    h = a * state.coefficients + np.sqrt(1.0 - a ** 2) * z
    return FadingMatrix(coefficients=h, correlation=state.correlation)


# ======================================================================
# Link budget
# ======================================================================

@dataclass
class LinkBudget:
    """Static per-device link state for one episode."""

    distances: np.ndarray  # 3D BS-device distance [m], shape (K,)
    gains: np.ndarray      # linear power gain incl. antennas and path loss, shape (K,)


def path_loss_db(distance: float, carrier_frequency: float) -> float:
    """Indoor-office NLOS path loss [dB] at 3D distance `distance` [m].

    NLOS is lower-bounded by the LOS curve, per the indoor-office model.
    """
    if distance <= 0:
        raise ValueError("degenerate geometry: non-positive BS-device distance")
    f_ghz = carrier_frequency / 1e9
    pl_los = 32.4 + 17.3 * math.log10(distance) + 20.0 * math.log10(f_ghz)
    pl_nlos = 17.3 + 38.3 * math.log10(distance) + 24.9 * math.log10(f_ghz)
    return max(pl_los, pl_nlos)


def path_gain(position, config: PhyConfig, rng: np.random.Generator | None = None) -> float:
    """Linear power gain BS<->device for a device at `position` (x, y, z) [m].

    Includes both antenna gains and, when enabled, one log-normal shadowing
    draw (per call, i.e. per episode placement).
    """
    pos = np.asarray(position, dtype=float)
    if pos.shape != (3,):
        raise ValueError("position must be an (x, y, z) triple")
    if not (0.0 <= pos[0] <= config.layout[0] and 0.0 <= pos[1] <= config.layout[1]):
        raise ValueError("position outside the layout")
    d = float(np.linalg.norm(pos - config.bs_position))
    pl = path_loss_db(d, config.carrier_frequency)
    if config.shadowing_enabled:
        if rng is None:
            raise ValueError("shadowing enabled but no rng supplied")
        pl += rng.normal(0.0, config.shadowing_std_db)
    return config.bs_antenna_gain * config.device_antenna_gain * 10.0 ** (-pl / 10.0)


def link_budget(positions: np.ndarray, config: PhyConfig,
                rng: np.random.Generator | None = None) -> LinkBudget:
    """Evaluate distances and gains for device positions of shape (K, 3)."""
    positions = np.asarray(positions, dtype=float)
    dists = np.linalg.norm(positions - config.bs_position, axis=1)
    gains = np.array([path_gain(p, config, rng) for p in positions])
    return LinkBudget(distances=dists, gains=gains)


# ======================================================================
# Multi-antenna reception and SIC
# ======================================================================

def received_power(tx_power: float, gain: float, channel: np.ndarray) -> float:
    """Post-MRC useful signal power p * g * ||h||^2."""
    h = np.asarray(channel)
    return float(tx_power * gain * np.vdot(h, h).real)


def cross_interference(channel_target: np.ndarray, channel_interferer: np.ndarray,
                       tx_power: float, gain_interferer: float) -> float:
    """Interferer power leaking into the target's MRC combiner.

    p_j g_j |h_k^H h_j|^2 / ||h_k||^2 for target k, interferer j.
    """
    hk = np.asarray(channel_target)
    hj = np.asarray(channel_interferer)
    norm_sq = np.vdot(hk, hk).real
    if norm_sq == 0.0:
        raise ValueError("target channel vector is zero")
    return float(tx_power * gain_interferer * abs(np.vdot(hk, hj)) ** 2 / norm_sq)


def decoding_order(powers, devices=None) -> np.ndarray:
    """Device ids sorted by decreasing received power, ties by ascending id."""
    powers = np.asarray(powers, dtype=float)
    if powers.size == 0:
        raise ValueError("decoding_order needs at least one device")
    if devices is None:
        devices = np.arange(powers.size)
    else:
        devices = np.asarray(devices)
        if devices.shape != powers.shape:
            raise ValueError("powers and devices must align")
    idx = np.lexsort((devices, -powers))
    return devices[idx]


def sic_sinr(target: int, order: np.ndarray, decoded_so_far: np.ndarray,
             received: np.ndarray, cross: np.ndarray, noise_power: float) -> float:
    """Post-SIC SINR of `target` given the decode order and progress so far.

    Earlier devices in the order interfere only while undecoded; every later
    device always interferes. `received` is the per-device MRC power, `cross`
    the (j, k) leakage matrix, both indexed by global device id.
    """
    order = np.asarray(order)
    pos_list = np.flatnonzero(order == target)
    if pos_list.size != 1:
        raise ValueError("target must appear exactly once in the order")
    pos = pos_list[0]
    interference = 0.0
    for j in order[:pos]:
        if not decoded_so_far[j]:
            interference += cross[j, target]
    for j in order[pos + 1:]:
        interference += cross[j, target]
    return float(received[target] / (interference + noise_power))


# ======================================================================
# Frame geometry
# ======================================================================

def pilot_count(bandwidth: float, delay_spread: float) -> int:
    """Pilots per polled device: ceil(W / W_c) with W_c = 1 / (2 T_d)."""
    if bandwidth <= 0 or delay_spread <= 0:
        raise ValueError("bandwidth and delay_spread must be > 0")
    ratio = 2.0 * bandwidth * delay_spread
    # guard float noise one ulp above an exact integer before the ceiling
    return max(1, math.ceil(ratio - 1e-9))


def channel_uses(bandwidth: float, pilots_per_device: int, num_polled: int,
                 subcarrier_spacing: float, info_duration: float) -> int:
    """Data channel uses left in the frame after pilot overhead of the polled set."""
    if num_polled < 0:
        raise ValueError("num_polled must be >= 0")
    n = math.floor((bandwidth - pilots_per_device * num_polled * subcarrier_spacing)
                   * info_duration)
    if n <= 0:
        raise PilotOverloadError(
            f"{num_polled} polled devices leave no data symbols in the frame")
    return n


# ======================================================================
# Finite-blocklength decoding
# ======================================================================

def fbl_error_probability(sinr: float, blocklength: int, payload_bits: int) -> float:
    """Normal-approximation decoding error for `payload_bits` over `blocklength` uses.

    Q(sqrt(n / V) * (C - L/n)) with C = log2(1 + sinr) and channel dispersion
    V = (sinr / 2) (sinr + 2) / (sinr + 1)^2 * log2(e)^2. Zero (or negative)
    SINR decodes nothing: the error is 1.
    """
    if blocklength < 1 or payload_bits < 1:
        raise ValueError("blocklength and payload_bits must be >= 1")
    if sinr <= 0.0:
        return 1.0
    capacity = math.log2(1.0 + sinr)
    dispersion = 0.5 * sinr * (sinr + 2.0) / (sinr + 1.0) ** 2 * LOG2E ** 2
    arg = math.sqrt(blocklength / dispersion) * (capacity - payload_bits / blocklength)
    eps = 0.5 * erfc(arg / math.sqrt(2.0))
    return float(min(1.0, max(0.0, eps)))


def invert_error_for_power(target_error: float, blocklength: int, payload_bits: int,
                           noise_power: float) -> float:
    """Received power eta* whose SINR meets `target_error`, by bisection.

    Only the monotone branch below error 0.5 (capacity above rate) is
    searched, so target_error must lie in (0, 0.5).
    """
    if not (0.0 < target_error < 0.5):
        raise ValueError("target_error must be in (0, 0.5)")
    if noise_power <= 0:
        raise ValueError("noise_power must be > 0")
    lo = 2.0 ** (payload_bits / blocklength) - 1.0  # error 0.5 here
    hi = lo
    for _ in range(200):
        hi *= 2.0
        if fbl_error_probability(hi, blocklength, payload_bits) < target_error:
            break
    else:
        raise ValueError("target_error unreachable within bracket")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if fbl_error_probability(mid, blocklength, payload_bits) > target_error:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * hi:
            break
    return 0.5 * (lo + hi) * noise_power


# ======================================================================
# Frame decode pass
# ======================================================================

@dataclass
class DecodeOutcome:
    """Result of one SIC pass.

    order/sinr/error_prob are aligned with each other and cover only the
    active devices; decoded is a mask over all K devices.
    """

    order: np.ndarray
    sinr: np.ndarray
    error_prob: np.ndarray
    decoded: np.ndarray
    channel_uses: int = 0

    @classmethod
    def empty(cls, num_devices: int, blocklength: int = 0) -> "DecodeOutcome":
        return cls(order=np.empty(0, dtype=int), sinr=np.empty(0), error_prob=np.empty(0),
                   decoded=np.zeros(num_devices, dtype=bool), channel_uses=blocklength)


def decode_frame(active, fading: FadingMatrix, budget: LinkBudget, config: PhyConfig,
                 num_polled: int, rng: np.random.Generator) -> DecodeOutcome:
    """Run the SIC receiver over the active devices of one frame.

    Decode order is by decreasing MRC power. Each device is decoded with
    probability 1 - eps(SINR); interference from earlier devices vanishes
    only once they are decoded. With more active devices than the SIC limit
    the whole frame is lost, but SINRs (without any cancellation) are still
    reported for diagnostics.
    """
    active = np.asarray(active, dtype=int)
    num_devices = fading.coefficients.shape[1]
    if active.size == 0:
        return DecodeOutcome.empty(num_devices)
    if num_polled < active.size:
        raise ValueError("cannot have more active than polled devices")

    pilots = pilot_count(config.bandwidth, config.delay_spread)
    n = channel_uses(config.bandwidth, pilots, num_polled,
                     config.subcarrier_spacing, config.symbol_info_duration)

    h = fading.coefficients
    received = np.zeros(num_devices)
    for k in active:
        received[k] = received_power(config.tx_power, budget.gains[k], h[:, k])
    cross = np.zeros((num_devices, num_devices))
    for j in active:
        for k in active:
            if j != k:
                cross[j, k] = cross_interference(h[:, k], h[:, j],
                                                 config.tx_power, budget.gains[j])

    order = decoding_order(received[active], active)
    decoded = np.zeros(num_devices, dtype=bool)
    sinrs = np.zeros(active.size)
    errors = np.zeros(active.size)

    if active.size > config.sic_limit:
        # SIC overload: nothing decodable, report no-cancellation SINRs
        for i, k in enumerate(order):
            sinrs[i] = sic_sinr(k, order, decoded, received, cross, config.noise_power)
            errors[i] = fbl_error_probability(sinrs[i], n, config.packet_bits)
        return DecodeOutcome(order=order, sinr=sinrs, error_prob=errors,
                             decoded=decoded, channel_uses=n)

    for i, k in enumerate(order):
        sinrs[i] = sic_sinr(k, order, decoded, received, cross, config.noise_power)
        errors[i] = fbl_error_probability(sinrs[i], n, config.packet_bits)
        decoded[k] = rng.random() < 1.0 - errors[i]
    return DecodeOutcome(order=order, sinr=sinrs, error_prob=errors,
                         decoded=decoded, channel_uses=n)
