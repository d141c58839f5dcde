"""Classical schedulers and the Bayesian polling prior.

Earliest-deadline-first (on true buffers for the oracle baseline, on the
agent's estimate inside the prior), a channel-quality gate, the posterior
that fuses the prior with the learned per-device poll probabilities, plus
the random scheduler and the slotted-ALOHA style grant-free baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .traffic import head_of_line


@dataclass
class PriorConfig:
    power_threshold: float       # eta* [W]: minimum power for reliable decoding
    staleness_threshold: float = 63.0  # tau* [frames]: channel info older than this is stale
    smoothing: float = 0.1       # kappa: mass kept on prior-rejected branches

    def __post_init__(self):
        if self.power_threshold <= 0:
            raise ValueError("power_threshold must be > 0")
        if self.staleness_threshold <= 0:
            raise ValueError("staleness_threshold must be > 0")
        if not (0.0 <= self.smoothing <= 1.0):
            raise ValueError("smoothing must lie in [0, 1]")


def edf_schedule(buffers: np.ndarray, slots: int, rng: np.random.Generator) -> np.ndarray:
    """Poll the (up to) `slots` backlogged devices with the most urgent deadlines.

    Ties are broken uniformly at random. Devices with empty buffers never
    get a slot.
    """
    buffers = np.asarray(buffers)
    k = buffers.shape[0]
    if slots < 0:
        raise ValueError("slots must be >= 0")
    action = np.zeros(k, dtype=np.int64)
    deadlines = []
    for dev in range(k):
        hol = head_of_line(buffers[dev])
        if hol is not None:
            deadlines.append((hol, dev))
    if not deadlines or slots == 0:
        return action
    hols = np.array([d for d, _ in deadlines], dtype=float)
    devs = np.array([dev for _, dev in deadlines])
    order = np.lexsort((rng.random(len(devs)), hols))
    for i in order[:slots]:
        action[devs[i]] = 1
    return action


def channel_prior(power_estimate: np.ndarray, age_active: np.ndarray,
                  config: PriorConfig) -> np.ndarray:
    """Per-device mask: 0 only when the channel is known bad and fresh.

    A device is rejected when its last seen power is at or below eta* and
    that information is at most tau* frames old. Stale or never-observed
    devices pass (optimistic default).
    """
    bad = np.asarray(power_estimate) <= config.power_threshold
    fresh = np.asarray(age_active) <= config.staleness_threshold
    return np.where(bad & fresh, 0, 1).astype(np.int64)


def combined_prior(buffer_estimate: np.ndarray, power_estimate: np.ndarray,
                   age_active: np.ndarray, slots: int, config: PriorConfig,
                   rng: np.random.Generator) -> np.ndarray:
    """EDF on the buffer estimate gated by the channel mask."""
    return edf_schedule(buffer_estimate, slots, rng) * channel_prior(
        power_estimate, age_active, config)


def posterior_policy(branch_probs: np.ndarray, prior: np.ndarray,
                     smoothing: float) -> np.ndarray:
    """Fuse learned per-branch probabilities with the binary prior.

    Branch k polls with probability pi f' / (pi f' + (1 - pi)) where
    f' = f + kappa (1 - f); kappa = 0 recovers the hard prior, kappa = 1
    ignores it.
    """
    pi = np.asarray(branch_probs, dtype=float)
    f = np.asarray(prior, dtype=float)
    if np.any(pi < 0) or np.any(pi > 1):
        raise ValueError("branch_probs must lie in [0, 1]")
    f_eff = f + smoothing * (1.0 - f)
    num = pi * f_eff
    denom = num + (1.0 - pi)
    # pi = 1 against a hard-rejecting prior: define as 0 (the prior wins)
    return np.where(denom > 0.0, num / np.maximum(denom, 1e-300), 0.0)


def random_schedule(num_devices: int, slots: int, rng: np.random.Generator) -> np.ndarray:
    """Poll a uniformly random subset of exactly min(slots, K) devices."""
    if slots < 0 or num_devices < 1:
        raise ValueError("need num_devices >= 1 and slots >= 0")
    action = np.zeros(num_devices, dtype=np.int64)
    pick = rng.choice(num_devices, size=min(slots, num_devices), replace=False)
    action[pick] = 1
    return action


def sa_transmit_decision(has_packet: bool, probability: float,
                         rng: np.random.Generator) -> bool:
    """Grant-free device rule: transmit with fixed probability while backlogged."""
    if not (0.0 <= probability <= 1.0):
        raise ValueError("probability must lie in [0, 1]")
    return bool(has_packet) and rng.random() < probability

def optimize_sa_probability(score_fn, grid) -> tuple[float, dict]:
    """Pick the transmit probability with the best mean score on `grid`.

    score_fn(p) must return the mean evaluation score at that p. Ties go to
    the smaller probability. Returns (best_p, {p: score}).
    """
    grid = sorted(float(p) for p in grid)
    if not grid:
        raise ValueError("empty probability grid")
    scores = {p: float(score_fn(p)) for p in grid}
    best = max(grid, key=lambda p: (scores[p], -p))
    return best, scores
