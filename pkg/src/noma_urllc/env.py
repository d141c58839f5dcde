"""Frame-level polling environment: partially observed NOMA uplink scheduling.

Each frame the scheduler polls a subset of devices; polled devices with a
backlog transmit, the SIC receiver decodes what it can, and the scheduler
observes only activity, decode flags, the (capped) buffers of decoded
devices and their received powers. The agent-side recursion keeps a
sufficient statistic: buffer and power estimates plus poll/activity/success
ages.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import phy
from .traffic import TrafficConfig, generate_arrivals, buffer_transition, head_of_line

BUFFER_OBS_CAP = 7  # 3-bit buffer report per deadline slot


@dataclass
class Observation:
    """What the base station learns from one frame."""

    active: np.ndarray            # u(t), bool (K,)
    decoded: np.ndarray           # phi(t), bool (K,)
    observed_buffers: np.ndarray  # buffers of decoded devices, capped, (K, d_max)
    observed_powers: np.ndarray   # MRC powers of active devices [W], (K,)
    last_reward: int


@dataclass
class AgentState:
    """Scheduler-side sufficient statistic."""

    buffer_estimate: np.ndarray  # (K, d_max) int
    power_estimate: np.ndarray   # (K,) [W], 0 until first observed
    age_polled: np.ndarray       # frames since last poll, inf before the first
    age_active: np.ndarray       # frames since last activity
    age_success: np.ndarray      # frames since last successful decode
    last_reward: int = 0

    @classmethod
    def initial(cls, num_devices: int, max_deadline: int) -> "AgentState":
        return cls(
            buffer_estimate=np.zeros((num_devices, max_deadline), dtype=np.int64),
            power_estimate=np.zeros(num_devices),
            age_polled=np.full(num_devices, np.inf),
            age_active=np.full(num_devices, np.inf),
            age_success=np.full(num_devices, np.inf),
            last_reward=0,
        )


@dataclass
class EnvState:
    """Full simulator state (the scheduler never sees all of it)."""

    frame: int
    buffers: np.ndarray
    fading: phy.FadingMatrix
    budget: phy.LinkBudget
    positions: np.ndarray
    last_observation: Observation


def update_agent_state(prev: AgentState, obs: Observation, prev_action: np.ndarray) -> AgentState:
    """Fold one observation into the sufficient statistic.

    Ages reset to 1 on their event, otherwise grow by one frame. Power
    estimates are overwritten for active devices. Buffer estimates take the
    observed rows of decoded devices, then the whole estimate ages by one
    deadline with expired entries dropped; arrivals the scheduler cannot see
    are left out.
    """
    polled = np.asarray(prev_action, dtype=bool)
    age_polled = np.where(polled, 1.0, prev.age_polled + 1.0)
    age_active = np.where(obs.active, 1.0, prev.age_active + 1.0)
    age_success = np.where(obs.decoded, 1.0, prev.age_success + 1.0)

    power = np.where(obs.active, obs.observed_powers, prev.power_estimate)

    estimate = np.where(obs.decoded[:, None], obs.observed_buffers, prev.buffer_estimate)
    aged = np.zeros_like(estimate)
    aged[:, :-1] = estimate[:, 1:]

    return AgentState(buffer_estimate=aged, power_estimate=power,
                      age_polled=age_polled, age_active=age_active,
                      age_success=age_success, last_reward=int(obs.last_reward))


def preprocess(state: AgentState, power_threshold: float) -> np.ndarray:
    """Flatten the agent state into the 5K+1 network input.

    Head-of-line delays and ages are encoded as reciprocals (0 stands for
    "empty"/"never"), powers as log10(eta / eta*) clipped to +-4 decades and
    scaled to [-1, 1], with 0 for never-observed devices.
    """
    est = state.buffer_estimate
    k = est.shape[0]
    hol = np.zeros(k)
    for dev in range(k):
        d = head_of_line(est[dev])
        if d is not None:
            hol[dev] = 1.0 / d
    with np.errstate(divide="ignore"):
        inv_polled = np.where(np.isinf(state.age_polled), 0.0, 1.0 / state.age_polled)
        inv_active = np.where(np.isinf(state.age_active), 0.0, 1.0 / state.age_active)
        inv_success = np.where(np.isinf(state.age_success), 0.0, 1.0 / state.age_success)
    power = np.zeros(k)
    seen = state.power_estimate > 0.0
    if np.any(seen):
        ratio = np.log10(state.power_estimate[seen] / power_threshold)
        power[seen] = np.clip(ratio, -4.0, 4.0) / 4.0
    return np.concatenate([hol, inv_polled, inv_active, inv_success, power,
                           [float(state.last_reward)]])


class NomaEnv:
    """One scheduling cell: K devices, a SIC receiver, deadline traffic.

    Holds its own rng; positions are redrawn each reset unless fixed ones are
    supplied. Tallies generated/delivered/expired packets per device so that
    conservation and fairness can be checked after any episode.
    """

    def __init__(self, phy_config: phy.PhyConfig, traffic_config: TrafficConfig,
                 rng: np.random.Generator, positions: np.ndarray | None = None,
                 trace: bool = False):
        if traffic_config.num_devices < 1:
            raise ValueError("need at least one device")
        self.phy = phy_config
        self.traffic = traffic_config
        self.num_devices = traffic_config.num_devices
        self.rng = rng
        self.fixed_positions = None if positions is None else np.asarray(positions, dtype=float)
        self.trace_enabled = trace
        self.trace: list[dict] = []
        self.state: EnvState | None = None
        self._correlation = phy.jakes_coefficient(
            phy_config.device_speed, phy_config.carrier_frequency, phy_config.frame_duration)
        self.reset_tallies()

    def reset_tallies(self):
        k = self.num_devices
        self.generated = np.zeros(k, dtype=np.int64)
        self.delivered = np.zeros(k, dtype=np.int64)
        self.expired = np.zeros(k, dtype=np.int64)

    def _draw_positions(self) -> np.ndarray:
        if self.fixed_positions is not None:
            pos = self.fixed_positions
            if pos.shape == (self.num_devices, 2):
                pos = np.column_stack([pos, np.full(self.num_devices, self.phy.device_height)])
            if pos.shape != (self.num_devices, 3):
                raise ValueError("positions must be (K, 2) or (K, 3)")
            return pos.copy()
        xy = self.rng.uniform([0.0, 0.0], list(self.phy.layout), size=(self.num_devices, 2))
        return np.column_stack([xy, np.full(self.num_devices, self.phy.device_height)])

    def reset(self) -> tuple[EnvState, AgentState]:
        positions = self._draw_positions()
        budget = phy.link_budget(positions, self.phy,
                                 self.rng if self.phy.shadowing_enabled else None)
        fading = phy.draw_initial_fading(self.phy.num_antennas, self.num_devices,
                                         self._correlation, self.rng)
        k, dmax = self.num_devices, self.traffic.max_deadline
        obs0 = Observation(active=np.zeros(k, dtype=bool), decoded=np.zeros(k, dtype=bool),
                           observed_buffers=np.zeros((k, dmax), dtype=np.int64),
                           observed_powers=np.zeros(k), last_reward=0)
        self.state = EnvState(frame=0, buffers=self.traffic.empty_buffers(),
                              fading=fading, budget=budget, positions=positions,
                              last_observation=obs0)
        self.reset_tallies()
        self.trace = []
        return self.state, AgentState.initial(k, dmax)

    def true_received_powers(self) -> np.ndarray:
        """Oracle MRC powers of every device under the current fading."""
        h = self.state.fading.coefficients
        return self.phy.tx_power * self.state.budget.gains * (np.abs(h) ** 2).sum(axis=0)

    def step(self, action) -> tuple[Observation, int]:
        if self.state is None:
            raise RuntimeError("call reset() before step()")
        action = np.asarray(action)
        if action.shape != (self.num_devices,):
            raise ValueError(f"action must have shape ({self.num_devices},)")
        polled = action.astype(bool)
        st = self.state

        backlogged = st.buffers.sum(axis=1) > 0
        active = polled & backlogged
        active_ids = np.flatnonzero(active)

        if active_ids.size > 0:
            outcome = phy.decode_frame(active_ids, st.fading, st.budget, self.phy,
                                       int(polled.sum()), self.rng)
        else:
            outcome = phy.DecodeOutcome.empty(self.num_devices)
        reward = int(outcome.decoded.sum())
        # SIC hard limit: overloading the receiver can never pay
        assert active_ids.size <= self.phy.sic_limit or reward == 0

        observed_buffers = np.where(outcome.decoded[:, None],
                                    np.minimum(st.buffers, BUFFER_OBS_CAP), 0)
        powers = np.zeros(self.num_devices)
        if active_ids.size > 0:
            h = st.fading.coefficients
            for k in active_ids:
                powers[k] = phy.received_power(self.phy.tx_power, st.budget.gains[k], h[:, k])
        obs = Observation(active=active, decoded=outcome.decoded.copy(),
                          observed_buffers=observed_buffers, observed_powers=powers,
                          last_reward=reward)

        arrivals = generate_arrivals(st.frame, self.traffic, self.rng)
        buffers, expired = buffer_transition(st.buffers, outcome.decoded, arrivals,
                                             self.traffic.deadline_frames)
        self.generated += arrivals
        self.delivered += outcome.decoded.astype(np.int64)
        self.expired += expired

        fading = phy.evolve_fading(st.fading, self.rng)
        self.state = EnvState(frame=st.frame + 1, buffers=buffers, fading=fading,
                              budget=st.budget, positions=st.positions,
                              last_observation=obs)
        if self.trace_enabled:
            self.trace.append({
                "frame": st.frame,
                "action": polled.astype(int).tolist(),
                "active": active.astype(int).tolist(),
                "decoded": outcome.decoded.astype(int).tolist(),
                "reward": reward,
            })
        return obs, reward

    def conservation(self) -> tuple[int, int, int, int]:
        """(generated, delivered, expired, residual); first = sum of the rest."""
        residual = int(self.state.buffers.sum()) if self.state is not None else 0
        return (int(self.generated.sum()), int(self.delivered.sum()),
                int(self.expired.sum()), residual)


# ======================================================================
# Metrics
# ======================================================================

def urllc_score(delivered: int, generated: int) -> float:
    """Fraction of generated packets delivered within their deadline."""
    if generated <= 0:
        raise ValueError("score undefined with no generated packets")
    return delivered / generated

def jain_index(scores) -> float:
    """Jain fairness (sum x)^2 / (n sum x^2) over per-device scores."""
    x = np.asarray(scores, dtype=float)
    if x.size == 0 or np.any(x < 0):
        raise ValueError("scores must be a nonempty nonnegative vector")
    denom = x.size * float(np.sum(x ** 2))
    if denom == 0.0:
        raise ValueError("Jain index undefined for an all-zero vector")
    return float(np.sum(x)) ** 2 / denom

def action_space_size(num_devices: int, slots: int) -> int:
    """Count of poll subsets of size >= slots among K devices (exact integer)."""
    if not (0 <= slots <= num_devices):
        raise ValueError("need 0 <= slots <= num_devices")
    return 2 ** num_devices - sum(math.comb(num_devices, k) for k in range(slots))
