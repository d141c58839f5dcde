"""Deadline-indexed traffic buffers and the two arrival models.

A buffer is a (K, d_max) integer matrix: entry (k, d-1) counts packets of
device k that expire unless delivered within the next d frames. Arrivals are
probabilistic-periodic or Poisson; the per-frame transition removes delivered
head-of-line packets, ages everything by one deadline and drops what ran out.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _per_device(value, num_devices: int, dtype) -> np.ndarray:
    arr = np.asarray(value, dtype=dtype)
    if arr.ndim == 0:
        arr = np.full(num_devices, arr, dtype=dtype)
    if arr.shape != (num_devices,):
        raise ValueError(f"expected scalar or length-{num_devices} sequence")
    return arr


@dataclass
class TrafficConfig:
    """Per-device arrival model, deadlines in frames.

    model 'periodic': device k draws Bernoulli(arrival_prob[k]) exactly at
    frames t with t mod period_frames == offset[k]. model 'poisson': Poisson
    arrivals at rate_per_frame[k] each frame.
    """

    num_devices: int
    model: str = "poisson"
    deadline_frames: np.ndarray = None   # delta_k, shape (K,)
    period_frames: int = 1               # N_p (periodic model)
    arrival_prob: np.ndarray = None      # q_k, shape (K,) (periodic model)
    offset: np.ndarray = None            # f_k, shape (K,) (periodic model)
    rate_per_frame: np.ndarray = None    # lambda_k * T_f, shape (K,) (poisson model)

    def __post_init__(self):
        k = self.num_devices
        if k < 1:
            raise ValueError("traffic.num_devices must be >= 1")
        if self.model not in ("periodic", "poisson"):
            raise ValueError(f"unknown traffic model {self.model!r}")
        self.deadline_frames = _per_device(
            5 if self.deadline_frames is None else self.deadline_frames, k, np.int64)
        if np.any(self.deadline_frames < 1):
            raise ValueError("deadline_frames must be >= 1")
        if self.model == "periodic":
            if self.period_frames < 1:
                raise ValueError("period_frames must be >= 1")
            self.arrival_prob = _per_device(
                1.0 if self.arrival_prob is None else self.arrival_prob, k, float)
            if np.any(self.arrival_prob < 0) or np.any(self.arrival_prob > 1):
                raise ValueError("arrival_prob must lie in [0, 1]")
            self.offset = _per_device(0 if self.offset is None else self.offset, k, np.int64)
            if np.any(self.offset < 0) or np.any(self.offset >= self.period_frames):
                raise ValueError("offset must lie in [0, period_frames)")
        else:
            self.rate_per_frame = _per_device(
                0.0 if self.rate_per_frame is None else self.rate_per_frame, k, float)
            if np.any(self.rate_per_frame < 0):
                raise ValueError("rate_per_frame must be >= 0")

    @property
    def max_deadline(self) -> int:
        return int(self.deadline_frames.max())

    def empty_buffers(self) -> np.ndarray:
        return np.zeros((self.num_devices, self.max_deadline), dtype=np.int64)


def generate_arrivals(frame: int, config: TrafficConfig, rng: np.random.Generator) -> np.ndarray:
    """Packets generated by each device during frame `frame`."""
    if config.model == "periodic":
        due = (frame % config.period_frames) == config.offset
        draws = rng.random(config.num_devices) < config.arrival_prob
        return (due & draws).astype(np.int64)
    return rng.poisson(config.rate_per_frame).astype(np.int64)


def head_of_line(buffer_row: np.ndarray):
    """Most urgent remaining deadline (1-indexed) of one device, None if empty."""
    nonzero = np.flatnonzero(buffer_row)
    if nonzero.size == 0:
        return None
    return int(nonzero[0]) + 1


def buffer_transition(buffers: np.ndarray, decoded: np.ndarray, arrivals: np.ndarray,
                      deadlines: np.ndarray):
    """Advance buffers by one frame.

    Removes the head-of-line packet of every decoded device, shifts all
    deadlines down by one (what was due in 1 frame expires), and enqueues
    arrivals at each device's own deadline. Returns (new_buffers, expired)
    where expired counts the packets dropped per device this frame.
    """
    buffers = np.asarray(buffers)
    k, dmax = buffers.shape
    after = buffers.copy()
    for dev in np.flatnonzero(decoded):
        hol = head_of_line(after[dev])
        if hol is None:
            raise RuntimeError(f"device {dev} flagged decoded with an empty buffer")
        after[dev, hol - 1] -= 1
    expired = after[:, 0].copy()
    new = np.zeros_like(after)
    new[:, :-1] = after[:, 1:]
    new[np.arange(k), np.asarray(deadlines) - 1] += arrivals
    return new, expired
