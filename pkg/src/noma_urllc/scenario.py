"""Scenario files: flat key-value text with dotted sections.

A scenario fully describes one experiment: radio parameters (phy.*), traffic
(traffic.*), training hyperparameters (ppo.*), prior settings (prior.*),
grant-free baseline settings (sa.*) and top-level run control. Unset keys
fall back to the reference parameter tables; the device count has no sane
default and must be explicit.

Example::

    devices = 8
    agent = noma_ppo
    traffic.model = poisson
    traffic.interarrival_ms = 2.0
    seeds = 1, 2, 3, 4, 5
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
import pathlib
from dataclasses import dataclass, field

from .phy import PhyConfig, channel_uses, invert_error_for_power, pilot_count
from .ppo import PPOConfig
from .schedulers import PriorConfig
from .traffic import TrafficConfig

AGENTS = ("noma_ppo", "noma_ppo_no_prior", "noma_ppo_no_csi", "noma_ppo_full_csi",
          "random", "edf_oracle", "sa_noma_sic")
PROTOCOLS = ("scheduled_5slot", "grantfree_4slot")

# keys the parser accepts, by section; None section = top level
_PHY_KEYS = {
    "carrier_frequency", "bandwidth", "subcarrier_spacing", "delay_spread",
    "symbol_info_duration", "cyclic_prefix_duration", "num_antennas", "sic_limit",
    "packet_bits", "tx_power", "noise_psd", "noise_figure", "bs_antenna_gain",
    "device_antenna_gain", "bs_height", "device_height", "layout", "device_speed",
    "shadowing_std_db", "shadowing_enabled",
}
_TRAFFIC_KEYS = {
    "model", "period_frames", "period_ms", "arrival_prob", "offset",
    "rate_per_frame", "interarrival_ms", "deadline_frames", "deadline_ms",
}
_PPO_KEYS = {
    "discount", "gae_lambda", "clip", "lr_actor", "lr_critic", "hidden",
    "trajectories_per_update", "minibatch", "epochs", "episode_frames",
    "normalize_advantages", "absolute_discount_returns",
}
_PRIOR_KEYS = {"target_error", "staleness", "smoothing", "on_true_buffers"}
_SA_KEYS = {"probability", "grid", "sweep_episodes"}
_TOP_KEYS = {
    "devices", "protocol", "agent", "seeds", "train_episodes", "eval_episodes",
    "eval_every", "eval_greedy", "stop_score", "fixed_distance", "trace",
}


@dataclass
class Scenario:
    """Parsed scenario: explicit top-level fields plus per-section overrides."""

    devices: int
    protocol: str = "scheduled_5slot"
    agent: str = "noma_ppo"
    seeds: list = field(default_factory=lambda: [1, 2, 3, 4, 5])
    train_episodes: int = 10000
    eval_episodes: int = 500
    eval_every: int = 250
    eval_greedy: bool = False
    stop_score: float | None = None
    fixed_distance: float | None = None
    trace: bool = False
    phy: dict = field(default_factory=dict)
    traffic: dict = field(default_factory=dict)
    ppo: dict = field(default_factory=dict)
    prior: dict = field(default_factory=dict)
    sa: dict = field(default_factory=dict)


class ScenarioError(ValueError):
    pass


def _parse_value(raw: str):
    raw = raw.strip()
    if "," in raw:
        return [_parse_value(part) for part in raw.split(",")]
    low = raw.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", ""):
        return None
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    return raw


def parse_scenario(text: str) -> Scenario:
    top: dict = {}
    sections: dict[str, dict] = {"phy": {}, "traffic": {}, "ppo": {}, "prior": {}, "sa": {}}
    known = {"phy": _PHY_KEYS, "traffic": _TRAFFIC_KEYS, "ppo": _PPO_KEYS,
             "prior": _PRIOR_KEYS, "sa": _SA_KEYS}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ScenarioError(f"scenario line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in body.split("=", 1))
        value = _parse_value(raw)
        if "." in key:
            section, sub = key.split(".", 1)
            if section not in sections or sub not in known[section]:
                raise ScenarioError(f"scenario line {lineno}: unknown key {key!r}")
            sections[section][sub] = value
        else:
            if key not in _TOP_KEYS:
                raise ScenarioError(f"scenario line {lineno}: unknown key {key!r}")
            top[key] = value
    if "devices" not in top:
        raise ScenarioError("scenario must set the device count K (key 'devices')")
    if "seeds" in top and not isinstance(top["seeds"], list):
        top["seeds"] = [top["seeds"]]
    sc = Scenario(**top, **sections)
    validate_scenario(sc)
    return sc


def load_scenario(path) -> Scenario:
    return parse_scenario(pathlib.Path(path).read_text())


def serialize_scenario(sc: Scenario) -> str:
    """Canonical text form; parsing it back yields an equal Scenario."""
    def fmt(value):
        if isinstance(value, list):
            return ", ".join(fmt(v) for v in value)
        if isinstance(value, bool):
            return "true" if value else "false"
        if value is None:
            return "none"
        return repr(value) if isinstance(value, float) else str(value)

    lines = []
    for name in ("devices", "protocol", "agent", "seeds", "train_episodes",
                 "eval_episodes", "eval_every", "eval_greedy", "stop_score",
                 "fixed_distance", "trace"):
        value = getattr(sc, name)
        if value is None and name in ("stop_score", "fixed_distance"):
            continue
        lines.append(f"{name} = {fmt(value)}")
    for section in ("phy", "traffic", "ppo", "prior", "sa"):
        for key in sorted(getattr(sc, section)):
            lines.append(f"{section}.{key} = {fmt(getattr(sc, section)[key])}")
    return "\n".join(lines) + "\n"


def save_scenario(sc: Scenario, path):
    pathlib.Path(path).write_text(serialize_scenario(sc))


def config_hash(sc: Scenario) -> str:
    return hashlib.sha256(serialize_scenario(sc).encode()).hexdigest()[:16]


def code_hash() -> str:
    digest = hashlib.sha256()
    pkg = pathlib.Path(__file__).parent
    for src in sorted(pkg.glob("*.py")):
        digest.update(src.name.encode())
        digest.update(src.read_bytes())
    return digest.hexdigest()[:16]


# ======================================================================
# Builders: scenario -> concrete configs
# ======================================================================

def build_phy(sc: Scenario) -> PhyConfig:
    overrides = dict(sc.phy)
    if "layout" in overrides:
        overrides["layout"] = tuple(float(v) for v in overrides["layout"])
    slots = 5 if sc.protocol == "scheduled_5slot" else 4
    try:
        return PhyConfig(frame_slots=slots, **overrides)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"invalid phy settings: {exc}") from exc


def build_traffic(sc: Scenario, phy: PhyConfig) -> TrafficConfig:
    """Resolve the traffic section, converting ms-based keys with the frame time."""
    t = dict(sc.traffic)
    tf = phy.frame_duration
    model = t.pop("model", "poisson")
    deadline = t.pop("deadline_frames", None)
    if deadline is None:
        deadline_ms = t.pop("deadline_ms", 1.0)
        deadline = math.floor(deadline_ms * 1e-3 / tf)
    else:
        t.pop("deadline_ms", None)
    kwargs = {"num_devices": sc.devices, "model": model, "deadline_frames": deadline}
    if model == "periodic":
        period = t.pop("period_frames", None)
        if period is None:
            period = max(1, round(t.pop("period_ms", 2.0) * 1e-3 / tf))
        else:
            t.pop("period_ms", None)
        kwargs["period_frames"] = period
        kwargs["arrival_prob"] = t.pop("arrival_prob", 1.0)
        kwargs["offset"] = t.pop("offset", 0)
        t.pop("interarrival_ms", None)
        t.pop("rate_per_frame", None)
    else:
        rate = t.pop("rate_per_frame", None)
        if rate is None:
            rate = tf / (t.pop("interarrival_ms", 2.0) * 1e-3)
        else:
            t.pop("interarrival_ms", None)
        kwargs["rate_per_frame"] = rate
        for key in ("period_frames", "period_ms", "arrival_prob", "offset"):
            t.pop(key, None)
    try:
        return TrafficConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"invalid traffic settings: {exc}") from exc


def build_ppo(sc: Scenario) -> PPOConfig:
    try:
        return PPOConfig(**sc.ppo)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"invalid ppo settings: {exc}") from exc


def build_prior(sc: Scenario, phy: PhyConfig) -> PriorConfig:
    """Prior thresholds; eta* comes from inverting the decoding error target.

    The blocklength used for the inversion assumes a full polled set of
    min(K, SIC limit) devices, the regime the gate is protecting.
    """
    p = dict(sc.prior)
    target = p.pop("target_error", 1e-5)
    staleness = p.pop("staleness", 63.0)
    smoothing = p.pop("smoothing", 0.1)
    p.pop("on_true_buffers", None)
    polled = min(sc.devices, phy.sic_limit)
    n = channel_uses(phy.bandwidth, pilot_count(phy.bandwidth, phy.delay_spread),
                     polled, phy.subcarrier_spacing, phy.symbol_info_duration)
    eta_star = invert_error_for_power(target, n, phy.packet_bits, phy.noise_power)
    return PriorConfig(power_threshold=eta_star, staleness_threshold=staleness,
                       smoothing=smoothing)


def validate_scenario(sc: Scenario):
    """Cross-field checks; raises ScenarioError naming the offending field."""
    if not isinstance(sc.devices, int) or sc.devices < 1:
        raise ScenarioError("devices must be a positive integer")
    if sc.protocol not in PROTOCOLS:
        raise ScenarioError(f"protocol must be one of {PROTOCOLS}")
    if sc.agent not in AGENTS:
        raise ScenarioError(f"agent must be one of {AGENTS}")
    if (sc.agent == "sa_noma_sic") != (sc.protocol == "grantfree_4slot"):
        raise ScenarioError("agent sa_noma_sic pairs with protocol grantfree_4slot "
                            "(and only that agent does)")
    if not sc.seeds or not all(isinstance(s, int) for s in sc.seeds):
        raise ScenarioError("seeds must be a nonempty list of integers")
    for name in ("train_episodes", "eval_episodes", "eval_every"):
        if getattr(sc, name) < 1:
            raise ScenarioError(f"{name} must be >= 1")
    if sc.fixed_distance is not None and sc.fixed_distance <= 0:
        raise ScenarioError("fixed_distance must be > 0")
    prob = sc.sa.get("probability")
    if prob is not None and not (0.0 <= prob <= 1.0):
        raise ScenarioError("sa.probability must lie in [0, 1]")
    phy = build_phy(sc)
    traffic = build_traffic(sc, phy)
    if traffic.max_deadline < 1:
        raise ScenarioError("traffic deadline resolves below one frame")
    build_ppo(sc)
    if sc.fixed_distance is not None:
        half = min(phy.layout) / 2.0
        if sc.fixed_distance > half:
            raise ScenarioError("fixed_distance places devices outside the layout")
