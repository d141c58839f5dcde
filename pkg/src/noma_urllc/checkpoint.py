"""Binary checkpoints: versioned header + flat little-endian float64 payload.

Layout: 8-byte magic, then (version, K, hidden, input_size) as u32 and
(update_counter, policy Adam step, value Adam step) as u64, then every
parameter in fixed order: policy params, value params, policy Adam first and
second moments, value Adam moments. Round-trips byte-exactly.
"""

from __future__ import annotations

import struct

import numpy as np

from .nets import Adam, PolicyNet, ValueNet

MAGIC = b"NUSCHED1"
VERSION = 1
_HEADER = struct.Struct("<IIIIQQQ")


def _flatten(params: dict, order) -> np.ndarray:
    return np.concatenate([np.asarray(params[k], dtype=float).ravel() for k in order])


def _unflatten(flat: np.ndarray, template: dict, order, offset: int):
    out = {}
    for key in order:
        size = template[key].size
        out[key] = flat[offset:offset + size].reshape(template[key].shape).copy()
        offset += size
    return out, offset


def save_checkpoint(path, policy: PolicyNet, value: ValueNet, policy_opt: Adam,
                    value_opt: Adam, update_counter: int):
    header = _HEADER.pack(VERSION, policy.num_devices, policy.hidden,
                          policy.input_size, update_counter, policy_opt.t, value_opt.t)
    parts = [
        _flatten(policy.params, PolicyNet.PARAM_ORDER),
        _flatten(value.params, ValueNet.PARAM_ORDER),
        _flatten(policy_opt.m, PolicyNet.PARAM_ORDER),
        _flatten(policy_opt.v, PolicyNet.PARAM_ORDER),
        _flatten(value_opt.m, ValueNet.PARAM_ORDER),
        _flatten(value_opt.v, ValueNet.PARAM_ORDER),
    ]
    payload = np.concatenate(parts).astype("<f8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(header)
        fh.write(payload.tobytes())


def load_checkpoint(path, lr_actor: float, lr_critic: float,
                    beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """Returns (policy, value, policy_opt, value_opt, update_counter).

    Learning rates are runtime configuration, not part of the stored state.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, k, hidden, input_size, update_counter, pol_t, val_t = _HEADER.unpack_from(
        blob, len(MAGIC))
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    flat = np.frombuffer(blob, dtype="<f8", offset=len(MAGIC) + _HEADER.size)

    rng = np.random.default_rng(0)
    policy = PolicyNet(input_size, k, hidden, rng)
    value = ValueNet(input_size, hidden, rng)
    expected = 2 * (sum(p.size for p in policy.params.values())
                    + sum(p.size for p in value.params.values())) \
        + sum(p.size for p in policy.params.values()) \
        + sum(p.size for p in value.params.values())
    if flat.size != expected:
        raise ValueError(f"{path}: payload holds {flat.size} floats, expected {expected}")

    offset = 0
    policy.params, offset = _unflatten(flat, policy.params, PolicyNet.PARAM_ORDER, offset)
    value.params, offset = _unflatten(flat, value.params, ValueNet.PARAM_ORDER, offset)
    policy_opt = Adam(policy.params, lr_actor, beta1, beta2, eps)
    value_opt = Adam(value.params, lr_critic, beta1, beta2, eps)
    policy_opt.m, offset = _unflatten(flat, policy.params, PolicyNet.PARAM_ORDER, offset)
    policy_opt.v, offset = _unflatten(flat, policy.params, PolicyNet.PARAM_ORDER, offset)
    value_opt.m, offset = _unflatten(flat, value.params, ValueNet.PARAM_ORDER, offset)
    value_opt.v, offset = _unflatten(flat, value.params, ValueNet.PARAM_ORDER, offset)
    policy_opt.t = pol_t
    value_opt.t = val_t
    return policy, value, policy_opt, value_opt, update_counter
