"""Experiment harness: wire scenarios to envs/agents, run, and emit artifacts.

Per seed, independent rng streams are spawned for the training env, the
evaluation env, action sampling, minibatch shuffling and evaluation actions,
so reruns of the same scenario and seed reproduce bit-identically.
"""

from __future__ import annotations

import json
import pathlib
import time

import numpy as np

from . import checkpoint as ckpt
from .env import NomaEnv, jain_index, update_agent_state
from .nets import PolicyNet, ValueNet
from .ppo import PPOAgent, Trainer
from .scenario import (Scenario, build_phy, build_ppo, build_prior, build_traffic,
                       code_hash, config_hash, serialize_scenario)
from .schedulers import (edf_schedule, optimize_sa_probability, random_schedule,
                         sa_transmit_decision)

CURVE_HEADER = "seed,update,episodes_seen,urllc_score,mean_reward"
DEFAULT_SA_GRID = [round(0.05 * i, 2) for i in range(1, 19)]  # 0.05 .. 0.90


def fixed_ring_positions(sc: Scenario, phy) -> np.ndarray | None:
    """Devices on a circle of radius fixed_distance around the BS, if requested."""
    if sc.fixed_distance is None:
        return None
    k = sc.devices
    center = phy.bs_position[:2]
    angles = 2.0 * np.pi * np.arange(k) / k
    xy = center + sc.fixed_distance * np.column_stack([np.cos(angles), np.sin(angles)])
    return np.column_stack([xy, np.full(k, phy.device_height)])


def make_env(sc: Scenario, rng: np.random.Generator, trace: bool = False) -> NomaEnv:
    phy = build_phy(sc)
    traffic = build_traffic(sc, phy)
    return NomaEnv(phy, traffic, rng, positions=fixed_ring_positions(sc, phy),
                   trace=trace)


def _streams(seed: int, count: int = 5):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


def build_ppo_agent(sc: Scenario, rng: np.random.Generator,
                    nets_from=None) -> PPOAgent:
    phy = build_phy(sc)
    cfg = build_ppo(sc)
    prior_cfg = build_prior(sc, phy)
    input_size = 5 * sc.devices + 1
    if nets_from is None:
        policy = PolicyNet(input_size, sc.devices, cfg.hidden, rng)
        value = ValueNet(input_size, cfg.hidden, rng)
    else:
        policy, value = nets_from
    use_prior = sc.agent != "noma_ppo_no_prior"
    csi_mode = {"noma_ppo_no_csi": "none", "noma_ppo_full_csi": "full"}.get(sc.agent, "agent")
    return PPOAgent(policy, value,
                    prior=prior_cfg if use_prior else None,
                    power_threshold=prior_cfg.power_threshold,
                    csi_mode=csi_mode,
                    prior_on_true_buffers=bool(sc.prior.get("on_true_buffers", False)))


# ======================================================================
# Baseline rollouts
# ======================================================================

def baseline_action(kind: str, env: NomaEnv, rng: np.random.Generator,
                    sa_probability: float) -> np.ndarray:
    if kind == "random":
        return random_schedule(env.num_devices, env.phy.sic_limit, rng)
    if kind == "edf_oracle":
        return edf_schedule(env.state.buffers, env.phy.sic_limit, rng)
    if kind == "sa_noma_sic":
        backlogged = env.state.buffers.sum(axis=1) > 0
        return np.array([int(sa_transmit_decision(bool(b), sa_probability, rng))
                         for b in backlogged], dtype=np.int64)
    raise ValueError(f"unknown baseline {kind!r}")


def evaluate_baseline(sc: Scenario, kind: str, seed: int, episodes: int,
                      frames: int, sa_probability: float = 0.5) -> dict:
    env_rng, act_rng = _streams(seed, 2)
    env = make_env(sc, env_rng)
    generated = np.zeros(sc.devices, dtype=np.int64)
    delivered = np.zeros(sc.devices, dtype=np.int64)
    expired = total_reward = residual = 0
    for _ in range(episodes):
        env.reset()
        for _ in range(frames):
            action = baseline_action(kind, env, act_rng, sa_probability)
            _, reward = env.step(action)
            total_reward += reward
        g, d, e, r = env.conservation()
        assert g == d + e + r
        generated += env.generated
        delivered += env.delivered
        expired += e
        residual += r
    return _summarize(generated, delivered, expired, residual, total_reward,
                      episodes * frames)


def _summarize(generated, delivered, expired, residual, total_reward, frames) -> dict:
    total_gen = int(generated.sum())
    seen = generated > 0
    per_device = np.zeros(len(generated))
    per_device[seen] = delivered[seen] / generated[seen]
    return {
        "urllc_score": float(delivered.sum() / total_gen) if total_gen else float("nan"),
        "mean_reward": total_reward / frames,
        "jain_index": jain_index(per_device[seen]) if np.any(seen) else float("nan"),
        "generated": total_gen,
        "delivered": int(delivered.sum()),
        "expired": int(expired),
        "residual": int(residual),
        "per_device_score": [round(float(x), 6) for x in per_device],
    }


# ======================================================================
# Top-level runs
# ======================================================================

def run_training(sc: Scenario, seeds=None, out_dir=None) -> dict:
    """Train the scenario's PPO agent on each seed; returns the run report."""
    if sc.agent in ("random", "edf_oracle", "sa_noma_sic"):
        raise ValueError(f"agent {sc.agent!r} is not trainable; use run_evaluation")
    seeds = list(sc.seeds if seeds is None else seeds)
    t0 = time.time()
    cfg = build_ppo(sc)
    curves, finals, trained = {}, {}, {}
    for seed in seeds:
        env_rng, eval_env_rng, act_rng, shuf_rng, eval_act_rng, init_rng = _streams(seed, 6)
        train_env = make_env(sc, env_rng)
        eval_env = make_env(sc, eval_env_rng)
        agent = build_ppo_agent(sc, init_rng)
        trainer = Trainer(train_env, eval_env, agent, cfg, act_rng, shuf_rng,
                          eval_act_rng)
        curve = trainer.run(sc.train_episodes, eval_every=sc.eval_every,
                            eval_episodes=min(sc.eval_episodes, 64),
                            greedy_eval=sc.eval_greedy, stop_score=sc.stop_score)
        final = _final_evaluation(sc, trainer)
        curves[seed] = [[p.update, p.episodes_seen, p.urllc_score, p.mean_reward]
                        for p in curve]
        finals[seed] = final
        trained[seed] = trainer
        if out_dir is not None:
            out = pathlib.Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            ckpt.save_checkpoint(out / f"checkpoint_seed{seed}.bin", agent.policy,
                                 agent.value, trainer.policy_opt, trainer.value_opt,
                                 trainer.update_counter)
    report = _make_report(sc, seeds, curves, finals, time.time() - t0)
    if out_dir is not None:
        emit_metrics(report, out_dir)
        _maybe_traces(sc, trained, out_dir)
    return report


def _final_evaluation(sc: Scenario, trainer: Trainer) -> dict:
    env = trainer.eval_env
    generated = np.zeros(sc.devices, dtype=np.int64)
    delivered = np.zeros(sc.devices, dtype=np.int64)
    expired = residual = total_reward = 0
    for _ in range(sc.eval_episodes):
        _, agent_state = env.reset()
        for _ in range(trainer.config.episode_frames):
            action, _, _ = trainer.agent.act(agent_state, env, trainer.eval_rng,
                                             greedy=sc.eval_greedy)
            obs, reward = env.step(action)
            agent_state = update_agent_state(agent_state, obs, action)
            total_reward += reward
        g, d, e, r = env.conservation()
        assert g == d + e + r
        generated += env.generated
        delivered += env.delivered
        expired += e
        residual += r
    return _summarize(generated, delivered, expired, residual, total_reward,
                      sc.eval_episodes * trainer.config.episode_frames)


def run_evaluation(sc: Scenario, seeds=None, checkpoint_path=None,
                   out_dir=None) -> dict:
    """Evaluate the scenario's agent (baseline, or PPO from a checkpoint)."""
    seeds = list(sc.seeds if seeds is None else seeds)
    t0 = time.time()
    frames = build_ppo(sc).episode_frames
    finals = {}
    if sc.agent in ("random", "edf_oracle", "sa_noma_sic"):
        sa_p = sc.sa.get("probability", 0.5)
        for seed in seeds:
            finals[seed] = evaluate_baseline(sc, sc.agent, seed, sc.eval_episodes,
                                             frames, sa_p)
    else:
        if checkpoint_path is None:
            raise ValueError("evaluating a PPO agent needs a checkpoint")
        cfg = build_ppo(sc)
        policy, value, *_ = ckpt.load_checkpoint(checkpoint_path, cfg.lr_actor,
                                                 cfg.lr_critic)
        if policy.num_devices != sc.devices:
            raise ValueError(f"checkpoint trained for K={policy.num_devices}, "
                             f"scenario has K={sc.devices}")
        for seed in seeds:
            env_rng, eval_env_rng, act_rng, shuf_rng, eval_act_rng, init_rng = \
                _streams(seed, 6)
            eval_env = make_env(sc, eval_env_rng)
            agent = build_ppo_agent(sc, init_rng, nets_from=(policy, value))
            trainer = Trainer(eval_env, eval_env, agent, cfg, act_rng, shuf_rng,
                              eval_act_rng)
            finals[seed] = _final_evaluation(sc, trainer)
    report = _make_report(sc, seeds, {}, finals, time.time() - t0)
    if out_dir is not None:
        emit_metrics(report, out_dir)
    return report


def sweep_sa(sc: Scenario, seed: int | None = None) -> dict:
    """Grid-search the grant-free transmit probability on common random numbers."""
    if sc.agent != "sa_noma_sic":
        raise ValueError("sweep-sa needs agent = sa_noma_sic")
    seed = sc.seeds[0] if seed is None else seed
    grid = sc.sa.get("grid", DEFAULT_SA_GRID)
    episodes = sc.sa.get("sweep_episodes", 100)
    frames = build_ppo(sc).episode_frames

    def score_fn(p: float) -> float:
        return evaluate_baseline(sc, "sa_noma_sic", seed, episodes, frames,
                                 p)["urllc_score"]

    best, scores = optimize_sa_probability(score_fn, grid)
    return {"best_probability": best,
            "grid_scores": {str(p): scores[p] for p in sorted(scores)},
            "episodes_per_point": episodes, "seed": seed}


def _make_report(sc: Scenario, seeds, curves, finals, wall_clock) -> dict:
    scores = [finals[s]["urllc_score"] for s in seeds if finals]
    return {
        "scenario": serialize_scenario(sc),
        "config_hash": config_hash(sc),
        "code_hash": code_hash(),
        "agent": sc.agent,
        "devices": sc.devices,
        "seeds": list(seeds),
        "curves": {str(s): curves.get(s, []) for s in seeds},
        "evaluation": {str(s): finals[s] for s in seeds},
        "mean_urllc_score": float(np.mean(scores)) if scores else float("nan"),
        "wall_clock_seconds": round(wall_clock, 3),
    }


# ======================================================================
# Artifacts
# ======================================================================

def emit_metrics(report: dict, out_dir):
    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = [CURVE_HEADER]
    for seed, rows in report["curves"].items():
        for update, episodes_seen, score, mean_reward in rows:
            lines.append(f"{seed},{update},{episodes_seen},{score},{mean_reward}")
    (out / "curve.csv").write_text("\n".join(lines) + "\n")
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")


def load_report(path) -> dict:
    return json.loads(pathlib.Path(path).read_text())


def write_trace(records: list, path):
    with open(path, "w") as fh:
        for record in records:
            fh.write(json.dumps(record) + "\n")


def _maybe_traces(sc: Scenario, trained: dict, out_dir):
    if not sc.trace:
        return
    out = pathlib.Path(out_dir)
    for seed, trainer in trained.items():
        env = trainer.eval_env
        env.trace_enabled = True
        _, agent_state = env.reset()
        for _ in range(trainer.config.episode_frames):
            action, _, _ = trainer.agent.act(agent_state, env, trainer.eval_rng,
                                             greedy=sc.eval_greedy)
            obs, _ = env.step(action)
            agent_state = update_agent_state(agent_state, obs, action)
        write_trace(env.trace, out / f"trace_seed{seed}.ndjson")
        env.trace_enabled = False
