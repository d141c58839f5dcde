"""Clipped PPO over factorized Bernoulli poll branches, with the scheduling prior.

The policy emits one poll probability per device; the joint action
log-probability is the sum of the branch terms. Training follows the usual
collect / GAE / clipped-surrogate / Adam cycle, with the value net fitted to
discounted rewards-to-go after each policy update. Sampling during rollouts
draws from the posterior (prior fused in); the surrogate ratio is taken on
the learned probabilities themselves.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .env import NomaEnv, AgentState, update_agent_state, preprocess
from .nets import PolicyNet, ValueNet, Adam
from .schedulers import PriorConfig, combined_prior, posterior_policy


@dataclass
class PPOConfig:
    discount: float = 0.3            # gamma
    gae_lambda: float = 0.95
    clip: float = 0.2                # surrogate clip nu
    lr_actor: float = 1e-4
    lr_critic: float = 1e-3
    hidden: int = 256
    trajectories_per_update: int = 8
    minibatch: int = 128
    epochs: int = 4
    episode_frames: int = 200
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    normalize_advantages: bool = True
    absolute_discount_returns: bool = False  # gamma^t' instead of gamma^(t'-t)

    def __post_init__(self):
        if not (0.0 <= self.discount < 1.0):
            raise ValueError("discount must lie in [0, 1)")
        if not (0.0 <= self.gae_lambda <= 1.0):
            raise ValueError("gae_lambda must lie in [0, 1]")
        if self.clip < 0:
            raise ValueError("clip must be >= 0")
        for name in ("lr_actor", "lr_critic"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        for name in ("hidden", "trajectories_per_update", "minibatch", "epochs",
                     "episode_frames"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


# ======================================================================
# Returns, advantages, surrogate
# ======================================================================

def compute_rewards_to_go(rewards, discount: float, absolute: bool = False) -> np.ndarray:
    """Discounted suffix sums R_t = sum_{t'>=t} gamma^(t'-t) r_t'.

    absolute=True applies the discount from episode start instead
    (gamma^t' inside the sum), an ablation of the reference variant.
    """
    r = np.asarray(rewards, dtype=float)
    out = np.empty_like(r)
    acc = 0.0
    for t in range(r.size - 1, -1, -1):
        acc = r[t] + discount * acc
        out[t] = acc
    if absolute:
        out *= discount ** np.arange(r.size)
    return out


def gae(rewards, values, discount: float, lam: float) -> np.ndarray:
    """Generalized advantage estimation, truncated at the episode end.

    `values` must hold T+1 entries, the last being the terminal bootstrap
    (0 for a finished episode).
    """
    r = np.asarray(rewards, dtype=float)
    v = np.asarray(values, dtype=float)
    if v.size != r.size + 1:
        raise ValueError("values must have one more entry than rewards")
    deltas = r + discount * v[1:] - v[:-1]
    adv = np.empty_like(r)
    acc = 0.0
    for t in range(r.size - 1, -1, -1):
        acc = deltas[t] + discount * lam * acc
        adv[t] = acc
    return adv


def joint_log_prob(probs, actions) -> np.ndarray:
    """log prod_k p_k^a_k (1-p_k)^(1-a_k), summed over the branch axis."""
    p = np.asarray(probs, dtype=float)
    a = np.asarray(actions)
    on = a.astype(bool)
    bad = (on & (p == 0.0)) | (~on & (p == 1.0))
    if np.any(bad):
        raise ValueError("branch probability saturated against the taken action")
    term = np.where(on, np.log(np.where(on, p, 1.0)),
                    np.log1p(np.where(on, 0.0, -p)))
    return term.sum(axis=-1)


def ppo_clip_objective(new_probs, behavior_probs, actions, advantages,
                       clip: float) -> float:
    """Mean clipped surrogate min(rho A, clip(rho, 1-nu, 1+nu) A)."""
    if clip < 0:
        raise ValueError("clip must be >= 0")
    rho = np.exp(joint_log_prob(new_probs, actions) - joint_log_prob(behavior_probs, actions))
    adv = np.asarray(advantages, dtype=float)
    unclipped = rho * adv
    clipped = np.clip(rho, 1.0 - clip, 1.0 + clip) * adv
    return float(np.mean(np.minimum(unclipped, clipped)))


def ppo_clip_grad(new_probs, behavior_probs, actions, advantages, clip: float):
    """Surrogate value and its gradient w.r.t. the policy logits.

    On the tie at rho = 1 -+ nu the clipped branch is chosen, so the
    subgradient there is zero.
    """
    p = np.asarray(new_probs, dtype=float)
    a = np.asarray(actions)
    adv = np.asarray(advantages, dtype=float)
    rho = np.exp(joint_log_prob(p, a) - joint_log_prob(behavior_probs, a))
    unclipped = rho * adv
    clipped = np.clip(rho, 1.0 - clip, 1.0 + clip) * adv
    obj = float(np.mean(np.minimum(unclipped, clipped)))
    inside = (rho > 1.0 - clip) & (rho < 1.0 + clip)
    dobj_drho = np.where(unclipped < clipped, adv, np.where(inside, adv, 0.0))
    scale = dobj_drho * rho / rho.size
    dlogits = scale[:, None] * (a - p)
    return obj, dlogits


def value_loss(values, returns) -> float:
    """Mean squared error of the value head against rewards-to-go."""
    v = np.asarray(values, dtype=float)
    r = np.asarray(returns, dtype=float)
    return float(np.mean((v - r) ** 2))


# ======================================================================
# Acting
# ======================================================================

class PPOAgent:
    """Policy + value pair, optional prior, optional CSI feature ablation.

    csi_mode: 'agent' uses the learned power estimates, 'none' zeroes the
    power block, 'full' feeds the true current received powers of every
    device (oracle).
    """

    def __init__(self, policy: PolicyNet, value: ValueNet,
                 prior: PriorConfig | None, power_threshold: float,
                 csi_mode: str = "agent", prior_on_true_buffers: bool = False):
        if csi_mode not in ("agent", "none", "full"):
            raise ValueError(f"unknown csi_mode {csi_mode!r}")
        self.policy = policy
        self.value = value
        self.prior = prior
        self.power_threshold = power_threshold
        self.csi_mode = csi_mode
        self.prior_on_true_buffers = prior_on_true_buffers

    def features(self, agent_state: AgentState, env: NomaEnv) -> np.ndarray:
        st = agent_state
        if self.csi_mode == "none":
            st = replace(st, power_estimate=np.zeros_like(st.power_estimate))
        elif self.csi_mode == "full":
            st = replace(st, power_estimate=env.true_received_powers())
        return preprocess(st, self.power_threshold)

    def act(self, agent_state: AgentState, env: NomaEnv, rng: np.random.Generator,
            greedy: bool = False):
        """Returns (action, branch_probs, features) for one frame."""
        feats = self.features(agent_state, env)
        pi = self.policy.forward_probs(feats)
        if self.prior is not None:
            buffers = (env.state.buffers if self.prior_on_true_buffers
                       else agent_state.buffer_estimate)
            f = combined_prior(buffers, agent_state.power_estimate,
                               agent_state.age_active, env.phy.sic_limit,
                               self.prior, rng)
            q = posterior_policy(pi, f, self.prior.smoothing)
        else:
            q = pi
        if greedy:
            action = (q > 0.5).astype(np.int64)
        else:
            action = (rng.random(q.shape) < q).astype(np.int64)
        return action, pi, feats


# ======================================================================
# Training
# ======================================================================

@dataclass
class CurvePoint:
    update: int
    episodes_seen: int
    urllc_score: float
    mean_reward: float


class Trainer:
    """On-policy training loop with periodic evaluation on a separate env."""

    def __init__(self, train_env: NomaEnv, eval_env: NomaEnv, agent: PPOAgent,
                 config: PPOConfig, action_rng: np.random.Generator,
                 shuffle_rng: np.random.Generator, eval_rng: np.random.Generator):
        self.train_env = train_env
        self.eval_env = eval_env
        self.agent = agent
        self.config = config
        self.action_rng = action_rng
        self.shuffle_rng = shuffle_rng
        self.eval_rng = eval_rng
        self.policy_opt = Adam(agent.policy.params, config.lr_actor,
                               config.adam_beta1, config.adam_beta2, config.adam_eps)
        self.value_opt = Adam(agent.value.params, config.lr_critic,
                              config.adam_beta1, config.adam_beta2, config.adam_eps)
        self.update_counter = 0

    def collect_episode(self):
        cfg = self.config
        env = self.train_env
        t_frames = cfg.episode_frames
        _, agent_state = env.reset()
        k = env.num_devices
        feats = np.empty((t_frames, self.agent.policy.input_size))
        actions = np.empty((t_frames, k), dtype=np.int64)
        bprobs = np.empty((t_frames, k))
        rewards = np.empty(t_frames)
        for t in range(t_frames):
            action, pi, f = self.agent.act(agent_state, env, self.action_rng)
            obs, reward = env.step(action)
            agent_state = update_agent_state(agent_state, obs, action)
            feats[t] = f
            actions[t] = action
            bprobs[t] = pi
            rewards[t] = reward
        return feats, actions, bprobs, rewards

    def update(self, episodes: list):
        cfg = self.config
        all_feats, all_actions, all_bprobs, all_adv, all_returns = [], [], [], [], []
        for feats, actions, bprobs, rewards in episodes:
            values, _ = self.agent.value.forward(feats)
            returns = compute_rewards_to_go(rewards, cfg.discount,
                                            cfg.absolute_discount_returns)
            adv = gae(rewards, np.append(values, 0.0), cfg.discount, cfg.gae_lambda)
            all_feats.append(feats)
            all_actions.append(actions)
            all_bprobs.append(bprobs)
            all_adv.append(adv)
            all_returns.append(returns)
        feats = np.concatenate(all_feats)
        actions = np.concatenate(all_actions)
        bprobs = np.concatenate(all_bprobs)
        adv = np.concatenate(all_adv)
        returns = np.concatenate(all_returns)
        if cfg.normalize_advantages:
            adv = (adv - adv.mean()) / (adv.std() + 1e-8)

        n = feats.shape[0]
        for _ in range(cfg.epochs):
            perm = self.shuffle_rng.permutation(n)
            for start in range(0, n, cfg.minibatch):
                mb = perm[start:start + cfg.minibatch]
                probs, cache = self.agent.policy.forward(feats[mb])
                _, dlogits = ppo_clip_grad(probs, bprobs[mb], actions[mb],
                                           adv[mb], cfg.clip)
                grads = self.agent.policy.backward(cache, dlogits)
                self.policy_opt.step(self.agent.policy.params, grads, ascend=True)
        for _ in range(cfg.epochs):
            perm = self.shuffle_rng.permutation(n)
            for start in range(0, n, cfg.minibatch):
                mb = perm[start:start + cfg.minibatch]
                v, cache = self.agent.value.forward(feats[mb])
                dv = 2.0 * (v - returns[mb]) / mb.size
                grads = self.agent.value.backward(cache, dv)
                self.value_opt.step(self.agent.value.params, grads)
        self.update_counter += 1

    def evaluate(self, episodes: int, greedy: bool = False):
        """Pooled URLLC score and mean per-frame reward over fresh episodes."""
        cfg = self.config
        env = self.eval_env
        generated = delivered = total_reward = 0
        for _ in range(episodes):
            _, agent_state = env.reset()
            for _ in range(cfg.episode_frames):
                action, _, _ = self.agent.act(agent_state, env, self.eval_rng,
                                              greedy=greedy)
                obs, reward = env.step(action)
                agent_state = update_agent_state(agent_state, obs, action)
                total_reward += reward
            g, d, _, _ = env.conservation()
            generated += g
            delivered += d
        score = delivered / generated if generated > 0 else float("nan")
        return score, total_reward / (episodes * cfg.episode_frames)

    def run(self, episodes: int, eval_every: int = 250, eval_episodes: int = 32,
            greedy_eval: bool = False, stop_score: float | None = None):
        """Train for `episodes`, evaluating on the stated cadence.

        Returns the learning curve; stops early once `stop_score` is reached
        (when given).
        """
        cfg = self.config
        curve: list[CurvePoint] = []
        episodes_seen = 0
        next_eval = eval_every
        while episodes_seen < episodes:
            batch = [self.collect_episode()
                     for _ in range(cfg.trajectories_per_update)]
            episodes_seen += len(batch)
            self.update(batch)
            if episodes_seen >= next_eval or episodes_seen >= episodes:
                score, mean_reward = self.evaluate(eval_episodes, greedy_eval)
                curve.append(CurvePoint(self.update_counter, episodes_seen,
                                        score, mean_reward))
                while next_eval <= episodes_seen:
                    next_eval += eval_every
                if stop_score is not None and score >= stop_score:
                    break
        return curve
