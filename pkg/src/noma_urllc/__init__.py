"""NOMA uplink URLLC scheduling: simulator, PPO scheduler, classical baselines."""

from .env import (AgentState, NomaEnv, Observation, action_space_size, jain_index,
                  preprocess, update_agent_state, urllc_score)
from .phy import (DecodeOutcome, FadingMatrix, LinkBudget, PhyConfig,
                  PilotOverloadError, coherence_time, decode_frame,
                  fbl_error_probability, invert_error_for_power, jakes_coefficient)
from .ppo import PPOAgent, PPOConfig, Trainer, compute_rewards_to_go, gae
from .scenario import Scenario, ScenarioError, load_scenario, parse_scenario
from .schedulers import PriorConfig, combined_prior, edf_schedule, posterior_policy
from .traffic import TrafficConfig, buffer_transition, generate_arrivals

__version__ = "0.1.0"
