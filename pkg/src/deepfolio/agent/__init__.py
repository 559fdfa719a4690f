from deepfolio.agent.networks import Actor, Critic, AugmentedState, StateBatch, stack_states
from deepfolio.agent.noise import ParamNoise, perturb, noise_distance, adapt_sigma, action_distance
from deepfolio.agent.replay import PrioritizedReplay, TrajectoryBuffer, Transition, beta_schedule
from deepfolio.agent.ddpg import (AgentConfig, Agent, AgentOps, AgentPolicy, EpisodeEnv, Predictor,
                                  critic_update, actor_update, soft_update, lr_sync, train_ddpg,
                                  train_rdpg, load_agent, write_log)
