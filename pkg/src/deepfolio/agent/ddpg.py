"""Model-based DDPG for portfolio weights, and the trajectory (RDPG) variant with risk rewards.

One training step follows a fixed order: read the IPM forecast, act with the
perturbed actor, execute, let the IPM see the new bar and forecast again,
solve the greedy expert, store, sample, update critic, sync the actor's
learning rate, update actor (with the cloning nudge), move the targets, adapt
the noise scale. Every stage goes through ``AgentOps`` so it can be traced.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, asdict, fields
from typing import Callable

import numpy as np

from deepfolio import bcm, ipm as ipm_mod, risk
from deepfolio.agent.networks import Actor, Critic, AugmentedState, StateBatch, stack_states
from deepfolio.agent.noise import ParamNoise, perturb, copy_weights, noise_distance, adapt_sigma
from deepfolio.agent.replay import PrioritizedReplay, TrajectoryBuffer, Transition, beta_schedule
from deepfolio.backtest import cost_factor, drift_weights, Observation
from deepfolio.market_data import MarketData, build_price_tensor, sample_episode
from deepfolio.nn import Adam, SGD, NonFiniteError, backward, checkpoint, mse


@dataclass
class AgentConfig:
    k2: int = 10
    gamma: float = 0.99
    tau: float = 0.001
    lr_critic: float = 1e-3
    lr_ratio: float = 0.01
    bcm_lambda: float = 0.1
    reward_scale: float = 1e3
    episode_length: int = 650
    episodes: int = 200
    batch_size: int = 32
    buffer_size: int = 1000
    per_alpha: float = 0.6
    per_beta0: float = 0.4
    per_eps: float = 1e-6
    sigma0: float = 0.01
    noise_alpha: float = 1.01
    noise_delta: float = 0.05
    keep: float = 0.5
    fe_sizes: tuple = (20, 8)
    fa_sizes: tuple = (256, 128, 64, 32)
    fee_rate: float = 0.002
    use_ipm: bool = True
    use_bcm: bool = True
    smooth_ipm: bool = True
    dam_horizon: int = 42
    rdpg_k: int = 4
    risk_eta: float = 0.01
    traj_capacity: int = 50

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.lr_critic < 0 or self.lr_ratio < 0 or self.tau < 0 or self.tau > 1:
            raise ValueError("learning rates must be non-negative and tau in [0, 1]")
        if self.k2 < 2 or self.episode_length < 1 or self.batch_size < 1:
            raise ValueError("k2 >= 2, episode_length >= 1 and batch_size >= 1 required")
        self.fe_sizes = tuple(self.fe_sizes)
        self.fa_sizes = tuple(self.fa_sizes)


class Agent:
    """Actor, critic, their targets, the acting perturbed actor and the adaptive probe copy."""

    NETS = ("actor", "perturbed", "adaptive", "actor_target", "critic", "critic_target")

    def __init__(self, m: int, cfg: AgentConfig, rng: np.random.Generator):
        self.m, self.cfg = m, cfg
        self.actor = Actor(m, cfg.k2, rng, cfg.fe_sizes, cfg.fa_sizes, cfg.keep)
        self.critic = Critic(m, cfg.k2, rng, cfg.fe_sizes, cfg.fa_sizes, cfg.keep)
        self.actor_target = self.actor.clone()
        self.critic_target = self.critic.clone()
        self.noise = ParamNoise(cfg.sigma0, cfg.noise_alpha, cfg.noise_delta)
        self.perturbed = perturb(self.actor, self.noise.sigma, rng)
        self.adaptive = perturb(self.actor, self.noise.sigma, rng)
        self.critic_opt = Adam(self.critic.parameters(), cfg.lr_critic)
        self.actor_opt = SGD(self.actor.parameters(), cfg.lr_critic * cfg.lr_ratio)

    def networks(self) -> dict:
        return {k: getattr(self, k) for k in self.NETS}

    def save(self, path) -> None:
        arrays = {}
        for name, net in self.networks().items():
            arrays.update({f"{name}.{k}": v for k, v in net.state_dict().items()})
        cfg = asdict(self.cfg)
        cfg["fe_sizes"], cfg["fa_sizes"] = list(cfg["fe_sizes"]), list(cfg["fa_sizes"])
        checkpoint.save(path, arrays, {"kind": "agent", "m": self.m, "sigma": self.noise.sigma, "config": cfg})


def load_agent(path) -> Agent:
    arrays, meta = checkpoint.load(path)
    if meta.get("kind") != "agent":
        raise ValueError(f"{path} is not an agent checkpoint")
    agent = Agent(meta["m"], AgentConfig(**meta["config"]), np.random.default_rng(0))
    for name, net in agent.networks().items():
        pre = name + "."
        net.load_state_dict({k[len(pre):]: v for k, v in arrays.items() if k.startswith(pre)})
    agent.noise.sigma = meta["sigma"]
    return agent


# --- single updates ------------------------------------------------------------------

def soft_update(target, online, tau: float) -> None:
    src = online.parameters()
    for k, p in target.parameters().items():
        # written as a step toward the online value so agreeing weights stay bit-identical
        p.data = src[k].data.copy() if tau == 1.0 else p.data + tau * (src[k].data - p.data)


def _unpack(batch: list[Transition]):
    s = stack_states([b.state for b in batch])
    s2 = stack_states([b.next_state for b in batch])
    a = np.stack([b.action for b in batch])
    r = np.array([b.reward for b in batch], float)
    e = np.stack([b.expert for b in batch])
    return s, a, r, s2, e


def td_targets(agent: Agent, rewards, next_states: StateBatch) -> np.ndarray:
    q_next = agent.critic_target(next_states, agent.actor_target.act(next_states)).data
    return np.asarray(rewards, float) + agent.cfg.gamma * q_next


def critic_update(agent: Agent, batch: list[Transition], weights=None,
                  rng: np.random.Generator | None = None) -> tuple[np.ndarray, float]:
    """One Adam step on the importance-weighted squared TD error. Returns (y - Q, loss)."""
    if not batch:
        raise ValueError("empty batch")
    s, a, r, s2, _ = _unpack(batch)
    y = td_targets(agent, r, s2)
    agent.critic_opt.zero_grad()
    q = agent.critic(s, a, rng, train=rng is not None)
    loss = mse(q, y, weights)
    if not math.isfinite(loss.item()):
        raise NonFiniteError("critic loss is not finite")
    backward(loss)
    agent.critic_opt.step()
    return y - q.data, loss.item()


def critic_actual_lr(opt: Adam) -> float:
    """Adam's bias-corrected step size at its current step count."""
    t = max(opt.steps, 1)
    return opt.lr * math.sqrt(1 - opt.beta2 ** t) / (1 - opt.beta1 ** t)


def lr_sync(agent: Agent) -> float:
    agent.actor_opt.lr = critic_actual_lr(agent.critic_opt) * agent.cfg.lr_ratio
    return agent.actor_opt.lr


def actor_update(agent: Agent, states: StateBatch, experts=None, lam: float | None = None,
                 rng: np.random.Generator | None = None) -> float:
    """Policy-gradient step through the frozen critic, then the lambda-weighted cloning step."""
    lam = agent.cfg.bcm_lambda if lam is None else lam
    train = rng is not None
    agent.actor_opt.zero_grad()
    a = agent.actor(states, rng, train)
    q = agent.critic(states, a)
    loss = -q.mean()
    if not math.isfinite(loss.item()):
        raise NonFiniteError("actor objective is not finite")
    backward(loss)
    agent.actor_opt.step()
    if experts is not None and lam > 0:
        agent.actor_opt.zero_grad()
        a = agent.actor(states, rng, train)
        _, g = bcm.clone_loss(a.data, experts)
        backward(a, lam * g)
        agent.actor_opt.step()
    return loss.item()


def adapt_noise(agent: Agent, states: StateBatch, rng: np.random.Generator) -> float:
    copy_weights(agent.adaptive, agent.actor, agent.noise.sigma, rng)
    d = noise_distance(agent.actor, agent.adaptive, states)
    return adapt_sigma(agent.noise, d)


# --- environment and predictor --------------------------------------------------------

class Predictor:
    """Thin wrapper over the NDyBM; all zeros when disabled."""

    def __init__(self, state: ipm_mod.NdybmState | None, m: int):
        self.state = state
        self.m = m
        self.current = np.zeros(3 * m)

    def reset(self) -> None:
        if self.state is not None:
            self.state.reset_history()
        self.current = np.zeros(3 * self.m)

    def observe(self, x) -> np.ndarray:
        """Learn from the bar's changes, then forecast the next bar."""
        if self.state is not None:
            ipm_mod.ndybm_update(self.state, x)
            self.current = ipm_mod.predict(self.state).as_vector()
        return self.current


def changes_at(data: MarketData, t: int) -> np.ndarray:
    """Close/high/low percentage changes of bar ``t`` against bar ``t-1``."""
    prev = data.close[t - 1, 1:], data.high[t - 1, 1:], data.low[t - 1, 1:]
    cur = data.close[t, 1:], data.high[t, 1:], data.low[t, 1:]
    return np.concatenate([c / p - 1.0 for c, p in zip(cur, prev)])


class EpisodeEnv:
    """Idealized weight-space market over one episode's bars."""

    def __init__(self, data: MarketData, k2: int, fee_rate: float):
        if len(data) < k2 + 1:
            raise ValueError("episode shorter than k2 + 1 bars")
        self.data, self.k2, self.fee_rate = data, k2, fee_rate
        self.rel = data.relatives()
        self.index = data.index_ratio()
        self.changes = data.hlc_changes()

    @property
    def first(self) -> int:
        return self.k2 - 1

    @property
    def last(self) -> int:
        return len(self.data) - 2

    def state(self, t: int, w, pred) -> AugmentedState:
        return AugmentedState(build_price_tensor(self.data, t, self.k2).stacked(), np.asarray(w, float).copy(),
                              np.asarray(pred, float).copy(), float(self.index[t]))

    def step(self, t: int, w, a) -> tuple[float, np.ndarray, np.ndarray]:
        u = self.rel[t]
        growth = float(u @ a)
        cbar = cost_factor(w, a, self.fee_rate)
        return math.log(cbar * growth), drift_weights(a, u), u


# --- instrumented operations -------------------------------------------------------

class AgentOps:
    """Every stage of a training step. Subclass or wrap to observe the loop."""

    def ipm_predict(self, predictor: Predictor) -> np.ndarray:
        return predictor.current.copy()

    def act(self, agent: Agent, state: AugmentedState) -> np.ndarray:
        a = agent.perturbed.act(stack_states([state]))[0]
        return a / a.sum()

    def execute(self, env: EpisodeEnv, t: int, w, a):
        return env.step(t, w, a)

    def ipm_next_predict(self, predictor: Predictor, x) -> np.ndarray:
        return predictor.observe(x).copy()

    def greedy(self, u, w, c: float) -> np.ndarray:
        return bcm.expert_action(u, w / w.sum(), c)

    def store(self, buffer, item) -> None:
        buffer.add(item)

    def per_sample(self, buffer: PrioritizedReplay, n: int, beta: float, rng):
        return buffer.sample(n, beta, rng)

    def critic_update(self, agent, batch, weights, rng):
        return critic_update(agent, batch, weights, rng)

    def lr_sync(self, agent) -> float:
        return lr_sync(agent)

    def actor_update(self, agent, states, experts, rng) -> float:
        return actor_update(agent, states, experts if agent.cfg.use_bcm else None, rng=rng)

    def target_update(self, agent) -> None:
        soft_update(agent.actor_target, agent.actor, agent.cfg.tau)
        soft_update(agent.critic_target, agent.critic, agent.cfg.tau)

    def adapt_sigma(self, agent, states, rng) -> float:
        return adapt_noise(agent, states, rng)


LOG_FIELDS = ("episode", "step", "reward", "critic_loss", "actor_loss", "sigma", "buffer_size")


def write_log(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_FIELDS)
        for row in rows:
            w.writerow([row[k] if isinstance(row[k], int) else repr(float(row[k])) for k in LOG_FIELDS])


Augmenter = Callable[[MarketData, np.random.Generator], MarketData]


def _start_episode(data, cfg, rng, predictor, augment):
    ep = sample_episode(data, cfg.episode_length, cfg.k2, rng).data
    if augment is not None:
        ep = augment(ep, rng)
    env = EpisodeEnv(ep, cfg.k2, cfg.fee_rate)
    feed = env.changes
    predictor.reset()
    for t in range(env.first):
        predictor.observe(feed[t])
    return env, feed


def warm_start_ipm(state: ipm_mod.NdybmState, data: MarketData, rng: np.random.Generator) -> None:
    """One offline pass over the jittered, smoothed training changes, then clear the history.

    The smoother is centred, so its output at bar t already mixes in bars t+1
    and t+2. That is fine for fitting weights offline but must never reach the
    forecasts the agent acts on, so episodes always feed raw changes.
    """
    feed = data.hlc_changes()
    if len(feed) < 5:
        return
    for x in ipm_mod.smooth_inputs(feed, rng=rng):
        ipm_mod.ndybm_update(state, x)
    state.reset_history()


def _cash(m: int) -> np.ndarray:
    w = np.zeros(m + 1)
    w[0] = 1.0
    return w


def train_ddpg(data: MarketData, cfg: AgentConfig, rng: np.random.Generator,
               ipm_state: ipm_mod.NdybmState | None = None, augment: Augmenter | None = None,
               ops: AgentOps | None = None, agent: Agent | None = None) -> tuple[Agent, list[dict]]:
    """Off-policy training loop. ``ipm_state`` is updated in place when given."""
    ops = ops or AgentOps()
    m = data.m
    agent = agent or Agent(m, cfg, rng)
    predictor = Predictor(ipm_state if cfg.use_ipm else None, m)
    if predictor.state is not None and cfg.smooth_ipm:
        warm_start_ipm(predictor.state, data, rng)
    buffer = PrioritizedReplay(cfg.buffer_size, cfg.per_alpha, cfg.per_eps)
    total = cfg.episodes * cfg.episode_length
    step = 0
    log_rows = []
    for episode in range(cfg.episodes):
        env, feed = _start_episode(data, cfg, rng, predictor, augment)
        w = _cash(m)
        for t in range(env.first, env.last + 1):
            pred = ops.ipm_predict(predictor)
            s = env.state(t, w, pred)
            a = ops.act(agent, s)
            r, w_next, u = ops.execute(env, t, w, a)
            pred_next = ops.ipm_next_predict(predictor, feed[t])
            s2 = env.state(t + 1, w_next, pred_next)
            expert = ops.greedy(u, w, cfg.fee_rate)
            ops.store(buffer, Transition(s, a, r * cfg.reward_scale, s2, expert))
            idx, batch, isw = ops.per_sample(buffer, cfg.batch_size, beta_schedule(step, total, cfg.per_beta0), rng)
            td, c_loss = ops.critic_update(agent, batch, isw, rng)
            buffer.update(idx, td)
            ops.lr_sync(agent)
            states = stack_states([b.state for b in batch])
            experts = np.stack([b.expert for b in batch])
            a_loss = ops.actor_update(agent, states, experts, rng)
            ops.target_update(agent)
            sigma = ops.adapt_sigma(agent, states, rng)
            log_rows.append({"episode": episode, "step": step, "reward": r * cfg.reward_scale,
                             "critic_loss": c_loss, "actor_loss": a_loss, "sigma": sigma,
                             "buffer_size": len(buffer)})
            w = w_next
            step += 1
        copy_weights(agent.perturbed, agent.actor, agent.noise.sigma, rng)
    return agent, log_rows


def risk_rewards(returns, kind: str, eta: float) -> np.ndarray:
    """Per-step DSR or D3R over one trajectory, starting from zero moments."""
    if kind == "dsr":
        st, update = risk.DsrState(eta=eta), risk.dsr_update
    elif kind == "d3r":
        st, update = risk.D3rState(eta=eta), risk.d3r_update
    else:
        raise ValueError(f"unknown risk reward {kind!r}")
    out = []
    for r in returns:
        d, st = update(st, r)
        out.append(d)
    return np.array(out)


def train_rdpg(data: MarketData, cfg: AgentConfig, risk_kind: str, rng: np.random.Generator,
               ipm_state: ipm_mod.NdybmState | None = None, augment: Augmenter | None = None,
               ops: AgentOps | None = None, agent: Agent | None = None) -> tuple[Agent, list[dict]]:
    """Trajectory variant: whole episodes are stored and replayed with DSR/D3R rewards."""
    if risk_kind not in ("dsr", "d3r"):
        raise ValueError(f"unknown risk reward {risk_kind!r}")
    ops = ops or AgentOps()
    m = data.m
    agent = agent or Agent(m, cfg, rng)
    predictor = Predictor(ipm_state if cfg.use_ipm else None, m)
    if predictor.state is not None and cfg.smooth_ipm:
        warm_start_ipm(predictor.state, data, rng)
    buffer = TrajectoryBuffer(cfg.traj_capacity)
    log_rows = []
    step = 0
    for episode in range(cfg.episodes):
        env, feed = _start_episode(data, cfg, rng, predictor, augment)
        w = _cash(m)
        steps = []
        for t in range(env.first, env.last + 1):
            pred = ops.ipm_predict(predictor)
            s = env.state(t, w, pred)
            a = ops.act(agent, s)
            r, w_next, u = ops.execute(env, t, w, a)
            pred_next = ops.ipm_next_predict(predictor, feed[t])
            s2 = env.state(t + 1, w_next, pred_next)
            expert = ops.greedy(u, w, cfg.fee_rate)
            steps.append((s, a, r, s2, expert))
            w = w_next
        d = risk_rewards([x[2] for x in steps], risk_kind, cfg.risk_eta)
        ops.store(buffer, [Transition(s, a, float(dt), s2, e) for (s, a, _, s2, e), dt in zip(steps, d)])
        trajs = buffer.sample(cfg.rdpg_k, rng)
        batch = [tr for traj in trajs for tr in traj]
        # one update over all T*K transitions, each weighted equally
        _, c_loss = ops.critic_update(agent, batch, None, rng)
        ops.lr_sync(agent)
        states = stack_states([b.state for b in batch])
        experts = np.stack([b.expert for b in batch])
        a_loss = ops.actor_update(agent, states, experts, rng)
        ops.target_update(agent)
        sigma = ops.adapt_sigma(agent, states, rng)
        for (_, _, r, _, _), dt in zip(steps, d):
            log_rows.append({"episode": episode, "step": step, "reward": float(dt), "critic_loss": c_loss,
                             "actor_loss": a_loss, "sigma": sigma, "buffer_size": len(buffer)})
            step += 1
        copy_weights(agent.perturbed, agent.actor, agent.noise.sigma, rng)
    return agent, log_rows


# --- frozen evaluation -------------------------------------------------------------

class AgentPolicy:
    """Frozen actor (no noise, no dropout); the IPM keeps learning from every new bar."""

    def __init__(self, actor: Actor, k2: int, ipm_state: ipm_mod.NdybmState | None = None):
        self.actor, self.k2 = actor, k2
        self.predictor = Predictor(ipm_state, actor.m)
        self.predictor.reset()
        self.fed = 0   # bars whose changes the IPM has seen (bar 0 has none)

    def __call__(self, obs: Observation) -> np.ndarray:
        data, t = obs.data, obs.t
        for j in range(max(self.fed, 1), t + 1):
            self.predictor.observe(changes_at(data, j))
        self.fed = max(self.fed, t + 1)
        state = AugmentedState(build_price_tensor(data, t, self.k2).stacked(), obs.weights,
                               self.predictor.current, float(data.index_ratio()[t]))
        a = self.actor.act(stack_states([state]))[0]
        return a / a.sum()


def config_fields() -> list[str]:
    return [f.name for f in fields(AgentConfig)]
