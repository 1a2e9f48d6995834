"""DDPG agent: actor/critic MLPs, replay buffer, Polyak-averaged targets.

The observation is the lane-relative driving vector (v, d, phi) followed by
the ego-frame coordinates of the next K route waypoints, every component
scaled to roughly [-1, 1].  Actions are (steer, throttle) in [-1, 1]; the
actor ends in tanh so its raw output already lives there, and exploration
adds Gaussian noise with a linearly decaying sigma (an Ornstein-Uhlenbeck
process is available behind ``noise_kind``).

Updates are the standard pairing: the critic regresses the one-step
bootstrap target r + gamma * (1 - done) * Q'(s', mu'(s')), the actor ascends
mean Q(s, mu(s)), and both target networks trail their online copies by
theta' <- tau * theta + (1 - tau) * theta' after every training step.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import nn
from .sim import Action, Environment, EgoState, Route, transform_waypoints

OBS_WAYPOINTS = 15


class BufferTooSmall(RuntimeError):
    """Not enough stored transitions to draw a batch."""


@dataclass
class Hyperparams:
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    tau: float = 0.001
    buffer_capacity: int = 100_000
    batch_size: int = 32
    gamma: float = 0.99
    episodes: int = 500
    sigma_start: float = 0.3
    sigma_end: float = 0.05
    # Ornstein-Uhlenbeck by default: iid Gaussian noise never sustains the
    # throttle long enough for the agent to experience fast in-lane driving
    noise_kind: str = "ou"  # or "gaussian"
    ou_theta: float = 0.15
    warmup_steps: int = 1000
    hidden: int = 64
    waypoint_scale: float = 40.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must be in (0, 1)")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if self.buffer_capacity < self.batch_size:
            raise ValueError("buffer capacity must be >= batch size")

    def sigma_at(self, episode: int) -> float:
        if self.episodes <= 1:
            return self.sigma_start
        frac = min(max(episode / (self.episodes - 1), 0.0), 1.0)
        return self.sigma_start + (self.sigma_end - self.sigma_start) * frac


# ---------------------------------------------------------------------------
# observation

def observe(state: EgoState, route: Route, *, v_max: float = 10.0,
            half_lane: float = 2.0, waypoint_scale: float = 40.0,
            k: int = OBS_WAYPOINTS) -> np.ndarray:
    """[v, d, phi, K ego-frame waypoints], normalized by fixed scales.

    Waypoints are taken from the next one onward; once fewer than K remain
    the tail slots repeat the goal point.
    """
    wps = route.waypoints[state.route_progress:]
    if len(wps) < k:
        pad = np.repeat([[route.goal[0], route.goal[1]]], k - len(wps), axis=0)
        wps = np.concatenate([wps, pad], axis=0) if len(wps) else pad
    else:
        wps = wps[:k]
    local = transform_waypoints(state.pose, wps) / waypoint_scale
    head = [state.v / v_max, state.d / half_lane, state.phi / (math.pi / 2.0)]
    return np.concatenate([np.asarray(head), local.reshape(-1)])


def obs_dim(k: int = OBS_WAYPOINTS) -> int:
    return 3 + 2 * k


# ---------------------------------------------------------------------------
# networks

class MLP:
    """Stack of dense layers with a shared hidden activation."""

    def __init__(self, sizes, hidden_act="relu", out_act="linear", *, rng,
                 dtype=nn.DTYPE):
        self.sizes = tuple(sizes)
        self.layers = []
        for i, (a, b) in enumerate(zip(sizes, sizes[1:])):
            act = out_act if i == len(sizes) - 2 else hidden_act
            self.layers.append(nn.Dense(a, b, act, rng=rng, dtype=dtype))

    def forward(self, x):
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x)
            caches.append(cache)
        return x, caches

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, dy, caches):
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            dy = layer.backward(dy, cache)
        return dy

    def zero_grads(self):
        for layer in self.layers:
            layer.zero_grads()

    def params_flat(self):
        for i, layer in enumerate(self.layers):
            for name, param in layer.params.items():
                yield f"l{i}/{name}", param

    def copy_params_from(self, other: "MLP"):
        for mine, theirs in zip(self.layers, other.layers):
            for name in mine.params:
                mine.params[name][...] = theirs.params[name]


@dataclass
class TargetPair:
    online: MLP
    target: MLP


def make_target(online: MLP, rng) -> TargetPair:
    target = MLP(online.sizes,
                 hidden_act=online.layers[0].activation,
                 out_act=online.layers[-1].activation,
                 rng=rng, dtype=online.layers[0].params["W"].dtype)
    target.copy_params_from(online)
    return TargetPair(online=online, target=target)


def soft_update(pair: TargetPair, tau: float) -> None:
    """theta' <- tau * theta + (1 - tau) * theta', elementwise."""
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must be in (0, 1)")
    for online_layer, target_layer in zip(pair.online.layers, pair.target.layers):
        for name in online_layer.params:
            t = target_layer.params[name]
            t += tau * (online_layer.params[name] - t)


# ---------------------------------------------------------------------------
# replay buffer

class ReplayBuffer:
    """Bounded FIFO transition store with uniform batch sampling."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int, seed: int = 0):
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim), dtype=np.float32)
        self.act = np.zeros((capacity, act_dim), dtype=np.float32)
        self.rew = np.zeros(capacity, dtype=np.float32)
        self.nxt = np.zeros((capacity, obs_dim), dtype=np.float32)
        self.done = np.zeros(capacity, dtype=np.float32)
        self.cursor = 0
        self.size = 0
        self.total_pushed = 0
        self.rng = nn.make_rng(seed)

    def push(self, obs, act, rew, nxt, done):
        i = self.cursor
        self.obs[i] = obs
        self.act[i] = act
        self.rew[i] = rew
        self.nxt[i] = nxt
        self.done[i] = 1.0 if done else 0.0
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.total_pushed += 1

    def sample_indices(self, batch: int) -> np.ndarray:
        """Uniform without replacement via Floyd's algorithm, O(batch)."""
        if self.size < batch:
            raise BufferTooSmall(f"buffer holds {self.size} < batch {batch}")
        n = self.size
        chosen: set[int] = set()
        out = np.empty(batch, dtype=np.int64)
        for i, top in enumerate(range(n - batch, n)):
            j = int(self.rng.integers(0, top + 1))
            if j in chosen:
                j = top
            chosen.add(j)
            out[i] = j
        return out

    def sample(self, batch: int):
        idx = self.sample_indices(batch)
        return (self.obs[idx], self.act[idx], self.rew[idx],
                self.nxt[idx], self.done[idx])


# ---------------------------------------------------------------------------
# exploration noise

class GaussianNoise:
    def __init__(self, dim: int, rng):
        self.dim = dim
        self.rng = rng

    def reset(self):
        pass

    def sample(self, sigma: float) -> np.ndarray:
        return (sigma * self.rng.standard_normal(self.dim)).astype(np.float32)


class OUNoise:
    """Ornstein-Uhlenbeck process, mean-reverting to zero."""

    def __init__(self, dim: int, rng, theta: float = 0.15, dt: float = 1.0):
        self.dim = dim
        self.rng = rng
        self.theta = theta
        self.dt = dt
        self.state = np.zeros(dim, dtype=np.float32)

    def reset(self):
        self.state[...] = 0.0

    def sample(self, sigma: float) -> np.ndarray:
        drift = -self.theta * self.state * self.dt
        diffusion = sigma * math.sqrt(self.dt) * self.rng.standard_normal(self.dim)
        self.state = (self.state + drift + diffusion).astype(np.float32)
        return self.state


def select_action(actor: MLP, obs: np.ndarray, noise, sigma: float,
                  explore: bool) -> np.ndarray:
    """mu(s) plus exploration noise, clamped to the action box."""
    mu = actor(obs[None, :].astype(np.float32))[0]
    if explore and sigma > 0.0:
        mu = mu + noise.sample(sigma)
    return np.clip(mu, -1.0, 1.0)


# ---------------------------------------------------------------------------
# agent

class DdpgAgent:
    def __init__(self, obs_size: int, act_size: int = 2,
                 hp: Hyperparams | None = None, dtype=nn.DTYPE):
        self.hp = hp or Hyperparams()
        h = self.hp.hidden
        seed = self.hp.seed
        self.actor = MLP([obs_size, h, h, act_size], "relu", "tanh",
                         rng=nn.make_rng(seed + 1), dtype=dtype)
        self.critic = MLP([obs_size + act_size, h, h, 1], "relu", "linear",
                          rng=nn.make_rng(seed + 2), dtype=dtype)
        self.actor_pair = make_target(self.actor, nn.make_rng(seed + 1))
        self.critic_pair = make_target(self.critic, nn.make_rng(seed + 2))
        self.actor_opt = nn.Adam(self.actor.layers, self.hp.actor_lr)
        self.critic_opt = nn.Adam(self.critic.layers, self.hp.critic_lr)
        self.buffer = ReplayBuffer(self.hp.buffer_capacity, obs_size, act_size,
                                   seed=seed + 4)
        noise_rng = nn.make_rng(seed + 3)
        if self.hp.noise_kind == "ou":
            self.noise = OUNoise(act_size, noise_rng, theta=self.hp.ou_theta)
        else:
            self.noise = GaussianNoise(act_size, noise_rng)
        self.obs_size = obs_size
        self.act_size = act_size

    def act(self, obs: np.ndarray, sigma: float = 0.0, explore: bool = False):
        return select_action(self.actor, obs, self.noise, sigma, explore)

    def train_step(self):
        """One critic regression + one policy-gradient step + soft updates."""
        hp = self.hp
        s, a, r, s2, done = self.buffer.sample(hp.batch_size)

        a2 = self.actor_pair.target(s2)
        q2 = self.critic_pair.target(np.concatenate([s2, a2], axis=1))[:, 0]
        y = r + hp.gamma * (1.0 - done) * q2

        q, caches = self.critic.forward(np.concatenate([s, a], axis=1))
        diff = q[:, 0] - y
        critic_loss = float(np.mean(diff * diff))
        dq = (2.0 / hp.batch_size) * diff[:, None].astype(np.float32)
        self.critic.zero_grads()
        self.critic.backward(dq, caches)
        self.critic_opt.step()

        a_pi, actor_caches = self.actor.forward(s)
        q_pi, critic_caches = self.critic.forward(np.concatenate([s, a_pi], axis=1))
        actor_objective = float(np.mean(q_pi))
        # ascend mean Q: push -1/B through the critic, take the action slice
        self.critic.zero_grads()
        dsa = self.critic.backward(
            np.full((hp.batch_size, 1), -1.0 / hp.batch_size, dtype=np.float32),
            critic_caches)
        da = dsa[:, s.shape[1]:]
        self.actor.zero_grads()
        self.actor.backward(da, actor_caches)
        self.actor_opt.step()
        self.critic.zero_grads()  # discard the policy-gradient pass-through

        soft_update(self.critic_pair, hp.tau)
        soft_update(self.actor_pair, hp.tau)
        return critic_loss, actor_objective

    # -- persistence ------------------------------------------------------

    def _named_arrays(self):
        out = {}
        for prefix, net in (("actor", self.actor), ("critic", self.critic),
                            ("actor_target", self.actor_pair.target),
                            ("critic_target", self.critic_pair.target)):
            for name, param in net.params_flat():
                out[f"{prefix}/{name}"] = param
        return out

    def save(self, path):
        nn.save_checkpoint(path, self._named_arrays())

    def load(self, path):
        arrays = nn.load_checkpoint(path)
        for key, param in self._named_arrays().items():
            if key not in arrays:
                raise nn.CheckpointError(f"missing checkpoint entry {key!r}")
            if arrays[key].shape != param.shape:
                raise nn.CheckpointError(f"{key!r}: shape mismatch")
            param[...] = arrays[key]


def train_step(agent: DdpgAgent):
    return agent.train_step()


# ---------------------------------------------------------------------------
# training loop

def train(env: Environment | list[Environment], hp: Hyperparams | None = None, *,
          progress=None) -> tuple[DdpgAgent, list[dict]]:
    """Run hp.episodes episodes and return the agent plus the per-episode
    learning-curve log {episode, return, steps, event}.

    A list of environments is cycled round-robin so the agent practices
    every route of the training track (e.g. both junction branches).
    """
    hp = hp or Hyperparams()
    envs = list(env) if isinstance(env, (list, tuple)) else [env]
    k = len(envs[0].route.waypoints)
    agent = DdpgAgent(obs_dim(k), 2, hp)
    log: list[dict] = []
    total_steps = 0
    for episode in range(hp.episodes):
        env_i = envs[episode % len(envs)]
        half_lane = env_i.track.lane_width / 2.0
        v_max = env_i.params.v_max
        sigma = hp.sigma_at(episode)
        state = env_i.reset()
        agent.noise.reset()
        obs = observe(state, env_i.route, v_max=v_max, half_lane=half_lane,
                      waypoint_scale=hp.waypoint_scale, k=k)
        ep_return = 0.0
        steps = 0
        event = "none"
        while True:
            action = agent.act(obs, sigma, explore=True)
            outcome, truncated = env_i.step(Action(float(action[0]), float(action[1])))
            nxt = observe(outcome.next_state, env_i.route, v_max=v_max,
                          half_lane=half_lane, waypoint_scale=hp.waypoint_scale, k=k)
            agent.buffer.push(obs, action, outcome.reward, nxt, outcome.done)
            ep_return += outcome.reward
            steps += 1
            total_steps += 1
            obs = nxt
            if total_steps > hp.warmup_steps and agent.buffer.size >= hp.batch_size:
                agent.train_step()
            if outcome.done or truncated:
                event = outcome.event if outcome.done else "max_steps"
                break
        log.append({"episode": episode, "return": ep_return,
                    "steps": steps, "event": event})
        if progress is not None:
            progress(log[-1])
    return agent, log


def greedy_rollout(agent: DdpgAgent, env: Environment):
    """Deterministic mu(s) rollout; returns (records, final event)."""
    policy = ActorPolicy(agent)
    from .sim import rollout
    return rollout(env, policy)


class ActorPolicy:
    """Adapts a trained actor to the driver protocol used for recording."""

    def __init__(self, agent: DdpgAgent, waypoint_scale: float | None = None):
        self.agent = agent
        self.waypoint_scale = waypoint_scale or agent.hp.waypoint_scale

    def act(self, env: Environment, state: EgoState) -> Action:
        obs = observe(state, env.route, v_max=env.params.v_max,
                      half_lane=env.track.lane_width / 2.0,
                      waypoint_scale=self.waypoint_scale,
                      k=len(env.route.waypoints))
        a = self.agent.act(obs, sigma=0.0, explore=False)
        return Action(float(a[0]), float(a[1]))


def write_learning_log(log, path):
    with open(path, "w", encoding="utf-8") as fh:
        for entry in log:
            fh.write(json.dumps(entry) + "\n")
