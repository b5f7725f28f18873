"""Seeded training loop shared by SAC and SAC-AWMP.

Each purpose draws from its own child stream of the run seed, so extra draws
made by one algorithm (gating, prior batches) never shift the draws of
another.  That is what lets a one-component mixture run reproduce SAC
exactly.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .agent import AgentConfig, AwmpAgent
from .envs import make_env, run_episode
from .replay import ReplayBuffer, Transition
from .sac import SacAgent

STREAMS = ("init", "prior_init", "env", "action", "buffer", "update", "gating", "prior", "eval")

ALGORITHMS = {"sac": SacAgent, "sac-awmp": AwmpAgent}


class Streams:
    """Named independent generators spawned from one seed."""

    def __init__(self, seed):
        children = np.random.SeedSequence(seed).spawn(len(STREAMS))
        self._seqs = dict(zip(STREAMS, children))
        for name, seq in self._seqs.items():
            setattr(self, name, np.random.default_rng(seq))

    def fresh(self, name):
        """A new generator replaying ``name`` from its start."""
        return np.random.default_rng(self._seqs[name])


@dataclass
class MetricsRow:
    step: int
    mean_return: float
    returns: list
    wall_clock: float = 0.0
    loss_v: float = math.nan
    loss_q: float = math.nan
    loss_pi: float = math.nan
    loss_eta: float = math.nan
    mi: float = math.nan
    gating_entropy: float = math.nan


class TrainingDiverged(FloatingPointError):
    def __init__(self, step, cause):
        self.step = step
        super().__init__(f"non-finite value at env step {step}: {cause}")


def make_agent(algorithm, env, config, streams):
    try:
        cls = ALGORITHMS[algorithm]
    except KeyError:
        raise ValueError(f"unknown algorithm {algorithm!r}") from None
    return cls(env.state_dim, env.action_dim, config, streams.init, streams.prior_init)


def evaluate(agent, env, episodes, rng):
    """Undiscounted returns of greedy episodes."""
    return [run_episode(env, agent.act_greedy, rng)[0] for _ in range(episodes)]


@dataclass
class _Accumulator:
    sums: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)

    def add(self, stats):
        for k, v in stats.items():
            self.sums[k] = self.sums.get(k, 0.0) + v
            self.counts[k] = self.counts.get(k, 0) + 1

    def drain(self):
        out = {k: self.sums[k] / self.counts[k] for k in self.sums}
        self.sums, self.counts = {}, {}
        return out


def train(env, config, seed, algorithm="sac-awmp", total_steps=100_000, eval_interval=1000,
          eval_episodes=10, on_row=None, agent=None):
    """Run the off-policy loop: one environment step, then one update.

    Parameters
    ----------
    env : ToyEnv or str
    config : AgentConfig
    seed : int
    algorithm : {"sac", "sac-awmp"}
    on_row : callable, optional
        Called with each :class:`MetricsRow` as soon as it is produced.

    Returns
    -------
    agent, rows, buffer
    """
    if isinstance(env, str):
        env = make_env(env)
    eval_env = make_env(env.env_id)
    streams = Streams(seed)
    agent = agent or make_agent(algorithm, env, config, streams)
    buffer = ReplayBuffer(env.state_dim, env.action_dim, config.replay_capacity)
    uniform_logmu = -env.action_dim * math.log(2.0)
    acc = _Accumulator()
    rows = []
    t0 = time.perf_counter()

    state = env.reset(streams.env)
    for step in range(1, total_steps + 1):
        try:
            if step <= config.start_steps:
                action = streams.action.uniform(-1.0, 1.0, size=env.action_dim)
                logmu = uniform_logmu
            else:
                action, logmu = agent.act(state, streams.action, streams.gating)
            reward, next_state, done = env.step(action)
            terminal = done and not env.truncated
            buffer.push(Transition(state, action, reward, next_state, terminal, logmu))
            state = env.reset(streams.env) if done else next_state
            if len(buffer) >= max(config.update_after, config.batch_size):
                acc.add(agent.update(buffer, streams))
        except FloatingPointError as exc:
            raise TrainingDiverged(step, exc) from exc

        if eval_interval and step % eval_interval == 0:
            returns = evaluate(agent, eval_env, eval_episodes, streams.fresh("eval"))
            row = MetricsRow(step, float(np.mean(returns)), returns, time.perf_counter() - t0,
                             **acc.drain())
            rows.append(row)
            if on_row is not None:
                on_row(row)
    return agent, rows, buffer
