"""Deterministic toy continuous-control environments.

Each environment exposes ``reset(rng) -> state`` and
``step(action) -> (reward, next_state, done)``.  After a step,
``env.truncated`` tells whether ``done`` came from the horizon rather than
the terminal predicate.  ``env.oracle_action(state)`` is an analytic
controller used as a reference.

bang1d
    Double integrator, state (position, velocity), dt = 0.1, semi-implicit
    Euler: v += a*dt, x += v*dt.  Reward -(|x| + 0.1 a^2).  Terminal once
    |x| < 0.05 and |v| < 0.05.  Horizon 200.  Reset: x ~ U[-1, 1],
    v ~ U[-0.5, 0.5].  Velocity clipped to [-3, 3], position to [-5, 5].
    Oracle: a = -sign(x + v|v|/2), the minimum-time switching law.
pointmass2d
    Damped 2-D point mass, state (x, y, vx, vy): v <- 0.9 v + 0.1 a,
    p <- p + 0.1 v.  Reward -||p|| - 0.01 ||a||^2.  Goal at the origin, no
    terminal predicate.  Horizon 300.  Reset: p ~ U[-1, 1]^2, v = 0.
    Oracle: a = clip(-2 p - 2 v).
mountain1d
    Under-powered hill climb, state (position, velocity):
    v <- clip(v + 0.0015 a - 0.0025 cos(3 x), -0.07, 0.07), x <- x + v,
    x clipped to [-1.2, 0.6] (velocity zeroed at the left wall).  Reward
    -0.1 a^2 per step plus 100 on reaching x >= 0.45 (terminal).
    Horizon 500.  Reset: x ~ U[-0.6, -0.4], v = 0.  Oracle: a = sign(v),
    +1 when v = 0.
"""

from __future__ import annotations

import logging
import math

import numpy as np

log = logging.getLogger(__name__)


class ToyEnv:
    env_id = "toy"
    state_dim = 0
    action_dim = 0
    horizon = 0

    def __init__(self):
        self.state = None
        self.t = 0
        self.truncated = False

    def reset(self, rng, state=None):
        self.t = 0
        self.truncated = False
        self.state = self._initial(rng) if state is None else np.array(state, dtype=np.float64)
        return self.state.copy()

    def step(self, action):
        a = np.asarray(action, dtype=np.float64).reshape(self.action_dim)
        if np.any(np.abs(a) > 1.0):
            log.warning("%s: action %s outside [-1, 1], clipping", self.env_id, a)
            a = np.clip(a, -1.0, 1.0)
        reward, nxt, terminal = self._dynamics(self.state, a)
        self.t += 1
        self.state = nxt
        self.truncated = not terminal and self.t >= self.horizon
        return float(reward), nxt.copy(), bool(terminal or self.truncated)

    def _initial(self, rng):
        raise NotImplementedError

    def _dynamics(self, s, a):
        raise NotImplementedError

    def oracle_action(self, state):
        raise NotImplementedError


class Bang1D(ToyEnv):
    env_id = "bang1d"
    state_dim = 2
    action_dim = 1
    horizon = 200
    dt = 0.1
    goal_tol = 0.05

    def _initial(self, rng):
        return np.array([rng.uniform(-1.0, 1.0), rng.uniform(-0.5, 0.5)])

    def _dynamics(self, s, a):
        x, v = s
        u = a[0]
        v = min(max(v + u * self.dt, -3.0), 3.0)
        x = min(max(x + v * self.dt, -5.0), 5.0)
        reward = -(abs(x) + 0.1 * u * u)
        terminal = abs(x) < self.goal_tol and abs(v) < self.goal_tol
        return reward, np.array([x, v]), terminal

    @staticmethod
    def switching(state):
        x, v = state[0], state[1]
        return x + v * abs(v) / 2.0

    def oracle_action(self, state):
        s = self.switching(state)
        if s == 0.0:
            s = state[1]
        return np.array([-math.copysign(1.0, s) if s != 0.0 else 0.0])


class PointMass2D(ToyEnv):
    env_id = "pointmass2d"
    state_dim = 4
    action_dim = 2
    horizon = 300

    def _initial(self, rng):
        return np.concatenate([rng.uniform(-1.0, 1.0, size=2), np.zeros(2)])

    def _dynamics(self, s, a):
        p, v = s[:2], s[2:]
        v = 0.9 * v + 0.1 * a
        p = p + 0.1 * v
        reward = -float(np.sqrt(p @ p)) - 0.01 * float(a @ a)
        return reward, np.concatenate([p, v]), False

    def oracle_action(self, state):
        return np.clip(-2.0 * state[:2] - 2.0 * state[2:], -1.0, 1.0)


class Mountain1D(ToyEnv):
    env_id = "mountain1d"
    state_dim = 2
    action_dim = 1
    horizon = 500
    goal = 0.45

    def _initial(self, rng):
        return np.array([rng.uniform(-0.6, -0.4), 0.0])

    def _dynamics(self, s, a):
        x, v = s
        u = a[0]
        v = min(max(v + 0.0015 * u - 0.0025 * math.cos(3.0 * x), -0.07), 0.07)
        x = x + v
        if x < -1.2:
            x, v = -1.2, 0.0
        x = min(x, 0.6)
        terminal = x >= self.goal
        reward = -0.1 * u * u + (100.0 if terminal else 0.0)
        return reward, np.array([x, v]), terminal

    def oracle_action(self, state):
        return np.array([1.0 if state[1] >= 0.0 else -1.0])


ENVS = {cls.env_id: cls for cls in (Bang1D, PointMass2D, Mountain1D)}


def make_env(env_id):
    try:
        return ENVS[env_id]()
    except KeyError:
        raise ValueError(f"unknown environment {env_id!r}; choose from {sorted(ENVS)}") from None


def run_episode(env, action_fn, rng, state=None):
    """Roll out one episode; returns (undiscounted return, steps, trajectory).

    ``trajectory`` is a list of ``(t, state, action, reward)`` tuples.
    """
    s = env.reset(rng, state)
    total, traj = 0.0, []
    for t in range(env.horizon):
        a = np.asarray(action_fn(s), dtype=np.float64)
        r, s_next, done = env.step(a)
        traj.append((t, s, a, r))
        total += r
        s = s_next
        if done:
            break
    return total, len(traj), traj


def format_trajectory(traj):
    """One line per step: t, state..., action..., reward (tab separated)."""
    lines = []
    for t, s, a, r in traj:
        cols = [str(t)] + [repr(float(x)) for x in s] + [repr(float(x)) for x in a] + [repr(float(r))]
        lines.append("\t".join(cols))
    return "\n".join(lines) + ("\n" if lines else "")
