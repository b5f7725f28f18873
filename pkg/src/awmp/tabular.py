"""Exact soft policy evaluation, improvement and iteration on finite MDPs.

Used as ground truth for the maximum-entropy theory: the evaluation operator
is a gamma-contraction, Boltzmann improvement never lowers any soft Q value,
and alternating the two converges to the soft-optimal policy.

MDP text format (whitespace separated, ``#`` starts a comment)::

    n_states n_actions gamma
    R[0][0] ... R[0][A-1]          # n_states rows of rewards
    ...
    T[0][0][0] ... T[0][0][S-1]    # n_states * n_actions rows, (s, a) major
    ...

An optional trailing block of ``n_states`` numbers gives the initial
distribution; it defaults to uniform.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class MDPFormatError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass
class FiniteMDP:
    transitions: np.ndarray  # (S, A, S)
    rewards: np.ndarray  # (S, A)
    gamma: float
    initial: np.ndarray = None

    def __post_init__(self):
        self.transitions = np.asarray(self.transitions, dtype=np.float64)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        S, A = self.rewards.shape
        if self.transitions.shape != (S, A, S):
            raise ValueError(f"transition tensor shape {self.transitions.shape} != {(S, A, S)}")
        if not np.allclose(self.transitions.sum(axis=-1), 1.0, atol=1e-9) or np.any(self.transitions < 0):
            raise ValueError("every T[s][a] must be a probability vector")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")
        if not np.all(np.isfinite(self.rewards)):
            raise ValueError("rewards must be finite")
        if self.initial is None:
            self.initial = np.full(S, 1.0 / S)

    @property
    def n_states(self):
        return self.rewards.shape[0]

    @property
    def n_actions(self):
        return self.rewards.shape[1]


@dataclass
class TabularPolicy:
    probs: np.ndarray  # (S, A)
    alpha: float

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError(f"temperature alpha must be > 0, got {self.alpha}")


@dataclass
class SoftValues:
    q: np.ndarray
    v: np.ndarray
    iterations: int = 0
    residuals: list = field(default_factory=list)


def random_mdp(rng, n_states, n_actions, gamma):
    T = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    R = rng.uniform(-1.0, 1.0, size=(n_states, n_actions))
    return FiniteMDP(T, R, gamma)


def random_policy(rng, n_states, n_actions, alpha):
    return TabularPolicy(rng.dirichlet(np.ones(n_actions), size=n_states), alpha)


def _plogp(p):
    return np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)


def soft_state_values(q, policy):
    """V(s) = sum_a pi(a|s) (Q(s,a) - alpha log pi(a|s))."""
    return (policy.probs * q).sum(axis=-1) - policy.alpha * _plogp(policy.probs).sum(axis=-1)


def soft_policy_evaluation(mdp, policy, tol=1e-10, q0=None, max_iter=1_000_000):
    """Iterate the soft Bellman backup to its fixed point.

    Q <- R + gamma * T @ V with V the entropy-augmented state value of the
    policy.  Stops once the sup-norm change between sweeps drops below
    ``tol``; the per-sweep changes are kept in ``residuals``.
    """
    probs = policy.probs
    if probs.shape != mdp.rewards.shape:
        raise ValueError(f"policy shape {probs.shape} != {mdp.rewards.shape}")
    if np.any(probs < 0) or not np.allclose(probs.sum(axis=-1), 1.0, atol=1e-9):
        raise ValueError("every policy row must be a probability vector")
    q = np.zeros_like(mdp.rewards) if q0 is None else np.array(q0, dtype=np.float64)
    entropy_bonus = -policy.alpha * _plogp(probs).sum(axis=-1)
    residuals = []
    for it in range(1, max_iter + 1):
        v = (probs * q).sum(axis=-1) + entropy_bonus
        q_new = mdp.rewards + mdp.gamma * (mdp.transitions @ v)
        diff = float(np.max(np.abs(q_new - q)))
        residuals.append(diff)
        q = q_new
        if diff < tol:
            break
    v = (probs * q).sum(axis=-1) + entropy_bonus
    return SoftValues(q, v, it, residuals)


def soft_policy_improvement(values, alpha):
    """Boltzmann policy pi'(a|s) proportional to exp(Q(s,a) / alpha)."""
    if alpha <= 0:
        raise ValueError(f"temperature alpha must be > 0, got {alpha}")
    z = values.q / alpha
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return TabularPolicy(e / e.sum(axis=-1, keepdims=True), alpha)


@dataclass
class IterationResult:
    policy: TabularPolicy
    values: SoftValues
    history: list  # Q tables of successive policies
    eval_sweeps: list


def soft_policy_iteration(mdp, alpha, tol=1e-10, init_policy=None, max_iter=10_000):
    """Alternate soft evaluation and Boltzmann improvement until the policy settles."""
    policy = init_policy or TabularPolicy(np.full(mdp.rewards.shape, 1.0 / mdp.n_actions), alpha)
    values = soft_policy_evaluation(mdp, policy, tol)
    history, sweeps = [values.q], [values.iterations]
    for _ in range(max_iter):
        new_policy = soft_policy_improvement(values, alpha)
        change = float(np.max(np.abs(new_policy.probs - policy.probs)))
        policy = new_policy
        values = soft_policy_evaluation(mdp, policy, tol, q0=values.q)
        history.append(values.q)
        sweeps.append(values.iterations)
        if change < tol:
            break
    return IterationResult(policy, values, history, sweeps)


def brute_force_2x2(mdp, alpha, step=1e-3, refine=True):
    """Soft-optimal Q of a 2-state 2-action MDP by grid search over policies.

    Each policy is evaluated exactly with a linear solve.  The grid maximises
    sum_s V(s) (the soft-optimal policy maximises every V(s) at once), then a
    local grid around the best point is searched at 1/1000 of the step.
    """
    if mdp.rewards.shape != (2, 2):
        raise ValueError("brute_force_2x2 needs a 2-state 2-action MDP")

    def evaluate(p0, p1):
        # p_s = pi(action 0 | s); vectorised over broadcast arrays p0, p1
        P = np.stack([np.stack([p0, 1 - p0], -1), np.stack([p1, 1 - p1], -1)], -2)  # (..., S, A)
        with np.errstate(divide="ignore", invalid="ignore"):
            H = -np.where(P > 0, P * np.log(np.where(P > 0, P, 1.0)), 0.0).sum(-1)
        r_pi = (P * mdp.rewards).sum(-1) + alpha * H
        T_pi = np.einsum("...sa,sat->...st", P, mdp.transitions)
        M = np.eye(2) - mdp.gamma * T_pi
        # closed-form 2x2 inverse, rows = states
        det = M[..., 0, 0] * M[..., 1, 1] - M[..., 0, 1] * M[..., 1, 0]
        v0 = (M[..., 1, 1] * r_pi[..., 0] - M[..., 0, 1] * r_pi[..., 1]) / det
        v1 = (-M[..., 1, 0] * r_pi[..., 0] + M[..., 0, 0] * r_pi[..., 1]) / det
        return v0, v1

    grid = np.arange(0.0, 1.0 + step / 2, step)
    p0, p1 = np.meshgrid(grid, grid, indexing="ij")
    v0, v1 = evaluate(p0, p1)
    i, j = np.unravel_index(np.argmax(v0 + v1), v0.shape)
    best = (grid[i], grid[j])
    if refine:
        fine = step / 1000.0
        g0 = np.clip(np.arange(best[0] - step, best[0] + step + fine / 2, fine), 0.0, 1.0)
        g1 = np.clip(np.arange(best[1] - step, best[1] + step + fine / 2, fine), 0.0, 1.0)
        f0, f1 = np.meshgrid(g0, g1, indexing="ij")
        w0, w1 = evaluate(f0, f1)
        k, m = np.unravel_index(np.argmax(w0 + w1), w0.shape)
        best = (g0[k], g1[m])
    v = np.array(evaluate(np.array(best[0]), np.array(best[1])), dtype=np.float64)
    q = mdp.rewards + mdp.gamma * mdp.transitions @ v
    probs = np.array([[best[0], 1 - best[0]], [best[1], 1 - best[1]]])
    return q, probs


def parse_mdp(text):
    """Parse the whitespace MDP format; errors carry the offending line number."""
    tokens = []  # (value_str, line_no)
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        tokens += [(tok, line_no) for tok in line.split()]
    pos = 0

    def take(kind):
        nonlocal pos
        if pos >= len(tokens):
            last = tokens[-1][1] if tokens else 1
            raise MDPFormatError("unexpected end of file", last)
        tok, line_no = tokens[pos]
        pos += 1
        try:
            return kind(tok), line_no
        except ValueError:
            raise MDPFormatError(f"expected {kind.__name__}, got {tok!r}", line_no) from None

    S, line_no = take(int)
    A, _ = take(int)
    gamma, gline = take(float)
    if S < 1 or A < 1:
        raise MDPFormatError("state and action counts must be positive", line_no)
    R = np.array([[take(float)[0] for _ in range(A)] for _ in range(S)])
    T = np.empty((S, A, S))
    for s in range(S):
        for a in range(A):
            row = [take(float) for _ in range(S)]
            T[s, a] = [v for v, _ in row]
            if abs(T[s, a].sum() - 1.0) > 1e-6 or np.any(T[s, a] < 0):
                raise MDPFormatError(f"T[{s}][{a}] is not a probability vector", row[-1][1])
    initial = None
    if pos < len(tokens):
        initial = np.array([take(float)[0] for _ in range(S)])
        if pos < len(tokens):
            raise MDPFormatError("trailing tokens", tokens[pos][1])
    if not 0.0 <= gamma < 1.0:
        raise MDPFormatError(f"gamma must be in [0, 1), got {gamma}", gline)
    return FiniteMDP(T, R, gamma, initial)


def render_mdp(mdp):
    lines = [f"{mdp.n_states} {mdp.n_actions} {mdp.gamma!r}"]
    lines += [" ".join(repr(float(x)) for x in row) for row in mdp.rewards]
    lines += [" ".join(repr(float(x)) for x in mdp.transitions[s, a])
              for s in range(mdp.n_states) for a in range(mdp.n_actions)]
    return "\n".join(lines) + "\n"


def certify(mdp, alpha, tol=1e-12, slack=1e-9):
    """Run soft policy iteration and check the contraction and monotonicity claims.

    Returns a dict with the converged result and two booleans:
    ``contraction`` (every evaluation sweep shrank the change by <= gamma) and
    ``monotone`` (no Q entry decreased by more than ``slack`` between policies).
    """
    result = soft_policy_iteration(mdp, alpha, tol)
    contraction = True
    policy = TabularPolicy(np.full(mdp.rewards.shape, 1.0 / mdp.n_actions), alpha)
    for _ in range(3):
        vals = soft_policy_evaluation(mdp, policy, tol)
        contraction &= contraction_holds(vals.residuals, mdp.gamma)
        policy = soft_policy_improvement(vals, alpha)
    monotone = all(np.all(b >= a - slack) for a, b in zip(result.history, result.history[1:]))
    return {"result": result, "contraction": bool(contraction), "monotone": bool(monotone)}


def contraction_holds(residuals, gamma, floor=1e-12):
    """True if each sweep change is at most gamma times the previous one.

    Changes below ``floor`` are at the float64 noise level and are skipped.
    """
    for prev, cur in zip(residuals, residuals[1:]):
        if prev < floor:
            break
        if cur > gamma * prev + floor:
            return False
    return True
