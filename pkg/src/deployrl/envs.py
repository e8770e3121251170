"""Toy environments, an exact value-iteration solver and expert policies.

Three environments are provided:

- ``grid5``: a slippery 5x5 gridworld with a hazard wall between start and goal.
- ``queue2``: a two-direction signalised intersection with Bernoulli arrivals.
- ``pointmass``: a 1-D double integrator with a bounded continuous force.

Finite environments are compiled to dense tabular kernels (:class:`FiniteMDP`)
so that exact dynamic programming can be used for oracles. States of a finite
MDP are integer indices; actions are integer indices. The point mass uses
``(position, velocity)`` vectors and 1-D action vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

TRANSITION_ATOL = 1e-9


class UnsupportedError(ValueError):
    """Raised when an operation is asked of an environment that cannot support it."""


@dataclass(frozen=True, eq=False)
class FiniteMDP:
    """Tabular MDP ``(S, A, p, r, rho, gamma)`` with a horizon and terminal mask.

    ``transitions[s, a, s2]`` is ``p(s2 | s, a)`` and ``rewards[s, a, s2]`` the
    reward received on that transition. Terminal states end the episode when
    entered; they self-loop with zero reward so Bellman backups stay valid.
    """

    env_id: str
    transitions: np.ndarray
    rewards: np.ndarray
    initial_dist: np.ndarray
    gamma: float
    horizon: int
    terminal: np.ndarray
    _cdf: np.ndarray = field(init=False, repr=False)

    discrete = True

    def __post_init__(self):
        P = np.asarray(self.transitions, dtype=float)
        R = np.asarray(self.rewards, dtype=float)
        rho = np.asarray(self.initial_dist, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ValueError(f"transitions must have shape (S, A, S), got {P.shape}")
        if R.shape != P.shape:
            raise ValueError(f"rewards shape {R.shape} does not match transitions {P.shape}")
        if np.any(P < 0) or not np.allclose(P.sum(-1), 1.0, atol=TRANSITION_ATOL, rtol=0):
            raise ValueError("transition rows must be probability vectors")
        if not np.all(np.isfinite(R)):
            raise ValueError("rewards must be finite")
        if rho.shape != (P.shape[0],) or not np.isclose(rho.sum(), 1.0):
            raise ValueError("initial_dist must be a probability vector over states")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        object.__setattr__(self, "transitions", P)
        object.__setattr__(self, "rewards", R)
        object.__setattr__(self, "initial_dist", rho)
        object.__setattr__(self, "terminal", np.asarray(self.terminal, dtype=bool))
        cdf = np.cumsum(P, axis=-1)
        cdf[..., -1] = 1.0
        object.__setattr__(self, "_cdf", cdf)

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[1]

    @property
    def expected_rewards(self) -> np.ndarray:
        """``r(s, a)`` as the transition-weighted mean reward, shape ``(S, A)``."""
        return np.einsum("ijk,ijk->ij", self.transitions, self.rewards)

    def reset(self, rng: np.random.Generator) -> int:
        return int(np.searchsorted(np.cumsum(self.initial_dist), rng.random(), side="right"))

    def step(self, state, action, rng: np.random.Generator):
        s, a = int(state), int(action)
        if not 0 <= s < self.n_states:
            raise IndexError(f"state index {s} out of range [0, {self.n_states})")
        if not 0 <= a < self.n_actions:
            raise IndexError(f"action index {a} out of range [0, {self.n_actions})")
        s2 = int(np.searchsorted(self._cdf[s, a], rng.random(), side="right"))
        s2 = min(s2, self.n_states - 1)
        return s2, float(self.rewards[s, a, s2]), bool(self.terminal[s2])

    def step_batch(self, states, actions, rng: np.random.Generator):
        """Vectorised :meth:`step` over arrays of states and actions."""
        u = rng.random(len(states))
        cdf = self._cdf[states, actions]
        s2 = np.minimum((cdf <= u[:, None]).sum(axis=1), self.n_states - 1)
        return s2, self.rewards[states, actions, s2], self.terminal[s2]

    def encode(self, states) -> np.ndarray:
        """One-hot features for integer states."""
        states = np.atleast_1d(np.asarray(states, dtype=int))
        return np.eye(self.n_states)[states]


# ---------------------------------------------------------------------------
# Gridworld

GRID_MOVES = ((1, 0), (0, 1), (-1, 0), (0, -1))
GRID_ACTION_NAMES = ("right", "up", "left", "down")


@dataclass(frozen=True)
class GridWorldSpec:
    """Slippery gridworld; cells are ``(x, y)`` and state index is ``y * width + x``.

    With probability ``slip_prob`` the chosen move is replaced by a uniformly
    random one. Bumping into the border leaves the agent in place. Entering
    the goal pays ``goal_reward`` and ends the episode; entering a hazard pays
    ``hazard_penalty``. ``start=None`` means a uniform start over all cells.
    """

    width: int = 5
    height: int = 5
    start: Optional[tuple] = (0, 1)
    goal: tuple = (4, 1)
    hazards: frozenset = frozenset({(2, 0), (2, 1), (2, 2)})
    slip_prob: float = 0.1
    step_reward: float = -10.0
    goal_reward: float = 0.0
    hazard_penalty: float = -20.0
    gamma: float = 0.95
    horizon: int = 50
    expert_hazard_shaping: float = -100.0
    env_id: str = "grid5"

    def __post_init__(self):
        cells = [self.goal, *self.hazards] + ([self.start] if self.start is not None else [])
        for x, y in cells:
            if not (0 <= x < self.width and 0 <= y < self.height):
                raise ValueError(f"cell {(x, y)} is out of bounds")
        if tuple(self.goal) in {tuple(h) for h in self.hazards}:
            raise ValueError("goal must not be a hazard")
        if not 0.0 <= self.slip_prob < 1.0:
            raise ValueError("slip_prob must lie in [0, 1)")

    def index(self, cell) -> int:
        x, y = cell
        return y * self.width + x

    def cell(self, index: int) -> tuple:
        return index % self.width, index // self.width

    def _move(self, cell, action):
        dx, dy = GRID_MOVES[action]
        x = min(max(cell[0] + dx, 0), self.width - 1)
        y = min(max(cell[1] + dy, 0), self.height - 1)
        return x, y

    def hazard_mask(self) -> np.ndarray:
        mask = np.zeros(self.width * self.height, dtype=bool)
        for h in self.hazards:
            mask[self.index(h)] = True
        return mask

    def build(self) -> FiniteMDP:
        n = self.width * self.height
        P = np.zeros((n, 4, n))
        goal = self.index(self.goal)
        for s in range(n):
            if s == goal:
                P[s, :, s] = 1.0
                continue
            for a in range(4):
                P[s, a, self.index(self._move(self.cell(s), a))] += 1.0 - self.slip_prob
                for b in range(4):
                    P[s, a, self.index(self._move(self.cell(s), b))] += self.slip_prob / 4
        entry = np.full(n, self.step_reward)
        entry[goal] += self.goal_reward
        entry[self.hazard_mask()] += self.hazard_penalty
        R = np.broadcast_to(entry, (n, 4, n)).copy()
        R[goal] = 0.0
        if self.start is None:
            rho = np.full(n, 1.0 / n)
        else:
            rho = np.zeros(n)
            rho[self.index(self.start)] = 1.0
        terminal = np.zeros(n, dtype=bool)
        terminal[goal] = True
        return FiniteMDP(self.env_id, P, R, rho, self.gamma, self.horizon, terminal)

    def expert_shaping(self) -> np.ndarray:
        """Extra reward for the expert: a large penalty for entering any hazard."""
        n = self.width * self.height
        shaping = np.zeros((n, 4, n))
        shaping[:, :, self.hazard_mask()] = self.expert_hazard_shaping
        shaping[self.index(self.goal)] = 0.0
        return shaping


# ---------------------------------------------------------------------------
# Queue traffic

PHASE_NS, PHASE_EW = 0, 1


@dataclass(frozen=True)
class QueueTrafficSpec:
    """Single intersection with a north-south and an east-west queue.

    The state is ``(q_ns, q_ew, phase)``; the action picks the green phase for
    the step. The green queue discharges up to ``discharge_rate`` vehicles,
    then each direction receives a Bernoulli arrival, capped at ``max_queue``.
    The reward ``-(q_ns + q_ew) / max_queue`` is charged on the current queues,
    plus ``-switch_cost`` whenever the action changes the phase.
    """

    arrival_rates: tuple = (0.3, 0.3)
    max_queue: int = 20
    discharge_rate: int = 2
    switch_cost: float = 0.05
    gamma: float = 0.95
    horizon: int = 200
    expert_switch_shaping: float = -0.5
    env_id: str = "queue2"

    def __post_init__(self):
        if len(self.arrival_rates) != 2 or not all(0.0 <= p <= 1.0 for p in self.arrival_rates):
            raise ValueError("arrival_rates must be two probabilities")
        if self.max_queue < 1 or self.discharge_rate < 0:
            raise ValueError("max_queue must be >= 1 and discharge_rate >= 0")

    @property
    def n_queue(self) -> int:
        return self.max_queue + 1

    def index(self, q_ns: int, q_ew: int, phase: int) -> int:
        return (q_ns * self.n_queue + q_ew) * 2 + phase

    def decode(self, index: int) -> tuple:
        rest, phase = divmod(int(index), 2)
        q_ns, q_ew = divmod(rest, self.n_queue)
        return q_ns, q_ew, phase

    def next_queues(self, q_ns: int, q_ew: int, green: int, arrivals=(0, 0)) -> tuple:
        """Discharge the green queue, then add arrivals, capped at ``max_queue``."""
        if green == PHASE_NS:
            q_ns = max(0, q_ns - self.discharge_rate)
        else:
            q_ew = max(0, q_ew - self.discharge_rate)
        q_ns = min(self.max_queue, q_ns + arrivals[0])
        q_ew = min(self.max_queue, q_ew + arrivals[1])
        return q_ns, q_ew

    def build(self) -> FiniteMDP:
        n = self.n_queue * self.n_queue * 2
        P = np.zeros((n, 2, n))
        R = np.zeros((n, 2, n))
        p_ns, p_ew = self.arrival_rates
        for s in range(n):
            q_ns, q_ew, phase = self.decode(s)
            for a in (PHASE_NS, PHASE_EW):
                r = -(q_ns + q_ew) / self.max_queue - self.switch_cost * (a != phase)
                R[s, a, :] = r
                for arr_ns, w_ns in ((0, 1 - p_ns), (1, p_ns)):
                    for arr_ew, w_ew in ((0, 1 - p_ew), (1, p_ew)):
                        nq = self.next_queues(q_ns, q_ew, a, (arr_ns, arr_ew))
                        P[s, a, self.index(*nq, a)] += w_ns * w_ew
        rho = np.zeros(n)
        rho[self.index(0, 0, PHASE_NS)] = 1.0
        return FiniteMDP(self.env_id, P, R, rho, self.gamma, self.horizon, np.zeros(n, dtype=bool))

    def expert_shaping(self) -> np.ndarray:
        """Extra penalty on phase switches, making the expert reluctant to switch."""
        n = self.n_queue * self.n_queue * 2
        shaping = np.zeros((n, 2, n))
        phases = np.arange(n) % 2
        for a in (PHASE_NS, PHASE_EW):
            shaping[phases != a, a, :] = self.expert_switch_shaping
        return shaping


# ---------------------------------------------------------------------------
# Point mass


@dataclass(frozen=True, eq=False)
class PointMass:
    """Noisy linear system ``s' = A s + B clip(a) + noise`` with quadratic cost.

    The reward is ``-(|s|^2 + control_cost * a^2)``; episodes always run for
    ``horizon`` steps. Initial position is uniform on ``init_position``,
    initial velocity zero.
    """

    A: np.ndarray = field(default_factory=lambda: np.array([[1.0, 0.1], [0.0, 0.95]]))
    B: np.ndarray = field(default_factory=lambda: np.array([[0.0], [0.1]]))
    process_noise_std: float = 0.01
    control_cost: float = 0.01
    action_low: float = -1.0
    action_high: float = 1.0
    init_position: tuple = (-1.0, 1.0)
    gamma: float = 0.95
    horizon: int = 100
    expert_gain: tuple = (0.5, 1.0)
    env_id: str = "pointmass"

    discrete = False
    state_dim = 2
    action_dim = 1

    def __post_init__(self):
        object.__setattr__(self, "A", np.asarray(self.A, dtype=float))
        object.__setattr__(self, "B", np.asarray(self.B, dtype=float))
        if self.process_noise_std < 0:
            raise ValueError("process_noise_std must be >= 0")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        closed = self.A - self.B @ np.atleast_2d(self.expert_gain)
        if np.max(np.abs(np.linalg.eigvals(closed))) >= 1.0:
            raise ValueError("expert gain does not stabilise the system")

    def clip(self, actions):
        return np.clip(actions, self.action_low, self.action_high)

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        return np.array([rng.uniform(*self.init_position), 0.0])

    def reset_batch(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return np.column_stack([rng.uniform(*self.init_position, size=n), np.zeros(n)])

    def reward(self, states, actions):
        states = np.asarray(states, dtype=float)
        actions = self.clip(np.asarray(actions, dtype=float))
        return -(np.sum(states**2, axis=-1) + self.control_cost * np.sum(actions**2, axis=-1))

    def step(self, state, action, rng: np.random.Generator):
        s = np.asarray(state, dtype=float)
        a = self.clip(np.atleast_1d(np.asarray(action, dtype=float)))
        if s.shape != (2,) or a.shape != (1,):
            raise ValueError(f"bad state/action shapes {s.shape}, {a.shape}")
        s2 = self.A @ s + self.B @ a
        if self.process_noise_std > 0:
            s2 = s2 + self.process_noise_std * rng.standard_normal(2)
        return s2, float(self.reward(s, a)), False

    def step_batch(self, states, actions, rng: np.random.Generator):
        a = self.clip(np.asarray(actions, dtype=float).reshape(len(states), 1))
        s2 = states @ self.A.T + a @ self.B.T
        if self.process_noise_std > 0:
            s2 = s2 + self.process_noise_std * rng.standard_normal(s2.shape)
        return s2, self.reward(states, a), np.zeros(len(states), dtype=bool)

    def encode(self, states) -> np.ndarray:
        return np.atleast_2d(np.asarray(states, dtype=float))


# ---------------------------------------------------------------------------
# Solver and policies


def solve_optimal_q(mdp, tol: float = 1e-8, max_sweeps: int = 100_000, reward_offset=None):
    """Value iteration on ``Q(s,a) = r(s,a) + gamma * E max_a' Q(s',a')``.

    ``reward_offset`` (shape broadcastable to ``(S, A, S)``) is added to the
    transition rewards, which is how shaped expert objectives are solved.
    Returns the ``(S, A)`` table; the sup-norm Bellman residual is below ``tol``.
    """
    if not isinstance(mdp, FiniteMDP):
        raise UnsupportedError(f"value iteration needs a finite MDP, got {type(mdp).__name__}")
    R = mdp.rewards if reward_offset is None else mdp.rewards + reward_offset
    r = np.einsum("ijk,ijk->ij", mdp.transitions, R)
    P = mdp.transitions
    q = np.zeros_like(r)
    # Contraction: stopping when the update falls below tol*(1-gamma)/gamma
    # guarantees the residual of the returned table is below tol.
    stop = tol * (1.0 - mdp.gamma)
    for _ in range(max_sweeps):
        q_new = r + mdp.gamma * P @ q.max(axis=1)
        delta = np.max(np.abs(q_new - q))
        q = q_new
        if delta <= stop:
            return q
    raise RuntimeError(f"value iteration did not converge in {max_sweeps} sweeps")


def bellman_residual(mdp: FiniteMDP, q: np.ndarray, reward_offset=None) -> float:
    R = mdp.rewards if reward_offset is None else mdp.rewards + reward_offset
    r = np.einsum("ijk,ijk->ij", mdp.transitions, R)
    return float(np.max(np.abs(q - r - mdp.gamma * mdp.transitions @ q.max(axis=1))))


def greedy(q: np.ndarray) -> np.ndarray:
    """Row-wise argmax; ``np.argmax`` already breaks ties toward the lowest index."""
    return np.argmax(q, axis=-1)


class TabularPolicy:
    """Deterministic lookup-table policy over integer states."""

    deterministic = True

    def __init__(self, actions):
        self.actions = np.asarray(actions, dtype=int)

    def predict(self, states) -> np.ndarray:
        return self.actions[np.asarray(states, dtype=int)]

    def act(self, state, rng=None) -> int:
        return int(self.actions[int(state)])


class LinearFeedbackPolicy:
    """``a = clip(-K s)``."""

    deterministic = True

    def __init__(self, gain, low: float = -1.0, high: float = 1.0):
        self.gain = np.atleast_2d(np.asarray(gain, dtype=float))
        self.low, self.high = low, high

    def predict(self, states) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=float))
        return np.clip(-states @ self.gain.T, self.low, self.high)

    def act(self, state, rng=None) -> np.ndarray:
        return self.predict(state)[0]


class EpsilonGreedyPolicy:
    """Follows ``base`` with probability ``1 - epsilon``, else a uniform random action."""

    deterministic = False

    def __init__(self, base, epsilon: float, env):
        if not 0.0 <= epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
        self.base, self.epsilon, self.env = base, epsilon, env

    def act(self, state, rng: np.random.Generator):
        # Draw both uniforms unconditionally so the stream does not depend on the branch.
        explore = rng.random() < self.epsilon
        if self.env.discrete:
            random_action = int(rng.integers(self.env.n_actions))
        else:
            random_action = rng.uniform(self.env.action_low, self.env.action_high, size=1)
        return random_action if explore else self.base.act(state)


def make_expert(env, shaping=None):
    """Deterministic expert: greedy on the shaped optimal Q, or clipped linear feedback.

    For a finite MDP ``shaping`` is an additive reward array; for the point
    mass it is the feedback gain (defaults to ``env.expert_gain``).
    """
    if isinstance(env, FiniteMDP):
        q = solve_optimal_q(env, reward_offset=shaping)
        return TabularPolicy(greedy(q))
    if isinstance(env, PointMass):
        gain = env.expert_gain if shaping is None else shaping
        return LinearFeedbackPolicy(gain, env.action_low, env.action_high)
    raise UnsupportedError(f"no expert construction for {type(env).__name__}")


def action_table(policy, mdp: FiniteMDP) -> np.ndarray:
    """Actions chosen by a deterministic policy at every state of a finite MDP."""
    return np.asarray(policy.predict(np.arange(mdp.n_states)), dtype=int).reshape(-1)


ENV_IDS = ("grid5", "queue2", "pointmass")


def make_env(env_id: str):
    """Return ``(env, expert)`` for a built-in environment id."""
    if env_id == "grid5":
        spec = GridWorldSpec()
        env = spec.build()
        return env, make_expert(env, spec.expert_shaping())
    if env_id == "queue2":
        spec = QueueTrafficSpec()
        env = spec.build()
        return env, make_expert(env, spec.expert_shaping())
    if env_id == "pointmass":
        env = PointMass()
        return env, make_expert(env)
    raise KeyError(f"unknown env id {env_id!r}; expected one of {ENV_IDS}")
