"""Scripted non-stationary grid worlds with hidden change schedules.

All environments are 7x7 grids with 4 moves. Observations are
``gain * base[perm] + bias`` where ``base`` is a one-hot position followed
by four wall indicators. A :class:`ChangeSchedule` swaps in new
:class:`EnvSpec` objects at given epochs; detectors and the trainer only
ever see observations and rewards.

Shipped scenarios (``make_scenario``):

``shift-grid``      observation bias/gain change
``goal-grid``       goal relocation, old goal becomes a penalty cell
``noisy-corridor``  transition-noise level change next to penalty rows
``perm-grid``       observation feature permutation
"""

import json
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from .exceptions import ConfigError

# right, left, down, up in (x, y) grid coordinates
MOVES = np.array([(1, 0), (-1, 0), (0, 1), (0, -1)])
N_LOCAL = 4


@dataclass(frozen=True)
class EnvSpec:
    env_id: str = "grid"
    size: int = 7
    horizon: int = 64
    n_actions: int = 4
    start_cells: Tuple[Tuple[int, int], ...] = ((0, 0),)
    goal: Tuple[int, int] = (6, 6)
    goal_reward: float = 1.0
    step_reward: float = -0.01
    # terminal cells with their rewards
    traps: Tuple[Tuple[Tuple[int, int], float], ...] = ()
    transition_noise: float = 0.0
    obs_bias: float = 0.0
    obs_gain: float = 1.0
    obs_permutation: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        cells = list(self.start_cells) + [self.goal] + [c for c, _ in self.traps]
        for x, y in cells:
            if not (0 <= x < self.size and 0 <= y < self.size):
                raise ConfigError(f"cell {(x, y)} outside {self.size}x{self.size} grid")
        if not self.start_cells:
            raise ConfigError("need at least one start cell")
        if self.n_actions != 4:
            raise ConfigError("grid worlds have exactly 4 actions")
        if not 0 <= self.transition_noise <= 1:
            raise ConfigError("transition_noise must lie in [0, 1]")
        if self.obs_gain == 0:
            raise ConfigError("obs_gain must be non-zero")
        if self.obs_permutation is not None:
            if sorted(self.obs_permutation) != list(range(self.obs_dim)):
                raise ConfigError("obs_permutation is not a permutation of the features")

    @property
    def obs_dim(self):
        return self.size * self.size + N_LOCAL

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        for key in ("start_cells", "goal"):
            if key in doc and doc[key] is not None:
                val = doc[key]
                doc[key] = tuple(map(tuple, val)) if key == "start_cells" else tuple(val)
        if doc.get("traps") is not None:
            doc["traps"] = tuple((tuple(c), float(r)) for c, r in doc["traps"])
        if doc.get("obs_permutation") is not None:
            doc["obs_permutation"] = tuple(doc["obs_permutation"])
        return cls(**doc)


@dataclass
class ChangeSchedule:
    changes: List[Tuple[int, EnvSpec]] = field(default_factory=list)

    def __post_init__(self):
        epochs = [c for c, _ in self.changes]
        if any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise ConfigError("change epochs must be strictly increasing")

    @property
    def change_epochs(self):
        return [c for c, _ in self.changes]

    def __len__(self):
        return len(self.changes)

    def to_dict(self):
        return {"changes": [{"epoch": c, "spec": s.to_dict()} for c, s in self.changes]}

    @classmethod
    def from_dict(cls, doc):
        return cls([(int(c["epoch"]), EnvSpec.from_dict(c["spec"])) for c in doc.get("changes", [])])


def base_observation(spec, pos):
    obs = np.zeros(spec.obs_dim)
    x, y = pos
    obs[y * spec.size + x] = 1.0
    k = spec.size * spec.size
    # wall indicators in move order
    obs[k + 0] = x == spec.size - 1
    obs[k + 1] = x == 0
    obs[k + 2] = y == spec.size - 1
    obs[k + 3] = y == 0
    return obs


def transform_observation(spec, base):
    obs = base if spec.obs_permutation is None else base[list(spec.obs_permutation)]
    return spec.obs_gain * obs + spec.obs_bias


class GridEnv:
    """Mutable environment state: current spec, position, step counter, rng."""

    def __init__(self, spec, seed=None):
        self.spec = spec
        self.rng = np.random.default_rng(seed)
        self.pos = tuple(spec.start_cells[0])
        self.t = 0
        self.schedule_pos = 0
        self._trap_rewards = dict(spec.traps)

    def set_spec(self, spec):
        self.spec = spec
        self._trap_rewards = dict(spec.traps)

    @property
    def observation(self):
        return transform_observation(self.spec, base_observation(self.spec, self.pos))

    def reset(self):
        cells = self.spec.start_cells
        self.pos = tuple(cells[self.rng.integers(len(cells))])
        self.t = 0
        return self.observation

    def _move(self, action):
        spec = self.spec
        if spec.transition_noise > 0 and self.rng.random() < spec.transition_noise:
            others = [a for a in range(spec.n_actions) if a != action]
            action = others[self.rng.integers(len(others))]
        dx, dy = MOVES[action]
        x = min(max(self.pos[0] + dx, 0), spec.size - 1)
        y = min(max(self.pos[1] + dy, 0), spec.size - 1)
        return (int(x), int(y)), action

    def step(self, action):
        action = int(action)
        if not 0 <= action < self.spec.n_actions:
            raise ValueError(f"action {action} out of range")
        self.pos, _ = self._move(action)
        self.t += 1
        spec = self.spec
        if self.pos == tuple(spec.goal):
            return self.observation, spec.goal_reward, True
        if self.pos in self._trap_rewards:
            return self.observation, self._trap_rewards[self.pos], True
        return self.observation, spec.step_reward, self.t >= spec.horizon


def reset(env, rng=None):
    if rng is not None:
        env.rng = rng
    return env.reset()


def step(env, action):
    return env.step(action)


def advance_schedule(env, epoch, schedule):
    """Apply every pending change whose epoch has arrived; True if any did."""
    changed = False
    while env.schedule_pos < len(schedule.changes) and epoch >= schedule.changes[env.schedule_pos][0]:
        env.set_spec(schedule.changes[env.schedule_pos][1])
        env.schedule_pos += 1
        changed = True
    return changed


def optimal_return(spec, gamma=1.0):
    """Expected optimal (discounted) return from p_0, by finite-horizon value iteration."""
    S = spec.size
    V = np.zeros((S, S))  # value with 0 steps left
    trap = dict(spec.traps)
    p = spec.transition_noise
    for _ in range(spec.horizon):
        Q = np.zeros((S, S, spec.n_actions))
        for x in range(S):
            for y in range(S):
                for a in range(spec.n_actions):
                    q = 0.0
                    for b in range(spec.n_actions):
                        prob = (1 - p) if b == a else p / (spec.n_actions - 1)
                        if prob == 0:
                            continue
                        nx = min(max(x + MOVES[b][0], 0), S - 1)
                        ny = min(max(y + MOVES[b][1], 0), S - 1)
                        if (nx, ny) == tuple(spec.goal):
                            r, cont = spec.goal_reward, 0.0
                        elif (nx, ny) in trap:
                            r, cont = trap[(nx, ny)], 0.0
                        else:
                            r, cont = spec.step_reward, V[nx, ny]
                        q += prob * (r + gamma * cont)
                    Q[x, y, a] = q
        V = Q.max(axis=2)
    return float(np.mean([V[x, y] for x, y in spec.start_cells]))


# -- scenarios ----------------------------------------------------------------

LEFT_COLUMN = tuple((0, y) for y in range(7))

GOAL_GRID_NEW_GOAL = (6, 3)

SCENARIOS = ("shift-grid", "goal-grid", "noisy-corridor", "perm-grid")


def _scenario_pair(name, magnitude, seed):
    if name == "shift-grid":
        base = EnvSpec("shift-grid", start_cells=LEFT_COLUMN, goal=(6, 3))
        changed = replace(base, obs_bias=float(magnitude))
    elif name == "goal-grid":
        base = EnvSpec("goal-grid", start_cells=((3, 3),), goal=(6, 6), traps=(((0, 0), -1.0),))
        changed = replace(base, goal=GOAL_GRID_NEW_GOAL, traps=(((0, 0), -1.0), ((6, 6), -float(magnitude))))
    elif name == "noisy-corridor":
        traps = tuple(((x, y), -1.0) for x in range(1, 6) for y in (0, 1, 5, 6))
        base = EnvSpec("noisy-corridor", start_cells=((0, 3),), goal=(6, 3), traps=traps)
        changed = replace(base, transition_noise=float(magnitude))
    elif name == "perm-grid":
        base = EnvSpec("perm-grid", start_cells=LEFT_COLUMN, goal=(6, 3))
        perm = np.random.default_rng(seed).permutation(base.obs_dim)
        changed = replace(base, obs_permutation=tuple(int(i) for i in perm))
    else:
        raise ConfigError(f"unknown scenario {name!r}; choose from {SCENARIOS}")
    return base, changed


DEFAULT_MAGNITUDE = {"shift-grid": 0.25, "goal-grid": 1.0, "noisy-corridor": 0.3, "perm-grid": 1.0}


def make_scenario(name, change_epochs=(), magnitude=None, seed=0):
    """Base spec plus a schedule alternating between base and changed specs."""
    if magnitude is None:
        magnitude = DEFAULT_MAGNITUDE.get(name, 1.0)
    base, changed = _scenario_pair(name, magnitude, seed)
    changes = [(int(c), changed if k % 2 == 0 else base) for k, c in enumerate(change_epochs)]
    return base, ChangeSchedule(changes)


def evenly_spaced_changes(n_epochs, n_changes):
    """Change epochs splitting ``n_epochs`` into ``n_changes + 1`` equal segments."""
    seg = n_epochs / (n_changes + 1)
    return [int(round(seg * (k + 1))) for k in range(n_changes)]


def dump_schedule(schedule, path):
    with open(path, "w") as fh:
        json.dump(schedule.to_dict(), fh)
