"""Concrete MDP instances: two-state and three-state counterexamples, block world,
and the permuted three-state family."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .mdp import TabularMdp
from .planning import KernelEnsemble

GAMMA = 0.9

TWO_STATE_ACTIONS = ("a", "b")
CYCLE_ACTIONS = ("left", "right", "stay")
GRID_ACTIONS = ("east", "west", "north", "south")

_SWAP = np.array([[0.0, 1.0], [1.0, 0.0]])
_ID2 = np.eye(2)

TWO_STATE_REWARD = np.array([[0.06, 0.15], [0.3, 0.95]])

CYCLE_LEFT = np.array([[0.0, 0, 1], [1, 0, 0], [0, 1, 0]])
CYCLE_RIGHT = np.array([[0.0, 1, 0], [0, 0, 1], [1, 0, 0]])
CYCLE_STAY = np.eye(3)
CYCLE_REWARD = np.array([[0.06, 0.1, 0.15], [0.02, 0.1, 0.15], [0.01, 0.2, 0.95]])

PERM_BASE = np.array(
    [
        [[1.0, 0, 0], [0.8, 0.2, 0], [0, 0.8, 0.2]],  # left
        [[0.2, 0.8, 0], [0, 0.2, 0.8], [0, 0, 1.0]],  # right
        [[0.9, 0.1, 0], [0.1, 0.8, 0.1], [0, 0.1, 0.9]],  # stay
    ]
)
PERM_REWARD = np.array([[1.0, 1.3, 1.1], [2.0, 2.3, 2.1], [3.0, 3.3, 3.1]])


@dataclass(frozen=True, eq=False)
class EnvironmentSpec:
    name: str
    mdp: TabularMdp
    ensemble: KernelEnsemble
    notes: str = ""
    action_names: tuple = ()
    state_names: tuple = ()

    def __post_init__(self):
        self.ensemble.check_mdp(self.mdp)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "mdp": self.mdp.to_dict(),
            "ensemble": self.ensemble.to_dict(),
            "notes": self.notes,
            "action_names": list(self.action_names),
            "state_names": list(self.state_names),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "EnvironmentSpec":
        return cls(
            name=doc["name"],
            mdp=TabularMdp.from_dict(doc["mdp"], strict_rewards=False),
            ensemble=KernelEnsemble.from_dict(doc["ensemble"]),
            notes=doc.get("notes", ""),
            action_names=tuple(doc.get("action_names", ())),
            state_names=tuple(doc.get("state_names", ())),
        )


def two_state_env(prior=(0.5, 0.5)) -> EnvironmentSpec:
    """Two states, actions {a, b}; the kernels swap which action flips the state."""
    x1 = np.array([_SWAP, _ID2])
    x2 = np.array([_ID2, _SWAP])
    mdp = TabularMdp.from_state_reward(TWO_STATE_REWARD, 2, GAMMA)
    return EnvironmentSpec(
        "two_state",
        mdp,
        KernelEnsemble(np.array([x1, x2]), np.array(prior, dtype=float)),
        notes="no common expected-value optimum under the uniform prior",
        action_names=TWO_STATE_ACTIONS,
    )


def three_state_cycle_env(reward=None) -> EnvironmentSpec:
    """Three states on a circle with actions {left, right, stay}.

    X2 relabels the actions of X1: X2.left = X1.right, X2.right = X1.stay,
    X2.stay = X1.left.
    """
    x1 = np.array([CYCLE_LEFT, CYCLE_RIGHT, CYCLE_STAY])
    x2 = x1[[1, 2, 0]]
    r = CYCLE_REWARD if reward is None else np.asarray(reward, dtype=float)
    mdp = TabularMdp.from_state_reward(r, 3, GAMMA)
    return EnvironmentSpec(
        "three_state_cycle",
        mdp,
        KernelEnsemble(np.array([x1, x2]), np.array([0.5, 0.5])),
        notes="extended policy iteration started at pi*(X1) stays at pi*(X1)",
        action_names=CYCLE_ACTIONS,
    )


# -- block world ------------------------------------------------------------------

_MOVES = {"east": (0, 1), "west": (0, -1), "north": (-1, 0), "south": (1, 0)}
_ORTHOGONAL = {"east": ("north", "south"), "west": ("north", "south"), "north": ("east", "west"), "south": ("east", "west")}


@dataclass(frozen=True)
class GridWorldSpec:
    """Grid layout; cells are (row, col) with row 0 at the top, states row-major."""

    height: int = 3
    width: int = 4
    walls: frozenset = frozenset({(1, 1)})
    terminals: dict = field(default_factory=lambda: {(0, 3): 1.0, (1, 3): -1.0})
    step_penalty: float = -0.04
    start: tuple = (2, 0)

    def __post_init__(self):
        if set(self.terminals) & set(self.walls):
            raise ValueError("terminal cells cannot be walls")
        if self.start in self.terminals or self.start in self.walls:
            raise ValueError("start cell must be an open non-terminal cell")

    @property
    def cells(self) -> list:
        return [(r, c) for r in range(self.height) for c in range(self.width)]

    def state(self, cell) -> int:
        return cell[0] * self.width + cell[1]

    @property
    def terminal_states(self) -> list:
        return sorted(self.state(c) for c in self.terminals)

    @property
    def wall_states(self) -> list:
        return sorted(self.state(c) for c in self.walls)

    @property
    def open_states(self) -> list:
        """Non-wall, non-terminal states."""
        closed = set(self.terminal_states) | set(self.wall_states)
        return [s for s in range(self.height * self.width) if s not in closed]


def _grid_target(spec: GridWorldSpec, cell, direction):
    dr, dc = _MOVES[direction]
    nxt = (cell[0] + dr, cell[1] + dc)
    if not (0 <= nxt[0] < spec.height and 0 <= nxt[1] < spec.width) or nxt in spec.walls:
        return cell
    return nxt


def block_world_kernel(alpha: float, spec: GridWorldSpec = GridWorldSpec()) -> np.ndarray:
    """Intended move with probability alpha, each orthogonal move with (1-alpha)/2.

    Bumping into a wall or the boundary leaves the agent in place. Terminal and
    wall cells are absorbing.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"slip parameter alpha must lie in [0, 1], got {alpha}")
    S = spec.height * spec.width
    kernel = np.zeros((len(GRID_ACTIONS), S, S))
    for cell in spec.cells:
        s = spec.state(cell)
        for a, name in enumerate(GRID_ACTIONS):
            if cell in spec.terminals or cell in spec.walls:
                kernel[a, s, s] = 1.0
                continue
            side = (1.0 - alpha) / 2
            for direction, p in ((name, alpha), (_ORTHOGONAL[name][0], side), (_ORTHOGONAL[name][1], side)):
                kernel[a, s, spec.state(_grid_target(spec, cell, direction))] += p
    return kernel


def block_world_mdp(spec: GridWorldSpec = GridWorldSpec(), discount: float = GAMMA) -> TabularMdp:
    """Entering a terminal pays its reward; any other move from an open cell pays the step penalty."""
    S = spec.height * spec.width
    reward = np.zeros((S, len(GRID_ACTIONS), S))
    open_ = spec.open_states
    for s in open_:
        reward[s, :, :] = spec.step_penalty
        for cell, value in spec.terminals.items():
            reward[s, :, spec.state(cell)] = value
    return TabularMdp(reward, discount, strict_rewards=False)


def block_world_env(alpha: float, spec: GridWorldSpec = GridWorldSpec(), discount: float = GAMMA) -> EnvironmentSpec:
    kernel = block_world_kernel(alpha, spec)
    return EnvironmentSpec(
        f"block_world(alpha={alpha:g})",
        block_world_mdp(spec, discount),
        KernelEnsemble(kernel[None], np.array([1.0])),
        notes="3x4 grid, row-major from the top-left cell",
        action_names=GRID_ACTIONS,
    )


def block_world_ensemble(
    alphas=(0.8, 0.2), prior=None, spec: GridWorldSpec = GridWorldSpec(), discount: float = GAMMA
) -> EnvironmentSpec:
    prior = np.full(len(alphas), 1.0 / len(alphas)) if prior is None else np.asarray(prior, dtype=float)
    kernels = np.array([block_world_kernel(a, spec) for a in alphas])
    return EnvironmentSpec(
        "block_world_ensemble",
        block_world_mdp(spec, discount),
        KernelEnsemble(kernels, prior),
        notes="one kernel per slip parameter " + ", ".join(f"{a:g}" for a in alphas),
        action_names=GRID_ACTIONS,
    )


# -- permuted family ----------------------------------------------------------------


def permutation_matrix(perm) -> np.ndarray:
    """``P[perm[s], s] = 1``: true state ``s`` is relabelled ``perm[s]``."""
    perm = np.asarray(perm)
    P = np.zeros((len(perm), len(perm)))
    P[perm, np.arange(len(perm))] = 1.0
    return P


def conjugate_kernel(kernel, perm) -> np.ndarray:
    """``P X^a P^T`` for every action: the kernel seen through the relabelling."""
    P = permutation_matrix(perm)
    return np.einsum("ij,ajk,lk->ail", P, np.asarray(kernel, dtype=float), P)


def compose(outer, inner) -> tuple:
    """Permutation ``s -> outer[inner[s]]``."""
    return tuple(int(outer[i]) for i in inner)


def state_permutations(num_states: int) -> list[tuple]:
    """All permutations in lexicographic order; the identity comes first."""
    return list(itertools.permutations(range(num_states)))


def permutation_family_env() -> EnvironmentSpec:
    perms = state_permutations(3)
    kernels = np.array([conjugate_kernel(PERM_BASE, p) for p in perms])
    mdp = TabularMdp.from_action_reward(PERM_REWARD, GAMMA, strict_rewards=False)
    return EnvironmentSpec(
        "permutation_family",
        mdp,
        KernelEnsemble(kernels, np.full(len(perms), 1.0 / len(perms))),
        notes="kernel i is the base kernel conjugated by permutation " + "; ".join(map(str, perms)),
        action_names=CYCLE_ACTIONS,
    )


ENVIRONMENTS = {
    "two_state": two_state_env,
    "three_state_cycle": three_state_cycle_env,
    "block_world": lambda: block_world_env(0.8),
    "block_world_ensemble": block_world_ensemble,
    "permutation_family": permutation_family_env,
}
