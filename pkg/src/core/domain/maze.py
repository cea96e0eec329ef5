"""
Maze gridworld with noisy continuous observations.

The agent moves between floor cells with four compass moves and an "eat"
action. Moving into a wall leaves it in place; eating anywhere but the goal
is an idle step. Observations are the (row, col) centre of the current cell
plus isotropic Gaussian noise, so the agent never sees its cell index.

Maze documents are plain text: 'W' wall, '.' floor, 'S' start, 'G' goal.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from functools import cached_property
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Tuple, Union
import logging

import numpy as np

from src.exceptions import (
    ConfigurationError, InvalidInputError, MazeParseError, StateError,
    index_out_of_range_error,
)

logger = logging.getLogger(__name__)

Cell = Tuple[int, int]


class Action(IntEnum):
    """The five actions. UP decreases the row index."""
    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3
    EAT = 4


N_ACTIONS = len(Action)

MOVES: Dict[Action, Cell] = {
    Action.UP: (-1, 0),
    Action.DOWN: (1, 0),
    Action.LEFT: (0, -1),
    Action.RIGHT: (0, 1),
    Action.EAT: (0, 0),
}

WALL, FLOOR, START, GOAL = 'W', '.', 'S', 'G'


@dataclass(frozen=True, eq=False)
class MazeSpec:
    """
    Wall grid plus start and goal cells.

    Attributes:
        walls: Boolean (rows, cols) array, True where there is a wall
        start: Start cell (row, col)
        goal: Goal cell (row, col)
        name: Label used in logs and reports
    """

    walls: np.ndarray
    start: Cell
    goal: Cell
    name: str = "maze"

    def __post_init__(self):
        walls = np.asarray(self.walls, dtype=bool)
        if walls.ndim != 2 or walls.shape[0] < 3 or walls.shape[1] < 3:
            raise InvalidInputError("maze grid must be at least 3x3", input_value=walls.shape)
        border = np.concatenate([walls[0], walls[-1], walls[:, 0], walls[:, -1]])
        if not border.all():
            raise InvalidInputError("maze border must be wall", maze=self.name)
        object.__setattr__(self, 'walls', walls)
        object.__setattr__(self, 'start', (int(self.start[0]), int(self.start[1])))
        object.__setattr__(self, 'goal', (int(self.goal[0]), int(self.goal[1])))
        for label, cell in (('start', self.start), ('goal', self.goal)):
            if not self.is_floor(cell):
                raise InvalidInputError(f"{label} must be a floor cell", input_value=cell)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.walls.shape

    def is_floor(self, cell: Cell) -> bool:
        r, c = cell
        rows, cols = self.walls.shape
        return 0 <= r < rows and 0 <= c < cols and not self.walls[r, c]

    @cached_property
    def floor_cells(self) -> List[Cell]:
        """Floor cells in row-major order; a cell's position here is its index."""
        return [(int(r), int(c)) for r, c in zip(*np.nonzero(~self.walls))]

    @cached_property
    def _index(self) -> Dict[Cell, int]:
        return {cell: i for i, cell in enumerate(self.floor_cells)}

    @property
    def n_cells(self) -> int:
        return len(self.floor_cells)

    def cell_index(self, cell: Cell) -> int:
        try:
            return self._index[(int(cell[0]), int(cell[1]))]
        except KeyError:
            raise InvalidInputError("not a floor cell", input_value=cell)

    def cell_centers(self) -> np.ndarray:
        """(F, 2) float array of (row, col) centres, indexed like floor_cells."""
        return np.asarray(self.floor_cells, dtype=float).reshape(-1, 2)

    def next_cell(self, cell: Cell, action: int) -> Cell:
        dr, dc = MOVES[Action(action)]
        target = (cell[0] + dr, cell[1] + dc)
        return target if self.is_floor(target) else cell

    def render(self, marks: Optional[Dict[Cell, str]] = None) -> str:
        """Text picture of the maze; `marks` overrides the character of given cells."""
        marks = marks or {}
        lines = []
        for r in range(self.walls.shape[0]):
            row = []
            for c in range(self.walls.shape[1]):
                if (r, c) in marks:
                    row.append(marks[(r, c)])
                elif self.walls[r, c]:
                    row.append(WALL)
                elif (r, c) == self.start:
                    row.append(START)
                elif (r, c) == self.goal:
                    row.append(GOAL)
                else:
                    row.append(FLOOR)
            lines.append(''.join(row))
        return '\n'.join(lines)


@dataclass
class EnvConfig:
    """Observation noise, rewards and episode length."""

    # Standard deviation of the observation noise, in cell units
    obs_noise: float = 0.1

    # Reward for eating at the goal
    reward_goal: float = 1.0

    # Reward for every other step
    reward_step: float = 0.0

    # Episodes are cut after this many steps
    max_steps: int = 200

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not np.isfinite(self.obs_noise) or self.obs_noise < 0:
            raise ConfigurationError("obs_noise must be non-negative",
                                     parameter='obs_noise', value=self.obs_noise)
        for name in ('reward_goal', 'reward_step'):
            if not np.isfinite(getattr(self, name)):
                raise ConfigurationError(f"{name} must be finite",
                                         parameter=name, value=getattr(self, name))
        if self.max_steps < 1:
            raise ConfigurationError("max_steps must be >= 1",
                                     parameter='max_steps', value=self.max_steps)


@dataclass(frozen=True)
class EnvState:
    """Position and episode bookkeeping."""
    position: Cell
    steps: int = 0
    done: bool = False
    goal_reached: bool = False


class StepResult(NamedTuple):
    state: EnvState
    observation: np.ndarray
    reward: float


def observe(cell: Cell, noise: float, rng: np.random.Generator) -> np.ndarray:
    """Cell centre plus N(0, noise^2 I)."""
    return np.asarray(cell, dtype=float) + noise * rng.standard_normal(2)


def step(spec: MazeSpec, state: EnvState, action: int, rng: np.random.Generator,
         cfg: Optional[EnvConfig] = None) -> StepResult:
    """
    Advance one step.

    Raises:
        StateError: If the episode is already over
        InvalidInputError: If the action is not one of the five actions
    """
    cfg = cfg or EnvConfig()
    if state.done:
        raise StateError("cannot step a finished episode", current_state="done",
                         expected_state="running")
    if not 0 <= int(action) < N_ACTIONS:
        raise index_out_of_range_error("action", int(action), N_ACTIONS)
    action = Action(int(action))

    steps = state.steps + 1
    if action is Action.EAT and state.position == spec.goal:
        new_state = EnvState(state.position, steps, done=True, goal_reached=True)
        reward = cfg.reward_goal
    else:
        position = spec.next_cell(state.position, action)
        new_state = EnvState(position, steps, done=steps >= cfg.max_steps)
        reward = cfg.reward_step
    return StepResult(new_state, observe(new_state.position, cfg.obs_noise, rng), float(reward))


class MazeEnvironment:
    """A maze bound to its config and a seeded random stream for observation noise."""

    def __init__(self, spec: MazeSpec, cfg: Optional[EnvConfig] = None,
                 rng: Union[None, int, np.random.Generator] = None):
        self.spec = spec
        self.cfg = cfg or EnvConfig()
        self.rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)

    def reset(self) -> Tuple[EnvState, np.ndarray]:
        state = EnvState(self.spec.start)
        return state, observe(state.position, self.cfg.obs_noise, self.rng)

    def step(self, state: EnvState, action: int) -> StepResult:
        return step(self.spec, state, action, self.rng, self.cfg)


def true_transition_matrices(spec: MazeSpec) -> np.ndarray:
    """
    Deterministic dynamics as 0/1 matrices of shape (A, F, F), laid out
    [action][next, current] like the learned transition tensor. EAT is the
    identity (eating at the goal ends the episode instead of moving).
    """
    n = spec.n_cells
    out = np.zeros((N_ACTIONS, n, n))
    for j, cell in enumerate(spec.floor_cells):
        for action in Action:
            out[action, spec.cell_index(spec.next_cell(cell, action)), j] = 1.0
    return out


def parse_maze(text: str, source: Optional[str] = None, name: Optional[str] = None) -> MazeSpec:
    """
    Parse a maze document.

    Raises:
        MazeParseError: Ragged rows, unknown characters, missing or duplicate
            S/G, or a border that is not all wall
    """
    lines = [line.rstrip('\r') for line in text.split('\n')]
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise MazeParseError("maze document is empty", source=source)

    width = len(lines[0])
    starts: List[Cell] = []
    goals: List[Cell] = []
    walls = np.zeros((len(lines), width), dtype=bool)
    for r, line in enumerate(lines):
        if len(line) != width:
            raise MazeParseError(f"ragged row: expected {width} characters, got {len(line)}",
                                 source=source, line=r + 1)
        for c, ch in enumerate(line):
            if ch == WALL:
                walls[r, c] = True
            elif ch == START:
                starts.append((r, c))
            elif ch == GOAL:
                goals.append((r, c))
            elif ch != FLOOR:
                raise MazeParseError(f"unknown character {ch!r}", source=source, line=r + 1)

    for label, found in (('S', starts), ('G', goals)):
        if len(found) != 1:
            raise MazeParseError(f"expected exactly one '{label}', found {len(found)}",
                                 source=source)
    if walls.shape[0] < 3 or width < 3:
        raise MazeParseError("maze must be at least 3x3", source=source)
    border = np.concatenate([walls[0], walls[-1], walls[:, 0], walls[:, -1]])
    if not border.all():
        raise MazeParseError("maze border must be wall", source=source)

    spec = MazeSpec(walls, starts[0], goals[0], name=name or source or "maze")
    logger.debug("parsed maze %s: %d floor cells", spec.name, spec.n_cells)
    return spec


def load_maze(path: Union[str, Path]) -> MazeSpec:
    """Read and parse a maze file (UTF-8)."""
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as e:
        raise MazeParseError(f"cannot read maze file: {e.strerror or e}", source=str(path))
    return parse_maze(text, source=str(path), name=path.stem)
