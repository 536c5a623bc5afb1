"""Grid-based FPS-like simulator: maps, monsters, objects, shaped rewards.

The world is a rectangular grid of wall/floor cells. The agent occupies a
cell, faces one of the four cardinal directions, and sees a first-person
column-raycast rendering. Dynamics are discrete-tick and fully determined
by (map, seed, action sequence).
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace
from enum import IntEnum

import numpy as np

AGENT_MAX_HEALTH = 100
MONSTER_DAMAGE = 10
MONSTER_ATTACK_COOLDOWN = 3
MONSTER_CHASE_BIAS = 0.6
DEFAULT_STEP_LIMIT = 2100

# (row, col) deltas for headings N, E, S, W
DELTAS = ((-1, 0), (0, 1), (1, 0), (0, -1))

# render palette, RGB in [0, 1]
COLOR_WALL = np.array([0.50, 0.50, 0.50], dtype=np.float32)
COLOR_FLOOR = np.array([0.20, 0.16, 0.12], dtype=np.float32)
COLOR_CEILING = np.array([0.10, 0.10, 0.16], dtype=np.float32)
COLOR_MONSTER = np.array([0.85, 0.10, 0.10], dtype=np.float32)
COLOR_OBJECT = np.array([0.10, 0.80, 0.25], dtype=np.float32)


class EnvAction(IntEnum):
    FIRE = 0
    MOVE_FORWARD = 1
    TURN_RIGHT = 2
    TURN_LEFT = 3
    MOVE_BACKWARD = 4


ACTION_AGENT_ACTIONS = (
    EnvAction.FIRE,
    EnvAction.MOVE_FORWARD,
    EnvAction.TURN_RIGHT,
    EnvAction.TURN_LEFT,
    EnvAction.MOVE_BACKWARD,
)
NAVIGATION_AGENT_ACTIONS = (
    EnvAction.MOVE_FORWARD,
    EnvAction.TURN_RIGHT,
    EnvAction.TURN_LEFT,
)

EVENT_NAMES = ("kill", "death", "missed_shot", "lost_health", "object_gathered")


class MapError(ValueError):
    """Raised when map text violates the format or an invariant."""


class TerminalStateError(RuntimeError):
    """Raised when step() is called on a terminal state."""


@dataclass(frozen=True)
class RewardProfile:
    """Per-event shaped reward weights for one agent role."""

    kill: float = 0.0
    death: float = 0.0
    missed_shot: float = 0.0
    lost_health: float = 0.0
    object_gathered: float = 0.0

    def weight(self, event: str) -> float:
        return getattr(self, event)


ACTION_PROFILE = RewardProfile(
    kill=1.0, death=-1.0, missed_shot=-0.02, lost_health=-0.06, object_gathered=0.3
)
NAVIGATION_PROFILE = RewardProfile(
    kill=0.0, death=-1.0, missed_shot=0.0, lost_health=-0.1, object_gathered=0.5
)


def reward_from_events(events: Counter, profile: RewardProfile) -> float:
    return float(sum(count * profile.weight(name) for name, count in events.items()))


@dataclass(frozen=True)
class MapSpec:
    width: int
    height: int
    walls: np.ndarray  # bool (height, width), True = wall
    agent_spawns: tuple
    monster_spawns: tuple
    object_spawns: tuple
    episode_step_limit: int = DEFAULT_STEP_LIMIT

    def validate(self):
        if self.walls.shape != (self.height, self.width):
            raise MapError("grid shape does not match declared dimensions")
        border = np.concatenate(
            [self.walls[0], self.walls[-1], self.walls[:, 0], self.walls[:, -1]]
        )
        if not border.all():
            raise MapError("unwalled border")
        for group in (self.agent_spawns, self.monster_spawns, self.object_spawns):
            for (r, c) in group:
                if self.walls[r, c]:
                    raise MapError(f"spawn at ({r},{c}) is not a floor cell")
        if not self.agent_spawns:
            raise MapError("no agent spawn")
        if self.episode_step_limit <= 0:
            raise MapError("episode_step_limit must be positive")
        return self


def load_map(text: str, episode_step_limit: int = DEFAULT_STEP_LIMIT) -> MapSpec:
    """Parse the character-grid map format.

    '#'=wall, '.'=floor, 'S'=agent spawn, 'M'=monster spawn,
    'O'=object spawn (spawn characters imply floor).
    """
    lines = text.splitlines()
    while lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise MapError("empty map")
    width = len(lines[0])
    for i, line in enumerate(lines):
        if len(line) != width:
            raise MapError(f"non-rectangular grid at line {i + 1} (length {len(line)}, expected {width})")
    height = len(lines)
    walls = np.zeros((height, width), dtype=bool)
    agent_spawns, monster_spawns, object_spawns = [], [], []
    for r, line in enumerate(lines):
        for c, ch in enumerate(line):
            if ch == "#":
                walls[r, c] = True
            elif ch == ".":
                pass
            elif ch == "S":
                agent_spawns.append((r, c))
            elif ch == "M":
                monster_spawns.append((r, c))
            elif ch == "O":
                object_spawns.append((r, c))
            else:
                raise MapError(f"unknown character {ch!r} at line {r + 1}, column {c + 1}")
    border_cells = (
        [(0, c) for c in range(width)]
        + [(height - 1, c) for c in range(width)]
        + [(r, 0) for r in range(height)]
        + [(r, width - 1) for r in range(height)]
    )
    for (r, c) in border_cells:
        if not walls[r, c]:
            raise MapError(f"unwalled border at line {r + 1}, column {c + 1}")
    if not agent_spawns:
        raise MapError("no agent spawn ('S') in map")
    spec = MapSpec(
        width=width,
        height=height,
        walls=walls,
        agent_spawns=tuple(agent_spawns),
        monster_spawns=tuple(monster_spawns),
        object_spawns=tuple(object_spawns),
        episode_step_limit=episode_step_limit,
    )
    return spec.validate()


@dataclass(frozen=True)
class Monster:
    cell: tuple
    health: int = 1
    cooldown: int = 0


@dataclass(frozen=True)
class WorldState:
    map: MapSpec
    agent_cell: tuple
    heading: int  # 0=N 1=E 2=S 3=W
    health: int
    monsters: tuple
    objects: frozenset
    tick: int
    rng_state: dict
    obs_dims: tuple = (84, 84)

    @property
    def terminal(self) -> bool:
        return self.health <= 0 or self.tick >= self.map.episode_step_limit


@dataclass(frozen=True)
class StepOutcome:
    observation: np.ndarray
    reward: float
    done: bool
    events: Counter


def reset(map_spec: MapSpec, seed: int, obs_dims: tuple = (84, 84)):
    """Seed-deterministic initial state and first observation."""
    rng = np.random.default_rng(seed)
    spawn_idx = int(rng.integers(len(map_spec.agent_spawns)))
    heading = int(rng.integers(4))
    state = WorldState(
        map=map_spec,
        agent_cell=map_spec.agent_spawns[spawn_idx],
        heading=heading,
        health=AGENT_MAX_HEALTH,
        monsters=tuple(Monster(cell=c) for c in map_spec.monster_spawns),
        objects=frozenset(map_spec.object_spawns),
        tick=0,
        rng_state=rng.bit_generator.state,
        obs_dims=obs_dims,
    )
    return state, render(state, obs_dims)


def _ray_cells(walls, start, heading):
    """Floor cells along the facing ray, in order, up to the first wall."""
    dr, dc = DELTAS[heading]
    r, c = start
    cells = []
    while True:
        r, c = r + dr, c + dc
        if walls[r, c]:
            return cells
        cells.append((r, c))


def step(state: WorldState, action: EnvAction, profile: RewardProfile):
    """Advance one tick; returns (StepOutcome, new WorldState)."""
    events, new_state = apply_dynamics(state, action)
    outcome = StepOutcome(
        observation=render(new_state, state.obs_dims),
        reward=reward_from_events(events, profile),
        done=new_state.terminal,
        events=events,
    )
    return outcome, new_state


def apply_dynamics(state: WorldState, action: EnvAction):
    """The transition function alone: (events, new WorldState), no render."""
    if state.terminal:
        raise TerminalStateError("step() called on a terminal state")
    walls = state.map.walls
    events: Counter = Counter()
    rng = np.random.default_rng()
    rng.bit_generator.state = state.rng_state

    agent_cell = state.agent_cell
    heading = state.heading
    health = state.health
    monsters = list(state.monsters)
    objects = set(state.objects)

    action = EnvAction(action)
    if action in (EnvAction.MOVE_FORWARD, EnvAction.MOVE_BACKWARD):
        sign = 1 if action == EnvAction.MOVE_FORWARD else -1
        dr, dc = DELTAS[heading]
        dest = (agent_cell[0] + sign * dr, agent_cell[1] + sign * dc)
        occupied = {m.cell for m in monsters if m.health > 0}
        if not walls[dest] and dest not in occupied:
            agent_cell = dest
    elif action == EnvAction.TURN_RIGHT:
        heading = (heading + 1) % 4
    elif action == EnvAction.TURN_LEFT:
        heading = (heading - 1) % 4
    elif action == EnvAction.FIRE:
        hit = None
        alive_cells = {m.cell: i for i, m in enumerate(monsters) if m.health > 0}
        for cell in _ray_cells(walls, agent_cell, heading):
            if cell in alive_cells:
                hit = alive_cells[cell]
                break
        if hit is None:
            events["missed_shot"] += 1
        else:
            monsters[hit] = replace(monsters[hit], health=0)
            events["kill"] += 1

    if agent_cell in objects:
        objects.discard(agent_cell)
        events["object_gathered"] += 1

    # monsters: biased random walk toward the agent, melee with cooldown
    occupied = {m.cell for m in monsters if m.health > 0}
    for i, m in enumerate(monsters):
        if m.health <= 0:
            continue
        cell = m.cell
        dr_a = agent_cell[0] - cell[0]
        dc_a = agent_cell[1] - cell[1]
        if abs(dr_a) + abs(dc_a) > 1:  # not adjacent: move
            if rng.random() < MONSTER_CHASE_BIAS:
                prefs = []
                if abs(dr_a) >= abs(dc_a) and dr_a != 0:
                    prefs.append((int(np.sign(dr_a)), 0))
                if dc_a != 0:
                    prefs.append((0, int(np.sign(dc_a))))
                if abs(dr_a) < abs(dc_a) and dr_a != 0:
                    prefs.append((int(np.sign(dr_a)), 0))
            else:
                prefs = [DELTAS[int(rng.integers(4))]]
            for (dr, dc) in prefs:
                dest = (cell[0] + dr, cell[1] + dc)
                if not walls[dest] and dest not in occupied and dest != agent_cell:
                    occupied.discard(cell)
                    occupied.add(dest)
                    cell = dest
                    break
        cooldown = m.cooldown
        dr_a = agent_cell[0] - cell[0]
        dc_a = agent_cell[1] - cell[1]
        if abs(dr_a) + abs(dc_a) == 1:
            if cooldown == 0:
                health -= MONSTER_DAMAGE
                events["lost_health"] += 1
                cooldown = MONSTER_ATTACK_COOLDOWN
            else:
                cooldown -= 1
        else:
            cooldown = max(0, cooldown - 1)
        monsters[i] = Monster(cell=cell, health=m.health, cooldown=cooldown)

    tick = state.tick + 1
    if health <= 0:
        health = 0
        events["death"] += 1

    new_state = WorldState(
        map=state.map,
        agent_cell=agent_cell,
        heading=heading,
        health=health,
        monsters=tuple(monsters),
        objects=frozenset(objects),
        tick=tick,
        rng_state=rng.bit_generator.state,
        obs_dims=state.obs_dims,
    )
    return events, new_state


_HIT_PALETTE = np.stack([COLOR_FLOOR, COLOR_WALL, COLOR_MONSTER, COLOR_OBJECT])
_HIT_HEIGHT = np.array([0.0, 1.0, 0.7, 0.4])


def render(state: WorldState, dims: tuple) -> np.ndarray:
    """First-person column raycast, (h, w, 3) float32 in [0, 1].

    One ray per pixel column across a 90 degree field of view; the first
    wall/monster/object cell hit paints the column, height inversely
    proportional to perpendicular distance, shaded with distance. All
    rays advance in lockstep (vectorized DDA).
    """
    h_pix, w_pix = int(dims[0]), int(dims[1])
    if h_pix <= 0 or w_pix <= 0:
        raise ValueError("render dims must be positive")

    codes = state.map.walls.astype(np.uint8)  # 1 = wall
    for m in state.monsters:
        if m.health > 0:
            codes[m.cell] = 2
    for cell in state.objects:
        codes[cell] = 3

    fr, fc = DELTAS[state.heading]
    rr, rc = DELTAS[(state.heading + 1) % 4]
    pos_r = state.agent_cell[0] + 0.5
    pos_c = state.agent_cell[1] + 0.5

    lateral = (np.arange(w_pix) + 0.5) / w_pix * 2.0 - 1.0  # [-1, 1] across the view
    dir_r = fr + lateral * rr
    dir_c = fc + lateral * rc
    norm = np.hypot(dir_r, dir_c)
    dir_r /= norm
    dir_c /= norm
    cos_fwd = dir_r * fr + dir_c * fc

    with np.errstate(divide="ignore"):
        t_delta_r = np.abs(1.0 / dir_r)
        t_delta_c = np.abs(1.0 / dir_c)
    cell_r = np.full(w_pix, state.agent_cell[0], dtype=np.int64)
    cell_c = np.full(w_pix, state.agent_cell[1], dtype=np.int64)
    step_r = np.where(dir_r > 0, 1, -1)
    step_c = np.where(dir_c > 0, 1, -1)
    t_max_r = np.where(
        dir_r > 0, (cell_r + 1 - pos_r) * t_delta_r,
        np.where(dir_r < 0, (pos_r - cell_r) * t_delta_r, np.inf),
    )
    t_max_c = np.where(
        dir_c > 0, (cell_c + 1 - pos_c) * t_delta_c,
        np.where(dir_c < 0, (pos_c - cell_c) * t_delta_c, np.inf),
    )

    dist = np.zeros(w_pix)
    hit = np.zeros(w_pix, dtype=np.uint8)
    active = np.ones(w_pix, dtype=bool)
    while active.any():
        go_r = active & (t_max_r < t_max_c)
        go_c = active & ~go_r
        dist[go_r] = t_max_r[go_r]
        dist[go_c] = t_max_c[go_c]
        t_max_r[go_r] += t_delta_r[go_r]
        cell_r[go_r] += step_r[go_r]
        t_max_c[go_c] += t_delta_c[go_c]
        cell_c[go_c] += step_c[go_c]
        code = codes[cell_r, cell_c]
        found = active & (code > 0)
        hit[found] = code[found]
        active &= ~found

    perp = np.maximum(dist * cos_fwd, 1e-6)
    shade = 1.0 / (1.0 + 0.25 * np.maximum(perp - 1.0, 0.0))
    half = h_pix * _HIT_HEIGHT[hit] / (2.0 * perp)
    mid = h_pix / 2.0
    y0 = np.floor(mid - half)
    y1 = np.ceil(mid + half)
    colors = (_HIT_PALETTE[hit] * shade[:, None]).astype(np.float32)

    img = np.empty((h_pix, w_pix, 3), dtype=np.float32)
    img[: int(mid)] = COLOR_CEILING
    img[int(mid):] = COLOR_FLOOR
    rows = np.arange(h_pix)[:, None]
    mask = (rows >= y0[None, :]) & (rows < y1[None, :])
    return np.where(mask[:, :, None], colors[None, :, :], img)


def ascii_render(state: WorldState) -> str:
    """Top-down ASCII map: agent as heading arrow, M monster, o object."""
    arrows = "^>v<"
    rows = []
    for r in range(state.map.height):
        row = []
        for c in range(state.map.width):
            cell = (r, c)
            if cell == state.agent_cell:
                row.append(arrows[state.heading])
            elif any(m.cell == cell and m.health > 0 for m in state.monsters):
                row.append("M")
            elif cell in state.objects:
                row.append("o")
            elif state.map.walls[r, c]:
                row.append("#")
            else:
                row.append(".")
        rows.append("".join(row))
    return "\n".join(rows)


class MiniDoomEnv:
    """Stateful convenience wrapper threading WorldState through steps.

    Rendering is memoized on what the camera can depend on (agent pose,
    alive monsters, remaining objects); cached frames are shared and
    must be treated as read-only by callers.
    """

    RENDER_CACHE_LIMIT = 8192

    def __init__(self, map_spec: MapSpec, profile: RewardProfile, obs_dims=(84, 84)):
        self.map_spec = map_spec
        self.profile = profile
        self.obs_dims = tuple(obs_dims)
        self.state = None
        self._render_cache: dict = {}

    def _render(self, state: WorldState) -> np.ndarray:
        key = (
            state.agent_cell,
            state.heading,
            tuple(sorted(m.cell for m in state.monsters if m.health > 0)),
            state.objects,
        )
        obs = self._render_cache.get(key)
        if obs is None:
            obs = render(state, self.obs_dims)
            if len(self._render_cache) >= self.RENDER_CACHE_LIMIT:
                self._render_cache.clear()
            self._render_cache[key] = obs
        return obs

    def reset(self, seed: int) -> np.ndarray:
        self.state, _ = reset(self.map_spec, seed, self.obs_dims)
        return self._render(self.state)

    def step(self, action: EnvAction) -> StepOutcome:
        events, self.state = apply_dynamics(self.state, action)
        return StepOutcome(
            observation=self._render(self.state),
            reward=reward_from_events(events, self.profile),
            done=self.state.terminal,
            events=events,
        )
