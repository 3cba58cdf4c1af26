"""A deterministic grid arena.

The agent stands on a cell of a ``grid_width`` x ``grid_height`` arena facing
one of the four compass directions. Cells outside the arena are walls. The
arena holds monsters, which block movement and hurt the agent when they are
4-adjacent to it, and items, which restore one point of health when picked
up. Every function here is pure: :func:`step` returns a new state.

The perception and action orders below are a wire-format contract: visual
tokens are computed from vectors laid out in exactly this order.
"""
import dataclasses
from dataclasses import dataclass

from .errors import ConfigError, InvalidAction
from .seeding import PLACEMENT_STREAM, keyed_generator

#: Action primitives, in token order
ACTION_NAMES = ('MOVE', 'TURN_L', 'TURN_R', 'ATTACK', 'PICKUP', 'NOOP')
MOVE, TURN_L, TURN_R, ATTACK, PICKUP, NOOP = range(6)

#: Perception primitives, in token order
PERCEPT_NAMES = (
    'FRONT_CLEAR', 'MONSTER_IN_SIGHT', 'MONSTER_AHEAD', 'ITEM_HERE',
    'LOW_HEALTH', 'ON_EDGE')
(FRONT_CLEAR, MONSTER_IN_SIGHT, MONSTER_AHEAD, ITEM_HERE, LOW_HEALTH,
 ON_EDGE) = range(6)

#: Facing directions, clockwise; y grows towards the south
FACINGS = ('N', 'E', 'S', 'W')
_DELTAS = ((0, -1), (1, 0), (0, 1), (-1, 0))


@dataclass(frozen=True)
class Monster:
    "A monster cell"
    x: int
    y: int
    alive: bool = True


@dataclass(frozen=True)
class Item:
    "An item cell"
    x: int
    y: int
    present: bool = True


@dataclass(frozen=True)
class WorldState:
    "The full state of one episode"
    config: object
    x: int
    y: int
    facing: int
    monsters: tuple = ()
    items: tuple = ()
    health: int = 0
    step_count: int = 0

    def to_dict(self):
        "Returns a JSON-friendly dictionary of the state (config excluded)"
        return {
            'agent': [self.x, self.y, FACINGS[self.facing]],
            'monsters': [[mon.x, mon.y, mon.alive] for mon in self.monsters],
            'items': [[item.x, item.y, item.present] for item in self.items],
            'health': self.health,
            'step_count': self.step_count,
        }

    def in_bounds(self, x, y):
        "Returns True if (x, y) is an arena cell rather than a wall"
        return (0 <= x < self.config.grid_width
                and 0 <= y < self.config.grid_height)

    def front(self):
        "Returns the cell the agent is facing"
        dx, dy = _DELTAS[self.facing]
        return self.x + dx, self.y + dy

    def live_monster_at(self, x, y):
        "Returns the index of a live monster at (x, y), or None"
        for index, monster in enumerate(self.monsters):
            if monster.alive and monster.x == x and monster.y == y:
                return index
        return None

    def item_at(self, x, y):
        "Returns the index of a present item at (x, y), or None"
        for index, item in enumerate(self.items):
            if item.present and item.x == x and item.y == y:
                return index
        return None


def scripted_state(config, x, y, facing='N', monsters=(), items=(),
                   health=None, step_count=0):
    """Builds a hand-placed state. Monsters and items are given as (x, y)
    pairs; facing is one of N/E/S/W. Health defaults to health_max."""
    if health is None:
        health = config.health_max
    if isinstance(facing, str):
        facing = FACINGS.index(facing)
    state = WorldState(
        config=config, x=x, y=y, facing=facing,
        monsters=tuple(Monster(*cell) for cell in monsters),
        items=tuple(Item(*cell) for cell in items),
        health=health, step_count=step_count)
    if not state.in_bounds(x, y):
        raise ConfigError(f"agent position ({x}, {y}) is out of bounds")
    if not 0 <= health <= config.health_max:
        raise ConfigError(f"health {health} is outside [0, health_max]")
    return state


def init(config, episode_seed):
    """Places the agent, monsters and items for one episode. Each entity is
    drawn from its own generator keyed by (config seed, episode seed, entity
    index), choosing among the cells still free in row-major order. The
    agent's facing and starting health are drawn alongside its cell."""
    config.validate()
    needed = 1 + config.monster_count + config.item_count
    if needed > config.cell_count:
        raise ConfigError(
            f"cannot place {needed} entities on {config.cell_count} cells")
    free = [(x, y) for y in range(config.grid_height)
            for x in range(config.grid_width)]
    cells = []
    for entity in range(needed):
        rng = keyed_generator(
            PLACEMENT_STREAM, config.seed, episode_seed, entity)
        cells.append(free.pop(int(rng.integers(len(free)))))
        if entity == 0:
            facing = int(rng.integers(len(FACINGS)))
            health = int(rng.integers(1, config.health_max + 1))
    monsters = cells[1:1 + config.monster_count]
    items = cells[1 + config.monster_count:]
    return WorldState(
        config=config, x=cells[0][0], y=cells[0][1], facing=facing,
        monsters=tuple(Monster(x, y) for x, y in monsters),
        items=tuple(Item(x, y) for x, y in items),
        health=health)


def perceptions(state):
    "Returns the q perception bits of a state as a tuple of bools"
    config = state.config
    fx, fy = state.front()
    ahead = state.live_monster_at(fx, fy) is not None
    in_sight = False
    cx, cy = fx, fy
    dx, dy = _DELTAS[state.facing]
    while state.in_bounds(cx, cy):
        if state.live_monster_at(cx, cy) is not None:
            in_sight = True
            break
        cx, cy = cx + dx, cy + dy
    bits = (
        state.in_bounds(fx, fy) and not ahead,
        in_sight,
        ahead,
        state.item_at(state.x, state.y) is not None,
        state.health < config.low_health_threshold,
        (state.x in (0, config.grid_width - 1)
         or state.y in (0, config.grid_height - 1)),
    )
    return bits[:config.q]


def step(state, action):
    """Applies one action and returns the next state. After every action the
    agent loses one health point if any live monster is 4-adjacent."""
    if not 0 <= action < state.config.m:
        raise InvalidAction(
            f"action {action} is outside [0, {state.config.m})")
    changes = {}
    fx, fy = state.front()
    if action == MOVE:
        if state.in_bounds(fx, fy) and state.live_monster_at(fx, fy) is None:
            changes.update(x=fx, y=fy)
    elif action == TURN_L:
        changes['facing'] = (state.facing + 3) % 4
    elif action == TURN_R:
        changes['facing'] = (state.facing + 1) % 4
    elif action == ATTACK:
        target = state.live_monster_at(fx, fy)
        if target is not None:
            monsters = list(state.monsters)
            monsters[target] = dataclasses.replace(monsters[target],
                                                   alive=False)
            changes['monsters'] = tuple(monsters)
    elif action == PICKUP:
        found = state.item_at(state.x, state.y)
        if found is not None:
            items = list(state.items)
            items[found] = dataclasses.replace(items[found], present=False)
            changes['items'] = tuple(items)
            changes['health'] = min(state.health + 1,
                                    state.config.health_max)
    nxt = dataclasses.replace(state, **changes)
    if _monster_adjacent(nxt):
        nxt = dataclasses.replace(nxt, health=max(nxt.health - 1, 0))
    return dataclasses.replace(nxt, step_count=state.step_count + 1)


def _monster_adjacent(state):
    "Returns True if any live monster is 4-adjacent to the agent"
    for dx, dy in _DELTAS:
        if state.live_monster_at(state.x + dx, state.y + dy) is not None:
            return True
    return False
