"""Agent state, observations and the transition kernel."""

from __future__ import annotations

import copy
import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from chainact.action_core import DEFAULT_GRID, EnvAction, GridConfig, unit_steps
from chainact.errors import UnsatisfiableTask
from chainact.minegrid.tasks import TASKS, Event, TaskSpec
from chainact.minegrid.world import (
    CELL_OBJECT,
    HEADINGS,
    HOSTILE,
    ITEM_ID,
    MOB_HEALTH,
    Cell,
    Mob,
    World,
    WorldConfig,
    generate_world,
)

VIEW = 9
GUI = 5
RADIUS = VIEW // 2
MAX_HEALTH = 20
HITS_TO_BREAK = 3

WORLD_MODE = "world"
CRAFTING = "crafting"
FURNACE = "furnace"
MODES = (WORLD_MODE, CRAFTING, FURNACE)

# GUI layout (col, row)
CRAFT_INPUTS = ((0, 0), (1, 0), (0, 1), (1, 1))
FURNACE_INPUTS = ((0, 0), (0, 1))  # smelt input, fuel
OUTPUT = (3, 1)
INVENTORY_SLOTS = tuple((c, r) for r in (3, 4) for c in range(GUI))
CURSOR_START = (2, 2)

FUELS = frozenset({"oak_log", "birch_log", "oak_planks", "birch_planks", "stick"})
BLOCK_DROPS = {Cell.OakTree: "oak_log", Cell.BirchTree: "birch_log", Cell.Rock: "cobblestone"}
MOB_DROPS = {"sheep": "wool", "zombie": "rotten_flesh", "spider": "string"}


def input_slots(mode: str) -> tuple[tuple[int, int], ...]:
    return CRAFT_INPUTS if mode == CRAFTING else FURNACE_INPUTS if mode == FURNACE else ()


def craft_result(mode: str, slots: dict) -> Optional[tuple[str, int]]:
    """Recipe table lookup on the current input slots."""
    if mode == CRAFTING:
        items = sorted(slots[s][0] for s in CRAFT_INPUTS if s in slots)
        counts = {s: slots[s][1] for s in CRAFT_INPUTS if s in slots}
        if any(c != 1 for c in counts.values()):
            return None
        if items in (["oak_log"], ["birch_log"]):
            return (items[0].replace("_log", "_planks"), 4)
        if len(items) == 2 and items[0] == items[1] and items[0].endswith("_planks"):
            return ("stick", 4)
        if len(items) == 4 and len(set(items)) == 1 and items[0].endswith("_planks"):
            return ("crafting_table", 1)
        return None
    if mode == FURNACE:
        src, fuel = slots.get(FURNACE_INPUTS[0]), slots.get(FURNACE_INPUTS[1])
        if src and fuel and src[0] == "cobblestone" and fuel[0] in FUELS:
            return ("stone", 1)
    return None


@dataclass
class AgentState:
    pos: tuple[int, int]
    heading: int = 0  # index into HEADINGS, 45 degrees each
    pitch: int = 0  # -1 up, 0 level, 1 down (45 degrees each)
    health: int = MAX_HEALTH
    mode: str = WORLD_MODE
    cursor: tuple[int, int] = CURSOR_START
    hotbar_slot: int = 1
    # GUI slot -> (item, count); inventory slots persist across modes
    slots: dict = field(default_factory=dict)
    held: Optional[tuple[str, int]] = None
    streak: tuple = ((-1, -1), 0)  # (cell, consecutive hits)
    water_found: bool = False

    @property
    def heading_degrees(self) -> int:
        return self.heading * 45

    @property
    def pitch_degrees(self) -> int:
        return self.pitch * 45

    @property
    def inventory(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for s in INVENTORY_SLOTS:
            if s in self.slots:
                item, n = self.slots[s]
                out[item] = out.get(item, 0) + n
        return out


@dataclass
class EnvState:
    world: World
    agent: AgentState
    task: str
    seed: int
    tick: int = 0
    rng: np.random.Generator = field(default_factory=np.random.default_rng, repr=False)

    def copy(self) -> EnvState:
        return EnvState(self.world.copy(), copy.deepcopy(self.agent), self.task, self.seed, self.tick,
                        copy.deepcopy(self.rng))

    def fingerprint(self) -> str:
        ag = self.agent
        body = {
            "world": self.world.to_dict(),
            "agent": [list(ag.pos), ag.heading, ag.pitch, ag.health, ag.mode, list(ag.cursor),
                      ag.hotbar_slot, sorted([list(k), list(v)] for k, v in ag.slots.items()),
                      ag.held and list(ag.held), ag.water_found],
            "tick": self.tick,
        }
        return json.dumps(body, sort_keys=True)


@dataclass(frozen=True)
class Observation:
    """Egocentric symbolic observation.

    ``terrain`` and ``entities`` are ``VIEW x VIEW`` arrays indexed
    ``[row, col]``; the agent sits at the centre.  The view is north-up.
    ``gui_items``/``gui_counts`` are ``GUI x GUI`` and the output cell
    previews the recipe result.
    """

    terrain: np.ndarray
    entities: np.ndarray  # 0 none, else 1 + MOB_KINDS index
    health: int
    heading: int
    pitch: int
    mode: str
    hotbar_slot: int
    gui_items: np.ndarray
    gui_counts: np.ndarray
    cursor: tuple[int, int]
    held: int  # item id, 0 when empty
    held_count: int

    def to_dict(self) -> dict:
        return {
            "terrain": self.terrain.tolist(),
            "entities": self.entities.tolist(),
            "health": self.health,
            "heading": self.heading,
            "pitch": self.pitch,
            "mode": self.mode,
            "hotbar_slot": self.hotbar_slot,
            "gui_items": self.gui_items.tolist(),
            "gui_counts": self.gui_counts.tolist(),
            "cursor": list(self.cursor),
            "held": self.held,
            "held_count": self.held_count,
        }

    @classmethod
    def from_dict(cls, d: dict) -> Observation:
        return cls(
            terrain=np.asarray(d["terrain"], dtype=np.int64),
            entities=np.asarray(d["entities"], dtype=np.int64),
            health=int(d["health"]),
            heading=int(d["heading"]),
            pitch=int(d["pitch"]),
            mode=d["mode"],
            hotbar_slot=int(d["hotbar_slot"]),
            gui_items=np.asarray(d["gui_items"], dtype=np.int64),
            gui_counts=np.asarray(d["gui_counts"], dtype=np.int64),
            cursor=tuple(d["cursor"]),
            held=int(d["held"]),
            held_count=int(d["held_count"]),
        )

    def __eq__(self, other) -> bool:
        return isinstance(other, Observation) and self.to_dict() == other.to_dict()

    __hash__ = None


_MOB_CODE = {"sheep": 1, "zombie": 2, "spider": 3}


def observe(state: EnvState) -> Observation:
    world, ag = state.world, state.agent
    x0, y0 = ag.pos[0] - RADIUS, ag.pos[1] - RADIUS
    terrain = np.full((VIEW, VIEW), int(Cell.Void), dtype=np.int64)
    xs = slice(max(x0, 0), min(x0 + VIEW, world.width))
    ys = slice(max(y0, 0), min(y0 + VIEW, world.height))
    terrain[ys.start - y0:ys.stop - y0, xs.start - x0:xs.stop - x0] = world.cells[ys, xs]
    ents = np.zeros((VIEW, VIEW), dtype=np.int64)
    for mob in world.mobs:
        c, r = mob.pos[0] - x0, mob.pos[1] - y0
        if 0 <= c < VIEW and 0 <= r < VIEW:
            ents[r, c] = _MOB_CODE[mob.kind]
    items = np.zeros((GUI, GUI), dtype=np.int64)
    counts = np.zeros((GUI, GUI), dtype=np.int64)
    show = dict((s, v) for s, v in ag.slots.items() if s in INVENTORY_SLOTS)
    if ag.mode != WORLD_MODE:
        show.update((s, v) for s, v in ag.slots.items() if s in input_slots(ag.mode))
        res = craft_result(ag.mode, ag.slots)
        if res:
            show[OUTPUT] = res
    for (c, r), (item, n) in show.items():
        items[r, c] = ITEM_ID[item]
        counts[r, c] = n
    held = ag.held
    return Observation(terrain, ents, ag.health, ag.heading, ag.pitch, ag.mode, ag.hotbar_slot, items, counts,
                       ag.cursor, ITEM_ID[held[0]] if held else 0, held[1] if held else 0)


# -- entities in the observation frame ------------------------------------


@dataclass(frozen=True)
class VisibleEntity:
    kind: str  # "block", "mob" or "slot"
    name: str
    coord: tuple[int, int]  # (col, row) in the observation frame
    uid: object = None  # mob uid, world cell, or GUI slot
    pos: tuple[int, int] = (0, 0)  # world cell, or GUI cell for slots


def to_frame(agent_pos, world_pos) -> tuple[int, int]:
    return (world_pos[0] - agent_pos[0] + RADIUS, world_pos[1] - agent_pos[1] + RADIUS)


def visible_entities(state: EnvState, world: Optional[World] = None) -> list[VisibleEntity]:
    """Resource cells and mobs inside the view window (no line-of-sight)."""
    world = world or state.world
    ax, ay = state.agent.pos
    out = []
    for y in range(ay - RADIUS, ay + RADIUS + 1):
        for x in range(ax - RADIUS, ax + RADIUS + 1):
            cell = world.cell(x, y)
            if cell in CELL_OBJECT:
                out.append(VisibleEntity("block", CELL_OBJECT[cell], to_frame((ax, ay), (x, y)), (x, y), (x, y)))
    for mob in world.mobs:
        col, row = to_frame((ax, ay), mob.pos)
        if 0 <= col < VIEW and 0 <= row < VIEW:
            out.append(VisibleEntity("mob", mob.kind, (col, row), mob.uid, mob.pos))
    return out


def visible_slots(state: EnvState) -> list[VisibleEntity]:
    """Occupied GUI cells, output preview included, in the GUI frame."""
    ag = state.agent
    out = []
    for s in INVENTORY_SLOTS + input_slots(ag.mode):
        if s in ag.slots:
            out.append(VisibleEntity("slot", ag.slots[s][0], s, s, s))
    res = craft_result(ag.mode, ag.slots)
    if res:
        out.append(VisibleEntity("slot", res[0], OUTPUT, OUTPUT, OUTPUT))
    return out


def ground_truth(state: EnvState) -> list[VisibleEntity]:
    return visible_entities(state) if state.agent.mode == WORLD_MODE else visible_slots(state)


def faced_cell(agent: AgentState) -> tuple[int, int]:
    dx, dy = HEADINGS[agent.heading]
    return (agent.pos[0] + dx, agent.pos[1] + dy)


# -- transition kernel -----------------------------------------------------


def _add_item(ag: AgentState, item: str, n: int) -> bool:
    for s in INVENTORY_SLOTS:
        if s in ag.slots and ag.slots[s][0] == item:
            ag.slots[s] = (item, ag.slots[s][1] + n)
            return True
    for s in INVENTORY_SLOTS:
        if s not in ag.slots:
            ag.slots[s] = (item, n)
            return True
    return False


def _world_controls(s: EnvState, a: EnvAction, cfg: GridConfig, events: list[Event]) -> None:
    ag, world = s.agent, s.world
    pitch, yaw = a.camera
    ag.heading = (ag.heading + unit_steps(yaw, cfg.turn_degrees)) % 8
    ag.pitch = max(-1, min(1, ag.pitch + unit_steps(pitch, cfg.look_degrees)))

    for i in range(1, 10):
        if f"hotbar.{i}" in a.pressed:
            ag.hotbar_slot = i
            break

    vx = vy = 0
    for key, turn in (("forward", 0), ("back", 4), ("left", -2), ("right", 2)):
        if key in a.pressed:
            dx, dy = HEADINGS[(ag.heading + turn) % 8]
            vx, vy = vx + dx, vy + dy
    vx, vy = int(np.sign(vx)), int(np.sign(vy))
    if vx or vy:
        nx, ny = ag.pos[0] + vx, ag.pos[1] + vy
        if world.free(nx, ny):
            ag.pos = (nx, ny)
        else:
            events.append(Event("Illegal", "blocked"))

    target = faced_cell(ag)
    if "attack" in a.pressed:
        mob = world.mob_at(*target)
        if mob is not None:
            ag.streak = ((-1, -1), 0)
            mob.health -= 1
            events.append(Event("MobHit", mob.kind))
            if mob.health <= 0:
                world.mobs.remove(mob)
                events.append(Event("Killed", mob.kind))
                _add_item(ag, MOB_DROPS[mob.kind], 1)
        elif world.cell(*target) in BLOCK_DROPS:
            cell, n = ag.streak
            n = n + 1 if cell == target else 1
            if n >= HITS_TO_BREAK:
                drop = BLOCK_DROPS[world.cell(*target)]
                world.cells[target[1], target[0]] = Cell.Empty
                _add_item(ag, drop, 1)
                events.append(Event("StoneMined" if drop == "cobblestone" else "LogGained", drop))
                n = 0
            ag.streak = (target, n)
        else:
            ag.streak = ((-1, -1), 0)
    else:
        ag.streak = ((-1, -1), 0)

    if "use" in a.pressed and "attack" not in a.pressed:
        cell = world.cell(*target)
        if cell in (Cell.CraftingTable, Cell.Furnace):
            ag.mode = CRAFTING if cell is Cell.CraftingTable else FURNACE
            ag.cursor = CURSOR_START
            events.append(Event("GuiOpened", CELL_OBJECT[cell]))

    if not ag.water_found and world.cell(*target) is Cell.Water:
        ag.water_found = True
        events.append(Event("WaterFound", "water"))


def _close_gui(ag: AgentState) -> None:
    for s in input_slots(ag.mode):
        if s in ag.slots:
            item, n = ag.slots.pop(s)
            _add_item(ag, item, n)
    if ag.held:
        _add_item(ag, *ag.held)
        ag.held = None
    ag.mode = WORLD_MODE
    ag.cursor = CURSOR_START


def _click(ag: AgentState, events: list[Event]) -> None:
    c = ag.cursor
    inputs = input_slots(ag.mode)
    if c == OUTPUT:
        res = craft_result(ag.mode, ag.slots)
        if res is None or ag.held is not None:
            events.append(Event("Illegal", "click"))
            return
        if not _add_item(ag, *res):
            events.append(Event("Illegal", "inventory_full"))
            return
        for s in inputs:
            if s in ag.slots:
                item, n = ag.slots[s]
                if n > 1:
                    ag.slots[s] = (item, n - 1)
                else:
                    del ag.slots[s]
        events.append(Event("Crafted" if ag.mode == CRAFTING else "Smelted", res[0]))
        return
    if c not in inputs and c not in INVENTORY_SLOTS:
        events.append(Event("Illegal", "click"))
        return
    here = ag.slots.get(c)
    if ag.held is None:
        if here is None:
            events.append(Event("Illegal", "click"))
            return
        ag.held = here
        del ag.slots[c]
        return
    item, n = ag.held
    if c in inputs:
        # one item per click into an input slot
        if here is None:
            ag.slots[c] = (item, 1)
        elif here[0] == item:
            ag.slots[c] = (item, here[1] + 1)
        else:
            events.append(Event("Illegal", "click"))
            return
        ag.held = (item, n - 1) if n > 1 else None
        return
    if here is None:
        ag.slots[c] = ag.held
        ag.held = None
    elif here[0] == item:
        ag.slots[c] = (item, here[1] + n)
        ag.held = None
    else:
        ag.slots[c], ag.held = ag.held, here


def _gui_controls(s: EnvState, a: EnvAction, cfg: GridConfig, events: list[Event]) -> None:
    ag = s.agent
    if "ESC" in a.pressed or "inventory" in a.pressed:
        _close_gui(ag)
        return
    pitch, yaw = a.camera
    q = cfg.cursor_degrees_per_cell
    col = max(0, min(GUI - 1, ag.cursor[0] + unit_steps(yaw, q)))
    row = max(0, min(GUI - 1, ag.cursor[1] + unit_steps(pitch, q)))
    ag.cursor = (col, row)
    if "attack" in a.pressed:
        _click(ag, events)


def _chebyshev(p, q) -> int:
    return max(abs(p[0] - q[0]), abs(p[1] - q[1]))


def _mob_step(s: EnvState, mob: Mob, goal) -> None:
    world, ag = s.world, s.agent
    best, best_key = None, None
    for dx, dy in HEADINGS:
        nx, ny = mob.pos[0] + dx, mob.pos[1] + dy
        if not world.free(nx, ny) or (nx, ny) == ag.pos:
            continue
        key = (_chebyshev((nx, ny), goal), abs(nx - goal[0]) + abs(ny - goal[1]))
        if best_key is None or key < best_key:
            best, best_key = (nx, ny), key
    if best is not None and best_key[0] < _chebyshev(mob.pos, goal):
        mob.pos = best


def _tick_mobs(s: EnvState, events: list[Event]) -> None:
    world, ag = s.world, s.agent
    for mob in list(world.mobs):
        if mob.kind in HOSTILE:
            near = _chebyshev(mob.pos, ag.pos) <= 1
            if near:
                if s.tick % 2 == 0:
                    ag.health -= 1
                    events.append(Event("Damaged", mob.kind))
            elif mob.kind == "spider" or s.tick % 2 == 0:
                if _chebyshev(mob.pos, ag.pos) <= 2 * VIEW:
                    _mob_step(s, mob, ag.pos)
        elif s.tick % 2 == 0 and s.rng.random() < 0.5:
            dx, dy = HEADINGS[int(s.rng.integers(8))]
            nx, ny = mob.pos[0] + dx, mob.pos[1] + dy
            if world.free(nx, ny) and (nx, ny) != ag.pos:
                mob.pos = (nx, ny)
    if ag.health <= 0:
        ag.health = 0
        events.append(Event("Died"))


def step(state: EnvState, a: EnvAction, cfg: GridConfig = DEFAULT_GRID) -> tuple[EnvState, Observation, list[Event]]:
    """Advance one tick.  ``state`` is not modified."""
    s = state.copy()
    events: list[Event] = []
    if s.agent.health > 0:
        if s.agent.mode == WORLD_MODE:
            _world_controls(s, a, cfg, events)
        else:
            _gui_controls(s, a, cfg, events)
        _tick_mobs(s, events)
    s.tick += 1
    return s, observe(s), events


# -- reset -----------------------------------------------------------------


def _ring(world: World, centre, lo: int, hi: int) -> list[tuple[int, int]]:
    cx, cy = centre
    return [
        (x, y)
        for y in range(cy - hi, cy + hi + 1)
        for x in range(cx - hi, cx + hi + 1)
        if lo <= _chebyshev((x, y), centre) <= hi and world.free(x, y)
    ]


def _reachable(world: World, start, goal_cells: Iterable[tuple[int, int]]) -> bool:
    from chainact.minegrid.expert import bfs_path

    return bfs_path(world, start, set(goal_cells)) is not None


def _adjacent(p) -> list[tuple[int, int]]:
    return [(p[0] + dx, p[1] + dy) for dx, dy in HEADINGS]


def reset(task: TaskSpec | str, seed: int, cfg: WorldConfig = WorldConfig()) -> tuple[EnvState, Observation]:
    """Build the initial state for ``task``; deterministic per ``(task, seed)``.

    Raises:
        UnsatisfiableTask: the world config cannot host the task.
    """
    spec = TASKS[task] if isinstance(task, str) else task
    world = generate_world(seed, cfg.with_tasks(spec.id))
    rng = np.random.default_rng([seed, zlib.crc32(spec.id.encode())])
    setup = spec.setup

    free = np.argwhere(world.cells[RADIUS:-RADIUS, RADIUS:-RADIUS] == Cell.Empty) + RADIUS
    order = rng.permutation(len(free))
    for idx in order:
        y, x = (int(v) for v in free[idx])
        if world.mob_at(x, y) is None:
            spawn = (x, y)
            break
    else:
        raise UnsatisfiableTask("no empty spawn cell")
    agent = AgentState(pos=spawn, heading=int(rng.integers(8)))

    if "near" in setup:
        kind = setup["near"]
        clear = setup.get("clear_radius", 0)
        if clear:
            for y in range(spawn[1] - clear, spawn[1] + clear + 1):
                for x in range(spawn[0] - clear, spawn[0] + clear + 1):
                    if world.cell(x, y) is kind:
                        world.cells[y, x] = Cell.Empty
        ring = _ring(world, spawn, max(2, clear + 1), RADIUS)
        rng.shuffle(ring)
        for x, y in ring:
            world.cells[y, x] = kind
            if _reachable(world, spawn, _adjacent((x, y))):
                break
            world.cells[y, x] = Cell.Empty
        else:
            raise UnsatisfiableTask(f"cannot place {kind.name} near spawn")
    if "station" in setup:
        tx, ty = faced_cell(agent)
        for m in list(world.mobs):
            if m.pos == (tx, ty):
                world.mobs.remove(m)
        world.cells[ty, tx] = setup["station"]
        slots = list(range(len(INVENTORY_SLOTS)))
        picks = rng.permutation(slots)
        items = list(setup["items"].items())
        pool = [it for it in ("stick", "wool", "string", "rotten_flesh") if it not in setup["items"]]
        n_distract = int(rng.integers(1, 4))
        for j in range(n_distract):
            items.append((pool[int(rng.integers(len(pool)))], int(rng.integers(1, 4))))
        for (item, n), k in zip(items, picks):
            slot = INVENTORY_SLOTS[int(k)]
            if any(v[0] == item for v in agent.slots.values()):
                continue
            agent.slots[slot] = (item, n)
    if "mobs" in setup:
        uid = max((m.uid for m in world.mobs), default=-1) + 1
        for kind in setup["mobs"]:
            ring = [p for p in _ring(world, spawn, 3, RADIUS) if p != spawn]
            rng.shuffle(ring)
            for p in ring:
                if _reachable(world, spawn, _adjacent(p)):
                    world.mobs.append(Mob(uid, kind, p, MOB_HEALTH[kind]))
                    uid += 1
                    break
            else:
                raise UnsatisfiableTask(f"cannot place {kind} near spawn")

    state = EnvState(world, agent, spec.id, seed, 0, np.random.default_rng([seed, 0x4D6F62]))
    return state, observe(state)


# -- replay files ----------------------------------------------------------


def write_replay(path: str | Path, task: str, seed: int, actions: Iterable[EnvAction]) -> None:
    """JSONL replay: a header line, then one serialized text action per line."""
    from chainact.codecs import serialize_text

    with open(path, "w") as fh:
        fh.write(json.dumps({"task": task, "seed": seed}) + "\n")
        for a in actions:
            fh.write(json.dumps(serialize_text(a)) + "\n")


def load_replay(path: str | Path) -> tuple[str, int, list[EnvAction]]:
    from chainact.codecs import parse_text

    with open(path) as fh:
        header = json.loads(fh.readline())
        actions = [parse_text(json.loads(line)) for line in fh if line.strip()]
    return header["task"], int(header["seed"]), actions


def replay(task: str, seed: int, actions: Iterable[EnvAction]) -> tuple[EnvState, list[Observation], list[Event]]:
    state, obs = reset(task, seed)
    observations, events = [obs], []
    for a in actions:
        state, obs, ev = step(state, a)
        observations.append(obs)
        events.extend(ev)
    return state, observations, events
