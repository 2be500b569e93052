"""Scripted experts: BFS navigation, heading alignment and GUI cursor scripts."""

from __future__ import annotations

from collections import deque
from typing import Optional

from chainact.action_core import EnvAction, GridAction, GridKind, grid_to_env
from chainact.errors import NoPath
from chainact.minegrid.env import (
    CRAFT_INPUTS,
    CRAFTING,
    FURNACE_INPUTS,
    FUELS,
    INVENTORY_SLOTS,
    OUTPUT,
    WORLD_MODE,
    EnvState,
    craft_result,
    faced_cell,
)
from chainact.minegrid.tasks import TASKS, TaskSpec
from chainact.minegrid.world import HEADINGS, World, heading_towards

_ACT = {k: grid_to_env(GridAction(k)) for k in GridKind if k not in (GridKind.Hotbar, GridKind.CursorMove)}


def bfs_path(world: World, start, goals: set, blocked: Optional[set] = None) -> Optional[list[tuple[int, int]]]:
    """Shortest 8-connected path over free cells from ``start`` to any goal.

    Returns the cells after ``start`` (empty when ``start`` is a goal), or
    None when unreachable.  Neighbour order follows :data:`HEADINGS`.
    """
    blocked = blocked or set()
    if start in goals:
        return []
    prev = {start: None}
    queue = deque([start])
    while queue:
        cur = queue.popleft()
        for dx, dy in HEADINGS:
            nxt = (cur[0] + dx, cur[1] + dy)
            if nxt in prev or nxt in blocked or not world.free(*nxt):
                continue
            prev[nxt] = cur
            if nxt in goals:
                path = [nxt]
                while prev[path[-1]] != start:
                    path.append(prev[path[-1]])
                return path[::-1]
            queue.append(nxt)
    return None


def _turn_towards(heading: int, target: int) -> EnvAction:
    diff = (target - heading) % 8
    return _ACT[GridKind.TurnRight] if diff <= 4 else _ACT[GridKind.TurnLeft]


def _targets(task: TaskSpec, state: EnvState) -> list[tuple[int, int]]:
    world = state.world
    setup = task.setup
    if "mobs" in setup:
        kinds = set(setup["mobs"])
        return [m.pos for m in world.mobs if m.kind in kinds]
    kind = setup.get("near", setup.get("station"))
    ys, xs = (world.cells == kind).nonzero()
    return [(int(x), int(y)) for x, y in zip(xs, ys)]


def _navigate(state: EnvState, targets: list[tuple[int, int]], interact: GridKind | None) -> EnvAction:
    """Walk next to the nearest target, face it, then interact."""
    ag, world = state.agent, state.world
    if not targets:
        raise NoPath("no target in world")
    adjacent = [t for t in targets if max(abs(t[0] - ag.pos[0]), abs(t[1] - ag.pos[1])) == 1]
    if adjacent:
        fx, fy = faced_cell(ag)
        if (fx, fy) in adjacent:
            return _ACT[interact] if interact else _ACT[GridKind.NoOp]
        t = min(adjacent)
        return _turn_towards(ag.heading, heading_towards(t[0] - ag.pos[0], t[1] - ag.pos[1]))
    goals = {(t[0] + dx, t[1] + dy) for t in targets for dx, dy in HEADINGS}
    path = bfs_path(world, ag.pos, goals)
    if path is None:
        raise NoPath(f"no path from {ag.pos} to any target")
    nxt = path[0]
    want = heading_towards(nxt[0] - ag.pos[0], nxt[1] - ag.pos[1])
    if want != ag.heading:
        return _turn_towards(ag.heading, want)
    return _ACT[GridKind.MoveForward]


def _cursor_to(cursor, target) -> Optional[EnvAction]:
    dx = (target[0] > cursor[0]) - (target[0] < cursor[0])
    dy = (target[1] > cursor[1]) - (target[1] < cursor[1])
    if dx or dy:
        return grid_to_env(GridAction(GridKind.CursorMove, dx=dx, dy=dy))
    return None


def _gui_plan(task: TaskSpec, state: EnvState) -> tuple[int, int]:
    """Next GUI cell to click for a crafting/smelting task."""
    ag = state.agent
    wanted = dict(task.setup["items"])
    if craft_result(ag.mode, ag.slots) is not None and ag.held is None:
        return OUTPUT
    if ag.mode == CRAFTING:
        need = sum(wanted.values())
        placed = [ag.slots[s] for s in CRAFT_INPUTS if s in ag.slots]
        stray = [s for s in CRAFT_INPUTS if s in ag.slots and ag.slots[s][0] not in wanted]
        if ag.held is not None and ag.held[0] in wanted and len(placed) < need:
            return next(s for s in CRAFT_INPUTS if s not in ag.slots)
        if ag.held is not None:
            return next((s for s in INVENTORY_SLOTS if s not in ag.slots), INVENTORY_SLOTS[0])
        if stray:
            return stray[0]
    else:
        src, fuel = FURNACE_INPUTS
        if ag.held is not None:
            item = ag.held[0]
            if item == "cobblestone" and src not in ag.slots:
                return src
            if item in FUELS and fuel not in ag.slots:
                return fuel
            return next((s for s in INVENTORY_SLOTS if s not in ag.slots), INVENTORY_SLOTS[0])
        for s in (src, fuel):
            if s in ag.slots and ag.slots[s][0] not in wanted:
                return s
        wanted = {k: v for k, v in wanted.items() if not any(ag.slots.get(s, ("",))[0] == k for s in (src, fuel))}
    for s in INVENTORY_SLOTS:
        if s in ag.slots and ag.slots[s][0] in wanted:
            return s
    return OUTPUT


def scripted_expert(task: TaskSpec | str, state: EnvState, world: Optional[World] = None) -> EnvAction:
    """Deterministic expert action for ``task`` in ``state``.

    Raises:
        NoPath: the target cannot be reached.
    """
    spec = TASKS[task] if isinstance(task, str) else task
    if world is not None and world is not state.world:
        state = EnvState(world, state.agent, state.task, state.seed, state.tick, state.rng)
    ag = state.agent
    if spec.category == "GUI":
        if ag.mode == WORLD_MODE:
            return _navigate(state, _targets(spec, state), GridKind.Use)
        target = _gui_plan(spec, state)
        move = _cursor_to(ag.cursor, target)
        return move if move is not None else _ACT[GridKind.Click]
    if ag.mode != WORLD_MODE:
        return _ACT[GridKind.OpenInventory]
    if spec.id == "find_water":
        return _navigate(state, _targets(spec, state), None)
    return _navigate(state, _targets(spec, state), GridKind.Attack)
