"""Terrain, mobs and seeded world generation."""

from __future__ import annotations

import copy
import enum
from dataclasses import dataclass, field, replace

import numpy as np

from chainact.errors import UnsatisfiableTask


class Cell(enum.IntEnum):
    Empty = 0
    OakTree = 1
    BirchTree = 2
    Rock = 3
    Water = 4
    CraftingTable = 5
    Furnace = 6
    Void = 7  # observation only: outside the world


N_CELL_TYPES = len(Cell)

# name used when a cell is grounded as an object
CELL_OBJECT = {
    Cell.OakTree: "oak_log",
    Cell.BirchTree: "birch_log",
    Cell.Rock: "stone",
    Cell.Water: "water",
    Cell.CraftingTable: "crafting_table",
    Cell.Furnace: "furnace",
}

MOB_KINDS = ("sheep", "zombie", "spider")
MOB_HEALTH = {"sheep": 3, "zombie": 5, "spider": 4}
HOSTILE = frozenset({"zombie", "spider"})

ITEMS = (
    "oak_log",
    "birch_log",
    "oak_planks",
    "birch_planks",
    "stick",
    "crafting_table",
    "cobblestone",
    "stone",
    "wool",
    "string",
    "rotten_flesh",
)
ITEM_ID = {name: i + 1 for i, name in enumerate(ITEMS)}  # 0 = empty

# 8 headings clockwise from north; y grows southward
HEADINGS = ((0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1))


def heading_towards(dx: int, dy: int) -> int:
    return HEADINGS.index((int(np.sign(dx)), int(np.sign(dy))))


@dataclass
class Mob:
    uid: int
    kind: str
    pos: tuple[int, int]
    health: int


@dataclass
class World:
    width: int
    height: int
    cells: np.ndarray  # (height, width) uint8, indexed [y, x]
    mobs: list[Mob]
    seed: int

    def copy(self) -> World:
        return World(self.width, self.height, self.cells.copy(), copy.deepcopy(self.mobs), self.seed)

    def in_bounds(self, x: int, y: int) -> bool:
        return 0 <= x < self.width and 0 <= y < self.height

    def cell(self, x: int, y: int) -> Cell:
        if not self.in_bounds(x, y):
            return Cell.Void
        return Cell(int(self.cells[y, x]))

    def mob_at(self, x: int, y: int) -> Mob | None:
        for mob in self.mobs:
            if mob.pos == (x, y):
                return mob
        return None

    def free(self, x: int, y: int) -> bool:
        return self.cell(x, y) is Cell.Empty and self.mob_at(x, y) is None

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "seed": self.seed,
            "cells": self.cells.tolist(),
            "mobs": [[m.uid, m.kind, list(m.pos), m.health] for m in self.mobs],
        }


@dataclass(frozen=True)
class WorldConfig:
    width: int = 32
    height: int = 32
    oak_density: float = 0.03
    birch_density: float = 0.02
    rock_density: float = 0.02
    water_density: float = 0.015
    sheep: int = 1
    tasks: tuple[str, ...] = field(default=())

    def __post_init__(self):
        for name in ("oak_density", "birch_density", "rock_density", "water_density"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.width < 9 or self.height < 9:
            raise ValueError("world must be at least 9x9")

    def with_tasks(self, *tasks: str) -> WorldConfig:
        return replace(self, tasks=tuple(tasks))


# cell a task cannot do without, and the density field that produces it
_DENSITY_FIELD = {
    Cell.OakTree: "oak_density",
    Cell.BirchTree: "birch_density",
    Cell.Rock: "rock_density",
    Cell.Water: "water_density",
}


def required_cells(task_id: str) -> tuple[Cell, ...]:
    from chainact.minegrid.tasks import TASKS

    return TASKS[task_id].requires


def generate_world(seed: int, cfg: WorldConfig = WorldConfig()) -> World:
    """Scatter terrain from ``seed``; deterministic per ``(seed, cfg)``.

    Raises:
        UnsatisfiableTask: a task in ``cfg.tasks`` needs a resource whose
            density is zero.
    """
    rng = np.random.default_rng([seed, 0x6D67])
    cells = np.zeros((cfg.height, cfg.width), dtype=np.uint8)
    draw = rng.random((cfg.height, cfg.width))
    lo = 0.0
    for kind, name in _DENSITY_FIELD.items():
        hi = lo + getattr(cfg, name)
        cells[(draw >= lo) & (draw < hi)] = kind
        lo = hi

    for task in cfg.tasks:
        for kind in required_cells(task):
            name = _DENSITY_FIELD.get(kind)
            if name is None:
                continue  # placed by the task setup
            if getattr(cfg, name) == 0.0:
                raise UnsatisfiableTask(f"task {task!r} needs {kind.name} but {name} is 0")
            if not (cells == kind).any():
                ys, xs = np.nonzero(cells == Cell.Empty)
                i = int(rng.integers(len(xs)))
                cells[ys[i], xs[i]] = kind

    world = World(cfg.width, cfg.height, cells, [], seed)
    uid = 0
    for _ in range(cfg.sheep):
        ys, xs = np.nonzero(cells == Cell.Empty)
        i = int(rng.integers(len(xs)))
        world.mobs.append(Mob(uid, "sheep", (int(xs[i]), int(ys[i])), MOB_HEALTH["sheep"]))
        uid += 1
    return world
