"""Benchmark task suite: Embodied, GUI and Combat families."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

from chainact.minegrid.world import Cell

CATEGORIES = ("Embodied", "GUI", "Combat")


@dataclass(frozen=True)
class Event:
    kind: str
    arg: str = ""

    def __str__(self) -> str:
        return f"{self.kind}({self.arg})" if self.arg else self.kind

    @classmethod
    def parse(cls, text: str) -> Event:
        if text.endswith(")") and "(" in text:
            kind, arg = text[:-1].split("(", 1)
            return cls(kind, arg)
        return cls(text)


ACHIEVEMENTS = frozenset({"LogGained", "StoneMined", "WaterFound", "GuiOpened", "Crafted", "Smelted", "Killed"})


@dataclass(frozen=True)
class TaskSpec:
    """A benchmark task.

    Success is reached once ``goal`` (an event) has occurred ``count`` times.
    """

    id: str
    category: str
    instruction: str
    goal: Event
    count: int = 1
    requires: tuple[Cell, ...] = ()
    max_steps: int = 400
    # task-setup parameters consumed by env.reset
    setup: dict = field(default_factory=dict, compare=False, hash=False)

    def success(self, events: Iterable[Event]) -> bool:
        return sum(1 for e in events if e == self.goal) >= self.count


_TASK_LIST = [
    TaskSpec("chop_oak", "Embodied", "chop down an oak tree", Event("LogGained", "oak_log"),
             requires=(Cell.OakTree,), setup={"near": Cell.OakTree}),
    TaskSpec("chop_birch", "Embodied", "chop down a birch tree", Event("LogGained", "birch_log"),
             requires=(Cell.BirchTree,), setup={"near": Cell.BirchTree}),
    TaskSpec("mine_stone", "Embodied", "mine stone", Event("StoneMined", "cobblestone"),
             requires=(Cell.Rock,), setup={"near": Cell.Rock}),
    TaskSpec("find_water", "Embodied", "find water", Event("WaterFound", "water"),
             requires=(Cell.Water,), setup={"near": Cell.Water, "clear_radius": 2}),
    TaskSpec("craft_planks", "GUI", "craft oak planks", Event("Crafted", "oak_planks"),
             requires=(Cell.CraftingTable,),
             setup={"station": Cell.CraftingTable, "items": {"oak_log": 1}}),
    TaskSpec("craft_sticks", "GUI", "craft sticks", Event("Crafted", "stick"),
             requires=(Cell.CraftingTable,),
             setup={"station": Cell.CraftingTable, "items": {"oak_planks": 2}}),
    TaskSpec("craft_table", "GUI", "craft a crafting table", Event("Crafted", "crafting_table"),
             requires=(Cell.CraftingTable,),
             setup={"station": Cell.CraftingTable, "items": {"oak_planks": 4}}),
    TaskSpec("smelt_stone", "GUI", "smelt stone", Event("Smelted", "stone"),
             requires=(Cell.Furnace,),
             setup={"station": Cell.Furnace, "items": {"cobblestone": 1, "oak_planks": 1}}),
    TaskSpec("kill_zombie", "Combat", "kill the zombie", Event("Killed", "zombie"),
             setup={"mobs": ("zombie",)}),
    TaskSpec("kill_spider", "Combat", "kill the spider", Event("Killed", "spider"),
             setup={"mobs": ("spider",)}),
    TaskSpec("kill_sheep", "Combat", "kill the sheep", Event("Killed", "sheep"),
             setup={"mobs": ("sheep",)}),
    TaskSpec("kill_two_zombies", "Combat", "kill two zombies", Event("Killed", "zombie"), count=2,
             setup={"mobs": ("zombie", "zombie")}),
]

TASKS: dict[str, TaskSpec] = {t.id: t for t in _TASK_LIST}
TASK_IDS: tuple[str, ...] = tuple(TASKS)
INSTRUCTIONS: tuple[str, ...] = tuple(t.instruction for t in _TASK_LIST)


def tasks_in(category: str) -> list[TaskSpec]:
    return [t for t in _TASK_LIST if t.category == category]


def success(task: TaskSpec, state, events: Iterable[Event]) -> bool:
    """Pure success predicate; ``state`` is accepted for interface symmetry."""
    del state
    return task.success(events)
