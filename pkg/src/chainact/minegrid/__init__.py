"""MineGrid: a seeded 2-D crafting world with symbolic observations."""

from chainact.minegrid.env import (
    VIEW,
    GUI,
    WORLD_MODE,
    CRAFTING,
    FURNACE,
    AgentState,
    EnvState,
    Observation,
    VisibleEntity,
    ground_truth,
    load_replay,
    observe,
    replay,
    reset,
    step,
    visible_entities,
    visible_slots,
    write_replay,
)
from chainact.minegrid.expert import bfs_path, scripted_expert
from chainact.minegrid.tasks import CATEGORIES, TASK_IDS, TASKS, Event, TaskSpec, success, tasks_in
from chainact.minegrid.world import Cell, Mob, World, WorldConfig, generate_world

__all__ = [
    "VIEW", "GUI", "WORLD_MODE", "CRAFTING", "FURNACE", "AgentState", "EnvState", "Observation",
    "VisibleEntity", "ground_truth", "load_replay", "observe", "replay", "reset", "step",
    "visible_entities", "visible_slots", "write_replay", "bfs_path", "scripted_expert", "CATEGORIES",
    "TASK_IDS", "TASKS", "Event", "TaskSpec", "success", "tasks_in", "Cell", "Mob", "World",
    "WorldConfig", "generate_world",
]
