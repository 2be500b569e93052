"""Flat feature vector for (observation, instruction, format prompt).

Layout (version 1), concatenated in this order:

==============  =====================================
terrain         VIEW*VIEW cells x 8 cell types, one-hot
entities        VIEW*VIEW cells x 3 mob kinds, one-hot
heading         8, one-hot
pitch           3, one-hot
health          1, scaled to [0, 1]
mode            3, one-hot (world, crafting, furnace)
gui_items       GUI*GUI slots x item vocabulary, one-hot
gui_counts      GUI*GUI, count / 8
held            item vocabulary, one-hot
held_count      1, count / 8
cursor          GUI*GUI, one-hot
instruction     task instruction vocabulary, one-hot
prompt          FormatPrompt, one-hot
==============  =====================================
"""

from __future__ import annotations

import enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from chainact.codecs import Space
from chainact.errors import UnknownSpace
from chainact.minegrid import GUI, VIEW, Observation
from chainact.minegrid.env import MODES
from chainact.minegrid.tasks import INSTRUCTIONS
from chainact.minegrid.world import ITEMS, N_CELL_TYPES

LAYOUT_VERSION = 1
COUNT_SCALE = 8.0
N_MOBS = 3


class FormatPrompt(str, enum.Enum):
    """Which output format a forward pass is asked to produce."""

    TextOnly = "text_only"
    HighLevelMotion = "high_level_motion"
    HighLevelGrounding = "high_level_grounding"
    HighLevelSkill = "high_level_skill"
    HighLevelLatent = "high_level_latent"
    MotionCoA = "motion_coa"
    GroundingCoA = "grounding_coa"
    SkillCoA = "skill_coa"
    LatentCoA = "latent_coa"

    @property
    def space(self) -> Space | None:
        if self is FormatPrompt.TextOnly:
            return None
        parts = self.value.split("_")
        return Space(parts[-1] if parts[0] == "high" else parts[0])

    @property
    def is_coa(self) -> bool:
        return self.value.endswith("_coa")


ABSTRACT_SPACES = (Space.MOTION, Space.GROUNDING, Space.SKILL, Space.LATENT)


def high_level_only(space: Space | str) -> FormatPrompt:
    space = Space(space)
    if space not in ABSTRACT_SPACES:
        raise UnknownSpace(space.value)
    return FormatPrompt(f"high_level_{space.value}")


def coa_prompt(space: Space | str) -> FormatPrompt:
    space = Space(space)
    if space not in ABSTRACT_SPACES:
        raise UnknownSpace(space.value)
    return FormatPrompt(f"{space.value}_coa")


PROMPTS = tuple(FormatPrompt)
_PROMPT_INDEX = {p: i for i, p in enumerate(PROMPTS)}
_INSTRUCTION_INDEX = {s: i for i, s in enumerate(INSTRUCTIONS)}

LAYOUT: tuple[tuple[str, int], ...] = (
    ("terrain", VIEW * VIEW * N_CELL_TYPES),
    ("entities", VIEW * VIEW * N_MOBS),
    ("heading", 8),
    ("pitch", 3),
    ("health", 1),
    ("mode", len(MODES)),
    ("gui_items", GUI * GUI * len(ITEMS)),
    ("gui_counts", GUI * GUI),
    ("held", len(ITEMS)),
    ("held_count", 1),
    ("cursor", GUI * GUI),
    ("instruction", len(INSTRUCTIONS)),
    ("prompt", len(PROMPTS)),
)
OFFSETS: dict[str, int] = {}
_off = 0
for _name, _size in LAYOUT:
    OFFSETS[_name] = _off
    _off += _size
FEATURE_DIM = _off
del _off, _name, _size


def _as_obs(obs: Observation | Mapping) -> Observation:
    return obs if isinstance(obs, Observation) else Observation.from_dict(obs)


def featurize(obs: Observation | Mapping, instruction: str, prompt: FormatPrompt) -> np.ndarray:
    """Feature vector of length :data:`FEATURE_DIM` (float64)."""
    obs = _as_obs(obs)
    out = np.zeros(FEATURE_DIM)
    cells = np.arange(VIEW * VIEW)
    out[OFFSETS["terrain"] + cells * N_CELL_TYPES + obs.terrain.reshape(-1)] = 1.0
    ent = obs.entities.reshape(-1)
    has = ent > 0
    out[OFFSETS["entities"] + cells[has] * N_MOBS + ent[has] - 1] = 1.0
    out[OFFSETS["heading"] + obs.heading] = 1.0
    out[OFFSETS["pitch"] + obs.pitch + 1] = 1.0
    out[OFFSETS["health"]] = obs.health / 20.0
    out[OFFSETS["mode"] + MODES.index(obs.mode)] = 1.0
    slots = np.arange(GUI * GUI)
    items = obs.gui_items.reshape(-1)
    full = items > 0
    out[OFFSETS["gui_items"] + slots[full] * len(ITEMS) + items[full] - 1] = 1.0
    out[OFFSETS["gui_counts"]:OFFSETS["gui_counts"] + GUI * GUI] = obs.gui_counts.reshape(-1) / COUNT_SCALE
    if obs.held:
        out[OFFSETS["held"] + obs.held - 1] = 1.0
    out[OFFSETS["held_count"]] = obs.held_count / COUNT_SCALE
    col, row = obs.cursor
    out[OFFSETS["cursor"] + row * GUI + col] = 1.0
    out[OFFSETS["instruction"] + _INSTRUCTION_INDEX[instruction]] = 1.0
    out[OFFSETS["prompt"] + _PROMPT_INDEX[FormatPrompt(prompt)]] = 1.0
    return out


def featurize_batch(
    observations: Sequence[Observation | Mapping],
    instructions: Sequence[str],
    prompts: Sequence[FormatPrompt] | FormatPrompt,
) -> np.ndarray:
    if isinstance(prompts, FormatPrompt):
        prompts = [prompts] * len(observations)
    return np.stack([featurize(o, i, p) for o, i, p in zip(observations, instructions, prompts)])


def with_prompt(feat: np.ndarray, prompt: FormatPrompt) -> np.ndarray:
    """Copy of ``feat`` with the prompt block replaced."""
    out = np.array(feat, copy=True)
    lo = OFFSETS["prompt"]
    out[..., lo:lo + len(PROMPTS)] = 0.0
    out[..., lo + _PROMPT_INDEX[FormatPrompt(prompt)]] = 1.0
    return out


def gui_mask(feat) -> np.ndarray | object:
    """1.0 where the feature row was taken in a GUI screen (array or tensor)."""
    lo = OFFSETS["mode"]
    return feat[..., lo + 1] + feat[..., lo + 2]


def describe_layout() -> Iterable[str]:
    for name, size in LAYOUT:
        yield f"{name:12s} offset {OFFSETS[name]:5d} size {size}"
