"""Rule-based labeling of expert trajectories and dataset assembly.

Trajectories of ``(obs, a)`` pairs are turned into Motion, Grounding and
Skill labels, then expanded to one label per step to build the three
behaviour-cloning datasets: ``D_A`` (obs, A), ``D_a`` (obs, a) and
``D_CoA`` (obs, A, a).
"""

from __future__ import annotations

import enum
import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from chainact.action_core import EnvAction
from chainact.codecs import (
    AbstractedAction,
    Grounding,
    GroundingVerb,
    Motion,
    MotionVerb,
    Skill,
    Space,
    serialize_abstracted,
    serialize_text,
)
from chainact.errors import ConfigError, CoverageGap, DatasetKindMismatch, GroundTruthMissing
from chainact.minegrid import TASKS, Event, Observation, VisibleEntity
from chainact.minegrid.env import OUTPUT, WORLD_MODE, EnvState, faced_cell, ground_truth, reset, step
from chainact.minegrid.expert import scripted_expert
from chainact.minegrid.world import WorldConfig

Window = range


@dataclass(frozen=True)
class LabelerConfig:
    """Labeling rule parameters.

    ``stride`` is the gap between window starts.  The default (``None``)
    gives non-overlapping windows; ``stride=1`` labels every step with the
    window that starts there, so grounding coordinates always refer to the
    current observation.
    """

    window_k: int = 8
    turn_threshold_deg: float = 20.0
    look_threshold_deg: float = 20.0
    press_fraction: float = 0.5
    stride: Optional[int] = None

    def __post_init__(self):
        if self.window_k < 1:
            raise ConfigError("window_k must be >= 1")
        if self.turn_threshold_deg <= 0 or self.look_threshold_deg <= 0:
            raise ConfigError("thresholds must be positive")
        if not 0 < self.press_fraction <= 1:
            raise ConfigError("press_fraction must lie in (0, 1]")
        if self.stride is not None and not 1 <= self.stride <= self.window_k:
            raise ConfigError("stride must lie in 1..window_k")

    @property
    def step(self) -> int:
        return self.stride or self.window_k


@dataclass(frozen=True)
class Step:
    t: int
    obs: Observation
    a: EnvAction
    events: tuple[Event, ...] = ()


@dataclass(frozen=True)
class Trajectory:
    instruction: str
    steps: tuple[Step, ...]
    id: int = 0
    task: Optional[str] = None

    def __post_init__(self):
        if not self.steps:
            raise ValueError("a trajectory needs at least one step")
        if [s.t for s in self.steps] != list(range(len(self.steps))):
            raise ValueError("step indices must run 0..T-1")

    @property
    def T(self) -> int:
        return len(self.steps)


@dataclass(frozen=True)
class FrameTruth:
    """Simulator-side facts the grounding labeler needs at one step."""

    mode: str
    agent_pos: tuple[int, int]
    focus: tuple[int, int]  # faced world cell, or GUI cursor
    held: Optional[str]
    entities: tuple[VisibleEntity, ...]

    @classmethod
    def of(cls, state: EnvState) -> FrameTruth:
        ag = state.agent
        focus = faced_cell(ag) if ag.mode == WORLD_MODE else ag.cursor
        return cls(ag.mode, ag.pos, focus, ag.held[0] if ag.held else None, tuple(ground_truth(state)))


def windows(T: int, cfg: LabelerConfig) -> list[Window]:
    return [range(s, min(s + cfg.window_k, T)) for s in range(0, T, cfg.step)]


# -- motion ----------------------------------------------------------------

_HELD_VERBS = (
    ("forward", MotionVerb.GoForward),
    ("back", MotionVerb.GoBackward),
    ("left", MotionVerb.StrafeLeft),
    ("right", MotionVerb.StrafeRight),
    ("jump", MotionVerb.Jump),
    ("sprint", MotionVerb.Sprint),
    ("sneak", MotionVerb.Sneak),
)


def motion_of(actions: Sequence[EnvAction], cfg: LabelerConfig = LabelerConfig()) -> Motion:
    """Motion label of one window of primitive actions."""
    n = len(actions)
    verbs = []
    for button, verb in _HELD_VERBS:
        if sum(button in a.pressed for a in actions) >= cfg.press_fraction * n:
            verbs.append(verb)
    yaw = math.fsum(a.camera[1] for a in actions)
    pitch = math.fsum(a.camera[0] for a in actions)
    if yaw <= -cfg.turn_threshold_deg:
        verbs.append(MotionVerb.TurnLeft)
    elif yaw >= cfg.turn_threshold_deg:
        verbs.append(MotionVerb.TurnRight)
    if pitch <= -cfg.look_threshold_deg:
        verbs.append(MotionVerb.LookUp)
    elif pitch >= cfg.look_threshold_deg:
        verbs.append(MotionVerb.LookDown)
    return Motion(tuple(verbs) or (MotionVerb.Stop,))


def label_motion(traj: Trajectory, cfg: LabelerConfig = LabelerConfig()) -> list[tuple[Window, Motion]]:
    acts = [s.a for s in traj.steps]
    return [(w, motion_of([acts[t] for t in w], cfg)) for w in windows(traj.T, cfg)]


# -- grounding -------------------------------------------------------------


def _entity_at(truth: FrameTruth, cell) -> Optional[VisibleEntity]:
    # mobs shadow blocks; the GUI output preview is just another slot
    hits = [e for e in truth.entities if e.pos == cell]
    hits.sort(key=lambda e: e.kind != "mob")
    return hits[0] if hits else None


def _coord_at_start(start: FrameTruth, e: VisibleEntity) -> tuple[int, int]:
    for other in start.entities:
        if other.kind == e.kind and other.uid == e.uid:
            return other.coord
    return e.coord


def _interaction(truth: FrameTruth, a: EnvAction) -> Optional[tuple[GroundingVerb, VisibleEntity]]:
    if truth.mode == WORLD_MODE:
        target = _entity_at(truth, truth.focus)
        if target is None:
            return None
        if "attack" in a.pressed:
            if target.kind == "mob":
                return GroundingVerb.Attack, target
            if target.name != "water" and target.name not in ("crafting_table", "furnace"):
                return GroundingVerb.Mine, target
            return None
        if "use" in a.pressed and target.name in ("crafting_table", "furnace"):
            return GroundingVerb.Use, target
        return None
    if "attack" not in a.pressed:
        return None
    if truth.focus == OUTPUT:
        target = _entity_at(truth, OUTPUT)
        return (GroundingVerb.Craft, target) if target and truth.held is None else None
    if truth.held is not None:
        return GroundingVerb.Place, VisibleEntity("slot", truth.held, truth.focus, truth.focus, truth.focus)
    target = _entity_at(truth, truth.focus)
    return (GroundingVerb.Interact, target) if target else None


def _dist(p, q) -> float:
    return math.hypot(p[0] - q[0], p[1] - q[1])


def grounding_of(
    actions: Sequence[EnvAction],
    truths: Sequence[FrameTruth],
    end_truth: Optional[FrameTruth] = None,
) -> Grounding:
    """Grounding label of one window.

    Args:
        actions: The window's primitive actions.
        truths: Frame truth before each action (same length as ``actions``).
        end_truth: Frame truth after the last action, used for the
            displacement test; defaults to the last entry of ``truths``.
    """
    start = truths[0]
    for truth, a in zip(truths, actions):
        hit = _interaction(truth, a)
        if hit is not None:
            verb, e = hit
            coord = e.coord if truth.mode != WORLD_MODE else _coord_at_start(start, e)
            return Grounding(verb, e.name, coord)
    if start.mode != WORLD_MODE:
        return Grounding(GroundingVerb.Explore)
    end = end_truth or truths[-1]
    best, best_key = None, None
    for e in start.entities:
        later = next((o for o in end.entities if o.kind == e.kind and o.uid == e.uid), e)
        gain = _dist(start.agent_pos, e.pos) - _dist(end.agent_pos, later.pos)
        key = (-gain, _dist(start.agent_pos, e.pos), e.kind, e.name, e.coord)
        if best_key is None or key < best_key:
            best, best_key = e, key
    if best is not None and -best_key[0] > 1.0:
        return Grounding(GroundingVerb.Approach, best.name, best.coord)
    return Grounding(GroundingVerb.Explore)


def label_grounding(
    traj: Trajectory,
    ground_truth: Optional[Sequence[FrameTruth]],
    cfg: LabelerConfig = LabelerConfig(),
) -> list[tuple[Window, Grounding]]:
    """Grounding label per window.

    ``ground_truth`` holds one :class:`FrameTruth` per step, optionally plus
    one for the state after the final action.

    Raises:
        GroundTruthMissing: ``ground_truth`` is absent or too short.
    """
    if ground_truth is None or len(ground_truth) < traj.T:
        raise GroundTruthMissing(f"need {traj.T} frame truths, got {0 if ground_truth is None else len(ground_truth)}")
    out = []
    for w in windows(traj.T, cfg):
        end = ground_truth[min(w.stop, len(ground_truth) - 1)]
        out.append((w, grounding_of([traj.steps[t].a for t in w], [ground_truth[t] for t in w], end)))
    return out


# -- skills ----------------------------------------------------------------

SKILL_TEMPLATES = {
    ("LogGained", None): "chop down trees",
    ("StoneMined", None): "mine stone",
    ("WaterFound", None): "find water",
    ("GuiOpened", "crafting_table"): "open the crafting table",
    ("GuiOpened", "furnace"): "open the furnace",
    ("Crafted", "oak_planks"): "craft planks",
    ("Crafted", "birch_planks"): "craft planks",
    ("Crafted", "stick"): "craft sticks",
    ("Crafted", "crafting_table"): "craft a crafting table",
    ("Smelted", None): "smelt stone",
    ("Killed", "zombie"): "kill the zombie",
    ("Killed", "spider"): "kill the spider",
    ("Killed", "sheep"): "kill the sheep",
}
DEFAULT_SKILL = "explore the world"


def skill_for(event: Event) -> Optional[str]:
    return SKILL_TEMPLATES.get((event.kind, event.arg)) or SKILL_TEMPLATES.get((event.kind, None))


def label_skill(traj: Trajectory, cfg: LabelerConfig = LabelerConfig()) -> list[tuple[Window, Skill]]:
    """Segment at achievement events; each segment takes its closing event's skill."""
    del cfg
    out, start = [], 0
    for s in traj.steps:
        skill = next((k for k in map(skill_for, s.events) if k), None)
        if skill is not None:
            out.append((range(start, s.t + 1), Skill(skill)))
            start = s.t + 1
    if start < traj.T:
        out.append((range(start, traj.T), Skill(DEFAULT_SKILL)))
    return out


# -- per-step expansion ----------------------------------------------------


def per_step(labels: Sequence[tuple[Window, AbstractedAction]], T: int) -> list[AbstractedAction]:
    """One label per step: the latest-starting window that covers it.

    Raises:
        CoverageGap: some step in ``0..T-1`` has no window.
    """
    out: list[Optional[AbstractedAction]] = [None] * T
    for w, A in sorted(labels, key=lambda wa: wa[0].start):
        for t in w:
            if 0 <= t < T:
                out[t] = A
    missing = [t for t, A in enumerate(out) if A is None]
    if missing:
        raise CoverageGap(f"steps without a label: {missing[:10]}")
    return out


# -- datasets --------------------------------------------------------------


class DatasetKind(str, enum.Enum):
    D_A = "D_A"
    D_a = "D_a"
    D_CoA = "D_CoA"


@dataclass(frozen=True)
class Record:
    traj: int
    t: int
    ins: str
    obs: dict
    A: Optional[str]
    a: Optional[str]
    space: str

    def to_json(self) -> str:
        return json.dumps(
            {"traj": self.traj, "t": self.t, "ins": self.ins, "obs": self.obs, "A": self.A, "a": self.a,
             "space": self.space},
            sort_keys=False,
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, line: str) -> Record:
        d = json.loads(line)
        return cls(d["traj"], d["t"], d["ins"], d["obs"], d["A"], d["a"], d["space"])


@dataclass
class Dataset:
    kind: DatasetKind
    space: str
    records: list[Record] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def dumps(self) -> str:
        header = json.dumps({"kind": self.kind.value, "space": self.space, "n": len(self.records)})
        return "\n".join([header, *(r.to_json() for r in self.records)]) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path: str | Path) -> Dataset:
        return cls.loads(Path(path).read_text())

    @classmethod
    def loads(cls, text: str) -> Dataset:
        lines = text.splitlines()
        header = json.loads(lines[0])
        return cls(DatasetKind(header["kind"]), header["space"], [Record.from_json(x) for x in lines[1:] if x])


def build_dataset(
    trajs: Sequence[Trajectory],
    labels: Optional[Sequence[Sequence[tuple[Window, AbstractedAction]]]],
    kind: DatasetKind | str,
    space: Space | str = Space.TEXT,
) -> Dataset:
    """Expand trajectories (and per-trajectory labels) into records.

    Records are ordered by ``(trajectory id, t)``.

    Raises:
        CoverageGap: a step has no label.
        DatasetKindMismatch: labels are missing for a kind that needs them.
    """
    kind = DatasetKind(kind)
    space = Space(space).value
    needs_A = kind is not DatasetKind.D_a
    if needs_A and labels is None:
        raise DatasetKindMismatch(f"{kind.value} needs abstracted labels")
    order = sorted(range(len(trajs)), key=lambda i: trajs[i].id)
    records = []
    for i in order:
        traj = trajs[i]
        step_labels = per_step(labels[i], traj.T) if needs_A else [None] * traj.T
        for s, A in zip(traj.steps, step_labels):
            records.append(
                Record(
                    traj=traj.id,
                    t=s.t,
                    ins=traj.instruction,
                    obs=s.obs.to_dict(),
                    A=serialize_abstracted(A) if A is not None else None,
                    a=serialize_text(s.a) if kind is not DatasetKind.D_A else None,
                    space=space if needs_A else Space.TEXT.value,
                )
            )
    return Dataset(kind, space if needs_A else Space.TEXT.value, records)


def mix_datasets(datasets: Iterable[Dataset], seed: int = 0) -> Dataset:
    """Concatenate and shuffle with a fixed seed; records keep their space tag."""
    datasets = list(datasets)
    kinds = {d.kind for d in datasets}
    if len(kinds) != 1:
        raise DatasetKindMismatch(f"cannot mix kinds {sorted(k.value for k in kinds)}")
    records = [r for d in datasets for r in d.records]
    random.Random(seed).shuffle(records)
    spaces = sorted({d.space for d in datasets})
    return Dataset(kinds.pop(), "+".join(spaces), records)


# -- expert data collection ------------------------------------------------


@dataclass
class Rollout:
    trajectory: Trajectory
    truths: list[FrameTruth]  # T + 1 entries
    success: bool


def expert_rollout(task: str, seed: int, traj_id: int = 0, stop_on_success: bool = True,
                   world: WorldConfig = WorldConfig()) -> Rollout:
    """Run the scripted expert and record observations, actions, events and frame truth."""
    spec = TASKS[task]
    return _record(task, seed, traj_id, lambda state: scripted_expert(spec, state), spec.max_steps, stop_on_success,
                   world)


def rollout_from_actions(task: str, seed: int, actions: Sequence[EnvAction], traj_id: int = 0,
                         world: WorldConfig = WorldConfig()) -> Rollout:
    """Re-simulate a persisted action list; the inverse of keeping only ``[s.a for s in steps]``."""
    it = iter(actions)
    return _record(task, seed, traj_id, lambda state: next(it), len(actions), False, world)


def _record(task, seed, traj_id, act, max_steps, stop_on_success, world) -> Rollout:
    spec = TASKS[task]
    state, obs = reset(spec, seed, world)
    steps, truths, events = [], [FrameTruth.of(state)], []
    ok = False
    for t in range(max_steps):
        a = act(state)
        state, nxt, ev = step(state, a)
        steps.append(Step(t, obs, a, tuple(ev)))
        truths.append(FrameTruth.of(state))
        events.extend(ev)
        obs = nxt
        if spec.success(events):
            ok = True
            if stop_on_success:
                break
    traj = Trajectory(spec.instruction, tuple(steps), traj_id, task)
    return Rollout(traj, truths, ok)


def label(traj: Trajectory, truths: Optional[Sequence[FrameTruth]], space: Space | str,
          cfg: LabelerConfig = LabelerConfig()):
    space = Space(space)
    if space is Space.MOTION:
        return label_motion(traj, cfg)
    if space is Space.GROUNDING:
        return label_grounding(traj, truths, cfg)
    if space is Space.SKILL:
        return label_skill(traj, cfg)
    raise ConfigError(f"the rule labeler does not produce {space.value} labels")
