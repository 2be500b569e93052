"""Primitive environment actions, camera binning and the MineGrid action set.

An :class:`EnvAction` is the keyboard/mouse state for one tick: 23 binary
buttons plus a ``(pitch, yaw)`` camera delta in degrees.  Button order
follows the MineRL record layout and is used for every byte-stable
serialization in the package.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from chainact.errors import InvalidBin, OutOfRange

BUTTONS: tuple[str, ...] = (
    "ESC",
    "back",
    "drop",
    "forward",
    *(f"hotbar.{i}" for i in range(1, 10)),
    "inventory",
    "jump",
    "left",
    "right",
    "sneak",
    "sprint",
    "swapHands",
    "attack",
    "use",
    "pickItem",
)
_BUTTON_INDEX = {name: i for i, name in enumerate(BUTTONS)}
HOTBAR = tuple(f"hotbar.{i}" for i in range(1, 10))

MAX_CAMERA_DEGREES = 180.0


def _clean(x: float) -> float:
    # normalises -0.0 so equal actions also serialize identically
    return float(x) + 0.0


@dataclass(frozen=True)
class EnvAction:
    """One tick of raw control input.

    ``pressed`` holds the names of buttons in state 1; every other button in
    :data:`BUTTONS` is 0.  Simultaneous ``forward`` and ``back`` are legal
    here; representability is a codec concern.
    """

    pressed: frozenset[str] = frozenset()
    camera: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        pressed = frozenset(self.pressed)
        unknown = pressed - _BUTTON_INDEX.keys()
        if unknown:
            raise ValueError(f"unknown buttons: {sorted(unknown)}")
        if len(self.camera) != 2:
            raise ValueError("camera must be a (pitch, yaw) pair")
        pitch, yaw = (_clean(v) for v in self.camera)
        for v in (pitch, yaw):
            if not math.isfinite(v) or abs(v) > MAX_CAMERA_DEGREES:
                raise OutOfRange(f"camera delta {v!r} outside [-180, 180]")
        object.__setattr__(self, "pressed", pressed)
        object.__setattr__(self, "camera", (pitch, yaw))

    @classmethod
    def of(cls, *buttons: str, camera: tuple[float, float] = (0.0, 0.0)) -> EnvAction:
        return cls(frozenset(buttons), camera)

    @classmethod
    def from_buttons(cls, buttons: Mapping[str, int], camera=(0.0, 0.0)) -> EnvAction:
        return cls(frozenset(k for k, v in buttons.items() if v), tuple(camera))

    @property
    def buttons(self) -> dict[str, int]:
        return {name: int(name in self.pressed) for name in BUTTONS}

    def ordered_pressed(self) -> list[str]:
        return [name for name in BUTTONS if name in self.pressed]

    def is_null(self) -> bool:
        return not self.pressed and self.camera == (0.0, 0.0)

    # --- JSON record forms -------------------------------------------------

    def to_record(self) -> dict:
        """Canonical record: ``{"buttons": {...23 keys...}, "camera": [p, y]}``."""
        return {"buttons": self.buttons, "camera": [self.camera[0], self.camera[1]]}

    @classmethod
    def from_record(cls, record: Mapping) -> EnvAction:
        buttons = record["buttons"]
        missing = [b for b in BUTTONS if b not in buttons]
        if missing:
            raise ValueError(f"record is missing buttons: {missing}")
        extra = set(buttons) - _BUTTON_INDEX.keys()
        if extra:
            raise ValueError(f"record has unknown buttons: {sorted(extra)}")
        return cls.from_buttons(buttons, tuple(record["camera"]))

    def to_json(self) -> str:
        return json.dumps(self.to_record())

    @classmethod
    def from_json(cls, text: str) -> EnvAction:
        return cls.from_record(json.loads(text))

    def to_flat_record(self, compact_hotbar: bool = True) -> dict:
        """MineRL-style flat dict, camera first.

        With ``compact_hotbar`` the nine hotbar keys collapse to a single
        ``"hotbar.1-9"`` entry whenever they share a value, which is the
        abbreviation used in published example records.  Integral camera
        values are emitted as ints.
        """
        out: dict = {"camera": [_num(self.camera[0]), _num(self.camera[1])]}
        hot = [int(h in self.pressed) for h in HOTBAR]
        for name in BUTTONS:
            if name in HOTBAR:
                if compact_hotbar and len(set(hot)) == 1:
                    if name == "hotbar.1":
                        out["hotbar.1-9"] = hot[0]
                    continue
            out[name] = int(name in self.pressed)
        return out

    @classmethod
    def from_flat_record(cls, record: Mapping) -> EnvAction:
        buttons: dict[str, int] = {}
        for key, value in record.items():
            if key == "camera":
                continue
            if key == "hotbar.1-9":
                buttons.update({h: value for h in HOTBAR})
            elif key in _BUTTON_INDEX:
                buttons[key] = value
            else:
                raise ValueError(f"unknown key {key!r}")
        missing = [b for b in BUTTONS if b not in buttons]
        if missing:
            raise ValueError(f"record is missing buttons: {missing}")
        return cls.from_buttons(buttons, tuple(record["camera"]))


def _num(x: float):
    return int(x) if float(x).is_integer() else x


def null_action() -> EnvAction:
    return EnvAction()


# --- camera discretization ----------------------------------------------------


@dataclass(frozen=True)
class CameraBinConfig:
    bins_per_axis: int = 11
    mu: float = 10.0
    max_degrees: float = 180.0

    def __post_init__(self):
        if self.bins_per_axis < 1 or self.bins_per_axis % 2 == 0:
            raise ValueError("bins_per_axis must be a positive odd integer")
        if self.mu <= 0 or self.max_degrees <= 0:
            raise ValueError("mu and max_degrees must be positive")

    @property
    def center(self) -> int:
        return (self.bins_per_axis - 1) // 2


DEFAULT_CAMERA = CameraBinConfig()


def _compress(delta: float, cfg: CameraBinConfig) -> float:
    x = abs(delta) / cfg.max_degrees
    return math.copysign(math.log1p(cfg.mu * x) / math.log1p(cfg.mu), delta)


def _expand(y: float, cfg: CameraBinConfig) -> float:
    mag = math.expm1(abs(y) * math.log1p(cfg.mu)) / cfg.mu * cfg.max_degrees
    return _clean(math.copysign(mag, y))


def quantize_axis(delta: float, cfg: CameraBinConfig = DEFAULT_CAMERA) -> int:
    if not math.isfinite(delta) or abs(delta) > cfg.max_degrees:
        raise OutOfRange(f"camera delta {delta!r} outside ±{cfg.max_degrees}")
    y = _compress(delta, cfg)
    n = cfg.bins_per_axis
    return min(int(math.floor((y + 1.0) * n / 2.0)), n - 1)


def dequantize_axis(index: int, cfg: CameraBinConfig = DEFAULT_CAMERA) -> float:
    if not isinstance(index, int) or not 0 <= index < cfg.bins_per_axis:
        raise InvalidBin(f"bin {index!r} outside [0, {cfg.bins_per_axis})")
    if index == cfg.center:
        return 0.0
    # bin centre in companded space, measured from the middle bin so that
    # mirrored bins dequantize to exact negatives
    return _expand((index - cfg.center) * 2.0 / cfg.bins_per_axis, cfg)


def quantize_camera(delta, cfg: CameraBinConfig = DEFAULT_CAMERA) -> tuple[int, int]:
    """Map a ``(pitch, yaw)`` delta to per-axis bins via mu-law companding."""
    return quantize_axis(delta[0], cfg), quantize_axis(delta[1], cfg)


def dequantize_camera(bins, cfg: CameraBinConfig = DEFAULT_CAMERA) -> tuple[float, float]:
    return dequantize_axis(bins[0], cfg), dequantize_axis(bins[1], cfg)


# --- MineGrid-native actions --------------------------------------------------


class GridKind(enum.Enum):
    MoveForward = "MoveForward"
    MoveBack = "MoveBack"
    StrafeLeft = "StrafeLeft"
    StrafeRight = "StrafeRight"
    TurnLeft = "TurnLeft"
    TurnRight = "TurnRight"
    LookUp = "LookUp"
    LookDown = "LookDown"
    Jump = "Jump"
    Attack = "Attack"
    Use = "Use"
    Hotbar = "Hotbar"
    OpenInventory = "OpenInventory"
    CursorMove = "CursorMove"
    Click = "Click"
    NoOp = "NoOp"


@dataclass(frozen=True)
class GridAction:
    """A MineGrid action.  ``n`` is the hotbar slot, ``dx``/``dy`` the cursor step."""

    kind: GridKind
    n: int = 0
    dx: int = 0
    dy: int = 0

    def __post_init__(self):
        if self.kind is GridKind.Hotbar:
            if not 1 <= self.n <= 9:
                raise ValueError("hotbar slot must be in 1..9")
        elif self.n:
            raise ValueError(f"{self.kind.value} takes no slot")
        if self.kind is GridKind.CursorMove:
            if (self.dx, self.dy) == (0, 0) or max(abs(self.dx), abs(self.dy)) > MAX_CURSOR_STEP:
                raise ValueError("cursor step must be nonzero with |dx|, |dy| <= 1")
        elif self.dx or self.dy:
            raise ValueError(f"{self.kind.value} takes no cursor offset")

    def __str__(self) -> str:
        if self.kind is GridKind.Hotbar:
            return f"Hotbar({self.n})"
        if self.kind is GridKind.CursorMove:
            return f"CursorMove({self.dx}, {self.dy})"
        return self.kind.value


# cursor moves are one cell per tick; larger steps would alias turn/look deltas
MAX_CURSOR_STEP = 1


def _simple(kind: GridKind) -> GridAction:
    return GridAction(kind)


def all_grid_actions() -> list[GridAction]:
    out = []
    for kind in GridKind:
        if kind is GridKind.Hotbar:
            out.extend(GridAction(kind, n=i) for i in range(1, 10))
        elif kind is GridKind.CursorMove:
            out.extend(
                GridAction(kind, dx=dx, dy=dy)
                for dy in (-1, 0, 1)
                for dx in (-1, 0, 1)
                if (dx, dy) != (0, 0)
            )
        else:
            out.append(GridAction(kind))
    return out


@dataclass(frozen=True)
class GridConfig:
    turn_degrees: float = 15.0
    look_degrees: float = 15.0
    cursor_degrees_per_cell: float = 5.0
    camera: CameraBinConfig = field(default_factory=CameraBinConfig)


DEFAULT_GRID = GridConfig()

_BUTTON_ONLY = {
    GridKind.MoveForward: ("forward",),
    GridKind.MoveBack: ("back",),
    GridKind.StrafeLeft: ("left",),
    GridKind.StrafeRight: ("right",),
    GridKind.Jump: ("jump",),
    GridKind.Attack: ("attack",),
    GridKind.Use: ("use",),
    GridKind.OpenInventory: ("inventory",),
    # a GUI click is the left button; holding back keeps it distinct from
    # Attack (the world ignores movement keys while a screen is open)
    GridKind.Click: ("attack", "back"),
    GridKind.NoOp: (),
}


def grid_to_env(ga: GridAction, cfg: GridConfig = DEFAULT_GRID) -> EnvAction:
    kind = ga.kind
    if kind in _BUTTON_ONLY:
        return EnvAction.of(*_BUTTON_ONLY[kind])
    if kind is GridKind.Hotbar:
        return EnvAction.of(f"hotbar.{ga.n}")
    if kind is GridKind.TurnLeft:
        return EnvAction(camera=(0.0, -cfg.turn_degrees))
    if kind is GridKind.TurnRight:
        return EnvAction(camera=(0.0, cfg.turn_degrees))
    if kind is GridKind.LookUp:
        return EnvAction(camera=(-cfg.look_degrees, 0.0))
    if kind is GridKind.LookDown:
        return EnvAction(camera=(cfg.look_degrees, 0.0))
    if kind is GridKind.CursorMove:
        step = cfg.cursor_degrees_per_cell
        return EnvAction(camera=(ga.dy * step, ga.dx * step))
    raise AssertionError(kind)


def _image_table(cfg: GridConfig) -> dict[EnvAction, GridAction]:
    return {grid_to_env(ga, cfg): ga for ga in all_grid_actions()}


_IMAGE_CACHE: dict[GridConfig, dict[EnvAction, GridAction]] = {}


def unit_steps(delta: float, quantum: float) -> int:
    """Signed unit step for a camera delta: ±1 once |delta| reaches half a quantum."""
    if abs(delta) * 2.0 >= quantum:
        return 1 if delta > 0 else -1
    return 0


# Resolution order for actions outside grid_to_env's image.
PRIORITY: tuple[str, ...] = (
    "attack",
    "use",
    *HOTBAR,
    "inventory",
    "forward",
    "back",
    "left",
    "right",
    "jump",
)
_PRIORITY_KIND = {
    "attack": GridKind.Attack,
    "use": GridKind.Use,
    "inventory": GridKind.OpenInventory,
    "forward": GridKind.MoveForward,
    "back": GridKind.MoveBack,
    "left": GridKind.StrafeLeft,
    "right": GridKind.StrafeRight,
    "jump": GridKind.Jump,
}


def env_to_grid(a: EnvAction, cfg: GridConfig = DEFAULT_GRID) -> GridAction:
    """Left inverse of :func:`grid_to_env`; other inputs resolve by priority.

    Priority is attack > use > hotbar (lowest slot) > inventory > forward >
    back > left > right > jump > camera.  Camera resolves to a turn if the
    yaw reaches half a turn quantum, else a look, else a one-cell cursor move.
    """
    table = _IMAGE_CACHE.get(cfg)
    if table is None:
        table = _IMAGE_CACHE[cfg] = _image_table(cfg)
    hit = table.get(a)
    if hit is not None:
        return hit
    for name in PRIORITY:
        if name in a.pressed:
            if name in HOTBAR:
                return GridAction(GridKind.Hotbar, n=int(name.split(".")[1]))
            return GridAction(_PRIORITY_KIND[name])
    pitch, yaw = a.camera
    turn = unit_steps(yaw, cfg.turn_degrees)
    if turn:
        return _simple(GridKind.TurnRight if turn > 0 else GridKind.TurnLeft)
    look = unit_steps(pitch, cfg.look_degrees)
    if look:
        return _simple(GridKind.LookDown if look > 0 else GridKind.LookUp)
    dx = unit_steps(yaw, cfg.cursor_degrees_per_cell)
    dy = unit_steps(pitch, cfg.cursor_degrees_per_cell)
    if dx or dy:
        return GridAction(GridKind.CursorMove, dx=dx, dy=dy)
    return _simple(GridKind.NoOp)


def iter_pressed_subsets(names: Iterable[str]):
    """All subsets of ``names`` as frozensets (small helper for enumerations)."""
    names = list(names)
    for mask in range(1 << len(names)):
        yield frozenset(n for i, n in enumerate(names) if mask >> i & 1)
