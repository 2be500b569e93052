"""Serialization between actions and their token / text surfaces.

Surfaces:

* raw tokens: four reserved-token markers, one per group
  (movement, pitch bin, yaw bin, interaction) out of a 35-token vocabulary;
* text actions: ``Action: move(dx='4.0', dy='-1.0') and keyDown(keys=(...))``;
* abstracted actions: motion verb lists, grounded verb calls, skill phrases
  and latent codes.

All parsers are strict: anything they accept is regenerated byte-for-byte
by the matching serializer.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass
from typing import Optional, Union

from chainact.action_core import (
    BUTTONS,
    DEFAULT_CAMERA,
    CameraBinConfig,
    EnvAction,
    dequantize_camera,
    quantize_camera,
)
from chainact.errors import (
    BadLength,
    CoordinateOutOfFrame,
    GrammarError,
    NonNumericDelta,
    NotRepresentable,
    SpaceMismatch,
    UnknownKeyName,
    UnknownToken,
    UnknownVerb,
    WrongGroup,
)

# --- raw reserved tokens ------------------------------------------------------

MOVEMENT_FB = ("forward", "back", None)
MOVEMENT_LR = ("left", "right", None)
INTERACTIONS = ("attack", "use", "jump", None)
RAW_BUTTONS = frozenset({"forward", "back", "left", "right", "jump", "attack", "use"})

TokenSequence = tuple[int, ...]


@dataclass(frozen=True)
class RawCodecConfig:
    camera: CameraBinConfig = DEFAULT_CAMERA

    @property
    def group_sizes(self) -> tuple[int, int, int, int]:
        n = self.camera.bins_per_axis
        return (len(MOVEMENT_FB) * len(MOVEMENT_LR), n, n, len(INTERACTIONS))

    @property
    def offsets(self) -> tuple[int, int, int, int]:
        sizes = self.group_sizes
        return (0, sizes[0], sizes[0] + sizes[1], sizes[0] + sizes[1] + sizes[2])

    @property
    def vocab_size(self) -> int:
        return sum(self.group_sizes)


DEFAULT_RAW = RawCodecConfig()


def action_factors(a: EnvAction, cfg: RawCodecConfig = DEFAULT_RAW) -> tuple[int, int, int, int]:
    """Group-local indices ``(movement, pitch_bin, yaw_bin, interaction)``.

    Raises:
        NotRepresentable: a pressed button falls outside the raw subset, or two
            buttons of the same group are pressed together.
    """
    extra = a.pressed - RAW_BUTTONS
    if extra:
        raise NotRepresentable(sorted(extra)[0])
    fb = [b for b in ("forward", "back") if b in a.pressed]
    lr = [b for b in ("left", "right") if b in a.pressed]
    inter = [b for b in ("attack", "use", "jump") if b in a.pressed]
    for group in (fb, lr, inter):
        if len(group) > 1:
            raise NotRepresentable(group[1], f"shares a token group with {group[0]!r}")
    mov = MOVEMENT_FB.index(fb[0] if fb else None) * 3 + MOVEMENT_LR.index(lr[0] if lr else None)
    pitch, yaw = quantize_camera(a.camera, cfg.camera)
    return mov, pitch, yaw, INTERACTIONS.index(inter[0] if inter else None)


def action_from_factors(factors, cfg: RawCodecConfig = DEFAULT_RAW) -> EnvAction:
    mov, pitch, yaw, inter = (int(f) for f in factors)
    names = [MOVEMENT_FB[mov // 3], MOVEMENT_LR[mov % 3], INTERACTIONS[inter]]
    return EnvAction.of(*(n for n in names if n), camera=dequantize_camera((pitch, yaw), cfg.camera))


def encode_raw(a: EnvAction, cfg: RawCodecConfig = DEFAULT_RAW) -> TokenSequence:
    return tuple(o + f for o, f in zip(cfg.offsets, action_factors(a, cfg)))


def token_group(token: int, cfg: RawCodecConfig = DEFAULT_RAW) -> int:
    if not isinstance(token, int) or not 0 <= token < cfg.vocab_size:
        raise UnknownToken(f"token {token!r} outside vocabulary of {cfg.vocab_size}")
    offsets = cfg.offsets
    return max(g for g, o in enumerate(offsets) if token >= o)


def decode_raw(tokens, cfg: RawCodecConfig = DEFAULT_RAW) -> EnvAction:
    tokens = tuple(tokens)
    if len(tokens) != 4:
        raise BadLength(f"expected 4 tokens, got {len(tokens)}")
    factors = []
    for pos, tok in enumerate(tokens):
        if token_group(tok, cfg) != pos:
            raise WrongGroup(pos, tok)
        factors.append(tok - cfg.offsets[pos])
    return action_from_factors(factors, cfg)


def render_tokens(tokens) -> str:
    return "".join(f"<|reserved_token_{int(t)}|>" for t in tokens)


_MARKER = re.compile(r"<\|reserved_token_(0|[1-9][0-9]*)\|>")


def parse_tokens(text: str) -> TokenSequence:
    pos, out = 0, []
    while pos < len(text):
        m = _MARKER.match(text, pos)
        if m is None:
            raise GrammarError(pos, "'<|reserved_token_K|>'", text)
        out.append(int(m.group(1)))
        pos = m.end()
    if not out:
        raise GrammarError(0, "at least one reserved-token marker", text)
    return tuple(out)


# --- text actions -------------------------------------------------------------

KEY_NAMES: dict[str, str] = {
    "forward": "keyboard.w",
    "left": "keyboard.a",
    "back": "keyboard.s",
    "right": "keyboard.d",
    "sprint": "keyboard.left.control",
    "jump": "keyboard.space",
    "sneak": "keyboard.left.shift",
    "attack": "mouse.left",
    "use": "mouse.right",
    # the rest of the 23 buttons, so every EnvAction has a text form
    "ESC": "keyboard.escape",
    "drop": "keyboard.backspace",
    "inventory": "keyboard.e",
    "swapHands": "keyboard.f",
    "pickItem": "mouse.middle",
    **{f"hotbar.{i}": f"keyboard.{i}" for i in range(1, 10)},
}
_KEY_TO_BUTTON = {v: k for k, v in KEY_NAMES.items()}

# Modifiers first, then WASD in keyboard order, then the remaining buttons.
TEXT_KEY_ORDER: tuple[str, ...] = (
    "sprint",
    "sneak",
    "forward",
    "left",
    "back",
    "right",
    "jump",
    *(b for b in BUTTONS if b not in {"sprint", "sneak", "forward", "left", "back", "right", "jump"}),
)
_TEXT_RANK = {b: i for i, b in enumerate(TEXT_KEY_ORDER)}

ACTION_PREFIX = "Action: "


def _fmt_delta(x: float) -> str:
    return repr(float(x))


def serialize_text(a: EnvAction) -> str:
    parts = []
    pitch, yaw = a.camera
    if (pitch, yaw) != (0.0, 0.0):
        parts.append(f"move(dx='{_fmt_delta(yaw)}', dy='{_fmt_delta(pitch)}')")
    if a.pressed:
        keys = sorted(a.pressed, key=_TEXT_RANK.__getitem__)
        parts.append("keyDown(keys=(" + ", ".join(KEY_NAMES[k] for k in keys) + "))")
    if not parts:
        return ACTION_PREFIX + "noop()"
    return ACTION_PREFIX + " and ".join(parts)


class _Cursor:
    """Minimal scanner for the strict text grammars."""

    def __init__(self, text: str, pos: int = 0):
        self.text = text
        self.pos = pos

    def error(self, expected: str) -> GrammarError:
        return GrammarError(self.pos, expected, self.text)

    def at(self, lit: str) -> bool:
        return self.text.startswith(lit, self.pos)

    def expect(self, lit: str) -> None:
        if not self.at(lit):
            raise self.error(repr(lit))
        self.pos += len(lit)

    def comma(self) -> None:
        self.expect(",")
        if self.at(" "):
            self.pos += 1

    def take_until(self, stop: str) -> str:
        end = self.text.find(stop, self.pos)
        if end < 0:
            raise self.error(repr(stop))
        out = self.text[self.pos : end]
        self.pos = end
        return out

    def done(self) -> bool:
        return self.pos >= len(self.text)


def _parse_delta(raw: str) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise NonNumericDelta(f"{raw!r} is not a number") from None
    if not math.isfinite(value) or raw.strip() != raw:
        raise NonNumericDelta(f"{raw!r} is not a finite decimal")
    return value


def parse_text(text: str) -> EnvAction:
    """Parse a text action.  Inverse of :func:`serialize_text`.

    A single space after each comma is optional; nothing else is.
    """
    cur = _Cursor(text)
    cur.expect(ACTION_PREFIX)
    if cur.at("noop()"):
        cur.expect("noop()")
        if not cur.done():
            raise cur.error("end of input")
        return EnvAction()
    camera = (0.0, 0.0)
    pressed: list[str] = []
    seen_move = seen_keys = False
    while True:
        if cur.at("move(") and not seen_move and not seen_keys:
            cur.expect("move(dx='")
            dx = _parse_delta(cur.take_until("'"))
            cur.expect("'")
            cur.comma()
            cur.expect("dy='")
            dy = _parse_delta(cur.take_until("'"))
            cur.expect("')")
            if (dy, dx) == (0.0, 0.0):
                raise GrammarError(cur.pos, "a nonzero move", text)
            camera = (dy, dx)
            seen_move = True
        elif cur.at("keyDown(") and not seen_keys:
            cur.expect("keyDown(keys=(")
            while True:
                start = cur.pos
                name = re.match(r"[A-Za-z0-9_.]+", text[cur.pos :])
                if name is None:
                    raise cur.error("a key name")
                key = name.group(0)
                if key not in _KEY_TO_BUTTON:
                    raise UnknownKeyName(f"unknown key name {key!r} at offset {start}")
                button = _KEY_TO_BUTTON[key]
                if pressed and _TEXT_RANK[button] <= _TEXT_RANK[pressed[-1]]:
                    raise GrammarError(start, "keys in canonical order without repeats", text)
                pressed.append(button)
                cur.pos += len(key)
                if cur.at("))"):
                    cur.expect("))")
                    break
                cur.comma()
            seen_keys = True
        else:
            raise cur.error("'move(' or 'keyDown('")
        if cur.done():
            break
        cur.expect(" and ")
    return EnvAction(frozenset(pressed), camera)


# --- abstracted actions -------------------------------------------------------


class Space(str, enum.Enum):
    RAW = "raw"
    TEXT = "text"
    MOTION = "motion"
    GROUNDING = "grounding"
    SKILL = "skill"
    LATENT = "latent"


class MotionVerb(enum.Enum):
    GoForward = "Go forward"
    GoBackward = "Go backward"
    StrafeLeft = "Strafe left"
    StrafeRight = "Strafe right"
    TurnLeft = "Turn left"
    TurnRight = "Turn right"
    LookUp = "Look up"
    LookDown = "Look down"
    Jump = "Jump"
    Sprint = "Sprint"
    Sneak = "Sneak"
    Stop = "Stop"


MOTION_VERBS = tuple(MotionVerb)
_MOTION_RANK = {v: i for i, v in enumerate(MOTION_VERBS)}
_MOTION_BY_SURFACE = {v.value: v for v in MOTION_VERBS}


class GroundingVerb(enum.Enum):
    Mine = "Mine"
    Approach = "Approach"
    Attack = "Attack"
    Use = "Use"
    Craft = "Craft"
    Place = "Place"
    Interact = "Interact"
    Explore = "Explore"


GROUNDING_VERBS = tuple(GroundingVerb)
_GROUNDING_BY_NAME = {v.value: v for v in GROUNDING_VERBS}

SKILL_TAXONOMY: tuple[str, ...] = (
    "chop down trees",
    "mine stone",
    "find water",
    "open the crafting table",
    "open the furnace",
    "craft planks",
    "craft sticks",
    "craft a crafting table",
    "smelt stone",
    "kill the zombie",
    "kill the spider",
    "kill the sheep",
    "explore the world",
)

DEFAULT_FRAME = (9, 9)


@dataclass(frozen=True)
class Raw:
    tokens: TokenSequence

    space = Space.RAW


@dataclass(frozen=True)
class Text:
    s: str

    space = Space.TEXT

    @classmethod
    def of(cls, a: EnvAction) -> Text:
        return cls(serialize_text(a))


@dataclass(frozen=True)
class Motion:
    verbs: tuple[MotionVerb, ...]

    space = Space.MOTION

    def __post_init__(self):
        verbs = tuple(sorted(set(self.verbs), key=_MOTION_RANK.__getitem__))
        if not verbs:
            raise ValueError("a motion action needs at least one verb")
        if len(verbs) != len(self.verbs):
            raise ValueError("motion verbs must be duplicate-free")
        object.__setattr__(self, "verbs", verbs)


@dataclass(frozen=True)
class Grounding:
    verb: GroundingVerb
    object: Optional[str] = None
    coordinate: Optional[tuple[int, int]] = None

    space = Space.GROUNDING

    def __post_init__(self):
        if self.verb is GroundingVerb.Explore:
            if self.object is not None or self.coordinate is not None:
                raise ValueError("Explore carries no object or coordinate")
        elif self.object is None or self.coordinate is None:
            raise ValueError(f"{self.verb.value} needs an object and a coordinate")
        else:
            if not re.fullmatch(r"[A-Za-z0-9_]+", self.object):
                raise ValueError(f"bad object name {self.object!r}")
            object.__setattr__(self, "coordinate", (int(self.coordinate[0]), int(self.coordinate[1])))


@dataclass(frozen=True)
class Skill:
    s: str

    space = Space.SKILL


@dataclass(frozen=True)
class Latent:
    code: int

    space = Space.LATENT

    def __post_init__(self):
        if self.code < 0:
            raise ValueError("latent code must be non-negative")


AbstractedAction = Union[Raw, Text, Motion, Grounding, Skill, Latent]


def serialize_abstracted(A: AbstractedAction) -> str:
    if isinstance(A, Motion):
        return ACTION_PREFIX + ", ".join(v.value for v in A.verbs) + "."
    if isinstance(A, Grounding):
        if A.verb is GroundingVerb.Explore:
            return ACTION_PREFIX + "Explore()"
        col, row = A.coordinate
        return f"{ACTION_PREFIX}{A.verb.value}(object='{A.object}', position=[{col}, {row}])"
    if isinstance(A, Skill):
        return ACTION_PREFIX + A.s
    if isinstance(A, Latent):
        return render_tokens([A.code])
    if isinstance(A, Raw):
        return render_tokens(A.tokens)
    if isinstance(A, Text):
        return A.s
    raise TypeError(f"not an abstracted action: {A!r}")


_GROUNDING_RE = re.compile(r"object='([A-Za-z0-9_]+)', position=\[(0|-?[1-9][0-9]*), (0|-?[1-9][0-9]*)\]\)")
_TEXT_PRODUCTIONS = ("noop", "move", "keyDown")


def _check(result: AbstractedAction, expected: Optional[Space]) -> AbstractedAction:
    if expected is not None and result.space is not Space(expected):
        raise SpaceMismatch(f"expected a {Space(expected).value} action, parsed {result.space.value}")
    return result


def parse_abstracted(
    s: str,
    expected: Optional[Space] = None,
    frame: Optional[tuple[int, int]] = DEFAULT_FRAME,
    codebook_size: Optional[int] = None,
) -> AbstractedAction:
    """Parse any abstracted-action surface string.

    Args:
        s: The surface string.
        expected: If given, parsing into any other space raises SpaceMismatch.
        frame: ``(cols, rows)`` of the observation frame that grounding
            coordinates must fall inside; ``None`` disables the check.
        codebook_size: Upper bound for latent codes, when known.
    """
    if s.startswith("<|"):
        tokens = parse_tokens(s)
        if len(tokens) == 1 and expected != Space.RAW:
            code = tokens[0]
            if codebook_size is not None and code >= codebook_size:
                raise GrammarError(0, f"a latent code below {codebook_size}", s)
            return _check(Latent(code), expected)
        if len(tokens) != 4:
            raise BadLength(f"raw actions have 4 tokens, got {len(tokens)}")
        return _check(Raw(tokens), expected)

    cur = _Cursor(s)
    cur.expect(ACTION_PREFIX)
    body = s[cur.pos :]
    call = re.match(r"([A-Za-z]+)\(", body)
    if call is not None:
        name = call.group(1)
        if name in _TEXT_PRODUCTIONS:
            parse_text(s)
            return _check(Text(s), expected)
        verb = _GROUNDING_BY_NAME.get(name)
        if verb is None:
            raise UnknownVerb(f"unknown grounding verb {name!r}")
        rest = body[call.end() :]
        if verb is GroundingVerb.Explore:
            if rest != ")":
                raise GrammarError(cur.pos + call.end(), "')'", s)
            return _check(Grounding(verb), expected)
        m = _GROUNDING_RE.fullmatch(rest)
        if m is None:
            raise GrammarError(cur.pos + call.end(), "object='name', position=[col, row])", s)
        col, row = int(m.group(2)), int(m.group(3))
        if frame is not None and not (0 <= col < frame[0] and 0 <= row < frame[1]):
            raise CoordinateOutOfFrame(f"({col}, {row}) outside frame {frame}")
        return _check(Grounding(verb, m.group(1), (col, row)), expected)

    if body in SKILL_TAXONOMY:
        return _check(Skill(body), expected)
    if body.endswith("."):
        parts = body[:-1].split(", ")
        verbs = []
        for part in parts:
            verb = _MOTION_BY_SURFACE.get(part)
            if verb is None:
                raise UnknownVerb(f"unknown motion verb {part!r}")
            verbs.append(verb)
        ranks = [_MOTION_RANK[v] for v in verbs]
        if ranks != sorted(set(ranks)):
            raise GrammarError(cur.pos, "motion verbs in canonical order without repeats", s)
        return _check(Motion(tuple(verbs)), expected)
    raise GrammarError(cur.pos, "a motion list, grounding call, text action or known skill", s)
