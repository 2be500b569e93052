"""Exhaustive and randomised round-trip suites for every action codec."""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from chainact.action_core import BUTTONS, MAX_CAMERA_DEGREES, EnvAction
from chainact.codecs import (
    DEFAULT_RAW,
    GROUNDING_VERBS,
    MOTION_VERBS,
    SKILL_TAXONOMY,
    AbstractedAction,
    Grounding,
    GroundingVerb,
    Latent,
    Motion,
    Raw,
    Skill,
    Space,
    Text,
    action_from_factors,
    decode_raw,
    encode_raw,
    parse_abstracted,
    parse_text,
    serialize_abstracted,
    serialize_text,
)

GRAMMAR_FRAME = (640, 360)  # wide enough for every generated coordinate
_OBJECTS = ("oak_log", "birch_log", "stone", "water", "sheep", "zombie", "spider", "crafting_table", "planks")


@dataclass(frozen=True)
class SuiteResult:
    name: str
    cases: int
    failures: int
    seconds: float
    first_failure: str = ""

    @property
    def ok(self) -> bool:
        return self.failures == 0


def representable_actions() -> Iterator[EnvAction]:
    """Every action the raw codec can express, one per factor combination."""
    for f in itertools.product(*(range(n) for n in DEFAULT_RAW.group_sizes)):
        yield action_from_factors(f)


def random_env_action(rng: np.random.Generator) -> EnvAction:
    pressed = frozenset(b for b in BUTTONS if rng.random() < 0.2)
    if rng.random() < 0.3:
        camera = (0.0, 0.0)
    else:
        camera = tuple(float(x) for x in rng.uniform(-MAX_CAMERA_DEGREES, MAX_CAMERA_DEGREES, 2))
        if rng.random() < 0.5:
            camera = tuple(round(c, int(rng.integers(0, 3))) for c in camera)
    return EnvAction(pressed, camera)


def random_abstracted(space: Space, rng: np.random.Generator) -> AbstractedAction:
    space = Space(space)
    if space is Space.RAW:
        return Raw(encode_raw(action_from_factors([int(rng.integers(n)) for n in DEFAULT_RAW.group_sizes])))
    if space is Space.TEXT:
        return Text(serialize_text(random_env_action(rng)))
    if space is Space.MOTION:
        k = int(rng.integers(1, 4))
        return Motion(tuple(MOTION_VERBS[i] for i in rng.choice(len(MOTION_VERBS), k, replace=False)))
    if space is Space.GROUNDING:
        verb = GROUNDING_VERBS[int(rng.integers(len(GROUNDING_VERBS)))]
        if verb is GroundingVerb.Explore:
            return Grounding(verb)
        obj = _OBJECTS[int(rng.integers(len(_OBJECTS)))]
        return Grounding(verb, obj, (int(rng.integers(GRAMMAR_FRAME[0])), int(rng.integers(GRAMMAR_FRAME[1]))))
    if space is Space.SKILL:
        return Skill(SKILL_TAXONOMY[int(rng.integers(len(SKILL_TAXONOMY)))])
    return Latent(int(rng.integers(0, 15000)))


def _run(name: str, cases: Iterator, check: Callable[[object], bool]) -> SuiteResult:
    t0 = time.perf_counter()
    n = bad = 0
    first = ""
    for case in cases:
        n += 1
        try:
            good = check(case)
        except Exception as exc:  # a raise is a failed round trip
            good, first = False, first or f"{case!r}: {exc}"
        if not good:
            bad += 1
            first = first or repr(case)
    return SuiteResult(name, n, bad, time.perf_counter() - t0, first)


def raw_suite() -> SuiteResult:
    def check(a: EnvAction) -> bool:
        tokens = encode_raw(a)
        return decode_raw(tokens) == a and encode_raw(decode_raw(tokens)) == tokens

    return _run("raw", representable_actions(), check)


def text_suite(n: int = 10_000, seed: int = 0) -> SuiteResult:
    rng = np.random.default_rng(seed)

    def check(a: EnvAction) -> bool:
        s = serialize_text(a)
        return parse_text(s) == a and serialize_text(parse_text(s)) == s

    return _run("text", (random_env_action(rng) for _ in range(n)), check)


def grammar_suite(space: Space, n: int = 1_000, seed: int = 0) -> SuiteResult:
    rng = np.random.default_rng([seed, list(Space).index(Space(space))])
    space = Space(space)

    def check(A: AbstractedAction) -> bool:
        s = serialize_abstracted(A)
        back = parse_abstracted(s, expected=space, frame=GRAMMAR_FRAME)
        return back == A and serialize_abstracted(back) == s

    return _run(f"grammar:{space.value}", (random_abstracted(space, rng) for _ in range(n)), check)


def run_all(n_text: int = 10_000, n_grammar: int = 1_000, seed: int = 0) -> list[SuiteResult]:
    out = [raw_suite(), text_suite(n_text, seed)]
    out += [grammar_suite(sp, n_grammar, seed) for sp in (Space.RAW, Space.TEXT, Space.MOTION, Space.GROUNDING,
                                                          Space.SKILL, Space.LATENT)]
    return out
