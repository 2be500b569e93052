"""Categorical heads for abstracted-action spaces and the factored env-action head.

Every head maps a logit vector to a normalised distribution over its space,
scores targets, decodes greedily or by sampling, and embeds an action as a
fixed-width vector for conditioning the low-level decoder.
"""

from __future__ import annotations

import itertools
from typing import Optional, Sequence

import numpy as np
import torch
from torch import Tensor
from torch.nn import functional as F

from chainact.action_core import EnvAction
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
    MotionVerb,
    Skill,
    Space,
    action_factors,
    action_from_factors,
)
from chainact.errors import UnknownSpace, UnsupportedAbstraction
from chainact.minegrid import VIEW
from chainact.minegrid.world import CELL_OBJECT, ITEMS, MOB_KINDS

IGNORE = -1  # target slot unused (Explore's coordinate and object)

OBJECTS: tuple[str, ...] = tuple(sorted(set(CELL_OBJECT.values()) | set(MOB_KINDS) | set(ITEMS)))
_OBJECT_INDEX = {o: i for i, o in enumerate(OBJECTS)}


def categorical_sample(logits: Tensor, rng: np.random.Generator) -> int:
    """Inverse-CDF draw from softmax(logits) using one uniform from ``rng``."""
    p = torch.softmax(logits.detach().double(), dim=-1).numpy()
    c = np.cumsum(p)
    return int(min(np.searchsorted(c, rng.random() * c[-1], side="right"), len(p) - 1))


class SpaceHead:
    space: Space
    n_logits: int
    emb_dim: int
    target_width: int = 1

    def target(self, A: AbstractedAction) -> tuple[int, ...]:
        raise NotImplementedError

    def from_target(self, target: Sequence[int]) -> AbstractedAction:
        raise NotImplementedError

    def log_prob(self, logits: Tensor, targets: Tensor) -> Tensor:
        """``(N,)`` log-probabilities of ``(N, target_width)`` targets."""
        return F.log_softmax(logits, dim=-1).gather(-1, targets[:, :1]).squeeze(-1)

    def greedy(self, logits: Tensor) -> AbstractedAction:
        return self.from_target((int(logits.argmax()),))

    def sample(self, logits: Tensor, rng: np.random.Generator) -> AbstractedAction:
        return self.from_target((categorical_sample(logits, rng),))

    def embed(self, A: AbstractedAction) -> np.ndarray:
        out = np.zeros(self.emb_dim)
        out[self.target(A)[0]] = 1.0
        return out

    def enumerate(self) -> list[AbstractedAction]:
        return [self.from_target((i,)) for i in range(self.n_logits)]

    def _check(self, A) -> None:
        if getattr(A, "space", None) is not self.space:
            raise UnsupportedAbstraction(f"{type(A).__name__} is not a {self.space.value} action")


# -- motion ----------------------------------------------------------------

_FB = (None, MotionVerb.GoForward, MotionVerb.GoBackward)
_LR = (None, MotionVerb.StrafeLeft, MotionVerb.StrafeRight)
_TURN = (None, MotionVerb.TurnLeft, MotionVerb.TurnRight)
_LOOK = (None, MotionVerb.LookUp, MotionVerb.LookDown)
_BIT = ((None, MotionVerb.Jump), (None, MotionVerb.Sprint), (None, MotionVerb.Sneak))


def legal_motion_combos() -> list[Motion]:
    """All compatible verb sets; the empty set is ``Stop``."""
    out = []
    for parts in itertools.product(_FB, _LR, _TURN, _LOOK, *_BIT):
        verbs = tuple(v for v in parts if v is not None)
        out.append(Motion(verbs or (MotionVerb.Stop,)))
    return out


class MotionHead(SpaceHead):
    space = Space.MOTION

    def __init__(self):
        self.combos = legal_motion_combos()
        self.index = {m: i for i, m in enumerate(self.combos)}
        self.n_logits = len(self.combos)
        self.emb_dim = len(MOTION_VERBS)

    def target(self, A) -> tuple[int]:
        self._check(A)
        try:
            return (self.index[A],)
        except KeyError:
            raise UnsupportedAbstraction(f"incompatible motion verbs {A}") from None

    def from_target(self, target) -> Motion:
        return self.combos[int(target[0])]

    def embed(self, A) -> np.ndarray:
        self._check(A)
        out = np.zeros(self.emb_dim)
        for v in A.verbs:
            out[MOTION_VERBS.index(v)] = 1.0
        return out


# -- grounding -------------------------------------------------------------

_EXPLORE = GROUNDING_VERBS.index(GroundingVerb.Explore)
N_COORDS = VIEW * VIEW


class GroundingHead(SpaceHead):
    """Verb, then (unless Explore) coordinate and object as independent factors."""

    space = Space.GROUNDING
    target_width = 3

    def __init__(self):
        self.n_verbs = len(GROUNDING_VERBS)
        self.n_objects = len(OBJECTS)
        self.n_logits = self.n_verbs + N_COORDS + self.n_objects
        self.emb_dim = self.n_logits

    def split(self, logits: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        v = self.n_verbs
        return logits[..., :v], logits[..., v:v + N_COORDS], logits[..., v + N_COORDS:]

    def target(self, A) -> tuple[int, int, int]:
        self._check(A)
        v = GROUNDING_VERBS.index(A.verb)
        if v == _EXPLORE:
            return (v, IGNORE, IGNORE)
        col, row = A.coordinate
        if not (0 <= col < VIEW and 0 <= row < VIEW):
            raise UnsupportedAbstraction(f"coordinate {A.coordinate} outside the {VIEW}x{VIEW} frame")
        if A.object not in _OBJECT_INDEX:
            raise UnsupportedAbstraction(f"unknown object {A.object!r}")
        return (v, row * VIEW + col, _OBJECT_INDEX[A.object])

    def from_target(self, target) -> Grounding:
        v, c, o = (int(x) for x in target)
        verb = GROUNDING_VERBS[v]
        if v == _EXPLORE:
            return Grounding(verb)
        return Grounding(verb, OBJECTS[o], (c % VIEW, c // VIEW))

    def log_prob(self, logits: Tensor, targets: Tensor) -> Tensor:
        lv, lc, lo = (F.log_softmax(x, dim=-1) for x in self.split(logits))
        verb = lv.gather(-1, targets[:, :1]).squeeze(-1)
        grounded = targets[:, 0] != _EXPLORE
        c = targets[:, 1].clamp(min=0)
        o = targets[:, 2].clamp(min=0)
        rest = lc.gather(-1, c[:, None]).squeeze(-1) + lo.gather(-1, o[:, None]).squeeze(-1)
        return verb + torch.where(grounded, rest, torch.zeros_like(rest))

    def greedy(self, logits: Tensor) -> Grounding:
        lv, lc, lo = self.split(logits)
        return self.from_target((int(lv.argmax()), int(lc.argmax()), int(lo.argmax())))

    def sample(self, logits: Tensor, rng: np.random.Generator) -> Grounding:
        lv, lc, lo = self.split(logits)
        v = categorical_sample(lv, rng)
        if v == _EXPLORE:
            return Grounding(GROUNDING_VERBS[v])
        return self.from_target((v, categorical_sample(lc, rng), categorical_sample(lo, rng)))

    def embed(self, A) -> np.ndarray:
        v, c, o = self.target(A)
        out = np.zeros(self.emb_dim)
        out[v] = 1.0
        if v != _EXPLORE:
            out[self.n_verbs + c] = 1.0
            out[self.n_verbs + N_COORDS + o] = 1.0
        return out

    def enumerate(self) -> list[Grounding]:
        out = [Grounding(GroundingVerb.Explore)]
        for v in range(self.n_verbs):
            if v != _EXPLORE:
                out.extend(self.from_target((v, c, o)) for c in range(N_COORDS) for o in range(self.n_objects))
        return out


# -- skill / latent --------------------------------------------------------


class SkillHead(SpaceHead):
    space = Space.SKILL
    n_logits = len(SKILL_TAXONOMY)
    emb_dim = len(SKILL_TAXONOMY)

    def target(self, A) -> tuple[int]:
        self._check(A)
        if A.s not in SKILL_TAXONOMY:
            raise UnsupportedAbstraction(f"skill {A.s!r} outside the taxonomy")
        return (SKILL_TAXONOMY.index(A.s),)

    def from_target(self, target) -> Skill:
        return Skill(SKILL_TAXONOMY[int(target[0])])


class LatentHead(SpaceHead):
    space = Space.LATENT

    def __init__(self, codebook_size: int):
        self.n_logits = self.emb_dim = int(codebook_size)

    def target(self, A) -> tuple[int]:
        self._check(A)
        if not 0 <= A.code < self.n_logits:
            raise UnsupportedAbstraction(f"latent code {A.code} outside codebook of {self.n_logits}")
        return (A.code,)

    def from_target(self, target) -> Latent:
        return Latent(int(target[0]))


def make_head(space: Space | str, codebook_size: int = 64) -> SpaceHead:
    try:
        space = Space(space)
    except ValueError:
        raise UnknownSpace(str(space)) from None
    if space is Space.MOTION:
        return MotionHead()
    if space is Space.GROUNDING:
        return GroundingHead()
    if space is Space.SKILL:
        return SkillHead()
    if space is Space.LATENT:
        return LatentHead(codebook_size)
    raise UnknownSpace(space.value)


class Embedder:
    """Concatenated per-space embedding slots; absent spaces stay zero."""

    def __init__(self, spaces: Sequence[Space], codebook_size: int = 64):
        self.spaces = tuple(Space(s) for s in spaces)
        self.heads = {s: make_head(s, codebook_size) for s in self.spaces}
        self.offsets = {}
        off = 0
        for s in self.spaces:
            self.offsets[s] = off
            off += self.heads[s].emb_dim
        self.dim = off

    def __call__(self, A: Optional[AbstractedAction]) -> np.ndarray:
        out = np.zeros(self.dim)
        if A is None:
            return out
        space = getattr(A, "space", None)
        if space not in self.heads:
            raise UnsupportedAbstraction(f"no embedding slot for {space}")
        head = self.heads[space]
        out[self.offsets[space]:self.offsets[space] + head.emb_dim] = head.embed(A)
        return out


# -- factored env-action head ----------------------------------------------

ENV_GROUPS = DEFAULT_RAW.group_sizes
ENV_LOGITS = sum(ENV_GROUPS)
_ENV_OFFSETS = DEFAULT_RAW.offsets
INTERACTION_GROUP = 3
MASKED_INTERACTIONS = (0, 1)  # attack, use


def env_split(logits: Tensor) -> list[Tensor]:
    return [logits[..., o:o + n] for o, n in zip(_ENV_OFFSETS, ENV_GROUPS)]


def env_target(a: EnvAction) -> tuple[int, int, int, int]:
    return action_factors(a)


def env_log_prob(logits: Tensor, targets: Tensor) -> Tensor:
    """Sum of the four group log-probabilities; ``IGNORE`` targets contribute 0."""
    total = torch.zeros(logits.shape[:-1], dtype=logits.dtype)
    for g, part in enumerate(env_split(logits)):
        t = targets[..., g]
        lp = F.log_softmax(part, dim=-1).gather(-1, t.clamp(min=0)[..., None]).squeeze(-1)
        total = total + torch.where(t >= 0, lp, torch.zeros_like(lp))
    return total


def env_greedy(logits: Tensor) -> EnvAction:
    return action_from_factors([int(p.argmax()) for p in env_split(logits)])


def env_sample(logits: Tensor, rng: np.random.Generator) -> EnvAction:
    return action_from_factors([categorical_sample(p, rng) for p in env_split(logits)])
