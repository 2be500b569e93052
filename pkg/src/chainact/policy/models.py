"""Flat, hierarchical and chain-of-action policies over the flat feature vector.

All four model kinds share one module layout: an MLP trunk over the
features, optional per-space abstracted-action heads (``high``), and an
optional factored env-action head over ``[trunk(feat), embed(A)]``
(``low``).  The roles differ only in which parts exist and what data they
are trained on.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from torch import Tensor, nn

from chainact.action_core import EnvAction
from chainact.codecs import DEFAULT_RAW, AbstractedAction, Latent, Motion, Space
from chainact.errors import ConfigError, UnknownSpace, UnsupportedAbstraction
from chainact.policy.features import FEATURE_DIM, OFFSETS, PROMPTS, FormatPrompt, gui_mask
from chainact.policy.spaces import (
    ENV_LOGITS,
    INTERACTION_GROUP,
    MASKED_INTERACTIONS,
    Embedder,
    MotionHead,
    SpaceHead,
    env_greedy,
    env_log_prob,
    env_sample,
    env_target,
    make_head,
)

CHECKPOINT_VERSION = 1
_INTERACTION_OFFSET = DEFAULT_RAW.offsets[INTERACTION_GROUP]


@dataclass(frozen=True)
class PolicyConfig:
    hidden: int = 256
    depth: int = 2
    spaces: tuple[str, ...] = ()
    codebook_size: int = 64
    seed: int = 0
    # Motion verbs cannot express clicks: mask attack/use on GUI screens
    motion_gui_mask: bool = True

    def __post_init__(self):
        if self.hidden < 1 or self.depth < 1:
            raise ConfigError("hidden and depth must be >= 1")
        object.__setattr__(self, "spaces", tuple(Space(s).value for s in self.spaces))


class ChainPolicy(nn.Module):
    role = "coa"
    has_high = True
    has_low = True

    def __init__(self, cfg: PolicyConfig = PolicyConfig()):
        super().__init__()
        if self.has_high and not cfg.spaces:
            raise ConfigError(f"a {self.role} model needs at least one abstracted space")
        self.cfg = cfg
        self.spaces = tuple(Space(s) for s in cfg.spaces)
        self.space_heads: dict[Space, SpaceHead] = {s: make_head(s, cfg.codebook_size) for s in self.spaces}
        self.embedder = Embedder(self.spaces if self.has_low else (), cfg.codebook_size)
        with torch.random.fork_rng():
            torch.manual_seed(cfg.seed)
            layers: list[nn.Module] = []
            width = FEATURE_DIM
            for _ in range(cfg.depth):
                layers += [nn.Linear(width, cfg.hidden), nn.ReLU()]
                width = cfg.hidden
            self.trunk = nn.Sequential(*layers)
            self.high = nn.ModuleDict(
                {s.value: nn.Linear(cfg.hidden, self.space_heads[s].n_logits) for s in self.spaces}
                if self.has_high
                else {}
            )
            self.low = (
                nn.Sequential(
                    nn.Linear(cfg.hidden + self.embedder.dim, cfg.hidden),
                    nn.ReLU(),
                    nn.Linear(cfg.hidden, ENV_LOGITS),
                )
                if self.has_low
                else None
            )

    # -- raw forward pieces ------------------------------------------------

    @property
    def dtype(self) -> torch.dtype:
        return next(self.parameters()).dtype

    def as_tensor(self, feat) -> Tensor:
        t = torch.as_tensor(np.asarray(feat), dtype=self.dtype)
        return t if t.dim() == 2 else t[None]

    def encode(self, feat: Tensor) -> Tensor:
        return self.trunk(feat)

    def high_logits(self, h: Tensor, space: Space) -> Tensor:
        if not self.has_high or space not in self.space_heads:
            raise UnknownSpace(f"{self.role} model has no {Space(space).value} head")
        return self.high[space.value](h)

    def env_logits(self, h: Tensor, emb: Tensor, feat: Tensor, motion_rows: Optional[Tensor] = None) -> Tensor:
        if not self.has_low:
            raise ConfigError(f"a {self.role} model has no env-action head")
        logits = self.low(torch.cat([h, emb], dim=-1)) if emb.shape[-1] else self.low(h)
        if self.cfg.motion_gui_mask and motion_rows is not None and bool(motion_rows.any()):
            blocked = (gui_mask(feat) > 0) & motion_rows
            cols = torch.tensor([_INTERACTION_OFFSET + i for i in MASKED_INTERACTIONS])
            mask = torch.zeros_like(logits, dtype=torch.bool)
            mask[:, cols] = True
            logits = logits.masked_fill(mask & blocked[:, None], float("-inf"))
        return logits

    def embed(self, A: Optional[AbstractedAction]) -> Tensor:
        return torch.as_tensor(self.embedder(A), dtype=self.dtype)[None]

    # -- checkpoints -------------------------------------------------------

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @staticmethod
    def load(path: str | Path) -> ChainPolicy:
        return ChainPolicy.from_json(Path(path).read_text())

    def to_json(self) -> str:
        state = self.state_dict()
        doc = {
            "version": CHECKPOINT_VERSION,
            "role": self.role,
            "config": asdict(self.cfg),
            "shapes": {k: list(v.shape) for k, v in state.items()},
            "weights": {k: v.detach().double().reshape(-1).tolist() for k, v in state.items()},
        }
        return json.dumps(doc)

    @staticmethod
    def from_json(text: str) -> ChainPolicy:
        doc = json.loads(text)
        if doc.get("version") != CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {doc.get('version')}")
        cls = ROLES[doc["role"]]
        cfg = doc["config"]
        cfg["spaces"] = tuple(cfg["spaces"])
        model = cls(PolicyConfig(**cfg))
        ref = model.state_dict()
        state = {}
        for k, v in ref.items():
            if doc["shapes"].get(k) != list(v.shape):
                raise ConfigError(f"shape mismatch for {k}")
            state[k] = torch.tensor(doc["weights"][k], dtype=v.dtype).reshape(v.shape)
        model.load_state_dict(state)
        return model


class FlatPolicy(ChainPolicy):
    """Env-action head straight off the trunk; no abstracted action."""

    role = "flat"
    has_high = False


class HighLevelPolicy(ChainPolicy):
    """Per-space abstracted-action heads only."""

    role = "high"
    has_low = False


class LowLevelDecoder(ChainPolicy):
    """Env-action head conditioned on an abstracted action."""

    role = "low"
    has_high = False

    def __init__(self, cfg: PolicyConfig = PolicyConfig()):
        if not cfg.spaces:
            raise ConfigError("a low-level decoder needs the spaces it decodes")
        super().__init__(cfg)


class UnifiedCoA(ChainPolicy):
    """Shared trunk; head 1 emits A, head 2 emits a given A."""

    role = "coa"


ROLES = {c.role: c for c in (FlatPolicy, HighLevelPolicy, LowLevelDecoder, UnifiedCoA)}


class VQStreamDecoder:
    """Low-level decoder backed by a VQ model: streams a decoded window step by step."""

    role = "vq_stream"

    def __init__(self, vq_model):
        self.vq = vq_model
        self.window = vq_model.cfg.window
        self.reset()

    def _decode(self, code: int) -> list[EnvAction]:
        from chainact.latent_vq import decode_latent

        return decode_latent(self.vq, code)

    def reset(self) -> None:
        self._code: Optional[int] = None
        self._actions: list[EnvAction] = []
        self._i = 0

    def next_action(self, A: Latent) -> EnvAction:
        if not isinstance(A, Latent):
            raise UnsupportedAbstraction("a VQ stream decoder only decodes latent actions")
        if A.code != self._code or self._i >= self.window:
            self._code, self._actions, self._i = A.code, self._decode(A.code), 0
        a = self._actions[self._i]
        self._i += 1
        return a


# -- inference API ---------------------------------------------------------


def prompt_of(feat) -> FormatPrompt:
    lo = OFFSETS["prompt"]
    row = np.asarray(feat)[..., lo:lo + len(PROMPTS)].reshape(-1, len(PROMPTS))[0]
    return PROMPTS[int(row.argmax())]


def _space_for(model: ChainPolicy, feat, space) -> Space:
    if space is None:
        space = prompt_of(feat).space
        if space is None:
            if len(model.spaces) != 1:
                raise UnknownSpace("prompt names no space and the model has several")
            space = model.spaces[0]
    space = Space(space)
    if space not in model.space_heads:
        raise UnknownSpace(f"model has no {space.value} head")
    return space


@torch.no_grad()
def high_distribution(model: ChainPolicy, feat, space: Space | str) -> Tensor:
    """Raw logits of a high-level head (one row)."""
    space = _space_for(model, feat, space)
    return model.high_logits(model.encode(model.as_tensor(feat)), space)[0]


@torch.no_grad()
def sample_abstracted(
    model: ChainPolicy,
    feat,
    space: Space | str | None = None,
    rng: Optional[np.random.Generator] = None,
    greedy: bool = False,
) -> AbstractedAction:
    """Draw (or argmax) an abstracted action from the ``space`` head.

    Raises:
        UnknownSpace: the model has no head for ``space``.
    """
    space = _space_for(model, feat, space)
    logits = model.high_logits(model.encode(model.as_tensor(feat)), space)[0]
    head = model.space_heads[space]
    if greedy or rng is None:
        return head.greedy(logits)
    return head.sample(logits, rng)


def _motion_rows(A: Optional[AbstractedAction]) -> Tensor:
    return torch.tensor([isinstance(A, Motion)])


@torch.no_grad()
def env_distribution(model: ChainPolicy, feat, A: Optional[AbstractedAction]) -> Tensor:
    f = model.as_tensor(feat)
    return model.env_logits(model.encode(f), model.embed(A), f, _motion_rows(A))[0]


@torch.no_grad()
def decode_low(
    model,
    feat,
    A: Optional[AbstractedAction],
    rng: Optional[np.random.Generator] = None,
    greedy: bool = False,
) -> EnvAction:
    """Primitive action from the low-level decoder given ``A``.

    Raises:
        UnsupportedAbstraction: ``A`` is from a space the decoder was not built for.
    """
    if isinstance(model, VQStreamDecoder):
        return model.next_action(A)
    if A is not None and getattr(A, "space", None) not in model.embedder.heads:
        raise UnsupportedAbstraction(f"decoder has no slot for {getattr(A, 'space', A)}")
    logits = env_distribution(model, feat, A)
    if greedy or rng is None:
        return env_greedy(logits)
    return env_sample(logits, rng)


@torch.no_grad()
def act_flat(model: FlatPolicy, feat, rng: Optional[np.random.Generator] = None, greedy: bool = False) -> EnvAction:
    return decode_low(model, feat, None, rng, greedy)


def _targets(head: SpaceHead, A) -> Tensor:
    return torch.tensor([head.target(A)], dtype=torch.long)


@torch.no_grad()
def log_prob_high(model: ChainPolicy, feat, A: AbstractedAction) -> float:
    head = model.space_heads[A.space]
    logits = model.high_logits(model.encode(model.as_tensor(feat)), A.space)
    return float(head.log_prob(logits, _targets(head, A))[0])


@torch.no_grad()
def log_prob_low(model: ChainPolicy, feat, A: Optional[AbstractedAction], a: EnvAction) -> float:
    logits = env_distribution(model, feat, A)
    return float(env_log_prob(logits[None], torch.tensor([env_target(a)]))[0])


def log_joint(model: UnifiedCoA, feat, A: AbstractedAction, a: EnvAction) -> float:
    """``log P(A | feat) + log P(a | feat, A)``."""
    return log_prob_high(model, feat, A) + log_prob_low(model, feat, A, a)


@torch.no_grad()
def coa_step(
    model: UnifiedCoA,
    feat,
    rng: Optional[np.random.Generator] = None,
    greedy: bool = False,
    space: Space | str | None = None,
) -> tuple[AbstractedAction, EnvAction, float]:
    """Sample ``A`` from head 1, then ``a`` from head 2 given ``A``."""
    space = _space_for(model, feat, space)
    f = model.as_tensor(feat)
    h = model.encode(f)
    head = model.space_heads[space]
    hl = model.high_logits(h, space)[0]
    A = head.greedy(hl) if greedy or rng is None else head.sample(hl, rng)
    el = model.env_logits(h, model.embed(A), f, _motion_rows(A))[0]
    a = env_greedy(el) if greedy or rng is None else env_sample(el, rng)
    lp_A = head.log_prob(hl[None], _targets(head, A))[0]
    lp_a = env_log_prob(el[None], torch.tensor([env_target(a)]))[0]
    return A, a, float(lp_A) + float(lp_a)


@torch.no_grad()
def marginal_log_prob(model: UnifiedCoA, feat, a: EnvAction, space: Space | str = Space.MOTION) -> float:
    """``log sum_A P(A | feat) P(a | feat, A)`` over an enumerable space (batched)."""
    space = Space(space)
    head = model.space_heads[space]
    if isinstance(head, MotionHead) or space in (Space.SKILL, Space.LATENT):
        actions = head.enumerate()
    else:
        raise UnsupportedAbstraction(f"{space.value} is too large to enumerate")
    f = model.as_tensor(feat)
    h = model.encode(f)
    lp_A = torch.log_softmax(model.high_logits(h, space)[0], dim=-1)
    n = len(actions)
    emb = torch.as_tensor(np.stack([model.embedder(A) for A in actions]), dtype=model.dtype)
    motion = torch.tensor([isinstance(A, Motion) for A in actions])
    el = model.env_logits(h.expand(n, -1), emb, f.expand(n, -1), motion)
    lp_a = env_log_prob(el, torch.tensor([env_target(a)] * n))
    idx = torch.tensor([head.target(A)[0] for A in actions])
    return float(torch.logsumexp(lp_A[idx] + lp_a, dim=0))
