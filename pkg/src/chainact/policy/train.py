"""Behaviour cloning: single stage, two-stage curriculum and All-in-One mixtures."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from torch import Tensor

from chainact.codecs import Motion, Space, parse_abstracted, parse_text
from chainact.errors import DatasetKindMismatch, NumericalOverflow
from chainact.labeler import Dataset, DatasetKind
from chainact.policy.features import FormatPrompt, coa_prompt, featurize, high_level_only
from chainact.policy.models import ChainPolicy
from chainact.policy.spaces import IGNORE, INTERACTION_GROUP, MASKED_INTERACTIONS, env_log_prob, env_target

_SPACE_ORDER = (Space.MOTION, Space.GROUNDING, Space.SKILL, Space.LATENT)

# which dataset kinds each role may consume
ALLOWED_KINDS = {
    "flat": {DatasetKind.D_a},
    "high": {DatasetKind.D_A},
    "low": {DatasetKind.D_CoA},
    "coa": {DatasetKind.D_A, DatasetKind.D_a, DatasetKind.D_CoA},
}


@dataclass(frozen=True)
class StageConfig:
    epochs: int = 20
    learning_rate: float = 1e-3
    batch_size: int = 256
    seed: int = 0


@dataclass
class LossCurve:
    loss: list[float] = field(default_factory=list)
    per_space: dict[str, list[float]] = field(default_factory=dict)

    def extend(self, other: LossCurve) -> None:
        self.loss.extend(other.loss)
        for k, v in other.per_space.items():
            self.per_space.setdefault(k, []).extend(v)

    def to_csv(self, path: str | Path) -> None:
        keys = sorted(self.per_space)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss", *keys])
            for i, loss in enumerate(self.loss):
                w.writerow([i, repr(loss), *(repr(self.per_space[k][i]) if i < len(self.per_space[k]) else "" for k in keys)])


@dataclass
class TensorData:
    """Featurised records ready for minibatching."""

    feats: Tensor  # (N, F)
    env: Tensor  # (N, 4) long, IGNORE where no primitive action
    space: Tensor  # (N,) long index into _SPACE_ORDER, -1 where no A
    A: Tensor  # (N, 3) long head targets, IGNORE padded
    emb: Tensor  # (N, E) conditioning embedding of A (zeros without A)
    motion: Tensor  # (N,) bool, A is a Motion action
    weight: Tensor  # (N,) float

    def __len__(self) -> int:
        return self.feats.shape[0]

    @staticmethod
    def concat(parts: Sequence[TensorData]) -> TensorData:
        return TensorData(*(torch.cat([getattr(p, f) for p in parts]) for f in TensorData.__dataclass_fields__))


def _prompt(kind: DatasetKind, space: Optional[Space]) -> FormatPrompt:
    if kind is DatasetKind.D_a:
        return FormatPrompt.TextOnly
    if kind is DatasetKind.D_A:
        return high_level_only(space)
    return coa_prompt(space)


def tensorize(model: ChainPolicy, dataset: Dataset, weight: float = 1.0) -> TensorData:
    """Featurise a dataset for ``model`` (its roles decide which targets are kept)."""
    if dataset.kind not in ALLOWED_KINDS[model.role]:
        raise DatasetKindMismatch(f"a {model.role} model cannot train on {dataset.kind.value}")
    n = len(dataset)
    feats = np.zeros((n, 0))
    rows, env, space, A_t, emb, motion = [], [], [], [], [], []
    K = model.cfg.codebook_size
    for r in dataset.records:
        sp = Space(r.space) if r.A is not None else None
        rows.append(featurize(r.obs, r.ins, _prompt(dataset.kind, sp)))
        A = parse_abstracted(r.A, expected=sp, codebook_size=K) if r.A is not None else None
        if A is not None and sp not in model.space_heads:
            raise DatasetKindMismatch(f"model has no {sp.value} space")
        is_motion = isinstance(A, Motion)
        if r.a is not None and model.has_low:
            t = list(env_target(parse_text(r.a)))
            gui = r.obs["mode"] != "world"
            if is_motion and gui and model.cfg.motion_gui_mask and t[INTERACTION_GROUP] in MASKED_INTERACTIONS:
                t[INTERACTION_GROUP] = IGNORE  # clicks are outside the Motion vocabulary
            env.append(t)
        else:
            env.append([IGNORE] * 4)
        if A is not None and model.has_high:
            tgt = list(model.space_heads[sp].target(A))
            A_t.append(tgt + [IGNORE] * (3 - len(tgt)))
            space.append(_SPACE_ORDER.index(sp))
        else:
            A_t.append([IGNORE] * 3)
            space.append(-1)
        emb.append(model.embedder(A) if model.has_low and dataset.kind is DatasetKind.D_CoA else model.embedder(None))
        motion.append(is_motion and dataset.kind is DatasetKind.D_CoA)
    feats = np.stack(rows) if rows else feats
    dt = model.dtype
    return TensorData(
        torch.as_tensor(feats, dtype=dt),
        torch.as_tensor(env, dtype=torch.long).reshape(n, 4),
        torch.as_tensor(space, dtype=torch.long),
        torch.as_tensor(A_t, dtype=torch.long).reshape(n, 3),
        torch.as_tensor(np.stack(emb) if emb else np.zeros((0, model.embedder.dim)), dtype=dt),
        torch.as_tensor(motion, dtype=torch.bool),
        torch.full((n,), float(weight), dtype=dt),
    )


def batch_loss(model: ChainPolicy, data: TensorData, idx: Optional[Tensor] = None) -> tuple[Tensor, dict[str, Tensor]]:
    """Mean negative log-likelihood over a minibatch, plus per-space sums."""
    if idx is not None:
        data = TensorData(*(getattr(data, f)[idx] for f in TensorData.__dataclass_fields__))
    h = model.encode(data.feats)
    total = h.new_zeros(())
    per_space: dict[str, Tensor] = {}
    if model.has_high:
        for i, sp in enumerate(_SPACE_ORDER):
            rows = data.space == i
            if sp not in model.space_heads or not bool(rows.any()):
                continue
            head = model.space_heads[sp]
            lp = head.log_prob(model.high_logits(h[rows], sp), data.A[rows][:, : head.target_width])
            nll = -(data.weight[rows] * lp).sum()
            per_space[sp.value] = nll.detach()
            total = total + nll
    if model.has_low:
        rows = (data.env >= 0).any(dim=1)
        if bool(rows.any()):
            logits = model.env_logits(h[rows], data.emb[rows], data.feats[rows], data.motion[rows])
            lp = env_log_prob(logits, data.env[rows])
            nll = -(data.weight[rows] * lp).sum()
            per_space["env"] = nll.detach()
            total = total + nll
    return total / max(len(data), 1), per_space


def train_bc(
    model: ChainPolicy,
    datasets: Sequence[Dataset],
    cfg: StageConfig = StageConfig(),
    weights: Optional[Sequence[float]] = None,
) -> LossCurve:
    """Minimise the behaviour-cloning NLL of ``model`` on ``datasets``.

    A dataset whose weight is 0 is dropped before batching, so the run is
    identical to training without it.

    Raises:
        DatasetKindMismatch: a dataset kind does not fit the model role.
        NumericalOverflow: the loss became non-finite.
    """
    weights = list(weights) if weights is not None else [1.0] * len(datasets)
    parts = [tensorize(model, d, w) for d, w in zip(datasets, weights) if w != 0]
    data = TensorData.concat(parts)
    return _fit(model, data, cfg)


def _fit(model: ChainPolicy, data: TensorData, cfg: StageConfig) -> LossCurve:
    gen = torch.Generator().manual_seed(cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    curve = LossCurve()
    n = len(data)
    model.train()
    for _ in range(cfg.epochs):
        order = torch.randperm(n, generator=gen)
        tot = 0.0
        sums: dict[str, float] = {}
        for i in range(0, n, cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            loss, per = batch_loss(model, data, idx)
            if not torch.isfinite(loss):
                raise NumericalOverflow(f"non-finite BC loss at epoch {len(curve.loss)}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            tot += loss.item() * len(idx)
            for k, v in per.items():
                sums[k] = sums.get(k, 0.0) + v.item()
        curve.loss.append(tot / n)
        for k, v in sums.items():
            curve.per_space.setdefault(k, []).append(v / n)
    model.eval()
    return curve


def train_curriculum(
    model: ChainPolicy,
    stage1: Sequence[Dataset],
    stage2: Sequence[Dataset],
    cfg: StageConfig = StageConfig(),
    stage2_cfg: Optional[StageConfig] = None,
    weights2: Optional[Sequence[float]] = None,
) -> LossCurve:
    """Stage 1 on D_A and D_a, then stage 2 on D_CoA at half the learning rate."""
    for d in stage1:
        if d.kind is DatasetKind.D_CoA:
            raise DatasetKindMismatch("stage 1 takes D_A and D_a only")
    for d in stage2:
        if d.kind is not DatasetKind.D_CoA:
            raise DatasetKindMismatch("stage 2 takes D_CoA only")
    stage2_cfg = stage2_cfg or replace(cfg, learning_rate=cfg.learning_rate / 2)
    curve = train_bc(model, stage1, cfg) if stage1 else LossCurve()
    curve.extend(train_bc(model, stage2, stage2_cfg, weights2))
    return curve


def train_all_in_one(
    model: ChainPolicy,
    datasets: Sequence[Dataset],
    cfg: StageConfig = StageConfig(),
    weights: Optional[Sequence[float]] = None,
) -> LossCurve:
    """Same objective as :func:`train_bc` over a union of space-tagged datasets."""
    return train_bc(model, datasets, cfg, weights)


@torch.no_grad()
def per_space_nll(model: ChainPolicy, dataset: Dataset) -> dict[str, float]:
    data = tensorize(model, dataset)
    _, per = batch_loss(model, data)
    return {k: v.item() / max(len(data), 1) for k, v in per.items()}
