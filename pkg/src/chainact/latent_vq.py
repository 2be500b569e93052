"""VQ-VAE latent action tokenizer over fixed-length windows of primitive actions."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np
import torch
from torch import Tensor, nn
from torch.nn import functional as F

from chainact.action_core import EnvAction
from chainact.codecs import DEFAULT_RAW, Latent, action_factors, action_from_factors
from chainact.errors import ConfigError, EmptyCodebook, InvalidCode, NumericalOverflow, UntrainedModel

GROUP_SIZES = DEFAULT_RAW.group_sizes  # movement, pitch, yaw, interaction
STEP_DIM = sum(GROUP_SIZES)
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class VQConfig:
    codebook_size: int = 64
    embedding_dim: int = 32
    commitment_beta: float = 0.25
    hidden: tuple[int, ...] = (128,)
    learning_rate: float = 1e-3
    epochs: int = 200
    batch_size: int = 64
    window: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.codebook_size < 1 or self.embedding_dim < 1:
            raise ConfigError("codebook_size and embedding_dim must be >= 1")
        if self.commitment_beta <= 0:
            raise ConfigError("commitment_beta must be positive")
        if self.window < 1:
            raise ConfigError("window must be >= 1")
        object.__setattr__(self, "hidden", tuple(self.hidden))


# -- window features -------------------------------------------------------


def window_factors(actions: Sequence[EnvAction]) -> np.ndarray:
    """``(L, 4)`` integer targets: group-local indices per step."""
    return np.array([action_factors(a) for a in actions], dtype=np.int64).reshape(len(actions), 4)


def factors_to_features(factors: np.ndarray) -> np.ndarray:
    """One-hot view ``(..., L * 35)`` of ``(..., L, 4)`` factor indices."""
    parts = [np.eye(n)[factors[..., g]] for g, n in enumerate(GROUP_SIZES)]
    feat = np.concatenate(parts, axis=-1)
    return feat.reshape(*factors.shape[:-2], -1)


def window_features(actions: Sequence[EnvAction]) -> np.ndarray:
    return factors_to_features(window_factors(actions))


# -- model -----------------------------------------------------------------


def _mlp(sizes: Sequence[int]) -> nn.Sequential:
    layers: list[nn.Module] = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        layers.append(nn.Linear(a, b))
        if i < len(sizes) - 2:
            layers.append(nn.ReLU())
    return nn.Sequential(*layers)


def quantize(z_e: Tensor, codebook: Tensor) -> tuple[Tensor, Tensor]:
    """Nearest codebook row by squared Euclidean distance.

    Works on a single ``(d,)`` vector or a ``(N, d)`` batch.  Ties resolve to
    the lowest index.

    Raises:
        EmptyCodebook: ``codebook`` has no rows.
    """
    if codebook.shape[0] == 0:
        raise EmptyCodebook("codebook has no entries")
    single = z_e.dim() == 1
    z = z_e.reshape(-1, codebook.shape[1])
    dist = (z[:, None, :] - codebook[None, :, :]).pow(2).sum(-1)
    code = dist.argmin(dim=1)
    z_q = codebook[code]
    if single:
        return code[0], z_q[0]
    return code, z_q


class VQLoss(NamedTuple):
    total: Tensor
    rec: Tensor
    codebook_term: Tensor
    commit_term: Tensor


class VQModel(nn.Module):
    """MLP encoder, ``K x d`` codebook and MLP decoder producing per-group logits."""

    def __init__(self, cfg: VQConfig = VQConfig()):
        super().__init__()
        self.cfg = cfg
        in_dim = cfg.window * STEP_DIM
        self.encoder = _mlp([in_dim, *cfg.hidden, cfg.embedding_dim])
        self.decoder = _mlp([cfg.embedding_dim, *cfg.hidden, in_dim])
        self.codebook = nn.Parameter(torch.randn(cfg.codebook_size, cfg.embedding_dim))
        # near-uniform initial reconstructions
        with torch.no_grad():
            self.decoder[-1].weight.mul_(0.01)
            self.decoder[-1].bias.zero_()
        self.register_buffer("usage", torch.zeros(cfg.codebook_size, dtype=torch.long))
        self.steps = 0
        self.trained = False

    def encode(self, x: Tensor) -> Tensor:
        return self.encoder(x)

    def decode(self, z: Tensor) -> Tensor:
        """Logits shaped ``(N, L, 35)``."""
        return self.decoder(z).reshape(z.shape[0], self.cfg.window, STEP_DIM)

    def forward(self, x: Tensor, count: bool = True):
        z_e = self.encode(x)
        code, z_q = quantize(z_e, self.codebook)
        if count:
            self.usage += torch.bincount(code, minlength=self.cfg.codebook_size)
        z_st = z_e + (z_q - z_e).detach()  # straight-through
        return z_e, code, z_q, self.decode(z_st)

    def reset_usage(self) -> None:
        self.usage.zero_()


def reconstruction_loss(logits: Tensor, targets: Tensor) -> Tensor:
    """Sum of per-step, per-group cross-entropies, averaged over the batch."""
    total = logits.new_zeros(())
    off = 0
    for g, n in enumerate(GROUP_SIZES):
        lg = logits[..., off:off + n].reshape(-1, n)
        total = total + F.cross_entropy(lg, targets[..., g].reshape(-1), reduction="sum")
        off += n
    return total / logits.shape[0]


def vq_loss(model: VQModel, targets: Tensor, count: bool = False) -> VQLoss:
    """Loss terms for a batch of ``(N, L, 4)`` factor targets.

    ``total = rec + ||sg(z_e) - e||^2 + beta * ||z_e - sg(e)||^2``, squared
    norms summed over the embedding and averaged over the batch.

    Raises:
        NumericalOverflow: any term is not finite.
    """
    x = _features_tensor(targets, model)
    z_e, code, z_q, logits = model(x, count=count)
    rec = reconstruction_loss(logits, targets)
    n = z_e.shape[0]
    codebook_term = (z_e.detach() - z_q).pow(2).sum() / n
    commit_term = (z_e - z_q.detach()).pow(2).sum() / n
    total = rec + codebook_term + model.cfg.commitment_beta * commit_term
    if not torch.isfinite(total):
        raise NumericalOverflow(
            f"non-finite VQ loss: rec={rec.item()} codebook={codebook_term.item()} commit={commit_term.item()}"
        )
    return VQLoss(total, rec, codebook_term, commit_term)


def _features_tensor(targets: Tensor, model: VQModel) -> Tensor:
    dtype = model.codebook.dtype
    parts = [F.one_hot(targets[..., g], n).to(dtype) for g, n in enumerate(GROUP_SIZES)]
    return torch.cat(parts, dim=-1).reshape(targets.shape[0], -1)


def perplexity(usage: Tensor | np.ndarray) -> float:
    """exp of the entropy of the code-usage distribution."""
    u = np.asarray(usage, dtype=np.float64)
    if u.sum() == 0:
        return 0.0
    p = u / u.sum()
    p = p[p > 0]
    return float(np.exp(-(p * np.log(p)).sum()))


@dataclass
class TrainingCurve:
    loss: list[float] = field(default_factory=list)
    rec: list[float] = field(default_factory=list)
    perplexity: list[float] = field(default_factory=list)
    dead_codes: list[int] = field(default_factory=list)


def train_vq(windows: np.ndarray | Sequence[Sequence[EnvAction]], cfg: VQConfig = VQConfig()) -> tuple[VQModel, TrainingCurve]:
    """Fit a VQ-VAE on action windows.

    Args:
        windows: Either ``(N, L, 4)`` factor arrays or a list of action windows.
        cfg: Model and optimiser settings.

    Returns:
        The trained model and its per-epoch training curve.

    Raises:
        NumericalOverflow: the loss diverged.
    """
    targets = _as_targets(windows, cfg)
    gen = torch.Generator().manual_seed(cfg.seed)
    with torch.random.fork_rng():
        torch.manual_seed(cfg.seed)
        model = VQModel(cfg)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    curve = TrainingCurve()
    n = targets.shape[0]
    for _ in range(cfg.epochs):
        model.reset_usage()
        order = torch.randperm(n, generator=gen)
        tot = rec = 0.0
        for i in range(0, n, cfg.batch_size):
            batch = targets[order[i:i + cfg.batch_size]]
            loss = vq_loss(model, batch, count=True)
            opt.zero_grad()
            loss.total.backward()
            opt.step()
            model.steps += 1
            tot += loss.total.item() * batch.shape[0]
            rec += loss.rec.item() * batch.shape[0]
        curve.loss.append(tot / n)
        curve.rec.append(rec / n)
        curve.perplexity.append(perplexity(model.usage))
        dead = (model.usage == 0).nonzero().flatten()
        curve.dead_codes.append(int(dead.numel()))
        if dead.numel():
            with torch.no_grad():
                pick = torch.randint(n, (dead.numel(),), generator=gen)
                z = model.encode(_features_tensor(targets[pick], model))
                model.codebook[dead] = z
    model.trained = True
    model.reset_usage()
    return model, curve


def _as_targets(windows, cfg: VQConfig) -> Tensor:
    if isinstance(windows, np.ndarray) or isinstance(windows, Tensor):
        arr = np.asarray(windows, dtype=np.int64)
    else:
        arr = np.stack([window_factors(w) for w in windows])
    if arr.ndim != 3 or arr.shape[1:] != (cfg.window, 4):
        raise ConfigError(f"windows must be shaped (N, {cfg.window}, 4), got {arr.shape}")
    return torch.from_numpy(arr)


# -- tokenizer interface ---------------------------------------------------


def _require_trained(model: VQModel) -> None:
    if not model.trained:
        raise UntrainedModel("train or load the VQ model first")


@torch.no_grad()
def encode_codes(model: VQModel, factors: np.ndarray) -> np.ndarray:
    _require_trained(model)
    x = _features_tensor(torch.as_tensor(factors, dtype=torch.long), model)
    code, _ = quantize(model.encode(x), model.codebook)
    return code.numpy()


def encode_actions(model: VQModel, window: Sequence[EnvAction]) -> Latent:
    """Latent token for one window of ``L`` actions."""
    if len(window) != model.cfg.window:
        raise ConfigError(f"window must hold {model.cfg.window} actions")
    return Latent(int(encode_codes(model, window_factors(window)[None])[0]))


@torch.no_grad()
def decode_factors(model: VQModel, code: int) -> np.ndarray:
    _require_trained(model)
    if not 0 <= int(code) < model.cfg.codebook_size:
        raise InvalidCode(f"code {code} outside codebook of {model.cfg.codebook_size}")
    logits = model.decode(model.codebook[int(code)][None])[0]
    out = []
    off = 0
    for n in GROUP_SIZES:
        out.append(logits[:, off:off + n].argmax(-1))
        off += n
    return torch.stack(out, dim=-1).numpy()


def decode_latent(model: VQModel, code: int | Latent) -> list[EnvAction]:
    """Argmax decode of a code into ``L`` primitive actions."""
    code = code.code if isinstance(code, Latent) else code
    return [action_from_factors(f) for f in decode_factors(model, code)]


def reconstruction_rate(model: VQModel, factors: np.ndarray) -> float:
    """Fraction of windows whose argmax decoding matches every step exactly."""
    codes = encode_codes(model, factors)
    hits = sum(np.array_equal(decode_factors(model, c), f) for c, f in zip(codes, factors))
    return hits / len(factors)


# -- checkpoints -----------------------------------------------------------


def save_checkpoint(model: VQModel, path: str | Path) -> None:
    Path(path).write_text(checkpoint_json(model))


def load_checkpoint(path: str | Path) -> VQModel:
    return checkpoint_from_json(Path(path).read_text())


def checkpoint_json(model: VQModel) -> str:
    state = model.state_dict()
    doc = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.cfg),
        "trained": model.trained,
        "shapes": {k: list(v.shape) for k, v in state.items()},
        "weights": {k: v.detach().reshape(-1).tolist() for k, v in state.items()},
    }
    return json.dumps(doc)


def checkpoint_from_json(text: str) -> VQModel:
    doc = json.loads(text)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {doc.get('version')}")
    cfg = VQConfig(**doc["config"])
    model = VQModel(cfg)
    state = model.state_dict()
    loaded = {}
    for k, ref in state.items():
        if list(ref.shape) != doc["shapes"].get(k):
            raise ConfigError(f"shape mismatch for {k}: {doc['shapes'].get(k)} vs {list(ref.shape)}")
        loaded[k] = torch.tensor(doc["weights"][k], dtype=ref.dtype).reshape(ref.shape)
    model.load_state_dict(loaded)
    model.trained = bool(doc["trained"])
    return model


def codebook_bytes(model: VQModel) -> bytes:
    return model.codebook.detach().numpy().tobytes()


# -- synthetic motif corpus ------------------------------------------------

MOTIFS = ("forward", "turn_left_arc", "attack_burst", "strafe", "noop")


def motif_window(motif: str, variant: int, L: int = 8) -> list[EnvAction]:
    """Five motion motifs, three variants each."""
    v = variant % 3
    if motif == "forward":
        extra = ("jump",) if v == 1 else ()
        return [EnvAction.of("forward", *(extra if t % 4 == 3 else ())) if v != 2 else
                EnvAction.of("forward", "left" if t % 2 else "right") for t in range(L)]
    if motif == "turn_left_arc":
        yaw = (-10.0, -25.0, -5.0)[v]
        return [EnvAction.of("forward", camera=(0.0, yaw)) for _ in range(L)]
    if motif == "attack_burst":
        pitch = (0.0, 10.0, -10.0)[v]
        return [EnvAction.of("attack", camera=(pitch if t == 0 else 0.0, 0.0)) for t in range(L)]
    if motif == "strafe":
        side = ("left", "right", "left")[v]
        return [EnvAction.of(side, *(("back",) if v == 2 else ())) for _ in range(L)]
    if motif == "noop":
        return [EnvAction(camera=((0.0, 0.0, 5.0)[v] if t == L - 1 else 0.0, 0.0)) for t in range(L)]
    raise ValueError(f"unknown motif {motif!r}")


def motif_corpus(repeats: int = 40, seed: int = 0, L: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """Shuffled ``(N, L, 4)`` factor windows and their motif labels."""
    rng = np.random.default_rng(seed)
    windows, labels = [], []
    for m, motif in enumerate(MOTIFS):
        for _ in range(repeats):
            windows.append(window_factors(motif_window(motif, int(rng.integers(3)), L)))
            labels.append(m)
    order = rng.permutation(len(windows))
    return np.stack(windows)[order], np.asarray(labels)[order]


# -- trajectory labelling --------------------------------------------------


def _pad(actions: Sequence[EnvAction], L: int) -> list[EnvAction]:
    # short tail windows are padded with the null action
    from chainact.action_core import null_action

    return list(actions) + [null_action()] * (L - len(actions))


def trajectory_windows(actions: Sequence[EnvAction], L: int = 8, stride: Optional[int] = None) -> list[list[EnvAction]]:
    """Length-``L`` windows starting every ``stride`` steps (default ``L``)."""
    stride = stride or L
    return [_pad(actions[s:s + L], L) for s in range(0, len(actions), stride)]


def label_windows(model: VQModel, actions: Sequence[EnvAction], stride: Optional[int] = None) -> list[tuple[range, Latent]]:
    """Latent labels in the ``(window, A)`` form the dataset builder expects."""
    L = model.cfg.window
    stride = stride or L
    wins = trajectory_windows(actions, L, stride)
    if not wins:
        return []
    codes = encode_codes(model, np.stack([window_factors(w) for w in wins]))
    T = len(actions)
    return [(range(s, min(s + L, T)), Latent(int(c))) for s, c in zip(range(0, T, stride), codes)]
