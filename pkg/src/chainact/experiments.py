"""End-to-end desk experiments: expert data, labelled datasets, trained agents, evaluation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

from chainact.codecs import Space
from chainact.errors import ConfigError
from chainact.harness import EvalConfig, Fast, PolicyBundle, Report, Slow, evaluate
from chainact.labeler import (
    Dataset,
    DatasetKind,
    LabelerConfig,
    Rollout,
    build_dataset,
    expert_rollout,
    label,
    mix_datasets,
)
from chainact.latent_vq import VQConfig, VQModel, label_windows, train_vq, trajectory_windows, window_factors
from chainact.minegrid import TASKS
from chainact.minegrid.tasks import tasks_in
from chainact.minegrid.world import WorldConfig
from chainact.policy import (
    FlatPolicy,
    HighLevelPolicy,
    LowLevelDecoder,
    PolicyConfig,
    StageConfig,
    UnifiedCoA,
    VQStreamDecoder,
    train_bc,
    train_curriculum,
)

log = logging.getLogger(__name__)

RULE_SPACES = (Space.MOTION, Space.GROUNDING, Space.SKILL)


@dataclass(frozen=True)
class ExperimentConfig:
    tasks: tuple[str, ...] = tuple(TASKS)
    train_seeds: int = 100  # expert episodes per task
    labeler: LabelerConfig = LabelerConfig()
    hidden: int = 256
    depth: int = 2
    stage: StageConfig = StageConfig(epochs=30)
    vq: VQConfig = VQConfig()
    greedy: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.train_seeds < 1:
            raise ConfigError("train_seeds must be >= 1")
        unknown = set(self.tasks) - set(TASKS)
        if unknown:
            raise ConfigError(f"unknown tasks {sorted(unknown)}")

    def policy(self, spaces: Sequence[Space] = ()) -> PolicyConfig:
        return PolicyConfig(hidden=self.hidden, depth=self.depth, spaces=tuple(s.value for s in spaces),
                            codebook_size=self.vq.codebook_size, seed=self.seed)

    def with_seed(self, seed: int) -> ExperimentConfig:
        return replace(self, seed=seed, stage=replace(self.stage, seed=seed), vq=replace(self.vq, seed=seed))


def collect(tasks: Sequence[str], n_seeds: int, seed: int = 0, world: WorldConfig = WorldConfig()) -> list[Rollout]:
    """Successful expert rollouts; trajectory ids are assigned in (task, seed) order."""
    out = []
    for task in tasks:
        for i in range(n_seeds):
            r = expert_rollout(task, training_seed(seed, i), traj_id=len(out), world=world)
            if r.success:
                out.append(r)
    return out


def training_seed(run_seed: int, i: int) -> int:
    # disjoint from the evaluation seeds (10000 upwards) while i < 10000
    return run_seed * 100_000 + i


@dataclass
class Corpus:
    """All datasets derived from one set of rollouts.

    ``high[space]`` and ``coa[space]`` are labelled with a window starting at
    every step, so the label always describes what happens next from the
    current observation.  ``low[space]`` uses non-overlapping windows so a
    label stays fixed for the ``k`` steps the fast decoder executes it.
    """

    text: Dataset
    high: dict[Space, Dataset] = field(default_factory=dict)
    coa: dict[Space, Dataset] = field(default_factory=dict)
    low: dict[Space, Dataset] = field(default_factory=dict)
    vq: Optional[VQModel] = None


def _labels(rollouts: Sequence[Rollout], space: Space, cfg: LabelerConfig, vq: Optional[VQModel]):
    if space is Space.LATENT:
        return [label_windows(vq, [s.a for s in r.trajectory.steps], cfg.step) for r in rollouts]
    return [label(r.trajectory, r.truths, space, cfg) for r in rollouts]


def fit_vq(rollouts: Sequence[Rollout], cfg: VQConfig) -> VQModel:
    import numpy as np

    wins = [w for r in rollouts for w in trajectory_windows([s.a for s in r.trajectory.steps], cfg.window, 1)]
    model, _ = train_vq(np.stack([window_factors(w) for w in wins]), cfg)
    return model


def build_corpus(
    rollouts: Sequence[Rollout],
    spaces: Sequence[Space] = (Space.MOTION, Space.GROUNDING),
    cfg: LabelerConfig = LabelerConfig(),
    vq: Optional[VQModel] = None,
) -> Corpus:
    trajs = [r.trajectory for r in rollouts]
    corpus = Corpus(build_dataset(trajs, None, DatasetKind.D_a), vq=vq)
    dense = replace(cfg, stride=1)
    sparse = replace(cfg, stride=None)
    for sp in spaces:
        sp = Space(sp)
        if sp is Space.LATENT and vq is None:
            raise ConfigError("latent labels need a trained VQ model")
        dense_labels = _labels(rollouts, sp, dense, vq)
        corpus.high[sp] = build_dataset(trajs, dense_labels, DatasetKind.D_A, sp)
        corpus.coa[sp] = build_dataset(trajs, dense_labels, DatasetKind.D_CoA, sp)
        corpus.low[sp] = build_dataset(trajs, _labels(rollouts, sp, sparse, vq), DatasetKind.D_CoA, sp)
    return corpus


# -- agents ----------------------------------------------------------------


def train_flat(corpus: Corpus, cfg: ExperimentConfig) -> PolicyBundle:
    model = FlatPolicy(cfg.policy())
    train_bc(model, [corpus.text], cfg.stage)
    return PolicyBundle("TextVLA", coa=model, greedy=cfg.greedy)


def train_hierarchical(corpus: Corpus, space: Space, cfg: ExperimentConfig) -> PolicyBundle:
    """High-level policy plus a separately trained decoder (the VQ decoder for latents)."""
    high = HighLevelPolicy(cfg.policy([space]))
    train_bc(high, [corpus.high[space]], cfg.stage)
    if space is Space.LATENT:
        low = VQStreamDecoder(corpus.vq)
    else:
        low = LowLevelDecoder(cfg.policy([space]))
        train_bc(low, [corpus.low[space]], cfg.stage)
    return PolicyBundle(f"{space.value.capitalize()}HA", space=space, high=high, low=low, greedy=cfg.greedy)


def train_coa(corpus: Corpus, space: Space, cfg: ExperimentConfig) -> PolicyBundle:
    """Two-stage curriculum: D_A and D_a, then D_CoA."""
    model = UnifiedCoA(cfg.policy([space]))
    train_curriculum(model, [corpus.high[space], corpus.text], [corpus.coa[space]], cfg.stage)
    return PolicyBundle(f"{space.value.capitalize()}VLA", space=space, coa=model, greedy=cfg.greedy)


def train_all_in_one(corpus: Corpus, spaces: Sequence[Space], cfg: ExperimentConfig) -> UnifiedCoA:
    """The same curriculum over the union of every space's datasets."""
    model = UnifiedCoA(cfg.policy(spaces))
    stage1 = [corpus.high[s] for s in spaces] + [corpus.text]
    stage2 = [mix_datasets([corpus.coa[s] for s in spaces], seed=cfg.seed)]
    train_curriculum(model, stage1, stage2, cfg.stage)
    return model


def prompted(model: UnifiedCoA, space: Space, cfg: ExperimentConfig) -> PolicyBundle:
    return PolicyBundle(f"AllInOne[{space.value}]", space=space, coa=model, greedy=cfg.greedy)


# -- desk analogues of the headline comparisons -----------------------------


def suite(categories: Sequence[str]) -> tuple[str, ...]:
    return tuple(t.id for c in categories for t in tasks_in(c))


def eval_suite(categories: Sequence[str], min_episodes: int, mini_set: Sequence[str] = ()) -> EvalConfig:
    tasks = suite(categories)
    per_task = max(3, -(-min_episodes // len(tasks)))
    return EvalConfig(tasks=tasks, seeds_per_task=per_task, mini_set=tuple(mini_set),
                      runs_per_task=max(10, per_task))


@dataclass
class ExpressivenessResult:
    motion: Report
    grounding: Report

    def gui_rates(self, report: Report) -> dict[str, float]:
        by: dict[str, list[bool]] = {}
        for r in report.results:
            by.setdefault(r.task, []).append(r.success)
        return {t: sum(v) / len(v) for t, v in by.items()}


def expressiveness_experiment(cfg: ExperimentConfig, episodes: int = 100,
                              corpus: Optional[Corpus] = None) -> ExpressivenessResult:
    """Motion vs Grounding hierarchical agents (Fast mode) on the GUI tasks."""
    corpus = corpus or build_corpus(collect(cfg.tasks, cfg.train_seeds, cfg.seed), RULE_SPACES[:2], cfg.labeler)
    ev = eval_suite(["GUI"], episodes)
    mode = Fast(cfg.labeler.window_k)
    motion = evaluate(train_hierarchical(corpus, Space.MOTION, cfg), mode, ev)
    grounding = evaluate(train_hierarchical(corpus, Space.GROUNDING, cfg), mode, ev)
    return ExpressivenessResult(motion, grounding)


@dataclass
class TrendResult:
    seed: int
    reports: dict[str, Report]


def coa_trend(cfg: ExperimentConfig, space: Space = Space.GROUNDING, episodes: int = 100,
              corpus: Optional[Corpus] = None) -> TrendResult:
    """Slow unified CoA vs the flat text policy on the Embodied+Combat suite."""
    corpus = corpus or build_corpus(collect(cfg.tasks, cfg.train_seeds, cfg.seed), [space], cfg.labeler)
    ev = eval_suite(["Embodied", "Combat"], episodes)
    flat = evaluate(train_flat(corpus, cfg), Slow(), ev)
    coa = evaluate(train_coa(corpus, space, cfg), Slow(), ev)
    return TrendResult(cfg.seed, {"flat": flat, "coa": coa})


def all_in_one_trend(cfg: ExperimentConfig, spaces: Sequence[Space] = (Space.MOTION, Space.GROUNDING),
                     episodes_per_category: int = 36, corpus: Optional[Corpus] = None) -> TrendResult:
    """Specialist CoA models vs one mixed model prompted in each specialist's format."""
    corpus = corpus or build_corpus(collect(cfg.tasks, cfg.train_seeds, cfg.seed), spaces, cfg.labeler)
    ev = eval_suite(["Embodied", "GUI", "Combat"], 3 * episodes_per_category)
    mixed = train_all_in_one(corpus, spaces, cfg)
    reports = {}
    for sp in spaces:
        reports[f"specialist:{sp.value}"] = evaluate(train_coa(corpus, sp, cfg), Slow(), ev)
        reports[f"mixed:{sp.value}"] = evaluate(prompted(mixed, sp, cfg), Slow(), ev)
    return TrendResult(cfg.seed, reports)


def success_rate(report: Report) -> float:
    return 100.0 * sum(r.success for r in report.results) / len(report.results)
