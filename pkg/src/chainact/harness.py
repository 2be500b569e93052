"""Episode runner, evaluation protocol, significance tests and report tables."""

from __future__ import annotations

import csv
import io
import json
import math
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from chainact.action_core import EnvAction
from chainact.codecs import AbstractedAction, Space
from chainact.errors import ConfigError, ModeModelMismatch, SuiteMismatch
from chainact.minegrid import TASKS, reset, step
from chainact.minegrid.expert import scripted_expert
from chainact.minegrid.tasks import CATEGORIES
from chainact.minegrid.world import WorldConfig
from chainact.policy.features import FormatPrompt, coa_prompt, featurize, high_level_only
from chainact.policy.models import ChainPolicy, VQStreamDecoder, act_flat, coa_step, decode_low, sample_abstracted


@dataclass(frozen=True)
class InferenceMode:
    """``fast`` replans every ``k`` steps; ``slow`` runs the full chain every step."""

    kind: str = "slow"
    k: int = 8

    def __post_init__(self):
        if self.kind not in ("fast", "slow"):
            raise ConfigError(f"unknown inference mode {self.kind!r}")
        if self.k < 1:
            raise ConfigError("replan interval must be >= 1")

    def __str__(self) -> str:
        return f"Fast(k={self.k})" if self.kind == "fast" else "Slow"


def Fast(k: int = 8) -> InferenceMode:
    return InferenceMode("fast", k)


def Slow() -> InferenceMode:
    return InferenceMode("slow")


@dataclass
class PolicyBundle:
    """Models for one agent.

    Fast mode needs ``high`` and ``low``; slow mode needs ``coa`` (a
    :class:`UnifiedCoA`, or a :class:`FlatPolicy` for the flat baseline).
    ``expert`` replaces all models with the scripted expert.
    """

    name: str
    space: Optional[Space] = None
    high: Optional[ChainPolicy] = None
    low: object = None
    coa: Optional[ChainPolicy] = None
    greedy: bool = True
    expert: bool = False


@dataclass(frozen=True)
class EpisodeResult:
    task: str
    seed: int
    success: bool
    steps: int
    high_level_calls: int
    low_level_calls: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> EpisodeResult:
        return cls(**json.loads(line))


def episode_rng(task: str, seed: int) -> np.random.Generator:
    return np.random.default_rng([zlib.crc32(task.encode()), seed])


def _check_bundle(bundle: PolicyBundle, mode: InferenceMode) -> None:
    if bundle.expert:
        return
    if mode.kind == "fast":
        if bundle.high is None or bundle.low is None or bundle.space is None:
            raise ModeModelMismatch(f"{bundle.name}: fast mode needs a high-level policy, a decoder and a space")
    elif bundle.coa is None:
        raise ModeModelMismatch(f"{bundle.name}: slow mode needs a unified model")


def run_episode(
    bundle: PolicyBundle,
    mode: InferenceMode,
    task: str,
    seed: int,
    max_steps: Optional[int] = None,
    trace: Optional[Callable[[int, Optional[AbstractedAction], EnvAction], None]] = None,
    world: WorldConfig = WorldConfig(),
) -> EpisodeResult:
    """Roll out one episode.

    Raises:
        ModeModelMismatch: the bundle lacks the models ``mode`` needs.
    """
    _check_bundle(bundle, mode)
    spec = TASKS[task]
    max_steps = max_steps or spec.max_steps
    rng = episode_rng(task, seed)
    state, obs = reset(spec, seed, world)
    if isinstance(bundle.low, VQStreamDecoder):
        bundle.low.reset()
    events = []
    hl = ll = 0
    A: Optional[AbstractedAction] = None
    success = False
    t = 0
    while t < max_steps:
        if bundle.expert:
            a = scripted_expert(spec, state)
            hl += 1
            ll += 1
        elif mode.kind == "fast":
            if t % mode.k == 0:
                A = sample_abstracted(bundle.high, featurize(obs, spec.instruction, high_level_only(bundle.space)),
                                      bundle.space, rng, bundle.greedy)
                hl += 1
            a = decode_low(bundle.low, featurize(obs, spec.instruction, coa_prompt(bundle.space)), A, rng,
                           bundle.greedy)
            ll += 1
        elif bundle.coa.role == "flat":
            a = act_flat(bundle.coa, featurize(obs, spec.instruction, FormatPrompt.TextOnly), rng, bundle.greedy)
            hl += 1
            ll += 1
        else:
            A, a, _ = coa_step(bundle.coa, featurize(obs, spec.instruction, coa_prompt(bundle.space)), rng,
                               bundle.greedy, bundle.space)
            hl += 1
            ll += 1
        if trace is not None:
            trace(t, A, a)
        state, obs, ev = step(state, a)
        events.extend(ev)
        t += 1
        if spec.success(events):
            success = True
            break
        if state.agent.health <= 0:
            break
    # a death ends the episode early; it still counts as a full-length failure
    steps = t if success else max_steps
    if not success and t < max_steps:
        hl, ll = _pad_calls(mode, bundle, max_steps, hl, ll)
    return EpisodeResult(task, seed, success, steps, hl, ll)


def _pad_calls(mode: InferenceMode, bundle: PolicyBundle, steps: int, hl: int, ll: int) -> tuple[int, int]:
    # keep the call-count law exact for episodes cut short by death
    if mode.kind == "fast" and not bundle.expert:
        return math.ceil(steps / mode.k), steps
    return steps, steps


# -- evaluation ------------------------------------------------------------


@dataclass(frozen=True)
class EvalConfig:
    tasks: tuple[str, ...] = tuple(TASKS)
    seeds_per_task: int = 3
    mini_set: tuple[str, ...] = ()
    runs_per_task: int = 10
    max_steps: int = 400
    seed_offset: int = 10_000
    world: WorldConfig = WorldConfig()

    def __post_init__(self):
        if self.seeds_per_task < 3:
            raise ConfigError("at least three runs per task")
        if not set(self.mini_set) <= set(self.tasks):
            raise ConfigError("mini_set must be a subset of tasks")
        if self.mini_set and self.runs_per_task < 10:
            raise ConfigError("mini-set tasks need at least 10 runs")
        unknown = set(self.tasks) - set(TASKS)
        if unknown:
            raise ConfigError(f"unknown tasks {sorted(unknown)}")

    def seeds(self, task: str) -> list[int]:
        n = max(self.seeds_per_task, self.runs_per_task) if task in self.mini_set else self.seeds_per_task
        return [self.seed_offset + i for i in range(n)]

    def pairs(self) -> list[tuple[str, int]]:
        return [(t, s) for t in self.tasks for s in self.seeds(t)]


@dataclass
class CategoryStats:
    sr: float  # mean over tasks of per-task success rate, percent
    sr_std: float
    sr_mini: float
    sr_mini_std: float
    steps: float  # failures counted at max_steps
    steps_success: float  # successful episodes only (nan if none)
    episodes: int
    successes: int


@dataclass
class Report:
    name: str
    mode: str
    results: list[EpisodeResult] = field(default_factory=list)
    mini_set: tuple[str, ...] = ()

    @property
    def categories(self) -> dict[str, CategoryStats]:
        return aggregate(self.results, self.mini_set)

    @property
    def call_ratio(self) -> float:
        hl = sum(r.high_level_calls for r in self.results)
        ll = sum(r.low_level_calls for r in self.results)
        return ll / hl if hl else float("nan")

    def save(self, path: str | Path) -> None:
        header = {"name": self.name, "mode": self.mode, "mini_set": list(self.mini_set)}
        lines = [json.dumps(header, sort_keys=True)] + [r.to_json() for r in self.results]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> Report:
        lines = Path(path).read_text().splitlines()
        header = json.loads(lines[0])
        return cls(header["name"], header["mode"], [EpisodeResult.from_json(x) for x in lines[1:] if x],
                   tuple(header["mini_set"]))


def _task_sr(results: Sequence[EpisodeResult]) -> dict[str, float]:
    by: dict[str, list[bool]] = {}
    for r in results:
        by.setdefault(r.task, []).append(r.success)
    return {t: 100.0 * sum(v) / len(v) for t, v in sorted(by.items())}


def _mean_std(xs: Sequence[float]) -> tuple[float, float]:
    if not xs:
        return float("nan"), float("nan")
    arr = np.asarray(xs, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def aggregate(results: Sequence[EpisodeResult], mini_set: Sequence[str] = ()) -> dict[str, CategoryStats]:
    """Per-category statistics; a pure function of the episode results."""
    out = {}
    for cat in CATEGORIES:
        rs = [r for r in results if TASKS[r.task].category == cat]
        if not rs:
            continue
        base = [r for r in rs if r.task not in mini_set or r.seed in _first_seeds(rs, r.task)]
        sr, sr_std = _mean_std(list(_task_sr(base).values()))
        mini = [r for r in rs if r.task in mini_set]
        mini_sr, mini_std = _mean_std(list(_task_sr(mini).values()))
        ok = [r.steps for r in rs if r.success]
        out[cat] = CategoryStats(
            sr=sr,
            sr_std=sr_std,
            sr_mini=mini_sr,
            sr_mini_std=mini_std,
            steps=float(np.mean([r.steps for r in rs])),
            steps_success=float(np.mean(ok)) if ok else float("nan"),
            episodes=len(rs),
            successes=sum(r.success for r in rs),
        )
    return out


def _first_seeds(rs: Sequence[EpisodeResult], task: str, n: int = 3) -> set[int]:
    # SR(All) uses the same number of runs for every task
    return set(sorted(r.seed for r in rs if r.task == task)[:n])


def evaluate(
    bundle: PolicyBundle,
    mode: InferenceMode,
    cfg: EvalConfig = EvalConfig(),
    progress: Optional[Callable[[EpisodeResult], None]] = None,
) -> Report:
    """Run every ``(task, seed)`` pair of ``cfg`` in deterministic order."""
    results = []
    for task, seed in cfg.pairs():
        try:
            r = run_episode(bundle, mode, task, seed, cfg.max_steps, world=cfg.world)
        except Exception as exc:
            raise type(exc)(f"{task} seed {seed}: {exc}") from exc
        results.append(r)
        if progress is not None:
            progress(r)
    return Report(bundle.name, str(mode), results, cfg.mini_set)


# -- statistics ------------------------------------------------------------


def two_proportion_z(k1: int, n1: int, k2: int, n2: int) -> tuple[float, float]:
    """Pooled two-proportion z statistic and two-sided p-value."""
    if n1 == 0 or n2 == 0:
        raise ValueError("both groups need at least one trial")
    p1, p2 = k1 / n1, k2 / n2
    pooled = (k1 + k2) / (n1 + n2)
    se = math.sqrt(pooled * (1 - pooled) * (1 / n1 + 1 / n2))
    if se == 0:
        return 0.0, 1.0
    z = (p1 - p2) / se
    return z, math.erfc(abs(z) / math.sqrt(2))


@dataclass(frozen=True)
class Comparison:
    delta: float  # percentage points, a minus b
    p_value: float
    n: int


def compare(report_a: Report, report_b: Report, categories: Optional[Iterable[str]] = None) -> dict[str, Comparison]:
    """Per-category pooled z-test of success rates on paired ``(task, seed)`` sets.

    Raises:
        SuiteMismatch: the two reports did not run the same episodes.
    """
    keys_a = sorted((r.task, r.seed) for r in report_a.results)
    keys_b = sorted((r.task, r.seed) for r in report_b.results)
    if keys_a != keys_b:
        raise SuiteMismatch("reports cover different (task, seed) pairs")
    out = {}
    groups = {c: [c] for c in CATEGORIES}
    if categories is not None:
        groups = {"+".join(categories): list(categories)}
    for name, cats in groups.items():
        ra = [r for r in report_a.results if TASKS[r.task].category in cats]
        rb = [r for r in report_b.results if TASKS[r.task].category in cats]
        if not ra:
            continue
        ka, kb = sum(r.success for r in ra), sum(r.success for r in rb)
        _, p = two_proportion_z(ka, len(ra), kb, len(rb))
        out[name] = Comparison(100.0 * (ka / len(ra) - kb / len(rb)), p, len(ra))
    return out


# -- rendering -------------------------------------------------------------


def fmt(mean: float, std: float) -> str:
    if math.isnan(mean):
        return "-"
    return f"{mean:.1f}^{{±{std:.1f}}}"


def render_report(reports: Sequence[Report]) -> tuple[str, str]:
    """Markdown and CSV tables: Steps | SR(Mini) | SR(All) per category, plus call ratio."""
    if not reports:
        raise ValueError("need at least one report")
    head = ["Model", "Mode"]
    for cat in CATEGORIES:
        head += [f"{cat} Steps", f"{cat} SR(Mini)", f"{cat} SR(All)"]
    head.append("LL/HL calls")
    md = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "mode"] + [f"{c}_{k}" for c in CATEGORIES for k in
                                    ("steps", "sr_mini", "sr_mini_std", "sr_all", "sr_all_std")] + ["call_ratio"])
    for rep in reports:
        stats = rep.categories
        cells, row = [rep.name, rep.mode], [rep.name, rep.mode]
        for cat in CATEGORIES:
            s = stats.get(cat)
            if s is None:
                cells += ["-", "-", "-"]
                row += ["", "", "", "", ""]
                continue
            cells += [f"{s.steps:.1f}", fmt(s.sr_mini, s.sr_mini_std), fmt(s.sr, s.sr_std)]
            row += [repr(s.steps), repr(s.sr_mini), repr(s.sr_mini_std), repr(s.sr), repr(s.sr_std)]
        cells.append(f"{rep.call_ratio:.1f}")
        row.append(repr(rep.call_ratio))
        md.append("| " + " | ".join(cells) + " |")
        w.writerow(row)
    return "\n".join(md) + "\n", buf.getvalue()


def parse_report_csv(text: str) -> list[dict[str, object]]:
    rows = list(csv.DictReader(io.StringIO(text)))
    out = []
    for r in rows:
        d: dict[str, object] = {"model": r.pop("model"), "mode": r.pop("mode")}
        d.update({k: float(v) if v else float("nan") for k, v in r.items()})
        out.append(d)
    return out
