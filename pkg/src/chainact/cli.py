"""Command-line pipeline: experts -> labels -> datasets -> models -> evaluation -> report.

Every artifact is a JSONL file whose first line is a header carrying the
artifact kind, the run-config hash and the tool version.  Artifacts live in
``<output_dir>/v<FORMAT>/``.

Exit codes: 0 success, 1 pipeline error, 2 configuration error.  Errors are
also written to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Optional, Sequence

from chainact import __version__
from chainact.codecs import Space, parse_abstracted, parse_text, serialize_abstracted, serialize_text
from chainact.errors import ChainActError, ConfigError
from chainact.harness import (
    EpisodeResult,
    EvalConfig,
    Fast,
    PolicyBundle,
    Report,
    Slow,
    render_report,
    run_episode,
)
from chainact.labeler import (
    Dataset,
    DatasetKind,
    LabelerConfig,
    build_dataset,
    expert_rollout,
    label,
    mix_datasets,
    rollout_from_actions,
)
from chainact.latent_vq import VQConfig, checkpoint_from_json, checkpoint_json, label_windows
from chainact.minegrid import TASKS
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
)
from chainact.policy.models import ChainPolicy

FORMAT = 1
SEED_ENV = "MINEGRID_SEED"


# -- configuration ---------------------------------------------------------


@dataclass(frozen=True)
class TrainingConfig:
    train_seeds: int = 100
    spaces: tuple[str, ...] = ("motion", "grounding")
    hidden: int = 256
    depth: int = 2
    epochs: int = 30
    learning_rate: float = 1e-3
    batch_size: int = 256
    greedy: bool = False

    def __post_init__(self):
        if self.train_seeds < 1 or self.epochs < 1:
            raise ConfigError("train_seeds and epochs must be >= 1")
        try:
            object.__setattr__(self, "spaces", tuple(Space(s).value for s in self.spaces))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if set(self.spaces) & {"raw", "text"}:
            raise ConfigError("training spaces are motion, grounding, skill and latent")


@dataclass(frozen=True)
class EvalSection:
    tasks: tuple[str, ...] = tuple(TASKS)
    seeds_per_task: int = 3
    mini_set: tuple[str, ...] = ()
    runs_per_task: int = 10
    max_steps: int = 400
    replan_interval: int = 8


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    output_dir: str = "runs"
    world: WorldConfig = WorldConfig()
    labeler: LabelerConfig = LabelerConfig()
    vq: VQConfig = VQConfig()
    training: TrainingConfig = TrainingConfig()
    eval: EvalSection = EvalSection()

    @property
    def out(self) -> Path:
        return Path(self.output_dir) / f"v{FORMAT}"

    def eval_config(self) -> EvalConfig:
        e = self.eval
        return EvalConfig(tuple(e.tasks), e.seeds_per_task, tuple(e.mini_set), e.runs_per_task, e.max_steps,
                          world=self.world)

    def stage(self, lr_scale: float = 1.0) -> StageConfig:
        t = self.training
        return StageConfig(t.epochs, t.learning_rate * lr_scale, t.batch_size, self.seed)

    def policy(self, spaces: Sequence[str] = ()) -> PolicyConfig:
        t = self.training
        return PolicyConfig(t.hidden, t.depth, tuple(spaces), self.vq.codebook_size, self.seed)


_SECTIONS = {"world": WorldConfig, "labeler": LabelerConfig, "vq": VQConfig, "training": TrainingConfig,
             "eval": EvalSection}


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be an object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {unknown}")
    kwargs = {}
    for k, v in data.items():
        if k in _SECTIONS and cls is RunConfig:
            v = _build(_SECTIONS[k], v, k)
        elif isinstance(v, list):
            v = tuple(v)
        kwargs[k] = v
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def load_config(path: Optional[str], seed: Optional[int] = None) -> RunConfig:
    """Parse a JSON run config; ``seed`` (or ``MINEGRID_SEED``) overrides its seed."""
    data: dict[str, Any] = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {path} not found")
        try:
            data = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
    cfg = _build(RunConfig, data, "config")
    env = os.environ.get(SEED_ENV)
    if seed is None and env not in (None, ""):
        try:
            seed = int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer") from None
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=seed)
    parent = Path(cfg.output_dir).resolve().parent
    if not parent.is_dir():
        raise ConfigError(f"output_dir parent {parent} does not exist")
    unknown = set(cfg.eval.tasks) - set(TASKS)
    if unknown:
        raise ConfigError(f"unknown tasks {sorted(unknown)}")
    cfg.eval_config()  # validates the protocol constraints
    return cfg


def _jsonable(x):
    if dataclasses.is_dataclass(x):
        return {k: _jsonable(v) for k, v in asdict(x).items()}
    if isinstance(x, (tuple, list)):
        return [_jsonable(v) for v in x]
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    return x


def config_hash(cfg: RunConfig) -> str:
    doc = _jsonable(cfg)
    doc.pop("output_dir")
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


# -- artifacts -------------------------------------------------------------


def write_artifact(path: Path, kind: str, cfg: RunConfig, body: str, **meta) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {"artifact": kind, "config_hash": config_hash(cfg), "tool_version": __version__, "format": FORMAT, **meta}
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(header, sort_keys=True) + "\n" + body)
    tmp.replace(path)


def read_artifact(path: Path, kind: str, cfg: Optional[RunConfig] = None) -> tuple[dict, str]:
    if not path.is_file():
        raise ConfigError(f"missing artifact {path}; run the producing command first")
    text = path.read_text()
    first, _, body = text.partition("\n")
    header = json.loads(first)
    if header.get("artifact") != kind:
        raise ConfigError(f"{path} holds {header.get('artifact')!r}, expected {kind!r}")
    if cfg is not None and header.get("config_hash") != config_hash(cfg):
        raise ConfigError(f"{path} was produced under a different config")
    return header, body


def _parallel(fn, items: list, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))


# -- gen-experts -----------------------------------------------------------


def _expert_job(job) -> dict:
    task, seed, world = job
    r = expert_rollout(task, seed, world=world)
    return {"task": task, "seed": seed, "success": r.success,
            "actions": [serialize_text(s.a) for s in r.trajectory.steps]}


def cmd_gen_experts(cfg: RunConfig, args) -> int:
    from chainact.experiments import training_seed

    jobs = [(t, training_seed(cfg.seed, i), cfg.world) for t in TASKS for i in range(cfg.training.train_seeds)]
    rows = _parallel(_expert_job, jobs, args.workers)
    for i, r in enumerate(rows):
        r["id"] = i
    body = "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows)
    write_artifact(cfg.out / "experts.jsonl", "experts", cfg, body, n=len(rows))
    ok = sum(r["success"] for r in rows)
    print(f"{ok}/{len(rows)} expert episodes succeeded -> {cfg.out / 'experts.jsonl'}")
    return 0


def _load_rollouts(cfg: RunConfig):
    _, body = read_artifact(cfg.out / "experts.jsonl", "experts", cfg)
    out = []
    for line in body.splitlines():
        d = json.loads(line)
        if d["success"]:
            out.append(rollout_from_actions(d["task"], d["seed"], [parse_text(a) for a in d["actions"]], d["id"],
                                            cfg.world))
    return out


# -- train-vq / label / build-datasets -------------------------------------


def cmd_train_vq(cfg: RunConfig, args) -> int:
    from chainact.experiments import fit_vq

    model = fit_vq(_load_rollouts(cfg), cfg.vq)
    write_artifact(cfg.out / "vq.jsonl", "vq", cfg, checkpoint_json(model) + "\n")
    print(f"VQ codebook of {cfg.vq.codebook_size} -> {cfg.out / 'vq.jsonl'}")
    return 0


def _load_vq(cfg: RunConfig):
    _, body = read_artifact(cfg.out / "vq.jsonl", "vq", cfg)
    return checkpoint_from_json(body)


def _spaces(cfg: RunConfig, arg: Optional[str]) -> list[Space]:
    spaces = [Space(s) for s in cfg.training.spaces]
    if arg is not None:
        try:
            sp = Space(arg)
        except ValueError:
            raise ConfigError(f"unknown space {arg!r}") from None
        if sp not in spaces:
            raise ConfigError(f"space {arg!r} is not in training.spaces")
        spaces = [sp]
    return spaces


def cmd_label(cfg: RunConfig, args) -> int:
    rollouts = _load_rollouts(cfg)
    for sp in _spaces(cfg, args.space):
        vq = _load_vq(cfg) if sp is Space.LATENT else None
        rows = []
        for r in rollouts:
            entry = {"id": r.trajectory.id}
            for name, stride in (("dense", 1), ("sparse", None)):
                lc = dataclasses.replace(cfg.labeler, stride=stride)
                if vq is not None:
                    labs = label_windows(vq, [s.a for s in r.trajectory.steps], lc.step)
                else:
                    labs = label(r.trajectory, r.truths, sp, lc)
                entry[name] = [[w.start, w.stop, serialize_abstracted(A)] for w, A in labs]
            rows.append(json.dumps(entry, sort_keys=True))
        path = cfg.out / "labels" / f"{sp.value}.jsonl"
        write_artifact(path, "labels", cfg, "".join(x + "\n" for x in rows), space=sp.value)
        print(f"labelled {len(rows)} trajectories in {sp.value} -> {path}")
    return 0


def _load_labels(cfg: RunConfig, sp: Space, which: str) -> list:
    _, body = read_artifact(cfg.out / "labels" / f"{sp.value}.jsonl", "labels", cfg)
    frame = None  # grounding coordinates are already validated by the labeler
    out = []
    for line in body.splitlines():
        d = json.loads(line)
        out.append([(range(a, b), parse_abstracted(s, expected=sp, frame=frame)) for a, b, s in d[which]])
    return out


def cmd_build_datasets(cfg: RunConfig, args) -> int:
    trajs = [r.trajectory for r in _load_rollouts(cfg)]
    ds_dir = cfg.out / "datasets"
    _save_ds(cfg, ds_dir / "D_a.jsonl", build_dataset(trajs, None, DatasetKind.D_a))
    for sp in _spaces(cfg, args.space):
        dense, sparse = _load_labels(cfg, sp, "dense"), _load_labels(cfg, sp, "sparse")
        _save_ds(cfg, ds_dir / f"D_A_{sp.value}.jsonl", build_dataset(trajs, dense, DatasetKind.D_A, sp))
        _save_ds(cfg, ds_dir / f"D_CoA_{sp.value}.jsonl", build_dataset(trajs, dense, DatasetKind.D_CoA, sp))
        _save_ds(cfg, ds_dir / f"D_CoA_low_{sp.value}.jsonl", build_dataset(trajs, sparse, DatasetKind.D_CoA, sp))
    print(f"datasets -> {ds_dir}")
    return 0


def _save_ds(cfg: RunConfig, path: Path, ds: Dataset) -> None:
    write_artifact(path, "dataset", cfg, ds.dumps())


def _ds(cfg: RunConfig, name: str) -> Dataset:
    _, body = read_artifact(cfg.out / "datasets" / f"{name}.jsonl", "dataset", cfg)
    return Dataset.loads(body)


# -- train -----------------------------------------------------------------

AGENTS = ("flat", "ha", "coa", "all-in-one")


def _model_path(cfg: RunConfig, name: str) -> Path:
    return cfg.out / "models" / f"{name}.jsonl"


def _save_model(cfg: RunConfig, name: str, model: ChainPolicy) -> None:
    write_artifact(_model_path(cfg, name), "model", cfg, model.to_json() + "\n", name=name)
    print(f"{name} -> {_model_path(cfg, name)}")


def _load_model(cfg: RunConfig, name: str) -> ChainPolicy:
    _, body = read_artifact(_model_path(cfg, name), "model", cfg)
    return ChainPolicy.from_json(body)


def _agent_name(agent: str, space: Optional[Space]) -> str:
    if agent == "flat" or agent == "all-in-one":
        return agent
    return f"{agent}_{space.value}"


def _need_space(args, cfg) -> Space:
    if args.space is None:
        raise ConfigError(f"--space is required for --agent {args.agent}")
    return _spaces(cfg, args.space)[0]


def cmd_train(cfg: RunConfig, args) -> int:
    agent = args.agent
    if args.stage is not None and agent not in ("coa", "all-in-one"):
        raise ConfigError("only the unified models (coa, all-in-one) train in stages")
    if agent == "flat":
        model = FlatPolicy(cfg.policy())
        train_bc(model, [_ds(cfg, "D_a")], cfg.stage())
        _save_model(cfg, "flat", model)
        return 0
    if agent == "ha":
        sp = _need_space(args, cfg)
        high = HighLevelPolicy(cfg.policy([sp.value]))
        train_bc(high, [_ds(cfg, f"D_A_{sp.value}")], cfg.stage())
        _save_model(cfg, f"ha_{sp.value}_high", high)
        if sp is not Space.LATENT:
            low = LowLevelDecoder(cfg.policy([sp.value]))
            train_bc(low, [_ds(cfg, f"D_CoA_low_{sp.value}")], cfg.stage())
            _save_model(cfg, f"ha_{sp.value}_low", low)
        return 0
    if agent == "coa":
        spaces = [_need_space(args, cfg)]
        name = f"coa_{spaces[0].value}"
    else:
        spaces = _spaces(cfg, None)
        name = "all-in-one"
    stages = (1, 2) if args.stage is None else (args.stage,)
    if 1 in stages:
        model = UnifiedCoA(cfg.policy([s.value for s in spaces]))
        train_bc(model, [_ds(cfg, f"D_A_{s.value}") for s in spaces] + [_ds(cfg, "D_a")], cfg.stage())
        _save_model(cfg, f"{name}_stage1", model)
    if 2 in stages:
        if not _model_path(cfg, f"{name}_stage1").is_file():
            raise ConfigError(f"stage 2 needs the stage-1 checkpoint {_model_path(cfg, name + '_stage1')}")
        model = _load_model(cfg, f"{name}_stage1")
        coa = [_ds(cfg, f"D_CoA_{s.value}") for s in spaces]
        data = coa if len(coa) == 1 else [mix_datasets(coa, cfg.seed)]
        train_bc(model, data, cfg.stage(0.5))
        _save_model(cfg, name, model)
    return 0


# -- eval ------------------------------------------------------------------


def _bundle(cfg: RunConfig, args) -> tuple[PolicyBundle, Any]:
    greedy = cfg.training.greedy
    k = cfg.eval.replan_interval
    if args.agent == "expert":
        return PolicyBundle("Expert", expert=True), Slow()
    if args.agent == "flat":
        if args.mode != "slow":
            raise ConfigError("the flat policy has no fast mode")
        return PolicyBundle("TextVLA", coa=_load_model(cfg, "flat"), greedy=greedy), Slow()
    sp = _need_space(args, cfg)
    if args.agent == "ha":
        if args.mode != "fast":
            raise ConfigError("a hierarchical agent runs in fast mode")
        high = _load_model(cfg, f"ha_{sp.value}_high")
        low = VQStreamDecoder(_load_vq(cfg)) if sp is Space.LATENT else _load_model(cfg, f"ha_{sp.value}_low")
        return PolicyBundle(f"{sp.value.capitalize()}HA", sp, high=high, low=low, greedy=greedy), Fast(k)
    if args.mode != "slow":
        raise ConfigError("unified models run in slow mode")
    if args.agent == "coa":
        return PolicyBundle(f"{sp.value.capitalize()}VLA", sp, coa=_load_model(cfg, f"coa_{sp.value}"),
                            greedy=greedy), Slow()
    return PolicyBundle(f"AllInOne[{sp.value}]", sp, coa=_load_model(cfg, "all-in-one"), greedy=greedy), Slow()


def _episode_job(job) -> EpisodeResult:
    bundle, mode, task, seed, max_steps, world = job
    return run_episode(bundle, mode, task, seed, max_steps, world=world)


def results_name(args) -> str:
    base = args.agent if args.agent in ("flat", "expert") else f"{args.agent}_{args.space}"
    return f"{base}_{args.mode}"


def cmd_eval(cfg: RunConfig, args) -> int:
    bundle, mode = _bundle(cfg, args)
    ev = cfg.eval_config()
    jobs = [(bundle, mode, t, s, ev.max_steps, cfg.world) for t, s in ev.pairs()]
    results = _parallel(_episode_job, jobs, args.workers)
    report = Report(bundle.name, str(mode), results, ev.mini_set)
    path = cfg.out / "results" / f"{results_name(args)}.jsonl"
    write_artifact(path, "results", cfg, "".join(r.to_json() + "\n" for r in results), name=report.name,
                   mode=report.mode, mini_set=list(ev.mini_set))
    ok = sum(r.success for r in results)
    print(f"{report.name} {report.mode}: {ok}/{len(results)} successes -> {path}")
    return 0


# -- report ----------------------------------------------------------------


def load_results(path: Path) -> tuple[dict, Report]:
    header, body = read_artifact(path, "results")
    results = [EpisodeResult.from_json(x) for x in body.splitlines() if x]
    return header, Report(header["name"], header["mode"], results, tuple(header["mini_set"]))


def cmd_report(cfg: RunConfig, args) -> int:
    paths = [Path(p) for p in args.inputs] if args.inputs else sorted((cfg.out / "results").glob("*.jsonl"))
    if not paths:
        raise ConfigError("no result files to report")
    loaded = [load_results(p) for p in paths]
    hashes = sorted({h["config_hash"] for h, _ in loaded})
    if len(hashes) > 1 and not args.force:
        raise ConfigError(f"results come from different configs {hashes}; pass --force to combine them")
    md, csv_text = render_report([r for _, r in loaded])
    out = Path(args.out) if args.out else cfg.out
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.md").write_text(md)
    (out / "report.csv").write_text(csv_text)
    sys.stdout.write(md)
    return 0


# -- roundtrip-test --------------------------------------------------------


def cmd_roundtrip(cfg: RunConfig, args) -> int:
    from chainact.roundtrip import run_all

    results = run_all(args.n_text, args.n_grammar, cfg.seed)
    for r in results:
        status = "PASS" if r.ok else "FAIL"
        extra = f" first failure: {r.first_failure}" if r.first_failure else ""
        print(f"{status} {r.name}: {r.cases - r.failures}/{r.cases} in {r.seconds:.2f}s{extra}")
    return 0 if all(r.ok for r in results) else 1


# -- entry point -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chainact", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config (defaults apply when omitted)")
    common.add_argument("--seed", type=int, help=f"override the config seed (also via {SEED_ENV})")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-experts", parents=[common], help="roll out scripted experts")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(fn=cmd_gen_experts)

    s = sub.add_parser("train-vq", parents=[common], help="train the latent action tokenizer")
    s.set_defaults(fn=cmd_train_vq)

    s = sub.add_parser("label", parents=[common], help="label expert trajectories")
    s.add_argument("--space")
    s.set_defaults(fn=cmd_label)

    s = sub.add_parser("build-datasets", parents=[common], help="assemble D_a, D_A and D_CoA")
    s.add_argument("--space")
    s.set_defaults(fn=cmd_build_datasets)

    s = sub.add_parser("train", parents=[common], help="behaviour-clone a model")
    s.add_argument("--agent", choices=AGENTS, required=True)
    s.add_argument("--space")
    s.add_argument("--stage", type=int, choices=(1, 2))
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="evaluate an agent on the task suite")
    s.add_argument("--agent", choices=AGENTS + ("expert",), required=True)
    s.add_argument("--space")
    s.add_argument("--mode", choices=("fast", "slow"), default="slow")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("report", parents=[common], help="render tables from persisted results")
    s.add_argument("inputs", nargs="*")
    s.add_argument("--force", action="store_true", help="combine results from different configs")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_report)

    s = sub.add_parser("roundtrip-test", parents=[common], help="run the codec round-trip suites")
    s.add_argument("--n-text", type=int, default=10_000)
    s.add_argument("--n-grammar", type=int, default=1_000)
    s.set_defaults(fn=cmd_roundtrip)
    return p


def _fail(code: int, exc: BaseException) -> int:
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}) + "\n")
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed)
        if getattr(args, "workers", 1) < 1:
            raise ConfigError("--workers must be >= 1")
        return args.fn(cfg, args)
    except ConfigError as exc:
        return _fail(2, exc)
    except (ChainActError, OSError, ValueError, KeyError, RuntimeError) as exc:
        return _fail(1, exc)


if __name__ == "__main__":
    sys.exit(main())
