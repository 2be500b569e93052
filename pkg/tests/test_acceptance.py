"""The twelve acceptance criteria at their stated tolerances.

Each test records one pass/fail line (printed in the terminal summary) and
then asserts.  The trend experiments (8-10) train on full expert corpora and
take several minutes each on one CPU core.
"""

import json
import math
import time

import numpy as np
import pytest
import torch
from oracles import ALL_SPACES, brute_force_codes, labelled_datasets, policy_fd_worst, vq_fd_worst
from test_labeler import CASES
from worlds import record

from chainact.action_core import EnvAction
from chainact.codecs import (
    Grounding,
    action_from_factors,
    GroundingVerb,
    Latent,
    Motion,
    MotionVerb,
    Raw,
    Space,
    parse_abstracted,
    parse_text,
    parse_tokens,
    serialize_abstracted,
    serialize_text,
)
from chainact.errors import ConfigError
from chainact.experiments import (
    ExperimentConfig,
    all_in_one_trend,
    build_corpus,
    coa_trend,
    collect,
    expressiveness_experiment,
    success_rate,
)
from chainact.harness import EvalConfig, PolicyBundle, Report, Slow, compare, evaluate, render_report
from chainact.labeler import DatasetKind, LabelerConfig, build_dataset, expert_rollout, label, label_grounding, \
    label_motion, label_skill
from chainact.latent_vq import (
    GROUP_SIZES,
    VQConfig,
    VQModel,
    codebook_bytes,
    encode_codes,
    motif_corpus,
    perplexity,
    quantize,
    reconstruction_rate,
    train_vq,
    vq_loss,
)
from chainact.minegrid import CATEGORIES, TASKS
from chainact.policy import FormatPrompt, PolicyConfig, UnifiedCoA, featurize, log_joint
from chainact.policy.features import coa_prompt
from chainact.policy.models import log_prob_high, log_prob_low, marginal_log_prob
from chainact.policy.spaces import ENV_GROUPS, MotionHead, make_head
from chainact.roundtrip import run_all

TABLE = {
    "a": ('{"camera": [-1, -9], "ESC": 0, "back": 0, "drop": 0, "forward": 0, "hotbar.1-9": 0, "inventory": 0, '
          '"jump": 0, "left": 0, "right": 0, "sneak": 0, "sprint": 0, "swapHands": 0, "attack": 0, "use": 0, '
          '"pickItem": 0}'),
    "RA": "<|reserved_token_1|><|reserved_token_7|><|reserved_token_9|><|reserved_token_2|>",
    "TA_1": "Action: keyDown(keys=(keyboard.left.control, keyboard.w, keyboard.a))",
    "TA_2": "Action: move(dx='4.0', dy='-1.0') and keyDown(keys=(keyboard.left.control, keyboard.w))",
    "MA": "Action: Go forward, Turn left.",
    "GA_1": "Action: Mine(object='oak_log', position=[100, 200])",
    "GA_2": "Action: Approach(object='sheep', position=[200, 300])",
    "LA": "<|reserved_token_2|>",
}
TABLE_FRAME = (640, 360)
TREND_SEEDS = (0, 1, 2)


def log(acceptance_log, n, ok, detail):
    acceptance_log[n] = (bool(ok), detail)


# -- shared experiment state -----------------------------------------------


@pytest.fixture(scope="module")
def corpora():
    cache = {}

    def get(seed):
        if seed not in cache:
            cfg = ExperimentConfig().with_seed(seed)
            rollouts = collect(cfg.tasks, cfg.train_seeds, cfg.seed)
            cache[seed] = build_corpus(rollouts, (Space.MOTION, Space.GROUNDING), cfg.labeler)
        return cache[seed]

    return get


@pytest.fixture(scope="module")
def expressiveness(corpora):
    t0 = time.perf_counter()
    cfg = ExperimentConfig().with_seed(0)
    res = expressiveness_experiment(cfg, episodes=100, corpus=corpora(0))
    return res, time.perf_counter() - t0


@pytest.fixture(scope="module")
def coa_runs(corpora):
    """Seed 0 first; seeds 1 and 2 only if seed 0 misses the trend."""
    runs = []
    for seed in TREND_SEEDS:
        t0 = time.perf_counter()
        corpus = corpora(seed)
        res = coa_trend(ExperimentConfig().with_seed(seed), Space.GROUNDING, episodes=100, corpus=corpus)
        runs.append((res, time.perf_counter() - t0))
        if seed == 0 and _coa_ok(res)[0]:
            break
    return runs


def _coa_ok(res):
    cmp = compare(res.reports["coa"], res.reports["flat"], ["Embodied", "Combat"])["Embodied+Combat"]
    ok = cmp.delta >= 0 and (cmp.delta <= 10 or cmp.p_value < 0.05)
    return ok, cmp


# -- 1 ---------------------------------------------------------------------


def test_criterion_01_codec_roundtrips(acceptance_log):
    t0 = time.perf_counter()
    suites = run_all(n_text=10_000, n_grammar=1_000, seed=0)
    table_ok = all(serialize_text(parse_text(TABLE[k])) == TABLE[k] for k in ("TA_1", "TA_2"))
    seconds = time.perf_counter() - t0
    ok = all(s.ok for s in suites) and table_ok and seconds < 10
    counts = ", ".join(f"{s.name} {s.cases - s.failures}/{s.cases}" for s in suites)
    log(acceptance_log, 1, ok, f"{counts}; Table TA examples {'ok' if table_ok else 'FAIL'}; {seconds:.1f}s")
    assert ok


# -- 2 ---------------------------------------------------------------------


def test_criterion_02_table_conformance(acceptance_log):
    checks = {}
    a = EnvAction.from_flat_record(json.loads(TABLE["a"]))
    checks["a"] = a == EnvAction(camera=(-1.0, -9.0)) and json.dumps(a.to_flat_record()) == TABLE["a"]
    ra = parse_abstracted(TABLE["RA"], expected=Space.RAW)
    checks["RA"] = ra == Raw((1, 7, 9, 2)) and len(parse_tokens(TABLE["RA"])) == 4 and \
        serialize_abstracted(ra) == TABLE["RA"]
    for k in ("TA_1", "TA_2"):
        checks[k] = serialize_text(parse_text(TABLE[k])) == TABLE[k]
    ta2 = parse_text(TABLE["TA_2"])
    checks["TA_2"] &= ta2.pressed == {"sprint", "forward"} and ta2.camera == (-1.0, 4.0)
    ma = parse_abstracted(TABLE["MA"])
    checks["MA"] = ma == Motion((MotionVerb.GoForward, MotionVerb.TurnLeft)) and serialize_abstracted(ma) == TABLE["MA"]
    for k, verb, obj, pos in (("GA_1", GroundingVerb.Mine, "oak_log", (100, 200)),
                              ("GA_2", GroundingVerb.Approach, "sheep", (200, 300))):
        g = parse_abstracted(TABLE[k], frame=TABLE_FRAME)
        checks[k] = g == Grounding(verb, obj, pos) and serialize_abstracted(g) == TABLE[k]
    la = parse_abstracted(TABLE["LA"])
    checks["LA"] = la == Latent(2) and serialize_abstracted(la) == TABLE["LA"]
    ok = all(checks.values())
    log(acceptance_log, 2, ok, " ".join(f"{k}:{'ok' if v else 'FAIL'}" for k, v in checks.items()))
    assert ok


# -- 3 ---------------------------------------------------------------------


def test_criterion_03_factorisation(acceptance_log):
    rollouts, _ = labelled_datasets()
    pool = [(s.obs, r.trajectory.instruction) for r in rollouts for s in r.trajectory.steps]
    rng = np.random.default_rng(3)
    states = [pool[i] for i in rng.integers(len(pool), size=1000)]
    model = UnifiedCoA(PolicyConfig(hidden=8, depth=1, spaces=tuple(s.value for s in ALL_SPACES))).double()
    worst = 0.0
    for i, (obs, ins) in enumerate(states):
        sp = ALL_SPACES[i % 4]
        head = make_head(sp)
        A = head.sample(torch.from_numpy(rng.normal(size=head.n_logits)), rng)
        a = action_from_factors([int(rng.integers(n)) for n in ENV_GROUPS])
        f = featurize(obs, ins, coa_prompt(sp))
        lj = log_joint(model, f, A, a)
        want = log_prob_high(model, f, A) + log_prob_low(model, f, A, a)
        if lj != want:  # equal infinities (masked GUI clicks) count as exact
            worst = max(worst, abs(lj - want))
    motion_model = UnifiedCoA(PolicyConfig(hidden=8, depth=1, spaces=("motion",))).double()
    combos = MotionHead().enumerate()
    gui = next(s for s in states if s[0].mode != "world")
    worst_m = 0.0
    for obs, ins in (states[0], states[500], gui):
        f = featurize(obs, ins, FormatPrompt.MotionCoA)
        a = action_from_factors([int(rng.integers(n)) for n in ENV_GROUPS])
        explicit = math.fsum(math.exp(log_prob_high(motion_model, f, A) + log_prob_low(motion_model, f, A, a))
                             for A in combos)
        got = marginal_log_prob(motion_model, f, a, Space.MOTION)
        worst_m = max(worst_m, abs(math.exp(got) - explicit))
    ok = worst <= 1e-12 and worst_m <= 1e-9
    log(acceptance_log, 3, ok, f"log_joint max err {worst:.1e} on 1000 states; Motion marginal err {worst_m:.1e}")
    assert ok


# -- 4 ---------------------------------------------------------------------


def test_criterion_04_numerical_checks(acceptance_log):
    vq_err = vq_fd_worst()
    _, datasets = labelled_datasets()
    pol_err = policy_fd_worst(datasets)
    rng = np.random.default_rng(4)
    cb = torch.from_numpy(rng.normal(size=(64, 32)))
    z = torch.from_numpy(rng.normal(size=(1000, 32)))
    code, _ = quantize(z, cb)
    q_ok = np.array_equal(code.numpy(), brute_force_codes(z.numpy(), cb.numpy()))
    model = VQModel(VQConfig()).double()
    t = torch.from_numpy(np.stack([rng.integers(0, n, size=(64, model.cfg.window)) for n in GROUP_SIZES], axis=-1))
    with torch.no_grad():
        loss = vq_loss(model, t)
        ident = loss.total.item() == (loss.rec + loss.codebook_term + model.cfg.commitment_beta *
                                      loss.commit_term).item()
    ok = vq_err <= 1e-4 and pol_err <= 1e-4 and q_ok and ident
    log(acceptance_log, 4, ok, f"VQ FD rel err {vq_err:.1e}; policy FD rel err {pol_err:.1e}; "
                               f"quantize==brute force: {q_ok}; loss identity exact: {ident}")
    assert ok


# -- 5 ---------------------------------------------------------------------


def test_criterion_05_vq_health(acceptance_log):
    t0 = time.perf_counter()
    cfg = VQConfig(codebook_size=16, seed=0)
    train, _ = motif_corpus(repeats=40, seed=0)
    model, _ = train_vq(train, cfg)
    again, _ = train_vq(train, cfg)
    seconds = time.perf_counter() - t0
    held, _ = motif_corpus(repeats=20, seed=99)
    rec = reconstruction_rate(model, held)
    ppl = perplexity(np.bincount(encode_codes(model, held), minlength=16))
    same = codebook_bytes(model) == codebook_bytes(again)
    ok = rec >= 0.9 and ppl >= 4 and same and seconds < 120
    log(acceptance_log, 5, ok, f"reconstruction {rec:.2f}, perplexity {ppl:.2f}, deterministic {same}, "
                               f"{seconds:.1f}s for two runs")
    assert ok


# -- 6 ---------------------------------------------------------------------


def test_criterion_06_labeler(acceptance_log):
    dumps = []
    for _ in range(2):
        rs = [expert_rollout(t, 0, traj_id=i) for i, t in enumerate(TASKS)]
        trajs = [r.trajectory for r in rs]
        parts = [build_dataset(trajs, [label(r.trajectory, r.truths, sp) for r in rs], DatasetKind.D_CoA, sp).dumps()
                 for sp in (Space.MOTION, Space.GROUNDING, Space.SKILL)]
        dumps.append(parts + [build_dataset(trajs, None, DatasetKind.D_a).dumps()])
    identical = dumps[0] == dumps[1]
    agree = 0
    for name, (actions, state, motion, grounding, skill) in CASES.items():
        traj, truths = record(state, actions)
        cfg = LabelerConfig()
        m = [A for _, A in label_motion(traj, cfg)]
        g = [A for _, A in label_grounding(traj, truths, cfg)]
        s = [(w, A.s) for w, A in label_skill(traj, cfg)]
        m_ok = len(m) == len(motion) and all(w is None or w == x for w, x in zip(motion, m))
        agree += m_ok and g == grounding and s == skill
    ok = identical and agree == len(CASES) == 10
    log(acceptance_log, 6, ok, f"byte-identical datasets: {identical}; micro-trajectories {agree}/{len(CASES)}")
    assert ok


# -- 7 ---------------------------------------------------------------------


def test_criterion_07_call_count_law(acceptance_log, expressiveness, coa_runs):
    res, _ = expressiveness
    fast = res.motion.results + res.grounding.results
    slow = [r for run, _ in coa_runs for rep in run.reports.values() for r in rep.results]
    fast_ok = all(r.high_level_calls == math.ceil(r.steps / 8) and r.low_level_calls == r.steps for r in fast)
    slow_ok = all(r.high_level_calls == r.steps == r.low_level_calls for r in slow)
    full = Report("full", "Fast(k=8)", [r for r in fast if r.steps == 400])
    ratio = full.call_ratio
    ok = fast_ok and slow_ok and len(full.results) > 0 and ratio == 8.0
    log(acceptance_log, 7, ok, f"Fast law on {len(fast)} episodes: {fast_ok}; Slow law on {len(slow)}: {slow_ok}; "
                               f"LL/HL on {len(full.results)} full-length episodes = {ratio}")
    assert ok


# -- 8 ---------------------------------------------------------------------


def test_criterion_08_expressiveness_gap(acceptance_log, expressiveness):
    res, seconds = expressiveness
    motion = res.gui_rates(res.motion)
    grounding = res.gui_rates(res.grounding)
    episodes = len(res.motion.results)
    ok = all(v == 0.0 for v in motion.values()) and any(v > 0 for v in grounding.values()) and \
        episodes >= 100 and seconds < 300
    fmt_rates = lambda d: " ".join(f"{t}={100 * v:.0f}%" for t, v in d.items())
    log(acceptance_log, 8, ok, f"MotionHA GUI [{fmt_rates(motion)}]; GroundingHA GUI [{fmt_rates(grounding)}]; "
                               f"{episodes} episodes each; {seconds:.0f}s incl. corpus")
    assert ok


# -- 9 ---------------------------------------------------------------------


def test_criterion_09_coa_trend(acceptance_log, coa_runs):
    lines, votes = [], []
    for res, seconds in coa_runs:
        good, cmp = _coa_ok(res)
        votes.append(good)
        lines.append(f"seed {res.seed}: flat {success_rate(res.reports['flat']):.1f} vs CoA "
                     f"{success_rate(res.reports['coa']):.1f} (delta {cmp.delta:+.1f}, p={cmp.p_value:.2f}, "
                     f"n={cmp.n}, {seconds:.0f}s) {'ok' if good else 'miss'}")
    ok = votes[0] or sum(votes) >= 2
    within = all(s < 1800 for _, s in coa_runs)
    log(acceptance_log, 9, ok and within, "; ".join(lines) + ("" if len(votes) == 1 else
                                                           f"; majority {sum(votes)}/{len(votes)}"))
    assert ok and within


# -- 10 --------------------------------------------------------------------


def test_criterion_10_all_in_one_trend(acceptance_log, corpora):
    lines, votes = [], []
    for seed in TREND_SEEDS:
        t0 = time.perf_counter()
        res = all_in_one_trend(ExperimentConfig().with_seed(seed), episodes_per_category=36, corpus=corpora(seed))
        sr = {k: success_rate(v) for k, v in res.reports.items()}
        good = all(sr[f"mixed:{sp.value}"] >= sr[f"specialist:{sp.value}"] - 5 for sp in (Space.MOTION,
                                                                                           Space.GROUNDING))
        votes.append(good)
        lines.append(f"seed {seed}: " + ", ".join(f"{k} {v:.1f}" for k, v in sr.items()) +
                     f" ({time.perf_counter() - t0:.0f}s) {'ok' if good else 'miss'}")
        if votes.count(True) >= 2 or votes.count(False) >= 2:
            break
    ok = votes.count(True) >= 2
    log(acceptance_log, 10, ok, "; ".join(lines) + f"; majority {votes.count(True)}/{len(votes)}")
    assert ok


# -- 11 --------------------------------------------------------------------


def test_criterion_11_protocol(acceptance_log, expressiveness, tmp_path):
    res, _ = expressiveness
    rejects = 0
    for bad in (dict(seeds_per_task=2), dict(tasks=("chop_oak",), mini_set=("chop_oak",), runs_per_task=9)):
        try:
            EvalConfig(**bad)
        except ConfigError:
            rejects += 1
    mini = EvalConfig(tasks=("chop_oak", "kill_sheep"), mini_set=("kill_sheep",))
    mini_ok = len(mini.seeds("kill_sheep")) >= 10 and len(mini.seeds("chop_oak")) >= 3
    per_task = {}
    for r in res.motion.results:
        per_task[r.task] = per_task.get(r.task, 0) + 1
    seeds_ok = min(per_task.values()) >= 3
    expert = evaluate(PolicyBundle("Expert", expert=True), Slow(),
                      EvalConfig(tasks=("chop_oak", "kill_sheep", "craft_sticks"), mini_set=("kill_sheep",)))
    reports = [res.motion, res.grounding, expert]
    md, csv_text = render_report(reports)
    for i, rep in enumerate(reports):
        rep.save(tmp_path / f"{i}.jsonl")
    md2, csv2 = render_report([Report.load(tmp_path / f"{i}.jsonl") for i in range(len(reports))])
    exact = md == md2 and csv_text == csv2
    ok = rejects == 2 and mini_ok and seeds_ok and exact
    log(acceptance_log, 11, ok, f"config guards {rejects}/2; mini-set runs {len(mini.seeds('kill_sheep'))}; "
                                f"min seeds per task {min(per_task.values())}; regenerated report bit-exact: {exact}")
    assert ok


# -- 12 --------------------------------------------------------------------


def test_criterion_12_expert_calibration(acceptance_log):
    cfg = EvalConfig(tasks=tuple(TASKS), seeds_per_task=100)
    rep = evaluate(PolicyBundle("Expert", expert=True), Slow(), cfg)
    rates = {c: 100.0 * s.successes / s.episodes for c, s in rep.categories.items()}
    ok = set(rates) == set(CATEGORIES) and all(v >= 95 for v in rates.values())
    log(acceptance_log, 12, ok, " ".join(f"{c} {v:.1f}% ({rep.categories[c].episodes} eps)"
                                         for c, v in rates.items()))
    assert ok
