import math

import numpy as np
import pytest
from statsmodels.stats.proportion import proportions_ztest

from chainact.codecs import Space
from chainact.errors import ConfigError, ModeModelMismatch, SuiteMismatch
from chainact.harness import (
    EpisodeResult,
    EvalConfig,
    Fast,
    InferenceMode,
    PolicyBundle,
    Report,
    Slow,
    aggregate,
    compare,
    evaluate,
    fmt,
    parse_report_csv,
    render_report,
    run_episode,
    two_proportion_z,
)
from chainact.minegrid import CATEGORIES, TASKS, tasks_in
from chainact.policy import FlatPolicy, HighLevelPolicy, LowLevelDecoder, PolicyConfig, UnifiedCoA


def small(cls, spaces=("grounding",), seed=0):
    return cls(PolicyConfig(hidden=16, depth=1, spaces=spaces, seed=seed))


@pytest.fixture(scope="module")
def bundles():
    return {
        "ha": PolicyBundle("GroundingHA", Space.GROUNDING, high=small(HighLevelPolicy), low=small(LowLevelDecoder),
                           greedy=False),
        "coa": PolicyBundle("GroundingVLA", Space.GROUNDING, coa=small(UnifiedCoA), greedy=False),
        "flat": PolicyBundle("TextVLA", coa=small(FlatPolicy, ()), greedy=True),
        "expert": PolicyBundle("Expert", expert=True),
    }


def result(task, seed, ok, steps=10):
    return EpisodeResult(task, seed, ok, steps if ok else 400, steps, steps)


# -- statistics ------------------------------------------------------------


@pytest.mark.parametrize("k1,n1,k2,n2", [(30, 50, 20, 50), (7, 20, 11, 20), (0, 100, 1, 100), (55, 104, 48, 104),
                                         (3, 13, 12, 17)])
def test_z_test_matches_statsmodels(k1, n1, k2, n2):
    z, p = two_proportion_z(k1, n1, k2, n2)
    z_ref, p_ref = proportions_ztest([k1, k2], [n1, n2])
    assert z == pytest.approx(z_ref, rel=1e-12) and p == pytest.approx(p_ref, rel=1e-10)


def test_z_test_closed_form_examples():
    assert two_proportion_z(0, 100, 100, 100)[1] < 1e-6
    assert two_proportion_z(10, 20, 11, 20)[1] > 0.05
    assert two_proportion_z(5, 10, 5, 10) == (0.0, 1.0)
    assert two_proportion_z(0, 10, 0, 10) == (0.0, 1.0)
    with pytest.raises(ValueError):
        two_proportion_z(0, 0, 1, 1)


def test_compare_self_and_mismatch():
    rs = [result(t, s, s % 2 == 0) for t in TASKS for s in range(3)]
    a = Report("a", "Slow", rs)
    for c in compare(a, a).values():
        assert c.delta == 0.0 and c.p_value == 1.0
    b = Report("b", "Slow", rs[:-1])
    with pytest.raises(SuiteMismatch):
        compare(a, b)
    joined = compare(a, a, ["Embodied", "Combat"])
    assert list(joined) == ["Embodied+Combat"] and joined["Embodied+Combat"].n == 24


# -- episodes --------------------------------------------------------------


def test_call_counts_short_episodes(bundles):
    r = run_episode(bundles["ha"], Fast(8), "find_water", 10_000, max_steps=20)
    if not r.success:
        assert (r.steps, r.high_level_calls, r.low_level_calls) == (20, 3, 20)
    r = run_episode(bundles["coa"], Slow(), "find_water", 10_000, max_steps=20)
    if not r.success:
        assert (r.steps, r.high_level_calls, r.low_level_calls) == (20, 20, 20)


def test_call_count_law_every_episode(bundles):
    cfg = EvalConfig(tasks=tuple(t.id for c in CATEGORIES for t in tasks_in(c)[:2]), max_steps=60)
    for k in (1, 3, 8):
        rep = evaluate(bundles["ha"], Fast(k), cfg)
        for r in rep.results:
            assert r.high_level_calls == math.ceil(r.steps / k) and r.low_level_calls == r.steps
    for b in ("coa", "flat", "expert"):
        for r in evaluate(bundles[b], Slow(), cfg).results:
            assert r.high_level_calls == r.steps == r.low_level_calls


def test_call_ratio_on_full_length_failures(bundles):
    cfg = EvalConfig(tasks=("craft_planks", "kill_zombie"), max_steps=400)
    rep = evaluate(bundles["ha"], Fast(8), cfg)
    full = Report("x", "Fast", [r for r in rep.results if not r.success])
    assert full.results and full.call_ratio == 8.0


def test_death_keeps_the_law(bundles):
    # an idle agent next to two zombies dies well before max_steps
    r = run_episode(bundles["ha"], Fast(8), "kill_two_zombies", 10_001, max_steps=400)
    assert r.steps == 400 or r.success
    if not r.success:
        assert r.high_level_calls == 50 and r.low_level_calls == 400


def test_episode_determinism(bundles):
    for b, mode in (("ha", Fast(8)), ("coa", Slow()), ("flat", Slow())):
        a = run_episode(bundles[b], mode, "chop_oak", 10_002, max_steps=80)
        c = run_episode(bundles[b], mode, "chop_oak", 10_002, max_steps=80)
        assert a == c


def test_trace_sees_every_step(bundles):
    seen = []
    r = run_episode(bundles["ha"], Fast(4), "mine_stone", 10_000, max_steps=12, trace=lambda t, A, a: seen.append(t))
    assert seen == list(range(12 if not r.success else r.steps))


def test_mode_model_mismatch(bundles):
    with pytest.raises(ModeModelMismatch):
        run_episode(bundles["coa"], Fast(8), "chop_oak", 0)
    with pytest.raises(ModeModelMismatch):
        run_episode(bundles["ha"], Slow(), "chop_oak", 0)
    with pytest.raises(ConfigError):
        InferenceMode("medium")
    with pytest.raises(ConfigError):
        Fast(0)


# -- evaluation protocol ---------------------------------------------------


def test_eval_config_protocol():
    cfg = EvalConfig(tasks=("chop_oak", "kill_sheep", "craft_sticks", "smelt_stone"))
    assert len(cfg.pairs()) == 12
    mini = EvalConfig(tasks=("chop_oak", "kill_sheep"), mini_set=("kill_sheep",))
    assert len(mini.seeds("kill_sheep")) == 10 and len(mini.seeds("chop_oak")) == 3
    with pytest.raises(ConfigError):
        EvalConfig(seeds_per_task=2)
    with pytest.raises(ConfigError):
        EvalConfig(tasks=("chop_oak",), mini_set=("kill_sheep",))
    with pytest.raises(ConfigError):
        EvalConfig(mini_set=("chop_oak",), runs_per_task=5)


def test_all_failure_policy():
    rs = [EpisodeResult(t, s, False, 400, 50, 400) for t in TASKS for s in range(3)]
    for s in aggregate(rs).values():
        assert s.sr == 0.0 and s.steps == 400.0 and math.isnan(s.steps_success)


def test_aggregate_hand_computed():
    rs = [result("chop_oak", 0, True, 10), result("chop_oak", 1, False), result("chop_oak", 2, False),
          result("chop_birch", 0, True, 20), result("chop_birch", 1, True, 30), result("chop_birch", 2, False)]
    s = aggregate(rs)["Embodied"]
    task_sr = [100 / 3, 200 / 3]
    assert s.sr == pytest.approx(np.mean(task_sr)) and s.sr_std == pytest.approx(np.std(task_sr))
    assert s.steps == pytest.approx((10 + 400 + 400 + 20 + 30 + 400) / 6)
    assert s.steps_success == pytest.approx(20.0)
    assert math.isnan(s.sr_mini)


def test_mini_set_uses_first_three_seeds_for_sr_all():
    rs = [result("kill_sheep", 10_000 + i, i < 3) for i in range(10)] + [result("kill_zombie", 10_000 + i, False)
                                                                         for i in range(3)]
    s = aggregate(rs, mini_set=("kill_sheep",))["Combat"]
    assert s.sr == pytest.approx(50.0)  # 100% on sheep's first three, 0% on zombie
    assert s.sr_mini == pytest.approx(30.0)


def test_expert_calibration_small():
    cfg = EvalConfig(tasks=tuple(TASKS), seeds_per_task=5)
    rep = evaluate(PolicyBundle("Expert", expert=True), Slow(), cfg)
    for s in rep.categories.values():
        assert s.successes / s.episodes >= 0.95


# -- rendering -------------------------------------------------------------


def test_fmt():
    assert fmt(12.345, 1.75) == "12.3^{±1.8}"
    assert fmt(50.0, 0.0) == "50.0^{±0.0}"
    assert fmt(float("nan"), 0.0) == "-"


def test_render_single_report(tmp_path):
    rs = [result(t, 10_000 + s, (s + i) % 2 == 0, 10 + s) for i, t in enumerate(TASKS) for s in range(3)]
    rep = Report("GroundingVLA", "Slow", rs)
    md, csv_text = render_report([rep])
    lines = md.strip().splitlines()
    assert len(lines) == 3
    cells = [c.strip() for c in lines[2].strip("|").split("|")]
    numeric = cells[2:-1]
    assert len(numeric) == 9
    assert sum(1 for c in numeric if "^{±" in c) == 3  # SR(All) per category; SR(Mini) empty
    assert cells[-1] == "1.0"
    (row,) = parse_report_csv(csv_text)
    stats = rep.categories
    for cat in CATEGORIES:
        assert row[f"{cat}_sr_all"] == stats[cat].sr and row[f"{cat}_steps"] == stats[cat].steps
    path = tmp_path / "r.jsonl"
    rep.save(path)
    assert render_report([Report.load(path)]) == (md, csv_text)


def test_fast_call_ratio_column():
    rs = [EpisodeResult(t, s, False, 400, 50, 400) for t in TASKS for s in range(3)]
    md, csv_text = render_report([Report("GroundingHA", "Fast(k=8)", rs)])
    assert md.strip().splitlines()[-1].endswith("| 8.0 |")
    assert parse_report_csv(csv_text)[0]["call_ratio"] == 8.0
