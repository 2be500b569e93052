import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chainact.action_core import (
    BUTTONS,
    DEFAULT_CAMERA,
    DEFAULT_GRID,
    CameraBinConfig,
    EnvAction,
    GridAction,
    GridKind,
    all_grid_actions,
    dequantize_axis,
    env_to_grid,
    grid_to_env,
    quantize_axis,
    quantize_camera,
    unit_steps,
)
from chainact.errors import InvalidBin, OutOfRange


def mu_law_bin(delta, mu=10.0, n=11, maxdeg=180.0):
    # independent closed form: y = sign(x) ln(1 + mu|x|) / ln(1 + mu), bin = floor((y + 1) n / 2)
    x = delta / maxdeg
    y = np.sign(x) * np.log(1 + mu * abs(x)) / np.log(1 + mu)
    return int(min(np.floor((y + 1) * n / 2), n - 1))


def test_button_vocabulary_has_23_entries():
    assert len(BUTTONS) == 23
    assert len(set(BUTTONS)) == 23


def test_camera_example_bins():
    assert quantize_camera((-1, -9)) == (5, 4)
    assert quantize_camera((0, 0)) == (5, 5)
    assert quantize_camera((180, -180)) == (10, 0)


@given(st.floats(-180, 180, allow_nan=False))
def test_quantize_matches_closed_form(delta):
    assert quantize_axis(delta) == mu_law_bin(delta)


def test_quantize_is_monotone():
    xs = np.linspace(-180, 180, 20001)
    bins = [quantize_axis(float(x)) for x in xs]
    assert all(b2 >= b1 for b1, b2 in zip(bins, bins[1:]))
    assert sorted(set(bins)) == list(range(11))


def test_dequantize_lands_in_its_own_bin():
    for i in range(11):
        assert quantize_axis(dequantize_axis(i)) == i
    assert dequantize_axis(DEFAULT_CAMERA.center) == 0.0


def test_dequantize_is_antisymmetric():
    for i in range(11):
        assert dequantize_axis(i) == -dequantize_axis(10 - i)


@pytest.mark.parametrize("bad", [float("nan"), float("inf"), 180.0001, -200])
def test_out_of_range_delta(bad):
    with pytest.raises(OutOfRange):
        quantize_axis(bad)


@pytest.mark.parametrize("bad", [-1, 11, 2.0])
def test_invalid_bin(bad):
    with pytest.raises(InvalidBin):
        dequantize_axis(bad)


def test_bin_config_validation():
    with pytest.raises(ValueError):
        CameraBinConfig(bins_per_axis=10)
    with pytest.raises(ValueError):
        CameraBinConfig(mu=0)


def test_env_action_rejects_unknown_button_and_large_camera():
    with pytest.raises(ValueError):
        EnvAction.of("fly")
    with pytest.raises(OutOfRange):
        EnvAction(camera=(0, 181))


def test_negative_zero_is_normalised():
    assert EnvAction(camera=(-0.0, 0.0)) == EnvAction()
    assert EnvAction(camera=(-0.0, 0.0)).is_null()


@given(st.sets(st.sampled_from(BUTTONS)), st.floats(-180, 180), st.floats(-180, 180))
def test_record_roundtrip(pressed, p, y):
    a = EnvAction(frozenset(pressed), (p, y))
    assert EnvAction.from_record(a.to_record()) == a
    assert EnvAction.from_json(a.to_json()) == a
    assert EnvAction.from_flat_record(a.to_flat_record()) == a


def test_flat_record_of_table_example():
    a = EnvAction(camera=(-1, -9))
    rec = a.to_flat_record()
    assert list(rec)[:2] == ["camera", "ESC"]
    assert rec["camera"] == [-1, -9]
    assert rec["hotbar.1-9"] == 0
    assert len(rec) == 16  # camera + 15 button keys with hotbar collapsed


def test_grid_actions_are_injective_and_left_inverted():
    acts = all_grid_actions()
    images = [grid_to_env(g) for g in acts]
    assert len(set(images)) == len(acts)
    for g, a in zip(acts, images):
        assert env_to_grid(a) == g


def test_click_is_distinct_from_attack():
    assert grid_to_env(GridAction(GridKind.Click)) != grid_to_env(GridAction(GridKind.Attack))


@pytest.mark.parametrize(
    "delta,quantum,expected",
    [(7.5, 15, 1), (7.49, 15, 0), (-7.5, 15, -1), (0, 15, 0), (90, 15, 1), (2.5, 5, 1), (-2.4, 5, 0)],
)
def test_unit_steps(delta, quantum, expected):
    assert unit_steps(delta, quantum) == expected


def test_env_to_grid_priority():
    assert env_to_grid(EnvAction.of("forward", "attack")).kind is GridKind.Attack
    assert env_to_grid(EnvAction.of("use", "hotbar.3")).kind is GridKind.Use
    assert env_to_grid(EnvAction.of("hotbar.5", "hotbar.2")) == GridAction(GridKind.Hotbar, n=2)
    assert env_to_grid(EnvAction.of("sprint")).kind is GridKind.NoOp


def test_env_to_grid_camera_resolution():
    assert env_to_grid(EnvAction(camera=(30, 40))).kind is GridKind.TurnRight
    assert env_to_grid(EnvAction(camera=(-30, 3))).kind is GridKind.LookUp
    assert env_to_grid(EnvAction(camera=(3, -4))) == GridAction(GridKind.CursorMove, dx=-1, dy=1)
    assert env_to_grid(EnvAction(camera=(1, 1))).kind is GridKind.NoOp


def test_grid_action_validation():
    with pytest.raises(ValueError):
        GridAction(GridKind.Hotbar, n=0)
    with pytest.raises(ValueError):
        GridAction(GridKind.CursorMove, dx=2)
    with pytest.raises(ValueError):
        GridAction(GridKind.Jump, dx=1)


@settings(max_examples=200)
@given(st.sets(st.sampled_from(BUTTONS)), st.floats(-180, 180), st.floats(-180, 180))
def test_env_to_grid_is_total(pressed, p, y):
    g = env_to_grid(EnvAction(frozenset(pressed), (p, y)))
    assert isinstance(g, GridAction)
    assert math.isfinite(grid_to_env(g, DEFAULT_GRID).camera[0])
