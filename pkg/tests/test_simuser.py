import numpy as np
import pytest

from prefcomp.errors import DimensionError
from prefcomp.simuser import (
    CHOICE_A,
    CHOICE_B,
    CHOICE_EQUAL,
    SimUserProfile,
    answer,
    builtin_profiles,
    score,
)


def flat_profile(**overrides):
    kw = dict(
        name="t",
        target_adjustment=(4.0, 1.0, 1.0, 4.0, 4.0),
        band_weights=(1.0,) * 5,
    )
    kw.update(overrides)
    return SimUserProfile(**kw)


def test_score_perfect_match_is_zero():
    p = flat_profile()
    assert score(p, p.target_adjustment) == 0.0


def test_score_unit_penalty_per_mismatch():
    p = flat_profile()
    adj = (1.0, 1.0, 1.0, 4.0, 4.0)  # one mismatch in band 0
    assert score(p, adj) == -1.0


def test_score_weighted_mismatches():
    p = flat_profile(band_weights=(2.0, 0.0, 1.0, 0.0, 1.0), target_adjustment=(1.0,) * 5)
    adj = (4.0, 1.0, 4.0, 1.0, 1.0)  # mismatches in bands 0 and 2
    assert score(p, adj) == -3.0


def test_score_length_mismatch():
    with pytest.raises(DimensionError):
        score(flat_profile(), (1.0, 4.0))


def test_answer_prefers_higher_score():
    p = flat_profile()
    rng = np.random.default_rng(0)
    out = answer(p, p.target_adjustment, (1.0,) * 5, rng)
    assert out.choice == CHOICE_A
    out = answer(p, (1.0,) * 5, p.target_adjustment, rng)
    assert out.choice == CHOICE_B


def test_answer_equal_scores_give_equal():
    p = flat_profile()
    rng = np.random.default_rng(0)
    a = (1.0, 1.0, 1.0, 4.0, 4.0)  # one mismatch
    b = (4.0, 4.0, 1.0, 4.0, 4.0)  # one mismatch
    assert answer(p, a, b, rng).choice == CHOICE_EQUAL


def test_answer_antisymmetry_without_noise():
    p = flat_profile()
    rng = np.random.default_rng(1)
    for _ in range(50):
        adj_a = tuple(rng.choice([1.0, 4.0], size=5))
        adj_b = tuple(rng.choice([1.0, 4.0], size=5))
        fwd = answer(p, adj_a, adj_b, rng).choice
        rev = answer(p, adj_b, adj_a, rng).choice
        assert fwd == {CHOICE_A: CHOICE_B, CHOICE_B: CHOICE_A, CHOICE_EQUAL: CHOICE_EQUAL}[rev]


def test_target_weakly_dominates():
    p = flat_profile()
    rng = np.random.default_rng(2)
    for _ in range(50):
        other = tuple(rng.choice([1.0, 4.0], size=5))
        assert answer(p, p.target_adjustment, other, rng).choice != CHOICE_B


def test_flip_probability_one_is_uniform():
    p = flat_profile(flip_prob=1.0)
    rng = np.random.default_rng(3)
    counts = {CHOICE_A: 0, CHOICE_B: 0, CHOICE_EQUAL: 0}
    n = 9000
    for _ in range(n):
        counts[answer(p, p.target_adjustment, (1.0,) * 5, rng).choice] += 1
    for c in counts.values():
        assert abs(c / n - 1 / 3) <= 0.02


def test_builtin_profiles_shape():
    profiles = builtin_profiles()
    assert set(profiles) == {"1", "2", "3", "4", "5"}
    assert profiles["2"].flip_prob == pytest.approx(0.4)
    assert profiles["4"].active_bands == (0, 4)
    assert profiles["5"].active_bands == (0, 2, 4)
    strict = profiles["3"]
    assert sum(w > 0 for w in strict.band_weights) == 2


def test_user4_ignores_middle_bands():
    p = builtin_profiles()["4"]
    rng = np.random.default_rng(4)
    a = (1.0, 1.0, 1.0, 1.0, 1.0)
    b = (1.0, 4.0, 4.0, 4.0, 1.0)  # differs only in inactive bands
    assert answer(p, a, b, rng).choice == CHOICE_EQUAL


def test_user5_target_reachable_in_its_action_space():
    from prefcomp.actions import build_action_space

    p = builtin_profiles()["5"]
    space = build_action_space(5, {1, 4}, active_bands=(0, 2, 4))
    assert space.size == 8
    assert p.target_adjustment in space.dictionary


def test_user1_deterministic():
    p = builtin_profiles()["1"]
    rng = np.random.default_rng(5)
    pairs = [
        (tuple(rng.choice([1.0, 4.0], size=5)), tuple(rng.choice([1.0, 4.0], size=5)))
        for _ in range(20)
    ]
    first = [answer(p, a, b, np.random.default_rng(0)).choice for a, b in pairs]
    second = [answer(p, a, b, np.random.default_rng(99)).choice for a, b in pairs]
    assert first == second  # rng is irrelevant at flip_prob 0


def test_user3_equal_fraction_exceeds_user1():
    profiles = builtin_profiles()
    rng = np.random.default_rng(6)
    pairs = [
        (tuple(rng.choice([1.0, 4.0], size=5)), tuple(rng.choice([1.0, 4.0], size=5)))
        for _ in range(400)
    ]
    eq = {key: 0 for key in ("1", "3")}
    for key in eq:
        for a, b in pairs:
            if answer(profiles[key], a, b, np.random.default_rng(0)).choice == CHOICE_EQUAL:
                eq[key] += 1
    assert eq["3"] > eq["1"]


def test_profile_json_roundtrip(tmp_path):
    p = builtin_profiles()["4"]
    path = tmp_path / "profile.json"
    path.write_text(p.to_json())
    back = SimUserProfile.from_json_file(path)
    assert back == p


def test_builtins_never_answer_neither():
    rng = np.random.default_rng(8)
    for p in builtin_profiles().values():
        for _ in range(100):
            a = tuple(rng.choice([1.0, 4.0], size=5))
            b = tuple(rng.choice([1.0, 4.0], size=5))
            assert answer(p, a, b, rng).choice != "NEITHER"


def test_custom_profile_can_answer_neither():
    p = flat_profile(neither_prob=1.0)
    rng = np.random.default_rng(9)
    assert answer(p, p.target_adjustment, (1.0,) * 5, rng).choice == "NEITHER"
