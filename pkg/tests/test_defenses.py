import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from fedsim import aggregation as agg
from fedsim.defenses import (DEFAULTS, DEFENSE_KINDS, KIND_KEYS, Defender, DefenderState, DefenseSpec,
                             foolsgold_reweight, foolsgold_weights, is_defense_after_aggregation,
                             is_defense_before_aggregation, is_defense_on_aggregation)
from fedsim.errors import ConfigError, ContractError
from fedsim.updates import RoundState

from conftest import make_updates, state_for, vec


def stages(spec):
    return (is_defense_before_aggregation(spec), is_defense_on_aggregation(spec),
            is_defense_after_aggregation(spec))


def test_stage_predicates():
    assert stages(None) == (False, False, False)
    assert stages(DefenseSpec.from_args("crfl")) == (False, False, True)
    assert stages(DefenseSpec.from_args("rfa")) == (False, True, False)
    assert stages(DefenseSpec.from_args("mkrum")) == (True, False, False)
    for kind in DEFENSE_KINDS:
        assert sum(stages(DefenseSpec.from_args(kind))) == 1


def test_spec_rejects_foreign_and_unknown_keys():
    with pytest.raises(ConfigError):
        DefenseSpec.from_args("krum", {"clip_tau": 1.0})
    with pytest.raises(ConfigError):
        DefenseSpec.from_args("krum", {"bogus": 1})
    with pytest.raises(ConfigError):
        DefenseSpec("krum")  # own key missing
    with pytest.raises(ConfigError):
        DefenseSpec.from_args("nope")


@pytest.mark.parametrize("kind,args", [
    ("trimmed_mean", {"trim_beta": 0.5}), ("norm_clip", {"clip_tau": 0.0}), ("weak_dp", {"noise_sigma": -1.0}),
    ("slsgd", {"slsgd_alpha": 0.0}), ("robust_lr", {"rlr_theta": 0}), ("rfa", {"weiszfeld_nu": 0.0}),
    ("krum", {"byzantine_f": -1}), ("mkrum", {"krum_m": 0}), ("foolsgold", {"foolsgold_kappa": 0.0}),
])
def test_spec_range_checks(kind, args):
    with pytest.raises(ConfigError):
        DefenseSpec.from_args(kind, args)


def test_defaults_cover_every_key():
    for kind, keys in KIND_KEYS.items():
        assert set(keys) <= set(DEFAULTS)
        DefenseSpec.from_args(kind)


def test_mkrum_round_size_bound():
    spec = DefenseSpec.from_args("mkrum", {"byzantine_f": 1, "krum_m": 5})
    spec.check_round_size(10)
    with pytest.raises(ConfigError):
        spec.check_round_size(9)


# --- krum ---------------------------------------------------------------------

def test_krum_worked_example():
    ups = make_updates([[0.0], [0.1], [0.2], [10.0]])
    assert agg.krum_scores(ups, 0) == pytest.approx([0.05, 0.02, 0.05, 194.05])
    assert [u.params.values[0] for u in agg.krum_select(ups, 0)] == [0.1]
    assert [u.params.values[0] for u in agg.krum_select(ups, 0, 2)] == [0.0, 0.1]
    assert agg.krum_select(ups, 0, 4) == ups


def test_krum_identical_models_score_zero():
    assert agg.krum_scores(make_updates(np.ones((5, 3))), 1) == [0.0] * 5


@given(arrays(np.float64, (6, 3), elements=st.floats(-10, 10)), arrays(np.float64, 3, elements=st.floats(-10, 10)))
@settings(max_examples=50, deadline=None)
def test_krum_scores_translation_invariant(rows, shift):
    a = agg.krum_scores(make_updates(rows), 1)
    b = agg.krum_scores(make_updates(rows + shift), 1)
    assert np.allclose(a, b, rtol=1e-9, atol=1e-9)


# --- foolsgold ----------------------------------------------------------------

def test_foolsgold_sybil_pair():
    w = foolsgold_weights(np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))
    assert w[0] == pytest.approx(0.0, abs=1e-12) and w[1] == pytest.approx(0.0, abs=1e-12)
    assert w[2] == 1.0


def test_foolsgold_orthogonal_and_lone_clients():
    assert np.array_equal(foolsgold_weights(np.eye(4)), np.ones(4))
    assert np.array_equal(foolsgold_weights(np.array([[0.3, -2.0]])), [1.0])
    assert np.array_equal(foolsgold_weights(np.array([[0.0, 0.0], [1.0, 1.0], [1.0, 1.0]]))[:1], [1.0])


@given(arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 5)), elements=st.floats(-10, 10)),
       st.floats(0.1, 5))
@settings(max_examples=100, deadline=None)
def test_foolsgold_weights_are_bounded(H, kappa):
    w = foolsgold_weights(H, kappa)
    assert w.shape == (H.shape[0],)
    assert np.all((w >= 0) & (w <= 1))


def test_foolsgold_reweight_accumulates_history_and_keeps_counts():
    state = DefenderState()
    g = vec([0.0, 0.0])
    ups = make_updates([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]], counts=[3, 4, 5])
    out = foolsgold_reweight(ups, g, state)
    assert [u.sample_count for u in out] == [3, 4, 5]
    assert np.allclose(out[0].params.values, 0.0) and out[2] is ups[2]
    foolsgold_reweight(ups, g, state)
    assert np.array_equal(state.foolsgold_history[0], [2.0, 0.0])


def test_foolsgold_single_client_unchanged():
    ups = make_updates([[1.0, 2.0]])
    assert foolsgold_reweight(ups, vec([0.0, 0.0]), DefenderState()) == ups


def test_defender_state_round_trip(tmp_path):
    s = DefenderState({3: np.array([1.0, -2.5]), 0: np.array([0.0, 1e-300])}, {"m": np.arange(3.0)})
    path = tmp_path / "state.bin"
    s.save(path)
    back = DefenderState.load(path)
    assert sorted(back.foolsgold_history) == [0, 3]
    assert np.array_equal(back.foolsgold_history[3], [1.0, -2.5])
    assert np.array_equal(back.accumulators["m"], np.arange(3.0))
    assert back.to_bytes() == s.to_bytes()
    with pytest.raises(ContractError):
        DefenderState.from_bytes(b"XXXX" + s.to_bytes()[4:])
    with pytest.raises(ContractError):
        DefenderState.from_bytes(s.to_bytes() + b"\0")


# --- stage identity -------------------------------------------------------------

def random_round(seed=0, n=7, d=4):
    rng = np.random.default_rng(seed)
    ups = make_updates(rng.normal(size=(n, d)), counts=list(rng.integers(1, 50, n)))
    return ups, state_for(rng.normal(size=d), round_index=2, seed=seed)


@pytest.mark.parametrize("kind", DEFENSE_KINDS)
def test_defense_is_identity_outside_its_stage(kind):
    ups, aux = random_round()
    d = Defender(DefenseSpec.from_args(kind))
    if not d.is_defense_before_aggregation():
        out = d.defend_before_aggregation(ups, aux)
        assert all(a is b for a, b in zip(out, ups)) and len(out) == len(ups)
    if not d.is_defense_on_aggregation():
        assert d.defend_on_aggregation(ups, aux) == agg.fedavg_aggregate(ups)
    if not d.is_defense_after_aggregation():
        g = vec([1.0, 2.0, 3.0, 4.0])
        assert d.defend_after_aggregation(g, aux) is g


def test_disabled_defender_is_identity():
    ups, aux = random_round()
    d = Defender(None)
    assert not d.enabled and d.name == "none"
    assert d.defend_before_aggregation(ups, aux) == ups
    assert d.defend_on_aggregation(ups, aux) == agg.fedavg_aggregate(ups)


@pytest.mark.parametrize("kind", DEFENSE_KINDS)
def test_defender_runs_every_kind(kind):
    ups, aux = random_round(1)
    d = Defender(DefenseSpec.from_args(kind, {"krum_m": 2} if kind == "mkrum" else {}))
    kept = d.defend_before_aggregation(ups, aux)
    g = d.defend_on_aggregation(kept, aux)
    g = d.defend_after_aggregation(g, aux)
    assert g.layout == ups[0].params.layout
    assert d.is_stateful() == (kind == "foolsgold")


# --- noise statistics -----------------------------------------------------------

def empirical_noise_variance(kind, sigma):
    """Per-coordinate variance of the injected noise over 10^4 seeded rounds."""
    d = 8
    ups = make_updates(np.full((3, d), 0.2))
    spec = DefenseSpec.from_args(kind, {"clip_tau": 100.0, "noise_sigma": sigma})
    defender = Defender(spec)
    base = agg.fedavg_aggregate(ups)
    draws = np.empty((10_000, d))
    for r in range(10_000):
        aux = RoundState(r, vec(np.zeros(d)), seed=42)
        out = (defender.defend_on_aggregation(ups, aux) if kind == "weak_dp"
               else defender.defend_after_aggregation(base, aux))
        draws[r] = out.values - base.values
    return draws.var(axis=0, ddof=1)


@pytest.mark.parametrize("kind", ["weak_dp", "crfl"])
def test_noise_variance_matches_sigma(kind):
    sigma = 0.3
    var = empirical_noise_variance(kind, sigma)
    assert np.all(np.abs(var / sigma**2 - 1) < 0.05)


def test_noise_is_reproducible_per_round():
    ups, aux = random_round(2)
    d = Defender(DefenseSpec.from_args("weak_dp", {"noise_sigma": 1.0}))
    assert d.defend_on_aggregation(ups, aux) == d.defend_on_aggregation(ups, aux)
    other = RoundState(aux.round_index + 1, aux.global_params, aux.seed)
    assert d.defend_on_aggregation(ups, aux) != d.defend_on_aggregation(ups, other)
