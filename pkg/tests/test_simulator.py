"""
Tests for particle simulation and direct sampling.
"""

import numpy as np
import pytest

from mbpre.exceptions import DegenerateShiftError, DomainError, ZeroMassConditionError
from mbpre.linfrac import LinFracLaw, compose, local_prob_total, survival_probs
from mbpre.simulator import (
    PopulationState,
    SingleParticle,
    TotalBetween,
    condition_mass,
    conditional_sampler,
    load_environment,
    sample_offspring,
    sample_zn_direct,
    save_environment,
    simulate_particles,
)


def test_population_state():
    state = PopulationState([2, 3], generation=4)
    assert state.total == 5
    assert not state.extinct
    assert state.to_dict() == {"n": 4, "counts": [2, 3], "total": 5}
    with pytest.raises(DomainError):
        PopulationState([-1, 2])


def test_offspring_law_matches_generating_function(l0_law):
    """One reference letter: P(no child) = 1/3 and P(one child) = 2/9."""
    draws = sample_offspring(l0_law, 0, np.random.default_rng(0), size=40_000)
    totals = draws.sum(axis=1)
    assert np.mean(totals == 0) == pytest.approx(1 / 3, abs=0.015)
    assert np.mean(totals == 1) == pytest.approx(2 / 9, abs=0.015)
    assert draws.sum(axis=0).min() > 0


def test_offspring_single_draw(l0_law):
    draw = sample_offspring(l0_law, 1, np.random.default_rng(1))
    assert draw.shape == (2,)


def test_offspring_rejects_improper_law():
    law = LinFracLaw(M=np.full((2, 2), 3.0), w=np.zeros(2))
    with pytest.raises(DomainError):
        sample_offspring(law, 0, np.random.default_rng(0))


def test_simulation_survival_matches_closed_form(l0_law):
    """The surviving fraction after two generations is Q_2 = 4/7."""
    env = [l0_law, l0_law]
    rng = np.random.default_rng(2)
    alive = [
        not simulate_particles(env, [1, 0], 2, rng=rng).states[-1].extinct
        for _ in range(5000)
    ]
    assert np.mean(alive) == pytest.approx(4 / 7, abs=0.025)


def test_simulation_records_trajectory(l0_law):
    trajectory = simulate_particles([l0_law] * 3, [1, 1], 3, seed=11)
    assert len(trajectory.states) == 4
    assert trajectory.seed == 11
    assert trajectory.totals[0] == 2
    assert len(trajectory.env_ref) == 3


def test_simulation_cap(l0_law):
    """Runs that outgrow the cap stop early and are flagged."""
    trajectory = simulate_particles([l0_law] * 50, [50, 50], 50, seed=3, cap=200)
    assert trajectory.capped
    assert len(trajectory.states) < 51


def test_simulation_validates_inputs(l0_law):
    with pytest.raises(DomainError):
        simulate_particles([l0_law], [1, 0], 2)
    with pytest.raises(DomainError):
        simulate_particles([l0_law], [1, 0, 0], 1)


def test_trajectory_jsonl(l0_law, tmp_path):
    trajectory = simulate_particles([l0_law] * 2, [1, 0], 2, seed=1)
    path = trajectory.to_jsonl(tmp_path / "t.jsonl")
    assert len(path.read_text().splitlines()) == 3


def test_direct_sampling_matches_closed_form(l0_law):
    """Z_n drawn from the quenched state has the closed-form size law."""
    state = compose([l0_law] * 3, [1.0, 1.0])
    draws = sample_zn_direct(state, 0, np.random.default_rng(4), size=40_000)
    totals = draws.sum(axis=1)
    assert np.mean(totals == 0) == pytest.approx(survival_probs(state).R[0], abs=0.01)
    expected = local_prob_total(state, 0, 2)
    assert np.mean(totals == 2) == pytest.approx(expected, abs=0.01)


def test_direct_sampling_needs_shift():
    law = LinFracLaw(M=np.full((2, 2), 0.5), w=np.zeros(2))
    state = compose([law], [1.0, 1.0])
    with pytest.raises(DegenerateShiftError):
        sample_zn_direct(state, 0, np.random.default_rng(0))


def test_conditional_sampler_window(l0_law):
    """Given 1 <= |Z_n| <= c the size law is the renormalized closed form."""
    state = compose([l0_law], [1.0, 1.0])
    rng = np.random.default_rng(5)
    draws = conditional_sampler(state, 0, TotalBetween(2), rng, size=20_000)
    totals = draws.sum(axis=1)
    assert set(np.unique(totals)) <= {1, 2}
    assert np.mean(totals == 1) == pytest.approx(3 / 5, abs=0.015)


def test_conditional_sampler_single_particle(l0_law):
    state = compose([l0_law], [1.0, 1.0])
    draw = conditional_sampler(state, 0, SingleParticle(1), np.random.default_rng(6))
    assert draw.tolist() == [0, 1]
    assert condition_mass(state, 0, SingleParticle(1)) == pytest.approx(1 / 9)


def test_conditional_sampler_zero_mass(l0_law, monkeypatch):
    """Conditions without quenched mass cannot be sampled."""
    monkeypatch.setattr(
        "mbpre.simulator.condition_masses", lambda state, i, condition: np.zeros(1)
    )
    state = compose([l0_law], [1.0, 1.0])
    with pytest.raises(ZeroMassConditionError):
        conditional_sampler(state, 0, SingleParticle(1), np.random.default_rng(0))


def test_total_between_validation():
    with pytest.raises(DomainError):
        TotalBetween(0)


def test_environment_fixture_round_trip(l0_law, tmp_path):
    path = save_environment(tmp_path / "env.json", [l0_law, l0_law])
    loaded = load_environment(path)
    assert len(loaded) == 2
    np.testing.assert_array_equal(loaded[0].M, l0_law.M)
