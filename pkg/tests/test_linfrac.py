"""
Tests for the quenched closed forms.
"""

import math

import numpy as np
import pytest

from mbpre.exceptions import DegenerateShiftError, DomainError, EigenMismatchError
from mbpre.linfrac import (
    LinFracLaw,
    compose,
    compose_states,
    gf_eval,
    initial_state,
    is_proper,
    left_eigen_residual,
    local_prob_total,
    local_prob_vector,
    perron_root,
    prob_from_population,
    right_eigenvector,
    step,
    survival_probs,
    total_size_law,
)


def test_law_rejects_bad_shapes():
    """M must be square and w must match it."""
    with pytest.raises(DomainError):
        LinFracLaw(M=np.ones((2, 3)), w=np.ones(2))
    with pytest.raises(DomainError):
        LinFracLaw(M=np.ones((2, 2)), w=np.ones(3))
    with pytest.raises(DomainError):
        LinFracLaw(M=np.ones((2, 2)), w=-np.ones(2))


def test_law_ratio_bound():
    """A ratio bound is enforced only when alpha is given."""
    M = [[1.0, 5.0], [1.0, 1.0]]
    LinFracLaw(M=M, w=[1.0, 1.0])
    with pytest.raises(DomainError):
        LinFracLaw(M=M, w=[1.0, 1.0], alpha=0.3)


def test_law_is_immutable(l0_law):
    with pytest.raises(ValueError):
        l0_law.M[0, 0] = 2.0


def test_l0_is_proper(l0_law):
    """The reference letter is a probability generating function."""
    assert l0_law.is_proper()
    assert l0_law.is_positive
    np.testing.assert_allclose(l0_law.head_weights(), 0.5)


def test_improper_law_detected():
    """Rows with |M(i)| > 1 + |w| are not pgfs."""
    assert not is_proper(np.full((2, 2), 3.0), np.zeros(2))


def test_perron_root(l0_law):
    assert perron_root(l0_law, [1.0, 1.0]) == pytest.approx(2.0)


def test_perron_root_rejects_wrong_eigenvector(l0_law):
    """v = (1, 2) is not a left eigenvector of the all-ones matrix."""
    with pytest.raises(EigenMismatchError) as excinfo:
        perron_root(l0_law, [1.0, 2.0])
    assert len(excinfo.value.ratios) == 2


def test_one_step_values(l0_law):
    """Closed forms after one letter of the reference environment."""
    state = step(initial_state([1.0, 1.0]), l0_law)
    quantities = survival_probs(state)

    assert state.S == pytest.approx(math.log(2.0))
    np.testing.assert_allclose(quantities.Q, [2 / 3, 2 / 3], atol=1e-12)
    assert quantities.H == pytest.approx(2 / 3)
    assert local_prob_total(state, 0, 1) == pytest.approx(2 / 9, abs=1e-12)
    assert local_prob_total(state, 0, 3) == pytest.approx(8 / 81, abs=1e-12)
    assert local_prob_vector(state, 0, (1, 0)) == pytest.approx(1 / 9, abs=1e-12)
    assert gf_eval(state, 0, [0.5, 0.5]) == pytest.approx(0.5, abs=1e-12)


def test_two_step_values(l0_law):
    """Closed forms after two letters of the reference environment."""
    state = compose([l0_law, l0_law], [1.0, 1.0])
    quantities = survival_probs(state)

    np.testing.assert_allclose(quantities.Q, [4 / 7, 4 / 7], atol=1e-12)
    assert quantities.H == pytest.approx(6 / 7)
    assert left_eigen_residual(state) < 1e-12


def test_scaled_probabilities(l0_law):
    """scaled=True multiplies by e^{S_n}."""
    state = compose([l0_law] * 3, [1.0, 1.0])
    plain = local_prob_total(state, 1, 2)
    scaled = local_prob_total(state, 1, 2, scaled=True)
    assert scaled == pytest.approx(8.0 * plain)


def test_vector_probabilities_sum_to_total(l0_law):
    """Summing P(Z_n = z) over |z| = m gives P(|Z_n| = m)."""
    state = compose([l0_law] * 2, [1.0, 1.0])
    for m in range(1, 5):
        level = sum(local_prob_vector(state, 0, (a, m - a)) for a in range(m + 1))
        assert level == pytest.approx(local_prob_total(state, 0, m), abs=1e-14)


def test_total_size_law_sums_to_one(l0_law):
    """The truncated size law carries almost all the mass."""
    state = compose([l0_law] * 2, [1.0, 1.0])
    law = total_size_law(state, (1, 0), 400)
    assert law.sum() == pytest.approx(1.0, abs=1e-12)
    assert law[0] == pytest.approx(1 - 4 / 7)
    assert law[1] == pytest.approx(local_prob_total(state, 0, 1))


def test_prob_from_single_particle(l0_law):
    """Started from e_j, P_z(Z_n = e_l) is the vector closed form."""
    state = compose([l0_law] * 2, [1.0, 1.0])
    assert prob_from_population(state, (0, 1), 0) == pytest.approx(
        local_prob_vector(state, 1, (1, 0))
    )


def test_compose_states_matches_compose(l0_law):
    """Joining prefix and suffix states equals folding the whole path."""
    prefix = compose([l0_law] * 2, [1.0, 1.0])
    suffix = compose([l0_law] * 3, [1.0, 1.0])
    whole = compose([l0_law] * 5, [1.0, 1.0])
    joined = compose_states(prefix, suffix)

    assert joined.n == 5
    np.testing.assert_allclose(joined.Mtilde, whole.Mtilde, atol=1e-14)
    np.testing.assert_allclose(joined.Dtilde, whole.Dtilde, atol=1e-14)


def test_right_eigenvector_normalization():
    """The right Perron vector is normalized by (v, u) = 1."""
    M = np.array([[2.0, 1.0], [1.0, 2.0]])
    v = np.array([1.0, 1.0])
    u = right_eigenvector(M, v)
    np.testing.assert_allclose(u, [0.5, 0.5], atol=1e-10)


def test_domain_errors(l0_law):
    state = step(initial_state([1.0, 1.0]), l0_law)
    with pytest.raises(DomainError):
        local_prob_total(state, 0, 0)
    with pytest.raises(DomainError):
        local_prob_vector(state, 0, (0, 0))
    with pytest.raises(DomainError):
        gf_eval(state, 0, [1.5, 0.0])
    with pytest.raises(DomainError):
        survival_probs(initial_state([1.0, 1.0]))


def test_degenerate_shift():
    """A vanishing shift makes the vector closed form undefined."""
    law = LinFracLaw(M=np.full((2, 2), 0.5), w=np.zeros(2))
    state = step(initial_state([1.0, 1.0]), law)
    with pytest.raises(DegenerateShiftError):
        local_prob_vector(state, 0, (1, 0))


def test_batched_states_match_single(l0_law):
    """A batch of identical paths gives the single-path values."""
    single = compose([l0_law] * 3, [1.0, 1.0])
    batch = initial_state([1.0, 1.0], batch=4)
    for _ in range(3):
        batch = step(batch, l0_law)
    np.testing.assert_allclose(
        local_prob_total(batch, 0, 2), local_prob_total(single, 0, 2)
    )
