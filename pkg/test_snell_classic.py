# Lower Snell Toolkit - Classical Snell Envelope Tests
# ============================================================================

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from filtered_tree import AdaptedProcess, ModelValidationError, StoppingTime
from measure_algebra import Measure, members
from models import random_instance
from oracle import direct_snell, enumerate_stopping_times
from snell_classic import (
    check_optimality, dominates, is_supermartingale, min_optimal_time, minimality_exhaustive_check,
    minimality_perturbation_check, snell_envelope,
)


@pytest.fixture
def low_kernel(one_period):
    return Measure(one_period.tree, {0: (0.3, 0.7)})


def test_constant_payoff_is_its_own_envelope(binary_tree, reference_measure):
    H = AdaptedProcess.constant(binary_tree, 4.0, 'payoff')
    assert snell_envelope(reference_measure, H).values == H.values
    rho = StoppingTime.at_depth(binary_tree, 1)
    assert min_optimal_time(reference_measure, H, rho) == rho


def test_supermartingale_payoff_is_its_own_envelope(binary_tree, reference_measure):
    H = AdaptedProcess(binary_tree, {0: 9.0, 1: 6.0, 2: 4.0, 3: 7.0, 4: 3.0, 5: 2.0, 6: 4.0}, 'payoff')
    assert snell_envelope(reference_measure, H).equals(H)


def test_one_period_envelope(one_period, low_kernel):
    U = snell_envelope(low_kernel, one_period.payoff)
    assert U[0] == pytest.approx(3.0)
    tau = min_optimal_time(low_kernel, one_period.payoff, StoppingTime.initial(one_period.tree))
    assert tau == StoppingTime.terminal(one_period.tree)


def test_terminal_rho_stays_terminal(binary_tree, reference_measure, binary_payoff):
    leaves = StoppingTime.terminal(binary_tree)
    assert min_optimal_time(reference_measure, binary_payoff, leaves) == leaves


def test_negative_payoff_rejected(one_period, low_kernel):
    H = AdaptedProcess(one_period.tree, {0: -1.0, 1: 0.0, 2: 0.0}, 'payoff')
    with pytest.raises(ModelValidationError, match='nonnegative'):
        snell_envelope(low_kernel, H)


def test_optimality_of_minimal_time(binary_tree, binary_family, binary_payoff):
    rho = StoppingTime.initial(binary_tree)
    for Q in members(binary_family):
        tau = min_optimal_time(Q, binary_payoff, rho)
        report = check_optimality(Q, binary_payoff, rho, tau)
        assert report.passed
        assert report.details['attains_envelope']


def test_premature_stop_fails_contact_clause(one_period, low_kernel):
    rho = StoppingTime.initial(one_period.tree)
    report = check_optimality(low_kernel, one_period.payoff, rho, rho)
    assert not report.passed
    assert report.details['failed_clause'] == 'b'
    assert not report.details['attains_envelope']


def test_everything_optimal_for_constant_payoff(binary_tree, reference_measure):
    H = AdaptedProcess.constant(binary_tree, 2.0, 'payoff')
    rho = StoppingTime.initial(binary_tree)
    for tau in enumerate_stopping_times(binary_tree, rho):
        assert check_optimality(reference_measure, H, rho, tau).passed


def test_optimality_requires_later_time(binary_tree, reference_measure, binary_payoff):
    with pytest.raises(ModelValidationError):
        check_optimality(reference_measure, binary_payoff, StoppingTime.at_depth(binary_tree, 1),
                         StoppingTime.initial(binary_tree))


def test_minimality(one_period, low_kernel):
    rng = np.random.default_rng(5)
    assert minimality_perturbation_check(low_kernel, one_period.payoff, rng, 50).passed
    report = minimality_exhaustive_check(low_kernel, one_period.payoff, budget=10**4)
    assert report.passed
    assert report.details['dominating_supermartingales'] >= 1


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), depth=st.integers(1, 3))
def test_envelope_properties_on_random_instances(seed, depth):
    tree, family, H = random_instance(seed, depth=depth, branching=2, kernels_per_node=1)
    Q = next(members(family))
    U = snell_envelope(Q, H)
    assert is_supermartingale(Q, U)
    assert dominates(U, H)
    assert U[tree.root] == pytest.approx(direct_snell(Q, H, StoppingTime.initial(tree))[tree.root], abs=1e-9)
