# Lower Snell Toolkit - Lower Snell Envelope Tests
# ============================================================================

from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import one_period_model
from filtered_tree import AdaptedProcess, ModelValidationError, StoppingTime, stopped_variable
from invariant_suite import deterministic_chain
from lower_snell import (
    backward_submartingale_check, check_robust_optimality, direct_system, directed_downwards_check,
    lower_snell, minimax_check, right_continuity_check, robust_optimal_time, tau_down_via_essinf,
    tsystem_compatibility_check, tsystem_pasting_check, upper_snell,
)
from measure_algebra import RectangularFamily, members, robust_conditional_inf, robust_conditional_sup
from models import binomial_kappa, random_instance
from snell_classic import dominates, min_optimal_time, snell_envelope


def test_one_period_continue(one_period):
    result = lower_snell(one_period.family, one_period.payoff)
    assert result.root_value == pytest.approx(3.0)
    assert result.tau_down == StoppingTime.terminal(one_period.tree)
    assert upper_snell(one_period.family, one_period.payoff)[0] == pytest.approx(7.0)


def test_one_period_stop():
    model = one_period_model(root_payoff=5)
    result = lower_snell(model.family, model.payoff)
    assert result.root_value == 5.0
    assert result.tau_down == StoppingTime.initial(model.tree)


def test_one_period_exact(one_period_exact):
    result = lower_snell(one_period_exact.family, one_period_exact.payoff)
    assert result.root_value == Fraction(3)
    assert result.to_json()['tau_down_region'] == [1, 2]


def test_singleton_family_is_classical(binary_tree, binary_payoff, reference_measure):
    family = RectangularFamily.singleton(reference_measure)
    result = lower_snell(family, binary_payoff)
    assert result.envelope.equals(snell_envelope(reference_measure, binary_payoff))
    rho = StoppingTime.initial(binary_tree)
    assert result.tau_down == min_optimal_time(reference_measure, binary_payoff, rho)
    assert upper_snell(family, binary_payoff).equals(result.envelope)


def test_constant_payoff(binary_tree, binary_family):
    H = AdaptedProcess.constant(binary_tree, 6.0, 'payoff')
    rho = StoppingTime.at_depth(binary_tree, 1)
    assert tau_down_via_essinf(binary_family, H, rho) == rho
    assert upper_snell(binary_family, H).values == H.values
    report = check_robust_optimality(binary_family, H, StoppingTime.initial(binary_tree))
    assert report.passed
    assert report.details['sup_inf_value'] == pytest.approx(6.0)


def test_explicit_family_rejected(nonstable):
    with pytest.raises(TypeError):
        lower_snell(nonstable.family, nonstable.payoff)


def test_tau_down_dual_characterization():
    tree, family, H = binomial_kappa(3, p_lo=0.35, p_hi=0.65)
    for rho in (StoppingTime.initial(tree), StoppingTime.at_depth(tree, 1), StoppingTime.at_depth(tree, 2)):
        assert tau_down_via_essinf(family, H, rho) == robust_optimal_time(family, H, rho)


def test_robust_optimality_one_period(one_period):
    report = check_robust_optimality(one_period.family, one_period.payoff, StoppingTime.initial(one_period.tree))
    assert report.passed
    assert report.details['inf_value_at_tau_down'] == pytest.approx(3.0)
    assert report.details['sup_inf_value'] == pytest.approx(3.0)


def test_minimax_one_period(one_period):
    report = minimax_check(one_period.family, one_period.payoff, StoppingTime.initial(one_period.tree))
    assert report.passed
    assert report.details['sup_inf'][0] == pytest.approx(3.0)
    assert report.details['inf_sup'][0] == pytest.approx(3.0)
    assert report.details['optimal_tau'][0] == StoppingTime.terminal(one_period.tree)
    assert report.details['optimal_measure_id'][0] == 0


def test_minimax_gap_for_nonstable_family(nonstable):
    report = minimax_check(nonstable.family, nonstable.payoff, StoppingTime.initial(nonstable.tree))
    assert not report.passed
    assert report.details['inf_sup'][0] == pytest.approx(7.0)
    assert report.details['sup_inf'][0] == pytest.approx(5.0)
    assert report.details['gap'] == pytest.approx(2.0)


def test_envelope_sandwich(binary_family, binary_payoff):
    lower = lower_snell(binary_family, binary_payoff).envelope
    upper = upper_snell(binary_family, binary_payoff)
    assert dominates(lower, binary_payoff)
    for Q in members(binary_family):
        U = snell_envelope(Q, binary_payoff)
        assert dominates(U, lower)
        assert dominates(upper, U)


def test_enlarging_kernel_sets_never_raises_envelope(binary_tree, binary_family, binary_payoff):
    enlarged = RectangularFamily(binary_tree, {
        n: list(ks) + ([(0.9, 0.1)] if n == 1 else []) for n, ks in binary_family.kernel_sets.items()})
    assert dominates(lower_snell(binary_family, binary_payoff).envelope,
                     lower_snell(enlarged, binary_payoff).envelope)


def test_tsystem_checks(binary_family, binary_payoff):
    system = direct_system(binary_family, binary_payoff, None)
    assert len(system) == 5
    compatibility = tsystem_compatibility_check(binary_family, binary_payoff, system=system)
    assert compatibility.passed
    assert compatibility.details['overlapping_pairs'] > 0
    assert tsystem_pasting_check(binary_family, binary_payoff, system=system).passed


def test_tsystem_compatibility_holds_without_stability(nonstable):
    assert tsystem_compatibility_check(nonstable.family, nonstable.payoff).passed


def test_backward_submartingale_on_binomial_put():
    tree, family, H = binomial_kappa(3, p_lo=0.3, p_hi=0.7)
    Y = stopped_variable(H, StoppingTime.terminal(tree))
    report = backward_submartingale_check(family, Y, deterministic_chain(tree))
    assert report.passed
    assert report.details['strict_somewhere']


def test_backward_submartingale_constant(binary_tree, binary_family):
    Y = {leaf: 3.0 for leaf in binary_tree.leaves}
    report = backward_submartingale_check(binary_family, Y, deterministic_chain(binary_tree))
    assert report.passed
    assert not report.details['strict_somewhere']


def test_backward_submartingale_singleton_is_martingale(binary_tree, reference_measure):
    family = RectangularFamily.singleton(reference_measure)
    Y = {3: 1.0, 4: 5.0, 5: 2.0, 6: 8.0}
    report = backward_submartingale_check(family, Y, deterministic_chain(binary_tree))
    assert report.passed
    assert not report.details['strict_somewhere']


def test_chain_must_decrease(binary_tree, binary_family):
    chain = list(reversed(deterministic_chain(binary_tree)))
    with pytest.raises(ModelValidationError, match='not decreasing'):
        backward_submartingale_check(binary_family, {leaf: 1.0 for leaf in binary_tree.leaves}, chain)


def test_directed_downwards(binary_tree, binary_family, binary_payoff, nonstable):
    report = directed_downwards_check(binary_family, binary_payoff, StoppingTime.initial(binary_tree))
    assert report.passed
    assert report.details['pairs'] == 64
    assert report.details['pastings_outside_family'] == 0
    assert directed_downwards_check(nonstable.family, nonstable.payoff,
                                    StoppingTime.initial(nonstable.tree)).passed


def test_right_continuity(binary_tree, binary_family, binary_payoff):
    chain = deterministic_chain(binary_tree) + [StoppingTime.initial(binary_tree)]
    report = right_continuity_check(binary_family, binary_payoff, chain)
    assert report.passed
    assert report.details['stabilized_from'] == 2


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6), depth=st.integers(1, 2))
def test_minimax_and_optimality_on_random_instances(seed, depth):
    tree, family, H = random_instance(seed, depth=depth, branching=2, kernels_per_node=2)
    rho = StoppingTime.initial(tree)
    assert minimax_check(family, H, rho).passed
    assert check_robust_optimality(family, H, rho).passed
    assert tau_down_via_essinf(family, H, rho) == lower_snell(family, H).tau_down


def test_upper_and_lower_envelopes_match_conditional_extremes_for_terminal_payoffs(binary_tree, binary_family,
                                                                                  binary_payoff):
    # payoff vanishes before the horizon
    H = AdaptedProcess(binary_tree, {n: (binary_payoff[n] if n in binary_tree.leaves else 0.0)
                                     for n in binary_tree.nodes}, 'payoff')
    leaf_values = {leaf: H[leaf] for leaf in binary_tree.leaves}
    root = StoppingTime.initial(binary_tree)
    assert upper_snell(binary_family, H)[0] == pytest.approx(robust_conditional_sup(binary_family, leaf_values, root)[0])
    assert lower_snell(binary_family, H).root_value == \
        pytest.approx(robust_conditional_inf(binary_family, leaf_values, root)[0])
