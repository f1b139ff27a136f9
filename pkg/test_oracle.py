# Lower Snell Toolkit - Oracle Tests
# ============================================================================

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from filtered_tree import EnumerationBudgetError, StoppingTime, values_close
from lower_snell import lower_snell
from measure_algebra import RectangularFamily, conditional_expectation, members
from models import random_instance
from oracle import (
    count_stopping_times, direct_conditional_expectation, direct_lower_snell, direct_maximin, direct_snell,
    enumerate_stopping_times, value_table,
)
from snell_classic import snell_envelope


def test_stopping_time_counts(one_period, binary_tree):
    assert count_stopping_times(one_period.tree, StoppingTime.initial(one_period.tree)) == 2
    assert len(list(enumerate_stopping_times(one_period.tree, StoppingTime.initial(one_period.tree)))) == 2
    assert count_stopping_times(binary_tree, StoppingTime.initial(binary_tree)) == 5
    assert len(list(enumerate_stopping_times(binary_tree, StoppingTime.terminal(binary_tree)))) == 1


def test_enumeration_order_is_canonical(binary_tree):
    regions = [tau.nodes for tau in enumerate_stopping_times(binary_tree, StoppingTime.initial(binary_tree))]
    assert regions == [(0,), (1, 2), (1, 5, 6), (2, 3, 4), (3, 4, 5, 6)]


def test_enumeration_after_rho(binary_tree):
    rho = StoppingTime(binary_tree, [1, 5, 6])
    times = list(enumerate_stopping_times(binary_tree, rho))
    assert [tau.nodes for tau in times] == [(1, 5, 6), (3, 4, 5, 6)]


def test_enumeration_budget(binary_tree):
    with pytest.raises(EnumerationBudgetError) as info:
        list(enumerate_stopping_times(binary_tree, StoppingTime.initial(binary_tree), budget=4))
    assert info.value.count == 5


def test_direct_values_one_period(one_period):
    tree, family, H = one_period
    root = StoppingTime.initial(tree)
    assert direct_lower_snell(family, H, root)[0] == pytest.approx(3.0)
    assert direct_maximin(family, H, root)[0] == pytest.approx(3.0)
    leaves = StoppingTime.terminal(tree)
    assert direct_lower_snell(family, H, leaves) == {1: pytest.approx(10.0), 2: pytest.approx(0.0)}


def test_direct_values_nonstable(nonstable):
    tree, family, H = nonstable
    root = StoppingTime.initial(tree)
    assert direct_lower_snell(family, H, root)[0] == pytest.approx(7.0)
    assert direct_maximin(family, H, root)[0] == pytest.approx(5.0)


def test_singleton_direct_snell(binary_tree, binary_payoff, reference_measure):
    root = StoppingTime.initial(binary_tree)
    family = RectangularFamily.singleton(reference_measure)
    expected = snell_envelope(reference_measure, binary_payoff)[0]
    assert direct_snell(reference_measure, binary_payoff, root)[0] == pytest.approx(expected)
    assert direct_lower_snell(family, binary_payoff, root)[0] == pytest.approx(expected)


def test_forward_and_backward_conditionals_agree(binary_tree, binary_family):
    X = {3: 8.0, 4: 2.0, 5: 6.0, 6: 1.0}
    for Q in members(binary_family):
        for tau in enumerate_stopping_times(binary_tree, StoppingTime.initial(binary_tree)):
            assert values_close(direct_conditional_expectation(Q, X, tau), conditional_expectation(Q, X, tau))


def test_parallel_workers_match_serial(binary_tree, binary_family, binary_payoff):
    root = StoppingTime.initial(binary_tree)
    serial = direct_lower_snell(binary_family, binary_payoff, root, workers=1)
    assert direct_lower_snell(binary_family, binary_payoff, root, workers=2) == serial
    assert direct_maximin(binary_family, binary_payoff, root, workers=2) == \
        direct_maximin(binary_family, binary_payoff, root, workers=1)


def test_value_table(one_period):
    table = value_table(one_period.family, one_period.payoff)
    assert list(table.columns) == ['tau_id', 'measure_id', 'value']
    assert len(table) == 4
    assert table['value'].tolist() == pytest.approx([2.0, 2.0, 3.0, 7.0])


def test_value_table_budget(binary_family, binary_payoff):
    with pytest.raises(EnumerationBudgetError):
        value_table(binary_family, binary_payoff, budget=39)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), depth=st.integers(1, 3), branching=st.integers(2, 3))
def test_count_formula_matches_enumeration(seed, depth, branching):
    tree = random_instance(seed, depth=min(depth, 2) if branching == 3 else depth, branching=branching,
                           kernels_per_node=1).tree
    root = StoppingTime.initial(tree)
    times = list(enumerate_stopping_times(tree, root))
    assert len(times) == count_stopping_times(tree, root)
    assert len(set(times)) == len(times)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), depth=st.integers(1, 2))
def test_weak_duality_and_recursion(seed, depth):
    tree, family, H = random_instance(seed, depth=depth, branching=2, kernels_per_node=3)
    root = StoppingTime.initial(tree)
    inf_sup = direct_lower_snell(family, H, root)[tree.root]
    sup_inf = direct_maximin(family, H, root)[tree.root]
    assert inf_sup >= sup_inf - 1e-9
    assert inf_sup == pytest.approx(lower_snell(family, H).root_value, abs=1e-9)
    assert sup_inf == pytest.approx(inf_sup, abs=1e-9)
