# Lower Snell Toolkit - Brute-Force Oracles
# ============================================================================

"""
Exhaustive evaluators used as ground truth for the backward recursions.

Nothing here calls the production recursions: conditional expectations are
computed from forward path masses, envelopes by enumerating every stopping time
and every member of the family.
"""

import itertools
import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import pandas as pd

from config import Config, default_budget
from filtered_tree import (
    AdaptedProcess, EnumerationBudgetError, EventTree, NodeValues, Number, StoppingTime,
    check_same_tree, stopped_variable,
)
from measure_algebra import Family, Measure, count_members, members

logger = logging.getLogger(__name__)


def count_stopping_times(tree: EventTree, rho: StoppingTime) -> int:
    """count(leaf) = 1, count(n) = 1 + product of the children's counts."""
    check_same_tree(tree, rho.tree, 'tree and stopping time')
    counts: Dict[int, int] = {}
    for node in sorted(tree.nodes, key=lambda n: -tree.depth[n]):
        if tree.children[node]:
            product = 1
            for child in tree.children[node]:
                product *= counts[child]
            counts[node] = 1 + product
        else:
            counts[node] = 1
    total = 1
    for node in rho.nodes:
        total *= counts[node]
    return total


def enumerate_stopping_times(tree: EventTree, rho: StoppingTime,
                             budget: Optional[int] = None) -> Iterator[StoppingTime]:
    """Every stopping time after ``rho`` exactly once, stop-before-continue, node-id order."""
    budget = default_budget() if budget is None else budget
    count = count_stopping_times(tree, rho)
    if count > budget:
        raise EnumerationBudgetError(count, budget)

    memo: Dict[int, List[Tuple[int, ...]]] = {}

    def regions_below(node: int) -> List[Tuple[int, ...]]:
        if node not in memo:
            options = [(node,)]
            kids = tree.children[node]
            if kids:
                for combo in itertools.product(*(regions_below(c) for c in kids)):
                    options.append(tuple(itertools.chain.from_iterable(combo)))
            memo[node] = options
        return memo[node]

    for combo in itertools.product(*(regions_below(n) for n in rho.nodes)):
        yield StoppingTime(tree, itertools.chain.from_iterable(combo))


def path_masses(Q: Measure) -> Dict[int, Number]:
    """Q-probability of every node's atom, accumulated from the root."""
    tree = Q.tree
    mass: Dict[int, Number] = {tree.root: 1}
    for node in sorted(tree.nodes, key=lambda n: tree.depth[n]):
        if node == tree.root:
            continue
        parent = tree.parent[node]
        position = tree.children[parent].index(node)
        mass[node] = mass[parent] * Q.kernel[parent][position]
    return mass


def _conditional_from_masses(tree: EventTree, mass: Mapping[int, Number], X: Mapping[int, Number],
                             tau: StoppingTime) -> NodeValues:
    return {
        n: sum(mass[leaf] * X[leaf] for leaf in tree.leaves_below(n)) / mass[n]
        for n in tau.nodes
    }


def direct_conditional_expectation(Q: Measure, X: Mapping[int, Number], tau: StoppingTime) -> NodeValues:
    """E_Q[X | F_tau] as ratios of path masses."""
    check_same_tree(Q.tree, tau.tree, 'measure and stopping time')
    return _conditional_from_masses(Q.tree, path_masses(Q), X, tau)


def direct_conditional_inf(family: Family, X: Mapping[int, Number], tau: StoppingTime,
                           budget: Optional[int] = None) -> NodeValues:
    """Pointwise minimum over enumerated members of the conditional expectation."""
    result: Optional[NodeValues] = None
    for Q in members(family, budget):
        values = direct_conditional_expectation(Q, X, tau)
        result = values if result is None else {n: min(result[n], values[n]) for n in values}
    return result


def _stopped_after(H: AdaptedProcess, tau: StoppingTime, budget: Optional[int]) -> List[NodeValues]:
    return [stopped_variable(H, later) for later in enumerate_stopping_times(H.tree, tau, budget)]


def _snell_values(tree: EventTree, mass: Mapping[int, Number], stopped: Sequence[NodeValues],
                  tau: StoppingTime) -> NodeValues:
    best: Optional[NodeValues] = None
    for X in stopped:
        values = _conditional_from_masses(tree, mass, X, tau)
        best = values if best is None else {n: max(best[n], values[n]) for n in values}
    return best


def _lower_snell_chunk(task) -> NodeValues:
    measures, stopped, tau = task
    result: Optional[NodeValues] = None
    for Q in measures:
        values = _snell_values(Q.tree, path_masses(Q), stopped, tau)
        result = values if result is None else {n: min(result[n], values[n]) for n in values}
    return result


def _chunks(items: Sequence, workers: int) -> List[Sequence]:
    size = max(1, -(-len(items) // workers))
    return [items[i:i + size] for i in range(0, len(items), size)]


def _reduce_nodewise(parts: Sequence[NodeValues], pick) -> NodeValues:
    result = dict(parts[0])
    for part in parts[1:]:
        result = {n: pick(result[n], part[n]) for n in result}
    return result


def direct_snell(Q: Measure, H: AdaptedProcess, tau: StoppingTime,
                 budget: Optional[int] = None) -> NodeValues:
    """esssup over later stopping times of E_Q[H_tau' | F_tau], by enumeration."""
    check_same_tree(Q.tree, H.tree, 'measure and payoff')
    return _snell_values(Q.tree, path_masses(Q), _stopped_after(H, tau, budget), tau)


def direct_lower_snell(family: Family, H: AdaptedProcess, tau: StoppingTime,
                       budget: Optional[int] = None, workers: Optional[int] = None) -> NodeValues:
    """essinf over members of esssup over later stopping times (inf of sup)."""
    check_same_tree(family.tree, H.tree, 'family and payoff')
    workers = Config.WORKERS if workers is None else workers
    stopped = _stopped_after(H, tau, budget)
    listed = list(members(family, budget))
    if workers > 1 and len(listed) > 1:
        tasks = [(chunk, stopped, tau) for chunk in _chunks(listed, workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_lower_snell_chunk, tasks))
        return _reduce_nodewise(parts, min)
    return _lower_snell_chunk((listed, stopped, tau))


def _maximin_chunk(task) -> NodeValues:
    masses, stopped, tau = task
    tree = tau.tree
    best: Optional[NodeValues] = None
    for X in stopped:
        worst: Optional[NodeValues] = None
        for mass in masses:
            values = _conditional_from_masses(tree, mass, X, tau)
            worst = values if worst is None else {n: min(worst[n], values[n]) for n in values}
        best = worst if best is None else {n: max(best[n], worst[n]) for n in worst}
    return best


def direct_maximin(family: Family, H: AdaptedProcess, tau: StoppingTime,
                   budget: Optional[int] = None, workers: Optional[int] = None) -> NodeValues:
    """esssup over later stopping times of essinf over members (sup of inf)."""
    check_same_tree(family.tree, H.tree, 'family and payoff')
    workers = Config.WORKERS if workers is None else workers
    stopped = _stopped_after(H, tau, budget)
    masses = [path_masses(Q) for Q in members(family, budget)]
    if workers > 1 and len(stopped) > 1:
        tasks = [(masses, chunk, tau) for chunk in _chunks(stopped, workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_maximin_chunk, tasks))
        return _reduce_nodewise(parts, max)
    return _maximin_chunk((masses, stopped, tau))


def value_table(family: Family, H: AdaptedProcess, budget: Optional[int] = None) -> pd.DataFrame:
    """E_Q[H_tau] for every stopping time and member, one row per pair."""
    tree = family.tree
    initial = StoppingTime.initial(tree)
    budget = default_budget() if budget is None else budget
    pairs = count_stopping_times(tree, initial) * count_members(family)
    if pairs > budget:
        raise EnumerationBudgetError(pairs, budget, 'table rows')
    masses = [path_masses(Q) for Q in members(family, budget)]
    rows = []
    for tau_id, tau in enumerate(enumerate_stopping_times(tree, initial, budget)):
        X = stopped_variable(H, tau)
        for measure_id, mass in enumerate(masses):
            rows.append((tau_id, measure_id, sum(mass[leaf] * X[leaf] for leaf in tree.leaves)))
    logger.info(f"Value table: {len(rows)} rows")
    return pd.DataFrame(rows, columns=['tau_id', 'measure_id', 'value'])
