# Lower Snell Toolkit - Measures, Pasting and Stable Families
# ============================================================================

"""
Equivalent measures as per-node transition kernels, the pasting of two measures
in a stopping time, rectangular (stable) families and robust conditional
expectations.
"""

import itertools
import logging
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

from config import Config, default_budget
from filtered_tree import (
    EnumerationBudgetError, EventTree, ModelValidationError, NodeValues, Number, StoppingTime,
    check_same_tree, close, indicator, lift, normalize_kernel,
)
from reports import CheckReport

logger = logging.getLogger(__name__)

Kernel = Tuple[Number, ...]


def kernels_close(first: Sequence[Number], second: Sequence[Number], tol: Optional[float] = None) -> bool:
    return len(first) == len(second) and all(close(a, b, tol) for a, b in zip(first, second))


def one_step_expectation(kernel: Sequence[Number], children: Sequence[int], values: Mapping[int, Number]) -> Number:
    return sum(p * values[c] for p, c in zip(kernel, children))


class Measure:
    """A probability measure equivalent to the reference one: a kernel per internal node."""

    def __init__(self, tree: EventTree, kernel: Mapping[int, Sequence[Number]]):
        kernels: Dict[int, Kernel] = {}
        for node in tree.internal_nodes:
            if node not in kernel:
                raise ModelValidationError(f"measure has no kernel at internal node {node}",
                                           field=f"kernel.{node}")
            probs = kernel[node]
            if len(probs) != len(tree.children[node]):
                raise ModelValidationError(
                    f"kernel at node {node} has {len(probs)} entries for "
                    f"{len(tree.children[node])} children", field=f"kernel.{node}")
            kernels[node] = normalize_kernel(probs, f"kernel at node {node}")
        self.tree = tree
        self.kernel = kernels

    @classmethod
    def reference(cls, tree: EventTree) -> 'Measure':
        return cls(tree, tree.reference_kernel)

    def equals(self, other: 'Measure', tol: Optional[float] = None) -> bool:
        if not self.tree.same_structure(other.tree):
            return False
        return all(kernels_close(self.kernel[n], other.kernel[n], tol) for n in self.tree.internal_nodes)

    def key(self) -> Tuple[Kernel, ...]:
        return tuple(self.kernel[n] for n in self.tree.internal_nodes)

    def to_json(self) -> Dict[str, List[Number]]:
        return {str(n): list(k) for n, k in self.kernel.items()}

    def __repr__(self):
        return f"Measure({self.kernel})"


def _require_leaf_variable(tree: EventTree, X: Mapping[int, Number]):
    missing = [leaf for leaf in tree.leaves if leaf not in X]
    if missing:
        raise ModelValidationError(f"random variable is undefined at leaves {missing[:5]}", field='X')


def expectation(Q: Measure, X: Mapping[int, Number]) -> Number:
    """E_Q[X] as the sum over leaves of path probability times value."""
    tree = Q.tree
    _require_leaf_variable(tree, X)
    mass: Dict[int, Number] = {tree.root: 1}
    for node in tree.descendants(tree.root):
        for p, child in zip(Q.kernel.get(node, ()), tree.children[node]):
            mass[child] = mass[node] * p
    return sum(mass[leaf] * X[leaf] for leaf in tree.leaves)


def _backward(tree: EventTree, X: Mapping[int, Number], tau: StoppingTime,
              step: Callable[[int, NodeValues], Number]) -> NodeValues:
    """Fold a leaf variable back to ``tau``'s region with a one-step rule per internal node."""
    check_same_tree(tree, tau.tree, 'variable and stopping time')
    _require_leaf_variable(tree, X)
    result: NodeValues = {}
    for region_node in tau.nodes:
        values: NodeValues = {}
        for node in reversed(tree.descendants(region_node)):
            values[node] = X[node] if not tree.children[node] else step(node, values)
        result[region_node] = values[region_node]
    return result


def conditional_expectation(Q: Measure, X: Mapping[int, Number], tau: StoppingTime) -> NodeValues:
    """E_Q[X | F_tau] on the region nodes of ``tau``, by backward one-step averaging."""
    tree = Q.tree
    return _backward(tree, X, tau,
                     lambda n, v: one_step_expectation(Q.kernel[n], tree.children[n], v))


def pasting(Q1: Measure, Q2: Measure, sigma: StoppingTime) -> Measure:
    """Q1 strictly before ``sigma``, Q2 at the region of ``sigma`` and after it."""
    check_same_tree(Q1.tree, Q2.tree, 'measures')
    check_same_tree(Q1.tree, sigma.tree, 'measures and stopping time')
    kernel = {n: (Q1.kernel[n] if n in sigma.above else Q2.kernel[n]) for n in Q1.tree.internal_nodes}
    return Measure(Q1.tree, kernel)


def pasting_formula_check(Q1: Measure, Q2: Measure, sigma: StoppingTime) -> CheckReport:
    """Compare Q3(A) with E_Q1[Q2[A | F_sigma]] event by event."""
    tree = Q1.tree
    Q3 = pasting(Q1, Q2, sigma)
    if len(tree.leaves) <= Config.EVENT_SUBSET_LEAF_CAP:
        events = [subset for size in range(len(tree.leaves) + 1)
                  for subset in itertools.combinations(tree.leaves, size)]
        coverage = 'all events'
    else:
        events = [(leaf,) for leaf in tree.leaves]
        coverage = 'atoms'
    mismatches = []
    for event in events:
        A = indicator(tree, event)
        direct = expectation(Q3, A)
        conditional = conditional_expectation(Q2, A, sigma)
        spliced = expectation(Q1, lift(sigma, conditional))
        if not close(direct, spliced):
            mismatches.append({'event': list(event), 'pasted': direct, 'formula': spliced})
    logger.debug(f"Pasting formula checked on {len(events)} events, {len(mismatches)} mismatches")
    return CheckReport('pasting_formula', passed=not mismatches, details={
        'events_checked': len(events),
        'coverage': coverage,
        'mismatches': mismatches[:10],
        'pasted_kernels': Q3,
    })


class RectangularFamily:
    """A stable family encoded by a finite set of admissible kernels per internal node."""

    def __init__(self, tree: EventTree, kernel_sets: Mapping[int, Sequence[Sequence[Number]]]):
        unknown = sorted(n for n in kernel_sets if n not in tree.internal_nodes)
        if unknown:
            raise ModelValidationError(f"kernel sets given for non-internal nodes {unknown[:5]}",
                                       field='kernel_sets')
        sets: Dict[int, Tuple[Kernel, ...]] = {}
        for node in tree.internal_nodes:
            if node not in kernel_sets:
                raise ModelValidationError(f"missing kernel set for internal node {node}",
                                           field=f"kernel_sets.{node}")
            kept: List[Kernel] = []
            for probs in kernel_sets[node]:
                if len(probs) != len(tree.children[node]):
                    raise ModelValidationError(
                        f"kernel at node {node} has {len(probs)} entries for "
                        f"{len(tree.children[node])} children", field=f"kernel_sets.{node}")
                kernel = normalize_kernel(probs, f"kernel set at node {node}")
                if not any(kernels_close(kernel, seen) for seen in kept):
                    kept.append(kernel)
            if not kept:
                raise ModelValidationError(f"empty kernel set at internal node {node}",
                                           field=f"kernel_sets.{node}")
            sets[node] = tuple(kept)
        self.tree = tree
        self.kernel_sets = sets

    @classmethod
    def singleton(cls, Q: Measure) -> 'RectangularFamily':
        return cls(Q.tree, {n: [k] for n, k in Q.kernel.items()})

    def to_json(self) -> Dict[str, List[List[Number]]]:
        return {str(n): [list(k) for k in ks] for n, ks in self.kernel_sets.items()}

    def __repr__(self):
        return f"RectangularFamily(nodes={len(self.kernel_sets)}, members={count_members(self)})"


class ExplicitFamily:
    """A finite list of measures, not necessarily stable under pasting."""

    def __init__(self, members: Sequence[Measure]):
        members = list(members)
        if not members:
            raise ModelValidationError("explicit family needs at least one member", field='members')
        tree = members[0].tree
        for Q in members[1:]:
            check_same_tree(tree, Q.tree, 'family members')
        self.tree = tree
        self.members = members

    @classmethod
    def from_rectangular(cls, family: RectangularFamily, budget: Optional[int] = None) -> 'ExplicitFamily':
        return cls(list(members(family, budget)))

    def to_json(self) -> List[Dict[str, List[Number]]]:
        return [Q.to_json() for Q in self.members]

    def __repr__(self):
        return f"ExplicitFamily(members={len(self.members)})"


Family = Union[RectangularFamily, ExplicitFamily]


def count_members(family: Family) -> int:
    """Number of members, without enumerating them."""
    if isinstance(family, ExplicitFamily):
        return len(family.members)
    count = 1
    for kernels in family.kernel_sets.values():
        count *= len(kernels)
    return count


def members(family: Family, budget: Optional[int] = None) -> Iterator[Measure]:
    """Every selection measure exactly once, in canonical (node id) order."""
    if isinstance(family, ExplicitFamily):
        yield from family.members
        return
    budget = default_budget() if budget is None else budget
    count = count_members(family)
    if count > budget:
        raise EnumerationBudgetError(count, budget, 'members')
    nodes = family.tree.internal_nodes
    for selection in itertools.product(*(family.kernel_sets[n] for n in nodes)):
        yield Measure(family.tree, dict(zip(nodes, selection)))


def contains(family: Family, Q: Measure) -> bool:
    """Membership test: kernel-wise for rectangular families, member-wise otherwise."""
    if not family.tree.same_structure(Q.tree):
        return False
    if isinstance(family, ExplicitFamily):
        return any(member.equals(Q) for member in family.members)
    return all(any(kernels_close(Q.kernel[n], k) for k in family.kernel_sets[n])
               for n in family.tree.internal_nodes)


@dataclass
class StabilityResult:
    stable: bool
    witness: Optional[Tuple[Measure, Measure, StoppingTime]] = None
    pastings_checked: int = 0

    def __bool__(self):
        return self.stable

    def to_json(self):
        result = {'stable': self.stable, 'pastings_checked': self.pastings_checked}
        if self.witness is not None:
            Q1, Q2, sigma = self.witness
            result['witness'] = {'q1': Q1.to_json(), 'q2': Q2.to_json(), 'sigma': sigma.to_json()}
        return result


def is_stable(family: Family, budget: Optional[int] = None) -> StabilityResult:
    """Exhaustively check closure under pasting over all member pairs and stopping times."""
    from oracle import count_stopping_times, enumerate_stopping_times

    budget = default_budget() if budget is None else budget
    tree = family.tree
    listed = list(members(family, budget))
    initial = StoppingTime.initial(tree)
    total = len(listed) ** 2 * count_stopping_times(tree, initial)
    if total > budget:
        raise EnumerationBudgetError(total, budget, 'pastings')

    known = {Q.key() for Q in listed}

    def is_member(Q: Measure) -> bool:
        return Q.key() in known or contains(family, Q)

    checked = 0
    for sigma in enumerate_stopping_times(tree, initial, budget):
        for Q1 in listed:
            for Q2 in listed:
                checked += 1
                if Q1 is Q2:
                    continue
                pasted = pasting(Q1, Q2, sigma)
                if not is_member(pasted):
                    logger.info(f"Pasting leaves the family at sigma={sigma.label()}")
                    return StabilityResult(False, (Q1, Q2, sigma), checked)
    logger.debug(f"Family closed under {checked} pastings")
    return StabilityResult(True, None, checked)


def restrict(family: RectangularFamily, Q0: Measure, tau: StoppingTime) -> RectangularFamily:
    """The members that agree with Q0 on F_tau: kernels pinned strictly before ``tau``."""
    check_same_tree(family.tree, tau.tree, 'family and stopping time')
    if not contains(family, Q0):
        raise ModelValidationError("Q0 is not a member of the family", field='Q0')
    kernel_sets = {
        n: ([Q0.kernel[n]] if n in tau.above else list(kernels))
        for n, kernels in family.kernel_sets.items()
    }
    return RectangularFamily(family.tree, kernel_sets)


def robust_step_inf(family: RectangularFamily, node: int, values: Mapping[int, Number]) -> Number:
    """Smallest one-step mean at ``node`` over its admissible kernels."""
    children = family.tree.children[node]
    return min(one_step_expectation(k, children, values) for k in family.kernel_sets[node])


def robust_step_sup(family: RectangularFamily, node: int, values: Mapping[int, Number]) -> Number:
    """Largest one-step mean at ``node``."""
    children = family.tree.children[node]
    return max(one_step_expectation(k, children, values) for k in family.kernel_sets[node])


def robust_conditional_inf(family: RectangularFamily, X: Mapping[int, Number], tau: StoppingTime) -> NodeValues:
    """essinf over the family of E_Q[X | F_tau], localized to one minimum per node."""
    check_same_tree(family.tree, tau.tree, 'family and stopping time')
    return _backward(family.tree, X, tau, lambda n, v: robust_step_inf(family, n, v))


def robust_conditional_sup(family: RectangularFamily, X: Mapping[int, Number], tau: StoppingTime) -> NodeValues:
    """Optimistic conditional expectation: node-wise maximum over members, computed kernel by kernel."""
    check_same_tree(family.tree, tau.tree, 'family and stopping time')
    return _backward(family.tree, X, tau, lambda n, v: robust_step_sup(family, n, v))


def family_conditional_inf(family: Family, X: Mapping[int, Number], tau: StoppingTime,
                           budget: Optional[int] = None) -> NodeValues:
    """Robust conditional infimum for either family encoding."""
    if isinstance(family, RectangularFamily):
        return robust_conditional_inf(family, X, tau)
    check_same_tree(family.tree, tau.tree, 'family and stopping time')
    result: Optional[NodeValues] = None
    for Q in members(family, budget):
        values = conditional_expectation(Q, X, tau)
        result = values if result is None else {n: min(result[n], values[n]) for n in values}
    return result
