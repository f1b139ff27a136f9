# Lower Snell Toolkit - Classical Snell Envelope
# ============================================================================

import itertools
import logging
import math
from typing import Callable, Dict, List, Optional

from filtered_tree import (
    AdaptedProcess, EnumerationBudgetError, ModelValidationError, NodeValues, Number, StoppingTime,
    check_same_tree, close, sample, stopped_variable, stopping_time_leq, values_close,
)
from measure_algebra import Measure, conditional_expectation, one_step_expectation
from reports import CheckReport

logger = logging.getLogger(__name__)


def backward_induction(H: AdaptedProcess, continuation: Callable[[int, NodeValues], Number],
                       name: str) -> AdaptedProcess:
    """U(leaf) = H(leaf), U(n) = max(H(n), continuation(n, U)) from the horizon down."""
    tree = H.tree
    values: NodeValues = {}
    for node in sorted(tree.nodes, key=lambda n: -tree.depth[n]):
        if tree.children[node]:
            values[node] = max(H[node], continuation(node, values))
        else:
            values[node] = H[node]
    return AdaptedProcess(tree, values, name)


def first_contact(H: AdaptedProcess, U: AdaptedProcess, rho: StoppingTime) -> StoppingTime:
    """Along each path, the first node at or after ``rho`` where H >= U (ties stop)."""
    check_same_tree(H.tree, rho.tree, 'payoff and stopping time')
    tree = H.tree
    region: List[int] = []
    stack = list(reversed(rho.nodes))
    while stack:
        node = stack.pop()
        if H[node] >= U[node] or not tree.children[node]:
            region.append(node)
        else:
            stack.extend(reversed(tree.children[node]))
    return StoppingTime(tree, region)


def snell_envelope(Q: Measure, H: AdaptedProcess) -> AdaptedProcess:
    """Smallest Q-supermartingale dominating H."""
    check_same_tree(Q.tree, H.tree, 'measure and payoff')
    H.require_nonnegative()
    tree = Q.tree
    return backward_induction(
        H, lambda n, u: one_step_expectation(Q.kernel[n], tree.children[n], u), 'snell_envelope')


def min_optimal_time(Q: Measure, H: AdaptedProcess, rho: StoppingTime,
                     envelope: Optional[AdaptedProcess] = None) -> StoppingTime:
    """Minimal optimal stopping time after ``rho``: first contact of H with U^Q."""
    U = envelope if envelope is not None else snell_envelope(Q, H)
    return first_contact(H, U, rho)


def is_supermartingale(Q: Measure, W: AdaptedProcess) -> bool:
    """One-step means of W never exceed W at internal nodes."""
    tree = Q.tree
    for node in tree.internal_nodes:
        drift = one_step_expectation(Q.kernel[node], tree.children[node], W.values) - W[node]
        if drift > 0 and not close(drift, 0):
            return False
    return True


def dominates(W: AdaptedProcess, H: AdaptedProcess) -> bool:
    return all(W[n] >= H[n] or close(W[n], H[n]) for n in H.tree.nodes)


def check_optimality(Q: Measure, H: AdaptedProcess, rho: StoppingTime, tau_star: StoppingTime) -> CheckReport:
    """Optimality of ``tau_star`` after ``rho``: (a) stopped envelope is a martingale, (b) H = U^Q at tau_star.

    The report also confirms that stopping at ``tau_star`` attains U^Q at ``rho``.
    """
    check_same_tree(rho.tree, tau_star.tree, 'stopping times')
    if not stopping_time_leq(rho, tau_star):
        raise ModelValidationError(f"tau* {tau_star.label()} precedes rho {rho.label()} on some path",
                                   field='tau_star')
    tree = Q.tree
    U = snell_envelope(Q, H)

    drift_nodes: Dict[int, Number] = {}
    for node in tree.internal_nodes:
        if rho.is_at_or_below(node) and node in tau_star.above:
            drift = one_step_expectation(Q.kernel[node], tree.children[node], U.values) - U[node]
            if not close(drift, 0):
                drift_nodes[node] = drift
    contact_failures = {n: {'H': H[n], 'U': U[n]} for n in tau_star.nodes if not close(H[n], U[n])}

    failed_clause = None
    if drift_nodes:
        failed_clause = 'a'
    elif contact_failures:
        failed_clause = 'b'

    attained = conditional_expectation(Q, stopped_variable(H, tau_star), rho)
    attains = values_close(attained, sample(U, rho))
    if failed_clause is None and not attains:
        failed_clause = 'attainment'
    logger.debug(f"Optimality of {tau_star.label()} after {rho.label()}: failed clause {failed_clause}")
    return CheckReport('snell_optimality', passed=failed_clause is None, details={
        'failed_clause': failed_clause,
        'martingale_drift': drift_nodes,
        'contact_failures': contact_failures,
        'attains_envelope': attains,
    })


def _dominating_supermartingale(Q: Measure, H: AdaptedProcess, W: AdaptedProcess) -> bool:
    return dominates(W, H) and is_supermartingale(Q, W)


def minimality_perturbation_check(Q: Measure, H: AdaptedProcess, rng, perturbations: int = 25) -> CheckReport:
    """Lower U^Q at random nodes; any candidate still dominating H as a supermartingale must sit above U^Q."""
    U = snell_envelope(Q, H)
    tree = Q.tree
    valid = 0
    counterexamples = []
    for _ in range(perturbations):
        node = tree.nodes[int(rng.integers(len(tree.nodes)))]
        shift = int(rng.integers(-3, 4))
        values = dict(U.values)
        values[node] = values[node] + shift
        W = AdaptedProcess(tree, values, 'candidate')
        if _dominating_supermartingale(Q, H, W):
            valid += 1
            if not dominates(W, U):
                counterexamples.append({'node': node, 'shift': shift})
    return CheckReport('snell_minimality_perturbation', passed=not counterexamples, details={
        'candidates': perturbations,
        'dominating_supermartingales': valid,
        'counterexamples': counterexamples[:10],
    })


def minimality_exhaustive_check(Q: Measure, H: AdaptedProcess, budget: int) -> CheckReport:
    """Every integer process between ceil(H) and ceil(U^Q) that dominates H as a supermartingale is >= U^Q."""
    U = snell_envelope(Q, H)
    tree = Q.tree
    ranges = [range(math.ceil(H[n]), math.ceil(U[n]) + 1) for n in tree.nodes]
    count = 1
    for r in ranges:
        count *= len(r)
    if count > budget:
        raise EnumerationBudgetError(count, budget, 'integer candidates')
    valid = 0
    counterexamples = []
    for combo in itertools.product(*ranges):
        W = AdaptedProcess(tree, dict(zip(tree.nodes, combo)), 'candidate')
        if _dominating_supermartingale(Q, H, W):
            valid += 1
            if not dominates(W, U):
                counterexamples.append(W.values)
    return CheckReport('snell_minimality_exhaustive', passed=not counterexamples, details={
        'candidates': count,
        'dominating_supermartingales': valid,
        'counterexamples': counterexamples[:10],
    })
