# Lower Snell Toolkit - Lower Snell Envelope and Robust Stopping
# ============================================================================

"""
The lower Snell envelope of a payoff under a stable family, the robust optimal
stopping time tau-down and the checks that tie the recursion to its defining
identities: minimax, robust optimality, T-system compatibility and pasting,
and the backward submartingale property of robust conditional infima.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Sequence

from config import Config, default_budget
from filtered_tree import (
    AdaptedProcess, EnumerationBudgetError, ModelValidationError, Number, NodeValues, StoppingTime,
    check_same_tree, close, lift, max_abs_difference, meet, sample, stopped_variable,
    stopping_time_leq, values_close,
)
from measure_algebra import (
    Family, RectangularFamily, conditional_expectation, contains, count_members,
    family_conditional_inf, members, pasting, robust_step_inf, robust_step_sup,
)
from oracle import count_stopping_times, direct_lower_snell, direct_maximin, enumerate_stopping_times
from reports import CheckReport
from snell_classic import backward_induction, first_contact, min_optimal_time, snell_envelope

logger = logging.getLogger(__name__)


@dataclass
class LowerSnellResult:
    envelope: AdaptedProcess
    tau_down: StoppingTime
    root_value: Number

    def to_json(self):
        return {
            'root_value': self.root_value,
            'tau_down_region': list(self.tau_down.nodes),
            'envelope_by_node': {str(n): v for n, v in self.envelope.values.items()},
        }


def _require_rectangular(family: Family):
    if not isinstance(family, RectangularFamily):
        raise TypeError("the robust recursion needs a rectangular family")


def lower_snell(family: RectangularFamily, H: AdaptedProcess) -> LowerSnellResult:
    """Robust backward induction: U(n) = max(H(n), min over admissible kernels of the one-step mean)."""
    _require_rectangular(family)
    check_same_tree(family.tree, H.tree, 'family and payoff')
    H.require_nonnegative()
    tree = family.tree
    envelope = backward_induction(H, lambda n, u: robust_step_inf(family, n, u), 'lower_snell')
    tau_down = first_contact(H, envelope, StoppingTime.initial(tree))
    logger.debug(f"Lower Snell root value {envelope[tree.root]}, tau_down {tau_down.label()}")
    return LowerSnellResult(envelope, tau_down, envelope[tree.root])


def upper_snell(family: RectangularFamily, H: AdaptedProcess) -> AdaptedProcess:
    """Optimistic counterpart: the one-step mean is maximized over admissible kernels."""
    _require_rectangular(family)
    check_same_tree(family.tree, H.tree, 'family and payoff')
    H.require_nonnegative()
    return backward_induction(H, lambda n, u: robust_step_sup(family, n, u), 'upper_snell')


def robust_optimal_time(family: RectangularFamily, H: AdaptedProcess, rho: StoppingTime,
                        result: Optional[LowerSnellResult] = None) -> StoppingTime:
    """tau-down after ``rho`` in hitting-time form: first contact of H with the lower envelope."""
    result = result if result is not None else lower_snell(family, H)
    return first_contact(H, result.envelope, rho)


def tau_down_via_essinf(family: Family, H: AdaptedProcess, rho: StoppingTime,
                        budget: Optional[int] = None) -> StoppingTime:
    """Pathwise minimum over members of the minimal optimal times after ``rho``."""
    check_same_tree(family.tree, rho.tree, 'family and stopping time')
    result: Optional[StoppingTime] = None
    for Q in members(family, budget):
        tau_q = min_optimal_time(Q, H, rho)
        result = tau_q if result is None else meet(result, tau_q)
    return result


def check_robust_optimality(family: RectangularFamily, H: AdaptedProcess, rho: StoppingTime,
                            budget: Optional[int] = None) -> CheckReport:
    """U-down at rho equals the worst-case value of stopping at tau-down; at time 0 also the maximin value."""
    result = lower_snell(family, H)
    tau_down = robust_optimal_time(family, H, rho, result)
    envelope_side = sample(result.envelope, rho)
    X = stopped_variable(H, tau_down)
    worst: Optional[NodeValues] = None
    for Q in members(family, budget):
        values = conditional_expectation(Q, X, rho)
        worst = values if worst is None else {n: min(worst[n], values[n]) for n in values}
    details = {
        'rho': rho,
        'tau_down': tau_down,
        'envelope': envelope_side,
        'worst_case_at_tau_down': worst,
    }
    passed = values_close(envelope_side, worst)
    if rho.nodes == (family.tree.root,):
        maximin = direct_maximin(family, H, rho, budget)[family.tree.root]
        details['inf_value_at_tau_down'] = worst[family.tree.root]
        details['sup_inf_value'] = maximin
        passed = passed and close(worst[family.tree.root], maximin)
    return CheckReport('robust_optimality', passed=passed, details=details)


def minimax_check(family: Family, H: AdaptedProcess, rho: StoppingTime,
                  budget: Optional[int] = None) -> CheckReport:
    """sup over tau of the robust conditional infimum against inf over Q of the Snell envelope."""
    check_same_tree(family.tree, H.tree, 'family and payoff')
    lhs: Optional[NodeValues] = None
    best_tau: Dict[int, StoppingTime] = {}
    for tau in enumerate_stopping_times(family.tree, rho, budget):
        values = family_conditional_inf(family, stopped_variable(H, tau), rho, budget)
        if lhs is None:
            lhs = dict(values)
            best_tau = {n: tau for n in values}
            continue
        for n, v in values.items():
            if v > lhs[n]:
                lhs[n], best_tau[n] = v, tau

    rhs: Optional[NodeValues] = None
    best_measure: Dict[int, int] = {}
    for measure_id, Q in enumerate(members(family, budget)):
        values = sample(snell_envelope(Q, H), rho)
        if rhs is None:
            rhs = dict(values)
            best_measure = {n: measure_id for n in values}
            continue
        for n, v in values.items():
            if v < rhs[n]:
                rhs[n], best_measure[n] = v, measure_id

    gap = max(float(rhs[n] - lhs[n]) for n in rhs)
    details = {
        'sup_inf': lhs,
        'inf_sup': rhs,
        'gap': gap,
        'optimal_tau': best_tau,
        'optimal_measure_id': best_measure,
    }
    passed = values_close(lhs, rhs)
    if isinstance(family, RectangularFamily):
        envelope_side = sample(lower_snell(family, H).envelope, rho)
        details['lower_snell'] = envelope_side
        passed = passed and values_close(lhs, envelope_side)
    elif gap > Config.GAP_THRESHOLD:
        logger.info(f"Minimax gap {gap:.6g} for a family of {count_members(family)} members")
    return CheckReport('minimax', passed=passed, details=details)


def direct_system(family: Family, H: AdaptedProcess, budget: Optional[int]) -> Dict[StoppingTime, NodeValues]:
    """The T-system tau -> U-down(tau) computed from its definition at every stopping time."""
    budget = default_budget() if budget is None else budget
    tree = family.tree
    initial = StoppingTime.initial(tree)
    count = count_stopping_times(tree, initial)
    if count > Config.TSYSTEM_STOPPING_TIME_CAP:
        raise EnumerationBudgetError(count, Config.TSYSTEM_STOPPING_TIME_CAP)
    work = count * count * count_members(family)
    if work > budget:
        raise EnumerationBudgetError(work, budget, 'oracle evaluations')
    return {tau: direct_lower_snell(family, H, tau, budget)
            for tau in enumerate_stopping_times(tree, initial, budget)}


def tsystem_compatibility_check(family: Family, H: AdaptedProcess, budget: Optional[int] = None,
                                system: Optional[Dict[StoppingTime, NodeValues]] = None) -> CheckReport:
    """U-down(tau1) = U-down(tau2) on {tau1 = tau2} for every pair of stopping times."""
    system = system if system is not None else direct_system(family, H, budget)
    # {tau1 = tau2} is the union of the atoms of their shared region nodes,
    # so pairwise agreement is agreement among all systems containing a node
    seen: Dict[int, Number] = {}
    holders: Dict[int, int] = {}
    conflicts = []
    for tau, values in system.items():
        for n, v in values.items():
            holders[n] = holders.get(n, 0) + 1
            if n not in seen:
                seen[n] = v
            elif not close(seen[n], v):
                conflicts.append({'node': n, 'stopping_time': tau, 'value': v, 'earlier': seen[n]})
    overlapping_pairs = sum(k * (k - 1) // 2 for k in holders.values())
    return CheckReport('tsystem_compatibility', passed=not conflicts, details={
        'stopping_times': len(system),
        'overlapping_pairs': overlapping_pairs,
        'conflicts': conflicts[:10],
        'adaptedness': 'structural: values are indexed by region nodes',
    })


def tsystem_pasting_check(family: RectangularFamily, H: AdaptedProcess, budget: Optional[int] = None,
                          system: Optional[Dict[StoppingTime, NodeValues]] = None) -> CheckReport:
    """The recursion's node process, sampled at any stopping time, reproduces the T-system."""
    system = system if system is not None else direct_system(family, H, budget)
    envelope = lower_snell(family, H).envelope
    mismatches = []
    worst = 0.0
    for tau, values in system.items():
        sampled = sample(envelope, tau)
        worst = max(worst, max_abs_difference(sampled, values))
        if not values_close(sampled, values):
            mismatches.append({'stopping_time': tau, 'sampled': sampled, 'direct': values})
    return CheckReport('tsystem_pasting', passed=not mismatches, details={
        'stopping_times': len(system),
        'max_abs_difference': worst,
        'mismatches': mismatches[:10],
        'right_semicontinuity': 'vacuous: decreasing chains of stopping times on a finite tree '
                                'are eventually constant',
    })


def _require_decreasing(chain: Sequence[StoppingTime]):
    if not chain:
        raise ModelValidationError("empty chain of stopping times", field='chain')
    for earlier, later in zip(chain, chain[1:]):
        if not stopping_time_leq(later, earlier):
            raise ModelValidationError(
                f"chain is not decreasing: {later.label()} exceeds {earlier.label()} on some path",
                field='chain')


def _stabilization_index(chain: Sequence[StoppingTime]) -> int:
    index = len(chain) - 1
    while index > 0 and chain[index - 1] == chain[-1]:
        index -= 1
    return index


def backward_submartingale_check(family: Family, Y: Dict[int, Number],
                                 chain: Sequence[StoppingTime],
                                 budget: Optional[int] = None) -> CheckReport:
    """E_Q[Y_i | F_rho_(i+1)] >= Y_(i+1) for Y_i the robust conditional infimum of Y at rho_i."""
    _require_decreasing(chain)
    for rho in chain:
        check_same_tree(family.tree, rho.tree, 'family and stopping time')
    ys = [family_conditional_inf(family, Y, rho, budget) for rho in chain]
    violations = []
    strict = False
    for measure_id, Q in enumerate(members(family, budget)):
        for i in range(len(chain) - 1):
            projected = conditional_expectation(Q, lift(chain[i], ys[i]), chain[i + 1])
            for n, v in projected.items():
                if v < ys[i + 1][n] and not close(v, ys[i + 1][n]):
                    violations.append({'measure_id': measure_id, 'step': i, 'node': n,
                                       'projected': v, 'next': ys[i + 1][n]})
                elif not close(v, ys[i + 1][n]):
                    strict = True
    start = _stabilization_index(chain)
    stabilized = all(values_close(ys[j], ys[-1]) for j in range(start, len(chain)))
    return CheckReport('backward_submartingale', passed=not violations and stabilized, details={
        'chain': list(chain),
        'violations': violations[:10],
        'strict_somewhere': strict,
        'stabilized_from': start,
        'limit': ys[-1],
        'convergence': 'trivial: a finite decreasing chain is eventually constant',
    })


def directed_downwards_check(family: Family, H: AdaptedProcess, rho: StoppingTime,
                             budget: Optional[int] = None) -> CheckReport:
    """Pasting two members where their optimal times split yields a member stopping no later than both."""
    budget = default_budget() if budget is None else budget
    listed = list(members(family, budget))
    if len(listed) ** 2 > budget:
        raise EnumerationBudgetError(len(listed) ** 2, budget, 'member pairs')
    tree = family.tree
    times = [min_optimal_time(Q, H, rho) for Q in listed]
    failures = []
    outside = 0
    for i, Q1 in enumerate(listed):
        for j, Q2 in enumerate(listed):
            t1, t2 = times[i], times[j]
            leaf_depths = {}
            for leaf in tree.leaves:
                d1, d2 = tree.depth[t1.stop_node(leaf)], tree.depth[t2.stop_node(leaf)]
                leaf_depths[leaf] = d2 if d1 >= d2 else tree.horizon
            sigma = StoppingTime.from_leaf_map(tree, leaf_depths)
            Q3 = pasting(Q1, Q2, sigma)
            if not contains(family, Q3):
                outside += 1
            t3 = min_optimal_time(Q3, H, rho)
            if not stopping_time_leq(t3, meet(t1, t2)):
                failures.append({'q1': i, 'q2': j, 'sigma': sigma, 'tau_q3': t3})
    return CheckReport('directed_downwards', passed=not failures, details={
        'pairs': len(listed) ** 2,
        'failures': failures[:10],
        'pastings_outside_family': outside,
    })


def right_continuity_check(family: Family, H: AdaptedProcess, chain: Sequence[StoppingTime],
                           budget: Optional[int] = None) -> CheckReport:
    """Semicontinuity from the right of tau -> U-down(tau) along a decreasing chain."""
    _require_decreasing(chain)
    values = [lift(tau, direct_lower_snell(family, H, tau, budget)) for tau in chain]
    start = _stabilization_index(chain)
    tail = values[start:]
    limit = values[-1]
    limsup = {leaf: max(v[leaf] for v in tail) for leaf in limit}
    liminf = {leaf: min(v[leaf] for v in tail) for leaf in limit}
    upper = all(limit[leaf] >= limsup[leaf] or close(limit[leaf], limsup[leaf]) for leaf in limit)
    lower = all(limit[leaf] <= liminf[leaf] or close(limit[leaf], liminf[leaf]) for leaf in limit)
    return CheckReport('right_continuity', passed=upper and lower, details={
        'chain': list(chain),
        'stabilized_from': start,
        'upper_semicontinuous': upper,
        'lower_semicontinuous': lower,
    })
