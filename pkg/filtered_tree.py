# Lower Snell Toolkit - Filtered Event Trees
# ============================================================================

"""
Finite filtered probability spaces realized as event trees.

A node is an atom of the sigma-field at its depth, so a process indexed by nodes
is adapted by construction and a stopping time is an antichain of nodes that
meets every root-to-leaf path exactly once.
"""

import logging
from fractions import Fraction
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from config import Config

logger = logging.getLogger(__name__)

Number = Union[float, Fraction]
# A random variable measurable w.r.t. the sigma-field of a node set: node -> value
NodeValues = Dict[int, Number]


class ModelValidationError(ValueError):
    """A model, kernel, process or stopping time violates its invariants."""

    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None):
        self.field = field
        self.line = line
        location = []
        if line is not None:
            location.append(f"line {line}")
        if field is not None:
            location.append(f"field '{field}'")
        if location:
            message = f"{message} ({', '.join(location)})"
        super().__init__(message)


class TreeMismatchError(ModelValidationError):
    """Operands of an operation live on different event trees."""


class EnumerationBudgetError(RuntimeError):
    """An exhaustive enumeration would exceed the configured budget."""

    def __init__(self, count: int, budget: int, what: str = 'stopping times'):
        self.count = count
        self.budget = budget
        self.what = what
        super().__init__(f"enumeration too large: {count} {what} exceed the budget of {budget}")


def close(a: Number, b: Number, tol: Optional[float] = None) -> bool:
    """Compare two values, exactly for rationals and within tolerance otherwise."""
    if isinstance(a, (Fraction, int)) and isinstance(b, (Fraction, int)):
        return a == b
    tol = Config.TOLERANCE if tol is None else tol
    return abs(a - b) <= tol


def values_close(x: Mapping[int, Number], y: Mapping[int, Number], tol: Optional[float] = None) -> bool:
    """Node-wise comparison of two random variables on the same node set."""
    if set(x) != set(y):
        return False
    return all(close(x[n], y[n], tol) for n in x)


def max_abs_difference(x: Mapping[int, Number], y: Mapping[int, Number]) -> float:
    return max((abs(float(x[n]) - float(y[n])) for n in x), default=0.0)


def normalize_kernel(probs: Sequence[Number], where: str) -> Tuple[Number, ...]:
    """Validate a transition kernel and renormalize it to sum exactly to one."""
    probs = tuple(probs)
    if not probs:
        raise ModelValidationError(f"{where}: empty kernel", field=where)
    for p in probs:
        if not p > 0:
            raise ModelValidationError(
                f"{where}: kernel entries must be strictly positive, got {p}", field=where)
    total = sum(probs)
    if abs(total - 1) > Config.KERNEL_SUM_TOLERANCE:
        raise ModelValidationError(
            f"{where}: kernel sums to {float(total):.12g}, beyond tolerance "
            f"{Config.KERNEL_SUM_TOLERANCE} of 1", field=where)
    # floats within rounding of one are kept as given so copies stay bit-identical
    if total != 1 and (isinstance(total, Fraction) or abs(total - 1) > 1e-12):
        probs = tuple(p / total for p in probs)
    return probs


class EventTree:
    """Rooted event tree with a strictly positive reference kernel at every internal node.

    ``parents`` maps every node id to its parent (``None`` for the root);
    ``reference_kernel`` maps every internal node to probabilities over its
    children, listed in increasing child id.
    """

    def __init__(self, parents: Mapping[int, Optional[int]],
                 reference_kernel: Mapping[int, Sequence[Number]]):
        roots = [n for n, p in parents.items() if p is None]
        if len(roots) != 1:
            raise ModelValidationError(
                f"event tree needs exactly one root, found {len(roots)}", field='parent')

        children: Dict[int, List[int]] = {n: [] for n in parents}
        for node, parent in parents.items():
            if parent is None:
                continue
            if parent not in children:
                raise ModelValidationError(f"node {node}: unknown parent {parent}", field='parent')
            children[parent].append(node)

        self.root = roots[0]
        self.parent: Dict[int, Optional[int]] = dict(parents)
        self.children: Dict[int, Tuple[int, ...]] = {n: tuple(sorted(c)) for n, c in children.items()}
        self.nodes: Tuple[int, ...] = tuple(sorted(parents))

        depth = {self.root: 0}
        frontier = [self.root]
        while frontier:
            next_frontier = []
            for node in frontier:
                for child in self.children[node]:
                    depth[child] = depth[node] + 1
                    next_frontier.append(child)
            frontier = next_frontier
        if len(depth) != len(self.nodes):
            unreachable = sorted(set(self.nodes) - set(depth))
            raise ModelValidationError(
                f"nodes {unreachable[:5]} are not reachable from the root", field='parent')
        self.depth: Dict[int, int] = depth

        self.leaves: Tuple[int, ...] = tuple(n for n in self.nodes if not self.children[n])
        self.internal_nodes: Tuple[int, ...] = tuple(n for n in self.nodes if self.children[n])
        leaf_depths = sorted({depth[leaf] for leaf in self.leaves})
        if len(leaf_depths) != 1:
            raise ModelValidationError(
                f"all leaves must sit at the horizon; found leaf depths {leaf_depths}")
        self.horizon = leaf_depths[0]
        if self.horizon < 1:
            raise ModelValidationError("horizon must be a positive integer", field='horizon')

        for node in self.internal_nodes:
            if len(self.children[node]) < 2:
                raise ModelValidationError(
                    f"internal node {node} has a single child; at least 2 are required",
                    field=f"nodes[{node}]")

        kernels = {}
        for node in self.internal_nodes:
            if node not in reference_kernel:
                raise ModelValidationError(
                    f"missing reference kernel for internal node {node}", field=f"nodes[{node}]")
            probs = reference_kernel[node]
            if len(probs) != len(self.children[node]):
                raise ModelValidationError(
                    f"reference kernel at node {node} has {len(probs)} entries for "
                    f"{len(self.children[node])} children", field=f"nodes[{node}]")
            kernels[node] = normalize_kernel(probs, f"reference kernel at node {node}")
        self.reference_kernel: Dict[int, Tuple[Number, ...]] = kernels

        leaves_below: Dict[int, FrozenSet[int]] = {}
        for node in sorted(self.nodes, key=lambda n: -depth[n]):
            if self.children[node]:
                leaves_below[node] = frozenset().union(*(leaves_below[c] for c in self.children[node]))
            else:
                leaves_below[node] = frozenset([node])
        self._leaves_below = leaves_below
        self._signature = tuple(sorted(self.parent.items()))

        logger.debug(f"Built event tree: {len(self.nodes)} nodes, horizon {self.horizon}, "
                     f"{len(self.leaves)} leaves")

    @classmethod
    def from_children(cls, children: Mapping[int, Sequence[int]],
                      reference_kernel: Mapping[int, Sequence[Number]]) -> 'EventTree':
        """Build a tree from child lists; nodes never listed as a child form the root."""
        parents: Dict[int, Optional[int]] = {n: None for n in children}
        for node, kids in children.items():
            for child in kids:
                parents[child] = node
        return cls(parents, reference_kernel)

    def require(self, node: int):
        if node not in self.parent:
            raise ModelValidationError(f"unknown node id {node}", field='node')

    def leaves_below(self, node: int) -> FrozenSet[int]:
        self.require(node)
        return self._leaves_below[node]

    def ancestors(self, node: int) -> List[int]:
        """Strict ancestors from the parent up to the root."""
        result = []
        parent = self.parent[node]
        while parent is not None:
            result.append(parent)
            parent = self.parent[parent]
        return result

    def path(self, node: int) -> Tuple[int, ...]:
        """Nodes from the root down to ``node``."""
        return tuple(reversed(self.ancestors(node))) + (node,)

    def is_ancestor_or_equal(self, a: int, b: int) -> bool:
        while b is not None and self.depth[b] > self.depth[a]:
            b = self.parent[b]
        return b == a

    def descendants(self, node: int) -> List[int]:
        """``node`` and everything below it, parents before children."""
        result = [node]
        index = 0
        while index < len(result):
            result.extend(self.children[result[index]])
            index += 1
        return result

    def nodes_at_depth(self, t: int) -> Tuple[int, ...]:
        return tuple(n for n in self.nodes if self.depth[n] == t)

    def same_structure(self, other: 'EventTree') -> bool:
        return self is other or self._signature == other._signature

    def __eq__(self, other):
        if not isinstance(other, EventTree):
            return NotImplemented
        if not self.same_structure(other):
            return False
        return all(
            all(close(a, b) for a, b in zip(self.reference_kernel[n], other.reference_kernel[n]))
            for n in self.internal_nodes
        )

    def __hash__(self):
        return hash(self._signature)

    def __len__(self):
        return len(self.nodes)

    def __repr__(self):
        return f"EventTree(nodes={len(self.nodes)}, horizon={self.horizon}, leaves={len(self.leaves)})"


def check_same_tree(first: EventTree, second: EventTree, what: str = 'operands'):
    if not first.same_structure(second):
        raise TreeMismatchError(f"{what} are defined on different event trees")


class AdaptedProcess:
    """One real value per node of a tree (payoff H, envelopes U^Q and U-down)."""

    def __init__(self, tree: EventTree, values: Mapping[int, Number], name: str = 'process'):
        missing = [n for n in tree.nodes if n not in values]
        if missing:
            raise ModelValidationError(f"{name} is undefined at nodes {missing[:5]}", field=name)
        extra = sorted(set(values) - set(tree.nodes))
        if extra:
            raise ModelValidationError(f"{name} has values at unknown nodes {extra[:5]}", field=name)
        self.tree = tree
        self.name = name
        self.values: NodeValues = {n: values[n] for n in tree.nodes}

    @classmethod
    def constant(cls, tree: EventTree, value: Number, name: str = 'process') -> 'AdaptedProcess':
        return cls(tree, {n: value for n in tree.nodes}, name)

    def __getitem__(self, node: int) -> Number:
        return self.values[node]

    def require_nonnegative(self):
        for node, value in self.values.items():
            if value < 0:
                raise ModelValidationError(
                    f"{self.name} must be nonnegative; node {node} has value {value}", field=self.name)
        scale = max((abs(v) for v in self.values.values()), default=0)
        if scale > Config.PAYOFF_SCALE_LIMIT:
            logger.warning(f"{self.name} reaches {float(scale):.6g}; tolerances assume "
                           f"max|H| <= {Config.PAYOFF_SCALE_LIMIT:g}")

    def equals(self, other: 'AdaptedProcess', tol: Optional[float] = None) -> bool:
        check_same_tree(self.tree, other.tree, 'processes')
        return values_close(self.values, other.values, tol)

    def __repr__(self):
        return f"AdaptedProcess({self.name}, nodes={len(self.values)})"


class StoppingTime:
    """Canonical antichain of nodes meeting every root-to-leaf path exactly once."""

    def __init__(self, tree: EventTree, region: Iterable[int]):
        region = frozenset(region)
        unknown = sorted(n for n in region if n not in tree.parent)
        if unknown:
            raise ModelValidationError(f"stopping time uses unknown nodes {unknown[:5]}", field='region')

        stop_node: Dict[int, int] = {}
        for leaf in tree.leaves:
            hits = [n for n in tree.path(leaf) if n in region]
            if len(hits) != 1:
                raise ModelValidationError(
                    f"region {sorted(region)} meets the path to leaf {leaf} {len(hits)} times; "
                    f"a stopping time meets every path exactly once", field='region')
            stop_node[leaf] = hits[0]

        self.tree = tree
        self.region: FrozenSet[int] = region
        self.nodes: Tuple[int, ...] = tuple(sorted(region))
        self._stop_node = stop_node
        self.above: FrozenSet[int] = frozenset(a for n in region for a in tree.ancestors(n))

    @classmethod
    def initial(cls, tree: EventTree) -> 'StoppingTime':
        return cls(tree, [tree.root])

    @classmethod
    def terminal(cls, tree: EventTree) -> 'StoppingTime':
        return cls(tree, tree.leaves)

    @classmethod
    def at_depth(cls, tree: EventTree, t: int) -> 'StoppingTime':
        if not 0 <= t <= tree.horizon:
            raise ModelValidationError(f"depth {t} outside 0..{tree.horizon}", field='depth')
        return cls(tree, tree.nodes_at_depth(t))

    @classmethod
    def from_leaf_map(cls, tree: EventTree, leaf_depths: Mapping[int, int]) -> 'StoppingTime':
        """Convert a stopping time given as a function of paths (leaf -> stopping depth)."""
        region = set()
        for leaf in tree.leaves:
            if leaf not in leaf_depths:
                raise ModelValidationError(f"no stopping depth for path to leaf {leaf}", field='leaf_depths')
            path = tree.path(leaf)
            t = leaf_depths[leaf]
            if not 0 <= t < len(path):
                raise ModelValidationError(f"stopping depth {t} outside 0..{tree.horizon}", field='leaf_depths')
            region.add(path[t])
        for node in region:
            if any(leaf_depths[leaf] != tree.depth[node] for leaf in tree.leaves_below(node)):
                raise ModelValidationError(
                    f"path function is not adapted: paths through node {node} disagree on stopping there",
                    field='leaf_depths')
        return cls(tree, region)

    def stop_node(self, leaf: int) -> int:
        return self._stop_node[leaf]

    def is_at_or_below(self, node: int) -> bool:
        """True when ``node`` lies at or after this stopping time on its paths."""
        return node not in self.above

    def label(self) -> str:
        return '{' + ','.join(str(n) for n in self.nodes) + '}'

    def to_json(self) -> List[int]:
        return list(self.nodes)

    def __eq__(self, other):
        if not isinstance(other, StoppingTime):
            return NotImplemented
        return self.region == other.region and self.tree.same_structure(other.tree)

    def __hash__(self):
        return hash(self.region)

    def __repr__(self):
        return f"StoppingTime({self.label()})"


def paths_through(tree: EventTree, node: int) -> FrozenSet[int]:
    """Leaves descending from ``node``: the terminal atoms inside the node's atom."""
    return tree.leaves_below(node)


def stopping_time_leq(a: StoppingTime, b: StoppingTime) -> bool:
    """a <= b on every path."""
    check_same_tree(a.tree, b.tree, 'stopping times')
    depth = a.tree.depth
    return all(depth[a.stop_node(leaf)] <= depth[b.stop_node(leaf)] for leaf in a.tree.leaves)


def join(a: StoppingTime, b: StoppingTime) -> StoppingTime:
    """Pathwise maximum of two stopping times."""
    check_same_tree(a.tree, b.tree, 'stopping times')
    depth = a.tree.depth
    region = set()
    for leaf in a.tree.leaves:
        first, second = a.stop_node(leaf), b.stop_node(leaf)
        region.add(first if depth[first] >= depth[second] else second)
    return StoppingTime(a.tree, region)


def meet(a: StoppingTime, b: StoppingTime) -> StoppingTime:
    """Pathwise minimum of two stopping times."""
    check_same_tree(a.tree, b.tree, 'stopping times')
    depth = a.tree.depth
    region = set()
    for leaf in a.tree.leaves:
        first, second = a.stop_node(leaf), b.stop_node(leaf)
        region.add(first if depth[first] <= depth[second] else second)
    return StoppingTime(a.tree, region)


def sample(process: AdaptedProcess, tau: StoppingTime) -> NodeValues:
    """The process sampled at ``tau``, as a random variable on the region nodes."""
    check_same_tree(process.tree, tau.tree, 'process and stopping time')
    return {n: process.values[n] for n in tau.nodes}


def stopped_variable(process: AdaptedProcess, tau: StoppingTime) -> NodeValues:
    """The process sampled at ``tau``, seen as a variable on the leaves."""
    check_same_tree(process.tree, tau.tree, 'process and stopping time')
    return {leaf: process.values[tau.stop_node(leaf)] for leaf in tau.tree.leaves}


def lift(tau: StoppingTime, values: Mapping[int, Number]) -> NodeValues:
    """View a variable on ``tau``'s region as a variable on the leaves."""
    return {leaf: values[tau.stop_node(leaf)] for leaf in tau.tree.leaves}


def indicator(tree: EventTree, event: Iterable[int]) -> NodeValues:
    event = set(event)
    return {leaf: (1 if leaf in event else 0) for leaf in tree.leaves}
