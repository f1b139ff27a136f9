# Lower Snell Toolkit - Model Generators and Ingestion
# ============================================================================

import hashlib
import json
import logging
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Union

import chardet
import numpy as np
import pandas as pd

from config import Config, PAYOFF_TYPES
from filtered_tree import AdaptedProcess, EventTree, ModelValidationError, Number, StoppingTime
from measure_algebra import ExplicitFamily, Family, Measure, RectangularFamily

logger = logging.getLogger(__name__)


class Model(NamedTuple):
    tree: EventTree
    family: Family
    payoff: AdaptedProcess


def _number(value: Any, exact: bool) -> Number:
    """Coerce a parameter or parsed JSON value to the arithmetic of the run."""
    if isinstance(value, str):
        value = Fraction(value)
    if exact:
        if isinstance(value, float):
            return Fraction(repr(value))
        return Fraction(value)
    return float(value)


def _payoff_function(payoff: str, strike: Number, custom: Optional[Callable[[Number], Number]]):
    if payoff == 'put':
        return lambda s: max(strike - s, 0)
    if payoff == 'call':
        return lambda s: max(s - strike, 0)
    if custom is None:
        raise ModelValidationError("custom payoff requested without a payoff function", field='payoff')
    return custom


def _check_binomial_parameters(steps, s0, u, d, p_lo, p_hi, payoff, strike):
    """Reject parameters outside the market's domain."""
    if not isinstance(steps, int) or steps < 1:
        raise ModelValidationError(f"steps must be a positive integer, got {steps}", field='steps')
    if not 0 < p_lo <= p_hi < 1:
        raise ModelValidationError(f"need 0 < p_lo <= p_hi < 1, got p_lo={p_lo}, p_hi={p_hi}", field='p_lo')
    if not 0 < d < u:
        raise ModelValidationError(f"need 0 < d < u, got d={d}, u={u}", field='d')
    if not s0 > 0:
        raise ModelValidationError(f"s0 must be positive, got {s0}", field='s0')
    if strike < 0:
        raise ModelValidationError(f"strike must be nonnegative, got {strike}", field='strike')
    if payoff not in PAYOFF_TYPES:
        raise ModelValidationError(f"payoff must be one of {PAYOFF_TYPES}, got {payoff!r}", field='payoff')


def binomial_kappa(steps: int, s0: Number = 100, u: Number = 1.2, d: Number = 0.8,
                   p_lo: Number = 0.4, p_hi: Number = 0.6, payoff: str = 'put', strike: Number = 100,
                   custom_payoff: Optional[Callable[[Number], Number]] = None, exact: bool = False,
                   grid_points: Optional[int] = None) -> Model:
    """Binary market with drift ambiguity: the up-probability ranges over [p_lo, p_hi] at every node.

    Node ``n`` has up-child ``2n + 1`` and down-child ``2n + 2``. The interval is
    stored by its endpoints unless ``grid_points`` asks for an evenly spaced grid.
    """
    _check_binomial_parameters(steps, s0, u, d, p_lo, p_hi, payoff, strike)
    s0, u, d, p_lo, p_hi, strike = (_number(x, exact) for x in (s0, u, d, p_lo, p_hi, strike))
    payoff_of = _payoff_function(payoff, strike, custom_payoff)

    if grid_points is not None and grid_points >= 2:
        probabilities = [p_lo + (p_hi - p_lo) * i / (grid_points - 1) for i in range(grid_points)]
    else:
        probabilities = [p_lo, p_hi]
    kernels = [(p, 1 - p) for p in probabilities]
    middle = (p_lo + p_hi) / 2

    parents: Dict[int, Optional[int]] = {0: None}
    ups: Dict[int, int] = {0: 0}
    depth: Dict[int, int] = {0: 0}
    internal_count = 2 ** steps - 1
    for node in range(internal_count):
        for offset, up in ((1, 1), (2, 0)):
            child = 2 * node + offset
            parents[child] = node
            ups[child] = ups[node] + up
            depth[child] = depth[node] + 1

    tree = EventTree(parents, {n: (middle, 1 - middle) for n in range(internal_count)})
    family = RectangularFamily(tree, {n: kernels for n in tree.internal_nodes})
    prices = {n: s0 * u ** ups[n] * d ** (depth[n] - ups[n]) for n in tree.nodes}
    H = AdaptedProcess(tree, {n: payoff_of(prices[n]) for n in tree.nodes}, 'payoff')
    logger.info(f"Generated binomial model: {steps} steps, {len(tree)} nodes, "
                f"{len(kernels)} kernels per node, {payoff} payoff")
    return Model(tree, family, H)


def binomial_lattice_value(steps: int, s0: float = 100, u: float = 1.2, d: float = 0.8,
                           p_lo: float = 0.4, p_hi: float = 0.6, payoff: str = 'put',
                           strike: float = 100, robust: str = 'lower') -> float:
    """Root value of the same market on the recombining price lattice.

    Kernel sets and payoffs depend on the price only, so the envelope is a
    function of (time, number of up moves) and the lattice reproduces the tree.
    """
    _check_binomial_parameters(steps, s0, u, d, p_lo, p_hi, payoff, strike)
    if payoff not in ('put', 'call'):
        raise ModelValidationError("the lattice supports put and call payoffs", field='payoff')
    pick = np.minimum if robust == 'lower' else np.maximum

    def exercise(t: int) -> np.ndarray:
        j = np.arange(t + 1)
        prices = s0 * u ** j * d ** (t - j)
        return np.maximum(strike - prices, 0.0) if payoff == 'put' else np.maximum(prices - strike, 0.0)

    values = exercise(steps)
    for t in range(steps - 1, -1, -1):
        up, down = values[1:t + 2], values[0:t + 1]
        continuation = pick(p_lo * up + (1 - p_lo) * down, p_hi * up + (1 - p_hi) * down)
        values = np.maximum(exercise(t), continuation)
    return float(values[0])


def refine_study(max_power: int, s0: float = 100, u: float = 1.2, d: float = 0.8,
                 p_lo: float = 0.4, p_hi: float = 0.6, payoff: str = 'put',
                 strike: float = 100) -> pd.DataFrame:
    """Lower value for 2, 4, ..., 2**max_power steps with per-step factors u**(1/n), d**(1/n)."""
    if max_power < 1:
        raise ModelValidationError(f"max power must be at least 1, got {max_power}", field='max_power')
    rows = []
    previous = None
    for power in range(1, max_power + 1):
        steps = 2 ** power
        value = binomial_lattice_value(steps, s0, u ** (1 / steps), d ** (1 / steps),
                                       p_lo, p_hi, payoff, strike)
        rows.append((steps, value, np.nan if previous is None else value - previous))
        previous = value
    logger.info(f"Refinement study over {len(rows)} lattices")
    return pd.DataFrame(rows, columns=['steps', 'root_value', 'difference'])


def random_instance(seed: int, depth: int = 3, branching: int = 2, kernels_per_node: int = 2,
                    exact: bool = False) -> Model:
    """Seeded tree of the given depth with 2..branching children and 1..kernels_per_node kernels per node."""
    if not 1 <= depth <= Config.MAX_RANDOM_DEPTH:
        raise ModelValidationError(f"depth must be in 1..{Config.MAX_RANDOM_DEPTH}", field='depth')
    if not 2 <= branching <= Config.MAX_RANDOM_BRANCHING:
        raise ModelValidationError(f"branching must be in 2..{Config.MAX_RANDOM_BRANCHING}", field='branching')
    if not 1 <= kernels_per_node <= Config.MAX_RANDOM_KERNELS:
        raise ModelValidationError(f"kernels per node must be in 1..{Config.MAX_RANDOM_KERNELS}",
                                   field='kernels_per_node')
    rng = np.random.default_rng(seed)

    def draw_kernel(size: int) -> List[Number]:
        # weights in 1..6 keep every entry above 1/13
        weights = [int(w) for w in rng.integers(1, 7, size=size)]
        total = sum(weights)
        return [Fraction(w, total) if exact else w / total for w in weights]

    parents: Dict[int, Optional[int]] = {0: None}
    frontier = [0]
    next_id = 1
    for _ in range(depth):
        next_frontier = []
        for node in frontier:
            for _ in range(int(rng.integers(2, branching + 1))):
                parents[next_id] = node
                next_frontier.append(next_id)
                next_id += 1
        frontier = next_frontier

    internal = [n for n in parents if n not in frontier]
    sizes = {n: sum(1 for p in parents.values() if p == n) for n in internal}
    reference = {n: draw_kernel(sizes[n]) for n in internal}
    kernel_sets = {n: [draw_kernel(sizes[n]) for _ in range(int(rng.integers(1, kernels_per_node + 1)))]
                   for n in internal}
    payoffs = {n: _number(int(v), exact) for n, v in zip(sorted(parents),
                                                         rng.integers(0, Config.MAX_RANDOM_PAYOFF + 1,
                                                                      size=len(parents)))}
    tree = EventTree(parents, reference)
    model = Model(tree, RectangularFamily(tree, kernel_sets), AdaptedProcess(tree, payoffs, 'payoff'))
    logger.debug(f"Random instance seed={seed}: {len(tree)} nodes, horizon {tree.horizon}")
    return model


def nonstable_fixture(exact: bool = False) -> Model:
    """Two members on a depth-2 binary tree that disagree at both depth-1 nodes.

    Each member is pessimistic at a different node, so pasting them at the
    intermediate stopping time produces a measure outside the family and the
    maximin value (5) falls strictly below the minimax value (7).
    """
    q = lambda x: _number(x, exact)
    parents = {0: None, 1: 0, 2: 0, 3: 1, 4: 1, 5: 2, 6: 2}
    half = (q('0.5'), q('0.5'))
    low, high = (q('0.1'), q('0.9')), (q('0.9'), q('0.1'))
    tree = EventTree(parents, {0: half, 1: half, 2: half})
    first = Measure(tree, {0: half, 1: low, 2: high})
    second = Measure(tree, {0: half, 1: high, 2: low})
    H = AdaptedProcess(tree, {0: q(0), 1: q(5), 2: q(5), 3: q(10), 4: q(0), 5: q(10), 6: q(0)}, 'payoff')
    return Model(tree, ExplicitFamily([first, second]), H)


def search_nonstable_gap(seed: int, attempts: int = 500, exact: bool = False):
    """Seeded random search for a two-member family on a depth-2 binary tree with a minimax gap.

    Returns ``(model, gap, attempt)`` for the first hit, or ``None``.
    """
    from oracle import direct_lower_snell, direct_maximin

    rng = np.random.default_rng(seed)
    parents = {0: None, 1: 0, 2: 0, 3: 1, 4: 1, 5: 2, 6: 2}

    def draw() -> tuple:
        weight = int(rng.integers(1, 10))
        return (_number(Fraction(weight, 10), exact), _number(Fraction(10 - weight, 10), exact))

    for attempt in range(attempts):
        root = draw()
        tree = EventTree(parents, {0: root, 1: draw(), 2: draw()})
        first = Measure(tree, {0: root, 1: draw(), 2: draw()})
        second = Measure(tree, {0: root, 1: draw(), 2: draw()})
        if first.equals(second):
            continue
        values = rng.integers(0, Config.MAX_RANDOM_PAYOFF + 1, size=len(parents))
        H = AdaptedProcess(tree, {n: _number(int(v), exact) for n, v in zip(sorted(parents), values)}, 'payoff')
        family = ExplicitFamily([first, second])
        initial = StoppingTime.initial(tree)
        gap = float(direct_lower_snell(family, H, initial)[0] - direct_maximin(family, H, initial)[0])
        if gap > Config.GAP_THRESHOLD:
            logger.info(f"Found minimax gap {gap:.6g} at attempt {attempt} (seed {seed})")
            return Model(tree, family, H), gap, attempt
    logger.warning(f"No minimax gap found in {attempts} attempts (seed {seed})")
    return None


# ----------------------------------------------------------------------------
# JSON model files
# ----------------------------------------------------------------------------

def _encode(value: Number) -> Union[float, int, str]:
    if isinstance(value, Fraction):
        return str(value)
    return value


def model_document(model: Model) -> Dict[str, Any]:
    """JSON document for a model: nodes, then kernel sets or explicit members."""
    tree, family, H = model
    nodes = []
    for n in tree.nodes:
        parent = tree.parent[n]
        r_prob = None
        if parent is not None:
            r_prob = _encode(tree.reference_kernel[parent][tree.children[parent].index(n)])
        nodes.append({'id': n, 'parent': parent, 'r_prob': r_prob, 'payoff': _encode(H[n])})
    document: Dict[str, Any] = {'horizon': tree.horizon, 'nodes': nodes}
    if isinstance(family, ExplicitFamily):
        document['members'] = [
            {str(n): [_encode(p) for p in Q.kernel[n]] for n in tree.internal_nodes}
            for Q in family.members
        ]
    else:
        document['kernel_sets'] = {
            str(n): [[_encode(p) for p in k] for k in family.kernel_sets[n]] for n in tree.internal_nodes
        }
    return document


def model_hash(model: Model) -> str:
    """SHA-256 of the compact, key-sorted model document."""
    canonical = json.dumps(model_document(model), sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


def save_model(path: Union[str, Path], model: Model):
    """Write the model document as indented UTF-8 JSON."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(model_document(model), f, indent=2)
        f.write('\n')
    logger.info(f"Saved model to {path}")


def _read_text(path: Path) -> str:
    """Decode a model file with the encoding chardet detects."""
    raw_data = path.read_bytes()
    encoding = chardet.detect(raw_data)['encoding'] or 'utf-8'
    if encoding.lower() == 'ascii':
        encoding = 'utf-8'
    return raw_data.decode(encoding)


def _field(record: Dict[str, Any], key: str, where: str):
    if key not in record:
        raise ModelValidationError(f"{where} has no '{key}'", field=f"{where}.{key}")
    return record[key]


def _field_number(value: Any, exact: bool, where: str) -> Number:
    """Coerce one JSON value, naming the field when it is not a number."""
    if isinstance(value, bool) or not isinstance(value, (int, float, str, Fraction)):
        raise ModelValidationError(f"{where} must be a number, got {value!r}", field=where)
    try:
        return _number(value, exact)
    except (ValueError, ZeroDivisionError):
        raise ModelValidationError(f"{where} must be a number, got {value!r}", field=where)


def _kernel_list(raw: Any, node: int, where: str, exact: bool) -> List[Number]:
    if not isinstance(raw, list) or not raw:
        raise ModelValidationError(f"kernel for node {node} must be a nonempty list", field=where)
    return [_field_number(p, exact, where) for p in raw]


def _searched_model(record: Any, exact: bool) -> Model:
    """Materialize a fixture stored as the seed of the gap search that found it."""
    if not isinstance(record, dict):
        raise ModelValidationError("'search' must be an object with 'seed' and 'attempts'", field='search')
    seed = _field(record, 'seed', 'search')
    attempts = record.get('attempts', 500)
    for key, value in (('seed', seed), ('attempts', attempts)):
        if not isinstance(value, int) or isinstance(value, bool) or value < 0:
            raise ModelValidationError(f"search {key} must be a nonnegative integer, got {value!r}",
                                       field=f"search.{key}")
    found = search_nonstable_gap(seed, attempts, exact)
    if found is None:
        raise ModelValidationError(f"search with seed {seed} found no gap in {attempts} attempts",
                                   field='search.seed')
    return found[0]


def parse_model(document: Dict[str, Any], exact: bool = False) -> Model:
    """Validate a model document and build its tree, family and payoff."""
    if not isinstance(document, dict):
        raise ModelValidationError("model document must be a JSON object")
    if 'search' in document:
        return _searched_model(document['search'], exact)
    records = _field(document, 'nodes', 'model')
    if not isinstance(records, list) or not records:
        raise ModelValidationError("'nodes' must be a nonempty list", field='nodes')

    parents: Dict[int, Optional[int]] = {}
    r_probs: Dict[int, Number] = {}
    payoffs: Dict[int, Number] = {}
    for index, record in enumerate(records):
        where = f"nodes[{index}]"
        if not isinstance(record, dict):
            raise ModelValidationError(f"{where} must be an object, got {record!r}", field=where)
        node = _field(record, 'id', where)
        if not isinstance(node, int) or isinstance(node, bool):
            raise ModelValidationError(f"node id must be an integer, got {node!r}", field=f"{where}.id")
        if node in parents:
            raise ModelValidationError(f"duplicate node id {node}", field=f"{where}.id")
        parent = _field(record, 'parent', where)
        if parent is not None and (not isinstance(parent, int) or isinstance(parent, bool)):
            raise ModelValidationError(f"parent must be an integer or null, got {parent!r}",
                                       field=f"{where}.parent")
        parents[node] = parent
        r_prob = record.get('r_prob')
        if parent is not None:
            if r_prob is None:
                raise ModelValidationError(f"node {node} has no reference probability", field=f"{where}.r_prob")
            r_probs[node] = _field_number(r_prob, exact, f"{where}.r_prob")
        payoffs[node] = _field_number(_field(record, 'payoff', where), exact, f"{where}.payoff")

    children: Dict[int, List[int]] = {}
    for node, parent in parents.items():
        if parent is not None:
            children.setdefault(parent, []).append(node)
    reference = {p: [r_probs[c] for c in sorted(kids)] for p, kids in children.items()}
    tree = EventTree(parents, reference)

    horizon = document.get('horizon')
    if horizon is not None and horizon != tree.horizon:
        raise ModelValidationError(f"declared horizon {horizon} but leaves sit at depth {tree.horizon}",
                                   field='horizon')

    if 'members' in document:
        raw_members = document['members']
        if not isinstance(raw_members, list) or not raw_members:
            raise ModelValidationError("'members' must be a nonempty list", field='members')
        measures = []
        for index, raw in enumerate(raw_members):
            if not isinstance(raw, dict):
                raise ModelValidationError(f"member {index} must be an object", field=f"members[{index}]")
            kernel = {}
            for n in tree.internal_nodes:
                if str(n) not in raw:
                    raise ModelValidationError(f"member {index} has no kernel for internal node {n}",
                                               field=f"members[{index}].{n}")
                kernel[n] = _kernel_list(raw[str(n)], n, f"members[{index}].{n}", exact)
            measures.append(Measure(tree, kernel))
        family: Family = ExplicitFamily(measures)
    else:
        raw_sets = _field(document, 'kernel_sets', 'model')
        if not isinstance(raw_sets, dict):
            raise ModelValidationError("'kernel_sets' must be an object keyed by node id", field='kernel_sets')
        kernel_sets = {}
        for n in tree.internal_nodes:
            if str(n) not in raw_sets:
                raise ModelValidationError(f"missing kernel set for internal node {n}",
                                           field=f"kernel_sets.{n}")
            if not isinstance(raw_sets[str(n)], list):
                raise ModelValidationError(f"kernel set for node {n} must be a list", field=f"kernel_sets.{n}")
            kernel_sets[n] = [_kernel_list(k, n, f"kernel_sets.{n}", exact) for k in raw_sets[str(n)]]
        extra = sorted(set(raw_sets) - {str(n) for n in tree.internal_nodes})
        if extra:
            raise ModelValidationError(f"kernel sets for non-internal nodes {extra[:5]}", field='kernel_sets')
        family = RectangularFamily(tree, kernel_sets)

    H = AdaptedProcess(tree, payoffs, 'payoff')
    H.require_nonnegative()
    return Model(tree, family, H)


def load_model(path: Union[str, Path], exact: bool = False) -> Model:
    """Read a model file; numbers go through Fraction in exact mode."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Model file not found: {path}")
    text = _read_text(path)
    number = Fraction if exact else float
    try:
        document = json.loads(text, parse_float=number)
    except json.JSONDecodeError as e:
        raise ModelValidationError(f"invalid JSON: {e.msg}", line=e.lineno)
    model = parse_model(document, exact)
    logger.info(f"Loaded model from {path}: {len(model.tree)} nodes")
    return model
