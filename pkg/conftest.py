# Lower Snell Toolkit - Shared Test Fixtures
# ============================================================================

import sys
from fractions import Fraction
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from filtered_tree import AdaptedProcess, EventTree
from measure_algebra import Measure, RectangularFamily
from models import Model, nonstable_fixture

BINARY_DEPTH_TWO = {0: None, 1: 0, 2: 0, 3: 1, 4: 1, 5: 2, 6: 2}


def one_period_model(root_payoff=2, exact=False) -> Model:
    q = Fraction if exact else float
    tree = EventTree({0: None, 1: 0, 2: 0}, {0: (q('0.5'), q('0.5'))})
    family = RectangularFamily(tree, {0: [(q('0.3'), q('0.7')), (q('0.7'), q('0.3'))]})
    H = AdaptedProcess(tree, {0: q(root_payoff), 1: q(10), 2: q(0)}, 'payoff')
    return Model(tree, family, H)


@pytest.fixture
def one_period():
    return one_period_model()


@pytest.fixture
def one_period_exact():
    return one_period_model(exact=True)


@pytest.fixture
def binary_tree():
    half = (0.5, 0.5)
    return EventTree(BINARY_DEPTH_TWO, {0: half, 1: half, 2: half})


@pytest.fixture
def binary_family(binary_tree):
    kernels = [(0.25, 0.75), (0.75, 0.25)]
    return RectangularFamily(binary_tree, {n: kernels for n in binary_tree.internal_nodes})


@pytest.fixture
def binary_payoff(binary_tree):
    return AdaptedProcess(binary_tree, {0: 3.0, 1: 4.0, 2: 1.0, 3: 9.0, 4: 0.0, 5: 2.0, 6: 6.0}, 'payoff')


@pytest.fixture
def reference_measure(binary_tree):
    return Measure.reference(binary_tree)


@pytest.fixture
def nonstable():
    return nonstable_fixture()
