import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hamcheck.errors import DimensionMismatchError
from hamcheck.geometry import (
    CotangentPoint,
    HamiltonianGradient,
    TangentToCotangent,
    hamiltonian_vector_field,
    liouville_pairing,
    symplectic_form,
)

finite = st.floats(min_value=-1e3, max_value=1e3, allow_nan=False)


@st.composite
def tangent_pairs(draw, n_max=4):
    n = draw(st.integers(min_value=1, max_value=n_max))
    vec = lambda: np.array(draw(st.lists(finite, min_size=n, max_size=n)))
    v1 = TangentToCotangent(vec(), vec())
    v2 = TangentToCotangent(vec(), vec())
    g = HamiltonianGradient(vec(), vec())
    return v1, v2, g


def test_pairing_zero_covector():
    ell = CotangentPoint([0.0], [0.0])
    v = TangentToCotangent([1.0], [0.0])
    assert liouville_pairing(ell, v) == 0.0


def test_pairing_ignores_dp():
    ell = CotangentPoint([3.0], [2.0])
    v = TangentToCotangent([5.0], [7.0])
    assert liouville_pairing(ell, v) == 10.0


def test_pairing_cancellation():
    ell = CotangentPoint([0.0, 0.0], [1.0, -1.0])
    v = TangentToCotangent([1.0, 1.0], [9.0, 9.0])
    assert liouville_pairing(ell, v) == 0.0


def test_symplectic_coordinate_pair():
    v1 = TangentToCotangent([1.0], [0.0])
    v2 = TangentToCotangent([0.0], [1.0])
    assert symplectic_form(v1, v2) == -1.0


def test_symplectic_self_is_zero():
    v = TangentToCotangent([2.0], [3.0])
    assert symplectic_form(v, v) == 0.0


def test_symplectic_direct_expansion():
    v1 = TangentToCotangent([1.0, 0.0], [0.0, 2.0])
    v2 = TangentToCotangent([0.0, 1.0], [1.0, 0.0])
    assert symplectic_form(v1, v2) == pytest.approx(1.0, abs=1e-15)


def test_field_critical_point():
    f = hamiltonian_vector_field(HamiltonianGradient([0.0], [0.0]))
    assert np.all(f.dq == 0.0) and np.all(f.dp == 0.0)


def test_field_definitional():
    f = hamiltonian_vector_field(HamiltonianGradient([1.0], [2.0]))
    assert f.dq[0] == 2.0 and f.dp[0] == -1.0


def test_field_matches_hand_differentiated_quadratic():
    # H = p^2/2 at p = 0.5: dH = (0, 0.5), field = (0.5, 0)
    f = hamiltonian_vector_field(HamiltonianGradient([0.0], [0.5]))
    assert f.dq[0] == pytest.approx(0.5, abs=1e-15)
    assert f.dp[0] == 0.0


def test_dimension_mismatch_raises():
    with pytest.raises(DimensionMismatchError):
        CotangentPoint([1.0], [1.0, 2.0])
    with pytest.raises(DimensionMismatchError):
        liouville_pairing(CotangentPoint([1.0], [1.0]), TangentToCotangent([1.0, 2.0], [0.0, 0.0]))
    with pytest.raises(DimensionMismatchError):
        symplectic_form(TangentToCotangent([1.0], [1.0]), TangentToCotangent([1.0, 2.0], [0.0, 0.0]))
    with pytest.raises(DimensionMismatchError):
        CotangentPoint([np.inf], [1.0])


@given(tangent_pairs())
@settings(max_examples=200, deadline=None)
def test_antisymmetry(vals):
    v1, v2, _ = vals
    a = symplectic_form(v1, v2)
    b = symplectic_form(v2, v1)
    scale = 1.0 + abs(a) + abs(b)
    assert abs(a + b) <= 1e-12 * scale


@given(tangent_pairs())
@settings(max_examples=200, deadline=None)
def test_defining_identity(vals):
    v, _, g = vals
    lhs = float(np.dot(g.Hq, v.dq) + np.dot(g.Hp, v.dp))
    rhs = symplectic_form(v, hamiltonian_vector_field(g))
    assert abs(lhs - rhs) <= 1e-12 * (1.0 + abs(lhs))


@given(tangent_pairs())
@settings(max_examples=200, deadline=None)
def test_nondegeneracy_over_canonical_basis(vals):
    v1, _, _ = vals
    n = v1.n
    if float(np.max(np.abs(v1.as_array()))) < 1e-6:
        return
    found = False
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        for basis in (TangentToCotangent(e, np.zeros(n)), TangentToCotangent(np.zeros(n), e)):
            if symplectic_form(v1, basis) != 0.0:
                found = True
    assert found


@given(tangent_pairs(), finite, finite)
@settings(max_examples=100, deadline=None)
def test_bilinearity_in_first_slot(vals, a, b):
    v1, v2, _ = vals
    w = TangentToCotangent(a * v1.dq + b * v2.dq, a * v1.dp + b * v2.dp)
    probe = TangentToCotangent(np.ones(v1.n), -np.ones(v1.n))
    lhs = symplectic_form(w, probe)
    rhs = a * symplectic_form(v1, probe) + b * symplectic_form(v2, probe)
    assert abs(lhs - rhs) <= 1e-9 * (1.0 + abs(lhs) + abs(rhs))
