import dataclasses

import numpy as np
import pytest

from hamcheck import get_problem
from hamcheck.errors import AmbiguousRegionError, DomainError
from hamcheck.geometry import CotangentPoint
from hamcheck.problem import (
    RunningCost,
    SuperHamiltonianSpec,
    finite_controls,
    maximized_hamiltonian,
    pre_hamiltonian,
    reference_hamiltonian,
    super_hamiltonian,
)


@pytest.fixture(scope="module")
def lq1d():
    return get_problem("lq1d")


@pytest.fixture(scope="module")
def di():
    return get_problem("double_integrator_mintime")


def test_pre_hamiltonian_lq1d(lq1d):
    ell = CotangentPoint([0.5], [0.5])
    assert pre_hamiltonian(lq1d.prob, ell, [0.5]) == pytest.approx(0.125, abs=1e-15)


def test_pre_hamiltonian_abnormal_zero_covector(lq1d):
    prob0 = dataclasses.replace(lq1d.prob, p0=0)
    ell = CotangentPoint([0.3], [0.0])
    for u in ([0.0], [1.0], [-2.5]):
        assert pre_hamiltonian(prob0, ell, u) == 0.0


def test_pre_hamiltonian_double_integrator(di):
    ell = CotangentPoint([-1.0, 0.0], [1.0, 1.0])
    assert pre_hamiltonian(di.prob, ell, [1.0]) == pytest.approx(0.0, abs=1e-15)


def test_pre_hamiltonian_rejects_outside_controls(lq1d):
    with pytest.raises(DomainError):
        pre_hamiltonian(lq1d.prob, CotangentPoint([0.0], [0.0]), [11.0])


def test_pre_hamiltonian_domain_box():
    built = get_problem("lq1d")
    prob = dataclasses.replace(built.prob, domain=(np.array([-1.0]), np.array([1.0])))
    with pytest.raises(DomainError):
        pre_hamiltonian(prob, CotangentPoint([2.0], [0.0]), [0.0])


def test_maximized_interior_quadratic(lq1d):
    mx = maximized_hamiltonian(lq1d.prob, CotangentPoint([0.0], [0.5]))
    assert mx.value == pytest.approx(0.125, abs=1e-12)
    assert mx.argmax[0] == pytest.approx(0.5, abs=1e-10)
    assert mx.status == "ok"


def test_maximized_bang(di):
    mx = maximized_hamiltonian(di.prob, CotangentPoint([-1.0, 0.0], [1.0, 1.0]))
    assert mx.value == pytest.approx(0.0, abs=1e-12)
    assert mx.argmax[0] == pytest.approx(1.0, abs=1e-12)


def test_maximized_finite_tie_breaks_to_lowest_index(di):
    prob = dataclasses.replace(di.prob, U=finite_controls([[-1.0], [1.0]]))
    mx = maximized_hamiltonian(prob, CotangentPoint([0.0, 0.5], [1.0, 0.0]))
    assert mx.argmax[0] == -1.0  # both controls achieve the max; lowest index wins


def test_reference_hamiltonian_lq1d(lq1d):
    ell = CotangentPoint([0.5], [0.5])
    for t in (0.0, 0.37, 1.0):
        assert reference_hamiltonian(lq1d.prob, lq1d.uref, t, ell) == pytest.approx(
            0.125, abs=1e-15
        )


def test_reference_hamiltonian_abnormal_zero(lq1d):
    prob0 = dataclasses.replace(lq1d.prob, p0=0)
    assert reference_hamiltonian(prob0, lq1d.uref, 0.5, CotangentPoint([0.1], [0.0])) == 0.0


def test_reference_hamiltonian_on_bang_arc(di):
    # closed-form reference point at t = 0.5 on the first bang
    ell = CotangentPoint([-0.875, 0.5], [1.0, 0.5])
    assert reference_hamiltonian(di.prob, di.uref, 0.5, ell) == pytest.approx(0.0, abs=1e-15)


def test_reference_hamiltonian_outside_horizon(di):
    with pytest.raises(DomainError):
        reference_hamiltonian(di.prob, di.uref, 2.5, CotangentPoint([0.0, 0.0], [1.0, -1.0]))


def test_super_hamiltonian_maximized_lq1d(lq1d):
    value, fld, region = super_hamiltonian(lq1d.spec, lq1d.prob, 0.0, CotangentPoint([7.0], [2.0]))
    assert value == pytest.approx(2.0, abs=1e-12)
    assert fld.dq[0] == pytest.approx(2.0, abs=1e-10)
    assert fld.dp[0] == pytest.approx(0.0, abs=1e-10)
    assert region == ()


def test_super_hamiltonian_bang_region(di):
    value, fld, region = super_hamiltonian(
        di.spec, di.prob, 0.0, CotangentPoint([-1.0, 0.0], [1.0, 1.0])
    )
    assert value == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(fld.dq, [0.0, 1.0], atol=1e-12)
    assert np.allclose(fld.dp, [0.0, -1.0], atol=1e-12)
    assert region == (1,)


def test_super_hamiltonian_critical_point(lq1d):
    _, fld, _ = super_hamiltonian(lq1d.spec, lq1d.prob, 0.0, CotangentPoint([0.0], [0.0]))
    assert np.allclose(fld.as_array(), 0.0, atol=1e-12)


def test_super_hamiltonian_on_surface_needs_side(di):
    ell = CotangentPoint([0.0, 1.0], [1.0, 0.0])
    with pytest.raises(AmbiguousRegionError):
        super_hamiltonian(di.spec, di.prob, 1.0, ell)
    v_plus, f_plus, r_plus = super_hamiltonian(di.spec, di.prob, 1.0, ell, side=+1)
    v_minus, f_minus, r_minus = super_hamiltonian(di.spec, di.prob, 1.0, ell, side=-1)
    assert r_plus == (1,) and r_minus == (-1,)
    assert v_plus == pytest.approx(v_minus, abs=1e-12)  # |p2| = 0 either way
    assert f_plus.dq[1] == pytest.approx(1.0, abs=1e-12)
    assert f_minus.dq[1] == pytest.approx(-1.0, abs=1e-12)


def test_maximization_dominance_and_argmax_consistency(lq1d, di):
    rng = np.random.Generator(np.random.Philox(11))
    for built in (lq1d, di):
        prob = built.prob
        n = prob.n
        for _ in range(1000):
            q = rng.uniform(-1.5, 1.5, size=n)
            p = rng.uniform(-2.0, 2.0, size=n)
            ell = CotangentPoint(q, p)
            if prob.U.kind == "box":
                u = rng.uniform(prob.U.lower, prob.U.upper)
            else:
                u = prob.U.values[rng.integers(0, len(prob.U.values))]
            mx = maximized_hamiltonian(prob, ell)
            assert mx.value >= pre_hamiltonian(prob, ell, u) - 1e-10
            assert abs(pre_hamiltonian(prob, ell, mx.argmax) - mx.value) <= 1e-10


def test_super_hamiltonian_gradient_matches_differences(lq1d, di):
    rng = np.random.Generator(np.random.Philox(12))
    for built in (lq1d, di):
        prob = built.prob
        n = prob.n
        checked = 0
        while checked < 200:
            q = rng.uniform(-1.2, 1.2, size=n)
            p = rng.uniform(-1.5, 1.5, size=n)
            if built.spec.switching_surfaces and any(
                abs(s(q, p)) < 1e-2 for s in built.spec.switching_surfaces
            ):
                continue
            value, fld, _ = super_hamiltonian(built.spec, prob, 0.0, CotangentPoint(q, p))
            h = 1e-6
            grad_fd = np.zeros(2 * n)
            for j in range(2 * n):
                y = np.concatenate([q, p])
                yp, ym = y.copy(), y.copy()
                yp[j] += h
                ym[j] -= h
                vp, _, _ = super_hamiltonian(
                    built.spec, prob, 0.0, CotangentPoint(yp[:n], yp[n:])
                )
                vm, _, _ = super_hamiltonian(
                    built.spec, prob, 0.0, CotangentPoint(ym[:n], ym[n:])
                )
                grad_fd[j] = (vp - vm) / (2 * h)
            analytic = np.concatenate([-fld.dp, fld.dq])  # (Hq, Hp) back from the field
            denom = 1.0 + float(np.max(np.abs(analytic)))
            assert float(np.max(np.abs(grad_fd - analytic))) / denom <= 1e-6
            checked += 1


def test_abnormal_case_ignores_all_costs(lq1d):
    prob0 = dataclasses.replace(lq1d.prob, p0=0)
    bumped = dataclasses.replace(
        prob0,
        running_cost=RunningCost(
            value=lambda x, u: 17.0 + u[0] ** 4 + x[0] ** 2,
            grad_x=lambda x, u: np.array([2.0 * x[0]]),
            grad_u=lambda x, u: np.array([4.0 * u[0] ** 3]),
        ),
    )
    rng = np.random.Generator(np.random.Philox(13))
    for _ in range(100):
        ell = CotangentPoint(rng.uniform(-1, 1, 1), rng.uniform(-1, 1, 1))
        u = rng.uniform(-10, 10, 1)
        assert pre_hamiltonian(prob0, ell, u) == pre_hamiltonian(bumped, ell, u)
        assert maximized_hamiltonian(prob0, ell).value == pytest.approx(
            maximized_hamiltonian(bumped, ell).value, abs=1e-10
        )
