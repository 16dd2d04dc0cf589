import csv

import numpy as np
import pytest

from hamcheck import get_problem, integrate_extremal
from hamcheck.errors import (
    AmbiguousRegionError,
    InversionError,
    OutOfHullError,
    TangentialCrossingError,
)
from hamcheck.extremal import CostExtension
from hamcheck.flowsheet import (
    LagrangianChart,
    _integrate_column,
    check_invertibility,
    exactness_residual,
    flow_from_lambda,
    pullback_line_integral,
)
from hamcheck.geometry import symplectic_form_arrays
from hamcheck.problem import SuperHamiltonianSpec


def quadratic_chart(center, grad_at_center, k, radius):
    center = np.atleast_1d(np.asarray(center, float))
    grad_at_center = np.atleast_1d(np.asarray(grad_at_center, float))
    n = center.size
    return LagrangianChart(
        alpha=CostExtension(
            value=lambda x: float(grad_at_center @ (np.asarray(x) - center))
            + 0.5 * k * float(np.sum((np.asarray(x) - center) ** 2)),
            gradient=lambda x: grad_at_center + k * (np.asarray(x) - center),
            hessian=lambda x: k * np.eye(n),
        ),
        center=center,
        radius=radius,
    )


# -- closed forms -------------------------------------------------------------


def test_lq1d_sheet_matches_closed_form(lq1d_pack):
    _, _, sheet = lq1d_pack
    for (t, q0) in [(0.0, 0.5), (0.43, 0.37), (1.0, 0.62), (1.2, 0.51)]:
        st = sheet.state_at(t, [q0])
        assert st.q[0] == pytest.approx(q0 * (1 + t), abs=1e-10)
        assert st.p[0] == pytest.approx(q0, abs=1e-11)
        assert sheet.theta_at(t, [q0]) == pytest.approx(0.5 * q0**2 * (1 + t), abs=1e-10)
        assert sheet.jac_at(t, [q0])[0, 0] == pytest.approx(1 + t, abs=1e-9)


def test_zero_hamiltonian_freezes_sheet():
    b = get_problem("lq1d")
    spec = SuperHamiltonianSpec(
        kind="user", func=lambda t, q, p: (0.0, np.zeros(1), np.zeros(1))
    )
    chart = quadratic_chart([0.5], [0.5], 1.0, 0.2)
    sheet = flow_from_lambda(spec, b.prob, chart, horizon=1.0, time_points=9)
    for (t, q0) in [(0.0, 0.45), (0.7, 0.55), (1.0, 0.5)]:
        st = sheet.state_at(t, [q0])
        assert st.q[0] == pytest.approx(q0, abs=1e-12)
        assert st.p[0] == pytest.approx(0.5 + (q0 - 0.5), abs=1e-12)
        # theta stays frozen at alpha(q0)
        assert sheet.theta_at(t, [q0]) == pytest.approx(chart.alpha([q0]), abs=1e-12)


def test_conj_osc_sheet_matches_closed_form(conj_pre_pack):
    _, _, sheet = conj_pre_pack
    for (t, q0) in [(0.3, 0.2), (1.0, -0.31), (1.4, 0.05)]:
        st = sheet.state_at(t, [q0])
        assert st.q[0] == pytest.approx(q0 * np.cos(t), abs=1e-10)
        assert st.p[0] == pytest.approx(-q0 * np.sin(t), abs=1e-10)
        assert sheet.theta_at(t, [q0]) == pytest.approx(
            -0.5 * q0**2 * np.sin(t) * np.cos(t), abs=1e-10
        )
        assert sheet.jac_at(t, [q0])[0, 0] == pytest.approx(np.cos(t), abs=1e-9)


def test_conj_osc_action_at_quarter_period():
    # wide chart so the parameter value 1 is inside the mesh
    b = get_problem("conj_osc", {"T": 1.0})
    chart = quadratic_chart([0.0], [0.0], 0.0, 1.2)
    sheet = flow_from_lambda(b.spec, b.prob, chart, horizon=1.0, time_points=17)
    assert sheet.theta_at(np.pi / 4, [1.0]) == pytest.approx(-0.25, abs=1e-9)


def test_theta_initialization_is_alpha(lq1d_pack, di_pack):
    for pack in (lq1d_pack, di_pack):
        _, _, sheet = pack
        rng = np.random.Generator(np.random.Philox(5))
        lo = np.array([a[0] for a in sheet.param_axes])
        hi = np.array([a[-1] for a in sheet.param_axes])
        for _ in range(20):
            q0 = rng.uniform(lo, hi)
            assert sheet.theta_at(0.0, q0) == pytest.approx(sheet.chart.alpha(q0), abs=1e-11)


def test_theta_time_slope_matches_integrand(lq1d_pack, di_pack):
    for pack in (lq1d_pack, di_pack):
        _, _, sheet = pack
        rng = np.random.Generator(np.random.Philox(6))
        lo = np.array([a[0] for a in sheet.param_axes])
        hi = np.array([a[-1] for a in sheet.param_axes])
        h = 1e-5
        checked = 0
        while checked < 25:
            t = rng.uniform(2 * h, sheet.horizon - 2 * h)
            q0 = rng.uniform(lo, hi)
            idx = int(np.argmin(np.linalg.norm(sheet.params - q0, axis=1)))
            if any(abs(t - ev) < 0.05 for ev in sheet.events[idx]):
                continue
            slope_fd = (sheet.theta_at(t + h, q0) - sheet.theta_at(t - h, q0)) / (2 * h)
            value, fld = sheet.hamiltonian_at(t, q0)
            st = sheet.state_at(t, q0)
            integrand = float(np.dot(st.p, fld[: sheet.n])) - value
            assert abs(slope_fd - integrand) <= 1e-6 * (1 + abs(integrand))
            checked += 1


# -- invertibility ------------------------------------------------------------


def test_invertibility_lq1d(lq1d_pack):
    _, _, sheet = lq1d_pack
    v = check_invertibility(sheet, delta_min=0.1)
    assert v.passed and v.clarke_ok
    assert v.min_sv == pytest.approx(1.0, abs=1e-9)
    assert v.fold_time is None


def test_invertibility_conj_osc_pre_and_post_fold(conj_pre_pack, conj_post_pack):
    _, _, pre = conj_pre_pack
    v_pre = check_invertibility(pre, delta_min=1e-3 * 0.4)
    assert v_pre.passed
    assert v_pre.min_sv == pytest.approx(np.cos(np.pi / 2 - 0.1), abs=1e-8)

    _, _, post = conj_post_pack
    v_post = check_invertibility(post, delta_min=1e-3 * 0.4)
    assert not v_post.passed
    assert v_post.fold_time == pytest.approx(np.pi / 2, abs=2e-3)


def test_invertibility_double_integrator_with_crossings(di_pack):
    _, _, sheet = di_pack
    v = check_invertibility(sheet, delta_min=1e-3 * 0.15)
    assert v.passed
    assert v.clarke_ok
    assert all(len(evs) == 1 for evs in sheet.events)  # one switch per column


def test_invert_projection_examples(lq1d_pack, conj_pre_pack):
    _, _, sheet = lq1d_pack
    assert sheet.invert_projection(1.0, [1.0])[0] == pytest.approx(0.5, abs=1e-10)
    assert sheet.invert_projection(0.0, [0.61])[0] == pytest.approx(0.61, abs=1e-12)
    _, _, co = conj_pre_pack
    assert co.invert_projection(np.pi / 4, [0.2])[0] == pytest.approx(
        0.2 / np.cos(np.pi / 4), abs=1e-10
    )


def test_round_trip_inversion(lq1d_pack, di_pack):
    for pack in (lq1d_pack, di_pack):
        _, _, sheet = pack
        rng = np.random.Generator(np.random.Philox(7))
        lo = np.array([a[0] for a in sheet.param_axes])
        hi = np.array([a[-1] for a in sheet.param_axes])
        for _ in range(20):
            # keep clear of the hull boundary so the inverse stays interior
            q0 = rng.uniform(lo + 0.2 * (hi - lo), hi - 0.2 * (hi - lo))
            t = rng.uniform(0.0, sheet.horizon)
            x = sheet.state_at(t, q0).q
            back = sheet.invert_projection(t, x)
            assert float(np.max(np.abs(back - q0))) <= 1e-9


def test_out_of_hull_queries_raise(lq1d_pack):
    _, _, sheet = lq1d_pack
    with pytest.raises(OutOfHullError):
        sheet.theta_at(0.5, [0.9])
    with pytest.raises(OutOfHullError):
        sheet.theta_at(2.0, [0.5])
    with pytest.raises((InversionError, OutOfHullError)):
        sheet.invert_projection(1.0, [5.0])


# -- exactness ----------------------------------------------------------------


def test_exactness_degenerate_loop(lq1d_pack):
    _, _, sheet = lq1d_pack
    assert exactness_residual(sheet, [(0.5, [0.5]), (0.5, [0.5])]) == 0.0


def test_exactness_rectangle_lq1d(lq1d_pack):
    _, _, sheet = lq1d_pack
    loop = [(0.0, [0.4]), (1.0, [0.4]), (1.0, [0.6]), (0.0, [0.6]), (0.0, [0.4])]
    assert exactness_residual(sheet, loop) <= 1e-8


def test_exactness_fixed_time_loop_lq1d(lq1d_pack):
    _, _, sheet = lq1d_pack
    loop = [(0.7, [0.4]), (0.7, [0.65]), (0.7, [0.4])]
    assert exactness_residual(sheet, loop) <= 1e-8


def test_fixed_time_segment_equals_action_difference(lq1d_pack, di_pack):
    # open-segment form of the fixed-time exactness statement: the line
    # integral of the pulled-back canonical form equals the theta difference
    rng = np.random.Generator(np.random.Philox(8))
    for pack in (lq1d_pack, di_pack):
        _, _, sheet = pack
        lo = np.array([a[0] for a in sheet.param_axes])
        hi = np.array([a[-1] for a in sheet.param_axes])
        for _ in range(5):
            t = rng.uniform(0.0, sheet.horizon)
            a = rng.uniform(lo, hi)
            b = rng.uniform(lo, hi)
            line = pullback_line_integral(sheet, [(t, a), (t, b)])
            dtheta = sheet.theta_at(t, b) - sheet.theta_at(t, a)
            assert abs(line - dtheta) <= 1e-8 * (1 + abs(dtheta))


def test_exactness_rectangle_double_integrator(di_pack):
    # rectangles crossing the switching locus still have zero circulation
    _, _, sheet = di_pack
    loop = [
        (0.5, [-1.05, -0.05]),
        (1.6, [-1.05, -0.05]),
        (1.6, [-0.95, 0.05]),
        (0.5, [-0.95, 0.05]),
        (0.5, [-1.05, -0.05]),
    ]
    assert exactness_residual(sheet, loop) <= 1e-7


# -- linearization ------------------------------------------------------------


def test_symplecticity_on_smooth_arcs(lq1d_pack, conj_pre_pack, di_pack):
    rng = np.random.Generator(np.random.Philox(9))
    for pack in (lq1d_pack, conj_pre_pack, di_pack):
        _, _, sheet = pack
        n = sheet.n
        for _ in range(40):
            c = int(rng.integers(0, len(sheet.columns)))
            col = sheet.columns[c]
            events = [e.time for e in col.events]
            t = float(rng.uniform(0.0, sheet.horizon))
            if any(abs(t - ev) < 1e-3 for ev in events):
                continue
            d1 = rng.normal(size=n)
            d2 = rng.normal(size=n)
            y = col.state(t)
            dell = y[2 * n : 2 * n + 2 * n * n].reshape(2 * n, n)
            y0 = col.state(0.0)
            dell0 = y0[2 * n : 2 * n + 2 * n * n].reshape(2 * n, n)
            now = symplectic_form_arrays(dell @ d1, dell @ d2)
            start = symplectic_form_arrays(dell0 @ d1, dell0 @ d2)
            assert abs(now - start) <= 1e-7 * (1 + abs(start))


def test_saltation_matches_flow_differences(di_pack):
    built, _, sheet = di_pack
    chart = sheet.chart
    t_test = 1.6  # past the crossing for nearby columns
    q0c = np.array([-1.0, 0.0])
    base = _integrate_column(built.spec, built.prob, chart, q0c, t_test, 1e-11, 1e-11)
    n = 2
    stored = base.state(t_test)[2 * n : 2 * n + 2 * n * n].reshape(2 * n, n)
    h = 1e-6
    fd = np.zeros((4, 2))
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        yp = _integrate_column(built.spec, built.prob, chart, q0c + e, t_test, 1e-11, 1e-11)
        ym = _integrate_column(built.spec, built.prob, chart, q0c - e, t_test, 1e-11, 1e-11)
        fd[:, j] = (yp.state(t_test)[:4] - ym.state(t_test)[:4]) / (2 * h)
    assert float(np.max(np.abs(stored - fd))) <= 1e-7


def test_reference_column_reproduces_extremal(lq1d_pack, conj_pre_pack, di_pack):
    for pack in (lq1d_pack, conj_pre_pack, di_pack):
        built, ext, sheet = pack
        col = sheet.columns[sheet.center_index]
        for t in np.linspace(0.0, ext.horizon, 17):
            lam = ext.lambda_at(t)
            diff = col.state(t)[: 2 * sheet.n] - lam.as_array()
            assert float(np.max(np.abs(diff))) <= 1e-8


def test_gradient_identity_through_inverse_projection(lq1d_pack, conj_pre_pack):
    # x-differences of the action over the inverted base point reproduce the
    # covector over x
    rng = np.random.Generator(np.random.Philox(10))
    for pack in (lq1d_pack, conj_pre_pack):
        _, _, sheet = pack
        lo = np.array([a[0] for a in sheet.param_axes])
        hi = np.array([a[-1] for a in sheet.param_axes])
        checked = 0
        while checked < 100:
            t = rng.uniform(0.05, sheet.horizon)
            q0 = rng.uniform(lo + 0.25 * (hi - lo), hi - 0.25 * (hi - lo))
            x = sheet.state_at(t, q0).q
            h = 1e-6 * (1 + abs(x[0]))
            try:
                tp = sheet.theta_at(t, sheet.invert_projection(t, x + h))
                tm = sheet.theta_at(t, sheet.invert_projection(t, x - h))
            except (InversionError, OutOfHullError):
                continue
            grad_fd = (tp - tm) / (2 * h)
            p = sheet.state_at(t, q0).p
            assert abs(grad_fd - p[0]) <= 1e-5 * (1 + abs(p[0]))
            checked += 1


# -- error paths --------------------------------------------------------------


def test_column_start_on_surface_is_ambiguous():
    b = get_problem("lq1d")
    spec = SuperHamiltonianSpec(
        kind="user",
        func=lambda t, q, p: (0.5 * p[0] ** 2, np.zeros(1), np.array([p[0]])),
        switching_surfaces=(lambda q, p: q[0] - 0.5,),
    )
    chart = quadratic_chart([0.5], [0.5], 1.0, 0.2)
    with pytest.raises(AmbiguousRegionError):
        flow_from_lambda(spec, b.prob, chart, horizon=0.5, time_points=5, params_per_axis=5)


def test_tangential_crossing_raises():
    # cubic surface: the sign changes but the gradient vanishes at the crossing
    b = get_problem("lq1d")
    spec = SuperHamiltonianSpec(
        kind="user",
        func=lambda t, q, p: (0.5 * p[0] ** 2, np.zeros(1), np.array([p[0]])),
        switching_surfaces=(lambda q, p: (q[0] - 0.55) ** 3,),
    )
    chart = quadratic_chart([0.4], [0.4], 1.0, 0.05)
    with pytest.raises(TangentialCrossingError):
        flow_from_lambda(spec, b.prob, chart, horizon=1.0, time_points=5, params_per_axis=5)


def test_csv_export(tmp_path, lq1d_pack):
    _, _, sheet = lq1d_pack
    path = tmp_path / "sheet.csv"
    sheet.export_csv(str(path))
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "q0_0", "q_0", "p_0", "theta", "minsv"]
    assert len(rows) == 1 + sheet.times.size * sheet.params.shape[0]
    t, q0, q, p, theta, minsv = map(float, rows[1])
    assert t == 0.0 and q == pytest.approx(q0, abs=1e-12)
    assert minsv == pytest.approx(1.0, abs=1e-12)
