"""Flow sheet: the Hamiltonian flow emanating from a horizontal Lagrangian graph.

For every node q0 of a tensor mesh in the chart ball, one stiff little ODE
system is integrated jointly:

* the flow itself,  l' = (Hp, -Hq) at l,
* its linearization with respect to q0 (a 2n x n matrix), with the standard
  saltation jump applied whenever the trajectory crosses a declared
  switching surface transversally,
* the accumulated action theta' = <p, Hp> - H, seeded with alpha(q0).

Between mesh nodes everything is interpolated: dense output in time,
piecewise-cubic splines across the parameter mesh.  On top of the sheet sit
the base-projection inversion (Newton), the fold/invertibility verdict with
a Clarke-style convex-combination test at crossing times, and closed-loop
circulation of the pulled-back action form (which the theory predicts to be
exactly zero).
"""

from __future__ import annotations

import csv
import os
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import solve_ivp

from .errors import (
    AmbiguousRegionError,
    DivergenceError,
    DomainExitError,
    InversionError,
    OutOfHullError,
    TangentialCrossingError,
)
from .extremal import CostExtension
from .geometry import CotangentPoint
from .problem import (
    OCProblem,
    SuperHamiltonianSpec,
    branch_field,
    region_signs,
    surface_gradient,
)

BLOWUP_LIMIT = 1e9
TANGENTIAL_TOL = 1e-8
_EPS_CBRT = float(np.finfo(float).eps) ** (1.0 / 3.0)


@dataclass(frozen=True)
class LagrangianChart:
    """Parametrization q0 -> (q0, d alpha(q0)) of the initial Lagrangian graph."""

    alpha: CostExtension
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.atleast_1d(np.asarray(self.center, float)))
        if self.radius <= 0:
            raise OutOfHullError("chart radius must be positive")

    @property
    def n(self) -> int:
        return self.center.size

    def lift(self, q0) -> np.ndarray:
        q0 = np.atleast_1d(np.asarray(q0, float))
        return np.concatenate([q0, self.alpha.grad(q0)])

    def contains(self, q0, tol: float = 1e-9) -> bool:
        q0 = np.atleast_1d(np.asarray(q0, float))
        return bool(np.all(np.abs(q0 - self.center) <= self.radius + tol))

    def validate(self, p0_hat: np.ndarray, tol: float = 1e-8) -> None:
        err = float(np.max(np.abs(self.alpha.grad(self.center) - p0_hat)))
        if err > tol:
            raise OutOfHullError(
                f"chart gradient at the center misses the reference covector by {err:.3g}"
            )


@dataclass(frozen=True)
class CrossingEvent:
    """A transversal switching-surface crossing along one flow column."""

    time: float
    surface: int
    sign_from: int
    sign_to: int
    jac_before: np.ndarray
    jac_after: np.ndarray


@dataclass
class _Column:
    """Dense solution of one q0 column, split at crossing events."""

    q0: np.ndarray
    segments: List[Tuple[float, float, object, tuple]]  # (t0, t1, dense, region)
    events: List[CrossingEvent]

    def state(self, t: float) -> np.ndarray:
        for (t0, t1, sol, _r) in self.segments:
            if t <= t1 + 1e-14:
                return sol(min(max(t, t0), t1))
        return self.segments[-1][2](self.segments[-1][1])

    def region_at(self, t: float) -> tuple:
        for (t0, t1, _sol, r) in self.segments:
            if t <= t1 + 1e-14:
                return r
        return self.segments[-1][3]


def _field_fd_jacobian(spec, prob, t, y2n, region):
    """Directional finite differences of the branch field in stacked (q, p)."""
    m = y2n.size
    D = np.zeros((m, m))
    for j in range(m):
        h = _EPS_CBRT * (1.0 + abs(y2n[j]))
        yp = y2n.copy()
        ym = y2n.copy()
        yp[j] += h
        ym[j] -= h
        _, fp = branch_field(spec, prob, t, yp, region)
        _, fm = branch_field(spec, prob, t, ym, region)
        D[:, j] = (fp - fm) / (2 * h)
    return D


def _integrate_column(spec, prob, chart, q0, t_end, rtol, atol):
    n = chart.n
    dim = 2 * n
    ell0 = chart.lift(q0)
    signs0 = region_signs(spec, ell0[:n], ell0[n:])
    if np.any(signs0 == 0):
        raise AmbiguousRegionError(f"column start {q0} lies on a switching surface")
    region = tuple(int(s) for s in signs0)

    delta0 = np.vstack([np.eye(n), chart.alpha.hess(q0)])
    y = np.concatenate([ell0, delta0.ravel(), [chart.alpha(q0)]])

    surfaces = spec.switching_surfaces
    directions = [0.0] * len(surfaces)
    segments: List[Tuple[float, float, object, tuple]] = []
    events: List[CrossingEvent] = []
    t0 = 0.0

    while True:
        reg = region

        def rhs(t, yy, reg=reg):
            l = yy[:dim]
            value, fld = branch_field(spec, prob, t, l, reg if surfaces else None)
            D = _field_fd_jacobian(spec, prob, t, l, reg if surfaces else None)
            delta = yy[dim : dim + dim * n].reshape(dim, n)
            dtheta = float(np.dot(l[n:], fld[:n])) - value
            return np.concatenate([fld, (D @ delta).ravel(), [dtheta]])

        event_fns = []
        for j, s in enumerate(surfaces):
            def ev(t, yy, s=s):
                return float(s(yy[:n], yy[n:dim]))

            ev.terminal = True
            ev.direction = directions[j]
            event_fns.append(ev)

        def blowup(t, yy):
            return BLOWUP_LIMIT - float(np.max(np.abs(yy[:dim])))

        blowup.terminal = True
        event_fns.append(blowup)

        if prob.domain is not None:
            lo, hi = (np.asarray(b, float) for b in prob.domain)

            def exit_domain(t, yy):
                return float(np.min(np.minimum(yy[:n] - lo, hi - yy[:n])))

            exit_domain.terminal = True
            event_fns.append(exit_domain)

        sol = solve_ivp(
            rhs,
            (t0, t_end),
            y,
            method="RK45",
            rtol=rtol,
            atol=atol,
            dense_output=True,
            events=event_fns,
        )
        if not sol.success and sol.status != 1:
            raise DivergenceError(f"flow integration failed at q0={q0}: {sol.message}")
        if sol.status != 1:
            segments.append((t0, t_end, sol.sol, region))
            break

        n_surf = len(surfaces)
        t_candidates = [
            (te[0], j) for j, te in enumerate(sol.t_events[:n_surf]) if len(te)
        ]
        if len(sol.t_events) > n_surf and len(sol.t_events[n_surf]):
            raise DivergenceError(
                f"flow blow-up at q0={q0}, t={sol.t_events[n_surf][0]:.6g}"
            )
        if len(sol.t_events) > n_surf + 1 and len(sol.t_events[n_surf + 1]):
            t_ex = float(sol.t_events[n_surf + 1][0])
            raise DomainExitError(f"flow left the problem domain at t={t_ex:.6g}", t_ex)

        t_ev, j_star = min(t_candidates)
        y_ev = sol.sol(t_ev)
        l_ev = y_ev[:dim]

        _, g_minus = branch_field(spec, prob, t_ev, l_ev, region)
        new_region = list(region)
        new_region[j_star] = -region[j_star]
        new_region = tuple(new_region)
        _, g_plus = branch_field(spec, prob, t_ev, l_ev, new_region)

        grad_s = surface_gradient(surfaces[j_star], l_ev[:n], l_ev[n:])
        denom = float(np.dot(grad_s, g_minus))
        if abs(denom) < TANGENTIAL_TOL * (1.0 + np.linalg.norm(g_minus)):
            raise TangentialCrossingError(
                f"tangential switching-surface crossing at t={t_ev:.6g}, q0={q0}"
            )

        delta = y_ev[dim : dim + dim * n].reshape(dim, n)
        jac_before = delta[:n].copy()
        dtau = -(grad_s @ delta) / denom  # crossing-time sensitivity, one per column
        delta_new = delta + np.outer(g_minus - g_plus, dtau)
        y_new = y_ev.copy()
        y_new[dim : dim + dim * n] = delta_new.ravel()

        events.append(
            CrossingEvent(
                time=float(t_ev),
                surface=j_star,
                sign_from=region[j_star],
                sign_to=new_region[j_star],
                jac_before=jac_before,
                jac_after=delta_new[:n].copy(),
            )
        )
        segments.append((t0, float(t_ev), sol.sol, region))
        region = new_region
        directions[j_star] = -float(new_region[j_star])
        t0 = float(t_ev)
        y = y_new
        if t_end - t0 < 1e-12:
            break

    return _Column(q0=np.atleast_1d(np.asarray(q0, float)), segments=segments, events=events)


class _TensorSpline:
    """Tensor-product not-a-knot cubic spline, vector-valued, exact at nodes.

    Interpolation along each axis commutes for tensor grids, so the
    coefficient tensor is built by sweeping one axis at a time; evaluation
    contracts one axis per spline basis.  Extrapolates polynomially just
    outside the mesh (Newton iterates may wander slightly before landing).
    """

    def __init__(self, axes, values, k: int = 3):
        from scipy.interpolate import make_interp_spline

        coeffs = np.asarray(values, float)
        self.k = k
        self.knots = []
        for ax, x in enumerate(axes):
            spl = make_interp_spline(x, np.moveaxis(coeffs, ax, 0), k=k, axis=0)
            self.knots.append(spl.t)
            coeffs = np.moveaxis(spl.c, 0, ax)
        self.coeffs = coeffs

    def __call__(self, q) -> np.ndarray:
        from scipy.interpolate import BSpline

        q = np.atleast_2d(np.asarray(q, float))
        out = []
        for row in q:
            c = self.coeffs
            for t, x in zip(self.knots, row):
                c = BSpline(t, c, self.k, extrapolate=True)(x)
            out.append(c)
        return np.stack(out)


@dataclass
class InvertibilityVerdict:
    """Outcome of the base-projection invertibility scan."""

    passed: bool
    min_sv: float
    fold_time: Optional[float]
    clarke_ok: bool
    delta_min: float


class FlowSheet:
    """The flow, its linearization and the accumulated action over a
    (time x parameter) grid, with dense queries in between."""

    def __init__(self, spec, prob, chart, times, columns, param_axes):
        self.spec: SuperHamiltonianSpec = spec
        self.prob: OCProblem = prob
        self.chart: LagrangianChart = chart
        self.times = np.asarray(times, float)
        self.columns: List[_Column] = columns
        self.param_axes = [np.asarray(a, float) for a in param_axes]
        self.grid_shape = tuple(len(a) for a in self.param_axes)
        mesh = np.meshgrid(*self.param_axes, indexing="ij")
        self.params = np.stack([g.ravel() for g in mesh], axis=1)
        self._slices: OrderedDict = OrderedDict()
        self._slice_cap = 256

        n = self.n
        nt, nq = self.times.size, self.params.shape[0]
        self.ell = np.zeros((nt, nq, 2 * n))
        self.jac = np.zeros((nt, nq, n, n))
        self.dell = np.zeros((nt, nq, 2 * n, n))
        self.theta = np.zeros((nt, nq))
        for c, col in enumerate(self.columns):
            for i, t in enumerate(self.times):
                y = col.state(t)
                self.ell[i, c] = y[: 2 * n]
                d = y[2 * n : 2 * n + 2 * n * n].reshape(2 * n, n)
                self.dell[i, c] = d
                self.jac[i, c] = d[:n]
                self.theta[i, c] = y[-1]

        center = self.chart.center
        diffs = np.max(np.abs(self.params - center), axis=1)
        self.center_index = int(np.argmin(diffs))

    # -- basic geometry -----------------------------------------------------

    @property
    def n(self) -> int:
        return self.chart.n

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def events(self) -> List[List[float]]:
        return [[e.time for e in col.events] for col in self.columns]

    def in_hull(self, t: float, q0, tol: float = 1e-9) -> bool:
        q0 = np.atleast_1d(np.asarray(q0, float))
        if not (-1e-12 <= t <= self.horizon + 1e-12):
            return False
        return all(
            a[0] - tol <= v <= a[-1] + tol for a, v in zip(self.param_axes, q0)
        )

    # -- dense interpolation ------------------------------------------------

    def _slice(self, t: float):
        key = float(t)
        if key in self._slices:
            self._slices.move_to_end(key)
            return self._slices[key]
        vals = np.stack([col.state(t) for col in self.columns])
        vals = vals.reshape(self.grid_shape + (vals.shape[1],))
        interp = _TensorSpline(self.param_axes, vals)
        self._slices[key] = interp
        if len(self._slices) > self._slice_cap:
            self._slices.popitem(last=False)
        return interp

    def _state_interp(self, t: float, q0) -> np.ndarray:
        if not (-1e-12 <= t <= self.horizon + 1e-12):
            raise OutOfHullError(f"time {t} outside the sheet horizon [0, {self.horizon}]")
        q0 = np.atleast_1d(np.asarray(q0, float))
        if not self.in_hull(t, q0, tol=1e-9):
            raise OutOfHullError(f"parameter {q0} outside the sheet hull")
        return self._slice(t)(q0[None, :])[0]

    def state_at(self, t: float, q0) -> CotangentPoint:
        """Flow point over parameter q0 at time t."""
        y = self._state_interp(t, q0)
        n = self.n
        return CotangentPoint(y[:n], y[n : 2 * n])

    def linearization_at(self, t: float, q0) -> np.ndarray:
        """Full 2n x n derivative of the flow with respect to q0."""
        y = self._state_interp(t, q0)
        n = self.n
        return y[2 * n : 2 * n + 2 * n * n].reshape(2 * n, n)

    def jac_at(self, t: float, q0) -> np.ndarray:
        """Base-projection block of the linearization (n x n)."""
        return self.linearization_at(t, q0)[: self.n]

    def theta_at(self, t: float, q0) -> float:
        """Accumulated action over parameter q0 at time t."""
        return float(self._state_interp(t, q0)[-1])

    def region_near(self, t: float, q0) -> tuple:
        """Smooth-piece id of the nearest column at time t."""
        q0 = np.atleast_1d(np.asarray(q0, float))
        idx = int(np.argmin(np.linalg.norm(self.params - q0, axis=1)))
        return self.columns[idx].region_at(t)

    def hamiltonian_at(self, t: float, q0):
        """(value, field) of the driving Hamiltonian at the flow point."""
        y = self._state_interp(t, q0)
        region = self.region_near(t, q0) if self.spec.switching_surfaces else None
        return branch_field(self.spec, self.prob, t, y[: 2 * self.n], region)

    # -- inversion ----------------------------------------------------------

    def invert_projection(self, t: float, x, max_iter: int = 50, tol: float = 1e-10):
        """Newton inversion of q0 -> pi H_t(q0) at the target state x."""
        x = np.atleast_1d(np.asarray(x, float))
        n = self.n
        slice_t = self._slice(t)
        if not (-1e-12 <= t <= self.horizon + 1e-12):
            raise OutOfHullError(f"time {t} outside the sheet horizon")
        nodes = np.stack([col.state(t)[:n] for col in self.columns])
        q0 = self.params[int(np.argmin(np.linalg.norm(nodes - x, axis=1)))].copy()
        for _ in range(max_iter):
            y = slice_t(q0[None, :])[0]
            resid = y[:n] - x
            if float(np.linalg.norm(resid)) <= tol:
                if not self.in_hull(t, q0, tol=1e-7 * (1 + self.chart.radius)):
                    raise InversionError(
                        f"inverse of {x} at t={t} lies outside the sheet hull"
                    )
                return q0
            jac = y[2 * n : 2 * n + 2 * n * n].reshape(2 * n, n)[:n]
            try:
                step = np.linalg.solve(jac, -resid)
            except np.linalg.LinAlgError as exc:
                raise InversionError(f"singular projection Jacobian at t={t}") from exc
            q0 = q0 + step
            if not np.all(np.isfinite(q0)):
                raise InversionError(f"Newton diverged inverting x={x} at t={t}")
        raise InversionError(
            f"no convergence inverting x={x} at t={t} within {max_iter} iterations"
        )

    # -- CSV export ---------------------------------------------------------

    def export_csv(self, path: str) -> None:
        n = self.n
        header = (
            ["t"]
            + [f"q0_{i}" for i in range(n)]
            + [f"q_{i}" for i in range(n)]
            + [f"p_{i}" for i in range(n)]
            + ["theta", "minsv"]
        )
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for i, t in enumerate(self.times):
                for c in range(self.params.shape[0]):
                    sv = float(np.linalg.svd(self.jac[i, c], compute_uv=False)[-1])
                    writer.writerow(
                        [f"{t:.12g}"]
                        + [f"{v:.12g}" for v in self.params[c]]
                        + [f"{v:.12g}" for v in self.ell[i, c, :n]]
                        + [f"{v:.12g}" for v in self.ell[i, c, n:]]
                        + [f"{self.theta[i, c]:.12g}", f"{sv:.12g}"]
                    )


def flow_from_lambda(
    spec: SuperHamiltonianSpec,
    prob: OCProblem,
    chart: LagrangianChart,
    horizon: float,
    time_points: int = 49,
    params_per_axis: int = 9,
    rtol: float = 1e-10,
    atol: float = 1e-10,
    workers: Optional[int] = None,
) -> FlowSheet:
    """Integrate the sheet over [0, horizon] x (chart ball tensor mesh)."""
    n = chart.n
    axes = [
        chart.center[i] + np.linspace(-chart.radius, chart.radius, params_per_axis)
        for i in range(n)
    ]
    mesh = np.meshgrid(*axes, indexing="ij")
    params = np.stack([g.ravel() for g in mesh], axis=1)

    if workers is None:
        workers = int(os.environ.get("HAMCHECK_THREADS", "1"))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            columns = list(
                pool.map(
                    lambda q0: _integrate_column(spec, prob, chart, q0, horizon, rtol, atol),
                    params,
                )
            )
    else:
        columns = [
            _integrate_column(spec, prob, chart, q0, horizon, rtol, atol) for q0 in params
        ]

    times = np.linspace(0.0, horizon, time_points)
    return FlowSheet(spec, prob, chart, times, columns, axes)


# -- invertibility ----------------------------------------------------------


def _min_sv(mat: np.ndarray) -> float:
    return float(np.linalg.svd(mat, compute_uv=False)[-1])


def _col_jac(col: _Column, n: int, t: float) -> np.ndarray:
    y = col.state(t)
    return y[2 * n : 2 * n + 2 * n * n].reshape(2 * n, n)[:n]


def _bisect_scalar(fun, lo, hi, iters=80):
    flo = fun(lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = fun(mid)
        if (flo <= 0) == (fm <= 0):
            lo, flo = mid, fm
        else:
            hi = mid
        if hi - lo < 1e-12:
            break
    return 0.5 * (lo + hi)


def check_invertibility(sheet: FlowSheet, delta_min: float, refine: int = 4) -> InvertibilityVerdict:
    """Scan the sheet for loss of base-projection invertibility.

    The smallest singular value of the projection Jacobian is sampled on a
    refined time grid per column; a sign change of its determinant or a dip
    below ``delta_min`` is bisected to the earliest failure time.  At each
    crossing event all convex combinations of the one-sided Jacobians
    (eleven weights) must stay above ``delta_min``; this is the sampled
    surrogate for invertibility of the nonsmooth projection.
    """
    n = sheet.n
    t_fine = np.linspace(0.0, sheet.horizon, refine * (sheet.times.size - 1) + 1)
    min_sv = np.inf
    fold_time: Optional[float] = None

    for col in sheet.columns:
        svs = np.empty(t_fine.size)
        dets = np.empty(t_fine.size)
        for i, t in enumerate(t_fine):
            J = _col_jac(col, n, t)
            svs[i] = _min_sv(J)
            dets[i] = np.linalg.det(J)
        min_sv = min(min_sv, float(np.min(svs)))
        for i in range(t_fine.size - 1):
            t0, t1 = t_fine[i], t_fine[i + 1]
            crossed = svs[i] >= delta_min > svs[i + 1]
            flipped = np.sign(dets[i]) != np.sign(dets[i + 1])
            if not (crossed or flipped or svs[i] < delta_min):
                continue
            if svs[i] < delta_min:
                cand = float(t0)
            else:
                hi = t1
                if flipped and not crossed:
                    hi = _bisect_scalar(lambda t: np.linalg.det(_col_jac(col, n, t)), t0, t1)
                    if _min_sv(_col_jac(col, n, hi)) >= delta_min:
                        continue
                cand = float(
                    _bisect_scalar(lambda t: _min_sv(_col_jac(col, n, t)) - delta_min, t0, hi)
                )
                min_sv = min(min_sv, _min_sv(_col_jac(col, n, hi)))
            if fold_time is None or cand < fold_time:
                fold_time = cand
            break

    clarke_ok = True
    weights = np.linspace(0.0, 1.0, 11)
    for col in sheet.columns:
        for ev in col.events:
            for mu in weights:
                J = mu * ev.jac_before + (1.0 - mu) * ev.jac_after
                if _min_sv(J) < delta_min:
                    clarke_ok = False
    passed = fold_time is None and clarke_ok and min_sv >= delta_min
    return InvertibilityVerdict(
        passed=passed,
        min_sv=float(min_sv),
        fold_time=fold_time,
        clarke_ok=clarke_ok,
        delta_min=float(delta_min),
    )


# -- circulation of the pulled-back action form ------------------------------

_GAUSS_NODES, _GAUSS_WEIGHTS = np.polynomial.legendre.leggauss(16)


def _segment_breaks(sheet: FlowSheet, a, b, samples: int = 65):
    """Parameters in (0,1) where a switching surface changes sign along a->b."""
    if not sheet.spec.switching_surfaces:
        return []
    ta, q0a = a
    tb, q0b = b
    n = sheet.n

    def signs(s):
        t = ta + s * (tb - ta)
        q0 = q0a + s * (q0b - q0a)
        y = sheet._state_interp(t, q0)
        return np.array(
            [np.sign(srf(y[:n], y[n : 2 * n])) for srf in sheet.spec.switching_surfaces]
        )

    ss = np.linspace(0.0, 1.0, samples)
    sgn = np.stack([signs(s) for s in ss])
    breaks = []
    for j in range(sgn.shape[1]):
        for i in range(samples - 1):
            if sgn[i, j] != sgn[i + 1, j]:
                t_srf = sheet.spec.switching_surfaces[j]

                def f(s, t_srf=t_srf):
                    t = ta + s * (tb - ta)
                    q0 = q0a + s * (q0b - q0a)
                    y = sheet._state_interp(t, q0)
                    return float(t_srf(y[:n], y[n : 2 * n]))

                breaks.append(_bisect_scalar(f, ss[i], ss[i + 1]))
    return sorted(breaks)


def pullback_line_integral(sheet: FlowSheet, vertices: Sequence) -> float:
    """Line integral of the pulled-back form <p, d(pi H)> - H dt along a polyline.

    Vertices are (t, q0) pairs in the sheet hull.  Each straight segment is
    split at switching-surface crossings and integrated with 16-point Gauss
    quadrature of the pullback integrand.
    """
    n = sheet.n
    total = 0.0
    verts = [(float(t), np.atleast_1d(np.asarray(q0, float))) for (t, q0) in vertices]
    for (a, b) in zip(verts[:-1], verts[1:]):
        ta, q0a = a
        tb, q0b = b
        if ta == tb and np.array_equal(q0a, q0b):
            continue
        dt = tb - ta
        dq0 = q0b - q0a
        pieces = [0.0] + _segment_breaks(sheet, a, b) + [1.0]
        for s0, s1 in zip(pieces[:-1], pieces[1:]):
            if s1 - s0 < 1e-13:
                continue
            mid = 0.5 * (s0 + s1)
            half = 0.5 * (s1 - s0)
            for node, w in zip(_GAUSS_NODES, _GAUSS_WEIGHTS):
                s = mid + half * node
                t = ta + s * dt
                q0 = q0a + s * dq0
                y = sheet._state_interp(t, q0)
                p = y[n : 2 * n]
                jac = y[2 * n : 2 * n + 2 * n * n].reshape(2 * n, n)[:n]
                region = (
                    sheet.region_near(t, q0) if sheet.spec.switching_surfaces else None
                )
                value, fld = branch_field(sheet.spec, sheet.prob, t, y[: 2 * n], region)
                integrand = float(np.dot(p, jac @ dq0))
                if dt != 0.0:
                    integrand += (float(np.dot(p, fld[:n])) - value) * dt
                total += w * half * integrand
    return total


def exactness_residual(sheet: FlowSheet, loop: Sequence) -> float:
    """|circulation| of the pulled-back action form around a closed polyline."""
    verts = [(float(t), np.atleast_1d(np.asarray(q0, float))) for (t, q0) in loop]
    if len(verts) < 2:
        return 0.0
    t0, q00 = verts[0]
    t1, q01 = verts[-1]
    if t0 != t1 or not np.array_equal(q00, q01):
        verts = verts + [verts[0]]
    return abs(pullback_line_integral(sheet, verts))
