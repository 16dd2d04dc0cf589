"""Reference extremal integration and first-order (PMP) residual checks.

The adjoint system is integrated arc by arc with a Dormand-Prince 5(4)
pair at tight tolerances, restarting at the known control discontinuities,
so that downstream certification margins (1e-6 scale) sit two orders above
the integration error.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Union

import numpy as np
from scipy.integrate import solve_ivp

from .errors import DegenerateHorizonError, DivergenceError, DomainError, DomainExitError
from .geometry import CotangentPoint
from .problem import OCProblem, maximized_hamiltonian, pre_hamiltonian

DEFAULT_RTOL = 1e-10
DEFAULT_ATOL = 1e-10
BLOWUP_LIMIT = 1e9

ControlLaw = Union[np.ndarray, Callable]


@dataclass(frozen=True)
class ControlArc:
    """One arc of the reference control: valid up to (and at) ``end_time``."""

    end_time: float
    law: ControlLaw


@dataclass(frozen=True)
class ReferenceControl:
    """Piecewise reference control on [0, horizon].

    Each law is either a constant control vector or a callable
    ``law(t, q, p)`` returning a control vector; arc end times are strictly
    increasing and the last one is the reference horizon.
    """

    arcs: Sequence[ControlArc]

    def __post_init__(self):
        arcs = tuple(self.arcs)
        if not arcs:
            raise DegenerateHorizonError("reference control has no arcs")
        times = [a.end_time for a in arcs]
        if any(t1 <= t0 for t0, t1 in zip(times, times[1:])) or times[0] <= 0.0:
            raise DomainError("arc end times must be strictly increasing and positive")
        object.__setattr__(self, "arcs", arcs)

    @property
    def horizon(self) -> float:
        return float(self.arcs[-1].end_time)

    def arc_index(self, t: float) -> int:
        if t < -1e-12 or t > self.horizon + 1e-9:
            raise DomainError(f"time {t} outside reference horizon [0, {self.horizon}]")
        for i, arc in enumerate(self.arcs):
            if t <= arc.end_time:
                return i
        return len(self.arcs) - 1

    def control_at(self, t: float, ell: Optional[CotangentPoint] = None) -> np.ndarray:
        arc = self.arcs[self.arc_index(t)]
        if callable(arc.law):
            q = ell.q if ell is not None else None
            p = ell.p if ell is not None else None
            return np.atleast_1d(np.asarray(arc.law(t, q, p), float))
        return np.atleast_1d(np.asarray(arc.law, float))


def constant_control(u, horizon: float) -> ReferenceControl:
    return ReferenceControl(arcs=[ControlArc(end_time=horizon, law=np.atleast_1d(u))])


@dataclass(frozen=True)
class CostExtension:
    """A smooth extension of an endpoint cost off its manifold.

    Carries value, gradient and Hessian callables; used both as the initial
    generating function (whose differential graph seeds the flow) and as
    the final comparison term.
    """

    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    hessian: Callable[[np.ndarray], np.ndarray]

    def __call__(self, x) -> float:
        return float(self.value(np.asarray(x, float)))

    def grad(self, x) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.gradient(np.asarray(x, float)), float))

    def hess(self, x) -> np.ndarray:
        return np.atleast_2d(np.asarray(self.hessian(np.asarray(x, float)), float))


def make_alpha_extension(
    prob: OCProblem,
    x0_hat: np.ndarray,
    p0_hat: np.ndarray,
    mode: str = "auto",
    k: float = 1.0,
) -> CostExtension:
    """Initial-cost extension with gradient p0_hat at x0_hat.

    ``from-c0`` extends p0*c0 by a linear correction (zero when initial
    transversality holds on the whole tangent space); it is only meaningful
    when the initial manifold is the whole chart.  ``quadratic`` builds
    p0*c0(x0) + <p0_hat, x - x0> + (k/2)|x - x0|^2, which matches the cost
    on a fixed initial point.  ``auto`` picks from-c0 for a free initial
    point and quadratic otherwise.
    """
    x0_hat = np.asarray(x0_hat, float)
    p0_hat = np.asarray(p0_hat, float)
    free_initial = prob.N0.residual(x0_hat).size == 0
    if mode == "auto":
        mode = "from-c0" if free_initial else "quadratic"
    if mode == "from-c0":
        if not free_initial:
            raise DomainError("from-c0 requires a free initial point")
        corr = p0_hat - prob.p0 * prob.cost0.gradient(x0_hat)
        return CostExtension(
            value=lambda x: prob.p0 * prob.cost0(x) + float(np.dot(corr, np.asarray(x, float) - x0_hat)),
            gradient=lambda x: prob.p0 * prob.cost0.gradient(x) + corr,
            hessian=lambda x: prob.p0 * prob.cost0.hessian(x),
        )
    if mode == "quadratic":
        base = prob.p0 * prob.cost0(x0_hat)
        n = x0_hat.size
        return CostExtension(
            value=lambda x: base
            + float(np.dot(p0_hat, np.asarray(x, float) - x0_hat))
            + 0.5 * k * float(np.sum((np.asarray(x, float) - x0_hat) ** 2)),
            gradient=lambda x: p0_hat + k * (np.asarray(x, float) - x0_hat),
            hessian=lambda x: k * np.eye(n),
        )
    raise DomainError(f"unknown alpha mode {mode!r}")


def make_beta_extension(prob: OCProblem, xf_hat: np.ndarray, pf_hat: np.ndarray) -> CostExtension:
    """Final-cost extension with gradient -pf_hat at xf_hat.

    Extends p0*cf by the linear correction (-pf_hat - p0*dcf(xf)); the
    correction annihilates the final tangent space by transversality, so the
    extension agrees with p0*cf on the final manifold (exactly so for free,
    fixed-point and affine endpoints).
    """
    xf_hat = np.asarray(xf_hat, float)
    pf_hat = np.asarray(pf_hat, float)
    corr = -pf_hat - prob.p0 * prob.costf.gradient(xf_hat)
    return CostExtension(
        value=lambda x: prob.p0 * prob.costf(x) + float(np.dot(corr, np.asarray(x, float) - xf_hat)),
        gradient=lambda x: prob.p0 * prob.costf.gradient(x) + corr,
        hessian=lambda x: prob.p0 * prob.costf.hessian(x),
    )


@dataclass
class Extremal:
    """The reference adjoint curve with its control samples and extensions.

    ``grid`` holds sample times on [0, horizon]; ``qs``/``ps`` the sampled
    lift; ``controls`` the reference control at the samples.  Dense output
    between samples is available through :meth:`lambda_at`.  ``cost_hat``
    is the full reference cost (endpoint terms included).
    """

    prob: OCProblem
    uref: ReferenceControl
    grid: np.ndarray
    qs: np.ndarray
    ps: np.ndarray
    controls: np.ndarray
    p0: int
    cost_hat: float
    alpha0: Optional[CostExtension] = None
    beta_f: Optional[CostExtension] = None
    segments: List = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.p0 == 0 and float(np.max(np.abs(self.ps))) < 1e-8:
            raise DomainError("trivial extremal: p0 = 0 and vanishing adjoint")
        if self.prob.N0.distance(self.qs[0]) > 1e-8:
            raise DomainError("extremal does not start on the initial manifold")
        if self.prob.Nf.distance(self.qs[-1]) > 1e-8:
            raise DomainError("extremal does not end on the final manifold")

    @property
    def horizon(self) -> float:
        return float(self.grid[-1])

    @property
    def x0(self) -> np.ndarray:
        return self.qs[0]

    @property
    def xf(self) -> np.ndarray:
        return self.qs[-1]

    @property
    def ell0(self) -> CotangentPoint:
        return CotangentPoint(self.qs[0], self.ps[0])

    @property
    def ellf(self) -> CotangentPoint:
        return CotangentPoint(self.qs[-1], self.ps[-1])

    def lambda_at(self, t: float) -> CotangentPoint:
        y = self._dense(t)
        n = self.prob.n
        return CotangentPoint(y[:n], y[n : 2 * n])

    def control_at(self, t: float) -> np.ndarray:
        return self.uref.control_at(t, self.lambda_at(t))

    def _dense(self, t: float) -> np.ndarray:
        if t < -1e-12 or t > self.horizon + 1e-9:
            raise DomainError(f"time {t} outside [0, {self.horizon}]")
        t = min(max(t, 0.0), self.horizon)
        for (t0, t1, sol) in self.segments:
            if t <= t1 + 1e-14:
                return sol(max(t, t0))
        return self.segments[-1][2](t)


def _adjoint_rhs(prob: OCProblem, u: np.ndarray):
    def rhs(t, y):
        n = prob.n
        q, p = y[:n], y[n : 2 * n]
        dq = prob.dynamics.value(q, u)
        dp = -(prob.dynamics.dx(q, u).T @ p)
        if prob.p0:
            dp = dp + prob.running_cost.dx(q, u)
        dj = prob.running_cost.rate(q, u)
        return np.concatenate([dq, dp, [dj]])

    return rhs


def _feedback_rhs(prob: OCProblem, law: Callable):
    def rhs(t, y):
        n = prob.n
        q, p = y[:n], y[n : 2 * n]
        u = np.atleast_1d(np.asarray(law(t, q, p), float))
        return _adjoint_rhs(prob, u)(t, y)

    return rhs


def integrate_extremal(
    prob: OCProblem,
    uref: ReferenceControl,
    ell0: CotangentPoint,
    alpha_mode: str = "auto",
    alpha_k: float = 1.0,
    grid_points: int = 201,
    rtol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
) -> Extremal:
    """Integrate the adjoint system along the reference control.

    The integration restarts at every arc boundary (the control is only
    essentially bounded, so no smoothing across its discontinuities), and
    accumulates the running cost as an extra state.  Raises on blow-up and
    on problem-domain exit.
    """
    prob.check_state(ell0.q)
    if uref.horizon <= 1e-12:
        raise DegenerateHorizonError("reference horizon is numerically zero")
    n = prob.n
    y = np.concatenate([ell0.as_array(), [0.0]])
    segments = []
    t_prev = 0.0

    def blowup(t, yy):
        return BLOWUP_LIMIT - float(np.max(np.abs(yy[: 2 * n])))

    blowup.terminal = True

    events = [blowup]
    if prob.domain is not None:
        lo, hi = (np.asarray(b, float) for b in prob.domain)

        def exit_domain(t, yy):
            return float(np.min(np.minimum(yy[:n] - lo, hi - yy[:n])))

        exit_domain.terminal = True
        events.append(exit_domain)

    for arc in uref.arcs:
        rhs = (
            _feedback_rhs(prob, arc.law)
            if callable(arc.law)
            else _adjoint_rhs(prob, np.atleast_1d(np.asarray(arc.law, float)))
        )
        sol = solve_ivp(
            rhs,
            (t_prev, arc.end_time),
            y,
            method="RK45",
            rtol=rtol,
            atol=atol,
            dense_output=True,
            events=events,
        )
        if sol.status == 1:  # a terminal event fired
            t_ev = min(te[0] for te in sol.t_events if len(te))
            if len(sol.t_events[0]):
                raise DivergenceError(f"adjoint blow-up at t = {t_ev:.6g}")
            raise DomainExitError(f"flow left the problem domain at t = {t_ev:.6g}", t_ev)
        if not sol.success:
            raise DivergenceError(f"integrator failure on arc ending {arc.end_time}: {sol.message}")
        segments.append((t_prev, arc.end_time, sol.sol))
        y = sol.y[:, -1]
        t_prev = arc.end_time

    grid = np.linspace(0.0, uref.horizon, grid_points)
    # snap arc boundaries into the grid so residual scans see both sides
    boundaries = np.array([a.end_time for a in uref.arcs[:-1]])
    grid = np.unique(np.concatenate([grid, boundaries]))

    def dense(t):
        for (t0, t1, s) in segments:
            if t <= t1 + 1e-14:
                return s(max(t, t0))
        return segments[-1][2](t)

    qs = np.zeros((grid.size, n))
    ps = np.zeros((grid.size, n))
    controls = np.zeros((grid.size, prob.m))
    for i, t in enumerate(grid):
        yt = dense(t)
        qs[i] = yt[:n]
        ps[i] = yt[n : 2 * n]
        controls[i] = uref.control_at(t, CotangentPoint(qs[i], ps[i]))
    cost_hat = prob.cost0(qs[0]) + prob.costf(qs[-1]) + float(y[-1])
    alpha0 = make_alpha_extension(prob, qs[0], ps[0], mode=alpha_mode, k=alpha_k)
    beta_f = make_beta_extension(prob, qs[-1], ps[-1])
    return Extremal(
        prob=prob,
        uref=uref,
        grid=grid,
        qs=qs,
        ps=ps,
        controls=controls,
        p0=prob.p0,
        cost_hat=cost_hat,
        alpha0=alpha0,
        beta_f=beta_f,
        segments=segments,
    )


@dataclass(frozen=True)
class TransversalityRecord:
    initial: float
    final: float
    tol: float

    @property
    def passed(self) -> bool:
        return max(self.initial, self.final) <= self.tol


def check_transversality(prob: OCProblem, ext: Extremal, tol: float = 1e-8) -> TransversalityRecord:
    """Pairing residuals of the adjoint against the endpoint cost gradients.

    At each end, the residual is the largest pairing of the transversality
    defect with the manifold tangent basis; a zero-dimensional tangent space
    gives a vacuous zero.
    """
    if prob.N0.distance(ext.x0) > 1e-6 or prob.Nf.distance(ext.xf) > 1e-6:
        raise DomainError("extremal endpoints are off their manifolds beyond 1e-6")
    defect0 = ext.ps[0] - prob.p0 * prob.cost0.gradient(ext.x0)
    defectf = ext.ps[-1] + prob.p0 * prob.costf.gradient(ext.xf)
    t0 = prob.N0.tangent(ext.x0)
    tf = prob.Nf.tangent(ext.xf)
    r0 = float(np.max(np.abs(t0 @ defect0))) if t0.shape[0] else 0.0
    rf = float(np.max(np.abs(tf @ defectf))) if tf.shape[0] else 0.0
    return TransversalityRecord(initial=r0, final=rf, tol=tol)


@dataclass(frozen=True)
class MaximizationRecord:
    residual: float
    worst_time: float
    unbounded: bool
    tol: float

    @property
    def passed(self) -> bool:
        return (not self.unbounded) and self.residual <= self.tol


def check_maximization(prob: OCProblem, ext: Extremal, tol: float = 1e-8) -> MaximizationRecord:
    """Largest gap between the maximized and the reference Hamiltonian."""
    worst = -np.inf
    worst_t = 0.0
    unbounded = False
    for i, t in enumerate(ext.grid):
        ell = CotangentPoint(ext.qs[i], ext.ps[i])
        mx = maximized_hamiltonian(prob, ell)
        if mx.status != "ok":
            unbounded = True
            worst = np.inf
            worst_t = float(t)
            break
        gap = mx.value - pre_hamiltonian(prob, ell, ext.controls[i])
        if gap > worst:
            worst, worst_t = gap, float(t)
    return MaximizationRecord(residual=float(worst), worst_time=worst_t, unbounded=unbounded, tol=tol)


@dataclass(frozen=True)
class ConstancyRecord:
    drift: float
    level: float
    free_time: bool
    tol: float

    @property
    def passed(self) -> bool:
        ok = self.drift <= self.tol
        if self.free_time:
            ok = ok and abs(self.level) <= self.tol
        return ok


def check_constancy(prob: OCProblem, ext: Extremal, tol: float = 1e-8) -> ConstancyRecord:
    """Drift of the reference Hamiltonian around its median level.

    In free-time mode the level itself must vanish.
    """
    vals = np.array(
        [
            pre_hamiltonian(prob, CotangentPoint(ext.qs[i], ext.ps[i]), ext.controls[i])
            for i in range(ext.grid.size)
        ]
    )
    level = float(np.median(vals))
    drift = float(np.max(np.abs(vals - level)))
    return ConstancyRecord(drift=drift, level=level, free_time=prob.time_mode == "free", tol=tol)
