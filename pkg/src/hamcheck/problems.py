"""Builtin problem registry.

Each entry constructs the full problem data, the reference control, the
initial covector of the reference extremal, the driving-Hamiltonian spec
and per-problem defaults, together with closed-form oracle callables used
by the test suite.  Custom problems are registered by calling
:func:`register` with your own constructor; there is no runtime expression
parser (analytic derivatives cannot be guaranteed from text input).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np

from .errors import ConfigError, DegenerateHorizonError
from .extremal import ControlArc, ReferenceControl
from .geometry import CotangentPoint
from .problem import (
    Dynamics,
    EndpointCost,
    OCProblem,
    RunningCost,
    SuperHamiltonianSpec,
    affine_manifold,
    box_controls,
    fixed_point,
    whole_chart,
    zero_endpoint_cost,
)


@dataclass
class BuiltProblem:
    """Everything a pipeline run needs for one registered problem."""

    prob: OCProblem
    uref: ReferenceControl
    ell0: CotangentPoint
    spec: SuperHamiltonianSpec
    defaults: dict = field(default_factory=dict)
    oracles: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ProblemRegistryEntry:
    name: str
    build: Callable[[dict], BuiltProblem]
    description: str
    mintime: bool = False


_REGISTRY: Dict[str, ProblemRegistryEntry] = {}


def register(entry: ProblemRegistryEntry) -> None:
    _REGISTRY[entry.name] = entry


def registry() -> Dict[str, ProblemRegistryEntry]:
    return dict(_REGISTRY)


def get_problem(name: str, params: Optional[dict] = None) -> BuiltProblem:
    if name not in _REGISTRY:
        known = ", ".join(sorted(_REGISTRY))
        raise ConfigError(f"unknown problem {name!r}; registered: {known}")
    return _REGISTRY[name].build(dict(params or {}))


def _reject_unknown(params: dict, allowed) -> None:
    unknown = set(params) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown problem parameters: {sorted(unknown)}")


# ---------------------------------------------------------------------------
# lq1d: scalar integrator with quadratic control effort and quadratic
# initial cost; free initial point, fixed endpoint x(1) = 1, fixed horizon.
#
# Reference: u = 0.5, x(t) = 0.5 (1 + t), adjoint constant 0.5.  The flow
# from the graph of d(q^2/2) is (q0 (1 + t), q0) with action q0^2 (1+t)/2
# and projection Jacobian 1 + t; at t = 1 the comparison function is
# (1 - x)/2 + x^2/4.
# ---------------------------------------------------------------------------


def _build_lq1d(params: dict) -> BuiltProblem:
    _reject_unknown(params, ())
    prob = OCProblem(
        n=1,
        m=1,
        dynamics=Dynamics(
            f=lambda x, u: np.array([u[0]]),
            jac_x=lambda x, u: np.zeros((1, 1)),
            jac_u=lambda x, u: np.eye(1),
        ),
        running_cost=RunningCost(
            value=lambda x, u: 0.5 * u[0] ** 2,
            grad_x=lambda x, u: np.zeros(1),
            grad_u=lambda x, u: np.array([u[0]]),
        ),
        cost0=EndpointCost(
            value=lambda x: 0.5 * x[0] ** 2,
            grad=lambda x: np.array([x[0]]),
            hess=lambda x: np.eye(1),
        ),
        costf=zero_endpoint_cost(1),
        U=box_controls([-10.0], [10.0]),
        N0=whole_chart(1, [0.5]),
        Nf=fixed_point([1.0]),
        time_mode="fixed",
        p0=1,
        name="lq1d",
        control_from_velocity=lambda x, v: np.array([v[0]]),
    )
    uref = ReferenceControl(arcs=[ControlArc(end_time=1.0, law=np.array([0.5]))])
    ell0 = CotangentPoint([0.5], [0.5])
    oracles = {
        "lambda_at": lambda t: (np.array([0.5 * (1 + t)]), np.array([0.5])),
        "sheet_state": lambda t, q0: (np.array([q0 * (1 + t)]), np.array([q0])),
        "theta": lambda t, q0: 0.5 * q0**2 * (1 + t),
        "jac": lambda t, q0: np.array([[1.0 + t]]),
        "min_sv": lambda t: 1.0 + t,
        "phi_at_T": lambda x: 0.5 * (1 - x) + 0.25 * x**2,
        "cost_hat": 0.25,
    }
    defaults = {
        "chart_radius": 0.25,
        "alpha": "from-c0",
        "amplitude": 0.1,
        "tube_radius": 0.15,
        "perturb_kind": "path-based",
    }
    return BuiltProblem(
        prob=prob,
        uref=uref,
        ell0=ell0,
        spec=SuperHamiltonianSpec(kind="maximized"),
        defaults=defaults,
        oracles=oracles,
    )


# ---------------------------------------------------------------------------
# lq1d_freef: same dynamics and effort cost, but the endpoint is free with
# final cost (x - 1)^2.  Stationarity pins the reference slope at 0.4.
# ---------------------------------------------------------------------------


def _build_lq1d_freef(params: dict) -> BuiltProblem:
    _reject_unknown(params, ())
    prob = OCProblem(
        n=1,
        m=1,
        dynamics=Dynamics(
            f=lambda x, u: np.array([u[0]]),
            jac_x=lambda x, u: np.zeros((1, 1)),
            jac_u=lambda x, u: np.eye(1),
        ),
        running_cost=RunningCost(
            value=lambda x, u: 0.5 * u[0] ** 2,
            grad_x=lambda x, u: np.zeros(1),
            grad_u=lambda x, u: np.array([u[0]]),
        ),
        cost0=EndpointCost(
            value=lambda x: 0.5 * x[0] ** 2,
            grad=lambda x: np.array([x[0]]),
            hess=lambda x: np.eye(1),
        ),
        costf=EndpointCost(
            value=lambda x: (x[0] - 1.0) ** 2,
            grad=lambda x: np.array([2.0 * (x[0] - 1.0)]),
            hess=lambda x: 2.0 * np.eye(1),
        ),
        U=box_controls([-10.0], [10.0]),
        N0=whole_chart(1, [0.4]),
        Nf=whole_chart(1, [0.8]),
        time_mode="fixed",
        p0=1,
        name="lq1d_freef",
        control_from_velocity=lambda x, v: np.array([v[0]]),
    )
    uref = ReferenceControl(arcs=[ControlArc(end_time=1.0, law=np.array([0.4]))])
    ell0 = CotangentPoint([0.4], [0.4])
    oracles = {
        "lambda_at": lambda t: (np.array([0.4 * (1 + t)]), np.array([0.4])),
        "phi_xx_at_T": 2.5,  # Hess beta (2) plus transported chart Hessian 1/(1+T)
    }
    defaults = {
        "chart_radius": 0.25,
        "alpha": "from-c0",
        "amplitude": 0.1,
        "tube_radius": 0.15,
        "perturb_kind": "path-based",
    }
    return BuiltProblem(
        prob=prob,
        uref=uref,
        ell0=ell0,
        spec=SuperHamiltonianSpec(kind="maximized"),
        defaults=defaults,
        oracles=oracles,
    )


# ---------------------------------------------------------------------------
# conj_osc: scalar integrator with effort-minus-displacement cost, so the
# maximized Hamiltonian is the harmonic oscillator.  The reference is the
# zero trajectory; the flow from the flat graph is (q0 cos t, -q0 sin t)
# with projection Jacobian cos t, which folds at pi/2.
# ---------------------------------------------------------------------------


def _build_conj_osc(params: dict) -> BuiltProblem:
    _reject_unknown(params, ("T",))
    horizon = float(params.get("T", 1.2))
    if horizon <= 0:
        raise ConfigError("conj_osc horizon T must be positive")
    prob = OCProblem(
        n=1,
        m=1,
        dynamics=Dynamics(
            f=lambda x, u: np.array([u[0]]),
            jac_x=lambda x, u: np.zeros((1, 1)),
            jac_u=lambda x, u: np.eye(1),
        ),
        running_cost=RunningCost(
            value=lambda x, u: 0.5 * (u[0] ** 2 - x[0] ** 2),
            grad_x=lambda x, u: np.array([-x[0]]),
            grad_u=lambda x, u: np.array([u[0]]),
        ),
        cost0=zero_endpoint_cost(1),
        costf=zero_endpoint_cost(1),
        U=box_controls([-10.0], [10.0]),
        N0=whole_chart(1, [0.0]),
        Nf=fixed_point([0.0]),
        time_mode="fixed",
        p0=1,
        name="conj_osc",
        control_from_velocity=lambda x, v: np.array([v[0]]),
    )
    uref = ReferenceControl(arcs=[ControlArc(end_time=horizon, law=np.array([0.0]))])
    ell0 = CotangentPoint([0.0], [0.0])
    oracles = {
        "lambda_at": lambda t: (np.zeros(1), np.zeros(1)),
        "sheet_state": lambda t, q0: (
            np.array([q0 * np.cos(t)]),
            np.array([-q0 * np.sin(t)]),
        ),
        "theta": lambda t, q0: -0.5 * q0**2 * np.sin(t) * np.cos(t),
        "jac": lambda t, q0: np.array([[np.cos(t)]]),
        "min_sv": lambda t: abs(np.cos(t)),
        "fold_time": np.pi / 2,
    }
    defaults = {
        "chart_radius": 0.4,
        "alpha": "from-c0",
        "amplitude": 0.05,
        "tube_radius": 0.06,
        "perturb_kind": "path-based",
    }
    return BuiltProblem(
        prob=prob,
        uref=uref,
        ell0=ell0,
        spec=SuperHamiltonianSpec(kind="maximized"),
        defaults=defaults,
        oracles=oracles,
    )


# ---------------------------------------------------------------------------
# double_integrator_mintime: drive (position, velocity) to the origin in
# minimum time with |u| <= 1.  One switch; the synthesis is closed form.
# ---------------------------------------------------------------------------


def _di_synthesis(x0: np.ndarray):
    """Closed-form bang-bang synthesis to the origin: (t_switch, T, p(0), u1).

    Starting below the switching curve x1 = -x2 |x2| / 2 the first arc has
    u = +1; above it, u = -1 (by central symmetry).  The adjoint scale is
    pinned by the zero level of the free-time Hamiltonian.
    """
    a, b = float(x0[0]), float(x0[1])
    curve = a + 0.5 * b * abs(b)
    if abs(a) < 1e-12 and abs(b) < 1e-12:
        raise DegenerateHorizonError("reference horizon is zero: start is the target")
    if abs(curve) < 1e-12:
        raise ConfigError("start on the switching curve is not supported")
    if curve < 0:
        t1 = -b + np.sqrt(0.5 * b * b - a)
        T = -b + 2.0 * np.sqrt(0.5 * b * b - a)
        p10 = 1.0 / np.sqrt(0.5 * b * b - a)
        return t1, T, np.array([p10, p10 * t1]), 1.0
    t1 = b + np.sqrt(0.5 * b * b + a)
    T = b + 2.0 * np.sqrt(0.5 * b * b + a)
    p10 = 1.0 / np.sqrt(0.5 * b * b + a)
    return t1, T, np.array([-p10, -p10 * t1]), -1.0


def _di_problem(x0, nf_manifold) -> OCProblem:
    return OCProblem(
        n=2,
        m=1,
        dynamics=Dynamics(
            f=lambda x, u: np.array([x[1], u[0]]),
            jac_x=lambda x, u: np.array([[0.0, 1.0], [0.0, 0.0]]),
            jac_u=lambda x, u: np.array([[0.0], [1.0]]),
        ),
        running_cost=RunningCost(
            value=lambda x, u: 1.0,
            grad_x=lambda x, u: np.zeros(2),
            grad_u=lambda x, u: np.zeros(1),
        ),
        cost0=zero_endpoint_cost(2),
        costf=zero_endpoint_cost(2),
        U=box_controls([-1.0], [1.0]),
        N0=fixed_point(x0),
        Nf=nf_manifold,
        time_mode="free",
        p0=1,
        name="double_integrator_mintime",
    )


def _build_double_integrator_mintime(params: dict) -> BuiltProblem:
    _reject_unknown(params, ("x0",))
    x0 = np.atleast_1d(np.asarray(params.get("x0", [-1.0, 0.0]), float))
    if x0.size != 2:
        raise ConfigError("x0 must have two components")
    t1, T, p0vec, u1 = _di_synthesis(x0)
    prob = _di_problem(x0, fixed_point([0.0, 0.0]))
    uref = ReferenceControl(
        arcs=[
            ControlArc(end_time=float(t1), law=np.array([u1])),
            ControlArc(end_time=float(T), law=np.array([-u1])),
        ]
    )
    ell0 = CotangentPoint(x0, p0vec)

    def lambda_oracle(t):
        p1 = p0vec[0]
        p = np.array([p1, p0vec[1] - p1 * t])
        if t <= t1:
            q = np.array(
                [x0[0] + x0[1] * t + 0.5 * u1 * t * t, x0[1] + u1 * t]
            )
        else:
            qs = np.array(
                [x0[0] + x0[1] * t1 + 0.5 * u1 * t1 * t1, x0[1] + u1 * t1]
            )
            dt = t - t1
            q = np.array([qs[0] + qs[1] * dt - 0.5 * u1 * dt * dt, qs[1] - u1 * dt])
        return q, p

    oracles = {
        "switch_time": float(t1),
        "horizon": float(T),
        "lambda_at": lambda_oracle,
    }
    defaults = {
        "chart_radius": 0.15,
        "alpha": "quadratic",
        "alpha_k": 1.0,
        "amplitude": 0.02,
        "tube_radius": 0.25,
        "perturb_kind": "bounded-variation",
    }
    return BuiltProblem(
        prob=prob,
        uref=uref,
        ell0=ell0,
        spec=SuperHamiltonianSpec(
            kind="maximized", switching_surfaces=(lambda q, p: p[1],)
        ),
        defaults=defaults,
        oracles=oracles,
    )


# ---------------------------------------------------------------------------
# di_mintime_skew: negative control for the minimum-time orthogonality
# hypothesis.  Same dynamics and bang arcs, but the final manifold is the
# velocity axis and the covector is scaled so its final pairing with the
# tangent direction is 0.3 instead of 0.
# ---------------------------------------------------------------------------


def _build_di_mintime_skew(params: dict) -> BuiltProblem:
    _reject_unknown(params, ())
    x0 = np.array([-1.0, 0.0])
    nf = affine_manifold([0.0, 0.0], [[0.0, 1.0]])
    prob = _di_problem(x0, nf)
    uref = ReferenceControl(
        arcs=[
            ControlArc(end_time=1.0, law=np.array([1.0])),
            ControlArc(end_time=2.0, law=np.array([-1.0])),
        ]
    )
    ell0 = CotangentPoint(x0, [0.3, 0.3])
    defaults = {
        "chart_radius": 0.15,
        "alpha": "quadratic",
        "alpha_k": 1.0,
        "amplitude": 0.02,
        "tube_radius": 0.25,
        "perturb_kind": "bounded-variation",
    }
    return BuiltProblem(
        prob=prob,
        uref=uref,
        ell0=ell0,
        spec=SuperHamiltonianSpec(
            kind="maximized", switching_surfaces=(lambda q, p: p[1],)
        ),
        defaults=defaults,
        oracles={"orthogonality_residual": 0.3},
    )


register(
    ProblemRegistryEntry(
        name="lq1d",
        build=_build_lq1d,
        description="scalar integrator, quadratic effort, fixed endpoint",
    )
)
register(
    ProblemRegistryEntry(
        name="lq1d_freef",
        build=_build_lq1d_freef,
        description="scalar integrator, quadratic effort, free endpoint cost (x-1)^2",
    )
)
register(
    ProblemRegistryEntry(
        name="conj_osc",
        build=_build_conj_osc,
        description="oscillator-type problem whose projection folds at pi/2",
    )
)
register(
    ProblemRegistryEntry(
        name="double_integrator_mintime",
        build=_build_double_integrator_mintime,
        description="minimum-time double integrator to the origin",
        mintime=True,
    )
)
register(
    ProblemRegistryEntry(
        name="di_mintime_skew",
        build=_build_di_mintime_skew,
        description="negative control: skewed covector against the velocity axis",
        mintime=True,
    )
)
