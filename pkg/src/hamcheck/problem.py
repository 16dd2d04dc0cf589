"""Problem data model and its Hamiltonians.

An optimal control problem is described by smooth callables (dynamics,
running cost, endpoint costs), a control set, endpoint manifolds and a
time mode.  Three scalar functions on the cotangent chart derive from it:

* ``pre_hamiltonian``        F(l, u)  = <p, f(q,u)> - p0 * f0(q,u)
* ``reference_hamiltonian``  F(l, u_ref(t)) for a given reference control
* ``maximized_hamiltonian``  sup over the control set of F(l, u)

plus the pluggable Hamiltonian used to drive the comparison flow, which is
either the maximized one or a user-supplied dominating Hamiltonian with
declared smoothness regions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .errors import (
    AmbiguousRegionError,
    DimensionMismatchError,
    DomainError,
    HamcheckError,
)
from .geometry import CotangentPoint, HamiltonianGradient, hamiltonian_vector_field

_EPS_CBRT = float(np.finfo(float).eps) ** (1.0 / 3.0)

BOX_MEMBERSHIP_TOL = 1e-12
UNBOUNDED_THRESHOLD = 1e12


def fd_step(x: np.ndarray) -> np.ndarray:
    """Central-difference step h = eps^(1/3) * (1 + |x|), per coordinate."""
    return _EPS_CBRT * (1.0 + np.abs(x))


def fd_jacobian(fun: Callable[[np.ndarray], np.ndarray], x: np.ndarray) -> np.ndarray:
    """Dense central-difference Jacobian of a vector-valued callable."""
    x = np.asarray(x, dtype=float)
    h = fd_step(x)
    cols = []
    for j in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[j] += h[j]
        xm[j] -= h[j]
        cols.append((np.asarray(fun(xp), float) - np.asarray(fun(xm), float)) / (2 * h[j]))
    return np.column_stack(cols) if cols else np.zeros((0, 0))


def fd_gradient(fun: Callable[[np.ndarray], float], x: np.ndarray) -> np.ndarray:
    """Central-difference gradient of a scalar callable."""
    x = np.asarray(x, dtype=float)
    h = fd_step(x)
    g = np.zeros_like(x)
    for j in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[j] += h[j]
        xm[j] -= h[j]
        g[j] = (fun(xp) - fun(xm)) / (2 * h[j])
    return g


@dataclass(frozen=True)
class ControlSet:
    """Admissible control values: an axis-aligned box or a finite list."""

    kind: str  # "box" | "finite"
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    values: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind == "box":
            lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
            hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
            if lo.shape != hi.shape or lo.ndim != 1 or lo.size < 1:
                raise DimensionMismatchError("box bounds must be equal-length vectors")
            if np.any(lo > hi):
                raise DomainError("box lower bound exceeds upper bound")
            object.__setattr__(self, "lower", lo)
            object.__setattr__(self, "upper", hi)
        elif self.kind == "finite":
            vals = np.atleast_2d(np.asarray(self.values, dtype=float))
            if vals.shape[0] < 1 or vals.shape[1] < 1:
                raise DomainError("finite control set must be nonempty")
            object.__setattr__(self, "values", vals)
        else:
            raise DomainError(f"unknown control set kind {self.kind!r}")

    @property
    def m(self) -> int:
        return self.lower.size if self.kind == "box" else self.values.shape[1]

    def contains(self, u: np.ndarray) -> bool:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if u.size != self.m:
            return False
        if self.kind == "box":
            return bool(
                np.all(u >= self.lower - BOX_MEMBERSHIP_TOL)
                and np.all(u <= self.upper + BOX_MEMBERSHIP_TOL)
            )
        return any(np.array_equal(u, v) for v in self.values)


def box_controls(lower, upper) -> ControlSet:
    return ControlSet(kind="box", lower=lower, upper=upper)


def finite_controls(values) -> ControlSet:
    return ControlSet(kind="finite", values=values)


@dataclass(frozen=True)
class EndpointManifold:
    """An embedded endpoint constraint: zero set of a submersion.

    ``constraint(x)`` returns the residual vector (length n - k, possibly
    empty), ``tangent_basis(x)`` returns k independent tangent vectors as
    rows, and ``anchor`` is a point on the manifold used for validation.
    """

    constraint: Callable[[np.ndarray], np.ndarray]
    tangent_basis: Callable[[np.ndarray], np.ndarray]
    anchor: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "anchor", np.atleast_1d(np.asarray(self.anchor, float)))

    def residual(self, x) -> np.ndarray:
        return np.asarray(self.constraint(np.asarray(x, float)), float).reshape(-1)

    def tangent(self, x) -> np.ndarray:
        b = np.asarray(self.tangent_basis(np.asarray(x, float)), float)
        return b.reshape(0, self.anchor.size) if b.size == 0 else np.atleast_2d(b)

    def distance(self, x) -> float:
        r = self.residual(x)
        return float(np.linalg.norm(r)) if r.size else 0.0

    def validate(self, rtol_constraint: float = 1e-10, rtol_tangent: float = 1e-8) -> None:
        """Check anchor consistency and tangent/constraint annihilation."""
        if self.distance(self.anchor) > rtol_constraint:
            raise DomainError("manifold anchor violates its own constraint")
        r0 = np.asarray(self.constraint(self.anchor), float)
        if r0.size == 0:
            return
        jac = fd_jacobian(lambda x: np.atleast_1d(self.constraint(x)), self.anchor)
        for v in self.tangent(self.anchor):
            if np.linalg.norm(jac @ v) > rtol_tangent * (1 + np.linalg.norm(jac)):
                raise DomainError("tangent basis vector not annihilated by constraint")


def whole_chart(n: int, anchor) -> EndpointManifold:
    """The trivial constraint: every chart point is admissible."""
    return EndpointManifold(
        constraint=lambda x: np.zeros(0),
        tangent_basis=lambda x: np.eye(n),
        anchor=anchor,
    )


def fixed_point(anchor) -> EndpointManifold:
    """A single prescribed endpoint; the tangent space is {0}."""
    a = np.atleast_1d(np.asarray(anchor, float))
    return EndpointManifold(
        constraint=lambda x: np.asarray(x, float) - a,
        tangent_basis=lambda x: np.zeros((0, a.size)),
        anchor=a,
    )


def affine_manifold(anchor, tangent_rows) -> EndpointManifold:
    """Affine submanifold through ``anchor`` spanned by ``tangent_rows``."""
    a = np.atleast_1d(np.asarray(anchor, float))
    t = np.atleast_2d(np.asarray(tangent_rows, float))
    # rows of the normal complement via QR
    q, _ = np.linalg.qr(t.T, mode="complete")
    normals = q[:, t.shape[0]:].T
    return EndpointManifold(
        constraint=lambda x: normals @ (np.asarray(x, float) - a),
        tangent_basis=lambda x: t,
        anchor=a,
    )


@dataclass(frozen=True)
class Dynamics:
    """Velocity field f(x, u) with (optionally analytic) Jacobians."""

    f: Callable[[np.ndarray, np.ndarray], np.ndarray]
    jac_x: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    jac_u: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None

    def value(self, x, u) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.f(x, u), float))

    def dx(self, x, u) -> np.ndarray:
        if self.jac_x is not None:
            return np.atleast_2d(np.asarray(self.jac_x(x, u), float))
        return fd_jacobian(lambda xx: self.value(xx, u), np.asarray(x, float))

    def du(self, x, u) -> np.ndarray:
        if self.jac_u is not None:
            return np.atleast_2d(np.asarray(self.jac_u(x, u), float))
        return fd_jacobian(lambda uu: self.value(x, uu), np.asarray(u, float))


@dataclass(frozen=True)
class RunningCost:
    """Running cost rate f0(x, u) with gradients."""

    value: Callable[[np.ndarray, np.ndarray], float]
    grad_x: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    grad_u: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None

    def rate(self, x, u) -> float:
        return float(self.value(x, u))

    def dx(self, x, u) -> np.ndarray:
        if self.grad_x is not None:
            return np.atleast_1d(np.asarray(self.grad_x(x, u), float))
        return fd_gradient(lambda xx: self.rate(xx, u), np.asarray(x, float))

    def du(self, x, u) -> np.ndarray:
        if self.grad_u is not None:
            return np.atleast_1d(np.asarray(self.grad_u(x, u), float))
        return fd_gradient(lambda uu: self.rate(x, uu), np.asarray(u, float))


@dataclass(frozen=True)
class EndpointCost:
    """Endpoint cost with gradient and Hessian."""

    value: Callable[[np.ndarray], float]
    grad: Optional[Callable[[np.ndarray], np.ndarray]] = None
    hess: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __call__(self, x) -> float:
        return float(self.value(np.asarray(x, float)))

    def gradient(self, x) -> np.ndarray:
        if self.grad is not None:
            return np.atleast_1d(np.asarray(self.grad(x), float))
        return fd_gradient(self.value, np.asarray(x, float))

    def hessian(self, x) -> np.ndarray:
        if self.hess is not None:
            return np.atleast_2d(np.asarray(self.hess(x), float))
        return fd_jacobian(lambda xx: self.gradient(xx), np.asarray(x, float))


def zero_endpoint_cost(n: int) -> EndpointCost:
    return EndpointCost(
        value=lambda x: 0.0,
        grad=lambda x: np.zeros(n),
        hess=lambda x: np.zeros((n, n)),
    )


@dataclass(frozen=True)
class OCProblem:
    """Full problem data in one chart.

    ``p0`` is 1 in the normal case and 0 in the abnormal one (all cost terms
    then drop out of the Hamiltonians).  ``domain`` optionally restricts the
    state chart to an open box.  ``control_from_velocity`` declares full
    actuation: it must solve f(x, u) = v for u whenever v is attainable.
    """

    n: int
    m: int
    dynamics: Dynamics
    running_cost: RunningCost
    cost0: EndpointCost
    costf: EndpointCost
    U: ControlSet
    N0: EndpointManifold
    Nf: EndpointManifold
    time_mode: str = "fixed"  # "fixed" | "free"
    p0: int = 1
    domain: Optional[tuple] = None  # (lower, upper) open box, or None
    name: str = ""
    control_from_velocity: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.p0 not in (0, 1):
            raise DomainError("p0 must be 0 or 1")
        if self.time_mode not in ("fixed", "free"):
            raise DomainError("time_mode must be 'fixed' or 'free'")
        if self.U.m != self.m:
            raise DimensionMismatchError("control set dimension does not match m")

    def check_state(self, x: np.ndarray) -> None:
        if self.domain is None:
            return
        lo, hi = self.domain
        x = np.asarray(x, float)
        if np.any(x <= np.asarray(lo, float)) or np.any(x >= np.asarray(hi, float)):
            raise DomainError(f"state {x} outside problem domain")

    @property
    def fully_actuated(self) -> bool:
        return self.control_from_velocity is not None


class MaximizedHamiltonian(NamedTuple):
    value: float
    argmax: np.ndarray
    status: str  # "ok" | "unbounded"


def pre_hamiltonian(prob: OCProblem, ell: CotangentPoint, u) -> float:
    """Control-dependent Hamiltonian <p, f(q,u)> - p0 * f0(q,u)."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if not prob.U.contains(u):
        raise DomainError(f"control {u} is not in the admissible set")
    prob.check_state(ell.q)
    return _pre_h_arrays(prob, ell.q, ell.p, u)


def _pre_h_arrays(prob: OCProblem, q: np.ndarray, p: np.ndarray, u: np.ndarray) -> float:
    val = float(np.dot(p, prob.dynamics.value(q, u)))
    if prob.p0:
        val -= prob.running_cost.rate(q, u)
    return val


def _pre_h_ugrad(prob: OCProblem, q: np.ndarray, p: np.ndarray, u: np.ndarray) -> np.ndarray:
    g = prob.dynamics.du(q, u).T @ p
    if prob.p0:
        g = g - prob.running_cost.du(q, u)
    return g


def _newton_on_gradient(prob, q, p, u0, direction=None, max_iter=50):
    """Newton iteration for a stationary point of u -> F(l, u).

    With ``direction`` the search is restricted to the 1-d section
    u0 + s * direction.  Returns the point or None if the iteration fails.
    """
    if direction is None:
        u = np.asarray(u0, float).copy()
        for _ in range(max_iter):
            g = _pre_h_ugrad(prob, q, p, u)
            if np.linalg.norm(g) <= 1e-13 * (1.0 + np.linalg.norm(p)):
                return u
            J = fd_jacobian(lambda uu: _pre_h_ugrad(prob, q, p, uu), u)
            try:
                step = np.linalg.solve(J, -g)
            except np.linalg.LinAlgError:
                return None
            if not np.all(np.isfinite(step)) or np.linalg.norm(step) > 1e8:
                return None
            u = u + step
        return u if np.linalg.norm(_pre_h_ugrad(prob, q, p, u)) <= 1e-9 else None
    d = np.asarray(direction, float)
    s = 0.0
    for _ in range(max_iter):
        u = u0 + s * d
        g = float(np.dot(_pre_h_ugrad(prob, q, p, u), d))
        if abs(g) <= 1e-13 * (1.0 + np.linalg.norm(p)):
            return u
        h = _EPS_CBRT * (1.0 + abs(s))
        gp = float(np.dot(_pre_h_ugrad(prob, q, p, u0 + (s + h) * d), d))
        gm = float(np.dot(_pre_h_ugrad(prob, q, p, u0 + (s - h) * d), d))
        slope = (gp - gm) / (2 * h)
        if slope == 0.0 or not np.isfinite(slope):
            return None
        s = s - g / slope
        if not np.isfinite(s) or abs(s) > 1e8:
            return None
    return u0 + s * d


def _box_candidates(prob: OCProblem, q: np.ndarray, p: np.ndarray) -> list:
    lo, hi = prob.U.lower, prob.U.upper
    m = prob.m
    center = 0.5 * (lo + hi)
    cands = []

    def keep(u):
        if u is None:
            return
        u = np.clip(np.asarray(u, float), lo, hi)
        cands.append(u)

    keep(_newton_on_gradient(prob, q, p, center))
    if m == 1:
        keep(np.array([lo[0]]))
        keep(np.array([hi[0]]))
    elif m == 2:
        for v in ([lo[0], lo[1]], [lo[0], hi[1]], [hi[0], lo[1]], [hi[0], hi[1]]):
            keep(np.asarray(v, float))
        # stationary points along the four edges
        for fixed_axis, fixed_val in ((0, lo[0]), (0, hi[0]), (1, lo[1]), (1, hi[1])):
            free_axis = 1 - fixed_axis
            mid = center.copy()
            mid[fixed_axis] = fixed_val
            d = np.zeros(2)
            d[free_axis] = 1.0
            u = _newton_on_gradient(prob, q, p, mid, direction=d)
            if u is not None and lo[free_axis] - 1e-12 <= u[free_axis] <= hi[free_axis] + 1e-12:
                keep(u)
    else:
        axes = [np.linspace(lo[j], hi[j], 17) for j in range(m)]
        mesh = np.meshgrid(*axes, indexing="ij")
        grid = np.stack([g.ravel() for g in mesh], axis=1)
        vals = np.array([_pre_h_arrays(prob, q, p, u) for u in grid])
        best = grid[int(np.argmax(vals))]
        keep(best)
        keep(_newton_on_gradient(prob, q, p, best))
        for corner in (lo, hi):
            keep(corner.copy())
    return cands


def maximized_hamiltonian(prob: OCProblem, ell: CotangentPoint) -> MaximizedHamiltonian:
    """Maximize the pre-Hamiltonian over the control set.

    Finite sets are scanned exhaustively (ties resolved to the lowest
    index).  For boxes, candidates are interior stationary points plus box
    faces and vertices (a coarse grid with Newton polish above dimension
    two); ties resolve to the lexicographically smallest candidate.  Values
    beyond 1e12 are reported as an unbounded status rather than an error.
    """
    prob.check_state(ell.q)
    q, p = ell.q, ell.p
    if prob.U.kind == "finite":
        vals = [_pre_h_arrays(prob, q, p, u) for u in prob.U.values]
        idx = int(np.argmax(vals))  # argmax returns the first (lowest) index
        value, arg = vals[idx], prob.U.values[idx].copy()
    else:
        cands = _box_candidates(prob, q, p)
        vals = [_pre_h_arrays(prob, q, p, u) for u in cands]
        vmax = max(vals)
        tol = 1e-11 * (1.0 + abs(vmax))
        tied = [u for u, v in zip(cands, vals) if v >= vmax - tol]
        tied.sort(key=lambda u: tuple(u))
        arg = tied[0]
        value = _pre_h_arrays(prob, q, p, arg)
    status = "unbounded" if value > UNBOUNDED_THRESHOLD else "ok"
    return MaximizedHamiltonian(float(value), np.atleast_1d(arg), status)


def reference_hamiltonian(prob: OCProblem, uref, t: float, ell: CotangentPoint) -> float:
    """Pre-Hamiltonian evaluated at the reference control value at time t."""
    u = uref.control_at(t, ell)
    return pre_hamiltonian(prob, ell, u)


@dataclass(frozen=True)
class SuperHamiltonianSpec:
    """Selection of the Hamiltonian driving the comparison flow.

    ``kind='maximized'`` uses the maximized pre-Hamiltonian with its
    envelope gradient.  ``kind='user'`` evaluates ``func(t, q, p)`` which
    must return ``(value, Hq, Hp)``.  ``switching_surfaces`` lists scalar
    callables ``s(q, p)`` whose zero sets separate smooth pieces; their
    sign vector identifies a region.
    """

    kind: str = "maximized"
    func: Optional[Callable] = None
    switching_surfaces: Sequence[Callable] = field(default_factory=tuple)

    def __post_init__(self):
        if self.kind not in ("maximized", "user"):
            raise DomainError(f"unknown super-Hamiltonian kind {self.kind!r}")
        if self.kind == "user" and self.func is None:
            raise DomainError("user super-Hamiltonian requires func")
        object.__setattr__(self, "switching_surfaces", tuple(self.switching_surfaces))


def region_signs(spec: SuperHamiltonianSpec, q: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Sign vector of the switching surfaces at (q, p); 0 marks 'on surface'."""
    return np.array(
        [int(np.sign(s(q, p))) for s in spec.switching_surfaces], dtype=int
    )


def surface_gradient(surface, q: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Finite-difference gradient of a switching surface in stacked (q,p)."""
    y = np.concatenate([q, p])
    n = q.size

    def s_of(yy):
        return np.array([surface(yy[:n], yy[n:])])

    return fd_jacobian(s_of, y)[0]


def _pin_point(spec, q, p, region, eps_rel=1e-7):
    """Move (q, p) minimally so every surface sign matches ``region``.

    Points within the eps band of a surface are pushed out to its edge even
    when their sign already agrees: branch selection via argmax needs a
    decisively signed point (the maximizer tie-break would otherwise pick an
    arbitrary branch right on the surface).
    """
    y = np.concatenate([q, p])
    n = q.size
    scale = 1.0 + float(np.max(np.abs(y)))
    band = eps_rel * scale
    for j, s in enumerate(spec.switching_surfaces):
        want = int(region[j])
        if want == 0:
            raise AmbiguousRegionError("region sign 0 cannot be pinned")
        val = float(s(y[:n], y[n:]))
        if np.sign(val) != want or abs(val) < band:
            g = surface_gradient(s, y[:n], y[n:])
            gg = float(np.dot(g, g))
            if gg == 0.0:
                raise AmbiguousRegionError("degenerate switching surface gradient")
            target = want * (abs(val) + band)
            y = y + (target - val) * g / gg
    return y[:n], y[n:]


def _branch_value_grad(spec, prob, t, q, p, region=None):
    """Value and gradient of the selected smooth branch at (q, p).

    If ``region`` is given, the branch valid on that side of the switching
    surfaces is used even when (q, p) lies on the other side (the argmax,
    or the user callable, is evaluated at a minimally shifted point).  For
    the maximized kind the returned value/gradient is still exact at
    (q, p): only the maximizer comes from the shifted point.
    """
    qe, pe = q, p
    if region is not None and len(spec.switching_surfaces):
        qe, pe = _pin_point(spec, q, p, region)
    if spec.kind == "maximized":
        ell_pin = CotangentPoint(qe, pe)
        mx = maximized_hamiltonian(prob, ell_pin)
        if mx.status != "ok":
            raise HamcheckError("maximized Hamiltonian is unbounded at a flow point")
        u = mx.argmax
        value = _pre_h_arrays(prob, q, p, u)
        Hp = prob.dynamics.value(q, u)
        Hq = prob.dynamics.dx(q, u).T @ p
        if prob.p0:
            Hq = Hq - prob.running_cost.dx(q, u)
        return value, Hq, Hp
    value, Hq, Hp = spec.func(t, qe, pe)
    return float(value), np.atleast_1d(np.asarray(Hq, float)), np.atleast_1d(np.asarray(Hp, float))


def branch_field(spec, prob, t, y, region=None):
    """(value, field) of the pinned branch on stacked coordinates y=(q,p)."""
    n = y.size // 2
    value, Hq, Hp = _branch_value_grad(spec, prob, t, y[:n], y[n:], region)
    return value, np.concatenate([Hp, -Hq])


def super_hamiltonian(
    spec: SuperHamiltonianSpec,
    prob: OCProblem,
    t: float,
    ell: CotangentPoint,
    side=None,
):
    """Value, Hamiltonian vector field and region id of H_t at ell.

    ``side`` selects the smooth piece when ell sits exactly on a switching
    surface: a scalar +-1 applied to every zero sign, or a full sign vector.
    Without it, on-surface evaluation raises AmbiguousRegionError.
    """
    prob.check_state(ell.q)
    signs = region_signs(spec, ell.q, ell.p)
    if np.any(signs == 0):
        if side is None:
            raise AmbiguousRegionError(
                "point lies on a switching surface; pass side=+1/-1 or a sign vector"
            )
        side = np.atleast_1d(np.asarray(side, dtype=int))
        if side.size == 1:
            side = np.full(signs.size, int(side[0]))
        signs = np.where(signs == 0, side, signs)
    region = tuple(int(s) for s in signs)
    value, Hq, Hp = _branch_value_grad(
        spec, prob, t, ell.q, ell.p, region if region else None
    )
    fld = hamiltonian_vector_field(HamiltonianGradient(Hq=Hq, Hp=Hp))
    return float(value), fld, region
