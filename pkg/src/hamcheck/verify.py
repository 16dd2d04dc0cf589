"""Certification checks built on top of a flow sheet.

The endpoint comparison function is

    Phi(t, x) = beta(x) + theta(t, rho(t, x)),    rho = inverse base projection,

whose first derivatives come out of the flow itself (no differencing):
grad_x Phi = d beta + covector over x, dt Phi = -H there.  The second
derivatives are assembled from symplectic pairings of the transported
Lagrangian tangent with the graph of d(-beta).  Margins of the
cost-comparison inequality, the dominating-Hamiltonian checks and the
dedicated minimum-time hypotheses all live here, feeding one report object.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .errors import HamcheckError, InversionError, NonsmoothHessianError, OutOfHullError
from .extremal import (
    ConstancyRecord,
    Extremal,
    MaximizationRecord,
    TransversalityRecord,
)
from .flowsheet import FlowSheet, InvertibilityVerdict
from .geometry import CotangentPoint, symplectic_form_arrays
from .problem import (
    OCProblem,
    SuperHamiltonianSpec,
    branch_field,
    maximized_hamiltonian,
    region_signs,
)


@dataclass
class PhiProbe:
    """Value and derivatives of the endpoint comparison function at (t, x)."""

    t: float
    x: np.ndarray
    value: float
    grad_x: np.ndarray
    dt: Optional[float]
    hess: Optional[np.ndarray]
    hess_asymmetry: float = 0.0

    @property
    def grad_norm(self) -> float:
        g = float(np.linalg.norm(self.grad_x))
        if self.dt is not None:
            g = float(np.hypot(g, self.dt))
        return g


def _reference_side_regions(spec: SuperHamiltonianSpec, ext: Extremal):
    """Region sign vectors along the reference grid, zeros borrowed backward."""
    if not spec.switching_surfaces:
        return [None] * ext.grid.size
    regions = []
    last = None
    for i in range(ext.grid.size):
        s = region_signs(spec, ext.qs[i], ext.ps[i])
        if np.any(s == 0):
            if last is not None:
                s = np.where(s == 0, last, s)
            else:
                s = np.where(s == 0, 1, s)
        regions.append(tuple(int(v) for v in s))
        last = np.asarray(regions[-1])
    return regions


def phi_value(sheet: FlowSheet, ext: Extremal, t: float, x) -> float:
    """beta(x) plus the action over the inverted base point."""
    q0 = sheet.invert_projection(t, x)
    return ext.beta_f(x) + sheet.theta_at(t, q0)


def _neighbor_regions_agree(sheet: FlowSheet, t: float, q0) -> bool:
    q0 = np.atleast_1d(np.asarray(q0, float))
    spacing = np.array([a[1] - a[0] for a in sheet.param_axes])
    close = np.all(np.abs(sheet.params - q0) <= 2.0 * spacing + 1e-12, axis=1)
    regions = {sheet.columns[i].region_at(t) for i in np.nonzero(close)[0]}
    return len(regions) <= 1


def phi_probe(
    sheet: FlowSheet,
    prob: OCProblem,
    ext: Extremal,
    t: float,
    x,
    want_hess: bool = True,
) -> PhiProbe:
    """Probe the endpoint comparison function at (t, x) inside the tube.

    First derivatives are read off the flow: the x-gradient is
    d beta(x) + (covector over x) and the t-derivative is minus the driving
    Hamiltonian there (reported in free-time mode only).  The Hessian blocks
    are symplectic pairings of transported tangents; they require the flow
    to be twice differentiable across the interpolation footprint, otherwise
    NonsmoothHessianError is raised.
    """
    x = np.atleast_1d(np.asarray(x, float))
    n = sheet.n
    q0 = sheet.invert_projection(t, x)
    y = sheet._state_interp(t, q0)
    p = y[n : 2 * n]
    theta = float(y[-1])
    beta = ext.beta_f
    value = beta(x) + theta
    grad_x = beta.grad(x) + p

    free_time = prob.time_mode == "free"
    hval, fld = branch_field(sheet.spec, prob, t, y[: 2 * n], None)
    dt = -hval if free_time else None

    hess = None
    asym = 0.0
    if want_hess:
        if sheet.spec.switching_surfaces and not _neighbor_regions_agree(sheet, t, q0):
            raise NonsmoothHessianError(
                f"flow is not twice differentiable across the stencil at (t={t}, x={x})"
            )
        dell = y[2 * n : 2 * n + 2 * n * n].reshape(2 * n, n)
        jac = dell[:n]
        transported = dell @ np.linalg.inv(jac)  # columns: transported basis over x
        bhess = beta.hess(x)
        hxx = np.empty((n, n))
        for i in range(n):
            vi = transported[:, i]
            for j in range(n):
                wj = np.concatenate([np.eye(n)[j], -bhess[:, j]])
                hxx[i, j] = symplectic_form_arrays(vi, wj)
        if free_time:
            htx = np.array(
                [symplectic_form_arrays(fld, transported[:, j]) for j in range(n)]
            )
            fhat = fld[:n]
            dt_h = _time_derivative_of_h(sheet.spec, prob, t, y[: 2 * n])
            htt = -(dt_h + symplectic_form_arrays(transported @ fhat, fld))
            hess = np.zeros((n + 1, n + 1))
            hess[0, 0] = htt
            hess[0, 1:] = htx
            hess[1:, 0] = htx
            hess[1:, 1:] = hxx
        else:
            hess = hxx
        asym = float(np.max(np.abs(hess - hess.T)))
        hess = 0.5 * (hess + hess.T)
    return PhiProbe(
        t=float(t), x=x, value=float(value), grad_x=grad_x, dt=dt, hess=hess, hess_asymmetry=asym
    )


def _time_derivative_of_h(spec, prob, t, y2n) -> float:
    """Partial time derivative of the driving Hamiltonian at a fixed point.

    Zero for the maximized kind (the problem data are time independent);
    central differences for user-supplied time-dependent Hamiltonians.
    """
    if spec.kind == "maximized":
        return 0.0
    h = 1e-6 * (1.0 + abs(t))
    vp, _ = branch_field(spec, prob, t + h, y2n, None)
    vm, _ = branch_field(spec, prob, t - h, y2n, None)
    return (vp - vm) / (2 * h)


# -- Assumption evidence ------------------------------------------------------


@dataclass
class Assumption2Record:
    """Sampled Lipschitz evidence for the flow and the action integrand."""

    flow_lipschitz: float
    integrand_lipschitz: float
    samples: int

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.flow_lipschitz) and np.isfinite(self.integrand_lipschitz))


def check_assumption2(sheet: FlowSheet, n_samples: int = 200, seed: int = 0) -> Assumption2Record:
    """Max difference quotients of the flow and of the action integrand."""
    rng = np.random.Generator(np.random.Philox(seed))
    n = sheet.n
    lo = np.array([a[0] for a in sheet.param_axes])
    hi = np.array([a[-1] for a in sheet.param_axes])

    def sample():
        t = rng.uniform(0.0, sheet.horizon)
        q0 = rng.uniform(lo, hi)
        y = sheet._state_interp(t, q0)
        val, fld = branch_field(sheet.spec, sheet.prob, t, y[: 2 * n], None)
        integrand = float(np.dot(y[n : 2 * n], fld[:n])) - val
        return np.concatenate([[t], q0]), y[: 2 * n], integrand

    flow_lip = 0.0
    int_lip = 0.0
    prev = sample()
    for _ in range(n_samples):
        cur = sample()
        d = float(np.linalg.norm(cur[0] - prev[0]))
        if d > 1e-9:
            flow_lip = max(flow_lip, float(np.linalg.norm(cur[1] - prev[1])) / d)
            int_lip = max(int_lip, abs(cur[2] - prev[2]) / d)
        prev = cur
    return Assumption2Record(flow_lipschitz=flow_lip, integrand_lipschitz=int_lip, samples=n_samples)


@dataclass
class Assumption3Record:
    """Margins of the dominating-Hamiltonian conditions.

    (a) H - F_max >= 0 along the flow from the Lagrangian graph;
    (b) H equals the reference and the maximized Hamiltonian along the
        reference extremal;
    (c) the Hamiltonian vector fields agree along the reference extremal.
    """

    margin_flow: float
    residual_value: float
    residual_field: float
    unbounded: bool
    strengthened_margin: Optional[float]
    tol_flow: float
    tol_reference: float

    @property
    def passed_flow(self) -> bool:
        return (not self.unbounded) and self.margin_flow >= -self.tol_flow

    @property
    def passed_reference(self) -> bool:
        return max(self.residual_value, self.residual_field) <= self.tol_reference

    @property
    def passed(self) -> bool:
        return self.passed_flow and self.passed_reference


def check_assumption3(
    spec: SuperHamiltonianSpec,
    prob: OCProblem,
    ext: Extremal,
    sheet: FlowSheet,
    n_samples: int = 200,
    seed: int = 0,
    strengthened: bool = False,
    strengthened_radius: float = 0.05,
    tol_flow: float = 1e-8,
    tol_reference: float = 1e-8,
) -> Assumption3Record:
    """Domination along the flow plus agreement along the reference."""
    rng = np.random.Generator(np.random.Philox(seed))
    n = sheet.n
    lo = np.array([a[0] for a in sheet.param_axes])
    hi = np.array([a[-1] for a in sheet.param_axes])

    margin_flow = np.inf
    unbounded = False
    for _ in range(n_samples):
        t = rng.uniform(0.0, sheet.horizon)
        q0 = rng.uniform(lo, hi)
        y = sheet._state_interp(t, q0)
        hval, _ = branch_field(spec, prob, t, y[: 2 * n], None)
        mx = maximized_hamiltonian(prob, CotangentPoint(y[:n], y[n : 2 * n]))
        if mx.status != "ok":
            unbounded = True
            margin_flow = -np.inf
            break
        margin_flow = min(margin_flow, hval - mx.value)

    regions = _reference_side_regions(spec, ext)
    res_val = 0.0
    res_fld = 0.0
    for i, t in enumerate(ext.grid):
        q, p = ext.qs[i], ext.ps[i]
        y = np.concatenate([q, p])
        hval, hfld = branch_field(spec, prob, t, y, regions[i])
        u = ext.controls[i]
        fq = prob.dynamics.value(q, u)
        gq = prob.dynamics.dx(q, u).T @ p
        if prob.p0:
            gq = gq - prob.running_cost.dx(q, u)
        fhat_val = float(np.dot(p, fq)) - (prob.running_cost.rate(q, u) if prob.p0 else 0.0)
        fhat_fld = np.concatenate([fq, -gq])
        mx = maximized_hamiltonian(prob, CotangentPoint(q, p))
        if mx.status != "ok":
            unbounded = True
            continue
        res_val = max(res_val, abs(hval - fhat_val), abs(hval - mx.value))
        res_fld = max(res_fld, float(np.max(np.abs(hfld - fhat_fld))))

    strengthened_margin = None
    if strengthened:
        worst = np.inf
        for _ in range(n_samples):
            i = int(rng.integers(0, ext.grid.size))
            t = float(ext.grid[i])
            dq = rng.uniform(-strengthened_radius, strengthened_radius, size=n)
            dp = rng.uniform(-strengthened_radius, strengthened_radius, size=n)
            q, p = ext.qs[i] + dq, ext.ps[i] + dp
            y = np.concatenate([q, p])
            try:
                hval, _ = branch_field(spec, prob, t, y, None)
                mx = maximized_hamiltonian(prob, CotangentPoint(q, p))
            except HamcheckError:
                continue
            if mx.status != "ok":
                continue
            worst = min(worst, hval - mx.value)
        strengthened_margin = float(worst)

    return Assumption3Record(
        margin_flow=float(margin_flow),
        residual_value=float(res_val),
        residual_field=float(res_fld),
        unbounded=unbounded,
        strengthened_margin=strengthened_margin,
        tol_flow=tol_flow,
        tol_reference=tol_reference,
    )


# -- Cost comparison ----------------------------------------------------------


@dataclass
class Theorem1Record:
    """Margins of the cost-comparison inequality over sampled trajectories."""

    margins: np.ndarray
    excluded: int
    tol: float
    reference_margin: Optional[float] = None

    @property
    def min_margin(self) -> float:
        return float(np.min(self.margins)) if self.margins.size else np.nan

    @property
    def mean_margin(self) -> float:
        return float(np.mean(self.margins)) if self.margins.size else np.nan

    @property
    def passed(self) -> bool:
        return self.margins.size > 0 and self.min_margin >= -self.tol


def check_theorem1(
    sheet: FlowSheet,
    prob: OCProblem,
    ext: Extremal,
    trajectories,
    tol: float = 1e-7,
    tube_check_points: int = 33,
) -> Theorem1Record:
    """Compare p0*(J - J_hat) against the comparison-function difference.

    A trajectory enters the statistics only if its whole graph can be
    inverted through the sheet (stays inside the certified tube); trajectories
    that exit are excluded and counted.
    """
    phi_ref = phi_value(sheet, ext, ext.horizon, ext.xf)
    margins: List[float] = []
    excluded = 0
    reference_margin = None
    for traj in trajectories:
        try:
            for t in np.linspace(0.0, traj.horizon, tube_check_points):
                sheet.invert_projection(t, traj.state_at(t))
            lhs = prob.p0 * (traj.cost - ext.cost_hat)
            rhs = phi_value(sheet, ext, traj.horizon, traj.state_at(traj.horizon)) - phi_ref
        except (InversionError, OutOfHullError):
            excluded += 1
            continue
        margin = lhs - rhs
        margins.append(margin)
        if getattr(traj, "is_reference", False):
            reference_margin = margin
    return Theorem1Record(
        margins=np.asarray(margins, float),
        excluded=excluded,
        tol=tol,
        reference_margin=reference_margin,
    )


@dataclass
class Theorem2Record:
    """Second-order sufficiency verdict at the reference endpoint."""

    dphi_norm: float
    restricted_eigs: np.ndarray
    eps_pd: float
    dphi_tol: float
    verdict: str  # "certified" | "inconclusive"

    @property
    def passed(self) -> bool:
        return self.verdict == "certified"


def check_theorem2(
    probe: PhiProbe,
    prob: OCProblem,
    eps_pd: float = 1e-6,
    dphi_tol: float = 1e-6,
) -> Theorem2Record:
    """Critical point plus positive-definite restricted Hessian.

    The Hessian is restricted to the tangent of {(t, x): x in N_f} (the
    time axis joins in free-time mode).  A strict minimum of the comparison
    function there certifies strong local optimality; indefiniteness or
    near-singularity yields 'inconclusive', never 'refuted'.
    """
    if prob.p0 != 1:
        raise HamcheckError("the sufficiency test applies to the normal case only")
    basis = prob.Nf.tangent(probe.x)
    k = basis.shape[0]
    free_time = probe.dt is not None
    if probe.grad_norm > dphi_tol:
        return Theorem2Record(
            dphi_norm=probe.grad_norm,
            restricted_eigs=np.zeros(0),
            eps_pd=eps_pd,
            dphi_tol=dphi_tol,
            verdict="inconclusive",
        )
    dim = k + (1 if free_time else 0)
    if dim == 0:
        return Theorem2Record(
            dphi_norm=probe.grad_norm,
            restricted_eigs=np.zeros(0),
            eps_pd=eps_pd,
            dphi_tol=dphi_tol,
            verdict="certified",
        )
    if probe.hess is None:
        raise HamcheckError("theorem-2 check needs a probe with a Hessian")
    n = probe.x.size
    vecs = []
    if free_time:
        e = np.zeros(n + 1)
        e[0] = 1.0
        vecs.append(e)
        for b in basis:
            vecs.append(np.concatenate([[0.0], b]))
    else:
        vecs = list(basis)
    V = np.stack(vecs)
    restricted = V @ probe.hess @ V.T
    eigs = np.linalg.eigvalsh(0.5 * (restricted + restricted.T))
    verdict = "certified" if np.min(eigs) >= eps_pd else "inconclusive"
    return Theorem2Record(
        dphi_norm=probe.grad_norm,
        restricted_eigs=eigs,
        eps_pd=eps_pd,
        dphi_tol=dphi_tol,
        verdict=verdict,
    )


# -- Minimum time -------------------------------------------------------------


@dataclass
class MintimeRecord:
    """Sampled hypotheses of the dedicated minimum-time test."""

    lipschitz_estimate: float
    orthogonality_residual: float
    samples_used: int
    samples_skipped: int
    tol_orth: float

    @property
    def passed(self) -> bool:
        return np.isfinite(self.lipschitz_estimate) and self.orthogonality_residual <= self.tol_orth


def check_mintime(
    sheet: FlowSheet,
    prob: OCProblem,
    ext: Extremal,
    n_samples: int = 200,
    seed: int = 0,
    time_radius: Optional[float] = None,
    state_radius: Optional[float] = None,
    tol_orth: float = 1e-7,
) -> MintimeRecord:
    """Sampled evidence for the minimum-time sufficiency hypotheses.

    (1) a Lipschitz constant for (t, x) -> H at the lifted point over x in a
    neighbourhood of the reference endpoint, from max difference quotients;
    (2) orthogonality of the lifted covector to the final-manifold tangent
    space at sampled on-manifold points (vacuous for a fixed final point).
    """
    if prob.p0 != 1 or prob.time_mode != "free":
        raise HamcheckError("the minimum-time test needs the normal, free-time case")
    xr = np.asarray(ext.x0, float)
    if abs(prob.running_cost.rate(xr, ext.controls[0]) - 1.0) > 1e-12 or abs(
        prob.cost0(ext.x0)
    ) > 1e-12 or abs(prob.costf(ext.xf)) > 1e-12:
        raise HamcheckError("minimum-time test requires unit running cost and zero endpoint costs")

    rng = np.random.Generator(np.random.Philox(seed))
    n = sheet.n
    t_hat = ext.horizon
    if time_radius is None:
        time_radius = 0.05 * t_hat
    if state_radius is None:
        state_radius = 0.25 * sheet.chart.radius

    def h_over(t, x):
        q0 = sheet.invert_projection(t, x)
        y = sheet._state_interp(t, q0)
        val, _ = branch_field(sheet.spec, prob, t, y[: 2 * n], None)
        return val

    pts = []
    skipped = 0
    while len(pts) < n_samples and skipped < 10 * n_samples:
        t = rng.uniform(max(0.0, t_hat - time_radius), min(sheet.horizon, t_hat + time_radius))
        x = ext.xf + rng.uniform(-state_radius, state_radius, size=n)
        try:
            pts.append((t, x, h_over(t, x)))
        except (InversionError, OutOfHullError):
            skipped += 1
    lip = 0.0
    for (t1, x1, v1), (t2, x2, v2) in zip(pts[:-1], pts[1:]):
        d = float(np.hypot(t2 - t1, np.linalg.norm(x2 - x1)))
        if d > 1e-10:
            lip = max(lip, abs(v2 - v1) / d)

    basis = prob.Nf.tangent(ext.xf)
    orth = 0.0
    if basis.shape[0]:
        for _ in range(n_samples):
            t = rng.uniform(max(0.0, t_hat - time_radius), min(sheet.horizon, t_hat + time_radius))
            c = rng.uniform(-state_radius, state_radius, size=basis.shape[0])
            x = ext.xf + basis.T @ c
            if prob.Nf.distance(x) > 1e-9:
                skipped += 1
                continue
            try:
                q0 = sheet.invert_projection(t, x)
            except (InversionError, OutOfHullError):
                skipped += 1
                continue
            p = sheet._state_interp(t, q0)[n : 2 * n]
            orth = max(orth, float(np.max(np.abs(basis @ p))))
    return MintimeRecord(
        lipschitz_estimate=float(lip),
        orthogonality_residual=float(orth),
        samples_used=len(pts),
        samples_skipped=skipped,
        tol_orth=tol_orth,
    )


# -- Report -------------------------------------------------------------------


@dataclass
class VerificationReport:
    """Everything a certification run produces, ready for serialization."""

    problem: str
    verdict: str = "inconclusive"  # "certified" | "refuted-at-step" | "inconclusive"
    failing_check: Optional[str] = None
    pmp_transversality: Optional[TransversalityRecord] = None
    pmp_maximization: Optional[MaximizationRecord] = None
    pmp_constancy: Optional[ConstancyRecord] = None
    assumption2: Optional[Assumption2Record] = None
    assumption3: Optional[Assumption3Record] = None
    assumption4: Optional[InvertibilityVerdict] = None
    phi: Optional[PhiProbe] = None
    theorem1: Optional[Theorem1Record] = None
    theorem2: Optional[Theorem2Record] = None
    mintime: Optional[MintimeRecord] = None
    extras: dict = field(default_factory=dict)
