"""Comparison-trajectory generators.

Three families feed the cost-comparison sampling and the minimum-time
corroboration: needle variations (control replaced on a short window),
exactly admissible path bumps for fully actuated systems (state perturbed,
control recovered pointwise), and perturbed bang structures for minimum
time.  Randomness comes from a counter-based generator seeded explicitly,
so every family is replayable from its spec.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import minimize_scalar

from .errors import CapabilityError, DivergenceError, DomainError
from .extremal import Extremal, ReferenceControl
from .problem import OCProblem

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


@dataclass(frozen=True)
class PerturbationSpec:
    """How to build a comparison family: kind, size, amplitude, seed, tube."""

    kind: str  # "needle" | "path-based" | "bounded-variation"
    amplitude: float
    count: int
    seed: int
    tube_radius: float = 0.1

    def __post_init__(self):
        if self.amplitude <= 0:
            raise DomainError("perturbation amplitude must be positive")
        if self.count < 1:
            raise DomainError("perturbation count must be at least 1")
        if self.kind not in ("needle", "path-based", "bounded-variation"):
            raise DomainError(f"unknown perturbation kind {self.kind!r}")

    def rng(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(self.seed))


@dataclass
class Trajectory:
    """An integrated comparison trajectory with its cost and bookkeeping."""

    horizon: float
    state_fn: Callable[[float], np.ndarray]
    control_fn: Callable[[float], np.ndarray]
    cost: float
    nf_residual: float
    in_tube: bool
    accepted: bool
    control_desc: dict = field(default_factory=dict)
    is_reference: bool = False
    miss: Optional[float] = None
    arrival: Optional[float] = None

    def state_at(self, t: float) -> np.ndarray:
        return self.state_fn(float(t))

    def control_at(self, t: float) -> np.ndarray:
        return self.control_fn(float(t))


@dataclass
class Family:
    """A generated family with rejection accounting: accepted + rejected = count."""

    samples: List[Trajectory]
    rejected: int

    @property
    def accepted(self) -> List[Trajectory]:
        return [s for s in self.samples if s.accepted]

    @property
    def accepted_count(self) -> int:
        return len(self.accepted)

    def export_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["index", "accepted", "horizon", "cost", "nf_residual", "miss", "arrival"]
            )
            for i, s in enumerate(self.samples):
                writer.writerow(
                    [
                        i,
                        int(s.accepted),
                        f"{s.horizon:.12g}",
                        f"{s.cost:.12g}",
                        f"{s.nf_residual:.3e}",
                        "" if s.miss is None else f"{s.miss:.6e}",
                        "" if s.arrival is None else f"{s.arrival:.12g}",
                    ]
                )


def _integrate_piecewise(prob: OCProblem, pieces, x0, rtol=1e-10, atol=1e-10):
    """Integrate state + running cost through constant-control pieces.

    ``pieces`` is a list of (t_end, u); returns (segment list, final y).
    """
    n = prob.n
    y = np.concatenate([np.asarray(x0, float), [0.0]])
    t0 = 0.0
    segments = []
    for (t1, u) in pieces:
        if t1 - t0 < 1e-14:
            continue
        u = np.atleast_1d(np.asarray(u, float))

        def rhs(t, yy, u=u):
            return np.concatenate(
                [prob.dynamics.value(yy[:n], u), [prob.running_cost.rate(yy[:n], u)]]
            )

        sol = solve_ivp(rhs, (t0, t1), y, method="RK45", rtol=rtol, atol=atol, dense_output=True)
        if not sol.success:
            raise DivergenceError(f"trajectory integration failed: {sol.message}")
        segments.append((t0, t1, sol.sol))
        y = sol.y[:, -1]
        t0 = t1
    return segments, y


def _segments_eval(segments, t):
    for (t0, t1, sol) in segments:
        if t <= t1 + 1e-14:
            return sol(min(max(t, t0), t1))
    return segments[-1][2](segments[-1][1])


def _gauss_integral(fun, a, b, panels=64):
    """Composite 16-point Gauss-Legendre quadrature (fixed order, deterministic)."""
    edges = np.linspace(a, b, panels + 1)
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        mid = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo)
        for z, w in zip(_GL_NODES, _GL_WEIGHTS):
            total += w * half * fun(mid + half * z)
    return total


def dynamics_residual(prob: OCProblem, traj: Trajectory, panels: int = 64) -> float:
    """Independent quadrature check that a trajectory solves its dynamics.

    Integrates f(x(t), u(t)) with composite Gauss panels between sample
    checkpoints and compares against the stored state increments.
    """
    checkpoints = np.linspace(0.0, traj.horizon, 9)
    worst = 0.0
    for a, b in zip(checkpoints[:-1], checkpoints[1:]):
        inc = np.zeros(prob.n)
        for j in range(prob.n):
            inc[j] = _gauss_integral(
                lambda t, j=j: float(
                    prob.dynamics.value(traj.state_at(t), traj.control_at(t))[j]
                ),
                a,
                b,
                panels=panels // 8 + 1,
            )
        worst = max(worst, float(np.max(np.abs(traj.state_at(b) - traj.state_at(a) - inc))))
    return worst


def make_reference_trajectory(prob: OCProblem, ext: Extremal) -> Trajectory:
    """Re-integrate the reference control open loop; used as the zero sample."""
    uref = ext.uref
    pieces = []
    for arc in uref.arcs:
        if callable(arc.law):
            # fall back to the stored lift for feedback laws
            return Trajectory(
                horizon=ext.horizon,
                state_fn=lambda t: ext.lambda_at(t).q,
                control_fn=lambda t: ext.control_at(t),
                cost=ext.cost_hat,
                nf_residual=prob.Nf.distance(ext.xf),
                in_tube=True,
                accepted=True,
                control_desc={"kind": "reference"},
                is_reference=True,
            )
        pieces.append((arc.end_time, arc.law))
    segments, y_end = _integrate_piecewise(prob, pieces, ext.x0)
    n = prob.n
    cost = prob.cost0(ext.x0) + prob.costf(y_end[:n]) + float(y_end[n])
    return Trajectory(
        horizon=ext.horizon,
        state_fn=lambda t: _segments_eval(segments, t)[:n],
        control_fn=lambda t: uref.control_at(t),
        cost=cost,
        nf_residual=prob.Nf.distance(y_end[:n]),
        in_tube=True,
        accepted=True,
        control_desc={"kind": "reference"},
        is_reference=True,
    )


def _sample_admissible_control(prob: OCProblem, rng) -> np.ndarray:
    U = prob.U
    if U.kind == "finite":
        return U.values[int(rng.integers(0, U.values.shape[0]))].copy()
    return rng.uniform(U.lower, U.upper)


def needle_family(
    prob: OCProblem,
    uref: ReferenceControl,
    ext: Extremal,
    spec: PerturbationSpec,
    nf_tol: float = 1e-8,
) -> Family:
    """Replace the reference control on a short random window.

    A sample is accepted for cost comparison only when its graph stays in
    the tube around the reference and its endpoint satisfies the final
    constraint; everything else is kept (with its endpoint residual) for
    inspection and rejected-sample accounting.
    """
    if spec.kind != "needle":
        raise DomainError("needle_family expects a spec of kind 'needle'")
    for arc in uref.arcs:
        if callable(arc.law):
            raise CapabilityError("needle variations need piecewise-constant reference laws")
    rng = spec.rng()
    horizon = uref.horizon
    samples: List[Trajectory] = []
    rejected = 0
    for _ in range(spec.count):
        t_a = float(rng.uniform(0.0, horizon))
        width = float(rng.uniform(0.0, spec.amplitude))
        t_b = min(t_a + width, horizon)
        u_new = _sample_admissible_control(prob, rng)

        bounds = sorted({a.end_time for a in uref.arcs} | {t_a, t_b})
        pieces = []
        for t1 in bounds:
            if t1 <= 0.0:
                continue
            t_mid = 0.5 * ((pieces[-1][0] if pieces else 0.0) + t1)
            u = u_new if (t_a <= t_mid <= t_b) else uref.control_at(t_mid)
            pieces.append((t1, u))
        segments, y_end = _integrate_piecewise(prob, pieces, ext.x0)
        n = prob.n
        cost = prob.cost0(ext.x0) + prob.costf(y_end[:n]) + float(y_end[n])
        state_fn = lambda t, seg=segments: _segments_eval(seg, t)[:n]

        def control_fn(t, ta=t_a, tb=t_b, un=u_new):
            return un if ta <= t <= tb else uref.control_at(t)

        ts = np.linspace(0.0, horizon, 65)
        dev = max(
            float(np.max(np.abs(state_fn(t) - ext.lambda_at(t).q))) for t in ts
        )
        nf_res = prob.Nf.distance(y_end[:n])
        ok = dev <= spec.tube_radius and nf_res <= nf_tol
        if not ok:
            rejected += 1
        samples.append(
            Trajectory(
                horizon=horizon,
                state_fn=state_fn,
                control_fn=control_fn,
                cost=cost,
                nf_residual=nf_res,
                in_tube=dev <= spec.tube_radius,
                accepted=ok,
                control_desc={"kind": "needle", "window": [t_a, t_b], "value": u_new.tolist()},
            )
        )
    return Family(samples=samples, rejected=rejected)


class _Bump:
    """One random smooth bump with endpoint-compatible boundary values.

    h(t) = v0 (1 - s) + vf s + sum_k c_k sin(k pi s),  s = t / horizon,
    scaled so its sup norm is a random fraction of the amplitude.
    """

    def __init__(self, ext: Extremal, prob: OCProblem, rng, amplitude: float, modes: int = 3):
        n = prob.n
        self.horizon = ext.horizon
        t0_basis = prob.N0.tangent(ext.x0)
        tf_basis = prob.Nf.tangent(ext.xf)
        self.v0 = (
            t0_basis.T @ rng.normal(size=t0_basis.shape[0]) if t0_basis.shape[0] else np.zeros(n)
        )
        self.vf = (
            tf_basis.T @ rng.normal(size=tf_basis.shape[0]) if tf_basis.shape[0] else np.zeros(n)
        )
        self.coeffs = rng.normal(size=(modes, n))
        self.scale = 1.0
        grid = np.linspace(0.0, self.horizon, 201)
        peak = float(np.max(np.abs(self.value(grid)))) if n else 0.0
        self.scale = 0.0 if peak == 0.0 else amplitude * float(rng.uniform(0.1, 1.0)) / peak

    def value(self, ts) -> np.ndarray:
        """Bump values at times ts, shape (len(ts), n)."""
        ts = np.atleast_1d(np.asarray(ts, float))
        s = ts / self.horizon
        val = np.outer(1.0 - s, self.v0) + np.outer(s, self.vf)
        for k in range(self.coeffs.shape[0]):
            val = val + np.outer(np.sin((k + 1) * np.pi * s), self.coeffs[k])
        return self.scale * val

    def slope(self, ts) -> np.ndarray:
        ts = np.atleast_1d(np.asarray(ts, float))
        s = ts / self.horizon
        val = np.tile((self.vf - self.v0) / self.horizon, (ts.size, 1))
        for k in range(self.coeffs.shape[0]):
            w = (k + 1) * np.pi / self.horizon
            val = val + np.outer(w * np.cos((k + 1) * np.pi * s), self.coeffs[k])
        return self.scale * val


def path_family(prob: OCProblem, ext: Extremal, spec: PerturbationSpec) -> Family:
    """Exactly admissible perturbations for fully actuated systems.

    The state is shifted by a smooth bump compatible with both endpoint
    manifolds and the control is recovered pointwise from the velocity, so
    the dynamics hold exactly; samples whose recovered control leaves the
    admissible set are rejected.  Reference states and velocities are
    precomputed on the shared quadrature grid, one dense-output sweep for
    the whole family.
    """
    if spec.kind != "path-based":
        raise DomainError("path_family expects a spec of kind 'path-based'")
    if not prob.fully_actuated:
        raise CapabilityError("path-based perturbations need a fully actuated problem")
    rng = spec.rng()
    horizon = ext.horizon
    n = prob.n
    samples: List[Trajectory] = []
    rejected = 0

    # shared composite Gauss grid for the running cost, plus a check grid
    panels = 24
    edges = np.linspace(0.0, horizon, panels + 1)
    mids = 0.5 * (edges[:-1] + edges[1:])
    halves = 0.5 * np.diff(edges)
    t_gauss = (mids[:, None] + halves[:, None] * _GL_NODES[None, :]).ravel()
    w_gauss = (halves[:, None] * _GL_WEIGHTS[None, :]).ravel()
    t_check = np.linspace(0.0, horizon, 65)

    def ref_state(t):
        return ext.lambda_at(t).q

    ref_q_gauss = np.stack([ref_state(t) for t in t_gauss])
    ref_v_gauss = np.stack(
        [prob.dynamics.value(q, ext.control_at(t)) for t, q in zip(t_gauss, ref_q_gauss)]
    )
    ref_q_check = np.stack([ref_state(t) for t in t_check])
    ref_v_check = np.stack(
        [prob.dynamics.value(q, ext.control_at(t)) for t, q in zip(t_check, ref_q_check)]
    )

    for _ in range(spec.count):
        bump = _Bump(ext, prob, rng, spec.amplitude)

        def state_fn(t, bump=bump):
            return ref_state(t) + bump.value([t])[0]

        def control_fn(t, bump=bump):
            q = ref_state(t) + bump.value([t])[0]
            v = prob.dynamics.value(ref_state(t), ext.control_at(t)) + bump.slope([t])[0]
            return prob.control_from_velocity(q, v)

        h_check = bump.value(t_check)
        dh_check = bump.slope(t_check)
        ok_control = True
        for i in range(t_check.size):
            u = prob.control_from_velocity(ref_q_check[i] + h_check[i], ref_v_check[i] + dh_check[i])
            if not prob.U.contains(u):
                ok_control = False
                break

        h_gauss = bump.value(t_gauss)
        dh_gauss = bump.slope(t_gauss)
        running = 0.0
        for i in range(t_gauss.size):
            q = ref_q_gauss[i] + h_gauss[i]
            u = prob.control_from_velocity(q, ref_v_gauss[i] + dh_gauss[i])
            running += w_gauss[i] * prob.running_cost.rate(q, u)

        x_start = ref_q_check[0] + h_check[0]
        x_end = ref_q_check[-1] + h_check[-1]
        cost = prob.cost0(x_start) + prob.costf(x_end) + running
        nf_res = prob.Nf.distance(x_end)
        peak = float(np.max(np.abs(h_check)))
        in_tube = peak <= spec.tube_radius + 1e-12
        ok = ok_control and in_tube and nf_res <= 1e-8
        if not ok:
            rejected += 1
        samples.append(
            Trajectory(
                horizon=horizon,
                state_fn=state_fn,
                control_fn=control_fn,
                cost=cost,
                nf_residual=nf_res,
                in_tube=in_tube,
                accepted=ok,
                control_desc={"kind": "path-based"},
            )
        )
    return Family(samples=samples, rejected=rejected)


def mintime_competitors(
    prob: OCProblem,
    ext: Extremal,
    spec: PerturbationSpec,
    horizon_factor: float = 1.3,
) -> Family:
    """Perturb the bang structure: switch times and control levels.

    Each competitor reports the time of its closest approach to the final
    manifold and the miss distance there; the first sample is the
    unperturbed reference.  Level perturbations shrink the control toward
    the interior so admissibility is preserved.
    """
    if spec.kind != "bounded-variation":
        raise DomainError("mintime_competitors expects a spec of kind 'bounded-variation'")
    uref = ext.uref
    for arc in uref.arcs:
        if callable(arc.law):
            raise CapabilityError("competitor generation needs piecewise-constant laws")
    rng = spec.rng()
    t_hat = ext.horizon
    t_max = horizon_factor * t_hat + 2.0 * spec.amplitude
    n = prob.n
    samples: List[Trajectory] = []

    base_switches = [a.end_time for a in uref.arcs[:-1]]
    base_values = [np.atleast_1d(np.asarray(a.law, float)) for a in uref.arcs]

    for i in range(spec.count):
        if i == 0:
            d_switch = np.zeros(len(base_switches))
            shrink = np.zeros(len(base_values))
        else:
            d_switch = rng.uniform(-spec.amplitude, spec.amplitude, size=len(base_switches))
            shrink = rng.uniform(0.0, spec.amplitude, size=len(base_values))
        switches = [max(1e-6, s + d) for s, d in zip(base_switches, d_switch)]
        switches = sorted(switches)
        values = [(1.0 - eta) * v for eta, v in zip(shrink, base_values)]
        pieces = [(t1, v) for t1, v in zip(switches + [t_max], values)]
        segments, y_end = _integrate_piecewise(prob, pieces, ext.x0)
        state_fn = lambda t, seg=segments: _segments_eval(seg, t)[:n]

        def control_fn(t, sw=switches, vals=values):
            for t1, v in zip(sw, vals[:-1]):
                if t <= t1:
                    return v
            return vals[-1]

        ts = np.linspace(0.0, t_max, 1001)
        dists = np.array([prob.Nf.distance(state_fn(t)) for t in ts])
        k = int(np.argmin(dists))
        lo = ts[max(0, k - 1)]
        hi = ts[min(ts.size - 1, k + 1)]
        res = minimize_scalar(
            lambda t: prob.Nf.distance(state_fn(t)), bounds=(lo, hi), method="bounded",
            options={"xatol": 1e-12},
        )
        arrival = float(res.x)
        miss = float(res.fun)
        samples.append(
            Trajectory(
                horizon=t_max,
                state_fn=state_fn,
                control_fn=control_fn,
                cost=float(_segments_eval(segments, arrival)[n]),
                nf_residual=miss,
                in_tube=True,
                accepted=True,
                control_desc={
                    "kind": "bounded-variation",
                    "switches": list(switches),
                    "shrink": shrink.tolist(),
                },
                is_reference=(i == 0),
                miss=miss,
                arrival=arrival,
            )
        )
    return Family(samples=samples, rejected=0)


@dataclass
class CorroborationRecord:
    """Minimum-time corroboration over a competitor pool."""

    hitters: int
    violations: int
    min_arrival: Optional[float]
    eps_hit: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.violations == 0


def corroborate_mintime(
    family: Family, t_hat: float, eps_hit: float = 1e-4, tol: float = 1e-6
) -> CorroborationRecord:
    """Every competitor that reaches the target within eps_hit must need
    at least t_hat - tol time to get there."""
    hitters = 0
    violations = 0
    min_arrival = None
    for s in family.samples:
        if s.miss is None or s.miss > eps_hit:
            continue
        hitters += 1
        if min_arrival is None or s.arrival < min_arrival:
            min_arrival = s.arrival
        if s.arrival < t_hat - tol:
            violations += 1
    return CorroborationRecord(
        hitters=hitters,
        violations=violations,
        min_arrival=min_arrival,
        eps_hit=eps_hit,
        tol=tol,
    )
