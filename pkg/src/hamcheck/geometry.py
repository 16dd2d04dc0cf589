"""Chart-level cotangent-bundle primitives.

Everything lives in a single coordinate chart: the base manifold is an open
subset of R^n, a covector is its coefficient vector, and the canonical
structures are written out in coordinates,

    liouville(p, dq)      = sum_i p_i dq_i
    sigma(v1, v2)         = <dp1, dq2> - <dp2, dq1>
    field of H            = (dH/dp, -dH/dq)

with the field sign fixed by <dH, v> = sigma(v, field) for every v.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError


def _as_finite_vector(x, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.ndim != 1 or arr.size < 1:
        raise DimensionMismatchError(f"{name} must be a nonempty 1-d vector")
    if not np.all(np.isfinite(arr)):
        raise DimensionMismatchError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class CotangentPoint:
    """A point (q, p) of the cotangent bundle in chart coordinates."""

    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", _as_finite_vector(self.q, "q"))
        object.__setattr__(self, "p", _as_finite_vector(self.p, "p"))
        if self.q.shape != self.p.shape:
            raise DimensionMismatchError(
                f"q has length {self.q.size} but p has length {self.p.size}"
            )

    @property
    def n(self) -> int:
        return self.q.size

    def as_array(self) -> np.ndarray:
        """Stacked chart coordinates (q then p), length 2n."""
        return np.concatenate([self.q, self.p])

    @staticmethod
    def from_array(y: np.ndarray) -> "CotangentPoint":
        y = np.asarray(y, dtype=float)
        if y.size % 2 != 0:
            raise DimensionMismatchError("stacked coordinates must have even length")
        n = y.size // 2
        return CotangentPoint(y[:n], y[n:])


@dataclass(frozen=True)
class TangentToCotangent:
    """A tangent vector (dq, dp) to the cotangent bundle at some point."""

    dq: np.ndarray
    dp: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "dq", _as_finite_vector(self.dq, "dq"))
        object.__setattr__(self, "dp", _as_finite_vector(self.dp, "dp"))
        if self.dq.shape != self.dp.shape:
            raise DimensionMismatchError(
                f"dq has length {self.dq.size} but dp has length {self.dp.size}"
            )

    @property
    def n(self) -> int:
        return self.dq.size

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.dq, self.dp])

    @staticmethod
    def from_array(y: np.ndarray) -> "TangentToCotangent":
        y = np.asarray(y, dtype=float)
        n = y.size // 2
        return TangentToCotangent(y[:n], y[n:])


@dataclass(frozen=True)
class HamiltonianGradient:
    """The differential of a Hamiltonian, split into base and fibre parts."""

    Hq: np.ndarray
    Hp: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "Hq", _as_finite_vector(self.Hq, "Hq"))
        object.__setattr__(self, "Hp", _as_finite_vector(self.Hp, "Hp"))
        if self.Hq.shape != self.Hp.shape:
            raise DimensionMismatchError(
                f"Hq has length {self.Hq.size} but Hp has length {self.Hp.size}"
            )

    @property
    def n(self) -> int:
        return self.Hq.size


def liouville_pairing(ell: CotangentPoint, v: TangentToCotangent) -> float:
    """Canonical 1-form at ell applied to v: <p, dq>. The dp part is ignored."""
    if ell.n != v.n:
        raise DimensionMismatchError(
            f"point has dimension {ell.n}, tangent vector {v.n}"
        )
    return float(np.dot(ell.p, v.dq))


def symplectic_form(v1: TangentToCotangent, v2: TangentToCotangent) -> float:
    """Canonical symplectic pairing <dp1, dq2> - <dp2, dq1>; antisymmetric."""
    if v1.n != v2.n:
        raise DimensionMismatchError(
            f"tangent vectors have dimensions {v1.n} and {v2.n}"
        )
    return float(np.dot(v1.dp, v2.dq) - np.dot(v2.dp, v1.dq))


def symplectic_form_arrays(y1: np.ndarray, y2: np.ndarray) -> float:
    """symplectic_form on stacked (dq, dp) arrays; used in inner loops."""
    y1 = np.asarray(y1, dtype=float)
    y2 = np.asarray(y2, dtype=float)
    if y1.shape != y2.shape or y1.size % 2 != 0:
        raise DimensionMismatchError("stacked tangent arrays must share even length")
    n = y1.size // 2
    return float(np.dot(y1[n:], y2[:n]) - np.dot(y2[n:], y1[:n]))


def hamiltonian_vector_field(g: HamiltonianGradient) -> TangentToCotangent:
    """Vector field (dq, dp) = (Hp, -Hq) induced by the gradient g.

    The sign convention is pinned by the identity
    <(Hq, Hp), v> = symplectic_form(v, hamiltonian_vector_field(g)) for all v.
    """
    return TangentToCotangent(dq=g.Hp.copy(), dp=-g.Hq)
