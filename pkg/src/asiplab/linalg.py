"""Deterministic linear algebra for matrix cocycles.

Norms, exterior-power quantities, projective metrics, and log-scale
renormalized accumulation.  Two norm regimes are supported, selected by the
matrix kind: Euclidean operator norms for invertible matrices, and l1 operator
norms for positive allowable matrices (nonnegative entries with a strictly
positive entry in every row and column).

All operations are pure functions of their inputs; the value types are
immutable after construction and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, NumericalError, SingularityError

INVERTIBLE = "invertible"
POSITIVE = "positive-allowable"

_SMIN_FLOOR = 1e-300


def _as_square(entries) -> np.ndarray:
    a = np.asarray(entries, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidInputError(f"expected a square matrix, got shape {a.shape}")
    if a.shape[0] < 2:
        raise InvalidInputError("dimension must be at least 2")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError("matrix entries must be finite")
    return a


@dataclass(frozen=True)
class GroupElement:
    """A d x d real matrix acting on vectors, with cached singular values."""

    entries: np.ndarray
    kind: str = INVERTIBLE
    _svals: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        a = _as_square(self.entries)
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)
        if self.kind == POSITIVE:
            if np.any(a < 0):
                raise InvalidInputError("positive-allowable matrix has a negative entry")
            if np.any(a.max(axis=1) <= 0) or np.any(a.max(axis=0) <= 0):
                raise InvalidInputError(
                    "allowable matrix needs a strictly positive entry in every row and column"
                )
        elif self.kind != INVERTIBLE:
            raise InvalidInputError(f"unknown matrix kind {self.kind!r}")

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def singular_values(self) -> np.ndarray:
        """Singular values in decreasing order (computed once, then cached)."""
        if not self._svals:
            self._svals.append(np.linalg.svd(self.entries, compute_uv=False))
        return self._svals[0]


@dataclass(frozen=True)
class ProjectivePoint:
    """A direction: unit vector quotiented by sign (Euclidean regime) or a
    nonnegative l1-unit vector (positive regime)."""

    rep: np.ndarray
    kind: str = INVERTIBLE

    def __post_init__(self):
        v = np.asarray(self.rep, dtype=float).reshape(-1)
        if v.size < 2 or not np.all(np.isfinite(v)):
            raise InvalidInputError("point representative must be a finite vector, d >= 2")
        if self.kind == POSITIVE:
            if np.any(v < 0):
                raise InvalidInputError("positive-regime point has a negative coordinate")
            total = v.sum()
            if total <= 0:
                raise InvalidInputError("point representative is zero")
            v = v / total
        else:
            nrm = float(np.linalg.norm(v))
            if nrm == 0.0:
                raise InvalidInputError("point representative is zero")
            v = v / nrm
            # canonical sign: first nonzero coordinate positive (for equality/hashing)
            nz = np.nonzero(v)[0]
            if v[nz[0]] < 0:
                v = -v
        v.setflags(write=False)
        object.__setattr__(self, "rep", v)

    @property
    def dim(self) -> int:
        return self.rep.shape[0]

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ProjectivePoint)
            and self.kind == other.kind
            and np.array_equal(self.rep, other.rep)
        )

    def __hash__(self) -> int:
        return hash((self.kind, self.rep.tobytes()))


@dataclass(frozen=True)
class LogScaledVector:
    """A direction plus an accumulated log-norm, preventing overflow of
    ||A_n x|| along long products."""

    direction: ProjectivePoint
    log_norm: float = 0.0

    def apply(self, g: GroupElement) -> "LogScaledVector":
        return apply_log_scaled(self, g)


def operator_norm(g: GroupElement) -> float:
    """||g||: largest singular value (Euclidean) or max column l1 sum (positive)."""
    if g.kind == POSITIVE:
        return float(np.abs(g.entries).sum(axis=0).max())
    return float(g.singular_values()[0])


def min_expansion(g: GroupElement) -> float:
    """inf over unit x of ||g x|| under the active norm.

    Euclidean regime: the smallest singular value.  Positive regime: x -> ||gx||_1
    is linear on the simplex, so the infimum is attained at a vertex and equals
    the smallest column sum.
    """
    if g.kind == POSITIVE:
        return float(g.entries.sum(axis=0).min())
    return float(g.singular_values()[-1])


def distortion(g: GroupElement) -> float:
    """max(||g||, ||g^{-1}||) in the Euclidean regime, max(||g||, 1/v(g)) in the
    positive regime.  The inverse norm is the reciprocal smallest singular
    value; the matrix is never inverted explicitly."""
    low = min_expansion(g)
    if low < _SMIN_FLOOR:
        raise SingularityError(f"smallest expansion {low:.3g} below {_SMIN_FLOOR:g}")
    return max(operator_norm(g), 1.0 / low)


def _wedge_sq(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """||a ^ b||^2 for stacks of vectors (last axis = coordinates), via the
    explicit minor components a_i b_j - a_j b_i.

    The Gram identity ||a||^2 ||b||^2 - <a, b>^2 is cheaper but loses all
    accuracy near zero distance (1-ulp rounding of <a, a> turns d(x, x) into
    ~1e-8); the minor route is exact at identical inputs and forward-stable
    near-parallel ones.
    """
    d = a.shape[-1]
    total = 0.0
    for i in range(d):
        for j in range(i + 1, d):
            m = a[..., i] * b[..., j] - a[..., j] * b[..., i]
            total = total + m * m
    return total


def projective_distance(x: ProjectivePoint, y: ProjectivePoint) -> float:
    """d(x, y) = ||x ^ y|| / (||x|| ||y||), always in [0, 1]."""
    if x.dim != y.dim:
        raise InvalidInputError("points live in different dimensions")
    a = x.rep / np.linalg.norm(x.rep)
    b = y.rep / np.linalg.norm(y.rep)
    return float(np.sqrt(np.minimum(_wedge_sq(a, b), 1.0)))


def alignment(x: ProjectivePoint, y: ProjectivePoint) -> float:
    """|<x, y>| / (||x|| ||y||), the complement of the projective distance:
    alignment^2 + distance^2 = 1."""
    if x.dim != y.dim:
        raise InvalidInputError("points live in different dimensions")
    a = x.rep / np.linalg.norm(x.rep)
    b = y.rep / np.linalg.norm(y.rep)
    return float(abs(np.dot(a, b)))


def wedge_norm(g: GroupElement) -> float:
    """Operator norm of the induced action on 2-vectors: the product of the two
    largest singular values.  Avoids materializing the C(d,2)-dimensional
    compound matrix."""
    s = g.singular_values()
    return float(s[0] * s[1])


def spectral_radius(g: GroupElement) -> float:
    """Modulus of the eigenvalue of maximum modulus (complex pairs allowed)."""
    try:
        eig = np.linalg.eigvals(g.entries)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise NumericalError("linalg", "spectral_radius", str(exc)) from exc
    return float(np.abs(eig).max())


def _active_norm(v: np.ndarray, kind: str) -> float:
    if kind == POSITIVE:
        return float(np.abs(v).sum())
    return float(np.linalg.norm(v))


def apply_log_scaled(v: LogScaledVector, g: GroupElement) -> LogScaledVector:
    """One renormalized step: direction <- g.rep normalized, log-norm
    incremented by log ||g.rep|| under the active norm."""
    if g.dim != v.direction.dim:
        raise InvalidInputError("dimension mismatch")
    w = g.entries @ v.direction.rep
    nrm = _active_norm(w, v.direction.kind)
    if nrm == 0.0 or not np.isfinite(nrm):
        raise SingularityError("image vector has zero or non-finite norm")
    return LogScaledVector(
        ProjectivePoint(w, kind=v.direction.kind), v.log_norm + float(np.log(nrm))
    )


# ---------------------------------------------------------------------------
# batched kernels used by the simulation layers (raw arrays, no wrappers)


def batched_top_two_svals(mats: np.ndarray) -> tuple:
    """(s1, s2) of a (..., d, d) stack."""
    s = np.linalg.svd(mats, compute_uv=False)
    return s[..., 0], s[..., 1]


def index_pairs(d: int):
    return [(i, j) for i in range(d) for j in range(i + 1, d)]


def compound2(mats: np.ndarray) -> np.ndarray:
    """Second compound matrix (the action on 2-vectors) of a (..., d, d)
    stack: entries are the 2x2 minors indexed by coordinate pairs.

    Tracking long products through their compounds keeps the top singular
    value of the exterior-square action accurate: reading s1 s2 off a singly
    renormalized product hits the SVD roundoff floor once s2/s1 < machine
    epsilon, which happens quickly for laws with a spectral gap.
    """
    mats = np.asarray(mats, dtype=float)
    d = mats.shape[-1]
    pairs = index_pairs(d)
    k = len(pairs)
    out = np.empty(mats.shape[:-2] + (k, k))
    for r, (i, j) in enumerate(pairs):
        for c, (a, b) in enumerate(pairs):
            out[..., r, c] = (
                mats[..., i, a] * mats[..., j, b] - mats[..., i, b] * mats[..., j, a]
            )
    return out


def batched_spectral_radius(mats: np.ndarray) -> np.ndarray:
    return np.abs(np.linalg.eigvals(mats)).max(axis=-1)


def pairwise_log_distance(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """log d(u, v) for stacks of direction vectors (last axis = coordinates).

    Identical representatives give exactly -inf (the minor components vanish
    in IEEE arithmetic), matching the convention that contraction exceedance
    events never trigger on equal points.
    """
    a = u / np.linalg.norm(u, axis=-1, keepdims=True)
    b = v / np.linalg.norm(v, axis=-1, keepdims=True)
    d2 = np.minimum(_wedge_sq(a, b), 1.0)
    with np.errstate(divide="ignore"):
        return 0.5 * np.log(d2)
